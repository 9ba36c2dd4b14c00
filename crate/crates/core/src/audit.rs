//! Leave-one-skill-out auditing of marginal external contribution.
//!
//! For an audited skill `s`, the routed subset is the validation tasks whose
//! context contained `s`. The raw contribution is the success-rate gap on
//! that subset between the current active set and the active set with `s`
//! masked out. Both passes reuse the same per-task seeds, so the estimate is
//! a paired difference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::RoutedSet;
use crate::seed;
use crate::simenv::{SimTask, Split};
use crate::skill::{SkillBank, TaskType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerfMetric {
    SuccessRate,
    MeanReward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub ema_alpha: f64,
    pub audit_interval: u32,
    pub audit_budget: usize,
    pub validation_batch: usize,
    pub metric: PerfMetric,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            ema_alpha: 0.9,
            audit_interval: 10,
            audit_budget: 4,
            validation_batch: 32,
            metric: PerfMetric::SuccessRate,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::InvalidConfig("ema_alpha must lie in (0, 1]".into()));
        }
        if self.audit_interval < 1 {
            return Err(Error::InvalidConfig("audit_interval must be >= 1".into()));
        }
        if self.audit_budget < 1 {
            return Err(Error::InvalidConfig("audit_budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-skill audit state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MecRecord {
    pub skill_id: String,
    pub mec_raw: f64,
    pub mec_smoothed: f64,
    /// Cumulative routed validation tasks.
    pub exposure: u64,
    /// Consecutive audits with smoothed contribution below the retire threshold.
    pub streak: u32,
    /// Routed validation failures since the last expansion from this skill.
    pub failures: u64,
    pub audits_seen: u32,
    /// Routed validation tasks since this skill was last audited.
    pub recent_usage: u64,
}

impl MecRecord {
    pub fn new(skill_id: impl Into<String>) -> Self {
        Self { skill_id: skill_id.into(), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub task_id: String,
    pub task_type: TaskType,
    pub split: Split,
    pub routed: RoutedSet,
    pub success: bool,
    pub reward: f64,
}

/// Anything that can roll out a task against a bank, optionally with one
/// skill masked out of the active set.
pub trait Evaluator {
    fn evaluate(&self, bank: &SkillBank, task: &SimTask, exclude: Option<&str>, seed: u64) -> ValidationOutcome;
}

pub fn routed_subset<'a>(outcomes: &'a [ValidationOutcome], skill_id: &str) -> Vec<&'a ValidationOutcome> {
    outcomes.iter().filter(|o| o.routed.contains(skill_id)).collect()
}

pub fn perf<'a, I>(outcomes: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a ValidationOutcome>,
{
    perf_with_metric(outcomes, PerfMetric::SuccessRate)
}

pub fn perf_with_metric<'a, I>(outcomes: I, metric: PerfMetric) -> Result<f64>
where
    I: IntoIterator<Item = &'a ValidationOutcome>,
{
    let (mut sum, mut n) = (0.0, 0usize);
    for o in outcomes {
        sum += match metric {
            PerfMetric::SuccessRate => o.success as u8 as f64,
            PerfMetric::MeanReward => o.reward,
        };
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySubset);
    }
    Ok(sum / n as f64)
}

/// Result of one leave-one-skill-out audit.
#[derive(Debug, Clone, PartialEq)]
pub enum LosoEstimate {
    /// No validation task routed to the skill; nothing to measure.
    NoExposure,
    Measured {
        delta: f64,
        perf_with: f64,
        perf_without: f64,
        /// Outcomes with the full active set, restricted to the routed subset.
        routed_outcomes: Vec<ValidationOutcome>,
    },
}

impl LosoEstimate {
    pub fn delta(&self) -> Option<f64> {
        match self {
            LosoEstimate::NoExposure => None,
            LosoEstimate::Measured { delta, .. } => Some(*delta),
        }
    }
}

/// Per-task seed shared by the with- and without-skill passes.
pub fn task_seed(seed: u64, task_id: &str) -> u64 {
    seed::derive(seed, &[seed::key(task_id)])
}

pub fn mec_loso<E: Evaluator + ?Sized>(
    evaluator: &E,
    bank: &SkillBank,
    skill_id: &str,
    validation_tasks: &[&SimTask],
    seed: u64,
    metric: PerfMetric,
) -> Result<LosoEstimate> {
    if !bank.is_active(skill_id) {
        return Err(Error::NotActive(skill_id.to_string()));
    }
    let mut with = Vec::new();
    let mut without = Vec::new();
    for task in validation_tasks {
        if task.split != Split::Validation {
            return Err(Error::SplitLeak(task.id.clone()));
        }
        let s = task_seed(seed, &task.id);
        let full = evaluator.evaluate(bank, task, None, s);
        if !full.routed.contains(skill_id) {
            continue;
        }
        without.push(evaluator.evaluate(bank, task, Some(skill_id), s));
        with.push(full);
    }
    if with.is_empty() {
        return Ok(LosoEstimate::NoExposure);
    }
    let perf_with = perf_with_metric(&with, metric)?;
    let perf_without = perf_with_metric(&without, metric)?;
    Ok(LosoEstimate::Measured { delta: perf_with - perf_without, perf_with, perf_without, routed_outcomes: with })
}

/// Folds one raw contribution into the smoothed estimate and the low-contribution streak.
///
/// The first audit seeds the average with the raw value.
pub fn ema_update(record: &mut MecRecord, delta_raw: f64, cfg: &AuditConfig, tau_retire: f64) {
    record.mec_raw = delta_raw;
    record.mec_smoothed = if record.audits_seen == 0 {
        delta_raw
    } else {
        cfg.ema_alpha * delta_raw + (1.0 - cfg.ema_alpha) * record.mec_smoothed
    };
    record.audits_seen += 1;
    if record.mec_smoothed < tau_retire {
        record.streak += 1;
    } else {
        record.streak = 0;
    }
}

/// The `audit_budget` task-specific skills with the most recent routed usage.
/// Skills with zero usage are skipped, and the list is never padded.
pub fn select_audit_candidates(routed_usage: &BTreeMap<String, u64>, cfg: &AuditConfig) -> Vec<String> {
    let mut used: Vec<(&String, u64)> = routed_usage.iter().filter(|(_, &n)| n > 0).map(|(k, &n)| (k, n)).collect();
    used.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    used.into_iter().take(cfg.audit_budget).map(|(k, _)| k.clone()).collect()
}

/// Next active general skill after `last` in id order, wrapping around.
pub fn next_general(bank: &SkillBank, last: Option<&str>) -> Option<String> {
    let active: Vec<&String> = bank.general_pool().iter().filter(|id| bank.is_active(id)).collect();
    let after = last.and_then(|l| active.iter().position(|id| id.as_str() > l)).unwrap_or(0);
    match last {
        Some(l) if active.iter().all(|id| id.as_str() <= l) => active.first().map(|s| s.to_string()),
        _ => active.get(after).map(|s| s.to_string()),
    }
}

/// Updates exposure, routed failures and recent usage from one validation pass.
pub fn accumulate_validation(
    records: &mut BTreeMap<String, MecRecord>,
    outcomes: &[ValidationOutcome],
) -> Result<()> {
    for o in outcomes {
        if o.split != Split::Validation {
            return Err(Error::SplitLeak(o.task_id.clone()));
        }
        for id in o.routed.general_ids.iter().chain(&o.routed.task_ids) {
            let r = records.entry(id.clone()).or_insert_with(|| MecRecord::new(id.clone()));
            r.exposure += 1;
            r.recent_usage += 1;
            if !o.success {
                r.failures += 1;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skill::{Skill, SkillTruth};

    fn outcome(id: &str, general: &[&str], task: &[&str], success: bool) -> ValidationOutcome {
        ValidationOutcome {
            task_id: id.into(),
            task_type: TaskType::new("clean"),
            split: Split::Validation,
            routed: RoutedSet {
                task_id: id.into(),
                general_ids: general.iter().map(|s| s.to_string()).collect(),
                task_ids: task.iter().map(|s| s.to_string()).collect(),
                similarities: Default::default(),
            },
            success,
            reward: success as u8 as f64,
        }
    }

    #[test]
    fn routed_subset_examples() {
        let batch = vec![
            outcome("a", &["g"], &["s1"], true),
            outcome("b", &["g"], &["s2"], false),
            outcome("c", &["g"], &["s1", "s2"], true),
        ];
        assert!(routed_subset(&batch, "nobody").is_empty());
        assert_eq!(routed_subset(&batch, "g").len(), 3);
        let got: Vec<&str> = routed_subset(&batch, "s1").iter().map(|o| o.task_id.as_str()).collect();
        let brute: Vec<&str> = batch
            .iter()
            .filter(|o| o.routed.general_ids.iter().chain(&o.routed.task_ids).any(|x| x == "s1"))
            .map(|o| o.task_id.as_str())
            .collect();
        assert_eq!(got, brute);
        assert_eq!(got, ["a", "c"]);
    }

    #[test]
    fn perf_examples() {
        let mk = |s: &[bool]| s.iter().map(|&b| outcome("x", &[], &[], b)).collect::<Vec<_>>();
        assert_eq!(perf(&mk(&[true, false, true, false])).unwrap(), 0.5);
        assert_eq!(perf(&mk(&[true; 5])).unwrap(), 1.0);
        let mut v = vec![true; 29];
        v.extend([false; 3]);
        assert_eq!(perf(&mk(&v)).unwrap(), 29.0 / 32.0);
        assert_eq!(perf(&mk(&v)).unwrap(), 0.90625);
        assert!(matches!(perf(&mk(&[])), Err(Error::EmptySubset)));
    }

    #[test]
    fn ema_examples() {
        let cfg = AuditConfig::default();
        let mut r = MecRecord::new("s");
        ema_update(&mut r, 0.3, &cfg, 0.001);
        assert_eq!(r.mec_smoothed, 0.3);
        assert_eq!((r.audits_seen, r.streak), (1, 0));

        let mut r = MecRecord { audits_seen: 1, mec_smoothed: 0.0, ..MecRecord::new("s") };
        ema_update(&mut r, 1.0, &cfg, 0.001);
        assert!((r.mec_smoothed - 0.9).abs() < 1e-15);

        let mut r = MecRecord::new("s");
        let mut seen = vec![];
        for d in [0.2, 0.0, 0.0] {
            ema_update(&mut r, d, &cfg, 0.001);
            seen.push(r.mec_smoothed);
        }
        for (got, want) in seen.iter().zip([0.2, 0.02, 0.002]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        // 0.002 is still above the retire threshold
        assert_eq!(r.streak, 0);
        ema_update(&mut r, 0.0, &cfg, 0.001);
        assert_eq!(r.streak, 1);
        ema_update(&mut r, 0.5, &cfg, 0.001);
        assert_eq!(r.streak, 0);
    }

    #[test]
    fn ema_converges_geometrically() {
        let cfg = AuditConfig { ema_alpha: 0.3, ..Default::default() };
        let mut r = MecRecord::new("s");
        ema_update(&mut r, 1.0, &cfg, 0.0);
        let c = 0.25;
        let mut gap = (r.mec_smoothed - c).abs();
        for _ in 0..20 {
            ema_update(&mut r, c, &cfg, 0.0);
            let next = (r.mec_smoothed - c).abs();
            assert!((next - gap * (1.0 - cfg.ema_alpha)).abs() < 1e-12);
            gap = next;
        }
    }

    #[test]
    fn candidate_selection() {
        let cfg = AuditConfig::default();
        let usage: BTreeMap<String, u64> =
            [("a", 10), ("b", 7), ("c", 3), ("d", 1), ("e", 0)].map(|(k, v)| (k.to_string(), v)).into();
        assert_eq!(select_audit_candidates(&usage, &cfg), ["a", "b", "c", "d"]);
        let few: BTreeMap<String, u64> = [("x", 2), ("y", 0)].map(|(k, v)| (k.to_string(), v)).into();
        assert_eq!(select_audit_candidates(&few, &cfg), ["x"]);
        let none: BTreeMap<String, u64> = [("x", 0)].map(|(k, v)| (k.to_string(), v)).into();
        assert!(select_audit_candidates(&none, &cfg).is_empty());
    }

    #[test]
    fn general_round_robin_wraps() {
        let mk = |id: &str| Skill::general(id, vec![1.0, 0.0], SkillTruth::default());
        let mut bank = SkillBank::from_skills([mk("g0"), mk("g1"), mk("g2")]).unwrap();
        assert_eq!(next_general(&bank, None).as_deref(), Some("g0"));
        assert_eq!(next_general(&bank, Some("g0")).as_deref(), Some("g1"));
        assert_eq!(next_general(&bank, Some("g2")).as_deref(), Some("g0"));
        bank.retire_skill("g1", 1).unwrap();
        assert_eq!(next_general(&bank, Some("g0")).as_deref(), Some("g2"));
        assert_eq!(next_general(&bank, Some("g1")).as_deref(), Some("g2"));
        for id in ["g0", "g2"] {
            bank.retire_skill(id, 2).unwrap();
        }
        assert_eq!(next_general(&bank, Some("g0")), None);
    }

    #[test]
    fn accumulate_rejects_test_split() {
        let mut records = BTreeMap::new();
        let mut o = outcome("te_x", &["g"], &[], false);
        o.split = Split::Test;
        assert!(matches!(accumulate_validation(&mut records, &[o]), Err(Error::SplitLeak(_))));
        let ok = [outcome("a", &["g"], &["s"], false), outcome("b", &["g"], &[], true)];
        accumulate_validation(&mut records, &ok).unwrap();
        assert_eq!(records["g"].exposure, 2);
        assert_eq!(records["g"].failures, 1);
        assert_eq!(records["s"].recent_usage, 1);
    }
}
