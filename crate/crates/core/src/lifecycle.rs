//! Retain / retire / expand rules and their application to the bank.
//!
//! An audited skill with smoothed contribution `m`, exposure `u`, streak `l`,
//! routed failures `n` and routed success `perf` is
//!
//! * retired when `m < tau_retire && u >= min_exposure && l >= patience`,
//! * expanded from when `perf < tau_expand && n >= n_expand && m < tau_keep`,
//! * retained when `m >= tau_keep`,
//! * held otherwise,
//!
//! with precedence Retire > Expand > Retain > Hold.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{MecRecord, ValidationOutcome};
use crate::error::{Error, Result};
use crate::policy::PolicyState;
use crate::retrieval::{cosine, route, RetrievalConfig};
use crate::simenv::{normalize, support_of, SimTask, Split};
use crate::skill::{EventKind, LifecycleEvent, Origin, Skill, SkillBank, SkillTruth, TaskType, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Full retain / retire / expand control.
    Slim,
    /// Retirement disabled; the active set only grows.
    AccumulateOnly,
    /// Expansion disabled and the bank withdrawn on a schedule until empty.
    EliminateOnly,
    /// Expansion disabled; retirement by the usual rules.
    NoExpansion,
    /// Audited skills retained or deleted at random, expansion at random.
    RandomAudit,
    /// Slim rules with the active-set size pinned to its initial value.
    FixedSize,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Slim,
        Regime::AccumulateOnly,
        Regime::EliminateOnly,
        Regime::NoExpansion,
        Regime::RandomAudit,
        Regime::FixedSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Slim => "slim",
            Regime::AccumulateOnly => "accumulate-only",
            Regime::EliminateOnly => "eliminate-only",
            Regime::NoExpansion => "no-expansion",
            Regime::RandomAudit => "random-audit",
            Regime::FixedSize => "fixed-size",
        }
    }

    pub fn allows_retire(self) -> bool {
        self != Regime::AccumulateOnly
    }

    pub fn allows_expand(self) -> bool {
        !matches!(self, Regime::EliminateOnly | Regime::NoExpansion)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "skill-rl" | "no-retirement" => "accumulate-only",
            "skill0" => "eliminate-only",
            other => other,
        };
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == alias)
            .ok_or_else(|| Error::UnknownRegime(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleConfig {
    pub tau_keep: f64,
    pub tau_retire: f64,
    pub tau_expand: f64,
    pub patience: u32,
    pub min_exposure: u64,
    pub n_expand: u64,
    pub expand_budget: usize,
    pub regime: Regime,
    /// Cosine at or above which a generated skill duplicates a same-type skill.
    pub dedup_threshold: f64,
    /// Coverage an expanded skill provides on its target concept.
    pub expand_skill_weight: f64,
    /// Accepted retire + expand moves per audit cycle.
    pub max_moves_per_cycle: usize,
    pub random_retain_prob: f64,
    pub random_expand_prob: f64,
    /// Fraction of the run after which the withdrawal schedule reaches zero skills.
    pub eliminate_by_fraction: f64,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            tau_keep: 0.03,
            tau_retire: 0.001,
            tau_expand: 0.40,
            patience: 3,
            min_exposure: 30,
            n_expand: 20,
            expand_budget: 2,
            regime: Regime::Slim,
            dedup_threshold: 0.95,
            expand_skill_weight: 0.8,
            max_moves_per_cycle: 6,
            random_retain_prob: 0.8,
            random_expand_prob: 0.1,
            eliminate_by_fraction: 0.85,
        }
    }
}

impl LifecycleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.tau_retire >= self.tau_keep {
            return bad("tau_retire must be below tau_keep");
        }
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if self.min_exposure < 1 {
            return bad("min_exposure must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.random_retain_prob) || !(0.0..=1.0).contains(&self.random_expand_prob) {
            return bad("random-audit probabilities must lie in [0, 1]");
        }
        if !(self.eliminate_by_fraction > 0.0 && self.eliminate_by_fraction <= 1.0) {
            return bad("eliminate_by_fraction must lie in (0, 1]");
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return bad("dedup_threshold must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Retain,
    Retire,
    Expand,
    Hold,
}

impl Decision {
    pub fn event_kind(self) -> EventKind {
        match self {
            Decision::Retain => EventKind::Retain,
            Decision::Retire => EventKind::Retire,
            Decision::Expand => EventKind::Expand,
            Decision::Hold => EventKind::Hold,
        }
    }
}

pub fn retire_predicate(r: &MecRecord, cfg: &LifecycleConfig) -> bool {
    r.mec_smoothed < cfg.tau_retire && r.exposure >= cfg.min_exposure && r.streak >= cfg.patience
}

pub fn expand_predicate(r: &MecRecord, perf_with: Option<f64>, cfg: &LifecycleConfig) -> bool {
    perf_with.is_some_and(|p| p < cfg.tau_expand) && r.failures >= cfg.n_expand && r.mec_smoothed < cfg.tau_keep
}

pub fn retain_predicate(r: &MecRecord, cfg: &LifecycleConfig) -> bool {
    r.mec_smoothed >= cfg.tau_keep
}

/// Pure rule evaluation; regimes are applied afterwards by [`regime_decisions`].
pub fn decide(record: &MecRecord, perf_with: Option<f64>, cfg: &LifecycleConfig) -> Decision {
    if retire_predicate(record, cfg) {
        Decision::Retire
    } else if expand_predicate(record, perf_with, cfg) {
        Decision::Expand
    } else if retain_predicate(record, cfg) {
        Decision::Retain
    } else {
        Decision::Hold
    }
}

/// Outcome for one audited skill after regime rules. `expand` marks the skill
/// as an expansion anchor independently of keep/retire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditDecision {
    pub skill_id: String,
    pub decision: Decision,
    pub expand: bool,
}

/// Maps rule decisions through the regime. Random audits ignore the rules.
pub fn regime_decisions<R: Rng>(
    rule: &[(String, Decision)],
    cfg: &LifecycleConfig,
    rng: &mut R,
) -> Vec<AuditDecision> {
    rule.iter()
        .map(|(id, d)| {
            let (decision, expand) = match cfg.regime {
                Regime::RandomAudit => {
                    let keep = rng.gen::<f64>() < cfg.random_retain_prob;
                    let expand = rng.gen::<f64>() < cfg.random_expand_prob;
                    (if keep { Decision::Retain } else { Decision::Retire }, expand)
                }
                r => {
                    let d = match *d {
                        Decision::Retire if !r.allows_retire() => Decision::Hold,
                        Decision::Expand if !r.allows_expand() => Decision::Hold,
                        other => other,
                    };
                    (d, d == Decision::Expand)
                }
            };
            AuditDecision { skill_id: id.clone(), decision, expand }
        })
        .collect()
}

/// Validation failures routed to one skill on tasks of one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureBucket {
    pub anchor_skill_id: String,
    pub task_type: TaskType,
    pub failed_tasks: Vec<String>,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FailureBuckets {
    buckets: BTreeMap<(String, TaskType), FailureBucket>,
}

impl FailureBuckets {
    pub fn new() -> Self {
        Self::default()
    }

    /// Files every failed validation outcome under each skill it was routed to.
    pub fn record(&mut self, outcomes: &[ValidationOutcome]) -> Result<()> {
        for o in outcomes {
            if o.split != Split::Validation {
                return Err(Error::SplitLeak(o.task_id.clone()));
            }
            if o.success {
                continue;
            }
            for id in o.routed.ids() {
                let b = self.buckets.entry((id.to_string(), o.task_type.clone())).or_insert_with(|| FailureBucket {
                    anchor_skill_id: id.to_string(),
                    task_type: o.task_type.clone(),
                    failed_tasks: Vec::new(),
                    count: 0,
                });
                b.failed_tasks.push(o.task_id.clone());
                b.count += 1;
            }
        }
        Ok(())
    }

    pub fn get(&self, anchor: &str, task_type: &TaskType) -> Option<&FailureBucket> {
        self.buckets.get(&(anchor.to_string(), task_type.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &FailureBucket> {
        self.buckets.values()
    }

    pub fn for_anchor<'a>(&'a self, anchor: &'a str) -> impl Iterator<Item = &'a FailureBucket> + 'a {
        self.buckets.values().filter(move |b| b.anchor_skill_id == anchor)
    }

    pub fn remove(&mut self, anchor: &str, task_type: &TaskType) -> Option<FailureBucket> {
        self.buckets.remove(&(anchor.to_string(), task_type.clone()))
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }
}

/// Produces a new task-specific skill from a failure bucket.
pub trait SkillCreator {
    fn create(&mut self, bucket: &FailureBucket, bank: &SkillBank, step: u32) -> Result<Skill>;
}

/// Oracle-backed creator: targets the concept the bucket's tasks miss most.
#[derive(Debug, Clone, Copy)]
pub struct SynthCreator<'a> {
    pub tasks: &'a HashMap<&'a str, &'a SimTask>,
    pub policy: &'a PolicyState,
    pub retrieval: &'a RetrievalConfig,
    pub skill_weight: f64,
    pub dedup_threshold: f64,
}

impl SynthCreator<'_> {
    /// Concept with the largest summed coverage gap over the bucket's tasks,
    /// given the policy and what the tasks currently retrieve.
    pub fn dominant_gap(&self, bucket: &FailureBucket, bank: &SkillBank) -> Option<(u32, f64)> {
        let mut gaps: BTreeMap<u32, f64> = BTreeMap::new();
        for t in bucket.failed_tasks.iter().filter_map(|id| self.tasks.get(id.as_str())) {
            let routed = route(&bank.active_view(&t.task_type), t, self.retrieval);
            let support = support_of(bank, &routed);
            for (&c, &need) in &t.required_concepts {
                let ext = support
                    .iter()
                    .filter_map(|s| s.truth.concept_weights.get(&c))
                    .fold(0.0f64, |a, &w| a.max(w));
                let cov = self.policy.competence(&t.task_type, c).max(ext);
                let gain = (self.skill_weight - cov).max(0.0);
                *gaps.entry(c).or_insert(0.0) += need * gain;
            }
        }
        // ascending concept order, so `>` keeps the lowest id on ties
        gaps.into_iter()
            .fold(None, |best: Option<(u32, f64)>, (c, g)| match best {
                Some((_, bg)) if bg >= g => best,
                _ => Some((c, g)),
            })
            .filter(|&(_, g)| g > 1e-9)
    }

    pub fn synth_create(&self, bucket: &FailureBucket, bank: &SkillBank, step: u32) -> Result<Skill> {
        let tasks: Vec<&SimTask> =
            bucket.failed_tasks.iter().filter_map(|id| self.tasks.get(id.as_str()).copied()).collect();
        if tasks.is_empty() {
            return Err(Error::EmptyBucket);
        }
        let (concept, _) = self
            .dominant_gap(bucket, bank)
            .ok_or_else(|| Error::NothingUncovered(bucket.anchor_skill_id.clone()))?;
        // centre on the failures that actually need the target concept
        let focus: Vec<&SimTask> = tasks.iter().copied().filter(|t| t.required_concepts.contains_key(&concept)).collect();
        let focus = if focus.is_empty() { tasks } else { focus };
        let dim = focus[0].embedding.len();
        let mut mean = vec![0.0; dim];
        for t in &focus {
            for (m, x) in mean.iter_mut().zip(&t.embedding) {
                *m += x;
            }
        }
        let embedding = normalize(mean);
        for s in bank.active_skills().filter(|s| s.task_type.as_ref() == Some(&bucket.task_type)) {
            let sim = cosine(&embedding, &s.embedding)?;
            if sim >= self.dedup_threshold {
                return Err(Error::Duplicate { existing: s.id.clone(), similarity: sim });
            }
        }
        let truth = SkillTruth { concept_weights: [(concept, self.skill_weight)].into(), harm: 0.0 };
        let mut skill =
            Skill::task_specific(bank.next_expanded_id(&bucket.task_type), bucket.task_type.clone(), embedding, truth);
        skill.origin = Origin::Expanded;
        skill.created_at_step = step;
        Ok(skill)
    }
}

impl SkillCreator for SynthCreator<'_> {
    fn create(&mut self, bucket: &FailureBucket, bank: &SkillBank, step: u32) -> Result<Skill> {
        self.synth_create(bucket, bank, step)
    }
}

/// Lifecycle event for an audited skill, carrying its current statistics.
pub fn audit_event(step: u32, record: &MecRecord, kind: EventKind) -> LifecycleEvent {
    LifecycleEvent {
        mec_raw: Some(record.mec_raw),
        mec_smoothed: Some(record.mec_smoothed),
        exposure: record.exposure,
        streak: record.streak,
        failures: record.failures,
        ..LifecycleEvent::bare(step, record.skill_id.clone(), kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleOutcome {
    pub events: Vec<LifecycleEvent>,
    pub retired: Vec<String>,
    pub expanded: Vec<String>,
    pub rejected: usize,
}

impl CycleOutcome {
    pub fn moves(&self) -> usize {
        self.retired.len() + self.expanded.len()
    }
}

fn bucket_order(bank: &SkillBank, a: &FailureBucket, b: &FailureBucket) -> std::cmp::Ordering {
    let born = |id: &str| bank.get(id).map_or(u32::MAX, |s| s.created_at_step);
    b.count
        .cmp(&a.count)
        .then_with(|| born(&a.anchor_skill_id).cmp(&born(&b.anchor_skill_id)))
        .then_with(|| a.anchor_skill_id.cmp(&b.anchor_skill_id))
        .then_with(|| a.task_type.cmp(&b.task_type))
}

fn expand_from(
    bank: &mut SkillBank,
    bucket: &FailureBucket,
    buckets: &mut FailureBuckets,
    records: &mut BTreeMap<String, MecRecord>,
    creator: &mut dyn SkillCreator,
    step: u32,
    why: &str,
    out: &mut CycleOutcome,
) -> Result<bool> {
    match creator.create(bucket, bank, step) {
        Ok(skill) => {
            let id = skill.id.clone();
            bank.add_skill(skill.clone())?;
            buckets.remove(&bucket.anchor_skill_id, &bucket.task_type);
            if let Some(r) = records.get_mut(&bucket.anchor_skill_id) {
                r.failures = r.failures.saturating_sub(bucket.count);
            }
            out.events.push(LifecycleEvent {
                reason: Some(format!("{why}; anchor {} ({} failures)", bucket.anchor_skill_id, bucket.count)),
                skill: Some(skill),
                failures: bucket.count,
                ..LifecycleEvent::bare(step, id.clone(), EventKind::Expand)
            });
            out.expanded.push(id);
            Ok(true)
        }
        Err(e @ (Error::Duplicate { .. } | Error::EmptyBucket | Error::NothingUncovered(_))) => {
            out.events.push(LifecycleEvent {
                reason: Some(format!("creator rejected: {e}")),
                failures: bucket.count,
                ..LifecycleEvent::bare(step, bucket.anchor_skill_id.clone(), EventKind::Skip)
            });
            out.rejected += 1;
            Ok(false)
        }
        Err(e) => Err(e),
    }
}

/// Applies one cycle of audited decisions: retirements first, then at most
/// `expand_budget` expansions from the largest buckets of expansion anchors.
/// Accepted moves never exceed `max_moves_per_cycle`.
#[allow(clippy::too_many_arguments)]
pub fn apply_decisions(
    bank: &mut SkillBank,
    decisions: &[AuditDecision],
    buckets: &mut FailureBuckets,
    records: &mut BTreeMap<String, MecRecord>,
    creator: &mut dyn SkillCreator,
    cfg: &LifecycleConfig,
    step: u32,
) -> Result<CycleOutcome> {
    let mut out = CycleOutcome::default();
    for d in decisions {
        let Some(rec) = records.get(&d.skill_id) else {
            return Err(Error::UnknownSkill(d.skill_id.clone()));
        };
        let mut kind = d.decision.event_kind();
        if d.decision == Decision::Retire {
            if out.moves() < cfg.max_moves_per_cycle {
                bank.retire_skill(&d.skill_id, step)?;
                out.retired.push(d.skill_id.clone());
            } else {
                kind = EventKind::Hold;
            }
        }
        let mut ev = audit_event(step, rec, kind);
        if kind == EventKind::Hold && d.decision == Decision::Retire {
            ev.reason = Some("move budget exhausted".into());
        }
        out.events.push(ev);
    }

    let mut candidates: Vec<FailureBucket> = decisions
        .iter()
        .filter(|d| d.expand)
        .flat_map(|d| buckets.for_anchor(&d.skill_id).cloned().collect::<Vec<_>>())
        .collect();
    candidates.sort_by(|a, b| bucket_order(bank, a, b));
    let mut slots = cfg.expand_budget;
    for bucket in candidates {
        if slots == 0 || out.moves() >= cfg.max_moves_per_cycle {
            break;
        }
        slots -= 1;
        expand_from(bank, &bucket, buckets, records, creator, step, "expand", &mut out)?;
    }
    Ok(out)
}

/// Active-set size the withdrawal schedule allows after `cycle` of `total_cycles`.
pub fn eliminate_target(initial: usize, cycle: u32, total_cycles: u32, by_fraction: f64) -> usize {
    let horizon = (total_cycles as f64 * by_fraction).max(1.0);
    let left = (1.0 - cycle as f64 / horizon).max(0.0);
    (initial as f64 * left).ceil() as usize
}

/// Retires active skills, weakest smoothed contribution first, until at most
/// `target` remain. Unaudited skills count as zero contribution.
pub fn eliminate_down_to(
    bank: &mut SkillBank,
    target: usize,
    records: &BTreeMap<String, MecRecord>,
    step: u32,
) -> Result<Vec<LifecycleEvent>> {
    let mut order: Vec<(f64, u64, String)> = bank
        .active_ids()
        .iter()
        .map(|id| {
            let r = records.get(id);
            let m = r.filter(|r| r.audits_seen > 0).map_or(0.0, |r| r.mec_smoothed);
            (m, r.map_or(0, |r| r.exposure), id.clone())
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
    let excess = bank.active_count().saturating_sub(target);
    let mut events = Vec::with_capacity(excess);
    for (_, _, id) in order.into_iter().take(excess) {
        bank.retire_skill(&id, step)?;
        let mut ev = match records.get(&id) {
            Some(r) => audit_event(step, r, EventKind::Retire),
            None => LifecycleEvent::bare(step, id, EventKind::Retire),
        };
        ev.reason = Some("withdrawal schedule".into());
        events.push(ev);
    }
    Ok(events)
}

/// Restores the active-set size to `target`: least-recently-routed skills
/// are removed when above it, and expansions are forced from the largest
/// pending buckets when below it. A skill's creation counts as a routing.
#[allow(clippy::too_many_arguments)]
pub fn fixed_size_adjust(
    bank: &mut SkillBank,
    target: usize,
    last_routed: &BTreeMap<String, u32>,
    buckets: &mut FailureBuckets,
    records: &mut BTreeMap<String, MecRecord>,
    creator: &mut dyn SkillCreator,
    step: u32,
) -> Result<CycleOutcome> {
    let mut out = CycleOutcome::default();
    if bank.active_count() > target {
        let mut lru: Vec<(u32, String)> = bank
            .active_skills()
            .map(|s| {
                let seen = last_routed.get(&s.id).copied().unwrap_or(0).max(s.created_at_step);
                (seen, s.id.clone())
            })
            .collect();
        lru.sort();
        let excess = bank.active_count() - target;
        for (seen, id) in lru.into_iter().take(excess) {
            bank.retire_skill(&id, step)?;
            out.events.push(LifecycleEvent {
                reason: Some(format!("fixed size: least recently routed (step {seen})")),
                ..LifecycleEvent::bare(step, id.clone(), EventKind::Retire)
            });
            out.retired.push(id);
        }
    }
    let mut pending: Vec<FailureBucket> = buckets.iter().cloned().collect();
    pending.sort_by(|a, b| bucket_order(bank, a, b));
    // each missing slot gets at most two creation attempts
    let attempts = 2 * target.saturating_sub(bank.active_count());
    for bucket in pending.into_iter().take(attempts) {
        if bank.active_count() >= target {
            break;
        }
        expand_from(bank, &bucket, buckets, records, creator, step, "fixed size refill", &mut out)?;
    }
    Ok(out)
}

/// Ids of active general skills, in id order.
pub fn active_general(bank: &SkillBank) -> Vec<String> {
    bank.active_skills().filter(|s| s.tier == Tier::General).map(|s| s.id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RoutedSet;
    use crate::skill::SkillTruth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(m: f64, u: u64, l: u32, n: u64) -> MecRecord {
        MecRecord {
            skill_id: "s".into(),
            mec_smoothed: m,
            exposure: u,
            streak: l,
            failures: n,
            audits_seen: l.max(1),
            ..Default::default()
        }
    }

    #[test]
    fn decide_examples() {
        let cfg = LifecycleConfig::default();
        assert_eq!(decide(&rec(0.05, 50, 0, 0), Some(0.8), &cfg), Decision::Retain);
        assert_eq!(decide(&rec(0.0005, 40, 3, 0), Some(0.8), &cfg), Decision::Retire);
        assert_eq!(decide(&rec(0.0005, 10, 3, 0), Some(0.8), &cfg), Decision::Hold);
        assert_eq!(decide(&rec(0.01, 40, 0, 25), Some(0.30), &cfg), Decision::Expand);
        // retire wins when both fire
        assert_eq!(decide(&rec(0.0, 40, 3, 25), Some(0.30), &cfg), Decision::Retire);
        assert_eq!(decide(&rec(0.01, 40, 0, 25), None, &cfg), Decision::Hold);
    }

    #[test]
    fn config_invariants() {
        assert!(LifecycleConfig::default().validate().is_ok());
        let c = LifecycleConfig { patience: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = LifecycleConfig { tau_retire: 0.05, ..Default::default() };
        assert!(c.validate().is_err());
        let c = LifecycleConfig { min_exposure: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert_eq!("skill0".parse::<Regime>().unwrap(), Regime::EliminateOnly);
        assert!("bogus".parse::<Regime>().is_err());
    }

    #[test]
    fn regimes_downgrade_moves() {
        let rule = vec![("a".to_string(), Decision::Retire), ("b".to_string(), Decision::Expand)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let acc = LifecycleConfig { regime: Regime::AccumulateOnly, ..Default::default() };
        let got = regime_decisions(&rule, &acc, &mut rng);
        assert_eq!(got[0].decision, Decision::Hold);
        assert!(got[1].expand);
        let elim = LifecycleConfig { regime: Regime::EliminateOnly, ..Default::default() };
        let got = regime_decisions(&rule, &elim, &mut rng);
        assert_eq!(got[0].decision, Decision::Retire);
        assert_eq!((got[1].decision, got[1].expand), (Decision::Hold, false));
    }

    #[test]
    fn random_audit_frequencies() {
        let cfg = LifecycleConfig { regime: Regime::RandomAudit, ..Default::default() };
        let rule: Vec<(String, Decision)> = (0..20_000).map(|i| (format!("s{i}"), Decision::Hold)).collect();
        let got = regime_decisions(&rule, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let n = got.len() as f64;
        let retain = got.iter().filter(|d| d.decision == Decision::Retain).count() as f64 / n;
        let expand = got.iter().filter(|d| d.expand).count() as f64 / n;
        // 4 standard errors
        assert!((retain - 0.8).abs() < 4.0 * (0.16 / n).sqrt(), "{retain}");
        assert!((expand - 0.1).abs() < 4.0 * (0.09 / n).sqrt(), "{expand}");
    }

    #[test]
    fn eliminate_schedule_reaches_zero() {
        assert_eq!(eliminate_target(38, 0, 12, 0.5), 38);
        assert_eq!(eliminate_target(38, 3, 12, 0.5), 19);
        assert_eq!(eliminate_target(38, 6, 12, 0.5), 0);
        assert_eq!(eliminate_target(38, 11, 12, 0.5), 0);
        let mut prev = usize::MAX;
        for c in 0..12 {
            let t = eliminate_target(38, c, 12, 0.7);
            assert!(t <= prev);
            prev = t;
        }
    }

    fn outcome(id: &str, ty: &str, routed: &[&str], success: bool) -> ValidationOutcome {
        ValidationOutcome {
            task_id: id.into(),
            task_type: TaskType::new(ty),
            split: Split::Validation,
            routed: RoutedSet {
                task_id: id.into(),
                general_ids: vec![],
                task_ids: routed.iter().map(|s| s.to_string()).collect(),
                similarities: Default::default(),
            },
            success,
            reward: success as u8 as f64,
        }
    }

    #[test]
    fn buckets_group_by_anchor_and_type() {
        let mut b = FailureBuckets::new();
        b.record(&[
            outcome("t1", "clean", &["a", "b"], false),
            outcome("t2", "clean", &["a"], false),
            outcome("t3", "clean", &["a"], true),
            outcome("t4", "heat", &["a"], false),
        ])
        .unwrap();
        let ca = b.get("a", &TaskType::new("clean")).unwrap();
        assert_eq!((ca.count, ca.failed_tasks.clone()), (2, vec!["t1".to_string(), "t2".into()]));
        assert_eq!(b.get("a", &TaskType::new("heat")).unwrap().count, 1);
        assert_eq!(b.get("b", &TaskType::new("clean")).unwrap().count, 1);
        let mut leak = outcome("t5", "clean", &["a"], false);
        leak.split = Split::Test;
        assert!(matches!(b.record(&[leak]), Err(Error::SplitLeak(_))));
    }

    /// Creator that always succeeds with a fresh axis-aligned skill.
    struct Counter(usize);

    impl SkillCreator for Counter {
        fn create(&mut self, bucket: &FailureBucket, bank: &SkillBank, step: u32) -> Result<Skill> {
            self.0 += 1;
            let mut e = vec![0.0; 8];
            e[self.0 % 8] = 1.0;
            let mut s =
                Skill::task_specific(bank.next_expanded_id(&bucket.task_type), bucket.task_type.clone(), e, SkillTruth::default());
            s.origin = Origin::Expanded;
            s.created_at_step = step;
            Ok(s)
        }
    }

    fn small_bank() -> SkillBank {
        let t = TaskType::new("clean");
        let skills = (0..4).map(|i| {
            let mut e = vec![0.0; 8];
            e[i] = 1.0;
            Skill::task_specific(format!("cle_{i:03}"), t.clone(), e, SkillTruth::default())
        });
        SkillBank::from_skills(skills).unwrap()
    }

    #[test]
    fn expansion_budget_takes_largest_buckets() {
        let mut bank = small_bank();
        let mut buckets = FailureBuckets::new();
        let mut outs = vec![];
        for (k, n) in [("cle_000", 5), ("cle_001", 9), ("cle_002", 7)] {
            for i in 0..n {
                outs.push(outcome(&format!("{k}_{i}"), "clean", &[k], false));
            }
        }
        buckets.record(&outs).unwrap();
        let mut records: BTreeMap<String, MecRecord> =
            bank.active_ids().iter().map(|id| (id.clone(), MecRecord { failures: 30, ..MecRecord::new(id.clone()) })).collect();
        let decisions: Vec<AuditDecision> = ["cle_000", "cle_001", "cle_002"]
            .iter()
            .map(|id| AuditDecision { skill_id: id.to_string(), decision: Decision::Expand, expand: true })
            .collect();
        let cfg = LifecycleConfig::default();
        let out = apply_decisions(&mut bank, &decisions, &mut buckets, &mut records, &mut Counter(0), &cfg, 10).unwrap();
        assert_eq!(out.expanded.len(), 2);
        assert_eq!(bank.active_count(), 6);
        assert!(buckets.get("cle_001", &TaskType::new("clean")).is_none());
        assert!(buckets.get("cle_002", &TaskType::new("clean")).is_none());
        assert_eq!(buckets.get("cle_000", &TaskType::new("clean")).unwrap().count, 5);
        assert_eq!(records["cle_001"].failures, 21);
        let created: Vec<&Skill> = out.events.iter().filter_map(|e| e.skill.as_ref()).collect();
        assert!(created.iter().all(|s| s.task_type == Some(TaskType::new("clean")) && s.origin == Origin::Expanded));
    }

    #[test]
    fn move_cap_holds_excess_retirements() {
        let mut bank = small_bank();
        let mut buckets = FailureBuckets::new();
        let mut records: BTreeMap<String, MecRecord> =
            bank.active_ids().iter().map(|id| (id.clone(), MecRecord::new(id.clone()))).collect();
        let decisions: Vec<AuditDecision> = bank
            .active_ids()
            .iter()
            .map(|id| AuditDecision { skill_id: id.clone(), decision: Decision::Retire, expand: false })
            .collect();
        let cfg = LifecycleConfig { max_moves_per_cycle: 3, ..Default::default() };
        let out = apply_decisions(&mut bank, &decisions, &mut buckets, &mut records, &mut Counter(0), &cfg, 10).unwrap();
        assert_eq!(out.retired.len(), 3);
        assert_eq!(bank.active_count(), 1);
        assert_eq!(out.events.last().unwrap().kind, EventKind::Hold);
    }

    #[test]
    fn fixed_size_examples() {
        let t = TaskType::new("clean");
        let mut buckets = FailureBuckets::new();
        buckets.record(&[outcome("x", "clean", &["cle_000"], false)]).unwrap();
        let mut records = BTreeMap::new();

        // one expansion above target: least recently routed goes
        let mut bank = small_bank();
        let mut e = vec![0.0; 8];
        e[7] = 1.0;
        let mut extra = Skill::task_specific("dyn_clean_000", t.clone(), e, SkillTruth::default());
        extra.origin = Origin::Expanded;
        extra.created_at_step = 20;
        bank.add_skill(extra).unwrap();
        let last: BTreeMap<String, u32> = [("cle_000", 15), ("cle_001", 3), ("cle_002", 18), ("cle_003", 12)]
            .map(|(k, v)| (k.to_string(), v))
            .into();
        let out = fixed_size_adjust(&mut bank, 4, &last, &mut buckets, &mut records, &mut Counter(0), 20).unwrap();
        assert_eq!(out.retired, ["cle_001"]);
        assert_eq!(bank.active_count(), 4);

        // one retirement below target: forced expansion
        let mut bank = small_bank();
        bank.retire_skill("cle_003", 10).unwrap();
        let out = fixed_size_adjust(&mut bank, 4, &last, &mut buckets, &mut records, &mut Counter(0), 20).unwrap();
        assert_eq!(out.expanded.len(), 1);
        assert_eq!(bank.active_count(), 4);

        // at target: no-op
        let mut bank = small_bank();
        let out = fixed_size_adjust(&mut bank, 4, &last, &mut buckets, &mut records, &mut Counter(0), 20).unwrap();
        assert_eq!(out, CycleOutcome::default());
    }

    fn synth_world() -> (SkillBank, Vec<SimTask>, PolicyState) {
        let t = TaskType::new("clean");
        let mut e0 = vec![0.0; 4];
        e0[0] = 1.0;
        let covering = SkillTruth { concept_weights: [(3, 0.8)].into(), harm: 0.0 };
        let bank = SkillBank::from_skills([Skill::task_specific("cle_000", t.clone(), e0, covering)]).unwrap();
        let tasks: Vec<SimTask> = (0..4)
            .map(|i| SimTask {
                id: format!("va_{i}"),
                task_type: t.clone(),
                embedding: normalize(vec![1.0, 0.2 * i as f64, 1.0, 0.0]),
                required_concepts: [(3, 0.3), (7, 0.4)].into(),
                difficulty: 0.0,
                split: Split::Validation,
            })
            .collect();
        let policy = PolicyState::new([&t], 10, &crate::policy::LearnConfig::default());
        (bank, tasks, policy)
    }

    #[test]
    fn synth_targets_missing_concept() {
        let (bank, tasks, policy) = synth_world();
        let index: HashMap<&str, &SimTask> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
        let retrieval = RetrievalConfig { embedding_dim: 4, ..Default::default() };
        let creator =
            SynthCreator { tasks: &index, policy: &policy, retrieval: &retrieval, skill_weight: 0.8, dedup_threshold: 0.95 };
        let bucket = FailureBucket {
            anchor_skill_id: "cle_000".into(),
            task_type: TaskType::new("clean"),
            failed_tasks: tasks.iter().map(|t| t.id.clone()).collect(),
            count: 4,
        };
        let s = creator.synth_create(&bucket, &bank, 30).unwrap();
        assert_eq!(s.id, "dyn_clean_000");
        assert_eq!(s.truth.concept_weights.keys().copied().collect::<Vec<_>>(), [7]);
        assert_eq!((s.origin, s.created_at_step), (Origin::Expanded, 30));
        s.validate().unwrap();

        let empty = FailureBucket { failed_tasks: vec![], count: 0, ..bucket.clone() };
        assert!(matches!(creator.synth_create(&empty, &bank, 30), Err(Error::EmptyBucket)));

        let mut bank2 = bank.clone();
        bank2.add_skill(Skill { id: "cle_001".into(), truth: SkillTruth::default(), ..s.clone() }).unwrap();
        assert!(matches!(creator.synth_create(&bucket, &bank2, 30), Err(Error::Duplicate { .. })));
    }
}
