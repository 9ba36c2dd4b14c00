//! Capacity-constrained surrogate policy learner.
//!
//! Competence is a table over (task type, concept) with entries in `[0, 1]`.
//! Each update applies group-relative advantages to the concepts exercised by
//! positively-advantaged rollouts, then projects the table back under the
//! total capacity cap by proportional down-scaling. When the cap binds,
//! learning one concept crowds out every other.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::{RolloutResult, SimTask};
use crate::skill::{Skill, SkillBank, TaskType, Tier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub group_size: usize,
    pub learn_rate: f64,
    pub capacity_cap: f64,
    /// Extra learning multiplier on concepts covered by an in-context skill.
    pub skill_transfer_coeff: f64,
    /// Uniform decay applied on updates where the capacity cap binds.
    pub forget_rate: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            learn_rate: 0.05,
            capacity_cap: 16.0,
            skill_transfer_coeff: 1.0,
            forget_rate: 0.0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall(self.group_size));
        }
        if !(self.learn_rate > 0.0) {
            return Err(Error::InvalidConfig("learn_rate must be > 0".into()));
        }
        if !(self.capacity_cap >= 0.0) {
            return Err(Error::InvalidConfig("capacity_cap must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.forget_rate) {
            return Err(Error::InvalidConfig("forget_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    competence: BTreeMap<TaskType, Vec<f64>>,
    pub capacity_cap: f64,
    pub learn_rate: f64,
    pub forget_rate: f64,
}

/// One task's `G` replicated rollouts under a fixed routed support.
#[derive(Debug, Clone)]
pub struct RolloutGroup<'a> {
    pub task: &'a SimTask,
    pub results: Vec<RolloutResult>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub groups: usize,
    pub informative_groups: usize,
    pub mass_before_projection: f64,
    pub projected: bool,
}

/// `(r - mean) / std` within a group; all zeros when the rewards are constant.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

impl PolicyState {
    pub fn new<'a>(types: impl IntoIterator<Item = &'a TaskType>, n_concepts: usize, cfg: &LearnConfig) -> Self {
        Self {
            competence: types.into_iter().map(|t| (t.clone(), vec![0.0; n_concepts])).collect(),
            capacity_cap: cfg.capacity_cap,
            learn_rate: cfg.learn_rate,
            forget_rate: cfg.forget_rate,
        }
    }

    pub fn competence(&self, task_type: &TaskType, concept: u32) -> f64 {
        self.competence
            .get(task_type)
            .and_then(|row| row.get(concept as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set_competence(&mut self, task_type: &TaskType, concept: u32, value: f64) {
        if let Some(slot) = self
            .competence
            .get_mut(task_type)
            .and_then(|row| row.get_mut(concept as usize))
        {
            *slot = value.clamp(0.0, 1.0);
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.competence.values().flatten().sum()
    }

    pub fn task_types(&self) -> impl Iterator<Item = &TaskType> {
        self.competence.keys()
    }

    /// Proportionally scales the table so its mass fits under the cap.
    pub fn project(&mut self) -> bool {
        let mass = self.total_mass();
        if mass <= self.capacity_cap {
            return false;
        }
        let scale = (1.0 - self.forget_rate) * self.capacity_cap / mass;
        for v in self.competence.values_mut().flatten() {
            *v *= scale;
        }
        true
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = PolicyLine::Header {
            capacity_cap: self.capacity_cap,
            learn_rate: self.learn_rate,
            forget_rate: self.forget_rate,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (t, row) in &self.competence {
            serde_json::to_writer(&mut w, &PolicyLine::Competence { task_type: t.clone(), values: row.clone() })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut state: Option<Self> = None;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<PolicyLine>(&line)? {
                PolicyLine::Header { capacity_cap, learn_rate, forget_rate } => {
                    state = Some(Self { competence: BTreeMap::new(), capacity_cap, learn_rate, forget_rate });
                }
                PolicyLine::Competence { task_type, values } => {
                    let s = state
                        .as_mut()
                        .ok_or_else(|| Error::InvalidConfig("policy file lacks a header line".into()))?;
                    s.competence.insert(task_type, values);
                }
            }
        }
        state.ok_or_else(|| Error::InvalidConfig("empty policy file".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum PolicyLine {
    Header { capacity_cap: f64, learn_rate: f64, forget_rate: f64 },
    Competence { task_type: TaskType, values: Vec<f64> },
}

/// Highest in-context coverage per concept for one routed support.
fn supported_weights(bank: &SkillBank, result: &RolloutResult) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    for s in result.routed.ids().filter_map(|id| bank.get(id)) {
        for (&c, &w) in &s.truth.concept_weights {
            let e = out.entry(c).or_insert(0.0f64);
            *e = e.max(w);
        }
    }
    out
}

pub fn policy_update(
    policy: &mut PolicyState,
    groups: &[RolloutGroup<'_>],
    bank: &SkillBank,
    cfg: &LearnConfig,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats { groups: groups.len(), ..Default::default() };
    let mut delta: BTreeMap<(TaskType, u32), f64> = BTreeMap::new();

    for g in groups {
        if g.results.len() < 2 {
            return Err(Error::GroupTooSmall(g.results.len()));
        }
        let rewards: Vec<f64> = g.results.iter().map(|r| r.reward).collect();
        let adv = group_advantages(&rewards);
        if adv.iter().all(|&a| a == 0.0) {
            continue;
        }
        stats.informative_groups += 1;
        let scale = cfg.learn_rate / g.results.len() as f64;
        for (res, a) in g.results.iter().zip(adv) {
            if a <= 0.0 {
                continue;
            }
            let support = supported_weights(bank, res);
            for (&c, &need) in &g.task.required_concepts {
                let boost = 1.0 + cfg.skill_transfer_coeff * support.get(&c).copied().unwrap_or(0.0);
                let headroom = 1.0 - policy.competence(&g.task.task_type, c);
                *delta.entry((g.task.task_type.clone(), c)).or_insert(0.0) += scale * a * need * boost * headroom;
            }
        }
    }

    for ((t, c), d) in delta {
        let v = policy.competence(&t, c) + d;
        policy.set_competence(&t, c, v);
    }
    stats.mass_before_projection = policy.total_mass();
    stats.projected = policy.project();
    Ok(stats)
}

/// Fraction of a skill's concept mass the policy already covers.
///
/// General skills are scored against the mean competence across task types.
pub fn internalized_fraction(policy: &PolicyState, skill: &Skill) -> Option<f64> {
    let mass = skill.truth.mass();
    if mass <= 0.0 {
        return None;
    }
    let types: Vec<&TaskType> = match (skill.tier, &skill.task_type) {
        (Tier::TaskSpecific, Some(t)) => vec![t],
        _ => policy.task_types().collect(),
    };
    if types.is_empty() {
        return Some(0.0);
    }
    let covered: f64 = types
        .iter()
        .map(|t| {
            skill
                .truth
                .concept_weights
                .iter()
                .map(|(&c, &w)| policy.competence(t, c).min(w))
                .sum::<f64>()
        })
        .sum::<f64>()
        / types.len() as f64;
    Some(covered / mass)
}

/// Diagnostic label: does the policy already carry this skill's capability?
/// Read-only; never feeds back into lifecycle decisions.
pub fn internalization_probe(policy: &PolicyState, skill: &Skill, threshold: f64) -> bool {
    match internalized_fraction(policy, skill) {
        Some(f) => f >= threshold,
        None => threshold <= 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RoutedSet;
    use crate::simenv::Split;
    use crate::skill::SkillTruth;

    fn clean() -> TaskType {
        TaskType::new("clean")
    }

    fn task() -> SimTask {
        SimTask {
            id: "t0".into(),
            task_type: clean(),
            embedding: vec![1.0, 0.0],
            required_concepts: [(0, 0.5), (1, 0.25)].into(),
            difficulty: 0.0,
            split: Split::Train,
        }
    }

    fn result(success: bool) -> RolloutResult {
        RolloutResult {
            task_id: "t0".into(),
            success,
            reward: if success { 1.0 } else { 0.0 },
            routed: RoutedSet::empty("t0"),
        }
    }

    #[test]
    fn constant_rewards_do_not_update() {
        let cfg = LearnConfig::default();
        let mut p = PolicyState::new([&clean()], 4, &cfg);
        let t = task();
        let groups = [RolloutGroup { task: &t, results: (0..8).map(|_| result(true)).collect() }];
        let stats = policy_update(&mut p, &groups, &SkillBank::new(), &cfg).unwrap();
        assert_eq!(stats.informative_groups, 0);
        assert_eq!(p.total_mass(), 0.0);
    }

    #[test]
    fn one_success_among_failures_matches_hand_computation() {
        let cfg = LearnConfig { learn_rate: 0.1, skill_transfer_coeff: 1.0, ..Default::default() };
        let mut p = PolicyState::new([&clean()], 4, &cfg);
        let t = task();
        let mut results: Vec<_> = (0..8).map(|_| result(false)).collect();
        results[0] = result(true);
        let groups = [RolloutGroup { task: &t, results }];
        policy_update(&mut p, &groups, &SkillBank::new(), &cfg).unwrap();
        // mean 1/8, population std sqrt(7)/8, advantage of the success = 7/sqrt(7) = sqrt(7)
        let adv = 7f64.sqrt();
        let expect0 = 0.1 / 8.0 * adv * 0.5;
        let expect1 = 0.1 / 8.0 * adv * 0.25;
        assert!((p.competence(&clean(), 0) - expect0).abs() < 1e-12);
        assert!((p.competence(&clean(), 1) - expect1).abs() < 1e-12);
        assert_eq!(p.competence(&clean(), 2), 0.0);
    }

    #[test]
    fn skill_support_accelerates_learning() {
        let cfg = LearnConfig { learn_rate: 0.1, skill_transfer_coeff: 2.0, ..Default::default() };
        let bank = SkillBank::from_skills([Skill::task_specific(
            "c",
            clean(),
            vec![1.0, 0.0],
            SkillTruth { concept_weights: [(0, 0.5)].into(), harm: 0.0 },
        )])
        .unwrap();
        let t = task();
        let mut routed = RoutedSet::empty("t0");
        routed.task_ids.push("c".into());
        let mut results: Vec<_> = (0..8).map(|_| result(false)).collect();
        results[0] = RolloutResult { routed, ..result(true) };
        let mut p = PolicyState::new([&clean()], 4, &cfg);
        policy_update(&mut p, &[RolloutGroup { task: &t, results }], &bank, &cfg).unwrap();
        let adv = 7f64.sqrt();
        assert!((p.competence(&clean(), 0) - 0.1 / 8.0 * adv * 0.5 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_capacity_is_conserved() {
        let cfg = LearnConfig { capacity_cap: 1.0, learn_rate: 0.5, ..Default::default() };
        let mut p = PolicyState::new([&clean()], 4, &cfg);
        p.set_competence(&clean(), 2, 0.6);
        p.set_competence(&clean(), 3, 0.4);
        let t = task();
        let mut results: Vec<_> = (0..8).map(|_| result(false)).collect();
        results[3] = result(true);
        let stats = policy_update(&mut p, &[RolloutGroup { task: &t, results }], &SkillBank::new(), &cfg).unwrap();
        assert!(stats.projected);
        assert!((p.total_mass() - 1.0).abs() < 1e-12);
        // the untouched concepts were crowded out
        assert!(p.competence(&clean(), 2) < 0.6);
    }

    #[test]
    fn tiny_groups_are_rejected() {
        let cfg = LearnConfig::default();
        let mut p = PolicyState::new([&clean()], 4, &cfg);
        let t = task();
        let groups = [RolloutGroup { task: &t, results: vec![result(true)] }];
        assert!(matches!(policy_update(&mut p, &groups, &SkillBank::new(), &cfg), Err(Error::GroupTooSmall(1))));
        assert!(matches!(LearnConfig { group_size: 1, ..cfg }.validate(), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn probe_boundaries() {
        let cfg = LearnConfig::default();
        let mut p = PolicyState::new([&clean()], 4, &cfg);
        let s = Skill::task_specific(
            "c",
            clean(),
            vec![1.0, 0.0],
            SkillTruth { concept_weights: [(0, 0.8)].into(), harm: 0.0 },
        );
        assert!(!internalization_probe(&p, &s, 0.8));
        p.set_competence(&clean(), 0, 0.7);
        assert!(!internalization_probe(&p, &s, 0.9));
        assert!(internalization_probe(&p, &s, 0.85));
        let inert = Skill::task_specific("z", clean(), vec![1.0, 0.0], SkillTruth::default());
        assert!(internalization_probe(&p, &inert, 0.0));
        assert!(!internalization_probe(&p, &inert, 0.1));
    }

    #[test]
    fn policy_file_round_trip() {
        let cfg = LearnConfig::default();
        let mut p = PolicyState::new([&clean(), &TaskType::new("heat")], 3, &cfg);
        p.set_competence(&clean(), 1, 0.1 + 0.2);
        let mut buf = Vec::new();
        p.write_jsonl(&mut buf).unwrap();
        let back = PolicyState::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        let mut again = Vec::new();
        back.write_jsonl(&mut again).unwrap();
        assert_eq!(buf, again);
    }
}
