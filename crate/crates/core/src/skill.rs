//! Skills, the hierarchical skill bank, and lifecycle bookkeeping.
//!
//! A [`SkillBank`] partitions every skill it has ever seen into one pool
//! (the general pool or exactly one task-type pool) and into exactly one of
//! the active or retired sets. Retired skills stay in their pool with the
//! step at which they were deactivated; nothing is ever deleted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Prefix for skills created by expansion.
pub const EXPANDED_PREFIX: &str = "dyn_";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskType(pub String);

impl TaskType {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    General,
    TaskSpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Initial,
    Expanded,
}

/// Simulator ground truth attached to a skill.
///
/// Only the environment reads this. Controller code (retrieval, audit,
/// lifecycle rules) works from validation observables alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillTruth {
    /// Concept id -> coverage the skill provides when in context, in `[0, 1]`.
    #[serde(deserialize_with = "concept_keys")]
    pub concept_weights: BTreeMap<u32, f64>,
    /// Logit penalty applied when the skill is in context (misleading guidance).
    #[serde(default)]
    pub harm: f64,
}

/// JSON object keys are strings. serde_json converts them to integers itself,
/// but not once a record has been buffered by a flattened or tagged parent.
fn concept_keys<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<u32, f64>, D::Error> {
    BTreeMap::<String, f64>::deserialize(d)?
        .into_iter()
        .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(serde::de::Error::custom))
        .collect()
}

impl SkillTruth {
    pub fn mass(&self) -> f64 {
        self.concept_weights.values().sum()
    }

    pub fn is_inert(&self) -> bool {
        self.harm == 0.0 && self.concept_weights.values().all(|&w| w == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub id: String,
    pub tier: Tier,
    pub task_type: Option<TaskType>,
    pub embedding: Vec<f64>,
    pub origin: Origin,
    pub created_at_step: u32,
    pub truth: SkillTruth,
}

impl Skill {
    pub fn general(id: impl Into<String>, embedding: Vec<f64>, truth: SkillTruth) -> Self {
        Self {
            id: id.into(),
            tier: Tier::General,
            task_type: None,
            embedding,
            origin: Origin::Initial,
            created_at_step: 0,
            truth,
        }
    }

    pub fn task_specific(
        id: impl Into<String>,
        task_type: TaskType,
        embedding: Vec<f64>,
        truth: SkillTruth,
    ) -> Self {
        Self {
            id: id.into(),
            tier: Tier::TaskSpecific,
            task_type: Some(task_type),
            embedding,
            origin: Origin::Initial,
            created_at_step: 0,
            truth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.tier, &self.task_type) {
            (Tier::TaskSpecific, None) => return Err(Error::MissingTaskType(self.id.clone())),
            (Tier::General, Some(_)) => return Err(Error::UnexpectedTaskType(self.id.clone())),
            _ => {}
        }
        if self.origin == Origin::Expanded && self.tier != Tier::TaskSpecific {
            return Err(Error::ExpandedGeneral(self.id.clone()));
        }
        let norm = self.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm(self.id.clone(), norm));
        }
        Ok(())
    }
}

/// Active skills visible to one task type.
#[derive(Debug, Clone)]
pub struct ActiveView<'a> {
    pub general: Vec<&'a Skill>,
    pub task: Vec<&'a Skill>,
}

impl ActiveView<'_> {
    pub fn general_ids(&self) -> BTreeSet<&str> {
        self.general.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn task_ids(&self) -> BTreeSet<&str> {
        self.task.iter().map(|s| s.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillBank {
    skills: IndexMap<String, Skill>,
    general_pool: BTreeSet<String>,
    task_pools: BTreeMap<TaskType, BTreeSet<String>>,
    active: BTreeSet<String>,
    retired: BTreeMap<String, u32>,
}

impl SkillBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_skills(skills: impl IntoIterator<Item = Skill>) -> Result<Self> {
        let mut bank = Self::new();
        for s in skills {
            bank.add_skill(s)?;
        }
        Ok(bank)
    }

    /// Inserts a skill into its pool and activates it.
    pub fn add_skill(&mut self, skill: Skill) -> Result<()> {
        if self.skills.contains_key(&skill.id) {
            return Err(Error::DuplicateId(skill.id));
        }
        skill.validate()?;
        match &skill.task_type {
            None => {
                self.general_pool.insert(skill.id.clone());
            }
            Some(t) => {
                self.task_pools.entry(t.clone()).or_default().insert(skill.id.clone());
            }
        }
        self.active.insert(skill.id.clone());
        self.skills.insert(skill.id.clone(), skill);
        Ok(())
    }

    /// Deactivates `id`, annotating the audit cycle. Pool membership is kept.
    pub fn retire_skill(&mut self, id: &str, step: u32) -> Result<()> {
        if !self.active.remove(id) {
            return Err(Error::NotActive(id.to_string()));
        }
        self.retired.insert(id.to_string(), step);
        Ok(())
    }

    pub fn active_view(&self, task_type: &TaskType) -> ActiveView<'_> {
        self.active_view_excluding(task_type, None)
    }

    /// Active view with one skill masked out (leave-one-skill-out passes).
    pub fn active_view_excluding(&self, task_type: &TaskType, exclude: Option<&str>) -> ActiveView<'_> {
        let keep = |id: &&String| self.active.contains(*id) && Some(id.as_str()) != exclude;
        let general = self.general_pool.iter().filter(keep).map(|id| &self.skills[id]).collect();
        let task = self
            .task_pools
            .get(task_type)
            .map(|pool| pool.iter().filter(keep).map(|id| &self.skills[id]).collect())
            .unwrap_or_default();
        ActiveView { general, task }
    }

    pub fn get(&self, id: &str) -> Option<&Skill> {
        self.skills.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.skills.contains_key(id)
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.active.contains(id)
    }

    /// All skills in insertion order.
    pub fn skills(&self) -> impl Iterator<Item = &Skill> {
        self.skills.values()
    }

    pub fn active_ids(&self) -> &BTreeSet<String> {
        &self.active
    }

    pub fn active_skills(&self) -> impl Iterator<Item = &Skill> {
        self.active.iter().map(|id| &self.skills[id])
    }

    pub fn retired(&self) -> &BTreeMap<String, u32> {
        &self.retired
    }

    pub fn general_pool(&self) -> &BTreeSet<String> {
        &self.general_pool
    }

    pub fn task_pools(&self) -> &BTreeMap<TaskType, BTreeSet<String>> {
        &self.task_pools
    }

    pub fn task_pool(&self, task_type: &TaskType) -> impl Iterator<Item = &Skill> {
        self.task_pools
            .get(task_type)
            .into_iter()
            .flat_map(|pool| pool.iter().map(|id| &self.skills[id]))
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn expanded_count(&self) -> usize {
        self.skills.values().filter(|s| s.origin == Origin::Expanded).count()
    }

    /// Next free `dyn_<type>_<seq>` id.
    pub fn next_expanded_id(&self, task_type: &TaskType) -> String {
        let prefix = format!("{EXPANDED_PREFIX}{task_type}_");
        let seq = self.skills.keys().filter(|id| id.starts_with(&prefix)).count();
        (seq..)
            .map(|n| format!("{prefix}{n:03}"))
            .find(|id| !self.skills.contains_key(id))
            .expect("unbounded sequence")
    }

    /// Re-applies logged lifecycle events on top of `self`.
    pub fn replay<'e>(&mut self, events: impl IntoIterator<Item = &'e LifecycleEvent>) -> Result<()> {
        for (index, ev) in events.into_iter().enumerate() {
            let fail = |e: Error| Error::Replay { index, reason: e.to_string() };
            match ev.kind {
                EventKind::Retire => self.retire_skill(&ev.skill_id, ev.step).map_err(fail)?,
                // an Expand without a skill is the anchor's audit decision, not a creation
                EventKind::Expand => {
                    let Some(skill) = ev.skill.clone() else { continue };
                    if skill.id != ev.skill_id {
                        return Err(Error::Replay { index, reason: "expand id mismatch".into() });
                    }
                    self.add_skill(skill).map_err(fail)?;
                }
                EventKind::Retain | EventKind::Hold | EventKind::Skip => {}
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for skill in self.skills.values() {
            let line = SkillLine {
                skill: skill.clone(),
                state: if self.active.contains(&skill.id) {
                    LifecycleState::Active
                } else {
                    LifecycleState::Retired
                },
                retired_at: self.retired.get(&skill.id).copied(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut bank = Self::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SkillLine = serde_json::from_str(&line)?;
            let id = rec.skill.id.clone();
            bank.add_skill(rec.skill)?;
            if rec.state == LifecycleState::Retired {
                bank.retire_skill(&id, rec.retired_at.unwrap_or(0))?;
            }
        }
        Ok(bank)
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Active,
    Retired,
}

#[derive(Debug, Serialize, Deserialize)]
struct SkillLine {
    #[serde(flatten)]
    skill: Skill,
    state: LifecycleState,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    retired_at: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Retain,
    Retire,
    Expand,
    Hold,
    Skip,
}

/// One lifecycle log record. Expand events carry the created skill so the
/// log alone can rebuild the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub step: u32,
    pub skill_id: String,
    pub kind: EventKind,
    pub mec_raw: Option<f64>,
    pub mec_smoothed: Option<f64>,
    pub exposure: u64,
    pub streak: u32,
    pub failures: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skill: Option<Skill>,
}

impl LifecycleEvent {
    pub fn bare(step: u32, skill_id: impl Into<String>, kind: EventKind) -> Self {
        Self {
            step,
            skill_id: skill_id.into(),
            kind,
            mec_raw: None,
            mec_smoothed: None,
            exposure: 0,
            streak: 0,
            failures: 0,
            reason: None,
            skill: None,
        }
    }
}
