//! Task-conditioned hierarchical retrieval.
//!
//! Every active general skill is always in context. Task-specific skills
//! come from the active pool of the task's type: candidates below the
//! embedding threshold are dropped first, then the `top_k` most similar
//! survive. Equal similarities are ordered by ascending skill id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::SimTask;
use crate::skill::{ActiveView, Skill};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub emb_threshold: f64,
    pub embedding_dim: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { top_k: 3, emb_threshold: 0.45, embedding_dim: 64 }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::InvalidConfig("top_k must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.emb_threshold) {
            return Err(Error::InvalidConfig("emb_threshold must lie in [-1, 1]".into()));
        }
        if self.embedding_dim < 2 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 2".into()));
        }
        Ok(())
    }
}

/// Skills placed in context for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedSet {
    pub task_id: String,
    pub general_ids: Vec<String>,
    /// Retrieved task-specific skills, most similar first.
    pub task_ids: Vec<String>,
    pub similarities: BTreeMap<String, f64>,
}

impl RoutedSet {
    pub fn empty(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            general_ids: Vec::new(),
            task_ids: Vec::new(),
            similarities: BTreeMap::new(),
        }
    }

    pub fn contains(&self, skill_id: &str) -> bool {
        self.general_ids.iter().chain(&self.task_ids).any(|id| id == skill_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.general_ids.iter().chain(&self.task_ids).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.general_ids.len() + self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// The vector a skill is indexed under. In simulation this is the stored embedding.
pub fn routing_key(skill: &Skill) -> &[f64] {
    &skill.embedding
}

pub fn route(view: &ActiveView<'_>, task: &SimTask, cfg: &RetrievalConfig) -> RoutedSet {
    let mut scored: Vec<(f64, &str)> = view
        .task
        .iter()
        .filter_map(|s| {
            // malformed keys simply never route
            let sim = cosine(&task.embedding, routing_key(s)).ok()?;
            (sim >= cfg.emb_threshold).then_some((sim, s.id.as_str()))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(cfg.top_k);

    RoutedSet {
        task_id: task.id.clone(),
        general_ids: view.general.iter().map(|s| s.id.clone()).collect(),
        task_ids: scored.iter().map(|(_, id)| id.to_string()).collect(),
        similarities: scored.iter().map(|(sim, id)| (id.to_string(), *sim)).collect(),
    }
}
