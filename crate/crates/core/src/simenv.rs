//! Synthetic task environment with ground-truth skill utilities.
//!
//! Success probability for a task is a logistic function of
//!
//! ```text
//! base - difficulty
//!   + gain * sum_c need(c) * max(competence(type, c), max_{s in support} w_s(c))
//!   - sum_{s in support} harm(s)
//!   - clutter * |support|
//! ```
//!
//! Coverage of a concept comes from whichever source is strongest: the
//! policy's own competence or an in-context skill. A skill therefore stops
//! mattering once the policy has internalized what it teaches, and a twin of
//! an in-context skill adds nothing but context cost.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{Evaluator, ValidationOutcome};
use crate::error::{Error, Result};
use crate::policy::PolicyState;
use crate::retrieval::{route, RetrievalConfig, RoutedSet};
use crate::seed;
use crate::skill::{Skill, SkillBank, SkillTruth, TaskType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask {
    pub id: String,
    pub task_type: TaskType,
    pub embedding: Vec<f64>,
    /// Concept id -> need weight.
    pub required_concepts: BTreeMap<u32, f64>,
    /// Logit offset; larger is harder.
    pub difficulty: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub task_id: String,
    pub success: bool,
    pub reward: f64,
    pub routed: RoutedSet,
}

/// Kinds of initial general skills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneralKind {
    /// Covers general concept `g`.
    Concept(usize),
    /// Same coverage as `Concept(g)`, different id.
    Twin(usize),
    /// No coverage, carries harm.
    Corrupted,
}

/// Kinds of initial task-specific skills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecificKind {
    Core,
    Variant(usize),
    Rare,
    /// Redundant copy of the core skill.
    Twin,
    /// Generic advice close to the type centroid: routes everywhere, helps nowhere.
    Junk,
    /// Keyed to another type's region; rarely passes the threshold.
    Mismatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRecipe {
    pub general: Vec<GeneralKind>,
    /// Per task type, in `EnvConfig::type_names` order. Missing entries mean no skills.
    pub per_type: Vec<Vec<SpecificKind>>,
}

impl BankRecipe {
    pub fn size(&self) -> usize {
        self.general.len() + self.per_type.iter().map(Vec::len).sum::<usize>()
    }
}

/// Generator parameters for tasks and the initial bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub embedding_dim: usize,
    pub n_variants: usize,
    pub n_general_concepts: usize,
    pub type_weight: f64,
    pub concept_weight: f64,
    pub task_noise: f64,
    pub skill_noise: f64,
    pub core_need: f64,
    pub variant_need: f64,
    pub rare_need: f64,
    pub general_need: f64,
    pub rare_prob: f64,
    pub difficulty_spread: f64,
    /// Extra difficulty per type, in `type_names` order.
    pub type_difficulty: Vec<f64>,
    pub skill_weight: f64,
    pub rare_skill_weight: f64,
    /// Weight of the concept direction in a skill's routing key.
    pub skill_key_weight: f64,
    /// Same, for rare-concept skills; larger keys route more selectively.
    pub rare_key_weight: f64,
    pub junk_harm: f64,
    pub corrupted_harm: f64,
    pub bank: BankRecipe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub type_names: Vec<String>,
    pub base_logit: f64,
    pub coverage_gain: f64,
    pub clutter_coeff: f64,
    /// Subtracted from the reward of failed rollouts flagged invalid.
    pub invalid_action_penalty: f64,
    pub noise_seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub world: WorldSpec,
}

/// `ln(p / (1 - p))`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// No-skill success rate of an untrained policy on a zero-difficulty task.
pub const NO_SKILL_START: f64 = 0.297;

pub const TYPE_NAMES: [&str; 6] = ["pick", "look", "clean", "heat", "cool", "pick2"];

impl EnvConfig {
    pub fn n_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn task_types(&self) -> Vec<TaskType> {
        self.type_names.iter().map(TaskType::new).collect()
    }

    pub fn concepts_per_type(&self) -> usize {
        self.world.n_variants + 2
    }

    pub fn n_concepts(&self) -> usize {
        self.n_types() * self.concepts_per_type() + self.world.n_general_concepts
    }

    pub fn core_concept(&self, type_idx: usize) -> u32 {
        (type_idx * self.concepts_per_type()) as u32
    }

    pub fn variant_concept(&self, type_idx: usize, v: usize) -> u32 {
        (type_idx * self.concepts_per_type() + 1 + v) as u32
    }

    pub fn rare_concept(&self, type_idx: usize) -> u32 {
        (type_idx * self.concepts_per_type() + 1 + self.world.n_variants) as u32
    }

    pub fn general_concept(&self, g: usize) -> u32 {
        (self.n_types() * self.concepts_per_type() + g) as u32
    }

    pub fn type_index(&self, t: &TaskType) -> Option<usize> {
        self.type_names.iter().position(|n| n == t.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if self.type_names.is_empty() {
            return Err(Error::InvalidConfig("at least one task type is required".into()));
        }
        if !(self.clutter_coeff >= 0.0) {
            return Err(Error::InvalidConfig("clutter_coeff must be >= 0".into()));
        }
        if self.world.embedding_dim < 2 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 2".into()));
        }
        if self.world.type_difficulty.len() > self.n_types()
            || self.world.bank.per_type.len() > self.n_types()
        {
            return Err(Error::InvalidConfig("per-type tables are longer than the type list".into()));
        }
        Ok(())
    }
}

/// Additive pieces of the success logit, kept apart so costs can be audited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessTerms {
    pub base: f64,
    pub coverage: f64,
    pub harm: f64,
    pub clutter: f64,
}

impl SuccessTerms {
    pub fn logit(&self) -> f64 {
        self.base + self.coverage - self.harm - self.clutter
    }

    pub fn prob(&self) -> f64 {
        sigmoid(self.logit()).clamp(0.0, 1.0)
    }
}

pub fn success_terms(task: &SimTask, policy: &PolicyState, support: &[&Skill], env: &EnvConfig) -> SuccessTerms {
    let coverage = task
        .required_concepts
        .iter()
        .map(|(&c, &need)| {
            let ext = support
                .iter()
                .filter_map(|s| s.truth.concept_weights.get(&c))
                .fold(0.0f64, |a, &w| a.max(w));
            need * policy.competence(&task.task_type, c).max(ext)
        })
        .sum::<f64>();
    SuccessTerms {
        base: env.base_logit - task.difficulty,
        coverage: env.coverage_gain * coverage,
        harm: support.iter().map(|s| s.truth.harm).sum(),
        clutter: env.clutter_coeff * support.len() as f64,
    }
}

pub fn success_prob(task: &SimTask, policy: &PolicyState, support: &[&Skill], env: &EnvConfig) -> f64 {
    success_terms(task, policy, support, env).prob()
}

/// Resolves a routed set against the bank.
pub fn support_of<'a>(bank: &'a SkillBank, routed: &RoutedSet) -> Vec<&'a Skill> {
    routed.ids().filter_map(|id| bank.get(id)).collect()
}

/// One Bernoulli rollout. The uniform draw depends only on `seed`, so two
/// calls with the same seed and different supports are paired.
pub fn rollout(
    task: &SimTask,
    policy: &PolicyState,
    bank: &SkillBank,
    routed: &RoutedSet,
    env: &EnvConfig,
    seed: u64,
) -> RolloutResult {
    let p = success_prob(task, policy, &support_of(bank, routed), env);
    let success = seed::uniform(seed) < p;
    let invalid = !success && env.invalid_action_penalty > 0.0 && seed::uniform(seed ^ 0x5bd1_e995) < 0.5;
    let reward = if success { 1.0 } else { 0.0 } - if invalid { env.invalid_action_penalty } else { 0.0 };
    RolloutResult { task_id: task.id.clone(), success, reward, routed: routed.clone() }
}

/// Routing plus expected success, without sampling.
pub fn expected_success(
    task: &SimTask,
    policy: &PolicyState,
    bank: &SkillBank,
    exclude: Option<&str>,
    retrieval: &RetrievalConfig,
    env: &EnvConfig,
) -> (f64, RoutedSet) {
    let routed = route(&bank.active_view_excluding(&task.task_type, exclude), task, retrieval);
    (success_prob(task, policy, &support_of(bank, &routed), env), routed)
}

/// Exact leave-one-skill-out contribution of `skill_id` over the tasks that
/// route to it, by analytic expectation. `None` when no task routes to it.
pub fn true_mec(
    skill_id: &str,
    tasks: &[&SimTask],
    policy: &PolicyState,
    bank: &SkillBank,
    retrieval: &RetrievalConfig,
    env: &EnvConfig,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in tasks {
        let (with, routed) = expected_success(t, policy, bank, None, retrieval, env);
        if !routed.contains(skill_id) {
            continue;
        }
        let (without, _) = expected_success(t, policy, bank, Some(skill_id), retrieval, env);
        sum += with - without;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Samples validation rollouts from the simulator.
#[derive(Debug, Clone, Copy)]
pub struct SimEvaluator<'a> {
    pub env: &'a EnvConfig,
    pub policy: &'a PolicyState,
    pub retrieval: &'a RetrievalConfig,
}

impl Evaluator for SimEvaluator<'_> {
    fn evaluate(&self, bank: &SkillBank, task: &SimTask, exclude: Option<&str>, seed: u64) -> ValidationOutcome {
        let routed = route(&bank.active_view_excluding(&task.task_type, exclude), task, self.retrieval);
        let r = rollout(task, self.policy, bank, &routed, self.env, seed);
        ValidationOutcome {
            task_id: task.id.clone(),
            task_type: task.task_type.clone(),
            split: task.split,
            routed: r.routed,
            success: r.success,
            reward: r.reward,
        }
    }
}

/// Tasks and the initial bank of a generated world.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub tasks: Vec<SimTask>,
    pub bank: SkillBank,
}

impl World {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SimTask> {
        self.tasks.iter().filter(move |t| t.split == split)
    }

    pub fn task_index(&self) -> HashMap<&str, &SimTask> {
        self.tasks.iter().map(|t| (t.id.as_str(), t)).collect()
    }

    pub fn write_tasks_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tasks {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_tasks_jsonl<R: BufRead>(r: R) -> Result<Vec<SimTask>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    normalize((0..dim).map(|_| gaussian(rng)).collect())
}

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn combine(parts: &[(f64, &[f64])], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = parts[0].1.len();
    let scale = noise / (dim as f64).sqrt();
    let v = (0..dim)
        .map(|i| parts.iter().map(|(w, d)| w * d[i]).sum::<f64>() + scale * gaussian(rng))
        .collect();
    normalize(v)
}

/// Generates tasks for every split plus the initial skill bank.
pub fn generate_world(env: &EnvConfig, rng: &mut ChaCha8Rng) -> Result<World> {
    env.validate()?;
    let w = &env.world;
    let dim = w.embedding_dim;
    let type_dirs: Vec<Vec<f64>> = (0..env.n_types()).map(|_| random_unit(dim, rng)).collect();
    let concept_dirs: Vec<Vec<f64>> = (0..env.n_concepts()).map(|_| random_unit(dim, rng)).collect();

    let mut tasks = Vec::with_capacity(env.train_size + env.val_size + env.test_size);
    for (split, n, tag) in [
        (Split::Train, env.train_size, "tr"),
        (Split::Validation, env.val_size, "va"),
        (Split::Test, env.test_size, "te"),
    ] {
        for i in 0..n {
            let k = i % env.n_types();
            let mut req = BTreeMap::new();
            req.insert(env.core_concept(k), w.core_need);
            if w.n_variants > 0 {
                req.insert(env.variant_concept(k, rng.gen_range(0..w.n_variants)), w.variant_need);
            }
            if rng.gen::<f64>() < w.rare_prob {
                req.insert(env.rare_concept(k), w.rare_need);
            }
            if w.n_general_concepts > 0 {
                req.insert(env.general_concept(rng.gen_range(0..w.n_general_concepts)), w.general_need);
            }
            let mut parts: Vec<(f64, &[f64])> = vec![(w.type_weight, &type_dirs[k])];
            let per_type = env.concepts_per_type() as u32;
            for &c in req.keys().filter(|&&c| c < per_type * env.n_types() as u32) {
                parts.push((w.concept_weight, &concept_dirs[c as usize]));
            }
            let embedding = combine(&parts, w.task_noise, rng);
            let difficulty = w.type_difficulty.get(k).copied().unwrap_or(0.0)
                + w.difficulty_spread * (2.0 * rng.gen::<f64>() - 1.0);
            tasks.push(SimTask {
                id: format!("{tag}_{}_{i:04}", env.type_names[k]),
                task_type: TaskType::new(&env.type_names[k]),
                embedding,
                required_concepts: req,
                difficulty,
                split,
            });
        }
    }

    let mut bank = SkillBank::new();
    let mut gen_seq = 0;
    for kind in &w.bank.general {
        let (concept, harm) = match *kind {
            GeneralKind::Concept(g) | GeneralKind::Twin(g) => (Some(env.general_concept(g)), 0.0),
            GeneralKind::Corrupted => (None, w.corrupted_harm),
        };
        let truth = SkillTruth {
            concept_weights: concept.map(|c| (c, w.skill_weight)).into_iter().collect(),
            harm,
        };
        bank.add_skill(Skill::general(format!("gen_{gen_seq:03}"), random_unit(dim, rng), truth))?;
        gen_seq += 1;
    }
    for (k, kinds) in w.bank.per_type.iter().enumerate() {
        let name = &env.type_names[k];
        let prefix: String = name.chars().take(3).collect::<String>() + if name.ends_with('2') { "2" } else { "" };
        for (j, kind) in kinds.iter().enumerate() {
            let (dir_concept, weights, harm, home) = match *kind {
                SpecificKind::Core | SpecificKind::Twin => {
                    let c = env.core_concept(k);
                    (Some(c), vec![(c, w.skill_weight)], 0.0, k)
                }
                SpecificKind::Variant(v) => {
                    let c = env.variant_concept(k, v.min(w.n_variants.saturating_sub(1)));
                    (Some(c), vec![(c, w.skill_weight)], 0.0, k)
                }
                SpecificKind::Rare => {
                    let c = env.rare_concept(k);
                    (Some(c), vec![(c, w.rare_skill_weight)], 0.0, k)
                }
                SpecificKind::Junk => (None, vec![], w.junk_harm, k),
                SpecificKind::Mismatched => {
                    let other = (k + 1 + rng.gen_range(0..env.n_types().max(2) - 1)) % env.n_types();
                    (Some(env.core_concept(other)), vec![], w.junk_harm, other)
                }
            };
            let mut parts: Vec<(f64, &[f64])> = vec![(w.type_weight, &type_dirs[home])];
            if let Some(c) = dir_concept {
                let key = if *kind == SpecificKind::Rare { w.rare_key_weight } else { w.skill_key_weight };
                parts.push((key, &concept_dirs[c as usize]));
            }
            let embedding = combine(&parts, w.skill_noise, rng);
            let truth = SkillTruth { concept_weights: weights.into_iter().collect(), harm };
            bank.add_skill(Skill::task_specific(
                format!("{prefix}_{j:03}"),
                TaskType::new(name),
                embedding,
                truth,
            ))?;
        }
    }
    Ok(World { tasks, bank })
}

/// Named environment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Six task types, 38 initial skills, capacity-limited policy.
    Reference,
    /// Reference world with enough policy capacity to absorb everything.
    AmpleCapacity,
    /// Reference bank plus 30% corrupted and 30% mismatched extra skills.
    NoisyInit,
    /// No initial skills; everything must come from expansion.
    EmptyBank,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::Reference, Scenario::AmpleCapacity, Scenario::NoisyInit, Scenario::EmptyBank];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Reference => "reference",
            Scenario::AmpleCapacity => "ample-capacity",
            Scenario::NoisyInit => "noisy-init",
            Scenario::EmptyBank => "empty-bank",
        }
    }

    pub fn env(self) -> EnvConfig {
        let mut env = reference_env();
        match self {
            Scenario::Reference | Scenario::AmpleCapacity => {}
            Scenario::NoisyInit => {
                let n = env.world.bank.size();
                let extra = (n as f64 * 0.3).round() as usize;
                // corrupt 30% of originals in place, then append 30% mismatched extras
                let mut slots: Vec<(usize, usize)> = env
                    .world
                    .bank
                    .per_type
                    .iter()
                    .enumerate()
                    .flat_map(|(k, v)| (0..v.len()).map(move |j| (k, j)))
                    .collect();
                slots.shuffle(&mut seed::rng(seed::derive(env.noise_seed, &[seed::stream::WORLD])));
                let mut corrupted = 0;
                for (k, j) in slots {
                    if corrupted == extra {
                        break;
                    }
                    let slot = &mut env.world.bank.per_type[k][j];
                    if *slot != SpecificKind::Junk {
                        *slot = SpecificKind::Junk;
                        corrupted += 1;
                    }
                }
                for i in 0..extra {
                    let k = i % env.n_types();
                    env.world.bank.per_type[k].push(SpecificKind::Mismatched);
                }
            }
            Scenario::EmptyBank => {
                env.world.bank = BankRecipe { general: vec![], per_type: vec![] };
            }
        }
        env
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

fn reference_env() -> EnvConfig {
    use GeneralKind as G;
    use SpecificKind as S;
    let normal = vec![S::Core, S::Variant(0), S::Variant(1), S::Rare, S::Junk];
    EnvConfig {
        type_names: TYPE_NAMES.iter().map(|s| s.to_string()).collect(),
        base_logit: logit(NO_SKILL_START),
        coverage_gain: 3.6,
        clutter_coeff: 0.02,
        invalid_action_penalty: 0.0,
        noise_seed: 0x51_1A,
        train_size: 384,
        val_size: 384,
        test_size: 384,
        world: WorldSpec {
            embedding_dim: 64,
            n_variants: 2,
            n_general_concepts: 3,
            type_weight: 1.0,
            concept_weight: 0.8,
            task_noise: 0.2,
            skill_noise: 0.2,
            core_need: 0.3,
            variant_need: 0.3,
            rare_need: 0.35,
            general_need: 0.25,
            rare_prob: 0.15,
            difficulty_spread: 0.3,
            type_difficulty: vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
            skill_weight: 0.8,
            rare_skill_weight: 0.9,
            skill_key_weight: 1.0,
            rare_key_weight: 1.6,
            junk_harm: 0.15,
            corrupted_harm: 0.3,
            bank: BankRecipe {
                general: vec![G::Concept(0), G::Concept(1), G::Concept(2), G::Twin(0), G::Corrupted],
                per_type: vec![
                    vec![S::Core, S::Variant(0), S::Variant(1), S::Rare, S::Junk, S::Twin],
                    vec![S::Core, S::Variant(0), S::Variant(1), S::Rare, S::Junk, S::Twin],
                    normal.clone(),
                    normal,
                    vec![S::Rare, S::Junk, S::Junk, S::Junk, S::Junk],
                    vec![S::Variant(0), S::Rare, S::Junk, S::Junk, S::Junk, S::Junk],
                ],
            },
        },
    }
}
