//! Monte Carlo checks of the lifecycle's guarantees against exact oracles.
//!
//! Every check plants a configuration whose true contribution is known in
//! closed form (via [`true_mec`]), runs the real audit machinery on sampled
//! rollouts, and compares the measured statistic to its bound. Each report
//! row carries the statistic, the bound, a standard error and PASS/FAIL.
//!
//! The mixing condition that would allow dependent validation noise is not
//! identifiable from the oracle, so only independent per-task noise is tested.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{ema_update, mec_loso, AuditConfig, LosoEstimate, MecRecord, PerfMetric};
use crate::error::{Error, Result};
use crate::lifecycle::{decide, Decision, LifecycleConfig};
use crate::policy::{LearnConfig, PolicyState};
use crate::retrieval::{route, RetrievalConfig};
use crate::seed;
use crate::simenv::{generate_world, normalize, success_terms, support_of, true_mec, EnvConfig, Scenario, SimEvaluator, SimTask, Split};
use crate::skill::{Skill, SkillBank, SkillTruth, TaskType};

pub const TARGET_ID: &str = "target";
const TWIN_ID: &str = "twin";
const GENERAL_ID: &str = "general";
const DIM: usize = 8;

/// Hoeffding half-width for a mean of paired differences in `[-1, 1]` at confidence `1 - delta`.
pub fn hoeffding_eps(n: usize, delta: f64) -> f64 {
    (2.0 * (2.0 / delta).ln() / n as f64).sqrt()
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn unit(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i] = 1.0;
    v
}

/// A single-type world with one audited skill whose contribution is planted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    /// Coverage the target skill gives on the needed concept.
    pub weight: f64,
    pub harm: f64,
    /// Policy competence on the needed concept.
    pub competence: f64,
    /// A second routed skill covering the same concept.
    pub twin_weight: Option<f64>,
    /// Keep an always-in-context general skill (adds context cost only).
    pub general: bool,
    /// Per-task difficulty is uniform on `[-spread, spread]`.
    pub spread: f64,
    /// Share of tasks whose context contains the target.
    pub routed_fraction: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            weight: 0.3,
            harm: 0.0,
            competence: 0.0,
            twin_weight: None,
            general: false,
            spread: 0.5,
            routed_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub env: EnvConfig,
    pub retrieval: RetrievalConfig,
    pub policy: PolicyState,
    pub bank: SkillBank,
    pub tasks: Vec<SimTask>,
}

impl Planted {
    /// Builds `n_routed` tasks that retrieve the target, plus enough
    /// non-routed tasks to honour `routed_fraction`.
    pub fn build(cfg: &PlantedConfig, n_routed: usize, world_seed: u64) -> Result<Self> {
        if !(cfg.routed_fraction > 0.0 && cfg.routed_fraction <= 1.0) {
            return Err(Error::InvalidConfig("routed_fraction must lie in (0, 1]".into()));
        }
        let tt = TaskType::new("planted");
        let mut env = Scenario::Reference.env();
        env.type_names = vec![tt.0.clone()];
        let retrieval = RetrievalConfig { embedding_dim: DIM, ..RetrievalConfig::default() };
        let mut policy = PolicyState::new([&tt], 2, &LearnConfig { capacity_cap: 1e9, ..LearnConfig::default() });
        policy.set_competence(&tt, 0, cfg.competence);

        let truth = |w: f64, harm: f64| SkillTruth { concept_weights: [(0, w)].into(), harm };
        let mut skills = vec![Skill::task_specific(TARGET_ID, tt.clone(), unit(0), truth(cfg.weight, cfg.harm))];
        if let Some(w) = cfg.twin_weight {
            let key = normalize(vec![0.95, 0.0, 0.0, 0.31, 0.0, 0.0, 0.0, 0.0]);
            skills.push(Skill::task_specific(TWIN_ID, tt.clone(), key, truth(w, 0.0)));
        }
        if cfg.general {
            skills.push(Skill::general(GENERAL_ID, unit(DIM - 1), SkillTruth::default()));
        }
        let bank = SkillBank::from_skills(skills)?;

        let n_other = ((n_routed as f64) * (1.0 - cfg.routed_fraction) / cfg.routed_fraction).round() as usize;
        let mut rng = seed::rng(seed::derive(world_seed, &[seed::stream::WORLD]));
        let tasks = (0..n_routed + n_other)
            .map(|i| {
                let routed = i < n_routed;
                let embedding = if routed { normalize(vec![0.8, 0.0, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0]) } else { unit(2) };
                let difficulty = if cfg.spread > 0.0 { rng.gen_range(-cfg.spread..=cfg.spread) } else { 0.0 };
                SimTask {
                    id: format!("v{i:04}"),
                    task_type: tt.clone(),
                    embedding,
                    required_concepts: [(0, 1.0)].into(),
                    difficulty,
                    split: Split::Validation,
                }
            })
            .collect();
        Ok(Self { env, retrieval, policy, bank, tasks })
    }

    fn task_refs(&self) -> Vec<&SimTask> {
        self.tasks.iter().collect()
    }

    /// Exact expected contribution of the target over its routed tasks.
    pub fn oracle_delta(&self) -> f64 {
        true_mec(TARGET_ID, &self.task_refs(), &self.policy, &self.bank, &self.retrieval, &self.env).unwrap_or(0.0)
    }

    /// One sampled paired audit of the target.
    pub fn loso(&self, seed: u64) -> Result<LosoEstimate> {
        let ev = SimEvaluator { env: &self.env, policy: &self.policy, retrieval: &self.retrieval };
        mec_loso(&ev, &self.bank, TARGET_ID, &self.task_refs(), seed, PerfMetric::SuccessRate)
    }

    /// Routed task count per audit.
    pub fn exposure(&self) -> u64 {
        self.tasks.iter().filter(|t| t.embedding[0] > 0.0).count() as u64
    }
}

/// Adjusts `weight` (or `harm`, for negative targets) until the planted
/// contribution matches `target` to within 1e-6.
pub fn calibrate(base: &PlantedConfig, target: f64, n_routed: usize, world_seed: u64) -> Result<PlantedConfig> {
    let eval = |c: &PlantedConfig| Planted::build(c, n_routed, world_seed).map(|p| p.oracle_delta());
    let positive = target >= eval(&PlantedConfig { weight: base.competence, harm: 0.0, ..*base })?;
    let set = |x: f64| {
        if positive {
            PlantedConfig { weight: x, harm: 0.0, ..*base }
        } else {
            PlantedConfig { weight: base.competence, harm: x, ..*base }
        }
    };
    let (mut lo, mut hi) = if positive { (base.competence, 1.0) } else { (0.0, 8.0) };
    if positive && eval(&set(hi))? < target {
        return Err(Error::InvalidConfig(format!("contribution {target} is out of reach")));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let d = eval(&set(mid))?;
        // weight raises the contribution, harm lowers it
        if (d < target) == positive {
            lo = mid;
        } else {
            hi = mid;
        }
        if (d - target).abs() < 1e-6 {
            return Ok(set(mid));
        }
    }
    Ok(set(0.5 * (lo + hi)))
}

/// Twenty planted audits spanning harmful, inert, redundant, internalized
/// and helpful targets. True contributions stay within about 0.1 in
/// magnitude, the range real audits see.
pub fn planted_grid() -> Vec<PlantedConfig> {
    let d = PlantedConfig::default();
    vec![
        PlantedConfig { weight: 0.0, ..d },
        PlantedConfig { weight: 0.05, ..d },
        PlantedConfig { weight: 0.1, ..d },
        PlantedConfig { weight: 0.11, ..d },
        PlantedConfig { weight: 0.08, spread: 0.0, ..d },
        PlantedConfig { weight: 0.1, spread: 1.5, ..d },
        PlantedConfig { weight: 0.0, harm: 0.1, ..d },
        PlantedConfig { weight: 0.0, harm: 0.3, ..d },
        PlantedConfig { weight: 0.1, harm: 0.4, ..d },
        PlantedConfig { weight: 0.5, competence: 0.6, ..d },
        PlantedConfig { weight: 0.6, competence: 0.5, ..d },
        PlantedConfig { weight: 0.7, competence: 0.55, ..d },
        PlantedConfig { weight: 0.5, twin_weight: Some(0.5), ..d },
        PlantedConfig { weight: 0.55, twin_weight: Some(0.45), ..d },
        PlantedConfig { weight: 0.3, twin_weight: Some(0.6), ..d },
        PlantedConfig { weight: 0.1, general: true, ..d },
        PlantedConfig { weight: 0.1, routed_fraction: 0.5, ..d },
        PlantedConfig { weight: 0.1, routed_fraction: 0.25, spread: 1.0, ..d },
        PlantedConfig { weight: 0.9, competence: 0.85, general: true, ..d },
        PlantedConfig { weight: 0.05, harm: 0.05, twin_weight: Some(0.1), ..d },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    RetrievalUnionBound,
    RetentionProxy,
    PatienceDecay,
    NecessaryProtection,
    SingleMoveCost,
}

impl Lemma {
    pub const ALL: [Lemma; 5] = [
        Lemma::RetrievalUnionBound,
        Lemma::RetentionProxy,
        Lemma::PatienceDecay,
        Lemma::NecessaryProtection,
        Lemma::SingleMoveCost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Lemma::RetrievalUnionBound => "retrieval_union_bound",
            Lemma::RetentionProxy => "retention_proxy",
            Lemma::PatienceDecay => "patience_decay",
            Lemma::NecessaryProtection => "necessary_protection",
            Lemma::SingleMoveCost => "single_move_cost",
        }
    }
}

impl fmt::Display for Lemma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Lemma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Lemma::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| Error::InvalidConfig(format!("unknown check `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheckConfig {
    pub lemma: Lemma,
    pub trials: usize,
    pub seed: u64,
    /// Planted distance above the retire threshold (patience check).
    pub margin: f64,
    /// Routed validation tasks per audit.
    pub validation_sizes: Vec<usize>,
    /// Per-skill retrieval miss probability.
    pub miss_prob: f64,
    /// Confidence parameter of the validation bound.
    pub delta_val: f64,
    pub patience_grid: Vec<u32>,
    /// Audits per simulated skill lifetime.
    pub horizon: usize,
}

impl LemmaCheckConfig {
    pub fn new(lemma: Lemma) -> Self {
        let (trials, sizes) = match lemma {
            Lemma::RetrievalUnionBound => (4000, vec![]),
            Lemma::RetentionProxy => (200, vec![64, 128, 256, 512]),
            Lemma::PatienceDecay => (500, vec![32]),
            Lemma::NecessaryProtection => (200, vec![64, 128, 256, 512]),
            Lemma::SingleMoveCost => (2000, vec![]),
        };
        Self {
            lemma,
            trials,
            seed: 0,
            margin: 0.03,
            validation_sizes: sizes,
            miss_prob: 0.05,
            delta_val: 0.05,
            patience_grid: vec![1, 2, 3, 5],
            horizon: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return Err(Error::InvalidConfig("checks need at least 100 trials".into()));
        }
        if self.patience_grid.iter().any(|&p| p < 1) {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.miss_prob) || !(self.delta_val > 0.0 && self.delta_val < 1.0) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub lemma: Lemma,
    pub case: String,
    pub trials: usize,
    pub measured: f64,
    pub bound: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub lemma: Lemma,
    pub rows: Vec<CheckRow>,
    /// Conditions beyond per-row bounds, such as monotonicity across rows.
    pub extra: Vec<(String, bool)>,
}

impl LemmaReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.extra.iter().all(|(_, ok)| *ok)
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} {}\n", if self.pass() { "PASS" } else { "FAIL" }, self.lemma);
        for r in &self.rows {
            out += &format!(
                "  {} {:<28} measured {:.5}  bound {:.5}  se {:.5}  n {}\n",
                if r.pass { "ok  " } else { "FAIL" },
                r.case,
                r.measured,
                r.bound,
                r.se,
                r.trials
            );
        }
        for (what, ok) in &self.extra {
            out += &format!("  {} {what}\n", if *ok { "ok  " } else { "FAIL" });
        }
        out
    }
}

pub fn reports_csv(reports: &[LemmaReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports.iter().flat_map(|r| &r.rows) {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn run_check(cfg: &LemmaCheckConfig) -> Result<LemmaReport> {
    cfg.validate()?;
    match cfg.lemma {
        Lemma::RetrievalUnionBound => check_retrieval_union_bound(cfg),
        Lemma::RetentionProxy => check_retention_proxy(cfg),
        Lemma::PatienceDecay => check_patience_decay(cfg),
        Lemma::NecessaryProtection => check_necessary_protection(cfg),
        Lemma::SingleMoveCost => check_single_move_cost(cfg),
    }
}

pub fn run_all(seed: u64) -> Result<Vec<LemmaReport>> {
    Lemma::ALL.into_iter().map(|l| run_check(&LemmaCheckConfig { seed, ..LemmaCheckConfig::new(l) })).collect()
}

/// Plants independent per-skill misses and routes through the real retriever.
pub fn check_retrieval_union_bound(cfg: &LemmaCheckConfig) -> Result<LemmaReport> {
    let tt = TaskType::new("planted");
    let retrieval = RetrievalConfig { embedding_dim: DIM, ..RetrievalConfig::default() };
    let mut rows = Vec::new();
    for &delta in &[0.0, cfg.miss_prob] {
        for needed in 1..=retrieval.top_k.min(3) {
            let bank = SkillBank::from_skills(
                (0..needed).map(|i| Skill::task_specific(format!("s{i}"), tt.clone(), unit(i), SkillTruth::default())),
            )?;
            let misses: usize = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    let s = seed::derive(cfg.seed, &[seed::key("union"), needed as u64, trial as u64]);
                    let mut emb = vec![0.0; DIM];
                    emb[DIM - 1] = 0.3;
                    for (i, slot) in emb.iter_mut().enumerate().take(needed) {
                        let missed = seed::uniform(seed::derive(s, &[i as u64])) < delta;
                        // a missed skill sits far below the threshold, a hit far above
                        *slot = if missed { 0.05 } else { 1.0 };
                    }
                    let task = SimTask {
                        id: format!("u{trial}"),
                        task_type: tt.clone(),
                        embedding: normalize(emb),
                        required_concepts: Default::default(),
                        difficulty: 0.0,
                        split: Split::Validation,
                    };
                    let routed = route(&bank.active_view(&tt), &task, &retrieval);
                    (0..needed).any(|i| !routed.contains(&format!("s{i}"))) as usize
                })
                .sum();
            let measured = misses as f64 / cfg.trials as f64;
            let bound = needed as f64 * delta;
            let se = binomial_se(measured, cfg.trials);
            rows.push(CheckRow {
                lemma: Lemma::RetrievalUnionBound,
                case: format!("L={needed} miss={delta}"),
                trials: cfg.trials,
                measured,
                bound,
                se,
                pass: measured <= bound + 3.0 * se,
            });
        }
    }
    Ok(LemmaReport { lemma: Lemma::RetrievalUnionBound, rows, extra: vec![] })
}

/// Frequency with which a paired audit misses the oracle by more than the
/// Hoeffding half-width.
pub fn check_retention_proxy(cfg: &LemmaCheckConfig) -> Result<LemmaReport> {
    let base = PlantedConfig { weight: 0.25, spread: 1.0, ..PlantedConfig::default() };
    let mut rows = Vec::new();
    for &n in &cfg.validation_sizes {
        let planted = Planted::build(&base, n, cfg.seed)?;
        let truth = planted.oracle_delta();
        let eps = hoeffding_eps(n, cfg.delta_val);
        let outside: usize = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let est = planted.loso(seed::derive(cfg.seed, &[seed::key("retention"), n as u64, t as u64]))?;
                Ok(est.delta().is_none_or(|d| (d - truth).abs() > eps) as usize)
            })
            .sum::<Result<usize>>()?;
        let measured = outside as f64 / cfg.trials as f64;
        let se = binomial_se(cfg.delta_val, cfg.trials);
        rows.push(CheckRow {
            lemma: Lemma::RetentionProxy,
            case: format!("n={n} eps={eps:.4}"),
            trials: cfg.trials,
            measured,
            bound: cfg.delta_val,
            se,
            pass: measured <= cfg.delta_val + 3.0 * se,
        });
    }
    Ok(LemmaReport { lemma: Lemma::RetentionProxy, rows, extra: vec![] })
}

/// Audit index at which the rules first retire a skill fed `raws`.
pub fn first_retirement(raws: &[f64], exposure_per_audit: u64, audit: &AuditConfig, rules: &LifecycleConfig) -> Option<usize> {
    let mut rec = MecRecord::new(TARGET_ID);
    raws.iter().position(|&raw| {
        rec.exposure += exposure_per_audit;
        ema_update(&mut rec, raw, audit, rules.tau_retire);
        decide(&rec, None, rules) == Decision::Retire
    })
}

fn audit_sequences(planted: &Planted, cfg: &LemmaCheckConfig, tag: &str) -> Result<Vec<Vec<f64>>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            (0..cfg.horizon)
                .map(|h| {
                    let s = seed::derive(cfg.seed, &[seed::key(tag), t as u64, h as u64]);
                    Ok(planted.loso(s)?.delta().unwrap_or(0.0))
                })
                .collect()
        })
        .collect()
}

/// False-retire frequency of a planted useful skill for each patience value.
/// All patience values see the same audit sequences.
pub fn check_patience_decay(cfg: &LemmaCheckConfig) -> Result<LemmaReport> {
    let audit = AuditConfig::default();
    let rules = LifecycleConfig::default();
    let n = cfg.validation_sizes.first().copied().unwrap_or(32);
    let target = rules.tau_retire + cfg.margin;
    let planted = Planted::build(&calibrate(&PlantedConfig::default(), target, n, cfg.seed)?, n, cfg.seed)?;
    let seqs = audit_sequences(&planted, cfg, "patience")?;
    let mut rows = Vec::new();
    for &p in &cfg.patience_grid {
        let rules = LifecycleConfig { patience: p, ..rules.clone() };
        let retired = seqs.iter().filter(|s| first_retirement(s, planted.exposure(), &audit, &rules).is_some()).count();
        let measured = retired as f64 / cfg.trials as f64;
        rows.push(CheckRow {
            lemma: Lemma::PatienceDecay,
            case: format!("p={p} delta={:.4}", planted.oracle_delta()),
            trials: cfg.trials,
            measured,
            bound: 1.0,
            se: binomial_se(measured, cfg.trials),
            pass: true,
        });
    }
    let rates: Vec<f64> = rows.iter().map(|r| r.measured).collect();
    let monotone = rates.windows(2).all(|w| w[1] <= w[0]);
    let pts: Vec<(f64, f64)> =
        cfg.patience_grid.iter().zip(&rates).filter(|(_, &r)| r > 0.0).map(|(&p, &r)| (p as f64, r.ln())).collect();
    let slope = log_slope(&pts);
    let shown: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
    let mut extra = vec![(format!("false-retire rate non-increasing in patience [{}]", shown.join(", ")), monotone)];
    if let Some(s) = slope {
        extra.push((format!("log-rate slope {s:.4} < 0"), s < 0.0));
    }
    Ok(LemmaReport { lemma: Lemma::PatienceDecay, rows, extra })
}

fn log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    Some(sxy / sxx)
}

/// Retire rate of a skill planted at `tau_retire + eps_val`, per validation size.
pub fn check_necessary_protection(cfg: &LemmaCheckConfig) -> Result<LemmaReport> {
    let audit = AuditConfig::default();
    let rules = LifecycleConfig::default();
    let mut rows = Vec::new();
    for &n in &cfg.validation_sizes {
        let target = rules.tau_retire + hoeffding_eps(n, cfg.delta_val);
        let planted = Planted::build(&calibrate(&PlantedConfig::default(), target, n, cfg.seed)?, n, cfg.seed)?;
        let seqs = audit_sequences(&planted, cfg, &format!("protect{n}"))?;
        let retired = seqs.iter().filter(|s| first_retirement(s, planted.exposure(), &audit, &rules).is_some()).count();
        let measured = retired as f64 / cfg.trials as f64;
        let se = binomial_se(cfg.delta_val, cfg.trials);
        rows.push(CheckRow {
            lemma: Lemma::NecessaryProtection,
            case: format!("n={n} delta={:.4}", planted.oracle_delta()),
            trials: cfg.trials,
            measured,
            bound: cfg.delta_val,
            se,
            pass: measured <= cfg.delta_val + 3.0 * se,
        });
    }
    // zero-noise oracle audits never retire a protected skill
    let n = cfg.validation_sizes.first().copied().unwrap_or(64);
    let target = rules.tau_retire + hoeffding_eps(n, cfg.delta_val);
    let exact = vec![target; cfg.horizon];
    let oracle_retired = first_retirement(&exact, n as u64, &audit, &rules).is_some();
    rows.push(CheckRow {
        lemma: Lemma::NecessaryProtection,
        case: "oracle audits".into(),
        trials: 1,
        measured: oracle_retired as u8 as f64,
        bound: 0.0,
        se: 0.0,
        pass: !oracle_retired,
    });
    Ok(LemmaReport { lemma: Lemma::NecessaryProtection, rows, extra: vec![] })
}

/// Adds or removes one skill from a sampled context and measures the change in
/// the context-cost term and in success probability attributable to it.
pub fn check_single_move_cost(cfg: &LemmaCheckConfig) -> Result<LemmaReport> {
    let mut rows = Vec::new();
    for clutter in [0.0, 0.01, Scenario::Reference.env().clutter_coeff] {
        let mut env = Scenario::Reference.env();
        env.clutter_coeff = clutter;
        let world = generate_world(&env, &mut seed::rng(seed::derive(cfg.seed, &[seed::stream::WORLD])))?;
        let types = env.task_types();
        let mut policy = PolicyState::new(&types, env.n_concepts(), &LearnConfig::default());
        let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::key("move")]));
        for t in &types {
            for c in 0..env.n_concepts() as u32 {
                policy.set_competence(t, c, rng.gen_range(0.0..1.0));
            }
        }
        let retrieval = RetrievalConfig::default();
        let mut key = vec![0.0; env.world.embedding_dim];
        key[0] = 1.0;
        let inert = Skill::general("inert", key, SkillTruth::default());
        let (mut worst_term, mut worst_prob, mut worst_logit) = (0.0f64, 0.0f64, 0.0f64);
        for trial in 0..cfg.trials {
            let mut r = seed::rng(seed::derive(cfg.seed, &[seed::key("move"), trial as u64]));
            let task = &world.tasks[r.gen_range(0..world.tasks.len())];
            let routed = route(&world.bank.active_view(&task.task_type), task, &retrieval);
            let before: Vec<&Skill> = support_of(&world.bank, &routed);
            let t0 = success_terms(task, &policy, &before, &env);
            let (t1, inert_move) = if before.is_empty() || r.gen_bool(0.5) {
                let mut after = before.clone();
                after.push(&inert);
                (success_terms(task, &policy, &after, &env), true)
            } else {
                let mut after = before.clone();
                after.remove(r.gen_range(0..after.len()));
                (success_terms(task, &policy, &after, &env), false)
            };
            let d_term = (t1.clutter - t0.clutter).abs();
            worst_term = worst_term.max((d_term - clutter).abs());
            let p0 = t0.prob();
            let attributable = (p0 - crate::simenv::sigmoid(t0.logit() - (t1.clutter - t0.clutter))).abs();
            worst_prob = worst_prob.max(attributable);
            if inert_move {
                worst_logit = worst_logit.max(((t0.logit() - t1.logit()) - clutter).abs());
            }
        }
        rows.push(CheckRow {
            lemma: Lemma::SingleMoveCost,
            case: format!("clutter={clutter} term"),
            trials: cfg.trials,
            measured: worst_term,
            bound: 1e-12,
            se: 0.0,
            pass: worst_term <= 1e-12,
        });
        rows.push(CheckRow {
            lemma: Lemma::SingleMoveCost,
            case: format!("clutter={clutter} prob"),
            trials: cfg.trials,
            measured: worst_prob,
            bound: clutter,
            se: 0.0,
            pass: worst_prob <= clutter,
        });
        rows.push(CheckRow {
            lemma: Lemma::SingleMoveCost,
            case: format!("clutter={clutter} inert add"),
            trials: cfg.trials,
            measured: worst_logit,
            bound: 1e-12,
            se: 0.0,
            pass: worst_logit <= 1e-12,
        });
    }
    Ok(LemmaReport { lemma: Lemma::SingleMoveCost, rows, extra: vec![] })
}
