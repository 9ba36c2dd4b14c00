//! Training loop: policy steps interleaved with lifecycle audits.
//!
//! Every step samples a training batch, retrieves context, rolls out a group
//! per task and updates the policy. Every `audit_interval` steps a validation
//! pass under the current routing feeds exposure and failure statistics, a
//! bounded set of skills is audited by leave-one-skill-out, and the lifecycle
//! rules retire and expand.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{
    accumulate_validation, mec_loso, next_general, select_audit_candidates, task_seed, AuditConfig, Evaluator,
    LosoEstimate, MecRecord, ValidationOutcome,
};
use crate::error::{Error, Result};
use crate::lifecycle::{
    apply_decisions, audit_event, decide, eliminate_down_to, eliminate_target, fixed_size_adjust, regime_decisions,
    CycleOutcome, FailureBuckets, LifecycleConfig, Regime, SynthCreator,
};
use crate::policy::{internalization_probe, policy_update, LearnConfig, PolicyState, RolloutGroup};
use crate::retrieval::{route, RetrievalConfig, RoutedSet};
use crate::seed::{self, stream};
use crate::simenv::{generate_world, rollout, EnvConfig, Scenario, SimEvaluator, SimTask, Split, World};
use crate::skill::{EventKind, LifecycleEvent, SkillBank, Tier};

pub const METRICS_HEADER: [&str; 10] = [
    "step",
    "with_skill_success",
    "no_skill_success",
    "active_count",
    "retired_count",
    "expanded_count",
    "audit_calls_this_cycle",
    "train_success",
    "policy_mass",
    "schema",
];
pub const METRICS_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub regime: Regime,
    pub seed: u64,
    pub total_steps: u32,
    pub train_batch: usize,
    /// Rollout replicates per task in metric evaluations.
    pub eval_replicates: usize,
    /// Internalized-fraction threshold for the diagnostic probe.
    pub probe_threshold: f64,
    pub audit: AuditConfig,
    pub lifecycle: LifecycleConfig,
    pub learn: LearnConfig,
    pub retrieval: RetrievalConfig,
    pub env: EnvConfig,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scenario = Scenario::Reference;
        Self {
            scenario,
            regime: Regime::Slim,
            seed: 0,
            total_steps: 120,
            train_batch: 16,
            eval_replicates: 4,
            probe_threshold: 0.9,
            audit: AuditConfig::default(),
            lifecycle: LifecycleConfig::default(),
            learn: LearnConfig::default(),
            retrieval: RetrievalConfig::default(),
            env: scenario.env(),
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Tuned settings for a named scenario. Audit cycles are denser than the
    /// bare defaults so that a budget of `audit_budget` skills per cycle
    /// reaches every skill several times within the run.
    pub fn preset(scenario: Scenario, regime: Regime, seed: u64) -> Self {
        let env = scenario.env();
        let mut cfg = Self {
            scenario,
            regime,
            seed,
            total_steps: 300,
            retrieval: RetrievalConfig { embedding_dim: env.world.embedding_dim, ..Default::default() },
            env,
            ..Default::default()
        };
        cfg.audit.audit_interval = 5;
        cfg.audit.validation_batch = cfg.env.val_size;
        cfg.lifecycle.regime = regime;
        cfg.lifecycle.max_moves_per_cycle = cfg.audit.audit_budget + cfg.lifecycle.expand_budget;
        cfg.learn.learn_rate = 0.02;
        cfg.learn.capacity_cap = if scenario == Scenario::AmpleCapacity { 1e9 } else { 20.0 };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps < self.audit.audit_interval {
            return Err(Error::InvalidConfig("total_steps must be >= audit_interval".into()));
        }
        if self.train_batch < 1 || self.eval_replicates < 1 {
            return Err(Error::InvalidConfig("train_batch and eval_replicates must be >= 1".into()));
        }
        if self.lifecycle.regime != self.regime {
            return Err(Error::InvalidConfig("lifecycle.regime disagrees with regime".into()));
        }
        if self.retrieval.embedding_dim != self.env.world.embedding_dim {
            return Err(Error::InvalidConfig("retrieval and world embedding dims differ".into()));
        }
        self.audit.validate()?;
        self.lifecycle.validate()?;
        self.learn.validate()?;
        self.retrieval.validate()?;
        self.env.validate()
    }

    pub fn total_cycles(&self) -> u32 {
        self.total_steps / self.audit.audit_interval
    }

    /// Reads a flat TOML file of overrides on top of the scenario preset.
    pub fn from_toml_file(path: &Path, base: Option<RunConfig>) -> Result<Self> {
        let patch: ConfigPatch = toml::from_str(&fs::read_to_string(path)?)?;
        let mut cfg = base.unwrap_or_else(|| {
            RunConfig::preset(patch.scenario.unwrap_or(Scenario::Reference), patch.regime.unwrap_or(Regime::Slim), 0)
        });
        patch.apply(&mut cfg);
        Ok(cfg)
    }
}

/// Flat override set; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub scenario: Option<Scenario>,
    pub regime: Option<Regime>,
    pub seed: Option<u64>,
    pub total_steps: Option<u32>,
    pub train_batch: Option<usize>,
    pub eval_replicates: Option<usize>,
    pub probe_threshold: Option<f64>,
    pub audit_interval: Option<u32>,
    pub audit_budget: Option<usize>,
    pub validation_batch: Option<usize>,
    pub ema_alpha: Option<f64>,
    pub tau_keep: Option<f64>,
    pub tau_retire: Option<f64>,
    pub tau_expand: Option<f64>,
    pub patience: Option<u32>,
    pub min_exposure: Option<u64>,
    pub n_expand: Option<u64>,
    pub expand_budget: Option<usize>,
    pub max_moves_per_cycle: Option<usize>,
    pub dedup_threshold: Option<f64>,
    pub expand_skill_weight: Option<f64>,
    pub top_k: Option<usize>,
    pub emb_threshold: Option<f64>,
    pub group_size: Option<usize>,
    pub learn_rate: Option<f64>,
    pub capacity_cap: Option<f64>,
    pub skill_transfer_coeff: Option<f64>,
    pub forget_rate: Option<f64>,
    pub coverage_gain: Option<f64>,
    pub clutter_coeff: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigPatch {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        if let Some(s) = self.scenario {
            if s != cfg.scenario {
                let fresh = RunConfig::preset(s, cfg.regime, cfg.seed);
                cfg.env = fresh.env;
                cfg.learn.capacity_cap = fresh.learn.capacity_cap;
                cfg.scenario = s;
            }
        }
        if let Some(r) = self.regime {
            cfg.regime = r;
            cfg.lifecycle.regime = r;
        }
        set! {
            seed => cfg.seed,
            total_steps => cfg.total_steps,
            train_batch => cfg.train_batch,
            eval_replicates => cfg.eval_replicates,
            probe_threshold => cfg.probe_threshold,
            audit_interval => cfg.audit.audit_interval,
            audit_budget => cfg.audit.audit_budget,
            validation_batch => cfg.audit.validation_batch,
            ema_alpha => cfg.audit.ema_alpha,
            tau_keep => cfg.lifecycle.tau_keep,
            tau_retire => cfg.lifecycle.tau_retire,
            tau_expand => cfg.lifecycle.tau_expand,
            patience => cfg.lifecycle.patience,
            min_exposure => cfg.lifecycle.min_exposure,
            n_expand => cfg.lifecycle.n_expand,
            expand_budget => cfg.lifecycle.expand_budget,
            max_moves_per_cycle => cfg.lifecycle.max_moves_per_cycle,
            dedup_threshold => cfg.lifecycle.dedup_threshold,
            expand_skill_weight => cfg.lifecycle.expand_skill_weight,
            top_k => cfg.retrieval.top_k,
            emb_threshold => cfg.retrieval.emb_threshold,
            group_size => cfg.learn.group_size,
            learn_rate => cfg.learn.learn_rate,
            capacity_cap => cfg.learn.capacity_cap,
            skill_transfer_coeff => cfg.learn.skill_transfer_coeff,
            forget_rate => cfg.learn.forget_rate,
            coverage_gain => cfg.env.coverage_gain,
            clutter_coeff => cfg.env.clutter_coeff,
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = Some(d.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u32,
    pub with_skill_success: f64,
    pub no_skill_success: f64,
    pub active_count: usize,
    pub retired_count: usize,
    pub expanded_count: usize,
    pub audit_calls_this_cycle: usize,
    pub train_success: f64,
    pub policy_mass: f64,
    pub schema: u32,
}

/// One line of `lifecycle.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    RunHeader { scenario: Scenario, regime: Regime, seed: u64, total_steps: u32, audit_interval: u32 },
    AuditCycle { step: u32, audited: Vec<String>, loso_calls: usize, active_before: usize, active_after: usize },
    Event(LifecycleEvent),
    FinalEval { split: Split, with_skill_success: f64, no_skill_success: f64, tasks: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleStats {
    pub step: u32,
    pub audited: Vec<String>,
    pub loso_calls: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: RunConfig,
    pub initial_bank: SkillBank,
    pub final_bank: SkillBank,
    pub policy: PolicyState,
    pub world: World,
    pub metrics: Vec<MetricsRow>,
    pub log: Vec<LogRecord>,
    pub records: BTreeMap<String, MecRecord>,
    pub cycles: Vec<CycleStats>,
    pub final_with_skill: f64,
    pub final_no_skill: f64,
    pub wallclock_secs: Vec<(u32, f64)>,
}

impl RunSummary {
    pub fn active_trajectory(&self) -> Vec<usize> {
        self.metrics.iter().map(|m| m.active_count).collect()
    }

    pub fn events(&self) -> impl Iterator<Item = &LifecycleEvent> {
        self.log.iter().filter_map(|r| match r {
            LogRecord::Event(e) => Some(e),
            _ => None,
        })
    }

    /// Retired skills the policy has absorbed, per the diagnostic probe.
    pub fn internalized_retired(&self) -> Vec<String> {
        self.final_bank
            .retired()
            .keys()
            .filter(|id| {
                self.final_bank
                    .get(id)
                    .is_some_and(|s| internalization_probe(&self.policy, s, self.config.probe_threshold))
            })
            .cloned()
            .collect()
    }

    /// Active skills whose latest smoothed contribution clears `tau_keep`.
    pub fn retained_contributors(&self) -> Vec<String> {
        self.final_bank
            .active_ids()
            .iter()
            .filter(|id| {
                self.records
                    .get(*id)
                    .is_some_and(|r| r.audits_seen > 0 && r.mec_smoothed >= self.config.lifecycle.tau_keep)
            })
            .cloned()
            .collect()
    }

    pub fn max_loso_calls(&self) -> usize {
        self.cycles.iter().map(|c| c.loso_calls).max().unwrap_or(0)
    }

    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.metrics {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn lifecycle_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes every run artifact into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), self.metrics_csv()?)?;
        fs::write(dir.join("lifecycle.jsonl"), self.lifecycle_jsonl()?)?;
        self.final_bank.write_jsonl(BufWriter::new(File::create(dir.join("bank_final.jsonl"))?))?;
        self.initial_bank.write_jsonl(BufWriter::new(File::create(dir.join("bank_initial.jsonl"))?))?;
        self.policy.write_jsonl(BufWriter::new(File::create(dir.join("policy_final.jsonl"))?))?;
        self.world.write_tasks_jsonl(BufWriter::new(File::create(dir.join("tasks.jsonl"))?))?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        let mut t = String::from("step,wallclock_secs\n");
        for (s, secs) in &self.wallclock_secs {
            t.push_str(&format!("{s},{secs:.6}\n"));
        }
        fs::write(dir.join("timing.csv"), t)?;
        Ok(())
    }
}

/// Parses a lifecycle log back into records.
pub fn read_lifecycle_jsonl<R: BufRead>(r: R) -> Result<Vec<LogRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Number of pre-final-evaluation log lines mentioning any of `test_ids`.
pub fn leaked_test_ids(jsonl: &str, test_ids: &[&str]) -> usize {
    jsonl
        .lines()
        .take_while(|l| !l.contains("\"record\":\"final_eval\""))
        .filter(|l| test_ids.iter().any(|id| l.contains(id)))
        .count()
}

/// Success rate over `tasks` with or without retrieval. Lifecycle state is
/// read-only here.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    policy: &PolicyState,
    bank: &SkillBank,
    tasks: &[&SimTask],
    with_skills: bool,
    seed: u64,
    replicates: usize,
    env: &EnvConfig,
    retrieval: &RetrievalConfig,
) -> f64 {
    if tasks.is_empty() || replicates == 0 {
        return 0.0;
    }
    let hits: usize = tasks
        .par_iter()
        .map(|t| {
            let routed = if with_skills {
                route(&bank.active_view(&t.task_type), t, retrieval)
            } else {
                RoutedSet::empty(&t.id)
            };
            (0..replicates)
                .filter(|&rep| {
                    let s = seed::derive(seed, &[stream::EVALUATION, seed::key(&t.id), rep as u64]);
                    rollout(t, policy, bank, &routed, env, s).success
                })
                .count()
        })
        .sum();
    hits as f64 / (tasks.len() * replicates) as f64
}

struct Run<'w> {
    cfg: RunConfig,
    world: &'w World,
    bank: SkillBank,
    policy: PolicyState,
    records: BTreeMap<String, MecRecord>,
    buckets: FailureBuckets,
    last_routed: BTreeMap<String, u32>,
    last_general: Option<String>,
    log: Vec<LogRecord>,
    cycles: Vec<CycleStats>,
    initial_active: usize,
}

impl Run<'_> {
    fn split(&self, split: Split) -> Vec<&SimTask> {
        self.world.split(split).collect()
    }

    fn train_step(&mut self, step: u32, train: &[&SimTask]) -> Result<f64> {
        let mut rng = seed::rng(seed::derive(self.cfg.seed, &[stream::TRAIN_SAMPLE, step as u64]));
        let batch: Vec<&SimTask> =
            train.choose_multiple(&mut rng, self.cfg.train_batch.min(train.len())).copied().collect();
        let g = self.cfg.learn.group_size;
        let (bank, policy, cfg) = (&self.bank, &self.policy, &self.cfg);
        let groups: Vec<RolloutGroup<'_>> = batch
            .par_iter()
            .map(|t| {
                let routed = route(&bank.active_view(&t.task_type), t, &cfg.retrieval);
                let results = (0..g)
                    .map(|k| {
                        let s =
                            seed::derive(cfg.seed, &[stream::TRAIN_ROLLOUT, step as u64, seed::key(&t.id), k as u64]);
                        rollout(t, policy, bank, &routed, &cfg.env, s)
                    })
                    .collect();
                RolloutGroup { task: t, results }
            })
            .collect();
        let mut hits = 0usize;
        for grp in &groups {
            for id in grp.results[0].routed.ids() {
                self.last_routed.insert(id.to_string(), step);
            }
            hits += grp.results.iter().filter(|r| r.success).count();
        }
        policy_update(&mut self.policy, &groups, &self.bank, &self.cfg.learn)?;
        Ok(hits as f64 / (groups.len() * g).max(1) as f64)
    }

    fn audit_cycle(&mut self, step: u32, cycle: u32) -> Result<usize> {
        let active_before = self.bank.active_count();
        let world: &World = self.world;
        let val: Vec<&SimTask> = world.split(Split::Validation).take(self.cfg.audit.validation_batch).collect();
        let val_seed = seed::derive(self.cfg.seed, &[stream::VALIDATION, cycle as u64]);
        let evaluator = SimEvaluator { env: &self.cfg.env, policy: &self.policy, retrieval: &self.cfg.retrieval };
        let bank = &self.bank;
        let outcomes: Vec<ValidationOutcome> = val
            .par_iter()
            .map(|t| evaluator.evaluate(bank, t, None, task_seed(val_seed, &t.id)))
            .collect();
        accumulate_validation(&mut self.records, &outcomes)?;
        self.buckets.record(&outcomes)?;
        for o in &outcomes {
            for id in o.routed.ids() {
                self.last_routed.insert(id.to_string(), step);
            }
        }

        // candidates: top-M task-specific by usage since their last audit, plus one general
        let usage: BTreeMap<String, u64> = self
            .records
            .iter()
            .filter(|(id, _)| self.bank.is_active(id) && self.bank.get(id).is_some_and(|s| s.tier == Tier::TaskSpecific))
            .map(|(id, r)| (id.clone(), r.recent_usage))
            .collect();
        let mut audited = select_audit_candidates(&usage, &self.cfg.audit);
        if let Some(g) = next_general(&self.bank, self.last_general.as_deref()) {
            self.last_general = Some(g.clone());
            audited.push(g);
        }

        let estimates: Vec<(String, Result<LosoEstimate>)> = audited
            .par_iter()
            .map(|id| (id.clone(), mec_loso(&evaluator, bank, id, &val, val_seed, self.cfg.audit.metric)))
            .collect();
        let loso_calls = estimates.len();

        let mut rule = Vec::new();
        let mut skipped = Vec::new();
        let mut notes: BTreeMap<String, String> = BTreeMap::new();
        for (id, est) in estimates {
            let rec = self.records.entry(id.clone()).or_insert_with(|| MecRecord::new(id.clone()));
            rec.recent_usage = 0;
            match est? {
                LosoEstimate::NoExposure => skipped.push(audit_event(step, rec, EventKind::Skip)),
                LosoEstimate::Measured { delta, perf_with, routed_outcomes, .. } => {
                    notes.insert(id.clone(), format!("routed {} perf_with {perf_with:.4}", routed_outcomes.len()));
                    crate::audit::ema_update(rec, delta, &self.cfg.audit, self.cfg.lifecycle.tau_retire);
                    rule.push((id, decide(rec, Some(perf_with), &self.cfg.lifecycle)));
                }
            }
        }
        for mut ev in skipped {
            ev.reason = Some("no routed validation tasks".into());
            self.log.push(LogRecord::Event(ev));
        }

        let mut rng = seed::rng(seed::derive(self.cfg.seed, &[stream::LIFECYCLE, cycle as u64]));
        let decisions = regime_decisions(&rule, &self.cfg.lifecycle, &mut rng);
        let index: HashMap<&str, &SimTask> = world.task_index();
        let mut creator = SynthCreator {
            tasks: &index,
            policy: &self.policy,
            retrieval: &self.cfg.retrieval,
            skill_weight: self.cfg.lifecycle.expand_skill_weight,
            dedup_threshold: self.cfg.lifecycle.dedup_threshold,
        };
        let out = apply_decisions(
            &mut self.bank,
            &decisions,
            &mut self.buckets,
            &mut self.records,
            &mut creator,
            &self.cfg.lifecycle,
            step,
        )?;
        let mut events = out.events;
        for ev in events.iter_mut().filter(|e| e.skill.is_none() && e.reason.is_none()) {
            ev.reason = notes.get(&ev.skill_id).cloned();
        }
        match self.cfg.regime {
            Regime::EliminateOnly => {
                let target = eliminate_target(
                    self.initial_active,
                    cycle,
                    self.cfg.total_cycles(),
                    self.cfg.lifecycle.eliminate_by_fraction,
                );
                events.extend(eliminate_down_to(&mut self.bank, target, &self.records, step)?);
            }
            Regime::FixedSize => {
                let CycleOutcome { events: adj, .. } = fixed_size_adjust(
                    &mut self.bank,
                    self.initial_active,
                    &self.last_routed,
                    &mut self.buckets,
                    &mut self.records,
                    &mut creator,
                    step,
                )?;
                events.extend(adj);
            }
            _ => {}
        }
        self.log.push(LogRecord::AuditCycle {
            step,
            audited: audited.clone(),
            loso_calls,
            active_before,
            active_after: self.bank.active_count(),
        });
        self.log.extend(events.into_iter().map(LogRecord::Event));
        self.cycles.push(CycleStats { step, audited, loso_calls });
        Ok(loso_calls)
    }

    fn metrics_row(&self, step: u32, audit_calls: usize, train_success: f64) -> MetricsRow {
        let val = self.split(Split::Validation);
        let s = seed::derive(self.cfg.seed, &[stream::EVALUATION, step as u64]);
        let eval = |with| {
            evaluate(&self.policy, &self.bank, &val, with, s, self.cfg.eval_replicates, &self.cfg.env, &self.cfg.retrieval)
        };
        MetricsRow {
            step,
            with_skill_success: eval(true),
            no_skill_success: eval(false),
            active_count: self.bank.active_count(),
            retired_count: self.bank.retired().len(),
            expanded_count: self.bank.expanded_count(),
            audit_calls_this_cycle: audit_calls,
            train_success,
            policy_mass: self.policy.total_mass(),
            schema: METRICS_SCHEMA,
        }
    }
}

/// Runs one configuration end to end. Deterministic in `cfg`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let world = generate_world(&cfg.env, &mut seed::rng(seed::derive(cfg.seed, &[stream::WORLD])))?;
    let initial_bank = world.bank.clone();
    let policy = PolicyState::new(&cfg.env.task_types(), cfg.env.n_concepts(), &cfg.learn);
    let mut r = Run {
        cfg: cfg.clone(),
        world: &world,
        bank: initial_bank.clone(),
        policy,
        records: BTreeMap::new(),
        buckets: FailureBuckets::new(),
        last_routed: BTreeMap::new(),
        last_general: None,
        log: vec![LogRecord::RunHeader {
            scenario: cfg.scenario,
            regime: cfg.regime,
            seed: cfg.seed,
            total_steps: cfg.total_steps,
            audit_interval: cfg.audit.audit_interval,
        }],
        cycles: Vec::new(),
        initial_active: initial_bank.active_count(),
    };
    let train: Vec<&SimTask> = world.split(Split::Train).collect();
    let clock = Instant::now();
    let mut metrics = vec![r.metrics_row(0, 0, 0.0)];
    let mut wallclock = vec![(0, 0.0)];
    let mut train_hits = 0.0;
    let mut train_steps = 0u32;
    for step in 1..=cfg.total_steps {
        train_hits += r.train_step(step, &train)?;
        train_steps += 1;
        if step % cfg.audit.audit_interval == 0 {
            let cycle = step / cfg.audit.audit_interval;
            let calls = r.audit_cycle(step, cycle)?;
            metrics.push(r.metrics_row(step, calls, train_hits / train_steps as f64));
            wallclock.push((step, clock.elapsed().as_secs_f64()));
            train_hits = 0.0;
            train_steps = 0;
        }
    }

    let test: Vec<&SimTask> = world.split(Split::Test).collect();
    let s = seed::derive(cfg.seed, &[stream::EVALUATION, u64::MAX]);
    let ev = |with| evaluate(&r.policy, &r.bank, &test, with, s, cfg.eval_replicates, &cfg.env, &cfg.retrieval);
    let (final_with, final_no) = (ev(true), ev(false));
    r.log.push(LogRecord::FinalEval {
        split: Split::Test,
        with_skill_success: final_with,
        no_skill_success: final_no,
        tasks: test.len(),
    });
    drop(train);
    drop(test);
    let Run { bank, policy, records, log, cycles, .. } = r;
    Ok(RunSummary {
        config: cfg.clone(),
        initial_bank,
        final_bank: bank,
        policy,
        world,
        metrics,
        log,
        records,
        cycles,
        final_with_skill: final_with,
        final_no_skill: final_no,
        wallclock_secs: wallclock,
    })
}

/// Runs and, when `cfg.out_dir` is set, writes all artifacts.
pub fn run_to_dir(cfg: &RunConfig) -> Result<RunSummary> {
    let summary = run(cfg)?;
    if let Some(dir) = &cfg.out_dir {
        summary.write_outputs(dir)?;
    }
    Ok(summary)
}

/// Rebuilds the final bank from the initial bank and a lifecycle log.
pub fn replay_log(initial: &SkillBank, log: &[LogRecord]) -> Result<SkillBank> {
    let mut bank = initial.clone();
    bank.replay(log.iter().filter_map(|r| match r {
        LogRecord::Event(e) => Some(e),
        _ => None,
    }))?;
    Ok(bank)
}

pub fn read_run_log(path: &Path) -> Result<Vec<LogRecord>> {
    read_lifecycle_jsonl(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeScore {
    pub regime: Regime,
    pub mean: f64,
    pub std_dev: f64,
    pub seeds: usize,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub scenario: Scenario,
    /// Best first.
    pub ranking: Vec<RegimeScore>,
    pub insufficient_replication: bool,
    /// Adjacent ranking pairs with equal means.
    pub ties: Vec<(Regime, Regime)>,
}

impl AblationReport {
    pub fn score(&self, regime: Regime) -> Option<&RegimeScore> {
        self.ranking.iter().find(|s| s.regime == regime)
    }

    pub fn ordering(&self) -> String {
        let mut s = String::new();
        for (i, r) in self.ranking.iter().enumerate() {
            if i > 0 {
                let tied = self.ties.contains(&(self.ranking[i - 1].regime, r.regime));
                s.push_str(if tied { " = " } else { " > " });
            }
            s.push_str(r.regime.name());
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("regime,mean_final_success,std_dev,seeds\n");
        for r in &self.ranking {
            out.push_str(&format!("{},{:.6},{:.6},{}\n", r.regime, r.mean, r.std_dev, r.seeds));
        }
        out
    }
}

/// Regimes compared in the ablation table.
pub const ABLATION_REGIMES: [Regime; 5] =
    [Regime::Slim, Regime::NoExpansion, Regime::AccumulateOnly, Regime::RandomAudit, Regime::FixedSize];

/// Final with-skill test success of each regime under matched seeds.
/// `configure` receives each preset before it runs. Repeated regimes are
/// scored once.
pub fn compare_ablations(
    scenario: Scenario,
    regimes: &[Regime],
    seeds: &[u64],
    configure: &(dyn Fn(&mut RunConfig) + Sync),
) -> Result<AblationReport> {
    let mut unique: Vec<Regime> = Vec::with_capacity(regimes.len());
    for r in regimes {
        if !unique.contains(r) {
            unique.push(*r);
        }
    }
    let regimes = &unique[..];
    let jobs: Vec<(Regime, u64)> = regimes.iter().flat_map(|&r| seeds.iter().map(move |&s| (r, s))).collect();
    let finals: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(regime, seed)| {
            let mut cfg = RunConfig::preset(scenario, regime, seed);
            configure(&mut cfg);
            cfg.regime = regime;
            cfg.lifecycle.regime = regime;
            cfg.seed = seed;
            run(&cfg).map(|s| s.final_with_skill)
        })
        .collect();
    let mut per: BTreeMap<Regime, Vec<f64>> = BTreeMap::new();
    for ((regime, _), f) in jobs.iter().zip(finals) {
        per.entry(*regime).or_default().push(f?);
    }
    let mut ranking: Vec<RegimeScore> = regimes
        .iter()
        .map(|&regime| {
            let v = per.remove(&regime).unwrap_or_default();
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            RegimeScore { regime, mean, std_dev: var.sqrt(), seeds: v.len(), per_seed: v }
        })
        .collect();
    ranking.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    let ties = ranking
        .windows(2)
        .filter(|w| (w[0].mean - w[1].mean).abs() <= 1e-12)
        .map(|w| (w[0].regime, w[1].regime))
        .collect();
    Ok(AblationReport { scenario, ranking, insufficient_replication: seeds.len() < 2, ties })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(regime: Regime, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::preset(Scenario::Reference, regime, seed);
        cfg.total_steps = 40;
        cfg
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!((c.total_steps, c.audit.audit_interval, c.train_batch, c.audit.validation_batch), (120, 10, 16, 32));
        assert!(c.validate().is_ok());
        let bad = RunConfig { total_steps: 5, ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn run_is_deterministic() {
        let a = run(&quick(Regime::Slim, 7)).unwrap();
        let b = run(&quick(Regime::Slim, 7)).unwrap();
        assert_eq!(a.metrics_csv().unwrap(), b.metrics_csv().unwrap());
        assert_eq!(a.lifecycle_jsonl().unwrap(), b.lifecycle_jsonl().unwrap());
        assert_eq!(a.final_bank, b.final_bank);
    }

    #[test]
    fn evaluate_is_reproducible_and_matches_oracle_without_skills() {
        let cfg = RunConfig::preset(Scenario::Reference, Regime::Slim, 1);
        let world = generate_world(&cfg.env, &mut seed::rng(5)).unwrap();
        let policy = PolicyState::new(&cfg.env.task_types(), cfg.env.n_concepts(), &cfg.learn);
        let test: Vec<&SimTask> = world.split(Split::Test).collect();
        let reps = 50;
        let a = evaluate(&policy, &world.bank, &test, false, 9, reps, &cfg.env, &cfg.retrieval);
        let b = evaluate(&policy, &world.bank, &test, false, 9, reps, &cfg.env, &cfg.retrieval);
        assert_eq!(a, b);
        let oracle: f64 = test
            .iter()
            .map(|t| crate::simenv::success_prob(t, &policy, &[], &cfg.env))
            .sum::<f64>()
            / test.len() as f64;
        let n = (test.len() * reps) as f64;
        assert!((a - oracle).abs() < 4.0 * (0.25 / n).sqrt(), "{a} vs {oracle}");
    }

    #[test]
    fn config_patch_overrides_preset() {
        let patch: ConfigPatch = toml::from_str(
            "regime = \"accumulate-only\"\nseed = 42\ntotal_steps = 60\ntau_keep = 0.05\ncapacity_cap = 3.5\n",
        )
        .unwrap();
        let mut cfg = RunConfig::preset(Scenario::Reference, Regime::Slim, 0);
        patch.apply(&mut cfg);
        assert_eq!(cfg.regime, Regime::AccumulateOnly);
        assert_eq!(cfg.lifecycle.regime, Regime::AccumulateOnly);
        assert_eq!((cfg.seed, cfg.total_steps), (42, 60));
        assert_eq!(cfg.lifecycle.tau_keep, 0.05);
        assert_eq!(cfg.learn.capacity_cap, 3.5);
        assert!(toml::from_str::<ConfigPatch>("bogus_key = 1").is_err());
    }

    #[test]
    fn single_seed_flags_replication_and_identical_regimes_tie() {
        // with no expansion budget, slim and no-expansion make identical moves
        let shorten = |c: &mut RunConfig| {
            c.total_steps = 20;
            c.lifecycle.expand_budget = 0;
        };
        let regimes = [Regime::Slim, Regime::NoExpansion, Regime::Slim];
        let r = compare_ablations(Scenario::Reference, &regimes, &[3], &shorten).unwrap();
        assert!(r.insufficient_replication);
        assert_eq!(r.ranking.len(), 2);
        assert_eq!(r.ties.len(), 1);
        assert!(r.ordering().contains(" = "));
    }
}
