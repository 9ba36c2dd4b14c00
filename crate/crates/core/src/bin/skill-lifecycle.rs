use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use skill_lifecycle::policy::PolicyState;
use skill_lifecycle::simenv::{SimTask, Split, World};
use skill_lifecycle::theory::{self, Lemma, LemmaCheckConfig};
use skill_lifecycle::trainer::{self, compare_ablations, ConfigPatch, RunConfig, ABLATION_REGIMES};
use skill_lifecycle::{seed, Regime, Scenario, SkillBank};

#[derive(Parser)]
#[command(version, about = "Skill-bank lifecycle runs, ablations and theory checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration and write its artifacts.
    Run(RunArgs),
    /// Score a saved bank and policy on a run's tasks.
    Evaluate(EvalArgs),
    /// Compare lifecycle regimes over matched seeds.
    Ablate(AblateArgs),
    /// Monte Carlo checks of the lifecycle guarantees.
    TheoryCheck(TheoryArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat TOML file of RunConfig overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    audit_interval: Option<u32>,
}

impl Common {
    /// Preset, then config file, then explicit flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut patch = match &self.config {
            Some(p) => toml::from_str::<ConfigPatch>(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => ConfigPatch::default(),
        };
        let scenario = self.scenario.or(patch.scenario).unwrap_or(Scenario::Reference);
        let regime = self.regime.or(patch.regime).unwrap_or(Regime::Slim);
        patch.scenario = None;
        patch.regime = None;
        let mut cfg = RunConfig::preset(scenario, regime, 0);
        patch.apply(&mut cfg);
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.steps {
            cfg.total_steps = t;
        }
        if let Some(d) = self.audit_interval {
            cfg.audit.audit_interval = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `run`.
    run_dir: PathBuf,
    /// Bank to score instead of `bank_final.jsonl`.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of matched seeds, starting at `--seed` (default 0).
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    /// One check name, or `all`.
    #[arg(long, default_value = "all")]
    check: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the per-check default trial count.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::TheoryCheck(a) => cmd_theory(a),
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if a.out.is_some() {
        cfg.out_dir = a.out;
    }
    let s = trainer::run_to_dir(&cfg)?;
    let traj = s.active_trajectory();
    println!(
        "{} / {} seed {}: test success {:.4} with skills, {:.4} without",
        cfg.scenario.name(),
        cfg.regime,
        cfg.seed,
        s.final_with_skill,
        s.final_no_skill
    );
    println!(
        "active skills {} -> peak {} -> {}; retired {}, expanded {}, max LOSO calls per cycle {}",
        traj.first().copied().unwrap_or(0),
        traj.iter().max().copied().unwrap_or(0),
        traj.last().copied().unwrap_or(0),
        s.final_bank.retired().len(),
        s.final_bank.expanded_count(),
        s.max_loso_calls()
    );
    if let Some(dir) = &cfg.out_dir {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn read_jsonl<T>(path: &Path, f: impl FnOnce(BufReader<File>) -> skill_lifecycle::Result<T>) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    f(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(a.run_dir.join("config.json"))?)?;
    let bank_path = a.bank.unwrap_or_else(|| a.run_dir.join("bank_final.jsonl"));
    let bank = read_jsonl(&bank_path, SkillBank::read_jsonl)?;
    let policy = read_jsonl(&a.run_dir.join("policy_final.jsonl"), PolicyState::read_jsonl)?;
    let tasks = read_jsonl(&a.run_dir.join("tasks.jsonl"), World::read_tasks_jsonl)?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "validation" => Split::Validation,
        "test" => Split::Test,
        other => bail!("unknown split `{other}`"),
    };
    let subset: Vec<&SimTask> = tasks.iter().filter(|t| t.split == split).collect();
    let reps = a.replicates.unwrap_or(cfg.eval_replicates);
    let s = seed::derive(a.seed.unwrap_or(cfg.seed), &[seed::stream::EVALUATION, u64::MAX]);
    let ev = |with| trainer::evaluate(&policy, &bank, &subset, with, s, reps, &cfg.env, &cfg.retrieval);
    println!("split {} tasks {} active skills {}", a.split, subset.len(), bank.active_count());
    println!("with_skill_success {:.4}", ev(true));
    println!("no_skill_success {:.4}", ev(false));
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let base = a.common.resolve()?;
    let seeds: Vec<u64> = (base.seed..base.seed + a.seeds).collect();
    let template = base.clone();
    let configure = move |c: &mut RunConfig| {
        let (regime, seed) = (c.regime, c.seed);
        *c = template.clone();
        c.regime = regime;
        c.lifecycle.regime = regime;
        c.seed = seed;
    };
    let report = compare_ablations(base.scenario, &ABLATION_REGIMES, &seeds, &configure)?;
    print!("{}", report.to_csv());
    println!("ordering: {}", report.ordering());
    if report.insufficient_replication {
        println!("warning: fewer than two seeds, no spread estimate");
    }
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("ablation.csv"), report.to_csv())?;
        fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_theory(a: TheoryArgs) -> Result<()> {
    let lemmas: Vec<Lemma> = if a.check == "all" { Lemma::ALL.to_vec() } else { vec![a.check.parse()?] };
    let mut reports = Vec::new();
    for l in lemmas {
        let mut cfg = LemmaCheckConfig { seed: a.seed, ..LemmaCheckConfig::new(l) };
        if let Some(t) = a.trials {
            cfg.trials = t;
        }
        let r = theory::run_check(&cfg)?;
        print!("{}", r.summary());
        reports.push(r);
    }
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("theory.csv"), theory::reports_csv(&reports)?)?;
        let text: String = reports.iter().map(|r| r.summary()).collect();
        fs::write(dir.join("theory_summary.txt"), text)?;
    }
    if reports.iter().any(|r| !r.pass()) {
        bail!("one or more checks failed");
    }
    Ok(())
}
