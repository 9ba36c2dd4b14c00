//! Event-sourced bank: persist a run, then rebuild the final bank from the
//! initial bank and the lifecycle log alone.

use std::fs::File;
use std::io::BufReader;

use skill_lifecycle::skill::{EventKind, SkillBank};
use skill_lifecycle::trainer::{read_run_log, replay_log, run_to_dir, RunConfig};
use skill_lifecycle::{Regime, Scenario};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("skill-lifecycle-replay");
    let mut cfg = RunConfig::preset(Scenario::Reference, Regime::Slim, 4);
    cfg.total_steps = 120;
    cfg.out_dir = Some(dir.clone());
    let summary = run_to_dir(&cfg)?;

    let initial = SkillBank::read_jsonl(BufReader::new(File::open(dir.join("bank_initial.jsonl"))?))?;
    let saved = SkillBank::read_jsonl(BufReader::new(File::open(dir.join("bank_final.jsonl"))?))?;
    let log = read_run_log(&dir.join("lifecycle.jsonl"))?;
    let rebuilt = replay_log(&initial, &log)?;

    let count = |k: EventKind| summary.events().filter(|e| e.kind == k).count();
    println!(
        "{} log records: {} retire, {} expand, {} retain, {} hold, {} skip",
        log.len(),
        count(EventKind::Retire),
        count(EventKind::Expand),
        count(EventKind::Retain),
        count(EventKind::Hold),
        count(EventKind::Skip)
    );
    println!("active {} of {} skills, {} retired", rebuilt.active_count(), rebuilt.len(), rebuilt.retired().len());
    println!("replayed bank equals saved bank: {}", rebuilt == saved);
    println!("replayed bank equals in-memory bank: {}", rebuilt == summary.final_bank);
    Ok(())
}
