//! One full training run on the reference scenario.
//!
//! Usage: `cargo run --release --example simulate_run -- [regime] [seed] [out_dir]`

use std::path::PathBuf;

use skill_lifecycle::trainer::{run_to_dir, RunConfig};
use skill_lifecycle::{Regime, Scenario};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let regime: Regime = args.first().map_or(Ok(Regime::Slim), |s| s.parse())?;
    let seed: u64 = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let mut cfg = RunConfig::preset(Scenario::Reference, regime, seed);
    cfg.out_dir = args.get(2).map(PathBuf::from);

    let s = run_to_dir(&cfg)?;
    println!("step  val_with  val_no  active  retired  expanded  loso");
    for m in &s.metrics {
        println!(
            "{:>4}  {:>8.3}  {:>6.3}  {:>6}  {:>7}  {:>8}  {:>4}",
            m.step, m.with_skill_success, m.no_skill_success, m.active_count, m.retired_count, m.expanded_count, m.audit_calls_this_cycle
        );
    }
    println!("\ntest success: {:.4} with skills, {:.4} without", s.final_with_skill, s.final_no_skill);
    println!("retired and internalized: {:?}", s.internalized_retired());
    println!("still contributing: {:?}", s.retained_contributors());
    if let Some(dir) = &cfg.out_dir {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}
