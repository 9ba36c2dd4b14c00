//! Regime comparison under matched seeds.
//!
//! Usage: `cargo run --release --example ablation -- [seeds] [steps]`

use skill_lifecycle::trainer::{compare_ablations, RunConfig, ABLATION_REGIMES};
use skill_lifecycle::Scenario;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: u64 = args.first().map_or(Ok(3), |s| s.parse())?;
    let steps: Option<u32> = args.get(1).map(|s| s.parse()).transpose()?;
    let seeds: Vec<u64> = (0..n).collect();
    let configure = move |c: &mut RunConfig| {
        if let Some(t) = steps {
            c.total_steps = t;
        }
    };
    let report = compare_ablations(Scenario::Reference, &ABLATION_REGIMES, &seeds, &configure)?;
    for r in &report.ranking {
        println!("{:<16} {:.4} +- {:.4}  ({} seeds)", r.regime.name(), r.mean, r.std_dev, r.seeds);
    }
    println!("ordering: {}", report.ordering());
    Ok(())
}
