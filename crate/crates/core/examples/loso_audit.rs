//! Paired leave-one-skill-out audits against the analytic oracle.
//!
//! A planted world fixes the target skill's true contribution. Sampled
//! audits reuse per-task seeds between the with and without passes, so
//! their noise shrinks with the routed subset size. The smoothed estimate
//! and low-contribution streak then feed the lifecycle rules.

use skill_lifecycle::audit::{ema_update, AuditConfig, MecRecord};
use skill_lifecycle::lifecycle::{decide, LifecycleConfig};
use skill_lifecycle::theory::{calibrate, Planted, PlantedConfig, TARGET_ID};

fn main() -> skill_lifecycle::Result<()> {
    for n in [32, 128, 512] {
        let cfg = calibrate(&PlantedConfig::default(), 0.05, n, 1)?;
        let world = Planted::build(&cfg, n, 1)?;
        let truth = world.oracle_delta();
        let draws: Vec<f64> = (0..200).map(|s| world.loso(s).map(|e| e.delta().unwrap_or(0.0))).collect::<Result<_, _>>()?;
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        println!("n={n:<4} true {truth:.4}  mean estimate {mean:.4}  sd {sd:.4}");
    }

    // a skill the policy no longer needs: contribution is only the context cost
    let world = Planted::build(&PlantedConfig { weight: 0.5, competence: 0.6, ..Default::default() }, 64, 2)?;
    let audit = AuditConfig::default();
    let rules = LifecycleConfig::default();
    let mut rec = MecRecord::new(TARGET_ID);
    println!("\naudits of an internalized skill (true {:.4}):", world.oracle_delta());
    for cycle in 0..5u64 {
        let raw = world.loso(100 + cycle)?.delta().unwrap_or(0.0);
        rec.exposure += world.exposure();
        ema_update(&mut rec, raw, &audit, rules.tau_retire);
        println!(
            "  cycle {cycle}: raw {raw:+.4} smoothed {:+.4} streak {} -> {:?}",
            rec.mec_smoothed,
            rec.streak,
            decide(&rec, None, &rules)
        );
    }
    Ok(())
}
