//! Retain / retire / expand decisions and how each regime filters them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skill_lifecycle::audit::MecRecord;
use skill_lifecycle::lifecycle::{decide, eliminate_target, regime_decisions, LifecycleConfig, Regime};

fn record(id: &str, smoothed: f64, exposure: u64, streak: u32, failures: u64) -> MecRecord {
    MecRecord { mec_smoothed: smoothed, exposure, streak, failures, audits_seen: 4, ..MecRecord::new(id) }
}

fn main() {
    let cfg = LifecycleConfig::default();
    let cases = [
        (record("contributor", 0.08, 120, 0, 5), Some(0.9)),
        (record("absorbed", -0.002, 200, 3, 4), Some(0.95)),
        (record("young", -0.01, 12, 4, 0), Some(0.9)),
        (record("struggling", 0.01, 90, 1, 31), Some(0.25)),
        (record("struggling-but-useful", 0.05, 90, 0, 31), Some(0.25)),
        (record("borderline", 0.02, 90, 1, 3), Some(0.7)),
    ];
    println!("{:<22} {:>9} {:>5} {:>6} {:>5} {:>5}  decision", "skill", "smoothed", "exp", "streak", "fail", "perf");
    let mut rule = Vec::new();
    for (r, perf) in &cases {
        let d = decide(r, *perf, &cfg);
        println!(
            "{:<22} {:>9.4} {:>5} {:>6} {:>5} {:>5.2}  {d:?}",
            r.skill_id,
            r.mec_smoothed,
            r.exposure,
            r.streak,
            r.failures,
            perf.unwrap_or(f64::NAN)
        );
        rule.push((r.skill_id.clone(), d));
    }

    println!();
    for regime in Regime::ALL {
        let cfg = LifecycleConfig { regime, ..cfg.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mapped: Vec<String> = regime_decisions(&rule, &cfg, &mut rng)
            .iter()
            .map(|d| format!("{:?}{}", d.decision, if d.expand { "+x" } else { "" }))
            .collect();
        println!("{:<16} {}", regime.name(), mapped.join(" "));
    }

    let sched: Vec<usize> = (0..=12).map(|c| eliminate_target(38, c, 12, cfg.eliminate_by_fraction)).collect();
    println!("\nwithdrawal schedule for 38 skills over 12 cycles: {sched:?}");
}
