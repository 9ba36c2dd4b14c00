use std::fs;

use skill_lifecycle::policy::PolicyState;
use skill_lifecycle::simenv::{Split, World};
use skill_lifecycle::skill::{EventKind, Origin};
use skill_lifecycle::trainer::{
    evaluate, leaked_test_ids, read_run_log, replay_log, run, run_to_dir, LogRecord, RunConfig, METRICS_HEADER,
};
use skill_lifecycle::{Regime, Scenario, SimTask, SkillBank};

fn short(scenario: Scenario, regime: Regime, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::preset(scenario, regime, seed);
    cfg.total_steps = 80;
    cfg
}

#[test]
fn artifacts_round_trip_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short(Scenario::Reference, Regime::Slim, 5);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let s = run_to_dir(&cfg).unwrap();

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(metrics.lines().count(), 1 + 1 + cfg.total_cycles() as usize);

    let initial = SkillBank::read_jsonl(fs::read(dir.path().join("bank_initial.jsonl")).unwrap().as_slice()).unwrap();
    let saved = SkillBank::read_jsonl(fs::read(dir.path().join("bank_final.jsonl")).unwrap().as_slice()).unwrap();
    let log = read_run_log(&dir.path().join("lifecycle.jsonl")).unwrap();
    assert_eq!(saved, s.final_bank);
    assert_eq!(replay_log(&initial, &log).unwrap(), saved);
    assert!(matches!(log.first(), Some(LogRecord::RunHeader { .. })));
    assert!(matches!(log.last(), Some(LogRecord::FinalEval { split: Split::Test, .. })));

    // a fresh evaluation from the files reproduces the in-run test score
    let policy = PolicyState::read_jsonl(fs::read(dir.path().join("policy_final.jsonl")).unwrap().as_slice()).unwrap();
    let tasks = World::read_tasks_jsonl(fs::read(dir.path().join("tasks.jsonl")).unwrap().as_slice()).unwrap();
    let test: Vec<&SimTask> = tasks.iter().filter(|t| t.split == Split::Test).collect();
    let seed = skill_lifecycle::seed::derive(cfg.seed, &[skill_lifecycle::seed::stream::EVALUATION, u64::MAX]);
    let again = evaluate(&policy, &saved, &test, true, seed, cfg.eval_replicates, &cfg.env, &cfg.retrieval);
    assert_eq!(again, s.final_with_skill);
}

#[test]
fn corrupted_replay_is_rejected() {
    let s = run(&short(Scenario::Reference, Regime::Slim, 6)).unwrap();
    let mut log = s.log.clone();
    let idx = log
        .iter()
        .position(|r| matches!(r, LogRecord::Event(e) if e.kind == EventKind::Retire))
        .expect("a short run still retires something");
    log.insert(idx + 1, log[idx].clone());
    assert!(replay_log(&s.initial_bank, &log).is_err());
}

#[test]
fn regime_invariants_hold_along_the_run() {
    for regime in Regime::ALL {
        let s = run(&short(Scenario::Reference, regime, 2)).unwrap();
        let kinds: Vec<EventKind> = s.events().map(|e| e.kind).collect();
        let n0 = s.initial_bank.active_count();
        match regime {
            Regime::AccumulateOnly => assert!(!kinds.contains(&EventKind::Retire)),
            Regime::NoExpansion | Regime::EliminateOnly => {
                assert!(!kinds.contains(&EventKind::Expand), "{regime}");
                assert_eq!(s.final_bank.expanded_count(), 0);
            }
            Regime::FixedSize => assert!(s.active_trajectory().iter().all(|&n| n <= n0), "{:?}", s.active_trajectory()),
            Regime::Slim | Regime::RandomAudit => {}
        }
        assert!(s.max_loso_calls() <= s.config.audit.audit_budget + 1);
        let test_ids: Vec<&str> = s.world.split(Split::Test).map(|t| t.id.as_str()).collect();
        assert_eq!(leaked_test_ids(&s.lifecycle_jsonl().unwrap(), &test_ids), 0, "{regime}");
    }
}

#[test]
fn empty_bank_grows_only_through_expansion() {
    let mut cfg = short(Scenario::EmptyBank, Regime::Slim, 1);
    cfg.total_steps = 150;
    let s = run(&cfg).unwrap();
    assert_eq!(s.initial_bank.len(), 0);
    assert!(s.final_bank.skills().all(|sk| sk.origin == Origin::Expanded));
}

#[test]
fn noisy_bank_sheds_junk() {
    let s = run(&RunConfig::preset(Scenario::NoisyInit, Regime::Slim, 3)).unwrap();
    let retired = s.final_bank.retired().len();
    assert!(retired > 0);
    let junk_active = s
        .final_bank
        .active_skills()
        .filter(|sk| sk.truth.is_inert() || sk.truth.harm > 0.0)
        .count();
    let junk_initial = s.initial_bank.skills().filter(|sk| sk.truth.is_inert() || sk.truth.harm > 0.0).count();
    assert!(junk_active < junk_initial, "{junk_active} of {junk_initial} unhelpful skills still active");
}

#[test]
fn ample_capacity_lets_the_policy_absorb_more() {
    let tight = run(&RunConfig::preset(Scenario::Reference, Regime::Slim, 8)).unwrap();
    let ample = run(&RunConfig::preset(Scenario::AmpleCapacity, Regime::Slim, 8)).unwrap();
    let cap = tight.config.learn.capacity_cap;
    assert!(tight.policy.total_mass() <= cap + 1e-9);
    assert!(ample.policy.total_mass() > cap, "{} vs cap {cap}", ample.policy.total_mass());
}

#[test]
fn policy_improves_over_early_windows() {
    // validation success without skills isolates the policy; compare 20-step window means
    let s = run(&RunConfig::preset(Scenario::Reference, Regime::Slim, 4)).unwrap();
    let window = |lo: u32| {
        let v: Vec<f64> = s.metrics.iter().filter(|m| m.step >= lo && m.step < lo + 20).map(|m| m.no_skill_success).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let means: Vec<f64> = (0..4).map(|k| window(20 * k)).collect();
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}
