use proptest::prelude::*;

use skill_lifecycle::audit::{ema_update, AuditConfig, MecRecord};
use skill_lifecycle::lifecycle::{decide, regime_decisions, Decision, LifecycleConfig, Regime};
use skill_lifecycle::policy::{group_advantages, LearnConfig, PolicyState};
use skill_lifecycle::retrieval::{route, RetrievalConfig};
use skill_lifecycle::simenv::{normalize, success_prob, SimTask, Split};
use skill_lifecycle::skill::{Skill, SkillBank, SkillTruth, TaskType};

const DIM: usize = 6;

fn direction() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, DIM)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(normalize)
}

fn clean() -> TaskType {
    TaskType::new("clean")
}

fn bank_of(keys: &[Vec<f64>]) -> SkillBank {
    SkillBank::from_skills(
        keys.iter().enumerate().map(|(i, k)| Skill::task_specific(format!("s{i:02}"), clean(), k.clone(), SkillTruth::default())),
    )
    .unwrap()
}

fn task(embedding: Vec<f64>) -> SimTask {
    SimTask {
        id: "t".into(),
        task_type: clean(),
        embedding,
        required_concepts: [(0, 1.0), (1, 0.5)].into(),
        difficulty: 0.0,
        split: Split::Validation,
    }
}

fn record() -> impl Strategy<Value = (MecRecord, Option<f64>)> {
    (-0.1f64..0.1, 0u64..80, 0u32..6, 0u64..50, prop::option::of(0.0f64..1.0)).prop_map(|(m, u, l, n, p)| {
        (MecRecord { mec_smoothed: m, exposure: u, streak: l, failures: n, audits_seen: 1, ..MecRecord::new("s") }, p)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn raising_threshold_only_removes_routed_skills(
        keys in prop::collection::vec(direction(), 1..10),
        q in direction(),
        lo in -0.5f64..0.9,
        bump in 0.0f64..0.5,
    ) {
        let bank = bank_of(&keys);
        let t = task(q);
        // K large enough that truncation cannot reorder the comparison
        let wide = |tau| RetrievalConfig { top_k: keys.len(), emb_threshold: tau, embedding_dim: DIM };
        let low = route(&bank.active_view(&clean()), &t, &wide(lo));
        let high = route(&bank.active_view(&clean()), &t, &wide((lo + bump).min(1.0)));
        prop_assert!(high.task_ids.iter().all(|id| low.task_ids.contains(id)));
    }

    #[test]
    fn routing_respects_budget_floor_and_order(
        keys in prop::collection::vec(direction(), 0..12),
        q in direction(),
        k in 1usize..5,
        tau in -0.2f64..0.8,
    ) {
        let bank = bank_of(&keys);
        let cfg = RetrievalConfig { top_k: k, emb_threshold: tau, embedding_dim: DIM };
        let t = task(q);
        let r = route(&bank.active_view(&clean()), &t, &cfg);
        prop_assert!(r.task_ids.len() <= k);
        let sims: Vec<f64> = r.task_ids.iter().map(|id| r.similarities[id]).collect();
        prop_assert!(sims.iter().all(|&s| s >= tau));
        prop_assert!(sims.windows(2).all(|w| w[0] >= w[1]));
        let above = keys.iter().filter(|key| skill_lifecycle::retrieval::cosine(key, &t.embedding).unwrap() >= tau).count();
        prop_assert_eq!(r.task_ids.len(), above.min(k));
    }

    #[test]
    fn routing_ignores_insertion_order(keys in prop::collection::vec(direction(), 1..10), q in direction()) {
        let forward = bank_of(&keys);
        let skills: Vec<Skill> = forward.skills().cloned().collect();
        let reversed = SkillBank::from_skills(skills.into_iter().rev()).unwrap();
        let cfg = RetrievalConfig { embedding_dim: DIM, ..Default::default() };
        let t = task(q);
        let a = route(&forward.active_view(&clean()), &t, &cfg);
        let b = route(&reversed.active_view(&clean()), &t, &cfg);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn group_advantages_are_centred(rewards in prop::collection::vec(0.0f64..1.0, 2..16)) {
        let adv = group_advantages(&rewards);
        prop_assert!(adv.iter().sum::<f64>().abs() < 1e-9);
        let constant = rewards.iter().all(|&r| r == rewards[0]);
        if constant {
            prop_assert!(adv.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn projection_enforces_capacity(values in prop::collection::vec(0.0f64..1.0, 12), cap in 0.5f64..8.0) {
        let types = [TaskType::new("a"), TaskType::new("b")];
        let mut p = PolicyState::new(&types, 6, &LearnConfig { capacity_cap: cap, ..Default::default() });
        for (i, v) in values.iter().enumerate() {
            p.set_competence(&types[i / 6], (i % 6) as u32, *v);
        }
        let before = p.total_mass();
        let projected = p.project();
        prop_assert_eq!(projected, before > cap);
        if projected {
            prop_assert!(p.total_mass() <= cap + 1e-9);
        } else {
            prop_assert_eq!(p.total_mass(), before);
        }
    }

    #[test]
    fn ema_of_constant_input_is_a_fixed_point(d in -0.5f64..0.5, alpha in 0.05f64..1.0, n in 1usize..20) {
        let cfg = AuditConfig { ema_alpha: alpha, ..Default::default() };
        let mut r = MecRecord::new("s");
        for _ in 0..n {
            ema_update(&mut r, d, &cfg, 0.001);
        }
        prop_assert!((r.mec_smoothed - d).abs() < 1e-12);
        prop_assert_eq!(r.streak, if d < 0.001 { n as u32 } else { 0 });
    }

    #[test]
    fn decide_matches_predicates((rec, perf) in record()) {
        let c = LifecycleConfig::default();
        let retire = rec.mec_smoothed < c.tau_retire && rec.exposure >= c.min_exposure && rec.streak >= c.patience;
        let expand = perf.is_some_and(|p| p < c.tau_expand) && rec.failures >= c.n_expand && rec.mec_smoothed < c.tau_keep;
        let expected = if retire {
            Decision::Retire
        } else if expand {
            Decision::Expand
        } else if rec.mec_smoothed >= c.tau_keep {
            Decision::Retain
        } else {
            Decision::Hold
        };
        prop_assert_eq!(decide(&rec, perf, &c), expected);
    }

    #[test]
    fn regimes_never_issue_forbidden_moves(recs in prop::collection::vec(record(), 1..8), seed in any::<u64>()) {
        use rand::SeedableRng;
        for regime in [Regime::AccumulateOnly, Regime::NoExpansion, Regime::EliminateOnly] {
            let c = LifecycleConfig { regime, ..Default::default() };
            let rule: Vec<(String, Decision)> =
                recs.iter().enumerate().map(|(i, (r, p))| (format!("s{i}"), decide(r, *p, &c))).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for d in regime_decisions(&rule, &c, &mut rng) {
                if !regime.allows_retire() {
                    prop_assert_ne!(d.decision, Decision::Retire);
                }
                if !regime.allows_expand() {
                    prop_assert!(!d.expand);
                }
            }
        }
    }

    #[test]
    fn bank_jsonl_round_trip(
        keys in prop::collection::vec(direction(), 1..8),
        weights in prop::collection::vec((0u32..40, 0.0f64..1.0), 0..4),
        retire_mask in prop::collection::vec(any::<bool>(), 8),
    ) {
        let mut bank = SkillBank::new();
        for (i, k) in keys.iter().enumerate() {
            let truth = SkillTruth { concept_weights: weights.iter().copied().collect(), harm: i as f64 * 0.01 };
            bank.add_skill(Skill::task_specific(format!("s{i}"), clean(), k.clone(), truth)).unwrap();
        }
        for (i, _) in keys.iter().enumerate().filter(|(i, _)| retire_mask[*i]) {
            bank.retire_skill(&format!("s{i}"), i as u32).unwrap();
        }
        let back = SkillBank::read_jsonl(bank.to_jsonl_string().as_bytes()).unwrap();
        prop_assert_eq!(back, bank);
    }

    #[test]
    fn inert_context_never_helps(q in direction(), comp in 0.0f64..1.0, clutter in 0.0f64..0.2, n in 0usize..4) {
        let mut env = skill_lifecycle::Scenario::Reference.env();
        env.clutter_coeff = clutter;
        let mut p = PolicyState::new([&clean()], 2, &LearnConfig::default());
        p.set_competence(&clean(), 0, comp);
        let inert: Vec<Skill> = (0..=n).map(|i| Skill::general(format!("g{i}"), q.clone(), SkillTruth::default())).collect();
        let t = task(q.clone());
        let probs: Vec<f64> = (0..=n + 1).map(|k| success_prob(&t, &p, &inert.iter().take(k).collect::<Vec<_>>(), &env)).collect();
        prop_assert!(probs.windows(2).all(|w| w[1] <= w[0]));
    }
}
