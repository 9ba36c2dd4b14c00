//! Top-K cosine routing with a similarity floor.
//!
//! General skills are always in context. Task-specific skills of the task's
//! type compete on cosine similarity; only those at or above the floor are
//! kept, and at most K of them.

use skill_lifecycle::retrieval::{route, RetrievalConfig};
use skill_lifecycle::simenv::{normalize, SimTask, Split};
use skill_lifecycle::skill::{Skill, SkillBank, SkillTruth, TaskType};

fn axis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

fn main() -> skill_lifecycle::Result<()> {
    let dim = 6;
    let clean = TaskType::new("clean");
    let bank = SkillBank::from_skills([
        Skill::general("verify-before-finish", axis(dim, 5), SkillTruth::default()),
        Skill::task_specific("rinse-in-sink", clean.clone(), axis(dim, 0), SkillTruth::default()),
        Skill::task_specific("find-sponge", clean.clone(), normalize(vec![0.9, 0.44, 0.0, 0.0, 0.0, 0.0]), SkillTruth::default()),
        Skill::task_specific("dry-after", clean.clone(), normalize(vec![0.6, 0.0, 0.8, 0.0, 0.0, 0.0]), SkillTruth::default()),
        Skill::task_specific("stack-plates", clean.clone(), normalize(vec![0.3, 0.0, 0.0, 0.95, 0.0, 0.0]), SkillTruth::default()),
        Skill::task_specific("other-room", clean.clone(), axis(dim, 4), SkillTruth::default()),
    ])?;

    let task = SimTask {
        id: "clean-mug".into(),
        task_type: clean.clone(),
        embedding: axis(dim, 0),
        required_concepts: Default::default(),
        difficulty: 0.0,
        split: Split::Validation,
    };

    for (k, floor) in [(3, 0.45), (1, 0.45), (3, 0.95)] {
        let cfg = RetrievalConfig { top_k: k, emb_threshold: floor, embedding_dim: dim };
        let routed = route(&bank.active_view(&clean), &task, &cfg);
        println!("K={k} floor={floor}: general {:?}", routed.general_ids);
        for id in &routed.task_ids {
            println!("    {id:<14} cos {:.3}", routed.similarities[id]);
        }
    }

    // a retired skill drops out of every view
    let mut bank = bank;
    bank.retire_skill("rinse-in-sink", 10)?;
    let routed = route(&bank.active_view(&clean), &task, &RetrievalConfig { embedding_dim: dim, ..Default::default() });
    println!("after retiring rinse-in-sink: {:?}", routed.task_ids);
    Ok(())
}
