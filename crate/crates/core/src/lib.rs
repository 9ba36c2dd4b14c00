//! Lifecycle control for an external skill bank that conditions a policy
//! while the policy itself is being trained.
//!
//! Skills are retrieved into context by embedding similarity. Every few
//! training steps a bounded audit measures each heavily used skill's
//! leave-one-out contribution on validation tasks. The rules then retain
//! contributors, retire skills the policy no longer needs, and grow new
//! skills from clusters of routed failures. A synthetic environment with
//! exact ground truth drives everything end to end.
//!
//! Module map:
//!
//! * [`skill`]: bank, lifecycle events and JSONL persistence
//! * [`retrieval`]: top-K cosine routing with a similarity floor
//! * [`audit`]: paired leave-one-skill-out estimates and smoothing
//! * [`lifecycle`]: decision rules, regimes and bank mutation
//! * [`simenv`]: task worlds, rollouts and analytic oracles
//! * [`policy`]: capacity-limited competence learner
//! * [`trainer`]: the training loop, run outputs and ablations
//! * [`theory`]: Monte Carlo checks of the rules' guarantees

pub mod audit;
pub mod error;
pub mod lifecycle;
pub mod policy;
pub mod retrieval;
pub mod seed;
pub mod simenv;
pub mod skill;
pub mod theory;
pub mod trainer;

pub use audit::{mec_loso, AuditConfig, LosoEstimate, MecRecord};
pub use error::{Error, Result};
pub use lifecycle::{decide, Decision, LifecycleConfig, Regime};
pub use retrieval::{route, RetrievalConfig, RoutedSet};
pub use simenv::{Scenario, SimTask};
pub use skill::{LifecycleEvent, Skill, SkillBank, TaskType};
pub use trainer::{run, RunConfig, RunSummary};
