//! A MOOClet engine.
//!
//! A MOOClet is a modular piece of a course, such as an exercise or an
//! email, that exists in several versions. The engine stores MOOClets and
//! their versions, decides which version each learner sees through a
//! pluggable [`PolicySpec`], and records every decision and every learner
//! value in an append-only variable store that researchers can inspect
//! record by record or through differentially private aggregates.
//!
//! ```
//! use mooclet_core::{content_from_str, Context, Engine, EngineConfig, PolicySpec};
//!
//! let engine = Engine::new(EngineConfig::deterministic(7));
//! let m = engine.create_mooclet("quiz-hints", PolicySpec::UniformRandom, true)?;
//! let a = engine.add_version(m.id, "short hint", content_from_str(r#"{"hint":"try a table"}"#)?, 1.0)?;
//! engine.add_version(m.id, "worked example", content_from_str(r#"{"hint":"see step 1"}"#)?, 1.0)?;
//!
//! let first = engine.assign(m.id, "learner-42", &Context::new())?;
//! let again = engine.assign(m.id, "learner-42", &Context::new())?;
//! assert_eq!(first.version.id, again.version.id); // sticky
//!
//! engine.pin_version(m.id, Some(a.id))?;
//! assert_eq!(engine.assign(m.id, "learner-43", &Context::new())?.version.id, a.id);
//! # Ok::<(), mooclet_core::Error>(())
//! ```

pub mod assignment;
pub mod auth;
pub mod dp;
pub mod engine;
pub mod error;
pub mod ids;
pub mod journal;
pub mod policy;
pub mod registry;
pub mod rng;
pub mod rubric;
pub mod sim;
pub mod store;

pub use assignment::{Assignment, AssignmentRecord, DecisionSource};
pub use auth::{Principal, Role};
pub use dp::{AggregateOp, AggregateQuery, NoiseMode, PrivacyBudget};
pub use engine::{
    Context, DpAnswer, Engine, EngineConfig, MoocletStats, VersionStats, VersionUpdate,
};
pub use error::{Error, ErrorKind, Result};
pub use ids::{AssignmentId, ClockKind, MoocletId, Pseudonym, QuestionId, Timestamp, VersionId};
pub use policy::{ArmStats, ContextBucket, PolicyState, Posterior};
pub use registry::{
    content_from_str, BetaPrior, Content, Mooclet, PolicyKind, PolicySpec, Version,
};
pub use rng::RandomSource;
pub use rubric::{OptionEntry, Question, Respondent, ResponseRecord};
pub use store::{
    Bounds, Provenance, RecordFilter, Value, ValueRecord, ValueType, Variable, VariableKind,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    pub struct Readme;
    #[doc = include_str!("../../../book/src/mooclets.md")]
    pub struct Mooclets;
    #[doc = include_str!("../../../book/src/policies.md")]
    pub struct Policies;
    #[doc = include_str!("../../../book/src/variable-store.md")]
    pub struct VariableStore;
    #[doc = include_str!("../../../book/src/privacy.md")]
    pub struct Privacy;
    #[doc = include_str!("../../../book/src/rubric.md")]
    pub struct Rubric;
    #[doc = include_str!("../../../book/src/simulator.md")]
    pub struct Simulator;
}
