//! Simulation of time-slotted consumption sequences with an
//! exploration-and-preferential-return prior and a hierarchical policy
//! trained by adversarial imitation.

pub mod data;
pub mod downstream;
pub mod epr;
pub mod error;
pub mod eval;
pub mod features;
pub mod policy;
pub mod reward;
pub mod seeding;
pub mod trainer;
pub mod world;

pub use error::{CoreError, Result};
