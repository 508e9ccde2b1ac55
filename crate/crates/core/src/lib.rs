//! Black-box inference attacks against transfer-learning student models.
//!
//! The crate simulates a teacher feature extractor and the student APIs built
//! on top of it (raw features, pairwise verification, a fine-tuned recognition
//! head), then runs per-instance and class-aggregate membership inference,
//! attribute inference, and output-perturbation defenses against them.

pub mod attribute;
pub mod defenses;
pub mod error;
pub mod harness;
pub mod learners;
pub mod linalg;
pub mod membership;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod student;
pub mod world;

pub use error::{Error, Result};
