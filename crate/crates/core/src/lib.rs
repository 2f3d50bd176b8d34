//! Two-stage constrained actor-critic for multi-response recommendation.
//!
//! Stage one learns one policy per auxiliary response channel with its own
//! critic. Stage two fits the main policy to the weighted target that trades
//! main-channel advantage against closeness to every auxiliary policy.

pub mod actors;
pub mod approx;
pub mod cmdp;
pub mod critics;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod replay;
pub mod seed;

pub use error::{Error, Result};
