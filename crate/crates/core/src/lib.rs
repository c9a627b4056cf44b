//! Red-teaming toolkit for vision-language models.
//!
//! Two attack surfaces, one harness:
//!
//! * **Visual**: corpus-guided projected-gradient perturbation of an input
//!   image under an L-infinity budget ([`visual`]).
//! * **Textual**: an iterative judge/rephrase loop that rewrites a refused
//!   prompt until the target answers or a round budget runs out ([`text`]).
//!
//! [`eval`] benchmarks either (or both) across safety scenarios and reports
//! attack success rates; [`models`] provides the white-box toy target the
//! gradient path is developed against, plus black-box adapters.

pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod remote;
pub mod text;
pub mod visual;

pub use error::{Error, Result};
