//! Discrete, Gaussian, and simplicial (Wright-Fisher) diffusion for discrete
//! sequences, treated as three parameterizations of one population process.
//!
//! A population of `zeta` copies of each token mutates under a rate matrix;
//! `zeta = 1` is discrete diffusion, `zeta -> infinity` without reproduction
//! is Gaussian diffusion on token embeddings, and with reproduction it is
//! Wright-Fisher diffusion on the simplex. The crate provides exact forward
//! samplers, comparable ELBOs for all three views, numerically hardened
//! hypergeometric series with condition-number-driven precision escalation,
//! reverse-time samplers, and a numerical laboratory that verifies the limit
//! theorems against brute-force oracles.

pub mod bigfloat;
pub mod dilation;
pub mod embedding;
pub mod error;
pub mod generator;
pub mod series;
pub mod simplex;

pub use dilation::TimeDilation;
pub use embedding::Embedding;
pub use error::{Error, Result};
pub use generator::Generator;
pub use simplex::SimplexPoint;

/// Standard-precision scalar used on the fast path.
pub type Standard = f64;
/// Arbitrary-precision scalar used after condition-number escalation.
pub type Extended = bigfloat::BigF;
