//! Quenched random distance-expanding dynamics: simulation and statistical
//! validation at desk scale.
//!
//! The toolkit realizes driven compositions of affine expanding circle maps,
//! their twisted transfer-operator cocycles and equivariant measures, an
//! inducing scheme with return-time bookkeeping, and a dyadic block harness
//! that statistically validates the limit-theorem predictions for Birkhoff
//! sums: variance asymptotics, CLT normality, characteristic-function
//! factorization decay across gaps, and Gaussian-surrogate variance matching
//! with its rate exponents.

pub mod birkhoff;
pub mod blocks;
pub mod config;
pub mod experiment;
pub mod driving;
pub mod errors;
pub mod fiber;
pub mod holder;
pub mod inducing;
pub mod measures;
pub mod operator;
pub mod report;
pub mod rng;
pub mod stats;

pub use errors::{QResult, QuenchedError};
