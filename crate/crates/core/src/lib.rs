//! Numerical laboratory for the geodesic flow of the Bolza surface,
//! realized as the diagonal flow on a cocompact quotient of PSL(2, R).
//!
//! The crate builds the model bottom-up: exact matrix-level group
//! operations, the octagon fundamental domain and its side-pairing
//! generators, stable/unstable leaf coordinates with their holonomies and
//! anisotropic distances, the temporal-distance function, bump observables
//! with correlation and transfer-operator machinery, resolvents with
//! oscillatory-integral quadrature, and the oscillatory-cancellation
//! experiments that probe the decay-of-correlations mechanism.

pub mod dolgopyat;
pub mod error;
pub mod fit;
pub mod leaves;
pub mod model;
pub mod observables;
pub mod operators;
pub mod quad;
pub mod rng;
pub mod temporal;

pub use error::{Error, Result};
