//! The homogeneous model: the group, the cocompact lattice, and Haar
//! sampling on the quotient.

pub mod bolza;
pub mod group;
pub mod sample;

pub use bolza::{Bolza, ManifoldPoint};
pub use group::{
    contact_alpha, contact_d_alpha, exp_generator, flow_differential, n_minus, n_plus, rotation,
    AlgebraVector, Direction, GroupElement,
};
pub use sample::{haar_orbit_sample, haar_rejection_sample};
