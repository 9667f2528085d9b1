//! Line-tension energies of dislocations in nonlinear elasticity.
//!
//! The crate computes the self-energy of straight dislocations `Ψ₀(b, t)`,
//! its H¹-elliptic envelope, the linear and geometrically nonlinear
//! hollow-cylinder cell problems, kernel strain fields of polyhedral
//! dislocation networks, and the rescaled energies `F_ε` and `F₀` that
//! connect them. The [`acceptance`] module bundles the numerical checks that
//! tie these quantities together.

pub mod acceptance;
pub mod banded;
pub mod cell;
pub mod cli;
pub mod dislocations;
pub mod elasticity;
pub mod envelope;
pub mod error;
pub mod fields;
pub mod quadrature;
pub mod selfenergy;

pub use elasticity::{ElasticTensor, EnergyModel, Mat3, Rotation, Vec3};
pub use error::{Error, Result};
