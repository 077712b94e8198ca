//! Locally perturbed random walks on the integers and their skew Brownian
//! motion scaling limit.
//!
//! * [`integer_dist`]: finite integer laws, alias sampling, tail truncation.
//! * [`walk`]: the perturbed walk, its simulation and path ledgers.
//! * [`membrane`]: exact embedded chain, stationary law and limit skewness.
//! * [`skew_bm`]: skew Brownian motion density, CDF and samplers.
//! * [`lab`]: statistics and convergence experiments.

pub mod integer_dist;
pub mod lab;
pub mod membrane;
pub mod skew_bm;
pub mod walk;

pub use integer_dist::{IntegerPmf, StepLaw};
pub use walk::WalkModel;
