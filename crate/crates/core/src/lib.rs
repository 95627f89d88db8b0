//! Hard bifurcations of minimal forward invariant sets in the planar Hopf
//! normal form with bounded noise.
//!
//! - [`model`]: the random differential equation and its polar form
//! - [`averaged`]: closed-form boundary radii and the delayed bifurcation point
//! - [`noise`]: reflected Brownian motion in the unit disk
//! - [`integrate`]: Euler and Adams–Bashforth trajectories
//! - [`extremal`]: boundary orbits of the extremal fields and MFI classification
//! - [`randomcycle`]: random fixed points and random cycles by pullback
//! - [`density`]: Monte Carlo invariant densities
//! - [`cli`]: the `hopf-mfi` command line

// `!(x > y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaged;
pub mod cli;
pub mod extremal;
pub mod integrate;
pub mod model;
pub mod noise;
pub mod density;
pub mod randomcycle;
mod roots;

pub use averaged::{AveragedPrediction, BifurcationPoint, MfiRadii};
pub use extremal::{BoundaryOrbit, MfiDescription, Shape, Side};
pub use integrate::{IntegratorConfig, Scheme, Trajectory};
pub use model::{ModelParams, NoiseSample, PlanarState, PolarState};
pub use noise::{NoiseKind, NoisePath};
