//! Particle-based posterior sampling for Bayesian inverse problems posed on
//! function spaces.
//!
//! The crate couples a P1 finite-element discretisation of the unit square
//! with a Gaussian prior `N(u0, C0)`, `C0 = A^-2`, `A = alpha (I - Laplace)`,
//! and provides Stein variational gradient descent on the discretised
//! function space, both in plain form and with mixture preconditioning
//! operators built from Gauss-Newton Hessians. Reference samplers (pCN) and
//! MAP optimisers (inexact Newton-CG, gradient descent) are included for
//! validation.
//!
//! All numerical code is generic over [`Real`]; the `*64` aliases at the
//! crate root fix the scalar to `f64`, which is what the experiment runner
//! uses.

// `!(x > 0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops walk several parallel arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod fem;
pub mod kernels;
pub mod models;
pub mod prior;
pub mod scalar;
pub mod stats;
pub mod svgd;

pub use error::{Error, Result};
pub use scalar::Real;

pub use fem::{Field, Mesh, SparseSymOperator};
pub use kernels::{KernelConfig, PrecondRank, Preconditioner};
pub use models::{DarcyModel, ForwardModel, LinearGaussianModel, MeasurementSetup, NullModel};
pub use baselines::{MapConfig, PcnConfig};
pub use svgd::{Ensemble, SvgdConfig};
pub use prior::{GaussianPrior, HilbertScaleNorm};

pub type Field64 = Field<f64>;
pub type SparseSymOperator64 = SparseSymOperator<f64>;
pub type GaussianPrior64 = GaussianPrior<f64>;
pub type Preconditioner64 = Preconditioner<f64>;
pub type Ensemble64 = Ensemble<f64>;
pub type DarcyModel64 = DarcyModel<f64>;
pub type LinearGaussianModel64 = LinearGaussianModel<f64>;

pub type Field32 = Field<f32>;
pub type GaussianPrior32 = GaussianPrior<f32>;
pub type DarcyModel32 = DarcyModel<f32>;
