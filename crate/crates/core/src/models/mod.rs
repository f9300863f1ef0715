//! Forward models exposing the potential `Phi(u)`, its gradient and Hessian
//! actions.
//!
//! Derivatives are returned as dual vectors: the partial derivatives of the
//! scalar with respect to the nodal coefficients of `u`. A dual vector `g`
//! pairs with a nodal perturbation `du` by the Euclidean dot product.

mod darcy;
mod linear;
mod measurement;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::Real;

pub use darcy::{DarcyLinearization, DarcyModel};
pub use linear::{conjugate_posterior, LinearGaussianModel, NullModel};
pub use measurement::{default_grid, synthesize_data, MeasurementSetup, SyntheticData, DEFAULT_DELTA};

/// Linear map `uhat -> H uhat` returning a dual vector.
pub type HessianAction<'a, T> = Box<dyn Fn(&DVector<T>) -> Result<DVector<T>> + Sync + 'a>;

/// Uniform contract shared by every model.
pub trait ForwardModel<T: Real>: Sync {
    /// Number of nodal parameters.
    fn dim(&self) -> usize;

    fn potential(&self, u: &DVector<T>) -> Result<T>;

    /// `(Phi(u), DPhi(u))` with the gradient as a dual vector.
    fn gradient(&self, u: &DVector<T>) -> Result<(T, DVector<T>)>;

    /// Gauss-Newton action `J^T Sigma^-1 J uhat` as a dual vector.
    fn gn_hessian_action(&self, u: &DVector<T>, uhat: &DVector<T>) -> Result<DVector<T>>;

    /// Exact second derivative action `D^2 Phi(u) uhat` as a dual vector.
    fn full_hessian_action(&self, u: &DVector<T>, uhat: &DVector<T>) -> Result<DVector<T>>;

    /// Hessian action at a fixed `u`, Gauss-Newton or exact, reusing any
    /// per-point work across calls.
    fn hessian_at<'a>(&'a self, u: &DVector<T>, full: bool) -> Result<HessianAction<'a, T>> {
        let u = u.clone();
        Ok(Box::new(move |uhat| {
            if full {
                self.full_hessian_action(&u, uhat)
            } else {
                self.gn_hessian_action(&u, uhat)
            }
        }))
    }

    /// True when the Gauss-Newton Hessian does not depend on `u`.
    fn gn_is_constant(&self) -> bool {
        false
    }

    /// Noise-whitened Jacobian `Sigma^{-1/2} J` when the model can provide
    /// it more cheaply than `dim()` Hessian actions.
    fn weighted_jacobian(&self, _u: &DVector<T>) -> Result<Option<DMatrix<T>>> {
        Ok(None)
    }

    /// Dense Gauss-Newton Hessian in nodal coordinates.
    fn gn_hessian_matrix(&self, u: &DVector<T>) -> Result<DMatrix<T>> {
        if let Some(wj) = self.weighted_jacobian(u)? {
            return Ok(wj.tr_mul(&wj));
        }
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for k in 0..n {
            e[k] = T::one();
            h.set_column(k, &self.gn_hessian_action(u, &e)?);
            e[k] = T::zero();
        }
        Ok((&h + h.transpose()) * T::lit(0.5))
    }
}
