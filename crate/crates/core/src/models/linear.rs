use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::models::{ForwardModel, MeasurementSetup};
use crate::prior::GaussianPrior;
use crate::Real;

/// `Phi(u) = |B u - d|^2 / (2 sigma^2)` with a dense design `B`.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel<T: Real> {
    design: DMatrix<T>,
    sigma: T,
    data: DVector<T>,
}

impl<T: Real> LinearGaussianModel<T> {
    pub fn new(design: DMatrix<T>, sigma: T, data: DVector<T>) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return invalid(format!("noise level must be positive, got {sigma}"));
        }
        if data.len() != design.nrows() {
            return invalid(format!("{} data values for {} design rows", data.len(), design.nrows()));
        }
        Ok(Self { design, sigma, data })
    }

    /// Observes `u` itself through the mollified functionals of `setup`.
    pub fn from_measurement(setup: &MeasurementSetup<T>) -> Result<Self> {
        Self::new(setup.operator().clone(), setup.sigma(), setup.data().clone())
    }

    pub fn design(&self) -> &DMatrix<T> {
        &self.design
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn data(&self) -> &DVector<T> {
        &self.data
    }

    pub fn with_data(&self, data: DVector<T>) -> Result<Self> {
        Self::new(self.design.clone(), self.sigma, data)
    }

    fn check(&self, u: &DVector<T>) -> Result<()> {
        if u.len() != self.design.ncols() {
            return invalid(format!("field has {} entries, expected {}", u.len(), self.design.ncols()));
        }
        Ok(())
    }

    /// Posterior mean and nodal covariance under `prior`, computed in the
    /// prior eigenbasis.
    pub fn analytic_posterior(&self, prior: &GaussianPrior<T>) -> Result<(DVector<T>, DMatrix<T>)> {
        if prior.dim() != self.design.ncols() {
            return invalid("prior and design dimensions differ");
        }
        let v = prior.eigvecs();
        let bv = (&self.design * v) / self.sigma;
        let mut precision = bv.tr_mul(&bv);
        for (i, l) in prior.eigvals().iter().enumerate() {
            precision[(i, i)] += *l * *l;
        }
        let chol = precision
            .cholesky()
            .ok_or_else(|| crate::Error::NumericalFailure("posterior precision not positive definite".into()))?;
        let rhs = bv.tr_mul(&((&self.data - &self.design * prior.mean()) / self.sigma));
        let mean = prior.mean() + v * chol.solve(&rhs);
        let cov = v * chol.inverse() * v.transpose();
        Ok((mean, (&cov + cov.transpose()) * T::lit(0.5)))
    }
}

/// Conjugate update for `d = B u + N(0, sigma^2 I)` with prior
/// `N(mean, precision^-1)`; returns posterior mean and covariance.
pub fn conjugate_posterior<T: Real>(
    design: &DMatrix<T>,
    sigma: T,
    data: &DVector<T>,
    mean: &DVector<T>,
    precision: &DMatrix<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let s2 = sigma * sigma;
    let post_precision = design.tr_mul(design) / s2 + precision;
    let Some(chol) = post_precision.cholesky() else {
        return numerical("posterior precision not positive definite");
    };
    let rhs = design.tr_mul(&(data - design * mean)) / s2;
    Ok((mean + chol.solve(&rhs), chol.inverse()))
}

impl<T: Real> ForwardModel<T> for LinearGaussianModel<T> {
    fn gn_is_constant(&self) -> bool {
        true
    }

    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn potential(&self, u: &DVector<T>) -> Result<T> {
        self.check(u)?;
        let r = &self.design * u - &self.data;
        Ok(r.norm_squared() / (self.sigma * self.sigma * T::lit(2.0)))
    }

    fn gradient(&self, u: &DVector<T>) -> Result<(T, DVector<T>)> {
        self.check(u)?;
        let s2 = self.sigma * self.sigma;
        let r = &self.design * u - &self.data;
        Ok((r.norm_squared() / (s2 + s2), self.design.tr_mul(&r) / s2))
    }

    fn gn_hessian_action(&self, u: &DVector<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        self.check(u)?;
        self.check(uhat)?;
        Ok(self.design.tr_mul(&(&self.design * uhat)) / (self.sigma * self.sigma))
    }

    fn full_hessian_action(&self, u: &DVector<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        self.gn_hessian_action(u, uhat)
    }

    fn weighted_jacobian(&self, _u: &DVector<T>) -> Result<Option<DMatrix<T>>> {
        Ok(Some(&self.design / self.sigma))
    }
}

/// `Phi = 0`: the posterior equals the prior.
#[derive(Debug, Clone, Copy)]
pub struct NullModel {
    dim: usize,
}

impl NullModel {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl<T: Real> ForwardModel<T> for NullModel {
    fn gn_is_constant(&self) -> bool {
        true
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, _u: &DVector<T>) -> Result<T> {
        Ok(T::zero())
    }

    fn gradient(&self, u: &DVector<T>) -> Result<(T, DVector<T>)> {
        Ok((T::zero(), DVector::zeros(u.len())))
    }

    fn gn_hessian_action(&self, _u: &DVector<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        Ok(DVector::zeros(uhat.len()))
    }

    fn full_hessian_action(&self, _u: &DVector<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        Ok(DVector::zeros(uhat.len()))
    }

    fn weighted_jacobian(&self, _u: &DVector<T>) -> Result<Option<DMatrix<T>>> {
        Ok(Some(DMatrix::zeros(0, self.dim)))
    }
}
