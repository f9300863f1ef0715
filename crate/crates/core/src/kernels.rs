//! Gaussian RBF kernels on Hilbert-scale norms and the per-anchor
//! preconditioners `B = H_GN + C0^-1` of the operator-valued kernels.
//!
//! Preconditioners work in the coordinates of the prior eigenbasis (see
//! [`GaussianPrior::to_spectral`]), where `C0` is diagonal and the `L^2`
//! inner product is Euclidean, so every operator below is a symmetric
//! matrix. Methods with a `_spectral` suffix take and return such
//! coordinates; the others take nodal vectors and a prior.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, numerical, Result};
use crate::models::ForwardModel;
use crate::prior::{GaussianPrior, HilbertScaleNorm};
use crate::Real;

/// Smallest admissible resolved bandwidth.
pub const MIN_BANDWIDTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// `median(distances)^2 / log(m + 1)`.
    Median,
}

/// Operator `G_l` realising the derivative of the preconditioned kernel
/// `exp(-|T_l (u - x)|^2 / h)` with respect to `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelDerivative {
    /// `G_l = T_l^* T_l`: the exact derivative in `L^2` coordinates.
    #[default]
    Exact,
    /// `G_l = C0^-s T_l^* T_l`, the form obtained from distinct bases of the
    /// input and output spaces.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
    /// Order `t` of the `H^t` norm used for plain-kernel distances.
    pub norm_order: f64,
    pub derivative: KernelDerivative,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
            norm_order: 0.0,
            derivative: KernelDerivative::Exact,
        }
    }
}

impl KernelConfig {
    /// Bandwidth for an ensemble of `m` particles with the given pairwise
    /// distances (not squared).
    pub fn resolve<T: Real>(&self, distances: &[T], m: usize) -> Result<T> {
        match self.bandwidth {
            Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(T::lit(h)),
            Bandwidth::Fixed(h) => invalid(format!("kernel bandwidth must be positive, got {h}")),
            Bandwidth::Median => Ok(median_bandwidth(distances, m)),
        }
    }
}

/// `med^2 / log(m + 1)` clamped below by [`MIN_BANDWIDTH`]; one when there
/// are no distances.
pub fn median_bandwidth<T: Real>(distances: &[T], m: usize) -> T {
    if distances.is_empty() {
        return T::one();
    }
    let mut d = distances.to_vec();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let k = d.len();
    let med = if k % 2 == 1 {
        d[k / 2]
    } else {
        (d[k / 2 - 1] + d[k / 2]) * T::lit(0.5)
    };
    (med * med / T::from_count(m + 1).ln()).max(T::lit(MIN_BANDWIDTH))
}

/// `exp(-||u - v||^2 / h)` in the given norm.
pub fn rbf<T: Real>(u: &DVector<T>, v: &DVector<T>, h: T, norm: &HilbertScaleNorm<'_, T>) -> T {
    (-norm.norm_sq(&(u - v)) / h).exp()
}

/// Kernel value `k = K(u_j, target)` and the repulsive field
/// `sum_k D_{(u_j)_k} K(u_j, target) e_k = (2/h) k G (target - u_j)`, where
/// `G = C0^-t` is the Gram operator of the distance norm.
pub fn rbf_grad_terms<T: Real>(
    particles: &[DVector<T>],
    j: usize,
    target: &DVector<T>,
    h: T,
    norm: &HilbertScaleNorm<'_, T>,
) -> Result<(T, DVector<T>)> {
    let Some(uj) = particles.get(j) else {
        return invalid(format!("particle index {j} out of range for {} particles", particles.len()));
    };
    let diff = target - uj;
    let k = (-norm.norm_sq(&diff) / h).exp();
    let field = norm.gram_apply(&diff) * (T::lit(2.0) * k / h);
    Ok((k, field))
}

/// How the Gauss-Newton term enters `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrecondRank {
    #[default]
    Dense,
    /// Keeps the leading `r` eigenpairs of the prior-preconditioned
    /// Gauss-Newton Hessian; `B^-1` is applied through Woodbury.
    LowRank(usize),
}

/// `B = H_GN(v) + C0^-1` at an anchor `v`, with all real powers available.
#[derive(Debug, Clone)]
pub struct Preconditioner<T: Real> {
    anchor: DVector<T>,
    lambda: DVector<T>,
    theta: DVector<T>,
    basis: DMatrix<T>,
    woodbury: Option<(DMatrix<T>, DVector<T>)>,
}

impl<T: Real> Preconditioner<T> {
    /// Builds `B` at `anchor` (nodal) from the model's Gauss-Newton Hessian.
    pub fn build<M: ForwardModel<T> + ?Sized>(
        model: &M,
        prior: &GaussianPrior<T>,
        anchor: &DVector<T>,
        rank: PrecondRank,
    ) -> Result<Self> {
        if model.dim() != prior.dim() || anchor.len() != prior.dim() {
            return invalid("model, prior and anchor dimensions differ");
        }
        let v = prior.eigvecs();
        let gn = match model.weighted_jacobian(anchor)? {
            Some(wj) => {
                let wv = wj * v;
                wv.tr_mul(&wv)
            }
            None => {
                let h = model.gn_hessian_matrix(anchor)?;
                v.tr_mul(&(h * v))
            }
        };
        Self::from_spectral_gn(prior, anchor.clone(), gn, rank)
    }

    /// `B = C0^-1`.
    pub fn from_prior(prior: &GaussianPrior<T>, anchor: &DVector<T>) -> Self {
        let lambda = prior.eigvals().clone();
        Self {
            anchor: anchor.clone(),
            theta: lambda.map(|l| l * l),
            basis: DMatrix::identity(lambda.len(), lambda.len()),
            lambda,
            woodbury: None,
        }
    }

    /// Builds `B = Lambda^2 + gn` from the Gauss-Newton Hessian in spectral
    /// coordinates.
    pub fn from_spectral_gn(prior: &GaussianPrior<T>, anchor: DVector<T>, gn: DMatrix<T>, rank: PrecondRank) -> Result<Self> {
        let n = prior.dim();
        if gn.nrows() != n || gn.ncols() != n {
            return invalid("Gauss-Newton matrix has the wrong size");
        }
        let lambda = prior.eigvals().clone();
        let half = T::lit(0.5);
        let (b, woodbury) = match rank {
            PrecondRank::Dense => {
                let mut b = (&gn + gn.transpose()) * half;
                for i in 0..n {
                    b[(i, i)] += lambda[i] * lambda[i];
                }
                (b, None)
            }
            PrecondRank::LowRank(r) => {
                let mut scaled = DMatrix::from_fn(n, n, |i, j| gn[(i, j)] / (lambda[i] * lambda[j]));
                scaled = (&scaled + scaled.transpose()) * half;
                let eig = sym_eigen(scaled)?;
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
                let r = r.min(n);
                let w = DMatrix::from_fn(n, r, |i, c| eig.eigenvectors[(i, order[c])]);
                let d = DVector::from_fn(r, |c, _| eig.eigenvalues[order[c]].max(T::zero()));
                let inner = &w * DMatrix::from_diagonal(&d) * w.transpose();
                let mut b = DMatrix::from_fn(n, n, |i, j| lambda[i] * inner[(i, j)] * lambda[j]);
                b = (&b + b.transpose()) * half;
                for i in 0..n {
                    b[(i, i)] += lambda[i] * lambda[i];
                }
                let shrink = d.map(|x| x / (T::one() + x));
                (b, Some((w, shrink)))
            }
        };
        let eig = sym_eigen(b)?;
        let floor = lambda.min() * lambda.min() * T::lit(1.0 - 1e-8);
        let theta_min = eig.eigenvalues.min();
        if !(theta_min >= floor) {
            return numerical(format!(
                "preconditioner eigenvalue {theta_min} below prior precision floor {floor}"
            ));
        }
        Ok(Self {
            anchor,
            lambda,
            theta: eig.eigenvalues,
            basis: eig.eigenvectors,
            woodbury,
        })
    }

    /// Same operator re-anchored at `anchor`.
    pub fn with_anchor(&self, anchor: &DVector<T>) -> Self {
        Self {
            anchor: anchor.clone(),
            ..self.clone()
        }
    }

    pub fn anchor(&self) -> &DVector<T> {
        &self.anchor
    }

    /// Eigenvalues of `B` (unordered).
    pub fn theta(&self) -> &DVector<T> {
        &self.theta
    }

    /// Eigenvectors of `B` in spectral coordinates.
    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// `B^p c`.
    pub fn power_spectral(&self, p: T, c: &DVector<T>) -> DVector<T> {
        let z = self.basis.tr_mul(c);
        let z = DVector::from_iterator(z.len(), z.iter().zip(self.theta.iter()).map(|(&zi, &t)| zi * t.powf(p)));
        &self.basis * z
    }

    /// Dense matrix of `B^p` in spectral coordinates.
    pub fn power_matrix(&self, p: T) -> DMatrix<T> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.basis[(i, j)] * self.theta[j].powf(p));
        scaled * self.basis.transpose()
    }

    pub fn binv_spectral(&self, c: &DVector<T>) -> DVector<T> {
        match &self.woodbury {
            None => self.power_spectral(-T::one(), c),
            Some((w, shrink)) => {
                let x = c.component_div(&self.lambda);
                let coef = w.tr_mul(&x).component_mul(shrink);
                (x - w * coef).component_div(&self.lambda)
            }
        }
    }

    fn c0_power_spectral(&self, t: T, c: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(c.len(), c.iter().zip(self.lambda.iter()).map(|(&ci, &l)| ci * l.powf(-(t + t))))
    }

    /// `T c = C0^{s/2} B^{1/2} c`.
    pub fn t_map_spectral(&self, s: T, c: &DVector<T>) -> DVector<T> {
        self.c0_power_spectral(s * T::lit(0.5), &self.power_spectral(T::lit(0.5), c))
    }

    pub fn t_norm_sq_spectral(&self, s: T, c: &DVector<T>) -> T {
        self.t_map_spectral(s, c).norm_squared()
    }

    /// `G c = C0^-s T^* T c = C0^-s B^{1/2} C0^s B^{1/2} c`.
    pub fn gram_spectral(&self, s: T, c: &DVector<T>) -> DVector<T> {
        let inner = self.c0_power_spectral(s, &self.power_spectral(T::lit(0.5), c));
        self.c0_power_spectral(-s, &self.power_spectral(T::lit(0.5), &inner))
    }

    /// `T^* T c = B^{1/2} C0^s B^{1/2} c`.
    pub fn tt_spectral(&self, s: T, c: &DVector<T>) -> DVector<T> {
        let inner = self.c0_power_spectral(s, &self.power_spectral(T::lit(0.5), c));
        self.power_spectral(T::lit(0.5), &inner)
    }

    /// `B^-1 C0^-s B^{1/2} C0^s B^{1/2} c`.
    pub fn repulsive_spectral(&self, s: T, c: &DVector<T>) -> DVector<T> {
        self.binv_spectral(&self.gram_spectral(s, c))
    }

    fn nodal(&self, prior: &GaussianPrior<T>, w: &DVector<T>, f: impl Fn(&DVector<T>) -> DVector<T>) -> DVector<T> {
        prior.from_spectral(&f(&prior.to_spectral(w)))
    }

    pub fn apply_binv(&self, prior: &GaussianPrior<T>, w: &DVector<T>) -> DVector<T> {
        self.nodal(prior, w, |c| self.binv_spectral(c))
    }

    pub fn apply_b(&self, prior: &GaussianPrior<T>, w: &DVector<T>) -> DVector<T> {
        self.nodal(prior, w, |c| self.power_spectral(T::one(), c))
    }

    pub fn apply_bhalf(&self, prior: &GaussianPrior<T>, w: &DVector<T>) -> DVector<T> {
        self.nodal(prior, w, |c| self.power_spectral(T::lit(0.5), c))
    }

    pub fn apply_bneghalf(&self, prior: &GaussianPrior<T>, w: &DVector<T>) -> DVector<T> {
        self.nodal(prior, w, |c| self.power_spectral(T::lit(-0.5), c))
    }

    /// `||T v||^2 = <C0^s B^{1/2} v, B^{1/2} v>`.
    pub fn t_norm_sq(&self, prior: &GaussianPrior<T>, s: T, v: &DVector<T>) -> T {
        self.t_norm_sq_spectral(s, &prior.to_spectral(v))
    }

    /// `k B^-1 w`, the operator part of the preconditioned kernel applied to
    /// `w`.
    pub fn apply_kernel_operator(&self, prior: &GaussianPrior<T>, scalar_k: T, w: &DVector<T>) -> DVector<T> {
        self.apply_binv(prior, w) * scalar_k
    }

    pub fn repulsive_operator(&self, prior: &GaussianPrior<T>, s: T, v: &DVector<T>) -> DVector<T> {
        self.nodal(prior, v, |c| self.repulsive_spectral(s, c))
    }
}

fn sym_eigen<T: Real>(m: DMatrix<T>) -> Result<SymmetricEigen<T, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, T::lit(1e-15).max(<T as Real>::epsilon()), 0)
        .ok_or_else(|| crate::Error::NumericalFailure("symmetric eigensolver did not converge".into()))
}
