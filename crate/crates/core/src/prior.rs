//! Gaussian prior `N(u0, C0)` with `C0 = A^-2`, `A = alpha (I - Laplace)`
//! under homogeneous Neumann conditions.
//!
//! The discrete operator is diagonalised once through the generalised
//! eigenproblem `alpha (M + S) v = lambda M v` (matrix transfer technique),
//! which gives every real power of `C0` exactly:
//! `C0^t u = sum_i lambda_i^{-2t} <u, v_i>_M v_i`.
//!
//! The eigenvectors form an `M`-orthonormal basis of the discrete space. Many
//! routines work in the coordinates of this basis ("spectral coordinates"),
//! where the `L^2` inner product becomes the Euclidean one and `C0` is
//! diagonal.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, numerical, Result};
use crate::fem::{assemble_mass, assemble_stiffness, Field, Mesh, SparseSymOperator};
use crate::Real;

#[derive(Debug, Clone)]
pub struct GaussianPrior<T: Real> {
    mesh: Mesh,
    mean: DVector<T>,
    alpha: T,
    eigvals: DVector<T>,
    eigvecs: DMatrix<T>,
    mass: SparseSymOperator<T>,
}

impl<T: Real> GaussianPrior<T> {
    pub fn new(mesh: &Mesh, alpha: T, mean: &Field<T>) -> Result<Self> {
        if !(alpha > T::zero()) {
            return invalid(format!("prior alpha must be positive, got {alpha}"));
        }
        if !mean.matches(mesh) {
            return invalid("prior mean lives on a different mesh");
        }
        let n = mesh.num_nodes();
        let mass = assemble_mass::<T>(mesh);
        let stiff = assemble_stiffness(mesh, &DVector::zeros(n))?;
        let a = (mass.to_dense() + stiff.to_dense()) * alpha;
        let chol = Cholesky::new(mass.to_dense())
            .ok_or_else(|| crate::Error::NumericalFailure("mass matrix not positive definite".into()))?;
        let l = chol.l();
        // C = L^{-1} A L^{-T}
        let la = l
            .solve_lower_triangular(&a)
            .ok_or_else(|| crate::Error::NumericalFailure("singular mass factor".into()))?;
        let c = l
            .solve_lower_triangular(&la.transpose())
            .ok_or_else(|| crate::Error::NumericalFailure("singular mass factor".into()))?;
        let c = (&c + c.transpose()) * T::lit(0.5);
        let eig = SymmetricEigen::try_new(c, T::lit(1e-15).max(<T as Real>::epsilon()), 0)
            .ok_or_else(|| crate::Error::NumericalFailure("prior eigensolver did not converge".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        let eigvals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let y = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        let mut eigvecs = l
            .transpose()
            .solve_upper_triangular(&y)
            .ok_or_else(|| crate::Error::NumericalFailure("singular mass factor".into()))?;
        let tiny = T::lit(1e-12);
        for mut col in eigvecs.column_iter_mut() {
            if let Some(first) = col.iter().find(|v| v.abs() > tiny).copied() {
                if first < T::zero() {
                    col.neg_mut();
                }
            }
        }
        if eigvals[0] < alpha * T::lit(1.0 - 1e-8) {
            return numerical(format!("smallest prior eigenvalue {} below alpha", eigvals[0]));
        }
        Ok(Self {
            mesh: mesh.clone(),
            mean: mean.as_vector().clone(),
            alpha,
            eigvals,
            eigvecs,
            mass,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn mean_field(&self) -> Field<T> {
        Field::new(&self.mesh, self.mean.clone()).expect("prior mean is a valid field")
    }

    /// Eigenvalues `lambda_i` of the discretised `A`, ascending.
    pub fn eigvals(&self) -> &DVector<T> {
        &self.eigvals
    }

    /// `M`-orthonormal eigenvectors of `A` as columns.
    pub fn eigvecs(&self) -> &DMatrix<T> {
        &self.eigvecs
    }

    pub fn mass(&self) -> &SparseSymOperator<T> {
        &self.mass
    }

    /// Eigenvalues of `C0^t`, i.e. `lambda_i^{-2t}`.
    pub fn c0_power_diag(&self, t: T) -> DVector<T> {
        self.eigvals.map(|l| l.powf(-(t + t)))
    }

    /// Coordinates of `u` in the eigenbasis: `V^T M u`.
    pub fn to_spectral(&self, u: &DVector<T>) -> DVector<T> {
        self.eigvecs.tr_mul(&self.mass.mul_vec(u))
    }

    /// Coordinates of the Riesz representative of a dual vector `g`:
    /// `V^T M M^{-1} g = V^T g`.
    pub fn dual_to_spectral(&self, g: &DVector<T>) -> DVector<T> {
        self.eigvecs.tr_mul(g)
    }

    /// Nodal vector from eigenbasis coordinates.
    pub fn from_spectral(&self, c: &DVector<T>) -> DVector<T> {
        &self.eigvecs * c
    }

    /// `C0^t u` for any real `t`.
    pub fn apply_c0_power(&self, t: T, u: &DVector<T>) -> DVector<T> {
        let c = self.to_spectral(u).component_mul(&self.c0_power_diag(t));
        self.from_spectral(&c)
    }

    /// `C0^{-1} (u - u0)`.
    pub fn apply_precision(&self, u: &DVector<T>) -> DVector<T> {
        self.apply_c0_power(-T::one(), &(u - &self.mean))
    }

    /// `||u||_{H^t} = ||C0^{-t/2} u||_{L^2}`.
    pub fn hilbert_norm(&self, t: T, u: &DVector<T>) -> T {
        HilbertScaleNorm::new(self, t).norm(u)
    }

    /// Keeps only the first `count` eigenmodes (largest prior variance) of `u`.
    pub fn project_top_modes(&self, count: usize, u: &DVector<T>) -> DVector<T> {
        let mut c = self.to_spectral(u);
        for i in count.min(c.len())..c.len() {
            c[i] = T::zero();
        }
        self.from_spectral(&c)
    }

    /// Draws `C0^{1/2} xi` in spectral coordinates.
    pub fn sample_centered_spectral(&self, rng: &mut impl rand::Rng) -> DVector<T> {
        DVector::from_iterator(
            self.dim(),
            self.eigvals.iter().map(|&l| {
                let xi: f64 = StandardNormal.sample(rng);
                T::lit(xi) / l
            }),
        )
    }

    /// One draw of `u0 + C0^{1/2} xi`.
    pub fn sample_with(&self, rng: &mut impl rand::Rng) -> DVector<T> {
        &self.mean + self.from_spectral(&self.sample_centered_spectral(rng))
    }

    /// `count` reproducible prior draws from `seed`.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<Field<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Field::new(&self.mesh, self.sample_with(&mut rng)).expect("finite prior sample"))
            .collect()
    }
}

/// Norm of the Hilbert scale `H^t` induced by `C0`.
#[derive(Debug, Clone, Copy)]
pub struct HilbertScaleNorm<'a, T: Real> {
    prior: &'a GaussianPrior<T>,
    order: T,
}

impl<'a, T: Real> HilbertScaleNorm<'a, T> {
    pub fn new(prior: &'a GaussianPrior<T>, order: T) -> Self {
        Self { prior, order }
    }

    pub fn order(&self) -> T {
        self.order
    }

    /// Weights `lambda_i^{2t}` of the squared norm in spectral coordinates.
    pub fn spectral_weights(&self) -> DVector<T> {
        self.prior.c0_power_diag(-self.order)
    }

    pub fn norm_sq(&self, u: &DVector<T>) -> T {
        if self.order == T::zero() {
            return self.prior.mass.quad_form(u);
        }
        let c = self.prior.to_spectral(u);
        c.iter()
            .zip(self.spectral_weights().iter())
            .fold(T::zero(), |acc, (&ci, &wi)| acc + wi * ci * ci)
    }

    pub fn norm(&self, u: &DVector<T>) -> T {
        self.norm_sq(u).max(T::zero()).sqrt()
    }

    /// Gram operator `G = C0^{-t}` with `||u||^2_{H^t} = <G u, u>_{L^2}`.
    pub fn gram_apply(&self, u: &DVector<T>) -> DVector<T> {
        self.prior.apply_c0_power(-self.order, u)
    }
}
