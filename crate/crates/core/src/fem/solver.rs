use nalgebra::DVector;

use crate::error::{numerical, Error, Result};
use crate::fem::{Field, Mesh, SparseSymOperator};
use crate::Real;

/// Largest reduced system handled by the banded direct factorisation; larger
/// systems fall back to Jacobi-preconditioned conjugate gradients.
pub const DIRECT_SOLVE_LIMIT: usize = 5000;

/// Cholesky factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky<T> {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i, i - bw ..= i]`, left-padded with zeros.
    data: Vec<T>,
}

impl<T: Real> BandCholesky<T> {
    /// Factorises the matrix given by `entry(i, j)` for `j <= i`, `i - j <= bw`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> T) -> Result<Self> {
        let w = bw + 1;
        let mut data = vec![T::zero(); n * w];
        for i in 0..n {
            let jlo = i.saturating_sub(bw);
            for j in jlo..=i {
                let mut s = entry(i, j);
                let klo = jlo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= data[i * w + (k + bw - i)] * data[j * w + (k + bw - j)];
                }
                if i == j {
                    if s <= T::zero() || !s.is_finite() {
                        return numerical(format!("matrix not positive definite at pivot {i}"));
                    }
                    data[i * w + bw] = s.sqrt();
                } else {
                    data[i * w + (j + bw - i)] = s / data[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.data[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / self.data[i * w + bw];
        }
        y
    }
}

#[derive(Debug, Clone)]
enum Backend<T> {
    Direct(BandCholesky<T>),
    Cg { inv_diag: DVector<T> },
}

/// Solver for a stiffness matrix with homogeneous Dirichlet conditions on
/// the whole boundary, obtained by symmetric elimination of boundary rows
/// and columns.
#[derive(Debug, Clone)]
pub struct DirichletSolver<T> {
    interior: Vec<usize>,
    num_nodes: usize,
    rows: Vec<Vec<(usize, T)>>,
    backend: Backend<T>,
}

impl<T: Real> DirichletSolver<T> {
    pub fn new(stiffness: &SparseSymOperator<T>, mesh: &Mesh) -> Result<Self> {
        Self::with_limit(stiffness, mesh, DIRECT_SOLVE_LIMIT)
    }

    /// As [`DirichletSolver::new`] with an explicit direct-solve size limit.
    pub fn with_limit(stiffness: &SparseSymOperator<T>, mesh: &Mesh, direct_limit: usize) -> Result<Self> {
        if stiffness.dim() != mesh.num_nodes() {
            return Err(Error::InvalidArgument("stiffness does not match mesh".into()));
        }
        let interior = mesh.interior_nodes().to_vec();
        let rows: Vec<Vec<(usize, T)>> = interior
            .iter()
            .map(|&node| {
                stiffness
                    .row(node)
                    .filter_map(|(c, v)| mesh.interior_index(c).map(|ci| (ci, v)))
                    .collect()
            })
            .collect();
        let n = interior.len();
        let backend = if n <= direct_limit {
            let bw = rows
                .iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().map(move |&(j, _)| i.abs_diff(j)))
                .max()
                .unwrap_or(0);
            let lookup = |i: usize, j: usize| {
                rows[i]
                    .binary_search_by_key(&j, |&(c, _)| c)
                    .map_or(T::zero(), |k| rows[i][k].1)
            };
            Backend::Direct(BandCholesky::factor(n, bw, lookup)?)
        } else {
            let inv_diag = DVector::from_iterator(
                n,
                rows.iter().enumerate().map(|(i, r)| {
                    let d = r.iter().find(|&&(c, _)| c == i).map_or(T::one(), |&(_, v)| v);
                    T::one() / d
                }),
            );
            Backend::Cg { inv_diag }
        };
        Ok(Self {
            interior,
            num_nodes: mesh.num_nodes(),
            rows,
            backend,
        })
    }

    pub fn num_unknowns(&self) -> usize {
        self.interior.len()
    }

    fn reduced_mul(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            x.len(),
            self.rows.iter().map(|r| r.iter().fold(T::zero(), |s, &(c, v)| s + v * x[c])),
        )
    }

    fn restrict(&self, full: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.interior.len(), self.interior.iter().map(|&k| full[k]))
    }

    fn extend(&self, reduced: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.num_nodes);
        for (i, &k) in self.interior.iter().enumerate() {
            out[k] = reduced[i];
        }
        out
    }

    /// Relative residual tolerance honoured by every solve.
    pub fn rtol() -> T {
        T::lit(1e-10).max(T::lit(1e3) * <T as Real>::epsilon())
    }

    /// Solves `K w = rhs` on interior nodes; boundary entries of the result
    /// are exactly zero and boundary entries of `rhs` are ignored.
    pub fn solve(&self, rhs: &DVector<T>) -> Result<DVector<T>> {
        let b = self.restrict(rhs);
        let bnorm = b.norm();
        if bnorm == T::zero() {
            return Ok(DVector::zeros(self.num_nodes));
        }
        let x = match &self.backend {
            Backend::Direct(chol) => chol.solve(&b),
            Backend::Cg { inv_diag, .. } => self.pcg(&b, inv_diag)?,
        };
        let res = (&b - self.reduced_mul(&x)).norm() / bnorm;
        if !(res <= Self::rtol()) {
            return Err(Error::NotConverged {
                iterations: 0,
                residual: res.to_f64_lossy(),
            });
        }
        Ok(self.extend(&x))
    }

    fn pcg(&self, b: &DVector<T>, inv_diag: &DVector<T>) -> Result<DVector<T>> {
        let n = b.len();
        let tol = Self::rtol() * T::lit(0.5) * b.norm();
        let mut x = DVector::zeros(n);
        let mut r = b.clone();
        let mut z = r.component_mul(inv_diag);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        let cap = 10 * n;
        for _ in 0..cap {
            let ap = self.reduced_mul(&p);
            let alpha = rz / p.dot(&ap);
            x.axpy(alpha, &p, T::one());
            r.axpy(-alpha, &ap, T::one());
            if r.norm() <= tol {
                return Ok(x);
            }
            z = r.component_mul(inv_diag);
            let rz_new = r.dot(&z);
            let beta = rz_new / rz;
            rz = rz_new;
            p = &z + &p * beta;
        }
        Err(Error::NotConverged {
            iterations: cap,
            residual: (r.norm() / b.norm()).to_f64_lossy(),
        })
    }
}

/// One-shot Dirichlet solve of `stiffness w = rhs` on `mesh`.
pub fn solve_dirichlet<T: Real>(stiffness: &SparseSymOperator<T>, rhs: &DVector<T>, mesh: &Mesh) -> Result<Field<T>> {
    let solver = DirichletSolver::new(stiffness, mesh)?;
    Field::new(mesh, solver.solve(rhs)?)
}
