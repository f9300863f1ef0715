//! Self-checks of derivatives and operator identities against finite
//! differences and dense linear algebra.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use steinflow::kernels::{rbf, KernelConfig, PrecondRank, Preconditioner};
use steinflow::models::{DarcyModel, ForwardModel};
use steinflow::svgd::{build_preconditioners, mpo_direction};
use steinflow::{GaussianPrior, HilbertScaleNorm};

use crate::error::CliResult;

pub const GRADIENT_TOL: f64 = 1e-5;
pub const HESSIAN_TOL: f64 = 1e-3;
pub const SYMMETRY_TOL: f64 = 1e-8;
pub const REDUCTION_TOL: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-8;
pub const GRAM_PSD_TOL: f64 = 1e-10;
/// Central-difference step of the gradient check.
pub const GRADIENT_STEP: f64 = 1e-5;
/// Steps of the finite-difference error table.
pub const FD_TABLE_STEPS: [f64; 3] = [1e-2, 1e-5, 1e-10];

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured <= tolerance`; NaN fails.
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdRow {
    pub step: f64,
    pub relative_error: f64,
}

/// Smooth random test fields: scaled prior draws.
fn test_fields(prior: &GaussianPrior<f64>, seed: u64, count: usize, scale: f64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| prior.from_spectral(&prior.sample_centered_spectral(&mut rng)) * scale).collect()
}

fn central_difference<M: ForwardModel<f64> + ?Sized>(model: &M, u: &DVector<f64>, dir: &DVector<f64>, h: f64) -> CliResult<f64> {
    let plus = model.potential(&(u + dir * h))?;
    let minus = model.potential(&(u - dir * h))?;
    Ok((plus - minus) / (2.0 * h))
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Largest relative error between `<DPhi(u), d>` and a central difference
/// over `pairs` random `(u, d)`.
pub fn gradient_check<M: ForwardModel<f64> + ?Sized>(
    model: &M,
    prior: &GaussianPrior<f64>,
    pairs: usize,
    seed: u64,
) -> CliResult<Check> {
    let us = test_fields(prior, seed, pairs, 0.5);
    let ds = test_fields(prior, seed + 1, pairs, 1.0);
    let mut worst: f64 = 0.0;
    for (u, d) in us.iter().zip(&ds) {
        let (_, g) = model.gradient(u)?;
        let fd = central_difference(model, u, d, GRADIENT_STEP)?;
        worst = worst.max(relative(fd, g.dot(d)));
        if worst.is_nan() {
            break;
        }
    }
    Ok(Check::at_most("gradient vs central difference", worst, GRADIENT_TOL))
}

/// Central-difference error at each step of [`FD_TABLE_STEPS`]; truncation
/// dominates at large steps and rounding at small ones.
pub fn fd_table<M: ForwardModel<f64> + ?Sized>(model: &M, prior: &GaussianPrior<f64>, seed: u64) -> CliResult<Vec<FdRow>> {
    let u = test_fields(prior, seed, 1, 0.5).remove(0);
    let d = test_fields(prior, seed + 1, 1, 1.0).remove(0);
    let (_, g) = model.gradient(&u)?;
    let exact = g.dot(&d);
    FD_TABLE_STEPS
        .iter()
        .map(|&step| {
            Ok(FdRow {
                step,
                relative_error: relative(central_difference(model, &u, &d, step)?, exact),
            })
        })
        .collect()
}

/// True when the middle step beats both ends of the table.
pub fn is_v_shaped(rows: &[FdRow]) -> bool {
    rows.len() == 3 && rows[1].relative_error < rows[0].relative_error && rows[1].relative_error < rows[2].relative_error
}

/// Full Hessian action against central differences of the gradient, plus
/// symmetry of both Hessians and positivity of the Gauss-Newton one.
pub fn hessian_checks<M: ForwardModel<f64> + ?Sized>(model: &M, prior: &GaussianPrior<f64>, seed: u64) -> CliResult<Vec<Check>> {
    let us = test_fields(prior, seed, 3, 0.5);
    let ds = test_fields(prior, seed + 7, 6, 1.0);
    let h = 1e-4;
    let (mut fd_err, mut sym_full, mut sym_gn, mut psd): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for (k, u) in us.iter().enumerate() {
        let (a, b) = (&ds[2 * k], &ds[2 * k + 1]);
        let full = model.hessian_at(u, true)?;
        let gn = model.hessian_at(u, false)?;
        let ha = full(a)?;
        let (_, gp) = model.gradient(&(u + a * h))?;
        let (_, gm) = model.gradient(&(u - a * h))?;
        let fd = (gp - gm) / (2.0 * h);
        fd_err = fd_err.max((&fd - &ha).norm() / ha.norm());

        let hb = full(b)?;
        sym_full = sym_full.max((ha.dot(b) - hb.dot(a)).abs() / (ha.norm() * b.norm()));
        let (ga, gb) = (gn(a)?, gn(b)?);
        let scale = ga.norm() * b.norm();
        sym_gn = sym_gn.max((ga.dot(b) - gb.dot(a)).abs() / scale);
        psd = psd.max(-ga.dot(a) / (ga.norm() * a.norm()));
    }
    Ok(vec![
        Check::at_most("full Hessian vs gradient differences", fd_err, HESSIAN_TOL),
        Check::at_most("full Hessian symmetry", sym_full, SYMMETRY_TOL),
        Check::at_most("Gauss-Newton symmetry", sym_gn, SYMMETRY_TOL),
        Check::at_most("Gauss-Newton positivity deficit", psd.max(0.0), SYMMETRY_TOL),
    ])
}

/// Prior precision as a nodal bilinear form `M V Lambda^2 V^T M`.
fn precision_form(prior: &GaussianPrior<f64>) -> DMatrix<f64> {
    let m = prior.mass().to_dense();
    let v = prior.eigvecs();
    &m * v * DMatrix::from_diagonal(&prior.eigvals().map(|l| l * l)) * v.transpose() * &m
}

/// Single-particle mixture direction against a dense Newton solve, and the
/// prior-preconditioned direction against `-(C0 DPhi + u - u0)`.
pub fn reduction_checks<M: ForwardModel<f64> + ?Sized>(model: &M, prior: &GaussianPrior<f64>, seed: u64) -> CliResult<Vec<Check>> {
    let u = test_fields(prior, seed, 1, 0.5);
    let (_, g) = model.gradient(&u[0])?;
    let kernel = KernelConfig::default();
    let shifted = &u[0] - prior.mean();

    let precs = build_preconditioners(model, prior, &u, PrecondRank::Dense)?;
    let newton_dir = mpo_direction(&u, model, prior, &precs, 0.25, &kernel)?;
    let p = precision_form(prior);
    let h = model.gn_hessian_matrix(&u[0])? + &p;
    let rhs = -(&g + &p * &shifted);
    let newton = h
        .lu()
        .solve(&rhs)
        .ok_or_else(|| steinflow::Error::NumericalFailure("singular Newton matrix".into()))?;
    let newton_err = (&newton_dir.fields[0] - &newton).norm() / newton.norm();

    let c0_precs = vec![Preconditioner::from_prior(prior, &u[0])];
    let c0_dir = mpo_direction(&u, model, prior, &c0_precs, 0.0, &kernel)?;
    let v = prior.eigvecs();
    let c0 = v * DMatrix::from_diagonal(&prior.eigvals().map(|l| 1.0 / (l * l))) * v.transpose();
    let expected = -(c0 * &g + &shifted);
    let c0_err = (&c0_dir.fields[0] - &expected).norm() / expected.norm();
    Ok(vec![
        Check::at_most("single particle mixture direction is Newton", newton_err, REDUCTION_TOL),
        Check::at_most("single particle prior-preconditioned direction", c0_err, REDUCTION_TOL),
    ])
}

fn rel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Dense operator identities on `prior`'s mesh with `B` built at a random
/// anchor.
pub fn operator_checks<M: ForwardModel<f64> + ?Sized>(model: &M, prior: &GaussianPrior<f64>, seed: u64) -> CliResult<Vec<Check>> {
    let fields = test_fields(prior, seed, 6, 1.0);
    let mut semigroup: f64 = 0.0;
    for (a, b) in [(0.3, 0.45), (-0.5, 0.25), (1.0, -1.0)] {
        for f in &fields[..3] {
            let two = prior.apply_c0_power(a, &prior.apply_c0_power(b, f));
            let one = prior.apply_c0_power(a + b, f);
            semigroup = semigroup.max((&two - &one).norm() / one.norm());
        }
    }

    let prec = Preconditioner::build(model, prior, &(&fields[0] * 0.5), PrecondRank::Dense)?;
    let half = prec.power_matrix(0.5);
    let b = prec.power_matrix(1.0);
    let binv = prec.power_matrix(-1.0);
    let half_sq = rel_matrix(&(&half * &half), &b);

    let lam = prior.eigvals();
    let mut t_identity: f64 = 0.0;
    for s in [0.0, 0.25, 0.5] {
        let t = DMatrix::from_diagonal(&lam.map(|l| l.powf(-s))) * &half;
        let tinv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| steinflow::Error::NumericalFailure("singular T".into()))?;
        let c0s = DMatrix::from_diagonal(&lam.map(|l| l.powf(-2.0 * s)));
        t_identity = t_identity.max(rel_matrix(&(&tinv * c0s * tinv.transpose()), &binv));
    }

    let norm = HilbertScaleNorm::new(prior, 0.0);
    let h = 1.0;
    let gram = DMatrix::from_fn(fields.len(), fields.len(), |i, j| rbf(&fields[i], &fields[j], h, &norm));
    let eig = gram.symmetric_eigenvalues();
    let gram_deficit = (-eig.min() / eig.max()).max(0.0);
    Ok(vec![
        Check::at_most("C0 power semigroup", semigroup, IDENTITY_TOL),
        Check::at_most("B^1/2 B^1/2 = B", half_sq, IDENTITY_TOL),
        Check::at_most("T^-1 C0^s T^-* = B^-1", t_identity, IDENTITY_TOL),
        Check::at_most("kernel Gram positivity deficit", gram_deficit, GRAM_PSD_TOL),
    ])
}

/// Every check on a Darcy model, in report order.
pub fn all_checks(model: &DarcyModel<f64>, prior: &GaussianPrior<f64>, seed: u64) -> CliResult<(Vec<Check>, Vec<FdRow>)> {
    let mut checks = vec![gradient_check(model, prior, 5, seed)?];
    let table = fd_table(model, prior, seed + 11)?;
    checks.push(Check {
        name: "finite-difference error table is V-shaped".into(),
        measured: table[1].relative_error,
        tolerance: table[0].relative_error.min(table[2].relative_error),
        passed: is_v_shaped(&table),
    });
    checks.extend(hessian_checks(model, prior, seed + 21)?);
    checks.extend(reduction_checks(model, prior, seed + 31)?);
    checks.extend(operator_checks(model, prior, seed + 41)?);
    Ok((checks, table))
}
