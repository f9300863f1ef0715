//! Reference algorithms: pCN MCMC, inexact Newton-CG and gradient-descent
//! MAP estimation, and Laplace-approximation sampling.
//!
//! Optimisers work in prior eigenbasis coordinates `c`, where the prior
//! term of `V(u) = Phi(u) + |u - u0|^2_{H^1} / 2` is `sum lambda_k^2 (c_k - c0_k)^2 / 2`
//! and the Euclidean inner product equals the `M`-weighted one.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, numerical, Result};
use crate::kernels::Preconditioner;
use crate::models::ForwardModel;
use crate::prior::GaussianPrior;
use crate::stats::RunningMoments;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcnConfig {
    /// Step `beta` in `(0, 1]`.
    pub beta: f64,
    pub iters: usize,
    pub burn_in: usize,
    /// Store every `thin`-th state after burn-in.
    pub thin: usize,
    pub seed: u64,
}

impl Default for PcnConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            iters: 200_000,
            burn_in: 20_000,
            thin: 100,
            seed: 0,
        }
    }
}

/// Streaming statistics of one pCN chain.
#[derive(Debug, Clone)]
pub struct PcnChainStats<T: Real> {
    moments: RunningMoments<T>,
    thinned: Vec<DVector<T>>,
    accepted: usize,
    length: usize,
}

impl<T: Real> PcnChainStats<T> {
    /// Mean over post-burn-in states.
    pub fn mean(&self) -> &DVector<T> {
        self.moments.mean()
    }

    /// `1/count` variance over post-burn-in states.
    pub fn variance(&self) -> DVector<T> {
        self.moments.variance()
    }

    pub fn moments(&self) -> &RunningMoments<T> {
        &self.moments
    }

    pub fn thinned(&self) -> &[DVector<T>] {
        &self.thinned
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.length == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.length as f64
    }

    pub fn length(&self) -> usize {
        self.length
    }
}

/// Runs one pCN chain from `init` (the prior mean when `None`).
///
/// Proposal `v = u0 + sqrt(1 - beta^2) (u - u0) + beta xi`, `xi ~ N(0, C0)`,
/// accepted with probability `min(1, exp(Phi(u) - Phi(v)))`.
pub fn pcn<T: Real, M: ForwardModel<T> + ?Sized>(
    model: &M,
    prior: &GaussianPrior<T>,
    config: &PcnConfig,
    init: Option<&DVector<T>>,
) -> Result<PcnChainStats<T>> {
    if !(config.beta > 0.0 && config.beta <= 1.0) {
        return invalid(format!("pCN beta must lie in (0, 1], got {}", config.beta));
    }
    if config.thin == 0 {
        return invalid("pCN thinning must be at least 1");
    }
    if config.burn_in > config.iters {
        return invalid("burn-in exceeds the chain length");
    }
    let u0 = prior.mean();
    let mut u = init.cloned().unwrap_or_else(|| u0.clone());
    if u.len() != prior.dim() || model.dim() != prior.dim() {
        return invalid("chain state, model and prior dimensions differ");
    }
    let beta = T::lit(config.beta);
    let rho = T::lit((1.0 - config.beta * config.beta).max(0.0).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut phi = model.potential(&u)?;
    let mut stats = PcnChainStats {
        moments: RunningMoments::new(prior.dim()),
        thinned: Vec::with_capacity((config.iters - config.burn_in) / config.thin),
        accepted: 0,
        length: config.iters,
    };
    for it in 0..config.iters {
        let xi = prior.from_spectral(&prior.sample_centered_spectral(&mut rng));
        let v = u0 + (&u - u0) * rho + xi * beta;
        let phi_v = model.potential(&v)?;
        let log_a = (phi - phi_v).to_f64_lossy();
        let uniform: f64 = rand::Rng::random(&mut rng);
        if log_a >= 0.0 || uniform < log_a.exp() {
            u = v;
            phi = phi_v;
            stats.accepted += 1;
        }
        if it >= config.burn_in {
            stats.moments.push(&u);
            if (it + 1 - config.burn_in).is_multiple_of(config.thin) {
                stats.thinned.push(u.clone());
            }
        }
    }
    if !phi.is_finite() {
        return numerical("pCN chain reached a non-finite potential");
    }
    Ok(stats)
}

/// Tolerance rule for the inner conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CgRule {
    /// `eta_k = min(0.5, sqrt(|DV_k| / |DV_0|))`.
    EisenstatWalker,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub max_newton: usize,
    pub cg_rule: CgRule,
    /// Exact Hessian instead of Gauss-Newton in the Newton system.
    pub full_hessian: bool,
    /// Stop once `|DV| <= grad_rtol |DV_0|`.
    pub grad_rtol: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            max_newton: 10,
            cg_rule: CgRule::EisenstatWalker,
            full_hessian: false,
            grad_rtol: 1e-12,
        }
    }
}

/// Output of a MAP optimiser. `objective[k]` and `grad_norm[k]` belong to
/// iterate `k`, with iterate 0 the initial point.
#[derive(Debug, Clone)]
pub struct MapResult<T: Real> {
    pub point: DVector<T>,
    pub objective: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// Set when the line search gave up; `point` is then the best iterate.
    pub line_search_failed: bool,
}

impl<T: Real> MapResult<T> {
    pub fn iterations(&self) -> usize {
        self.objective.len() - 1
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("initial objective recorded")
    }
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

/// `V(u)` and its gradient in spectral coordinates.
struct Objective<'a, T: Real, M: ?Sized> {
    model: &'a M,
    prior: &'a GaussianPrior<T>,
    c0: DVector<T>,
    lam2: DVector<T>,
}

impl<'a, T: Real, M: ForwardModel<T> + ?Sized> Objective<'a, T, M> {
    fn new(model: &'a M, prior: &'a GaussianPrior<T>) -> Result<Self> {
        if model.dim() != prior.dim() {
            return invalid("model and prior dimensions differ");
        }
        Ok(Self {
            model,
            prior,
            c0: prior.to_spectral(prior.mean()),
            lam2: prior.eigvals().map(|l| l * l),
        })
    }

    fn regulariser(&self, c: &DVector<T>) -> T {
        let d = c - &self.c0;
        d.component_mul(&d).dot(&self.lam2) * T::lit(0.5)
    }

    fn value(&self, c: &DVector<T>) -> Result<T> {
        Ok(self.model.potential(&self.prior.from_spectral(c))? + self.regulariser(c))
    }

    fn value_grad(&self, c: &DVector<T>) -> Result<(T, DVector<T>)> {
        let (phi, g) = self.model.gradient(&self.prior.from_spectral(c))?;
        let grad = self.prior.dual_to_spectral(&g) + (c - &self.c0).component_mul(&self.lam2);
        Ok((phi + self.regulariser(c), grad))
    }

    /// Approximately solves `(H + Lambda^2) x = -grad` by CG preconditioned
    /// with `Lambda^-2`, stopping at relative residual `rtol` or on negative
    /// curvature.
    fn newton_step(&self, c: &DVector<T>, grad: &DVector<T>, rtol: T, full: bool) -> Result<DVector<T>> {
        let u = self.prior.from_spectral(c);
        let hess = self.model.hessian_at(&u, full)?;
        let apply = |p: &DVector<T>| -> Result<DVector<T>> {
            let hp = hess(&self.prior.from_spectral(p))?;
            Ok(self.prior.dual_to_spectral(&hp) + p.component_mul(&self.lam2))
        };
        let n = c.len();
        let b = -grad;
        let bnorm = b.norm();
        let mut x = DVector::zeros(n);
        if bnorm == T::zero() {
            return Ok(x);
        }
        let mut r = b.clone();
        let mut z = r.component_div(&self.lam2);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        for it in 0..n.max(1) * 2 {
            let ap = apply(&p)?;
            let curv = p.dot(&ap);
            if !(curv > T::zero()) {
                if it == 0 {
                    return Ok(z);
                }
                break;
            }
            let alpha = rz / curv;
            x.axpy(alpha, &p, T::one());
            r.axpy(-alpha, &ap, T::one());
            if r.norm() <= rtol * bnorm {
                break;
            }
            z = r.component_div(&self.lam2);
            let rz_next = r.dot(&z);
            p = &z + &p * (rz_next / rz);
            rz = rz_next;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return numerical("non-finite Newton step");
        }
        Ok(x)
    }
}

/// Backtracks from step `alpha0` along `dir` until the Armijo condition
/// holds; returns the accepted step and objective.
fn armijo<T: Real, M: ForwardModel<T> + ?Sized>(
    obj: &Objective<'_, T, M>,
    c: &DVector<T>,
    value: T,
    slope: T,
    dir: &DVector<T>,
    alpha0: T,
) -> Result<Option<(T, T, DVector<T>)>> {
    let mut alpha = alpha0;
    for _ in 0..=MAX_HALVINGS {
        let trial = c + dir * alpha;
        if let Ok(v) = obj.value(&trial) {
            if v.is_finite() && v <= value + T::lit(ARMIJO_C) * alpha * slope {
                return Ok(Some((alpha, v, trial)));
            }
        }
        alpha *= T::lit(0.5);
    }
    Ok(None)
}

/// Newton direction `-(H_GN + C0^-1)^-1 DV(u)` at `u` (nodal), solved by CG
/// to relative residual `rtol`.
pub fn newton_direction<T: Real, M: ForwardModel<T> + ?Sized>(
    model: &M,
    prior: &GaussianPrior<T>,
    u: &DVector<T>,
    rtol: f64,
    full_hessian: bool,
) -> Result<DVector<T>> {
    let obj = Objective::new(model, prior)?;
    let c = prior.to_spectral(u);
    let (_, grad) = obj.value_grad(&c)?;
    Ok(prior.from_spectral(&obj.newton_step(&c, &grad, T::lit(rtol), full_hessian)?))
}

/// Inexact Newton-CG with Armijo backtracking on `V`.
pub fn map_newton_cg<T: Real, M: ForwardModel<T> + ?Sized>(
    model: &M,
    prior: &GaussianPrior<T>,
    u_init: &DVector<T>,
    config: &MapConfig,
) -> Result<MapResult<T>> {
    if let CgRule::Fixed(eta) = config.cg_rule {
        if !(eta > 0.0 && eta < 1.0) {
            return invalid(format!("fixed CG tolerance must lie in (0, 1), got {eta}"));
        }
    }
    let obj = Objective::new(model, prior)?;
    check_init(prior, u_init)?;
    let mut c = prior.to_spectral(u_init);
    let (mut value, mut grad) = obj.value_grad(&c)?;
    let g0 = grad.norm();
    let mut out = MapResult {
        point: u_init.clone(),
        objective: vec![value.to_f64_lossy()],
        grad_norm: vec![g0.to_f64_lossy()],
        line_search_failed: false,
    };
    for _ in 0..config.max_newton {
        let gnorm = grad.norm();
        if gnorm <= T::lit(config.grad_rtol) * g0 {
            break;
        }
        let eta = match config.cg_rule {
            CgRule::EisenstatWalker => T::lit(0.5).min((gnorm / g0).sqrt()),
            CgRule::Fixed(eta) => T::lit(eta),
        };
        let step = obj.newton_step(&c, &grad, eta, config.full_hessian)?;
        let slope = grad.dot(&step);
        let Some((_, v, next)) = armijo(&obj, &c, value, slope, &step, T::one())? else {
            log::warn!("Newton-CG line search failed after {MAX_HALVINGS} halvings");
            out.line_search_failed = true;
            break;
        };
        c = next;
        (value, grad) = obj.value_grad(&c)?;
        debug_assert!(v.is_finite());
        out.objective.push(value.to_f64_lossy());
        out.grad_norm.push(grad.norm().to_f64_lossy());
    }
    out.point = prior.from_spectral(&c);
    Ok(out)
}

/// Steepest descent on `V` in the `M`-weighted `L^2` metric with Armijo
/// backtracking. Each trial step starts at twice the last accepted one.
pub fn map_gradient_descent<T: Real, M: ForwardModel<T> + ?Sized>(
    model: &M,
    prior: &GaussianPrior<T>,
    u_init: &DVector<T>,
    max_iters: usize,
) -> Result<MapResult<T>> {
    let obj = Objective::new(model, prior)?;
    check_init(prior, u_init)?;
    let mut c = prior.to_spectral(u_init);
    let (mut value, mut grad) = obj.value_grad(&c)?;
    let mut out = MapResult {
        point: u_init.clone(),
        objective: vec![value.to_f64_lossy()],
        grad_norm: vec![grad.norm().to_f64_lossy()],
        line_search_failed: false,
    };
    let mut alpha = T::one();
    for _ in 0..max_iters {
        let dir = -&grad;
        let slope = -grad.norm_squared();
        if slope == T::zero() {
            break;
        }
        let Some((a, _, next)) = armijo(&obj, &c, value, slope, &dir, alpha)? else {
            log::warn!("gradient descent line search failed after {MAX_HALVINGS} halvings");
            out.line_search_failed = true;
            break;
        };
        alpha = a * T::lit(2.0);
        c = next;
        (value, grad) = obj.value_grad(&c)?;
        out.objective.push(value.to_f64_lossy());
        out.grad_norm.push(grad.norm().to_f64_lossy());
    }
    out.point = prior.from_spectral(&c);
    Ok(out)
}

fn check_init<T: Real>(prior: &GaussianPrior<T>, u: &DVector<T>) -> Result<()> {
    if u.len() != prior.dim() {
        return invalid("initial point has the wrong length");
    }
    if u.iter().any(|v| !v.is_finite()) {
        return invalid("initial point is not finite");
    }
    Ok(())
}

/// `count` draws of `N(u_MAP, B^-1)` with `B` from `prec`:
/// `u = u_MAP + V B^{-1/2} xi` in prior eigenbasis coordinates.
pub fn laplace_sample<T: Real>(
    prior: &GaussianPrior<T>,
    map_point: &DVector<T>,
    prec: &Preconditioner<T>,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<T>>> {
    if map_point.len() != prior.dim() || prec.dim() != prior.dim() {
        return invalid("MAP point, preconditioner and prior dimensions differ");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = -T::lit(0.5);
    Ok((0..count)
        .map(|_| {
            let xi = DVector::from_iterator(
                prior.dim(),
                (0..prior.dim()).map(|_| {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    T::lit(z)
                }),
            );
            map_point + prior.from_spectral(&prec.power_spectral(half, &xi))
        })
        .collect())
}
