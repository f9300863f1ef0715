//! Stein variational gradient descent on the discretised function space.
//!
//! Two update engines are provided. The plain engine uses a scalar RBF
//! kernel on an `H^t` norm. The mixture-preconditioned engine blends
//! per-anchor operator-valued kernels `K_l(u, x) = B_l^-1 k_l(u, x)` with
//! softmax weights `w_l(u)`, where `k_l(u, x) = exp(-|T_l (u - x)|^2 / h)`,
//! `T_l = C0^{s/2} B_l^{1/2}` and `w_l(u)` is proportional to
//! `exp(-|T_l (u - v_l)|^2 / 2)`.
//!
//! Directions are empirical means over the ensemble and are not normalised;
//! the step size carries the scale. All internal algebra runs in prior
//! eigenbasis coordinates.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{invalid, numerical, Result};
use crate::kernels::{KernelConfig, KernelDerivative, PrecondRank, Preconditioner};
use crate::models::ForwardModel;
use crate::prior::GaussianPrior;
use crate::stats::variance_function;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Plain,
    Mpo,
}

/// How the Hilbert-scale exponent `s` is chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SMode {
    Fixed(f64),
    /// `s = 0.5 (1 - |var| / |var_0|)`, clamped to `[0, 0.5]`.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SPolicy {
    pub mode: SMode,
    /// `|var_0|` of the initial ensemble, set on first use.
    pub var0_norm: Option<f64>,
}

impl SPolicy {
    pub fn new(mode: SMode) -> Self {
        Self { mode, var0_norm: None }
    }

    pub fn resolve(&mut self, var_norm: f64) -> Result<f64> {
        match self.mode {
            SMode::Fixed(s) if (0.0..=0.5).contains(&s) => Ok(s),
            SMode::Fixed(s) => invalid(format!("s must lie in [0, 0.5], got {s}")),
            SMode::Adaptive => {
                let var0 = *self.var0_norm.get_or_insert(var_norm);
                adaptive_s(var_norm, var0)
            }
        }
    }
}

/// `0.5 (1 - var_now / var0)` clamped to `[0, 0.5]`.
pub fn adaptive_s(var_now_norm: f64, var0_norm: f64) -> Result<f64> {
    if !(var0_norm > 0.0) {
        return invalid(format!("initial variance norm must be positive, got {var0_norm}"));
    }
    Ok((0.5 - 0.5 * var_now_norm / var0_norm).clamp(0.0, 0.5))
}

/// Diagnostics of one iteration; `s`, `h`, `mean_potential` and
/// `var_norm_ratio` describe the ensemble before the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub s: f64,
    pub h: f64,
    pub eps: f64,
    pub max_update_norm: f64,
    pub mean_potential: f64,
    pub var_norm_ratio: f64,
}

impl IterationRecord {
    pub fn new(s: f64, h: f64, mean_potential: f64, var_norm_ratio: f64) -> Self {
        Self {
            iteration: 0,
            s,
            h,
            eps: 0.0,
            max_update_norm: 0.0,
            mean_potential,
            var_norm_ratio,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble<T: Real> {
    particles: Vec<DVector<T>>,
    iteration: usize,
    diagnostics: Vec<IterationRecord>,
}

impl<T: Real> Ensemble<T> {
    pub fn new(particles: Vec<DVector<T>>) -> Result<Self> {
        let Some(first) = particles.first() else {
            return invalid("an ensemble needs at least one particle");
        };
        if particles.iter().any(|p| p.len() != first.len()) {
            return invalid("particles have different lengths");
        }
        if particles.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return invalid("non-finite particle");
        }
        Ok(Self {
            particles,
            iteration: 0,
            diagnostics: Vec::new(),
        })
    }

    pub fn particles(&self) -> &[DVector<T>] {
        &self.particles
    }

    pub fn into_particles(self) -> Vec<DVector<T>> {
        self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn diagnostics(&self) -> &[IterationRecord] {
        &self.diagnostics
    }

    /// `|var|_2` of the nodal `1/m` variance; zero for a single particle.
    pub fn variance_norm(&self) -> T {
        if self.particles.len() < 2 {
            return T::zero();
        }
        variance_function(&self.particles).map(|v| v.norm()).unwrap_or(T::zero())
    }

    /// Synchronous update `u_i += eps * phi_i`; records the largest update
    /// `L^2` norm in `record` and appends it.
    pub fn step(
        &mut self,
        prior: &GaussianPrior<T>,
        directions: &[DVector<T>],
        eps: T,
        mut record: IterationRecord,
    ) -> Result<()> {
        let next = self.trial(directions, eps)?;
        let mut max_norm = T::zero();
        for d in directions {
            max_norm = max_norm.max(prior.hilbert_norm(T::zero(), &(d * eps)));
        }
        self.particles = next;
        self.iteration += 1;
        record.iteration = self.iteration;
        record.eps = eps.to_f64_lossy();
        record.max_update_norm = max_norm.to_f64_lossy();
        self.diagnostics.push(record);
        Ok(())
    }

    fn trial(&self, directions: &[DVector<T>], eps: T) -> Result<Vec<DVector<T>>> {
        if directions.len() != self.particles.len() {
            return invalid(format!("{} directions for {} particles", directions.len(), self.particles.len()));
        }
        if !(eps >= T::zero()) {
            return invalid(format!("step size must be nonnegative, got {eps}"));
        }
        let next: Vec<DVector<T>> = self.particles.iter().zip(directions).map(|(u, d)| u + d * eps).collect();
        if let Some(i) = next.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return numerical(format!("particle {i} became non-finite"));
        }
        Ok(next)
    }
}

/// Update directions for every particle together with the resolved
/// bandwidth and the potentials seen while computing them.
#[derive(Debug, Clone)]
pub struct Directions<T> {
    pub fields: Vec<DVector<T>>,
    pub h: T,
    pub potentials: Vec<T>,
}

/// Potential and spectral coordinates of `DV = DPhi + C0^-1 (u - u0)` at
/// every particle.
struct Evaluated<T> {
    coords: Vec<DVector<T>>,
    dv: Vec<DVector<T>>,
    potentials: Vec<T>,
}

fn evaluate<T: Real, M: ForwardModel<T> + ?Sized>(
    model: &M,
    prior: &GaussianPrior<T>,
    particles: &[DVector<T>],
) -> Result<Evaluated<T>> {
    if model.dim() != prior.dim() {
        return invalid("model and prior dimensions differ");
    }
    if particles.iter().any(|p| p.len() != prior.dim()) {
        return invalid("particle length does not match the prior");
    }
    let c0 = prior.to_spectral(prior.mean());
    let lam2 = prior.eigvals().map(|l| l * l);
    let per: Vec<(T, DVector<T>, DVector<T>)> = particles
        .par_iter()
        .map(|u| {
            let (phi, g) = model.gradient(u)?;
            let c = prior.to_spectral(u);
            let dv = prior.dual_to_spectral(&g) + (&c - &c0).component_mul(&lam2);
            Ok((phi, c, dv))
        })
        .collect::<Result<_>>()?;
    let mut out = Evaluated {
        coords: Vec::with_capacity(per.len()),
        dv: Vec::with_capacity(per.len()),
        potentials: Vec::with_capacity(per.len()),
    };
    for (phi, c, dv) in per {
        out.potentials.push(phi);
        out.coords.push(c);
        out.dv.push(dv);
    }
    Ok(out)
}

fn to_nodal<T: Real>(prior: &GaussianPrior<T>, spectral: Vec<DVector<T>>) -> Result<Vec<DVector<T>>> {
    spectral
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            if c.iter().any(|v| !v.is_finite()) {
                return numerical(format!("non-finite direction for particle {i}"));
            }
            Ok(prior.from_spectral(&c))
        })
        .collect()
}

/// Plain direction
/// `phi(u_i) = (1/m) sum_j [k(u_j, u_i) (-DV(u_j)) + (2/h) k(u_j, u_i) C0^-t (u_i - u_j)]`.
pub fn plain_direction<T: Real, M: ForwardModel<T> + ?Sized>(
    particles: &[DVector<T>],
    model: &M,
    prior: &GaussianPrior<T>,
    kernel: &KernelConfig,
) -> Result<Directions<T>> {
    plain_direction_projected(particles, model, prior, kernel, prior.dim())
}

/// As [`plain_direction`] with particles and gradients projected onto the
/// leading `modes` prior eigenfunctions.
pub fn plain_direction_projected<T: Real, M: ForwardModel<T> + ?Sized>(
    particles: &[DVector<T>],
    model: &M,
    prior: &GaussianPrior<T>,
    kernel: &KernelConfig,
    modes: usize,
) -> Result<Directions<T>> {
    let mut ev = evaluate(model, prior, particles)?;
    if modes < prior.dim() {
        for v in ev.coords.iter_mut().chain(ev.dv.iter_mut()) {
            v.rows_mut(modes, prior.dim() - modes).fill(T::zero());
        }
    }
    let (fields, h) = plain_spectral(prior, &ev.coords, &ev.dv, kernel)?;
    Ok(Directions {
        fields: to_nodal(prior, fields)?,
        h,
        potentials: ev.potentials,
    })
}

fn plain_spectral<T: Real>(
    prior: &GaussianPrior<T>,
    coords: &[DVector<T>],
    dv: &[DVector<T>],
    kernel: &KernelConfig,
) -> Result<(Vec<DVector<T>>, T)> {
    let m = coords.len();
    let t = T::lit(kernel.norm_order);
    // squared H^t norm weights and Gram operator C0^-t share lambda^{2t}
    let gram = prior.c0_power_diag(-t);
    let sqdist = |a: &DVector<T>, b: &DVector<T>| {
        a.iter()
            .zip(b.iter())
            .zip(gram.iter())
            .fold(T::zero(), |acc, ((&x, &y), &g)| acc + g * (x - y) * (x - y))
    };
    let mut d2 = vec![vec![T::zero(); m]; m];
    let mut dist = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in 0..i {
            let v = sqdist(&coords[i], &coords[j]);
            d2[i][j] = v;
            d2[j][i] = v;
            dist.push(v.sqrt());
        }
    }
    let h = kernel.resolve(&dist, m)?;
    let two_over_h = T::lit(2.0) / h;
    let inv_m = T::one() / T::from_count(m);
    let fields = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut acc = DVector::zeros(prior.dim());
            for j in 0..m {
                let k = (-d2[j][i] / h).exp();
                acc.axpy(-k, &dv[j], T::one());
                let diff = (&coords[i] - &coords[j]).component_mul(&gram);
                acc.axpy(two_over_h * k, &diff, T::one());
            }
            acc * inv_m
        })
        .collect();
    Ok((fields, h))
}

/// Builds one preconditioner per anchor in parallel.
pub fn build_preconditioners<T: Real, M: ForwardModel<T> + ?Sized>(
    model: &M,
    prior: &GaussianPrior<T>,
    anchors: &[DVector<T>],
    rank: PrecondRank,
) -> Result<Vec<Preconditioner<T>>> {
    if model.gn_is_constant() && !anchors.is_empty() {
        let base = Preconditioner::build(model, prior, &anchors[0], rank)?;
        return Ok(anchors.iter().map(|a| base.with_anchor(a)).collect());
    }
    anchors
        .par_iter()
        .map(|a| Preconditioner::build(model, prior, a, rank))
        .collect()
}

/// Mixture-preconditioned direction
///
/// `phi(x_i) = sum_l w_l(x_i) B_l^-1 sum_j w_l(u_j) k_l(u_j, x_i)
///   [-DV(u_j) - (2/h) G_l (u_j - x_i) - G_l (u_j - v_l) + y_j]`
///
/// with `G_l` chosen by [`KernelConfig::derivative`] and `y_j = sum_l w_l(u_j) G_l (u_j - v_l)`.
/// The sum over particles is not divided by `m`: the weights `w_l(u_j)`
/// already restrict it to the particles near anchor `l`.
pub fn mpo_direction<T: Real, M: ForwardModel<T> + ?Sized>(
    particles: &[DVector<T>],
    model: &M,
    prior: &GaussianPrior<T>,
    precs: &[Preconditioner<T>],
    s: T,
    kernel: &KernelConfig,
) -> Result<Directions<T>> {
    if precs.is_empty() {
        return invalid("at least one preconditioner is required");
    }
    if !(s >= T::zero() && s <= T::lit(0.5)) {
        return invalid(format!("s must lie in [0, 0.5], got {s}"));
    }
    let ev = evaluate(model, prior, particles)?;
    let (fields, h) = mpo_spectral(prior, &ev.coords, &ev.dv, precs, s, kernel)?;
    Ok(Directions {
        fields: to_nodal(prior, fields)?,
        h,
        potentials: ev.potentials,
    })
}

struct AnchorTerms<T> {
    /// `T_l u_j`
    t_u: Vec<DVector<T>>,
    /// `G_l u_j`
    g_u: Vec<DVector<T>>,
    t_a: DVector<T>,
    g_a: DVector<T>,
}

fn mpo_spectral<T: Real>(
    prior: &GaussianPrior<T>,
    coords: &[DVector<T>],
    dv: &[DVector<T>],
    precs: &[Preconditioner<T>],
    s: T,
    kernel: &KernelConfig,
) -> Result<(Vec<DVector<T>>, T)> {
    let m = coords.len();
    let nl = precs.len();
    let terms: Vec<AnchorTerms<T>> = precs
        .par_iter()
        .map(|p| {
            let a = prior.to_spectral(p.anchor());
            let g = |c: &DVector<T>| match kernel.derivative {
                KernelDerivative::Exact => p.tt_spectral(s, c),
                KernelDerivative::ClosedForm => p.gram_spectral(s, c),
            };
            AnchorTerms {
                t_u: coords.iter().map(|c| p.t_map_spectral(s, c)).collect(),
                g_u: coords.iter().map(&g).collect(),
                t_a: p.t_map_spectral(s, &a),
                g_a: g(&a),
            }
        })
        .collect();

    // log w_l(u_j), normalised over l
    let mut logw = vec![vec![T::zero(); m]; nl];
    for j in 0..m {
        let logits: Vec<T> = terms.iter().map(|t| -(&t.t_u[j] - &t.t_a).norm_squared() * T::lit(0.5)).collect();
        let top = logits.iter().copied().fold(logits[0], T::max);
        let lse = top + logits.iter().fold(T::zero(), |acc, &l| acc + (l - top).exp()).ln();
        for l in 0..nl {
            logw[l][j] = logits[l] - lse;
        }
    }
    let w: Vec<Vec<T>> = logw.iter().map(|row| row.iter().map(|v| v.exp()).collect()).collect();
    if w.iter().flatten().any(|v| !v.is_finite()) {
        return numerical("non-finite mixture weights");
    }

    // squared T_l distances between particles
    let mut d2 = vec![vec![vec![T::zero(); m]; m]; nl];
    let mut dist = Vec::with_capacity(nl * m * (m.saturating_sub(1)) / 2);
    for (l, t) in terms.iter().enumerate() {
        for i in 0..m {
            for j in 0..i {
                let v = (&t.t_u[i] - &t.t_u[j]).norm_squared();
                d2[l][i][j] = v;
                d2[l][j][i] = v;
                dist.push(v.sqrt());
            }
        }
    }
    let h = kernel.resolve(&dist, m)?;
    let two_over_h = T::lit(2.0) / h;

    let y: Vec<DVector<T>> = (0..m)
        .map(|j| {
            let mut acc = DVector::zeros(prior.dim());
            for (l, t) in terms.iter().enumerate() {
                acc.axpy(w[l][j], &(&t.g_u[j] - &t.g_a), T::one());
            }
            acc
        })
        .collect();

    let fields = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut out = DVector::zeros(prior.dim());
            for (l, t) in terms.iter().enumerate() {
                if w[l][i] == T::zero() {
                    continue;
                }
                let mut r = DVector::zeros(prior.dim());
                for j in 0..m {
                    let c = w[l][j] * (-d2[l][j][i] / h).exp();
                    if c == T::zero() {
                        continue;
                    }
                    let mut term = -&dv[j] + &y[j];
                    term.axpy(-two_over_h, &(&t.g_u[j] - &t.g_u[i]), T::one());
                    term.axpy(-T::one(), &(&t.g_u[j] - &t.g_a), T::one());
                    r.axpy(c, &term, T::one());
                }
                out.axpy(w[l][i], &precs[l].binv_spectral(&r), T::one());
            }
            out
        })
        .collect();
    Ok((fields, h))
}

/// Mixture weights `w_l(u)` at an arbitrary point, for every anchor.
pub fn mixture_weights<T: Real>(prior: &GaussianPrior<T>, precs: &[Preconditioner<T>], s: T, u: &DVector<T>) -> Vec<T> {
    let logits: Vec<T> = precs
        .iter()
        .map(|p| -p.t_norm_sq(prior, s, &(u - p.anchor())) * T::lit(0.5))
        .collect();
    let top = logits.iter().copied().fold(logits[0], T::max);
    let lse = top + logits.iter().fold(T::zero(), |acc, &l| acc + (l - top).exp()).ln();
    logits.into_iter().map(|l| (l - lse).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgdConfig {
    pub algorithm: Algorithm,
    pub iters: usize,
    /// Step size; `None` selects [`default_eps`].
    pub eps: Option<f64>,
    pub s: SMode,
    pub kernel: KernelConfig,
    pub rank: PrecondRank,
    /// Rebuild preconditioners every this many iterations.
    pub refresh_every: usize,
    /// Stop once the largest update norm falls below this value.
    pub tol: f64,
    /// Halve the step (up to ten times) when the mean potential grows by
    /// more than a factor 1.5.
    pub backtrack: bool,
}

impl Default for SvgdConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Mpo,
            iters: 30,
            eps: None,
            s: SMode::Adaptive,
            kernel: KernelConfig::default(),
            rank: PrecondRank::Dense,
            refresh_every: 1,
            tol: 1e-6,
            backtrack: true,
        }
    }
}

/// `0.1` for the mixture engine, a damped Newton flow; `1e-3` times the smallest prior covariance
/// eigenvalue for the plain engine.
pub fn default_eps<T: Real>(algorithm: Algorithm, prior: &GaussianPrior<T>) -> f64 {
    match algorithm {
        Algorithm::Mpo => 0.1,
        Algorithm::Plain => {
            let lmax = prior.eigvals().max().to_f64_lossy();
            1e-3 / (lmax * lmax)
        }
    }
}

const MAX_HALVINGS: usize = 10;
const GROWTH_LIMIT: f64 = 1.5;

/// Runs `config.iters` iterations on `ens` in place. On error the ensemble
/// keeps every completed iteration and its diagnostics.
pub fn run<T: Real, M: ForwardModel<T> + ?Sized>(
    model: &M,
    prior: &GaussianPrior<T>,
    config: &SvgdConfig,
    ens: &mut Ensemble<T>,
) -> Result<()> {
    if config.refresh_every == 0 {
        return invalid("refresh_every must be at least 1");
    }
    let eps0 = T::lit(config.eps.unwrap_or_else(|| default_eps(config.algorithm, prior)));
    if !(eps0 > T::zero()) {
        return invalid(format!("step size must be positive, got {eps0}"));
    }
    let mut policy = SPolicy::new(config.s);
    let var0 = ens.variance_norm().to_f64_lossy();
    let mut precs: Vec<Preconditioner<T>> = Vec::new();
    for it in 0..config.iters {
        let var_norm = ens.variance_norm().to_f64_lossy();
        let ratio = if var0 > 0.0 { var_norm / var0 } else { f64::NAN };
        let s = policy.resolve(var_norm)?;
        let dirs = match config.algorithm {
            Algorithm::Plain => plain_direction(ens.particles(), model, prior, &config.kernel)?,
            Algorithm::Mpo => {
                if precs.is_empty() || it % config.refresh_every == 0 {
                    precs = build_preconditioners(model, prior, ens.particles(), config.rank)?;
                }
                mpo_direction(ens.particles(), model, prior, &precs, T::lit(s), &config.kernel)?
            }
        };
        let mean_pot = mean(&dirs.potentials);
        let mut eps = eps0;
        if config.backtrack {
            for _ in 0..MAX_HALVINGS {
                let trial = ens.trial(&dirs.fields, eps)?;
                let pots: Vec<T> = trial.par_iter().map(|u| model.potential(u)).collect::<Result<_>>()?;
                if mean(&pots) <= mean_pot * GROWTH_LIMIT {
                    break;
                }
                eps *= T::lit(0.5);
            }
        }
        let record = IterationRecord::new(s, dirs.h.to_f64_lossy(), mean_pot, ratio);
        ens.step(prior, &dirs.fields, eps, record)?;
        log::debug!(
            "iteration {} s={s:.3} h={:.3e} mean potential {mean_pot:.4e}",
            ens.iteration(),
            dirs.h
        );
        if ens.diagnostics().last().is_some_and(|r| r.max_update_norm < config.tol) {
            break;
        }
    }
    Ok(())
}

fn mean<T: Real>(v: &[T]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / v.len() as f64
}
