//! The four subcommands. Each writes its outputs plus `metadata.json` into
//! one directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use steinflow::baselines::{laplace_sample, map_gradient_descent, map_newton_cg, pcn, MapResult};
use steinflow::stats::{l2_discrepancy, StatsSummary};
use steinflow::svgd::{self, Ensemble};
use steinflow::{Field, ForwardModel, GaussianPrior, Preconditioner};

use crate::checks::{all_checks, Check, FdRow};
use crate::config::{InitKind, ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::*;
use crate::problem::{self, build_mesh, build_prior, resolve_truth, Model};

/// Sampler or optimiser selected by `run --algorithm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Plain,
    Mpo,
    Pcn,
    Map,
    Gd,
}

impl Engine {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "plain" => Ok(Self::Plain),
            "mpo" => Ok(Self::Mpo),
            "pcn" => Ok(Self::Pcn),
            "map" => Ok(Self::Map),
            "gd" => Ok(Self::Gd),
            other => Err(CliError::Config(format!("unknown algorithm {other:?}; expected plain, mpo, pcn, map or gd"))),
        }
    }
}

fn prepare_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn finish(mut meta: Metadata, started: Instant, dir: &Path) -> CliResult<()> {
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    meta.write(dir)
}

/// Writes observations of the configured truth into `dir`.
pub fn synthesize(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    prepare_dir(dir)?;
    let mesh = build_mesh(cfg)?;
    let truth = resolve_truth(cfg, &mesh)?;
    let (setup, syn) = problem::synthesize(cfg, &mesh, &truth)?;
    write_observations(&dir.join(OBSERVATIONS_FILE), setup.points(), &syn.noisy, syn.sigma)?;
    write_observations(&dir.join(NOISE_FREE_FILE), setup.points(), &syn.clean, 0.0)?;
    truth.save(dir.join("truth.sfld"))?;
    write_nodal_csv(&dir.join("truth.csv"), &mesh, truth.as_vector())?;
    let mut meta = Metadata::new("synthesize", cfg);
    meta.record("sigma", syn.sigma);
    meta.record("observations", syn.noisy.len());
    log::info!("wrote {} observations with sigma {:.3e} to {}", syn.noisy.len(), syn.sigma, dir.display());
    finish(meta, started, dir)
}

/// MAP point by inexact Newton-CG from the prior mean.
fn map_point(cfg: &RunConfig, model: &dyn ForwardModel<f64>, prior: &GaussianPrior<f64>) -> CliResult<MapResult<f64>> {
    Ok(map_newton_cg(model, prior, prior.mean(), &cfg.map_config()?)?)
}

/// Initial ensemble: prior draws or draws from the Laplace approximation.
pub fn initial_ensemble(
    cfg: &RunConfig,
    model: &dyn ForwardModel<f64>,
    prior: &GaussianPrior<f64>,
) -> CliResult<Vec<DVector<f64>>> {
    match cfg.svgd.init {
        InitKind::Prior => Ok(prior.sample(cfg.svgd.seed, cfg.svgd.m).into_iter().map(Field::into_vector).collect()),
        InitKind::Laplace => {
            let map = map_point(cfg, model, prior)?;
            let prec = Preconditioner::build(model, prior, &map.point, cfg.rank()?)?;
            Ok(laplace_sample(prior, &map.point, &prec, cfg.svgd.m, cfg.svgd.seed)?)
        }
    }
}

fn write_summary(cfg: &RunConfig, dir: &Path, mesh: &steinflow::Mesh, samples: &[DVector<f64>]) -> CliResult<()> {
    let summary = StatsSummary::from_samples(samples, &cfg.output.lags)?;
    write_nodal_csv(&dir.join(MEAN_FILE), mesh, &summary.mean)?;
    write_nodal_csv(&dir.join(VARIANCE_FILE), mesh, &summary.variance)?;
    write_covariance_csv(&dir.join(COVARIANCE_FILE), &summary.covariance)?;
    if cfg.output.write_samples {
        write_samples(dir, mesh, samples)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    objective: f64,
    grad_norm: f64,
}

fn write_map(dir: &Path, mesh: &steinflow::Mesh, result: &MapResult<f64>, meta: &mut Metadata) -> CliResult<()> {
    Field::new(mesh, result.point.clone())?.save(dir.join("map.sfld"))?;
    write_nodal_csv(&dir.join("map.csv"), mesh, &result.point)?;
    let mut w = csv::Writer::from_path(dir.join("map_trace.csv"))?;
    for (iteration, (&objective, &grad_norm)) in result.objective.iter().zip(&result.grad_norm).enumerate() {
        w.serialize(TraceRow { iteration, objective, grad_norm })?;
    }
    w.flush()?;
    meta.record("iterations", result.iterations());
    meta.record("final_objective", result.final_objective());
    meta.record("line_search_failed", result.line_search_failed);
    Ok(())
}

/// Runs one engine on the data in `model.data`, writing into `dir`.
pub fn run(cfg: &RunConfig, engine: Engine, dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    prepare_dir(dir)?;
    let prob = problem::build(cfg)?;
    let model = prob.model.as_dyn();
    let prior = &prob.prior;
    let mut meta = Metadata::new("run", cfg);
    meta.record("algorithm", format!("{engine:?}").to_lowercase());
    match engine {
        Engine::Plain | Engine::Mpo => {
            let mut svgd_cfg = cfg.svgd_config()?;
            svgd_cfg.algorithm = if engine == Engine::Plain { svgd::Algorithm::Plain } else { svgd::Algorithm::Mpo };
            let mut ens = Ensemble::new(initial_ensemble(cfg, model, prior)?)?;
            let outcome = svgd::run(model, prior, &svgd_cfg, &mut ens);
            write_diagnostics_csv(&dir.join(DIAGNOSTICS_FILE), ens.diagnostics())?;
            if let Err(e) = outcome {
                meta.record("error", e.to_string());
                finish(meta, started, dir)?;
                return Err(e.into());
            }
            meta.record("iterations", ens.iteration());
            meta.record("eps", svgd_cfg.eps.unwrap_or_else(|| svgd::default_eps(svgd_cfg.algorithm, prior)));
            write_summary(cfg, dir, &prob.mesh, ens.particles())?;
        }
        Engine::Pcn => {
            let init = if cfg.pcn.start_at_map { Some(map_point(cfg, model, prior)?.point) } else { None };
            let chain = pcn(model, prior, &cfg.pcn_config(), init.as_ref())?;
            meta.record("acceptance_rate", chain.acceptance_rate());
            meta.record("length", chain.length());
            meta.record("retained", chain.moments().count());
            let summary = StatsSummary::from_samples(chain.thinned(), &cfg.output.lags)?;
            write_nodal_csv(&dir.join(MEAN_FILE), &prob.mesh, chain.mean())?;
            write_nodal_csv(&dir.join(VARIANCE_FILE), &prob.mesh, &chain.variance())?;
            write_covariance_csv(&dir.join(COVARIANCE_FILE), &summary.covariance)?;
            if cfg.output.write_samples {
                write_samples(dir, &prob.mesh, chain.thinned())?;
            }
            log::info!("pCN acceptance rate {:.3}", chain.acceptance_rate());
        }
        Engine::Map => {
            let result = map_point(cfg, model, prior)?;
            write_map(dir, &prob.mesh, &result, &mut meta)?;
        }
        Engine::Gd => {
            let result = map_gradient_descent(model, prior, prior.mean(), cfg.map.gd_iters)?;
            write_map(dir, &prob.mesh, &result, &mut meta)?;
        }
    }
    finish(meta, started, dir)
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub perturbed_adjoint_sign: bool,
    pub checks: Vec<Check>,
    pub fd_table: Vec<FdRow>,
}

/// Derivative and operator self-checks on a Darcy problem built from the
/// configured truth. Fails with [`CliError::Verification`] when any check
/// fails.
pub fn verify(cfg: &RunConfig, perturb_adjoint_sign: bool) -> CliResult<VerifyReport> {
    let mut cfg = cfg.clone();
    cfg.model.kind = ModelKind::Darcy;
    let mesh = build_mesh(&cfg)?;
    let prior = build_prior(&cfg, &mesh)?;
    let truth = resolve_truth(&cfg, &mesh)?;
    let (setup, syn) = problem::synthesize(&cfg, &mesh, &truth)?;
    let obs = Observations {
        points: setup.points().to_vec(),
        values: syn.noisy,
        sigma: syn.sigma,
    };
    let Model::Darcy(mut model) = problem::build_with(&cfg, obs)?.model else {
        unreachable!("model kind forced to Darcy");
    };
    if perturb_adjoint_sign {
        model = model.with_perturbed_adjoint_sign();
    }
    let (checks, fd_table) = all_checks(&model, &prior, cfg.prior.seed)?;
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        perturbed_adjoint_sign: perturb_adjoint_sign,
        checks,
        fd_table,
    })
}

#[derive(Serialize)]
struct DiscrepancyRow {
    quantity: String,
    l2: f64,
    relative: f64,
}

/// Mean, variance and covariance of a directory of field files; against a
/// reference run directory (or samples directory) also their `L^2`
/// discrepancies.
pub fn stats(cfg: &RunConfig, samples_dir: &Path, reference: Option<&Path>, dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    prepare_dir(dir)?;
    let fields = read_samples(samples_dir)?;
    let mesh = steinflow::Mesh::new(fields[0].ng())?;
    let samples: Vec<DVector<f64>> = fields.into_iter().map(Field::into_vector).collect();
    let summary = StatsSummary::from_samples(&samples, &cfg.output.lags)?;
    write_nodal_csv(&dir.join(MEAN_FILE), &mesh, &summary.mean)?;
    write_nodal_csv(&dir.join(VARIANCE_FILE), &mesh, &summary.variance)?;
    write_covariance_csv(&dir.join(COVARIANCE_FILE), &summary.covariance)?;
    let mut meta = Metadata::new("stats", cfg);
    meta.record("samples", samples.len());
    if let Some(reference) = reference {
        let (mean, variance, covariance) = load_reference(reference, &cfg.output.lags)?;
        let mut rows = vec![("mean".to_string(), &summary.mean, &mean), ("variance".to_string(), &summary.variance, &variance)];
        for (lag, values) in &summary.covariance {
            let Some(r) = covariance.get(lag) else {
                return Err(CliError::Data(format!("reference lacks the covariance at lag {lag}")));
            };
            rows.push((format!("covariance_lag_{lag}"), values, r));
        }
        let mut w = csv::Writer::from_path(dir.join("discrepancies.csv"))?;
        let mut record = BTreeMap::new();
        for (quantity, a, b) in rows {
            if a.len() != b.len() {
                return Err(CliError::Data(format!("{quantity}: samples and reference come from different meshes")));
            }
            let l2 = l2_discrepancy(a, b)?;
            let relative = l2 / b.norm();
            record.insert(quantity.clone(), relative);
            w.serialize(DiscrepancyRow { quantity, l2, relative })?;
        }
        w.flush()?;
        meta.record("relative_discrepancies", record);
    }
    finish(meta, started, dir)
}

type Moments = (DVector<f64>, DVector<f64>, BTreeMap<usize, DVector<f64>>);

fn load_reference(path: &Path, lags: &[usize]) -> CliResult<Moments> {
    if path.join(MEAN_FILE).is_file() {
        return Ok((
            read_nodal_csv(&path.join(MEAN_FILE))?,
            read_nodal_csv(&path.join(VARIANCE_FILE))?,
            read_covariance_csv(&path.join(COVARIANCE_FILE))?,
        ));
    }
    let samples: Vec<DVector<f64>> = read_samples(path)?.into_iter().map(Field::into_vector).collect();
    let s = StatsSummary::from_samples(&samples, lags)?;
    Ok((s.mean, s.variance, s.covariance))
}
