//! Builds the mesh, prior, measurement setup and forward model described
//! by a configuration.

use std::path::Path;

use nalgebra::DVector;
use steinflow::models::{default_grid, synthesize_data, DarcyModel, ForwardModel, LinearGaussianModel, MeasurementSetup, SyntheticData};
use steinflow::{Field, GaussianPrior, Mesh};

use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{read_observations, Observations};

/// Forward model selected by `model.kind`; one per run, so the size gap
/// between variants does not matter.
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Darcy(DarcyModel<f64>),
    Linear(LinearGaussianModel<f64>),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn ForwardModel<f64> {
        match self {
            Model::Darcy(m) => m,
            Model::Linear(m) => m,
        }
    }
}

pub struct Problem {
    pub mesh: Mesh,
    pub prior: GaussianPrior<f64>,
    pub setup: MeasurementSetup<f64>,
    pub model: Model,
}

pub fn build_mesh(cfg: &RunConfig) -> CliResult<Mesh> {
    Ok(Mesh::new(cfg.mesh.ng)?)
}

pub fn build_prior(cfg: &RunConfig, mesh: &Mesh) -> CliResult<GaussianPrior<f64>> {
    let mean = if cfg.prior.mean == "zero" {
        Field::zeros(mesh)
    } else {
        load_field(Path::new(&cfg.prior.mean), mesh)?
    };
    Ok(GaussianPrior::new(mesh, cfg.prior.alpha, &mean)?)
}

fn load_field(path: &Path, mesh: &Mesh) -> CliResult<Field<f64>> {
    let f = Field::load(path)?;
    if !f.matches(mesh) {
        return Err(CliError::Data(format!("{} does not match a mesh with ng = {}", path.display(), mesh.ng())));
    }
    Ok(f)
}

/// Truth field from a field file path or an expression in `x` and `y`.
pub fn resolve_truth(cfg: &RunConfig, mesh: &Mesh) -> CliResult<Field<f64>> {
    let source = cfg.model.truth.trim();
    let path = Path::new(source);
    if path.is_file() {
        return load_field(path, mesh);
    }
    let expr: meval::Expr = source
        .parse()
        .map_err(|e| CliError::Config(format!("model.truth is neither a file nor an expression: {e}")))?;
    let f = expr
        .bind2("x", "y")
        .map_err(|e| CliError::Config(format!("model.truth may only use x and y: {e}")))?;
    Field::from_fn(mesh, f).map_err(|e| CliError::Config(format!("model.truth: {e}")))
}

fn blank_setup(cfg: &RunConfig, mesh: &Mesh) -> CliResult<MeasurementSetup<f64>> {
    let k = cfg.model.grid;
    Ok(MeasurementSetup::new(mesh, default_grid(k), cfg.model.delta, 1.0, DVector::zeros(k * k))?)
}

fn darcy_model(cfg: &RunConfig, mesh: &Mesh, setup: MeasurementSetup<f64>) -> CliResult<DarcyModel<f64>> {
    let source = DVector::from_element(mesh.num_nodes(), cfg.model.source);
    Ok(DarcyModel::new(mesh, &source, setup)?)
}

/// Noise-free observations of `truth` and their noisy copy.
pub fn synthesize(cfg: &RunConfig, mesh: &Mesh, truth: &Field<f64>) -> CliResult<(MeasurementSetup<f64>, SyntheticData<f64>)> {
    let setup = blank_setup(cfg, mesh)?;
    let clean = match cfg.model.kind {
        ModelKind::Darcy => {
            let model = darcy_model(cfg, mesh, setup.clone())?;
            model.observe(&model.solve_forward(truth.as_vector())?)
        }
        ModelKind::Linear => setup.observe(truth.as_vector()),
    };
    let syn = synthesize_data(clean, cfg.model.noise, cfg.model.noise_seed)?;
    Ok((setup, syn))
}

/// Builds the full problem, reading data from `model.data`.
pub fn build(cfg: &RunConfig) -> CliResult<Problem> {
    let obs = read_observations(&cfg.model.data.join("observations.csv"))?;
    build_with(cfg, obs)
}

pub fn build_with(cfg: &RunConfig, obs: Observations) -> CliResult<Problem> {
    let mesh = build_mesh(cfg)?;
    let prior = build_prior(cfg, &mesh)?;
    let setup = MeasurementSetup::new(&mesh, obs.points, cfg.model.delta, obs.sigma, obs.values)?;
    let model = match cfg.model.kind {
        ModelKind::Darcy => Model::Darcy(darcy_model(cfg, &mesh, setup.clone())?),
        ModelKind::Linear => Model::Linear(LinearGaussianModel::from_measurement(&setup)?),
    };
    Ok(Problem { mesh, prior, setup, model })
}
