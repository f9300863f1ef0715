//! TOML run configuration. Every section rejects unknown keys and every
//! key has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use steinflow::baselines::{CgRule, MapConfig, PcnConfig};
use steinflow::kernels::{Bandwidth, KernelConfig, KernelDerivative, PrecondRank};
use steinflow::svgd::{Algorithm, SMode, SvgdConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub prior: PriorSection,
    pub model: ModelSection,
    pub kernel: KernelSection,
    pub precond: PrecondSection,
    pub svgd: SvgdSection,
    pub pcn: PcnSection,
    pub map: MapSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub ng: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { ng: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub alpha: f64,
    /// `"zero"` or a path to a field file.
    pub mean: String,
    pub seed: u64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            mean: "zero".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Darcy,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Truth field as an expression in `x` and `y`, or a path to a field file.
    pub truth: String,
    /// Constant source term `f`.
    pub source: f64,
    /// Observation points on a `grid x grid` lattice.
    pub grid: usize,
    pub delta: f64,
    /// Noise standard deviation relative to `max |noise-free data|`.
    pub noise: f64,
    pub noise_seed: u64,
    /// Directory holding `observations.csv`.
    pub data: PathBuf,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Darcy,
            truth: "sin(2*x)*cos(3*y)".into(),
            source: 1.0,
            grid: 5,
            delta: steinflow::models::DEFAULT_DELTA,
            noise: 0.01,
            noise_seed: 1,
            data: PathBuf::from("data"),
        }
    }
}

/// A number or a named policy such as `"median"` or `"adaptive"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberOr {
    Number(f64),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeKind {
    Exact,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub h: NumberOr,
    pub s: NumberOr,
    /// Hilbert-scale order of the plain kernel distance.
    pub norm_order: f64,
    pub derivative: DerivativeKind,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            h: NumberOr::Named("median".into()),
            s: NumberOr::Named("adaptive".into()),
            norm_order: 0.0,
            derivative: DerivativeKind::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecondSection {
    /// `"dense"` or a positive rank.
    pub rank: NumberOr,
    pub refresh_every: usize,
}

impl Default for PrecondSection {
    fn default() -> Self {
        Self {
            rank: NumberOr::Named("dense".into()),
            refresh_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Prior,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    Plain,
    Mpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvgdSection {
    pub algorithm: AlgorithmKind,
    pub m: usize,
    pub iters: usize,
    /// Step size; engine default when absent.
    pub eps: Option<f64>,
    pub init: InitKind,
    pub seed: u64,
    pub tol: f64,
    pub backtrack: bool,
}

impl Default for SvgdSection {
    fn default() -> Self {
        Self {
            algorithm: AlgorithmKind::Mpo,
            m: 20,
            iters: 30,
            eps: None,
            init: InitKind::Laplace,
            seed: 0,
            tol: 1e-6,
            backtrack: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcnSection {
    pub beta: f64,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Start the chain at the MAP point instead of the prior mean.
    pub start_at_map: bool,
}

impl Default for PcnSection {
    fn default() -> Self {
        let d = PcnConfig::default();
        Self {
            beta: d.beta,
            iters: d.iters,
            burn_in: d.burn_in,
            thin: d.thin,
            seed: d.seed,
            start_at_map: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub max_newton: usize,
    /// `"eisenstat-walker"` or a fixed relative CG tolerance.
    pub cg_rule: NumberOr,
    pub full_hessian: bool,
    /// Iterations of the gradient-descent comparison run.
    pub gd_iters: usize,
}

impl Default for MapSection {
    fn default() -> Self {
        Self {
            max_newton: 10,
            cg_rule: NumberOr::Named("eisenstat-walker".into()),
            full_hessian: false,
            gd_iters: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Node-index lags of the exported covariance functions.
    pub lags: Vec<usize>,
    /// Write every particle or thinned chain state as a field file.
    pub write_samples: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            lags: vec![1],
            write_samples: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Checks every named policy and range once, so later conversions
    /// cannot fail.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.mesh.ng < 2 {
            return bad(format!("mesh.ng must be at least 2, got {}", self.mesh.ng));
        }
        if !(self.prior.alpha > 0.0) {
            return bad(format!("prior.alpha must be positive, got {}", self.prior.alpha));
        }
        if self.model.grid == 0 || !(self.model.delta > 0.0) || !(self.model.noise > 0.0) {
            return bad("model.grid, model.delta and model.noise must be positive".into());
        }
        self.kernel_config()?;
        self.s_mode()?;
        self.rank()?;
        self.cg_rule()?;
        if self.svgd.m == 0 {
            return bad("svgd.m must be at least 1".into());
        }
        if self.precond.refresh_every == 0 {
            return bad("precond.refresh_every must be at least 1".into());
        }
        if let Some(eps) = self.svgd.eps {
            if !(eps > 0.0) {
                return bad(format!("svgd.eps must be positive, got {eps}"));
            }
        }
        if !(self.pcn.beta > 0.0 && self.pcn.beta <= 1.0) {
            return bad(format!("pcn.beta must lie in (0, 1], got {}", self.pcn.beta));
        }
        if self.pcn.thin == 0 || self.pcn.burn_in > self.pcn.iters {
            return bad("pcn.thin must be positive and pcn.burn_in at most pcn.iters".into());
        }
        Ok(())
    }

    pub fn kernel_config(&self) -> CliResult<KernelConfig> {
        let bandwidth = match &self.kernel.h {
            NumberOr::Number(h) if *h > 0.0 => Bandwidth::Fixed(*h),
            NumberOr::Named(n) if n == "median" => Bandwidth::Median,
            other => return Err(CliError::Config(format!("kernel.h must be positive or \"median\", got {other:?}"))),
        };
        let derivative = match self.kernel.derivative {
            DerivativeKind::Exact => KernelDerivative::Exact,
            DerivativeKind::ClosedForm => KernelDerivative::ClosedForm,
        };
        Ok(KernelConfig {
            bandwidth,
            norm_order: self.kernel.norm_order,
            derivative,
        })
    }

    pub fn s_mode(&self) -> CliResult<SMode> {
        match &self.kernel.s {
            NumberOr::Number(s) if (0.0..=0.5).contains(s) => Ok(SMode::Fixed(*s)),
            NumberOr::Named(n) if n == "adaptive" => Ok(SMode::Adaptive),
            other => Err(CliError::Config(format!("kernel.s must lie in [0, 0.5] or be \"adaptive\", got {other:?}"))),
        }
    }

    pub fn rank(&self) -> CliResult<PrecondRank> {
        match &self.precond.rank {
            NumberOr::Named(n) if n == "dense" => Ok(PrecondRank::Dense),
            NumberOr::Number(r) if *r >= 1.0 && r.fract() == 0.0 => Ok(PrecondRank::LowRank(*r as usize)),
            other => Err(CliError::Config(format!("precond.rank must be \"dense\" or a positive integer, got {other:?}"))),
        }
    }

    pub fn cg_rule(&self) -> CliResult<CgRule> {
        match &self.map.cg_rule {
            NumberOr::Named(n) if n == "eisenstat-walker" => Ok(CgRule::EisenstatWalker),
            NumberOr::Number(t) if *t > 0.0 && *t < 1.0 => Ok(CgRule::Fixed(*t)),
            other => Err(CliError::Config(format!(
                "map.cg_rule must be \"eisenstat-walker\" or lie in (0, 1), got {other:?}"
            ))),
        }
    }

    pub fn svgd_config(&self) -> CliResult<SvgdConfig> {
        Ok(SvgdConfig {
            algorithm: match self.svgd.algorithm {
                AlgorithmKind::Plain => Algorithm::Plain,
                AlgorithmKind::Mpo => Algorithm::Mpo,
            },
            iters: self.svgd.iters,
            eps: self.svgd.eps,
            s: self.s_mode()?,
            kernel: self.kernel_config()?,
            rank: self.rank()?,
            refresh_every: self.precond.refresh_every,
            tol: self.svgd.tol,
            backtrack: self.svgd.backtrack,
        })
    }

    pub fn pcn_config(&self) -> PcnConfig {
        PcnConfig {
            beta: self.pcn.beta,
            iters: self.pcn.iters,
            burn_in: self.pcn.burn_in,
            thin: self.pcn.thin,
            seed: self.pcn.seed,
        }
    }

    pub fn map_config(&self) -> CliResult<MapConfig> {
        Ok(MapConfig {
            max_newton: self.map.max_newton,
            cg_rule: self.cg_rule()?,
            full_hessian: self.map.full_hessian,
            ..MapConfig::default()
        })
    }
}
