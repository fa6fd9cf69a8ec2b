//! Experiment configuration: the JSON schema, per-kind presets and
//! validation with line-level diagnostics.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uqdyn::dynmodels::{CoupledOscParams, TimeGrid};
use uqdyn::mnarx::{ManifoldSpec, QuantityDef, StageConfig};
use uqdyn::narx::{ForecastInit, LagConfig, NarxSolver, SparseNarxConfig};
use uqdyn::pce::AdaptiveConfig;
use uqdyn::pcnarx::PcNarxConfig;
use uqdyn::randvars::{Marginal, RandomVector};
use uqdyn::timewarp::WarpSurrogateConfig;

use crate::error::HarnessError;

/// Name of the auxiliary signal (lower-mass displacement) that the coupled
/// oscillator provides for training mNARX sub-models.
pub const COUPLED_AUXILIARY: &str = "y1";
/// Name of the exogenous excitation signal of the coupled oscillator.
pub const COUPLED_INPUT: &str = "x";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BoucWenWarp,
    BoucWenFrozen,
    CoupledPcnarx,
    CoupledMnarx,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    Warp,
    Frozen,
    Narx,
    Pcnarx,
    Mnarx,
}

impl SurrogateKind {
    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::Warp => "warp",
            SurrogateKind::Frozen => "frozen",
            SurrogateKind::Narx => "narx",
            SurrogateKind::Pcnarx => "pcnarx",
            SurrogateKind::Mnarx => "mnarx",
        }
    }

    fn needs_bouc_wen(self) -> bool {
        matches!(self, SurrogateKind::Warp | SurrogateKind::Frozen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    BoucWen {
        /// Marginals of `(zeta, omega, alpha, A, omega_x)`.
        #[serde(default = "bouc_wen_inputs")]
        inputs: Vec<Marginal>,
        #[serde(default = "default_beta")]
        beta_hyst: f64,
        #[serde(default = "one")]
        substeps: usize,
    },
    Coupled {
        /// Marginals of `(k_u, k_s, m_u, m_s, c)`; empty keeps `params` fixed.
        #[serde(default)]
        inputs: Vec<Marginal>,
        #[serde(default = "strong_damping")]
        params: CoupledOscParams,
        /// Surrogates see every `narx_decimation`-th sample of the response.
        #[serde(default = "default_decimation")]
        narx_decimation: usize,
        #[serde(default = "one")]
        substeps: usize,
    },
}

impl SystemConfig {
    pub fn is_bouc_wen(&self) -> bool {
        matches!(self, SystemConfig::BoucWen { .. })
    }

    pub fn inputs(&self) -> &[Marginal] {
        match self {
            SystemConfig::BoucWen { inputs, .. } | SystemConfig::Coupled { inputs, .. } => inputs,
        }
    }

    pub fn input_names(&self) -> &'static [&'static str] {
        match self {
            SystemConfig::BoucWen { .. } => &["zeta", "omega", "alpha", "amplitude", "omega_x"],
            SystemConfig::Coupled { .. } => &["k_u", "k_s", "m_u", "m_s", "c"],
        }
    }

    fn default_grid(&self) -> GridConfig {
        match self {
            SystemConfig::BoucWen { .. } => GridConfig { horizon: 30.0, dt: 0.01 },
            SystemConfig::Coupled { .. } => GridConfig { horizon: 20.0, dt: 0.005 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub dt: f64,
}

impl GridConfig {
    pub fn grid(&self) -> uqdyn::Result<TimeGrid> {
        TimeGrid::with_horizon(self.horizon, self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpExperiment {
    /// Training traces are simulated over `factor * horizon` so that every
    /// predicted warp stays inside the common warped range.
    pub training_horizon_factor: f64,
    pub surrogate: WarpSurrogateConfig,
}

impl Default for WarpExperiment {
    fn default() -> Self {
        WarpExperiment { training_horizon_factor: 1.5, surrogate: WarpSurrogateConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarxExperiment {
    pub degree: u32,
    pub n_y: usize,
    pub n_x: Vec<usize>,
    #[serde(default = "ols")]
    pub solver: NarxSolver,
}

impl NarxExperiment {
    pub fn lags(&self) -> uqdyn::Result<LagConfig> {
        LagConfig::new(self.n_y, self.n_x.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcNarxExperiment {
    pub n_y: usize,
    pub n_x: Vec<usize>,
    #[serde(default)]
    pub model: PcNarxConfig,
}

impl PcNarxExperiment {
    pub fn lags(&self) -> uqdyn::Result<LagConfig> {
        LagConfig::new(self.n_y, self.n_x.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsConfig {
    /// Monte Carlo simulations of the reference statistics.
    pub mc_size: usize,
    /// Surrogate predictions per statistics estimate.
    pub resample_size: usize,
    /// Surrogates whose statistics are estimated; empty means all.
    #[serde(default)]
    pub surrogates: Vec<SurrogateKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Validation traces written as trajectory CSVs; `None` writes all.
    pub max_traces: Option<usize>,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig { max_traces: Some(50) }
    }
}

/// Configuration file as written by the user. Unset sections take the
/// presets of `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub ed_size: usize,
    pub validation_size: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub system: Option<SystemConfig>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub surrogates: Option<Vec<SurrogateKind>>,
    #[serde(default)]
    pub warp: Option<WarpExperiment>,
    #[serde(default)]
    pub frozen: Option<AdaptiveConfig>,
    #[serde(default)]
    pub narx: Option<NarxExperiment>,
    #[serde(default)]
    pub pcnarx: Option<PcNarxExperiment>,
    #[serde(default)]
    pub mnarx: Option<ManifoldSpec>,
    #[serde(default)]
    pub statistics: Option<StatisticsConfig>,
    #[serde(default)]
    pub forecast_init: Option<ForecastInit>,
    #[serde(default)]
    pub export: Option<ExportConfig>,
}

/// Configuration with every preset filled in; this is what a run uses and
/// what its manifest hash covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub ed_size: usize,
    pub validation_size: usize,
    pub system: SystemConfig,
    pub grid: GridConfig,
    pub surrogates: Vec<SurrogateKind>,
    pub warp: WarpExperiment,
    pub frozen: AdaptiveConfig,
    pub narx: NarxExperiment,
    pub pcnarx: PcNarxExperiment,
    pub mnarx: ManifoldSpec,
    pub statistics: Option<StatisticsConfig>,
    pub forecast_init: ForecastInit,
    pub export: ExportConfig,
}

impl ResolvedConfig {
    pub fn has(&self, s: SurrogateKind) -> bool {
        self.surrogates.contains(&s)
    }

    /// Surrogate every other one is compared against.
    pub fn baseline(&self) -> Option<SurrogateKind> {
        let b = if self.system.is_bouc_wen() { SurrogateKind::Frozen } else { SurrogateKind::Narx };
        self.has(b).then_some(b)
    }

    /// Surrogates whose ensemble statistics are estimated.
    pub fn statistics_surrogates(&self) -> Vec<SurrogateKind> {
        match &self.statistics {
            None => Vec::new(),
            Some(s) if s.surrogates.is_empty() => self.surrogates.clone(),
            Some(s) => self.surrogates.iter().copied().filter(|x| s.surrogates.contains(x)).collect(),
        }
    }

    pub fn random_vector(&self) -> uqdyn::Result<Option<RandomVector>> {
        let m = self.system.inputs();
        if m.is_empty() {
            Ok(None)
        } else {
            RandomVector::new(m.to_vec()).map(Some)
        }
    }
}

fn one() -> usize {
    1
}

fn default_beta() -> f64 {
    50.0
}

fn default_decimation() -> usize {
    10
}

fn strong_damping() -> CoupledOscParams {
    CoupledOscParams::STRONG_DAMPING
}

fn ols() -> NarxSolver {
    NarxSolver::Ols
}

fn bouc_wen_inputs() -> Vec<Marginal> {
    vec![
        Marginal::UniformMeanStd { mean: 0.02, std: 0.002 },
        Marginal::UniformMeanStd { mean: 2.0 * PI, std: 0.2 * PI },
        Marginal::UniformMeanStd { mean: 50.0, std: 5.0 },
        Marginal::UniformMeanStd { mean: 1.0, std: 0.1 },
        Marginal::UniformMeanStd { mean: PI, std: 0.1 * PI },
    ]
}

fn coupled_inputs() -> Vec<Marginal> {
    let p = CoupledOscParams::STRONG_DAMPING;
    [p.k_u, p.k_s, p.m_u, p.m_s, p.c].iter().map(|&mean| Marginal::NormalCov { mean, cov: 0.2 }).collect()
}

fn stage(inputs: &[&str], degree: u32, n_y: usize, n_x: usize, solver: NarxSolver) -> StageConfig {
    StageConfig { inputs: inputs.iter().map(|s| s.to_string()).collect(), degree, n_y, n_x: vec![n_x], solver }
}

/// Two-stage manifold of the coupled oscillator: the lower-mass response
/// from the excitation, then the upper mass from both.
pub fn coupled_manifold() -> ManifoldSpec {
    let sparse = NarxSolver::Sparse(SparseNarxConfig::default());
    ManifoldSpec {
        inputs: vec![COUPLED_INPUT.to_string()],
        quantities: vec![QuantityDef::SubModel {
            name: COUPLED_AUXILIARY.to_string(),
            stage: stage(&[COUPLED_INPUT], 4, 3, 2, sparse),
        }],
        output: stage(&[COUPLED_INPUT, COUPLED_AUXILIARY], 6, 3, 2, sparse),
    }
}

fn default_narx() -> NarxExperiment {
    NarxExperiment { degree: 3, n_y: 4, n_x: vec![5], solver: NarxSolver::Ols }
}

struct Preset {
    system: SystemConfig,
    surrogates: Vec<SurrogateKind>,
    narx: NarxExperiment,
    statistics: Option<StatisticsConfig>,
}

fn preset(kind: ExperimentKind) -> Option<Preset> {
    let bouc_wen = SystemConfig::BoucWen { inputs: bouc_wen_inputs(), beta_hyst: default_beta(), substeps: 1 };
    let stats = Some(StatisticsConfig { mc_size: 10_000, resample_size: 10_000, surrogates: vec![SurrogateKind::Warp] });
    Some(match kind {
        ExperimentKind::BoucWenWarp => Preset {
            system: bouc_wen,
            surrogates: vec![SurrogateKind::Warp, SurrogateKind::Frozen],
            narx: default_narx(),
            statistics: stats,
        },
        ExperimentKind::BoucWenFrozen => Preset {
            system: bouc_wen,
            surrogates: vec![SurrogateKind::Frozen],
            narx: default_narx(),
            statistics: None,
        },
        ExperimentKind::CoupledPcnarx => Preset {
            system: SystemConfig::Coupled {
                inputs: coupled_inputs(),
                params: CoupledOscParams::STRONG_DAMPING,
                narx_decimation: default_decimation(),
                substeps: 1,
            },
            surrogates: vec![SurrogateKind::Narx, SurrogateKind::Pcnarx],
            narx: default_narx(),
            statistics: None,
        },
        ExperimentKind::CoupledMnarx => Preset {
            system: SystemConfig::Coupled {
                inputs: Vec::new(),
                params: CoupledOscParams::WEAK_DAMPING,
                narx_decimation: default_decimation(),
                substeps: 1,
            },
            surrogates: vec![SurrogateKind::Narx, SurrogateKind::Mnarx],
            narx: NarxExperiment {
                degree: 7,
                n_y: 4,
                n_x: vec![3],
                solver: NarxSolver::Sparse(SparseNarxConfig::default()),
            },
            statistics: None,
        },
        ExperimentKind::Custom => return None,
    })
}

/// First line of `text` mentioning the JSON key `key`.
fn locate(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| {
            let suffix = format!(" at line {} column {}", e.line(), e.column());
            let message = e.to_string();
            HarnessError::Config {
                line: Some(e.line()),
                column: Some(e.column()),
                message: message.strip_suffix(&suffix).unwrap_or(&message).to_string(),
            }
        })
    }

    pub fn from_file(path: &Path) -> Result<(Self, String), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config {
            line: None,
            column: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Ok((Self::parse(&text)?, text))
    }

    /// Fills in presets and checks that the result is complete and
    /// consistent. `source` is the original text, used to point errors at a
    /// line.
    pub fn resolve(&self, source: Option<&str>) -> Result<ResolvedConfig, HarnessError> {
        let fail = |key: &str, message: String| HarnessError::Config {
            line: source.and_then(|s| locate(s, key)),
            column: None,
            message,
        };
        let preset = preset(self.kind);
        let system = match (&self.system, &preset) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => p.system.clone(),
            (None, None) => return Err(fail("kind", "a custom experiment needs a `system` section".into())),
        };
        let surrogates = match (&self.surrogates, &preset) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => p.surrogates.clone(),
            (None, None) => return Err(fail("kind", "a custom experiment needs a `surrogates` list".into())),
        };
        let resolved = ResolvedConfig {
            kind: self.kind,
            seed: self.seed,
            ed_size: self.ed_size,
            validation_size: self.validation_size,
            grid: self.grid.unwrap_or_else(|| system.default_grid()),
            surrogates,
            warp: self.warp.unwrap_or_default(),
            frozen: self.frozen.unwrap_or_default(),
            narx: self.narx.clone().or_else(|| preset.as_ref().map(|p| p.narx.clone())).unwrap_or_else(default_narx),
            pcnarx: self.pcnarx.clone().unwrap_or(PcNarxExperiment {
                n_y: 4,
                n_x: vec![5],
                model: PcNarxConfig::default(),
            }),
            mnarx: self.mnarx.clone().unwrap_or_else(coupled_manifold),
            statistics: self.statistics.clone().or_else(|| preset.as_ref().and_then(|p| p.statistics.clone())),
            forecast_init: self.forecast_init.unwrap_or(ForecastInit::TruePrefix),
            export: self.export.unwrap_or_default(),
            system,
        };
        resolved.validate(&fail)?;
        Ok(resolved)
    }
}

impl ResolvedConfig {
    fn validate(&self, fail: &dyn Fn(&str, String) -> HarnessError) -> Result<(), HarnessError> {
        if self.ed_size < 1 {
            return Err(fail("ed_size", "ed_size must be at least 1".into()));
        }
        if self.validation_size < 1 {
            return Err(fail("validation_size", "validation_size must be at least 1".into()));
        }
        if self.surrogates.is_empty() {
            return Err(fail("surrogates", "at least one surrogate is required".into()));
        }
        let mut sorted = self.surrogates.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.surrogates.len() {
            return Err(fail("surrogates", "surrogates are listed more than once".into()));
        }
        self.grid.grid().map_err(|e| fail("grid", e.to_string()))?;
        for m in self.system.inputs() {
            m.validated().map_err(|e| fail("inputs", e.to_string()))?;
        }
        let bw = self.system.is_bouc_wen();
        match &self.system {
            SystemConfig::BoucWen { inputs, beta_hyst, substeps } => {
                if inputs.len() != 5 {
                    return Err(fail("inputs", format!("Bouc-Wen needs 5 input marginals, got {}", inputs.len())));
                }
                if !beta_hyst.is_finite() {
                    return Err(fail("beta_hyst", "beta_hyst must be finite".into()));
                }
                if *substeps == 0 {
                    return Err(fail("substeps", "substeps must be at least 1".into()));
                }
            }
            SystemConfig::Coupled { inputs, params, narx_decimation, substeps } => {
                if !inputs.is_empty() && inputs.len() != 5 {
                    return Err(fail("inputs", format!("the coupled oscillator takes 0 or 5 marginals, got {}", inputs.len())));
                }
                params.validated().map_err(|e| fail("params", e.to_string()))?;
                if *narx_decimation == 0 || *substeps == 0 {
                    return Err(fail("narx_decimation", "narx_decimation and substeps must be at least 1".into()));
                }
            }
        }
        for s in &self.surrogates {
            if s.needs_bouc_wen() != bw {
                let system = if bw { "bouc-wen" } else { "coupled" };
                return Err(fail("surrogates", format!("surrogate `{}` does not apply to the {system} system", s.name())));
            }
        }
        if self.surrogates.iter().any(|s| s.needs_bouc_wen()) && self.system.inputs().is_empty() {
            return Err(fail("inputs", "PCE surrogates need at least one random input".into()));
        }
        if self.has(SurrogateKind::Warp) && !(self.warp.training_horizon_factor >= 1.0) {
            return Err(fail("training_horizon_factor", "training_horizon_factor must be at least 1".into()));
        }
        if self.has(SurrogateKind::Narx) {
            self.narx.lags().map_err(|e| fail("narx", e.to_string()))?;
            check_single_input(&self.narx.n_x).map_err(|m| fail("narx", m))?;
        }
        if self.has(SurrogateKind::Pcnarx) {
            if self.system.inputs().is_empty() {
                return Err(fail("pcnarx", "PC-NARX needs random structural inputs".into()));
            }
            self.pcnarx.lags().map_err(|e| fail("pcnarx", e.to_string()))?;
            check_single_input(&self.pcnarx.n_x).map_err(|m| fail("pcnarx", m))?;
        }
        if self.has(SurrogateKind::Mnarx) {
            let spec = self.mnarx.clone().validated().map_err(|e| fail("mnarx", e.to_string()))?;
            if spec.inputs != [COUPLED_INPUT] {
                return Err(fail("mnarx", format!("the coupled oscillator provides the single input `{COUPLED_INPUT}`")));
            }
            for q in &spec.quantities {
                if let QuantityDef::SubModel { name, .. } = q {
                    if name != COUPLED_AUXILIARY {
                        return Err(fail(
                            "mnarx",
                            format!("sub-model `{name}` has no training signal; only `{COUPLED_AUXILIARY}` is available"),
                        ));
                    }
                }
            }
        }
        if let Some(s) = &self.statistics {
            if !bw {
                return Err(fail("statistics", "ensemble statistics are computed for the Bouc-Wen system only".into()));
            }
            if s.mc_size < 2 || s.resample_size < 2 {
                return Err(fail("statistics", "statistics need at least two samples".into()));
            }
            if let Some(x) = s.surrogates.iter().find(|x| !self.has(**x)) {
                return Err(fail("statistics", format!("statistics requested for `{}`, which is not fitted", x.name())));
            }
        }
        Ok(())
    }
}

fn check_single_input(n_x: &[usize]) -> Result<(), String> {
    if n_x.len() == 1 {
        Ok(())
    } else {
        Err(format!("the system has one exogenous input, got {} input orders", n_x.len()))
    }
}
