//! Experiment pipelines: experimental design, simulation, fitting,
//! validation and artifact emission.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uqdyn::csvio::fmt_f64;
use uqdyn::dynmodels::{
    sample_excitation, simulate_bouc_wen, simulate_coupled, BoucWenParams, CoupledOscParams, TimeGrid, Trajectory,
};
use uqdyn::mnarx::{fit_mnarx, MNarxModel, MnarxTrace, QuantityDef, SubModelFeed};
use uqdyn::narx::{fit_narx, relative_error, NarxModel, NarxTrace};
use uqdyn::pce::PceModel;
use uqdyn::pcnarx::{fit_pcnarx, forecast_pcnarx, PcNarxDesign, PcNarxModel};
use uqdyn::randvars::{derive_seed, sample, RandomVector, SampleSet};
use uqdyn::timewarp::{fit_warp_surrogate, WarpSurrogate};
use uqdyn::trajpce::{fit_time_frozen, TimeFrozenSurrogate, TrajectoryEnsemble};

use crate::artifacts::{sha256_hex, ArtifactWriter, Failure, Manifest};
use crate::config::{ResolvedConfig, SurrogateKind, SystemConfig, COUPLED_AUXILIARY};
use crate::error::{Context, HarnessError};
use crate::metrics::{compare_surrogates, exceedance, median, point_in_time_error, relative_l2, Comparison, StatsAccumulator};

/// Independent random streams derived from the root seed.
mod stream {
    pub const ED_INPUTS: u64 = 1;
    pub const ED_EXCITATION: u64 = 2;
    pub const VALIDATION_INPUTS: u64 = 3;
    pub const VALIDATION_EXCITATION: u64 = 4;
    pub const MC_INPUTS: u64 = 5;
    pub const RESAMPLE_INPUTS: u64 = 6;
}

const EXCEEDANCE_LEVELS: [f64; 4] = [0.05, 0.1, 0.2, 0.5];
/// Traces simulated per batch when only running statistics are kept.
const STATS_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMetrics {
    /// Leading samples excluded from the relative trace errors.
    pub burn_in: usize,
    pub median_error: f64,
    /// Mean over the traces that did not diverge.
    pub mean_error: f64,
    pub max_error: f64,
    pub exceedance: BTreeMap<String, f64>,
    pub diverged: Vec<usize>,
    /// Validation traces entering the point-in-time error.
    pub epsilon_traces: usize,
    pub mean_epsilon: f64,
    pub mean_epsilon_second_half: f64,
    /// Time indices where the point-in-time error is an absolute MSE.
    pub mse_fallback: Vec<usize>,
    pub training_median_error: f64,
    /// Size of the fitted model (basis terms or modes).
    pub model_terms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    pub a: String,
    pub b: String,
    pub n_traces: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub win_fraction_a: f64,
    pub strict_fraction_a: f64,
    pub median_a: f64,
    pub median_b: f64,
    pub median_ratio: f64,
    pub mean_difference: f64,
}

impl ComparisonMetrics {
    fn new(a: &str, b: &str, c: &Comparison) -> Self {
        ComparisonMetrics {
            a: a.to_string(),
            b: b.to_string(),
            n_traces: c.n_traces,
            wins_a: c.wins_a,
            wins_b: c.wins_b,
            ties: c.ties,
            win_fraction_a: c.win_fraction_a,
            strict_fraction_a: c.strict_fraction_a,
            median_a: c.median_a,
            median_b: c.median_b,
            median_ratio: c.median_ratio,
            mean_difference: c.mean_difference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsMetrics {
    pub mc_size: usize,
    pub resample_size: usize,
    /// Relative L2 error of the surrogate mean curve against Monte Carlo.
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub kind: String,
    pub seed: u64,
    pub ed_size: usize,
    pub validation_size: usize,
    pub surrogates: BTreeMap<String, SurrogateMetrics>,
    pub comparisons: Vec<ComparisonMetrics>,
    pub statistics: BTreeMap<String, StatisticsMetrics>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub metrics: Metrics,
}

fn kind_name(config: &ResolvedConfig) -> String {
    serde_json::to_value(config.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Runs the experiment and writes every artifact into `out`.
pub fn run_experiment(config: &ResolvedConfig, out: &Path) -> Result<RunOutcome, HarnessError> {
    let started = Instant::now();
    let mut w = ArtifactWriter::create(out)?;
    let config_text = serde_json::to_string_pretty(config).expect("config serialises") + "\n";
    let config_hash = sha256_hex(config_text.as_bytes());
    w.text("config.json", &config_text)?;
    let mut run = Run { config, w, failures: Vec::new(), metrics: BTreeMap::new(), comparisons: Vec::new(), errors: BTreeMap::new() };
    let statistics = match &config.system {
        SystemConfig::BoucWen { .. } => run.bouc_wen()?,
        SystemConfig::Coupled { .. } => {
            run.coupled()?;
            BTreeMap::new()
        }
    };
    run.compare()?;
    let metrics = Metrics {
        kind: kind_name(config),
        seed: config.seed,
        ed_size: config.ed_size,
        validation_size: config.validation_size,
        surrogates: run.metrics,
        comparisons: run.comparisons,
        statistics,
    };
    run.w.json("metrics.json", &metrics)?;
    let manifest = run.w.finish(&metrics.kind, config.seed, config_hash, run.failures)?;
    log::info!("finished in {:.1?}", started.elapsed());
    Ok(RunOutcome { manifest, metrics })
}

struct Run<'a> {
    config: &'a ResolvedConfig,
    w: ArtifactWriter,
    failures: Vec<Failure>,
    metrics: BTreeMap<String, SurrogateMetrics>,
    comparisons: Vec<ComparisonMetrics>,
    /// Validation trace errors by surrogate.
    errors: BTreeMap<SurrogateKind, Vec<f64>>,
}

fn seed(config: &ResolvedConfig, s: u64) -> u64 {
    derive_seed(config.seed, s)
}

fn time_stage<T>(label: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    log::info!("{label}: {:.1?}", t.elapsed());
    out
}

fn draw(rv: &Option<RandomVector>, n: usize, s: u64) -> Result<Option<SampleSet>, HarnessError> {
    rv.as_ref().map(|rv| sample(rv, n, s)).transpose().stage("sampling")
}

fn summarise(errors: &[f64], burn_in: usize) -> SurrogateMetrics {
    let finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
    SurrogateMetrics {
        burn_in,
        median_error: median(errors),
        mean_error: if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 },
        max_error: errors.iter().copied().fold(0.0, f64::max),
        exceedance: EXCEEDANCE_LEVELS.iter().map(|l| (format!("{l}"), exceedance(errors, *l))).collect(),
        diverged: errors.iter().enumerate().filter(|(_, e)| !e.is_finite()).map(|(i, _)| i).collect(),
        epsilon_traces: 0,
        mean_epsilon: f64::NAN,
        mean_epsilon_second_half: f64::NAN,
        mse_fallback: Vec::new(),
        training_median_error: f64::NAN,
        model_terms: 0,
    }
}

impl Run<'_> {
    fn export_count(&self, n: usize) -> usize {
        self.config.export.max_traces.map_or(n, |m| m.min(n))
    }

    fn write_inputs(&mut self, rel: &str, s: &Option<SampleSet>) -> Result<(), HarnessError> {
        let Some(s) = s else { return Ok(()) };
        let mut header = vec!["trace_id"];
        header.extend(self.config.system.input_names());
        let rows = s.points.iter().enumerate().map(|(i, p)| {
            let mut row = vec![i.to_string()];
            row.extend(p.iter().map(|v| fmt_f64(*v)));
            row
        });
        self.w.csv(rel, &header, rows)
    }

    fn write_traces(&mut self, rel: &str, grid: TimeGrid, rows: &[Vec<f64>], limit: usize) -> Result<(), HarnessError> {
        let traces: Vec<(usize, &[f64])> = rows.iter().take(limit).enumerate().map(|(i, r)| (i, r.as_slice())).collect();
        self.w.grid_trajectories(rel, grid, &traces)
    }

    fn write_predictions(&mut self, name: &str, grid: TimeGrid, preds: &[Option<Vec<f64>>]) -> Result<(), HarnessError> {
        let limit = self.export_count(preds.len());
        let traces: Vec<(usize, &[f64])> =
            preds.iter().take(limit).enumerate().filter_map(|(i, p)| p.as_deref().map(|v| (i, v))).collect();
        self.w.grid_trajectories(&format!("predictions_{name}.csv"), grid, &traces)
    }

    /// Trace errors, point-in-time error over non-diverged traces and the
    /// corresponding CSVs.
    fn record(
        &mut self,
        kind: SurrogateKind,
        grid: TimeGrid,
        truth: &[Vec<f64>],
        preds: &[Option<Vec<f64>>],
        burn_in: usize,
    ) -> Result<SurrogateMetrics, HarnessError> {
        let name = kind.name();
        let errors: Vec<f64> =
            preds.iter().zip(truth).map(|(p, y)| p.as_ref().map_or(f64::INFINITY, |p| relative_error(p, y, burn_in))).collect();
        self.w.csv(
            &format!("trace_errors_{name}.csv"),
            &["trace_id", "error", "diverged"],
            errors.iter().enumerate().map(|(i, e)| vec![i.to_string(), fmt_f64(*e), u8::from(!e.is_finite()).to_string()]),
        )?;
        let mut m = summarise(&errors, burn_in);
        let (ys, ps): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
            truth.iter().zip(preds).filter_map(|(y, p)| p.as_ref().map(|p| (y.clone(), p.clone()))).unzip();
        m.epsilon_traces = ys.len();
        if !ys.is_empty() {
            let eps = point_in_time_error(&ys, &ps).map_err(|e| HarnessError::Numerical {
                stage: format!("{name} validation error"),
                source: uqdyn::Error::InvalidArgument(e),
            })?;
            m.mean_epsilon = eps.mean_over(0);
            m.mean_epsilon_second_half = eps.mean_over(grid.steps / 2);
            m.mse_fallback = eps.mse_fallback.iter().enumerate().filter(|(_, f)| **f).map(|(k, _)| k).collect();
            self.w.csv(
                &format!("epsilon_{name}.csv"),
                &["t", "epsilon"],
                eps.epsilon.iter().enumerate().map(|(k, e)| vec![fmt_f64(grid.t(k)), fmt_f64(*e)]),
            )?;
        }
        self.write_predictions(name, grid, preds)?;
        self.errors.insert(kind, errors);
        Ok(m)
    }

    fn compare(&mut self) -> Result<(), HarnessError> {
        let Some(base) = self.config.baseline() else { return Ok(()) };
        for &s in &self.config.surrogates {
            if s == base {
                continue;
            }
            let (a, b) = (&self.errors[&s], &self.errors[&base]);
            let c = compare_surrogates(a, b).map_err(|e| HarnessError::Numerical {
                stage: "comparison".into(),
                source: uqdyn::Error::InvalidArgument(e),
            })?;
            let rows: Vec<Vec<String>> = a
                .iter()
                .zip(b)
                .zip(&c.winners)
                .enumerate()
                .map(|(i, ((x, y), win))| vec![i.to_string(), fmt_f64(*x), fmt_f64(*y), win.label().to_string()])
                .collect();
            self.w.csv(&format!("comparison_{}_vs_{}.csv", s.name(), base.name()), &["trace_id", "err_a", "err_b", "winner"], rows)?;
            self.comparisons.push(ComparisonMetrics::new(s.name(), base.name(), &c));
        }
        Ok(())
    }

    fn bouc_wen(&mut self) -> Result<BTreeMap<String, StatisticsMetrics>, HarnessError> {
        let config = self.config;
        let SystemConfig::BoucWen { beta_hyst, substeps, .. } = config.system else { unreachable!() };
        let rv = config.random_vector().stage("inputs")?.expect("validated: Bouc-Wen inputs are random");
        let phys = config.grid.grid().stage("grid")?;
        let train_grid = if config.has(SurrogateKind::Warp) {
            let g = TimeGrid::with_horizon(config.grid.horizon * config.warp.training_horizon_factor, config.grid.dt);
            g.stage("training grid")?
        } else {
            phys
        };
        let simulate = |points: &[Vec<f64>], grid: TimeGrid| -> Result<Vec<Vec<f64>>, HarnessError> {
            points
                .par_iter()
                .map(|x| {
                    let p = BoucWenParams::from_inputs(x, beta_hyst)?;
                    simulate_bouc_wen(&p, grid, [0.0; 3], substeps).map(|t| t.values)
                })
                .collect::<uqdyn::Result<Vec<_>>>()
                .stage("Bouc-Wen simulation")
        };
        let ed = sample(&rv, config.ed_size, seed(config, stream::ED_INPUTS)).stage("sampling")?;
        let val = sample(&rv, config.validation_size, seed(config, stream::VALIDATION_INPUTS)).stage("sampling")?;
        let ed_train = time_stage("ED simulation", || simulate(&ed.points, train_grid))?;
        let ed_phys: Vec<Vec<f64>> = ed_train.iter().map(|r| r[..phys.steps].to_vec()).collect();
        let val_y = time_stage("validation simulation", || simulate(&val.points, phys))?;

        self.write_inputs("ed_inputs.csv", &Some(ed.clone()))?;
        self.write_traces("ed_outputs.csv", train_grid, &ed_train, ed_train.len())?;
        self.write_inputs("validation_inputs.csv", &Some(val.clone()))?;
        let limit = self.export_count(val_y.len());
        self.write_traces("validation_outputs.csv", phys, &val_y, limit)?;

        let mut warp = None;
        let mut frozen = None;
        for &s in &config.surrogates {
            match s {
                SurrogateKind::Warp => {
                    let ens = TrajectoryEnsemble::new(train_grid, ed_train.clone()).stage("ensemble")?;
                    let reference = simulate(&[rv.mean()], train_grid)?.pop().expect("one trace");
                    let reference = Trajectory::new(train_grid, reference).stage("reference")?;
                    let (model, warped) = time_stage("warp fit", || {
                        fit_warp_surrogate(&ens, &rv, &ed, &reference, phys, &config.warp.surrogate)
                    })
                    .stage("warp surrogate")?;
                    let tau = warped.tau();
                    let rows: Vec<(usize, &[f64])> =
                        warped.ensemble.rows().iter().enumerate().map(|(i, r)| (i, r.as_slice())).collect();
                    self.w.trajectories("warped_ed_outputs.csv", &tau, &rows)?;
                    self.w.file("warp_coefficients.csv", |p| warped.write_beta_csv(p))?;
                    self.w.directory("models/warp", |d| model.save(d))?;
                    warp = Some(model);
                }
                SurrogateKind::Frozen => {
                    let ens = TrajectoryEnsemble::new(phys, ed_phys.clone()).stage("ensemble")?;
                    let model =
                        time_stage("time-frozen fit", || fit_time_frozen(&ens, &rv, &ed, &config.frozen)).stage("time-frozen PCE")?;
                    self.w.json("models/frozen.json", &FrozenArtifact { grid: model.grid, models: &model.models })?;
                    frozen = Some(model);
                }
                _ => unreachable!("validated: PCE surrogates only"),
            }
        }
        let predictor = |s: SurrogateKind| -> Box<dyn Fn(&[f64]) -> uqdyn::Result<Vec<f64>> + Sync + '_> {
            match s {
                SurrogateKind::Warp => {
                    let m: &WarpSurrogate = warp.as_ref().expect("fitted");
                    Box::new(move |x| m.predict_physical(x).map(|t| t.values))
                }
                _ => {
                    let m: &TimeFrozenSurrogate = frozen.as_ref().expect("fitted");
                    Box::new(move |x| m.predict_curve(x).map(|t| t.values))
                }
            }
        };
        for &s in &config.surrogates {
            let f = predictor(s);
            let preds: Vec<Option<Vec<f64>>> = val
                .points
                .par_iter()
                .map(|x| f(x).map(Some))
                .collect::<uqdyn::Result<_>>()
                .stage("validation predictions")?;
            let mut m = self.record(s, phys, &val_y, &preds, 0)?;
            let train: Vec<f64> = ed
                .points
                .par_iter()
                .zip(&ed_phys)
                .map(|(x, y)| f(x).map(|p| relative_l2(&p, y)))
                .collect::<uqdyn::Result<_>>()
                .stage("training predictions")?;
            m.training_median_error = median(&train);
            m.model_terms = match s {
                SurrogateKind::Warp => warp.as_ref().map_or(0, |w| w.warped.reduction.n_modes()),
                _ => frozen.as_ref().map_or(0, |f| f.models.iter().map(|m| m.coefficients.len()).max().unwrap_or(0)),
            };
            self.metrics.insert(s.name().to_string(), m);
        }

        let mut stats = BTreeMap::new();
        let targets = config.statistics_surrogates();
        if let (Some(sc), false) = (&config.statistics, targets.is_empty()) {
            let mc = sample(&rv, sc.mc_size, seed(config, stream::MC_INPUTS)).stage("sampling")?;
            let mut acc = StatsAccumulator::new(phys.steps);
            time_stage("Monte Carlo reference", || -> Result<(), HarnessError> {
                for chunk in mc.points.chunks(STATS_BATCH) {
                    for y in simulate(chunk, phys)? {
                        acc.push(&y);
                    }
                }
                Ok(())
            })?;
            let (mc_mean, mc_std) = acc.finish().expect("at least two samples");
            let resample = sample(&rv, sc.resample_size, seed(config, stream::RESAMPLE_INPUTS)).stage("sampling")?;
            for s in targets {
                let f = predictor(s);
                let mut acc = StatsAccumulator::new(phys.steps);
                for chunk in resample.points.chunks(STATS_BATCH) {
                    let ys: Vec<Vec<f64>> =
                        chunk.par_iter().map(|x| f(x)).collect::<uqdyn::Result<_>>().stage("surrogate resampling")?;
                    for y in &ys {
                        acc.push(y);
                    }
                }
                let (mean, std) = acc.finish().expect("at least two samples");
                self.w.csv(
                    &format!("statistics_{}.csv", s.name()),
                    &["t", "mc_mean", "mc_std", "mean", "std"],
                    (0..phys.steps).map(|k| {
                        vec![fmt_f64(phys.t(k)), fmt_f64(mc_mean[k]), fmt_f64(mc_std[k]), fmt_f64(mean[k]), fmt_f64(std[k])]
                    }),
                )?;
                stats.insert(
                    s.name().to_string(),
                    StatisticsMetrics {
                        mc_size: sc.mc_size,
                        resample_size: sc.resample_size,
                        mean_error: relative_l2(&mean, &mc_mean),
                        std_error: relative_l2(&std, &mc_std),
                    },
                );
            }
        }
        Ok(stats)
    }

    fn coupled(&mut self) -> Result<(), HarnessError> {
        let config = self.config;
        let SystemConfig::Coupled { params, narx_decimation, substeps, .. } = config.system else { unreachable!() };
        let rv = config.random_vector().stage("inputs")?;
        let grid = config.grid.grid().stage("grid")?;
        let ed_inputs = draw(&rv, config.ed_size, seed(config, stream::ED_INPUTS))?;
        let val_inputs = draw(&rv, config.validation_size, seed(config, stream::VALIDATION_INPUTS))?;
        let simulate = |n: usize, inputs: &Option<SampleSet>, excitation_seed: u64| -> Result<Vec<CoupledTrace>, HarnessError> {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let p = match inputs {
                        Some(s) => CoupledOscParams::from_inputs(&s.points[i])?,
                        None => params,
                    };
                    let x = sample_excitation(excitation_seed, i as u64);
                    let (y1, y2) = simulate_coupled(&p, &x, grid, [0.0; 4], substeps)?;
                    Ok(CoupledTrace {
                        x: x.eval(grid).decimate(narx_decimation)?,
                        y1: y1.decimate(narx_decimation)?.values,
                        y2: y2.decimate(narx_decimation)?.values,
                    })
                })
                .collect::<uqdyn::Result<Vec<_>>>()
                .stage("coupled simulation")
        };
        let ed = time_stage("ED simulation", || simulate(config.ed_size, &ed_inputs, seed(config, stream::ED_EXCITATION)))?;
        let val = time_stage("validation simulation", || {
            simulate(config.validation_size, &val_inputs, seed(config, stream::VALIDATION_EXCITATION))
        })?;
        let coarse = ed[0].x.grid;

        self.write_inputs("ed_inputs.csv", &ed_inputs)?;
        self.write_inputs("validation_inputs.csv", &val_inputs)?;
        let column = |tr: &[CoupledTrace], f: fn(&CoupledTrace) -> &Vec<f64>| tr.iter().map(|t| f(t).clone()).collect::<Vec<_>>();
        let n_ed = ed.len();
        self.write_traces("ed_excitation.csv", coarse, &column(&ed, |t| &t.x.values), n_ed)?;
        self.write_traces("ed_outputs.csv", coarse, &column(&ed, |t| &t.y2), n_ed)?;
        self.write_traces("ed_auxiliary.csv", coarse, &column(&ed, |t| &t.y1), n_ed)?;
        let limit = self.export_count(val.len());
        self.write_traces("validation_excitation.csv", coarse, &column(&val, |t| &t.x.values), limit)?;
        self.write_traces("validation_outputs.csv", coarse, &column(&val, |t| &t.y2), limit)?;

        let narx_traces = |tr: &[CoupledTrace]| -> Result<Vec<NarxTrace>, HarnessError> {
            tr.iter().map(|t| NarxTrace::new(vec![t.x.values.clone()], t.y2.clone())).collect::<uqdyn::Result<_>>().stage("traces")
        };
        let mnarx_traces = |tr: &[CoupledTrace]| -> Vec<MnarxTrace> {
            tr.iter()
                .map(|t| MnarxTrace {
                    inputs: vec![t.x.values.clone()],
                    auxiliary: BTreeMap::from([(COUPLED_AUXILIARY.to_string(), t.y1.clone())]),
                    output: t.y2.clone(),
                })
                .collect()
        };
        let (ed_narx, val_narx) = (narx_traces(&ed)?, narx_traces(&val)?);
        let (ed_m, val_m) = if config.has(SurrogateKind::Mnarx) { (mnarx_traces(&ed), mnarx_traces(&val)) } else { (vec![], vec![]) };

        let mut narx: Option<NarxModel> = None;
        let mut pcnarx: Option<PcNarxModel> = None;
        let mut mnarx: Option<MNarxModel> = None;
        for &s in &config.surrogates {
            match s {
                SurrogateKind::Narx => {
                    let lags = config.narx.lags().stage("narx")?;
                    let fit = time_stage("NARX fit", || fit_narx(&lags, config.narx.degree, &ed_narx, &config.narx.solver))
                        .stage("NARX fit")?;
                    if fit.rank_deficient {
                        log::warn!("the NARX regressor matrix is rank-deficient; the minimum-norm solution is used");
                    }
                    self.w.text("models/narx.json", &fit.model.to_json().stage("narx model")?)?;
                    narx = Some(fit.model);
                }
                SurrogateKind::Pcnarx => {
                    let lags = config.pcnarx.lags().stage("pcnarx")?;
                    let design = PcNarxDesign::new(
                        ed_narx.clone(),
                        ed_inputs.clone().expect("validated: random inputs"),
                        rv.clone().expect("validated: random inputs"),
                    )
                    .stage("PC-NARX design")?;
                    let model =
                        time_stage("PC-NARX fit", || fit_pcnarx(&design, &lags, &config.pcnarx.model)).stage("PC-NARX fit")?;
                    self.w.json("models/pcnarx.json", &model)?;
                    pcnarx = Some(model);
                }
                SurrogateKind::Mnarx => {
                    let model = time_stage("mNARX fit", || fit_mnarx(&config.mnarx, &ed_m)).stage("mNARX fit")?;
                    self.w.json("models/mnarx.json", &model)?;
                    mnarx = Some(model);
                }
                _ => unreachable!("validated: NARX-family surrogates only"),
            }
        }

        // All surrogates are scored over the same samples.
        let burn_in = config
            .surrogates
            .iter()
            .map(|s| match s {
                SurrogateKind::Narx => narx.as_ref().map_or(0, |m| m.lags.burn_in()),
                SurrogateKind::Pcnarx => pcnarx.as_ref().map_or(0, |m| m.lags.burn_in()),
                _ => mnarx.as_ref().map_or(0, mnarx_burn_in),
            })
            .max()
            .unwrap_or(0);
        let init = config.forecast_init;
        for &s in &config.surrogates {
            let forecast = |i: usize, on_ed: bool| -> uqdyn::Result<Vec<f64>> {
                let (tr, inputs) = if on_ed { (&ed_narx[i], &ed_inputs) } else { (&val_narx[i], &val_inputs) };
                match s {
                    SurrogateKind::Narx => narx.as_ref().expect("fitted").forecast_trace(tr, init),
                    SurrogateKind::Pcnarx => {
                        let xi = &inputs.as_ref().expect("random inputs").points[i];
                        forecast_pcnarx(pcnarx.as_ref().expect("fitted"), &tr.input_refs(), xi, init, Some(&tr.output))
                    }
                    _ => {
                        let m = mnarx.as_ref().expect("fitted");
                        m.forecast_trace(if on_ed { &ed_m[i] } else { &val_m[i] }, init, SubModelFeed::Forecast)
                    }
                }
            };
            let run_all = |n: usize, on_ed: bool| -> Result<Vec<Option<Vec<f64>>>, HarnessError> {
                (0..n)
                    .into_par_iter()
                    .map(|i| match forecast(i, on_ed) {
                        Ok(v) => Ok(Ok(v)),
                        Err(e) if is_divergence(&e) => Ok(Err(e.to_string())),
                        Err(e) => Err(e),
                    })
                    .collect::<uqdyn::Result<Vec<_>>>()
                    .stage("forecast")
                    .map(|v| {
                        v.into_iter()
                            .enumerate()
                            .map(|(i, r)| {
                                r.map_err(|e| {
                                    if !on_ed {
                                        log::warn!("{} diverged on validation trace {i}: {e}", s.name());
                                    }
                                })
                                .ok()
                            })
                            .collect()
                    })
            };
            let preds = run_all(val_narx.len(), false)?;
            for (i, p) in preds.iter().enumerate() {
                if p.is_none() {
                    self.failures.push(Failure { surrogate: s.name().into(), trace_id: i, reason: "forecast diverged".into() });
                }
            }
            let truth: Vec<Vec<f64>> = val.iter().map(|t| t.y2.clone()).collect();
            let mut m = self.record(s, coarse, &truth, &preds, burn_in)?;
            let train = run_all(ed_narx.len(), true)?;
            let train_err: Vec<f64> = train
                .iter()
                .zip(&ed_narx)
                .map(|(p, t)| p.as_ref().map_or(f64::INFINITY, |p| relative_error(p, &t.output, burn_in)))
                .collect();
            m.training_median_error = median(&train_err);
            m.model_terms = match s {
                SurrogateKind::Narx => narx.as_ref().map_or(0, |m| m.basis.len()),
                SurrogateKind::Pcnarx => pcnarx.as_ref().map_or(0, |m| m.basis.len()),
                _ => mnarx.as_ref().map_or(0, |m| m.final_model.basis.len()),
            };
            self.metrics.insert(s.name().to_string(), m);
        }
        Ok(())
    }
}

struct CoupledTrace {
    x: Trajectory,
    y1: Vec<f64>,
    y2: Vec<f64>,
}

#[derive(Serialize)]
struct FrozenArtifact<'a> {
    grid: TimeGrid,
    models: &'a [PceModel],
}

fn is_divergence(e: &uqdyn::Error) -> bool {
    match e {
        uqdyn::Error::Diverged { .. } => true,
        uqdyn::Error::Stage { source, .. } => is_divergence(source),
        _ => false,
    }
}

/// Samples taken from the true data before any stage forecasts.
fn mnarx_burn_in(m: &MNarxModel) -> usize {
    let subs = m.spec.quantities.iter().filter_map(|q| match q {
        QuantityDef::SubModel { name, .. } => m.sub_models.get(name).map(|s| s.lags.burn_in()),
        QuantityDef::Transform { .. } => None,
    });
    subs.chain(std::iter::once(m.final_model.lags.burn_in())).max().unwrap_or(0)
}
