//! Manifold-NARX: a triangular sequence of auxiliary quantities (transforms
//! and autoregressive sub-models) feeding a final NARX model.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::narx::{
    fit_narx, fit_narx_sparse_scored, ForecastInit, LagConfig, NarxModel, NarxSolver, NarxTrace, RegressorBasis,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op", deny_unknown_fields)]
pub enum Transform {
    Identity { of: String },
    Power { of: String, exponent: i32 },
    Product { a: String, b: String },
    Difference { a: String, b: String },
}

impl Transform {
    fn refs(&self) -> Vec<&str> {
        match self {
            Transform::Identity { of } | Transform::Power { of, .. } => vec![of],
            Transform::Product { a, b } | Transform::Difference { a, b } => vec![a, b],
        }
    }

    fn apply(&self, get: impl Fn(&str) -> Vec<f64>) -> Vec<f64> {
        match self {
            Transform::Identity { of } => get(of),
            Transform::Power { of, exponent } => get(of).into_iter().map(|v| v.powi(*exponent)).collect(),
            Transform::Product { a, b } => get(a).iter().zip(get(b)).map(|(x, y)| x * y).collect(),
            Transform::Difference { a, b } => get(a).iter().zip(get(b)).map(|(x, y)| x - y).collect(),
        }
    }
}

/// NARX stage: response regressed on its own past and the `inputs` signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub inputs: Vec<String>,
    pub degree: u32,
    pub n_y: usize,
    /// One order per input, or a single order applied to every input.
    pub n_x: Vec<usize>,
    pub solver: NarxSolver,
}

impl StageConfig {
    pub fn lag_config(&self) -> Result<LagConfig> {
        let n_x = match self.n_x.len() {
            1 => vec![self.n_x[0]; self.inputs.len()],
            n if n == self.inputs.len() => self.n_x.clone(),
            n => return Err(Error::dims(format!("{n} exogenous orders for {} inputs", self.inputs.len()))),
        };
        LagConfig::new(self.n_y, n_x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum QuantityDef {
    Transform { name: String, transform: Transform },
    /// Trained on the auxiliary signal of the same name.
    SubModel { name: String, stage: StageConfig },
}

impl QuantityDef {
    pub fn name(&self) -> &str {
        match self {
            QuantityDef::Transform { name, .. } | QuantityDef::SubModel { name, .. } => name,
        }
    }

    fn refs(&self) -> Vec<&str> {
        match self {
            QuantityDef::Transform { transform, .. } => transform.refs(),
            QuantityDef::SubModel { stage, .. } => stage.inputs.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    /// Names of the exogenous input signals.
    pub inputs: Vec<String>,
    pub quantities: Vec<QuantityDef>,
    pub output: StageConfig,
}

impl ManifoldSpec {
    /// Checks that every reference points to an input or an earlier
    /// quantity, and that names are unique.
    pub fn new(inputs: Vec<String>, quantities: Vec<QuantityDef>, output: StageConfig) -> Result<Self> {
        ManifoldSpec { inputs, quantities, output }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let mut known: HashSet<&str> = HashSet::new();
        for name in &self.inputs {
            if !known.insert(name) {
                return Err(Error::invalid(format!("duplicate signal name `{name}`")));
            }
        }
        for q in &self.quantities {
            for r in q.refs() {
                if !known.contains(r) {
                    return Err(Error::UndefinedQuantity(r.to_string()));
                }
            }
            if let QuantityDef::SubModel { stage, .. } = q {
                stage.lag_config()?;
            }
            if !known.insert(q.name()) {
                return Err(Error::invalid(format!("duplicate signal name `{}`", q.name())));
            }
        }
        for r in &self.output.inputs {
            if !known.contains(r.as_str()) {
                return Err(Error::UndefinedQuantity(r.clone()));
            }
        }
        self.output.lag_config()?;
        Ok(self)
    }

    /// `x -> final stage on x` with no auxiliary quantities.
    pub fn identity(input: &str, output: StageConfig) -> Result<Self> {
        ManifoldSpec::new(vec![input.to_string()], Vec::new(), output)
    }
}

/// One training trace: inputs, auxiliary responses by name, final response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnarxTrace {
    pub inputs: Vec<Vec<f64>>,
    pub auxiliary: BTreeMap<String, Vec<f64>>,
    pub output: Vec<f64>,
}

/// Signals by name over one trace.
pub type ManifoldTrace = BTreeMap<String, Vec<f64>>;

/// How sub-model quantities are obtained at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubModelFeed {
    #[default]
    Forecast,
    TeacherForced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MNarxModel {
    pub spec: ManifoldSpec,
    /// Trained sub-models by quantity name.
    pub sub_models: BTreeMap<String, NarxModel>,
    pub final_model: NarxModel,
}

fn stage_err(stage: &str, e: Error) -> Error {
    Error::Stage { stage: stage.to_string(), source: Box::new(e) }
}

/// Computes the quantities in order. Sub-model quantities are taken from
/// `auxiliary` unless a model is given, in which case they are forecast.
fn assemble(
    spec: &ManifoldSpec,
    inputs: &[Vec<f64>],
    auxiliary: Option<&BTreeMap<String, Vec<f64>>>,
    models: Option<(&BTreeMap<String, NarxModel>, ForecastInit)>,
) -> Result<ManifoldTrace> {
    if inputs.len() != spec.inputs.len() {
        return Err(Error::dims(format!("{} input signals for {} declared", inputs.len(), spec.inputs.len())));
    }
    let mut signals: ManifoldTrace = spec.inputs.iter().cloned().zip(inputs.iter().cloned()).collect();
    for q in &spec.quantities {
        let values = match q {
            QuantityDef::Transform { transform, .. } => transform.apply(|n| signals[n].clone()),
            QuantityDef::SubModel { name, stage } => match models {
                Some((m, init)) => {
                    let model = &m[name];
                    let ins: Vec<&[f64]> = stage.inputs.iter().map(|n| signals[n].as_slice()).collect();
                    let prefix = auxiliary.and_then(|a| a.get(name)).map(Vec::as_slice);
                    model.forecast(&ins, init, prefix).map_err(|e| stage_err(name, e))?
                }
                None => auxiliary
                    .and_then(|a| a.get(name))
                    .cloned()
                    .ok_or_else(|| Error::UndefinedQuantity(format!("auxiliary data for `{name}`")))?,
            },
        };
        signals.insert(q.name().to_string(), values);
    }
    Ok(signals)
}

/// Manifold of one trace with true auxiliary data (training mode).
pub fn build_manifold(spec: &ManifoldSpec, inputs: &[Vec<f64>], auxiliary: &BTreeMap<String, Vec<f64>>) -> Result<ManifoldTrace> {
    assemble(spec, inputs, Some(auxiliary), None)
}

fn stage_traces(stage: &StageConfig, manifolds: &[ManifoldTrace], responses: Vec<&Vec<f64>>) -> Result<Vec<NarxTrace>> {
    manifolds
        .iter()
        .zip(responses)
        .map(|(m, y)| NarxTrace::new(stage.inputs.iter().map(|n| m[n].clone()).collect(), y.clone()))
        .collect()
}

fn fit_stage(name: &str, stage: &StageConfig, train: &[NarxTrace], scoring: &[NarxTrace]) -> Result<NarxModel> {
    let cfg = stage.lag_config()?;
    let fit = match &stage.solver {
        NarxSolver::Ols => fit_narx(&cfg, stage.degree, train, &stage.solver).map(|f| f.model),
        NarxSolver::Sparse(sc) => {
            let candidates = RegressorBasis::total_degree(cfg.n_lags(), stage.degree);
            fit_narx_sparse_scored(&cfg, &candidates, train, scoring, sc).map(|f| f.fit.model)
        }
    };
    fit.map_err(|e| stage_err(name, e))
}

/// Trains every sub-model and the final model on true manifold signals.
/// Sparse stages score their path lengths on the manifold as it is seen at
/// prediction time, with upstream sub-models forecasting.
pub fn fit_mnarx(spec: &ManifoldSpec, traces: &[MnarxTrace]) -> Result<MNarxModel> {
    if traces.is_empty() {
        return Err(Error::invalid("no training traces"));
    }
    let truth: Vec<ManifoldTrace> =
        traces.iter().map(|t| build_manifold(spec, &t.inputs, &t.auxiliary)).collect::<Result<_>>()?;
    let mut fed: Vec<ManifoldTrace> =
        traces.iter().map(|t| spec.inputs.iter().cloned().zip(t.inputs.iter().cloned()).collect()).collect();
    let mut sub_models = BTreeMap::new();
    for q in &spec.quantities {
        match q {
            QuantityDef::Transform { name, transform } => {
                for m in fed.iter_mut() {
                    let v = transform.apply(|n| m[n].clone());
                    m.insert(name.clone(), v);
                }
            }
            QuantityDef::SubModel { name, stage } => {
                let responses: Vec<&Vec<f64>> = truth.iter().map(|m| &m[name]).collect();
                let train = stage_traces(stage, &truth, responses.clone())?;
                let scoring = stage_traces(stage, &fed, responses)?;
                let model = fit_stage(name, stage, &train, &scoring)?;
                for ((m, sc), tr) in fed.iter_mut().zip(&scoring).zip(&truth) {
                    let v = match model.forecast_trace(sc, ForecastInit::TruePrefix) {
                        Ok(v) => v,
                        Err(e) => {
                            log::warn!("sub-model `{name}` fails on a training trace ({e}); scoring with true data");
                            tr[name].clone()
                        }
                    };
                    m.insert(name.clone(), v);
                }
                sub_models.insert(name.clone(), model);
            }
        }
    }
    let outputs: Vec<&Vec<f64>> = traces.iter().map(|t| &t.output).collect();
    let train = stage_traces(&spec.output, &truth, outputs.clone())?;
    let scoring = stage_traces(&spec.output, &fed, outputs)?;
    let final_model = fit_stage("output", &spec.output, &train, &scoring)?;
    Ok(MNarxModel { spec: spec.clone(), sub_models, final_model })
}

impl MNarxModel {
    /// Manifold at prediction time. `auxiliary` provides the true data in
    /// teacher-forced mode and the initial samples for true-prefix init.
    pub fn manifold(
        &self,
        inputs: &[Vec<f64>],
        init: ForecastInit,
        feed: SubModelFeed,
        auxiliary: Option<&BTreeMap<String, Vec<f64>>>,
    ) -> Result<ManifoldTrace> {
        match feed {
            SubModelFeed::Forecast => assemble(&self.spec, inputs, auxiliary, Some((&self.sub_models, init))),
            SubModelFeed::TeacherForced => assemble(&self.spec, inputs, auxiliary, None),
        }
    }

    pub fn forecast(
        &self,
        inputs: &[Vec<f64>],
        init: ForecastInit,
        feed: SubModelFeed,
        auxiliary: Option<&BTreeMap<String, Vec<f64>>>,
        prefix: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let m = self.manifold(inputs, init, feed, auxiliary)?;
        let ins: Vec<&[f64]> = self.spec.output.inputs.iter().map(|n| m[n].as_slice()).collect();
        self.final_model.forecast(&ins, init, prefix).map_err(|e| stage_err("output", e))
    }

    pub fn forecast_trace(&self, trace: &MnarxTrace, init: ForecastInit, feed: SubModelFeed) -> Result<Vec<f64>> {
        self.forecast(&trace.inputs, init, feed, Some(&trace.auxiliary), Some(&trace.output))
    }
}

pub fn forecast_mnarx(model: &MNarxModel, inputs: &[Vec<f64>], init: ForecastInit) -> Result<Vec<f64>> {
    model.forecast(inputs, init, SubModelFeed::Forecast, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pce::MultiIndex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn stage(inputs: &[&str], degree: u32, n_y: usize, n_x: usize) -> StageConfig {
        StageConfig {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            degree,
            n_y,
            n_x: vec![n_x],
            solver: NarxSolver::Ols,
        }
    }

    fn two_stage(seed: u64) -> MnarxTrace {
        let x = noise(300, seed);
        let mut a = vec![0.0; 300];
        let mut b = vec![0.0; 300];
        for k in 1..300 {
            a[k] = 0.5 * a[k - 1] + x[k];
            b[k] = 0.3 * b[k - 1] + a[k] * a[k];
        }
        MnarxTrace { inputs: vec![x], auxiliary: BTreeMap::from([("a".to_string(), a)]), output: b }
    }

    fn two_stage_spec() -> ManifoldSpec {
        ManifoldSpec::new(
            vec!["x".into()],
            vec![QuantityDef::SubModel { name: "a".into(), stage: stage(&["x"], 1, 1, 0) }],
            stage(&["a"], 2, 1, 0),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_triangular_specs() {
        let forward = QuantityDef::Transform { name: "z".into(), transform: Transform::Identity { of: "w".into() } };
        let w = QuantityDef::Transform { name: "w".into(), transform: Transform::Identity { of: "x".into() } };
        assert!(matches!(
            ManifoldSpec::new(vec!["x".into()], vec![forward.clone(), w.clone()], stage(&["z"], 1, 1, 0)),
            Err(Error::UndefinedQuantity(_))
        ));
        assert!(ManifoldSpec::new(vec!["x".into()], vec![w, forward], stage(&["z"], 1, 1, 0)).is_ok());
        assert!(ManifoldSpec::new(vec!["x".into()], vec![], stage(&["q"], 1, 1, 0)).is_err());
    }

    #[test]
    fn transforms() {
        let spec = ManifoldSpec::new(
            vec!["x".into()],
            vec![QuantityDef::Transform {
                name: "sq".into(),
                transform: Transform::Power { of: "x".into(), exponent: 2 },
            }],
            stage(&["sq"], 1, 1, 0),
        )
        .unwrap();
        let m = build_manifold(&spec, &[vec![1.0, -2.0, 3.0]], &BTreeMap::new()).unwrap();
        assert_eq!(m["sq"], vec![1.0, 4.0, 9.0]);
        assert_eq!(m["x"], vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn identity_manifold_is_classical_narx() {
        let out = stage(&["x"], 2, 2, 1);
        let traces: Vec<MnarxTrace> = (0..3).map(|s| two_stage(s)).collect();
        let spec = ManifoldSpec::identity("x", out.clone()).unwrap();
        let m = fit_mnarx(&spec, &traces).unwrap();
        let narx_data: Vec<NarxTrace> =
            traces.iter().map(|t| NarxTrace::new(t.inputs.clone(), t.output.clone()).unwrap()).collect();
        let classical = fit_narx(&out.lag_config().unwrap(), 2, &narx_data, &NarxSolver::Ols).unwrap().model;
        assert_eq!(m.final_model, classical);
        let x = noise(300, 99);
        let a = forecast_mnarx(&m, &[x.clone()], ForecastInit::Zeros).unwrap();
        let b = classical.forecast(&[&x], ForecastInit::Zeros, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_stage_recovery() {
        let traces: Vec<MnarxTrace> = (0..2).map(|s| two_stage(10 + s)).collect();
        let m = fit_mnarx(&two_stage_spec(), &traces).unwrap();
        let sub = &m.sub_models["a"];
        let c = |model: &NarxModel, t: Vec<u32>| model.coefficients[model.basis.position(&MultiIndex(t)).unwrap()];
        assert!((c(sub, vec![1, 0]) - 0.5).abs() < 1e-8);
        assert!((c(sub, vec![0, 1]) - 1.0).abs() < 1e-8);
        assert!((c(&m.final_model, vec![1, 0]) - 0.3).abs() < 1e-8);
        assert!((c(&m.final_model, vec![0, 2]) - 1.0).abs() < 1e-8);

        let test = two_stage(77);
        let f = m.forecast_trace(&test, ForecastInit::TruePrefix, SubModelFeed::Forecast).unwrap();
        let err = f.iter().zip(&test.output).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
        assert!(err < 1e-5, "{err}");
        let g = m.forecast_trace(&test, ForecastInit::TruePrefix, SubModelFeed::TeacherForced).unwrap();
        let err_tf = g.iter().zip(&test.output).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
        assert!(err_tf < 1e-5, "{err_tf}");
    }

    #[test]
    fn stage_divergence_is_reported() {
        let mut m = fit_mnarx(&two_stage_spec(), &[two_stage(5)]).unwrap();
        let sub = m.sub_models.get_mut("a").unwrap();
        let j = sub.basis.position(&MultiIndex(vec![1, 0])).unwrap();
        sub.coefficients[j] = 3.0;
        match forecast_mnarx(&m, &[vec![1.0; 300]], ForecastInit::Zeros) {
            Err(Error::Stage { stage, source }) => {
                assert_eq!(stage, "a");
                assert!(matches!(*source, Error::Diverged { .. }));
            }
            other => panic!("expected a stage failure, got {other:?}"),
        }
    }

    #[test]
    fn per_input_orders() {
        let s = stage(&["x", "a"], 2, 3, 2);
        assert_eq!(s.lag_config().unwrap().n_x, vec![2, 2]);
        let bad = StageConfig { n_x: vec![1, 2, 3], ..s };
        assert!(bad.lag_config().is_err());
    }
}
