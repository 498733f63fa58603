//! Metrics, fusion strategies, sweeps and spectra.

mod idw;
mod spectrum;
mod sweeps;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use idw::{idw, IdwStencil};
pub use spectrum::{fftshift, magnitude_spectrum, power_spectrum_delta};
pub use sweeps::{
    ablation_experiments, fusion_experiments, noise_experiments, relative_degradation, run_experiments, with_thread_cap,
    Experiment, FusionSetup, ABLATION_ROWS,
};

use crate::config::{EvalRegion, FusionMode};
use crate::data::{DataError, Field, FieldDataset, SensorMaskSet, ZScore};
use crate::model::{ModelError, OmniFieldModel};
use crate::tensor::{Tensor, TensorError};
use crate::training::{build_instance, Task, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training failed: {0}")]
    Train(Box<TrainError>),
    #[error("shape mismatch: prediction {pred:?} vs truth {truth:?}")]
    ShapeMismatch { pred: Vec<usize>, truth: Vec<usize> },
    #[error("sensor intersection is empty")]
    EmptyIntersection,
    #[error("invalid evaluation: {0}")]
    Invalid(String),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(Box::new(e))
    }
}

/// RMSE per modality after undoing normalization. Modalities without
/// targets map to `None`.
pub fn rmse_per_modality(preds: &[Option<Vec<f64>>], targets: &[Option<Vec<f64>>], stats: &[ZScore]) -> Vec<Option<f64>> {
    let mut acc = ErrorAccumulator::new(targets.len());
    acc.add(preds, targets, stats);
    acc.rmse()
}

/// Running sums of squared physical-unit errors per modality.
#[derive(Clone, Debug, Default)]
struct ErrorAccumulator {
    sq: Vec<f64>,
    n: Vec<usize>,
}

impl ErrorAccumulator {
    fn new(m: usize) -> Self {
        Self {
            sq: vec![0.0; m],
            n: vec![0; m],
        }
    }

    fn add(&mut self, preds: &[Option<Vec<f64>>], targets: &[Option<Vec<f64>>], stats: &[ZScore]) {
        for (m, target) in targets.iter().enumerate() {
            let (Some(t), Some(Some(p))) = (target, preds.get(m)) else {
                continue;
            };
            for (a, b) in p.iter().zip(t) {
                let d = stats[m].invert(*a) - stats[m].invert(*b);
                self.sq[m] += d * d;
            }
            self.n[m] += t.len();
        }
    }

    fn merge(&mut self, other: &Self) {
        for m in 0..self.sq.len() {
            self.sq[m] += other.sq[m];
            self.n[m] += other.n[m];
        }
    }

    fn rmse(&self) -> Vec<Option<f64>> {
        self.sq
            .iter()
            .zip(&self.n)
            .map(|(&s, &n)| (n > 0).then(|| (s / n as f64).sqrt()))
            .collect()
    }
}

/// What to evaluate and where.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub task: Task,
    pub windows: Range<usize>,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub region: EvalRegion,
    /// Forecast offset in frames; ignored by the same-time tasks.
    pub delta: usize,
}

/// Input presence bits and, per modality, the sites to score.
type QueryPlan = (Vec<bool>, Vec<Option<Vec<usize>>>);

fn query_plan(ds: &FieldDataset, spec: &EvalSpec) -> Result<QueryPlan, EvalError> {
    let m = ds.modality_count();
    if spec.inputs.iter().chain(&spec.targets).any(|&i| i >= m) {
        return Err(EvalError::Invalid(format!("modality index out of range for {m} modalities")));
    }
    let mut present: Vec<bool> = (0..m).map(|i| spec.inputs.contains(&i)).collect();
    let region = ds.region_sites(spec.region);
    let mut sites = vec![None; m];
    for &t in &spec.targets {
        let own = ds.masks().sites(t);
        sites[t] = match spec.task {
            Task::Reconstruction => present[t].then(|| own.to_vec()),
            Task::Interpolation => Some(region.iter().copied().filter(|s| own.binary_search(s).is_err()).collect()),
            Task::Forecasting => Some(region.clone()),
            Task::CrossModal => {
                present[t] = false;
                Some(region.clone())
            }
        };
    }
    if !present.iter().any(|&p| p) {
        return Err(EvalError::Invalid("no input modality left".into()));
    }
    Ok((present, sites))
}

/// Per-modality RMSE in physical units, pooled over `spec.windows`.
pub fn evaluate(model: &OmniFieldModel, ds: &FieldDataset, spec: &EvalSpec) -> Result<Vec<Option<f64>>, EvalError> {
    let (present, sites) = query_plan(ds, spec)?;
    let delta = if spec.task == Task::Forecasting { spec.delta } else { 0 };
    if spec.windows.end > ds.window_count() || spec.windows.is_empty() {
        return Err(EvalError::Invalid(format!("window range {:?} is empty or out of bounds", spec.windows)));
    }
    let parts: Vec<ErrorAccumulator> = spec
        .windows
        .clone()
        .into_par_iter()
        .map(|w| -> Result<ErrorAccumulator, EvalError> {
            let ctx = ds.context(w, &present)?;
            let inst = build_instance(ds, spec.task, w, delta, ctx, sites.clone());
            let preds = model.predict(&inst.context, &inst.queries)?;
            let mut acc = ErrorAccumulator::new(ds.modality_count());
            acc.add(&preds, &inst.targets.values, ds.stats());
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;
    let mut total = ErrorAccumulator::new(ds.modality_count());
    for p in &parts {
        total.merge(p);
    }
    Ok(total.rmse())
}

/// Forecasts of one modality on every catalog site for each window, stacked
/// as `sites × windows` grids in physical units: `(prediction, truth)`.
pub fn forecast_grid(
    model: &OmniFieldModel,
    ds: &FieldDataset,
    windows: Range<usize>,
    modality: usize,
    inputs: &[usize],
    delta: usize,
) -> Result<(Tensor, Tensor), EvalError> {
    let spec = EvalSpec {
        task: Task::Forecasting,
        windows: windows.clone(),
        inputs: inputs.to_vec(),
        targets: vec![modality],
        region: EvalRegion::Grid,
        delta,
    };
    let (present, sites) = query_plan(ds, &spec)?;
    let cols: Vec<(Vec<f64>, Vec<f64>)> = windows
        .clone()
        .into_par_iter()
        .map(|w| -> Result<_, EvalError> {
            let ctx = ds.context(w, &present)?;
            let inst = build_instance(ds, Task::Forecasting, w, delta, ctx, sites.clone());
            let preds = model.predict(&inst.context, &inst.queries)?;
            let z = ds.stats()[modality];
            let p = z.invert_all(preds[modality].as_ref().expect("requested"));
            let t = z.invert_all(inst.targets.values[modality].as_ref().expect("requested"));
            Ok((p, t))
        })
        .collect::<Result<_, _>>()?;
    let (rows, n) = (ds.sites(), cols.len());
    let mut pred = vec![0.0; rows * n];
    let mut truth = vec![0.0; rows * n];
    for (j, (p, t)) in cols.iter().enumerate() {
        for i in 0..rows {
            pred[i * n + j] = p[i];
            truth[i * n + j] = t[i];
        }
    }
    Ok((Tensor::new(vec![rows, n], pred)?, Tensor::new(vec![rows, n], truth)?))
}

/// Fusion strategy: two data-side baselines and two model-side variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    CoLocation,
    Interpolation,
    MidFusion,
    Icmr,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::CoLocation, Strategy::Interpolation, Strategy::MidFusion, Strategy::Icmr];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::CoLocation => "co-location",
            Strategy::Interpolation => "interpolation",
            Strategy::MidFusion => "mid-fusion",
            Strategy::Icmr => "icmr",
        }
    }

    /// Fusion mode of the model trained under this strategy.
    pub fn fusion(self) -> FusionMode {
        match self {
            Strategy::MidFusion => FusionMode::MidFusion,
            _ => FusionMode::Icmr,
        }
    }

    /// Region on which the strategy is scored.
    pub fn region(self) -> EvalRegion {
        match self {
            Strategy::CoLocation => EvalRegion::Intersection,
            _ => EvalRegion::Union,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "co-location" | "co_location" | "colocation" => Ok(Strategy::CoLocation),
            "interpolation" | "idw" => Ok(Strategy::Interpolation),
            "mid-fusion" | "mid_fusion" => Ok(Strategy::MidFusion),
            "icmr" => Ok(Strategy::Icmr),
            other => Err(format!(
                "unknown strategy `{other}` (expected co-location, interpolation, mid-fusion or icmr)"
            )),
        }
    }
}

/// Inverse-distance-weighted copies of the fields: each modality keeps its
/// own sensor values and is imputed from them on every other union site.
pub fn idw_fields(ds: &FieldDataset, power: f64, neighbors: usize) -> Vec<Field> {
    let union = ds.masks().union();
    let d = ds.spatial_dim();
    (0..ds.modality_count())
        .map(|m| {
            let own = ds.masks().sites(m);
            let src = ds.site_coords(own);
            let field = &ds.fields()[m];
            let stencils: Vec<(usize, IdwStencil)> = union
                .iter()
                .filter(|s| own.binary_search(s).is_err())
                .map(|&s| (s, IdwStencil::new(&src, d, &ds.coords()[s * d..(s + 1) * d], power, neighbors)))
                .collect();
            let mut values = field.values().to_vec();
            let steps = field.steps();
            let mut frame_vals = vec![0.0; own.len()];
            for n in 0..steps {
                for (j, &s) in own.iter().enumerate() {
                    frame_vals[j] = field.at(s, n);
                }
                for (s, st) in &stencils {
                    values[s * steps + n] = st.apply(&frame_vals);
                }
            }
            Field::new(field.sites(), steps, values).expect("same shape")
        })
        .collect()
}

/// Input view for a strategy. Co-location restricts every modality to the
/// shared sensors; interpolation imputes each modality onto the union by
/// inverse-distance weighting; the model-side strategies pass data through.
pub fn apply_strategy(ds: &FieldDataset, strategy: Strategy, power: f64, neighbors: usize) -> Result<FieldDataset, EvalError> {
    let m = ds.modality_count();
    match strategy {
        Strategy::CoLocation => {
            let shared = ds.masks().intersection();
            if shared.is_empty() {
                return Err(EvalError::EmptyIntersection);
            }
            let masks = SensorMaskSet::from_sites(ds.sites(), vec![shared; m])?;
            Ok(ds.with_input_view(masks, None)?)
        }
        Strategy::Interpolation => {
            let masks = SensorMaskSet::from_sites(ds.sites(), vec![ds.masks().union(); m])?;
            Ok(ds.with_input_view(masks, Some(idw_fields(ds, power, neighbors)))?)
        }
        Strategy::MidFusion | Strategy::Icmr => Ok(ds.clone()),
    }
}

/// One result line of a sweep or evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub labels: Vec<(String, String)>,
    pub seed: u64,
    pub fingerprint: String,
    pub rmse: Vec<Option<f64>>,
    /// Mean RMSE over scored modalities, each divided by its normalization scale.
    pub score: f64,
    pub best_step: Option<usize>,
}

/// Evaluation results with the configuration they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub seed: u64,
    pub modalities: Vec<String>,
    pub rows: Vec<ReportRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let keys: Vec<&str> = self.rows.first().map_or(Vec::new(), |r| r.labels.iter().map(|(k, _)| k.as_str()).collect());
        let mut header: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
        header.extend(["seed".to_string(), "fingerprint".to_string()]);
        header.extend(self.modalities.iter().map(|m| format!("rmse_{m}")));
        header.extend(["score".to_string(), "best_step".to_string()]);
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.rows {
            let mut line: Vec<String> = r.labels.iter().map(|(_, v)| v.clone()).collect();
            line.push(r.seed.to_string());
            line.push(r.fingerprint.clone());
            line.extend(r.rmse.iter().map(|v| cell(*v)));
            line.push(r.score.to_string());
            line.push(r.best_step.map(|s| s.to_string()).unwrap_or_default());
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn label_values(&self, key: &str) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if let Some((_, v)) = r.labels.iter().find(|(k, _)| k == key) {
                if !seen.contains(v) {
                    seen.push(v.clone());
                }
            }
        }
        seen
    }
}

impl ReportRow {
    pub fn label(&self, key: &str) -> Option<&str> {
        self.labels.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
