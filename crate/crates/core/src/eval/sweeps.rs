//! Ablation, noise and fusion-strategy sweeps over seeds.

use rayon::prelude::*;
use serde::Serialize;

use super::{apply_strategy, evaluate, EvalError, EvalSpec, ReportRow, Strategy};
use crate::config::{fingerprint_of, FusionMode, ModelConfig, NoiseSpec, PositionalKind, QueryInitKind, RunConfig, TrainConfig};
use crate::data::FieldDataset;
use crate::model::OmniFieldModel;
use crate::training::{train, validation_score, Task, TaskSampler};

/// `(gff, sin_init, icmr)` toggles of the ablation table, in row order.
pub const ABLATION_ROWS: [(bool, bool, bool); 6] = [
    (true, true, true),
    (false, true, true),
    (true, false, true),
    (true, true, false),
    (false, false, true),
    (false, false, false),
];

/// One train-then-evaluate run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Experiment {
    pub labels: Vec<(String, String)>,
    /// Index into the dataset slice passed to [`run_experiments`].
    pub dataset: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSpec,
}

impl Experiment {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_of(&(&self.model, &self.train, &self.eval))
    }
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

fn seeded(base: &RunConfig, seed: u64) -> (ModelConfig, TrainConfig) {
    let mut model = base.model.clone();
    let mut train = base.train.clone();
    model.seed = seed;
    train.seed = seed;
    (model, train)
}

/// Forecasting at the full horizon on the validation windows.
fn default_eval(base: &RunConfig, ds: &FieldDataset, train: &TrainConfig) -> Result<EvalSpec, EvalError> {
    let sampler = TaskSampler::from_config(train, ds)?;
    Ok(EvalSpec {
        task: Task::Forecasting,
        windows: ds.val_windows(),
        inputs: sampler.inputs,
        targets: sampler.targets,
        region: base.eval.region,
        delta: sampler.horizon,
    })
}

pub fn ablation_experiments(base: &RunConfig, ds: &FieldDataset, seeds: &[u64]) -> Result<Vec<Experiment>, EvalError> {
    let mut out = Vec::new();
    for &(gff, sin_init, icmr) in &ABLATION_ROWS {
        for &seed in seeds {
            let (mut model, train) = seeded(base, seed);
            model.positional = if gff { PositionalKind::Gaussian } else { PositionalKind::Fixed };
            model.query_init = if sin_init { QueryInitKind::Sinusoidal } else { QueryInitKind::RandomNormal };
            model.fusion = if icmr { FusionMode::Icmr } else { FusionMode::MidFusion };
            let eval = default_eval(base, ds, &train)?;
            out.push(Experiment {
                labels: vec![
                    ("gff".into(), on_off(gff)),
                    ("sin_init".into(), on_off(sin_init)),
                    ("icmr".into(), on_off(icmr)),
                ],
                dataset: 0,
                model,
                train,
                eval,
            });
        }
    }
    Ok(out)
}

/// ICMR and mid-fusion trained with corrupted inputs at each noise level and
/// scored on clean inputs.
pub fn noise_experiments(base: &RunConfig, ds: &FieldDataset, seeds: &[u64], sigmas: &[f64]) -> Result<Vec<Experiment>, EvalError> {
    let noise_seed = base.train.noise.as_ref().map_or(0, |n| n.seed);
    let mut out = Vec::new();
    for fusion in [FusionMode::Icmr, FusionMode::MidFusion] {
        for &sigma in sigmas {
            for &seed in seeds {
                let (mut model, mut train) = seeded(base, seed);
                model.fusion = fusion;
                train.noise = (sigma > 0.0).then(|| NoiseSpec {
                    max_corrupted: ds.modality_count() - 1,
                    sigma,
                    seed: noise_seed,
                });
                let eval = default_eval(base, ds, &train)?;
                out.push(Experiment {
                    labels: vec![
                        ("fusion".into(), fusion_label(fusion).into()),
                        ("sigma".into(), sigma.to_string()),
                    ],
                    dataset: 0,
                    model,
                    train,
                    eval,
                });
            }
        }
    }
    Ok(out)
}

pub fn fusion_label(f: FusionMode) -> &'static str {
    match f {
        FusionMode::Icmr => "icmr",
        FusionMode::MidFusion => "mid_fusion",
    }
}

/// Datasets (native first) and runs for a strategy × input-set grid.
#[derive(Clone, Debug)]
pub struct FusionSetup {
    pub datasets: Vec<FieldDataset>,
    pub experiments: Vec<Experiment>,
}

/// Every strategy is trained on `target` alone and on all modalities, and
/// scored on forecasting `target`.
pub fn fusion_experiments(
    base: &RunConfig,
    ds: &FieldDataset,
    seeds: &[u64],
    target: usize,
    strategies: &[Strategy],
) -> Result<FusionSetup, EvalError> {
    let m = ds.modality_count();
    if target >= m {
        return Err(EvalError::Invalid(format!("target modality {target} out of range")));
    }
    let mut datasets = vec![ds.clone()];
    let mut experiments = Vec::new();
    for &strategy in strategies {
        let index = match strategy {
            Strategy::CoLocation | Strategy::Interpolation => {
                datasets.push(apply_strategy(ds, strategy, base.eval.idw_power, base.eval.idw_neighbors)?);
                datasets.len() - 1
            }
            _ => 0,
        };
        for (label, inputs) in [("unimodal", vec![target]), ("multimodal", (0..m).collect())] {
            for &seed in seeds {
                let (mut model, mut train) = seeded(base, seed);
                model.fusion = strategy.fusion();
                train.input_modalities = Some(inputs.clone());
                train.target_modalities = Some(vec![target]);
                let mut eval = default_eval(base, ds, &train)?;
                eval.region = strategy.region();
                experiments.push(Experiment {
                    labels: vec![("strategy".into(), strategy.name().into()), ("inputs".into(), label.into())],
                    dataset: index,
                    model,
                    train,
                    eval,
                });
            }
        }
    }
    Ok(FusionSetup { datasets, experiments })
}

fn run_one(ds: &FieldDataset, e: &Experiment) -> Result<ReportRow, EvalError> {
    let mut model = OmniFieldModel::new(e.model.clone(), ds.modalities().to_vec(), ds.spatial_dim())?;
    let outcome = train(&mut model, ds, &e.train, None, &mut |_| {})?;
    let best_step = outcome.state.best.as_ref().map(|b| b.step);
    if let Some(best) = outcome.state.best {
        model.params_mut().load_values(best.params).map_err(EvalError::Invalid)?;
    }
    let rmse = evaluate(&model, ds, &e.eval)?;
    Ok(ReportRow {
        labels: e.labels.clone(),
        seed: e.seed(),
        fingerprint: e.fingerprint(),
        score: validation_score(ds, &rmse),
        rmse,
        best_step,
    })
}

/// Runs experiments in parallel; rows come back in input order.
pub fn run_experiments(datasets: &[FieldDataset], experiments: &[Experiment]) -> Result<Vec<ReportRow>, EvalError> {
    experiments
        .par_iter()
        .map(|e| {
            let ds = datasets
                .get(e.dataset)
                .ok_or_else(|| EvalError::Invalid(format!("no dataset {}", e.dataset)))?;
            run_one(ds, e)
        })
        .collect()
}

/// Runs `f` on a pool of at most `threads` workers, or on the global pool.
pub fn with_thread_cap<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .unwrap_or_else(|_| unreachable!("thread pool with positive size")),
        _ => f(),
    }
}

/// `(score(σ) − score(0)) / score(0)` for one fusion mode and seed.
pub fn relative_degradation(rows: &[ReportRow], fusion: &str, sigma: f64, seed: u64) -> Option<f64> {
    let find = |s: f64| {
        rows.iter()
            .find(|r| r.seed == seed && r.label("fusion") == Some(fusion) && r.label("sigma") == Some(&s.to_string()))
            .map(|r| r.score)
    };
    let clean = find(0.0)?;
    Some((find(sigma)? - clean) / clean)
}
