//! AdamW, warm-restart cosine schedule, task sampling and the training loop.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AdamWConfig, ConfigError, EvalRegion, NonFinitePolicy, ScheduleSpec, TrainConfig};
use crate::data::{corrupt, DataError, FieldDataset};
use crate::eval::{self, EvalError, EvalSpec};
use crate::model::{masked_loss, ContextSet, ModelError, OmniFieldModel, QuerySet, Targets};
use crate::seed::{derive_seed, rng_for, tags};
use crate::autodiff::Tape;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: &'static str },
    #[error("resume state does not match the model: {0}")]
    Resume(String),
    #[error("no feasible task: {0}")]
    NoFeasibleTask(String),
}

/// AdamW moment buffers and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    fn matches(&self, params: &[Tensor]) -> bool {
        self.first.len() == params.len()
            && self.second.len() == params.len()
            && params
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
pub fn adamw_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimizerState, lr: f64) -> Result<(), TrainError> {
    if params.len() != grads.len() || !state.matches(params) {
        return Err(TrainError::Resume("parameter, gradient and moment shapes differ".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite {
            step: state.step as usize,
            what: "gradient",
        });
    }
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let decay = 1.0 - lr * weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `max_lr`, then cosine decay to `min_lr`. Each
/// cycle repeats the warmup fraction; cycle `k` lasts `cycle_steps·mult^k`.
pub fn lr_at(step: usize, spec: &ScheduleSpec) -> f64 {
    let mut pos = step as f64;
    let mut len = spec.cycle_steps as f64;
    let mut warm = spec.warmup_steps as f64;
    while pos >= len {
        pos -= len;
        len *= spec.cycle_mult;
        warm *= spec.cycle_mult;
    }
    if pos < warm {
        return spec.max_lr * pos / warm;
    }
    let progress = (pos - warm) / (len - warm);
    spec.min_lr + (spec.max_lr - spec.min_lr) * 0.5 * (1.0 + (PI * progress).cos())
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Reconstruction,
    Interpolation,
    Forecasting,
    CrossModal,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Reconstruction, Task::Interpolation, Task::Forecasting, Task::CrossModal];

    pub fn name(self) -> &'static str {
        match self {
            Task::Reconstruction => "reconstruction",
            Task::Interpolation => "interpolation",
            Task::Forecasting => "forecasting",
            Task::CrossModal => "cross-modal",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reconstruction" => Ok(Task::Reconstruction),
            "interpolation" => Ok(Task::Interpolation),
            "forecasting" => Ok(Task::Forecasting),
            "cross-modal" | "cross_modal" => Ok(Task::CrossModal),
            other => Err(format!(
                "unknown task `{other}` (expected reconstruction, interpolation, forecasting or cross-modal)"
            )),
        }
    }
}

/// One (context, query, target) training or evaluation example.
#[derive(Clone, Debug)]
pub struct Instance {
    pub task: Task,
    pub window: usize,
    pub delta: usize,
    pub context: ContextSet,
    pub query_sites: Vec<Option<Vec<usize>>>,
    pub queries: QuerySet,
    pub targets: Targets,
}

/// Builds an instance whose targets are the normalized field values at the
/// query sites, `delta` frames after the window's input frame.
pub fn build_instance(
    ds: &FieldDataset,
    task: Task,
    window: usize,
    delta: usize,
    context: ContextSet,
    query_sites: Vec<Option<Vec<usize>>>,
) -> Instance {
    let frame = ds.target_frame(window, delta);
    let locations = query_sites.iter().map(|s| s.as_ref().map(|s| ds.site_coords(s))).collect();
    let targets = Targets {
        values: query_sites
            .iter()
            .enumerate()
            .map(|(m, s)| s.as_ref().map(|s| ds.normalized_values(m, frame, s)))
            .collect(),
    };
    Instance {
        task,
        window,
        delta,
        context,
        queries: QuerySet::new(ds.spatial_dim(), delta as f64, locations),
        query_sites,
        targets,
    }
}

/// Task mix, forecast horizon and modality restrictions for sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSampler {
    pub weights: [f64; 4],
    pub horizon: usize,
    pub query_points: Option<usize>,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl TaskSampler {
    pub fn from_config(cfg: &TrainConfig, ds: &FieldDataset) -> Result<Self, TrainError> {
        let m = ds.modality_count();
        let pick = |sel: &Option<Vec<usize>>, what: &str| -> Result<Vec<usize>, TrainError> {
            let mut v = sel.clone().unwrap_or_else(|| (0..m).collect());
            v.sort_unstable();
            v.dedup();
            if v.is_empty() || v.iter().any(|&i| i >= m) {
                return Err(TrainError::Config(ConfigError::Invalid(format!(
                    "{what} modalities {v:?} invalid for {m} modalities"
                ))));
            }
            Ok(v)
        };
        Ok(Self {
            weights: cfg.tasks.weights(),
            horizon: ds.window().pred_len,
            query_points: cfg.query_points,
            inputs: pick(&cfg.input_modalities, "input")?,
            targets: pick(&cfg.target_modalities, "target")?,
        })
    }

    pub fn presence(&self, modalities: usize) -> Vec<bool> {
        (0..modalities).map(|m| self.inputs.contains(&m)).collect()
    }

    fn subsample(&self, mut sites: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if let Some(q) = self.query_points {
            if q < sites.len() {
                let mut picked: Vec<usize> = index::sample(rng, sites.len(), q).into_iter().map(|i| sites[i]).collect();
                picked.sort_unstable();
                sites = picked;
            }
        }
        sites
    }

    fn feasible(&self, task: Task, ds: &FieldDataset) -> bool {
        match task {
            Task::Reconstruction => self.targets.iter().any(|m| self.inputs.contains(m)),
            Task::Interpolation => self.targets.iter().any(|&m| ds.masks().sites(m).len() < ds.sites()),
            Task::Forecasting => true,
            Task::CrossModal => self.inputs.len() >= 2 && self.targets.iter().any(|m| self.inputs.contains(m)),
        }
    }
}

/// Draws one instance from `windows`; infeasible tasks are resampled.
pub fn sample_task(ds: &FieldDataset, sampler: &TaskSampler, windows: Range<usize>, rng: &mut ChaCha8Rng) -> Result<Instance, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::NoFeasibleTask("empty window range".into()));
    }
    let weights: Vec<f64> = Task::ALL
        .iter()
        .zip(sampler.weights)
        .map(|(&t, w)| if sampler.feasible(t, ds) { w } else { 0.0 })
        .collect();
    let dist = WeightedIndex::new(&weights)
        .map_err(|_| TrainError::NoFeasibleTask(format!("weights {:?} leave nothing to sample", sampler.weights)))?;
    let task = Task::ALL[dist.sample(rng)];
    let window = rng.random_range(windows);
    let m = ds.modality_count();
    let mut present = sampler.presence(m);
    let mut sites: Vec<Option<Vec<usize>>> = vec![None; m];
    let grid: Vec<usize> = (0..ds.sites()).collect();
    let delta = match task {
        Task::Reconstruction => {
            for &t in &sampler.targets {
                if present[t] {
                    sites[t] = Some(sampler.subsample(ds.masks().sites(t).to_vec(), rng));
                }
            }
            0
        }
        Task::Interpolation => {
            for &t in &sampler.targets {
                let observed = ds.masks().sites(t);
                let free: Vec<usize> = grid.iter().copied().filter(|s| observed.binary_search(s).is_err()).collect();
                if !free.is_empty() {
                    sites[t] = Some(sampler.subsample(free, rng));
                }
            }
            0
        }
        Task::Forecasting => {
            let delta = rng.random_range(1..=sampler.horizon);
            for &t in &sampler.targets {
                sites[t] = Some(sampler.subsample(grid.clone(), rng));
            }
            delta
        }
        Task::CrossModal => {
            let candidates: Vec<usize> = sampler.targets.iter().copied().filter(|m| sampler.inputs.contains(m)).collect();
            let first = candidates[rng.random_range(0..candidates.len())];
            let mut rest: Vec<usize> = sampler.inputs.iter().copied().filter(|&m| m != first).collect();
            rest.shuffle(rng);
            let extra = rng.random_range(0..rest.len());
            for &h in std::iter::once(&first).chain(&rest[..extra]) {
                present[h] = false;
                if sampler.targets.contains(&h) {
                    sites[h] = Some(sampler.subsample(grid.clone(), rng));
                }
            }
            0
        }
    };
    let context = ds.context(window, &present)?;
    Ok(build_instance(ds, task, window, delta, context, sites))
}

/// Best validation snapshot seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub step: usize,
    pub score: f64,
    pub params: Vec<Tensor>,
}

/// Everything needed to continue training bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub optimizer: OptimizerState,
    pub best: Option<BestSnapshot>,
    pub skipped: usize,
}

impl TrainState {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        Self {
            step: 0,
            optimizer: OptimizerState::new(config, params),
            best: None,
            skipped: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub grad_norm: f64,
    /// Per-modality validation RMSE in physical units, on evaluation steps.
    pub val_rmse: Option<Vec<Option<f64>>>,
}

pub fn metrics_header(modalities: &[String]) -> String {
    let mut h = String::from("step,lr,train_loss,grad_norm");
    for m in modalities {
        h.push_str(&format!(",val_rmse_{m}"));
    }
    h
}

impl MetricsRow {
    pub fn to_csv(&self, modalities: usize) -> String {
        let mut line = format!("{},{},{},{}", self.step, self.lr, self.train_loss, self.grad_norm);
        for m in 0..modalities {
            line.push(',');
            if let Some(Some(v)) = self.val_rmse.as_ref().map(|r| r[m]) {
                line.push_str(&v.to_string());
            }
        }
        line
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
}

/// Loss and parameter gradients of one instance.
pub fn instance_gradients(model: &OmniFieldModel, inst: &Instance) -> Result<(f64, Vec<Tensor>), TrainError> {
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let preds = model.forward(&p, &tape, &inst.context, &inst.queries)?;
    let loss = masked_loss(&tape, &preds, &inst.targets, &inst.queries.supervised)?;
    let value = loss.value().item();
    if !loss.requires_grad() {
        return Ok((value, model.params().values().iter().map(|t| Tensor::zeros(t.shape())).collect()));
    }
    let grads = tape.backward(loss)?;
    Ok((value, p.gradients(&grads)))
}

/// Mean loss and gradients over a batch. Instances run in parallel; the
/// reduction order is fixed so results do not depend on scheduling.
pub fn batch_gradients(model: &OmniFieldModel, batch: &[Instance]) -> Result<(f64, Vec<Tensor>), TrainError> {
    let parts: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .map(|inst| instance_gradients(model, inst))
        .collect::<Result<_, _>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Vec<Tensor> = model.params().values().iter().map(|t| Tensor::zeros(t.shape())).collect();
    for (l, grads) in parts {
        loss += l;
        for (acc, g) in total.iter_mut().zip(grads) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    for t in &mut total {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    Ok((loss * scale, total))
}

/// Validation spec used during training: forecasting at the full horizon on
/// every catalog site of the validation windows.
pub fn validation_spec(ds: &FieldDataset, sampler: &TaskSampler) -> EvalSpec {
    EvalSpec {
        task: Task::Forecasting,
        windows: ds.val_windows(),
        inputs: sampler.inputs.clone(),
        targets: sampler.targets.clone(),
        region: EvalRegion::Grid,
        delta: sampler.horizon,
    }
}

/// Mean of per-modality RMSE divided by that modality's normalization scale.
pub fn validation_score(ds: &FieldDataset, rmse: &[Option<f64>]) -> f64 {
    let scores: Vec<f64> = rmse
        .iter()
        .enumerate()
        .filter_map(|(m, r)| r.map(|r| r / ds.stats()[m].std))
        .collect();
    if scores.is_empty() {
        f64::INFINITY
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Samples the batch for `step`. Depends only on the seed and step index.
pub fn step_batch(ds: &FieldDataset, sampler: &TaskSampler, cfg: &TrainConfig, step: usize) -> Result<Vec<Instance>, TrainError> {
    let mut rng = rng_for(cfg.seed, tags::TRAIN_STEP, step as u64);
    let mut batch = (0..cfg.batch_size)
        .map(|_| sample_task(ds, sampler, ds.train_windows(), &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(noise) = &cfg.noise {
        let mut nrng = rng_for(derive_seed(cfg.seed, tags::CORRUPTION, noise.seed), tags::CORRUPTION, step as u64);
        for inst in &mut batch {
            corrupt(&mut inst.context, noise, &mut nrng)?;
        }
    }
    Ok(batch)
}

/// Trains `model` in place up to `cfg.steps`, starting from `resume` when
/// given. `on_row` sees every metrics row as it is produced.
pub fn train(
    model: &mut OmniFieldModel,
    ds: &FieldDataset,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let sampler = TaskSampler::from_config(cfg, ds)?;
    let mut state = match resume {
        Some(s) => {
            if !s.optimizer.matches(model.params().values()) {
                return Err(TrainError::Resume("moment shapes differ from parameters".into()));
            }
            s
        }
        None => TrainState::new(cfg.optimizer, model.params().values()),
    };
    state.optimizer.config = cfg.optimizer;
    let val_spec = validation_spec(ds, &sampler);
    let mut metrics = Vec::new();
    while state.step < cfg.steps {
        let step = state.step;
        let batch = step_batch(ds, &sampler, cfg, step)?;
        let (loss, mut grads) = batch_gradients(model, &batch)?;
        let finite = loss.is_finite() && grads.iter().all(Tensor::is_finite);
        let lr = lr_at(step + 1, &cfg.schedule);
        let mut norm = global_norm(&grads);
        if finite {
            if let Some(c) = cfg.grad_clip {
                norm = clip_global_norm(&mut grads, c);
            }
            adamw_step(model.params_mut().values_mut(), &grads, &mut state.optimizer, lr)?;
        } else {
            match cfg.non_finite {
                NonFinitePolicy::Abort => {
                    return Err(TrainError::NonFinite {
                        step,
                        what: if loss.is_finite() { "gradient" } else { "loss" },
                    })
                }
                NonFinitePolicy::Skip => state.skipped += 1,
            }
        }
        state.step += 1;
        let mut row = MetricsRow {
            step: state.step,
            lr,
            train_loss: loss,
            grad_norm: norm,
            val_rmse: None,
        };
        if state.step % cfg.eval_every == 0 || state.step == cfg.steps {
            let rmse = eval::evaluate(model, ds, &val_spec)?;
            let score = validation_score(ds, &rmse);
            if state.best.as_ref().is_none_or(|b| score < b.score) {
                state.best = Some(BestSnapshot {
                    step: state.step,
                    score,
                    params: model.params().values().to_vec(),
                });
            }
            row.val_rmse = Some(rmse);
        }
        on_row(&row);
        metrics.push(row);
    }
    Ok(TrainOutcome { state, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DataConfig, ModelConfig, TaskMix};

    fn sched() -> ScheduleSpec {
        ScheduleSpec {
            max_lr: 8e-5,
            min_lr: 8e-6,
            warmup_steps: 1000,
            cycle_steps: 100_000,
            cycle_mult: 1.0,
        }
    }

    #[test]
    fn schedule_landmarks() {
        let s = sched();
        assert_eq!(lr_at(0, &s), 0.0);
        assert_eq!(lr_at(1000, &s), 8e-5);
        let mid = 1000 + 99_000 / 2;
        assert!((lr_at(mid, &s) - 4.4e-5).abs() < 1e-18);
        assert!((lr_at(99_999, &s) - 8e-6).abs() < 1e-12);
        assert_eq!(lr_at(100_000, &s), 0.0);
        assert_eq!(lr_at(101_000, &s), 8e-5);
        for step in (1000..100_000).step_by(997) {
            let lr = lr_at(step, &s);
            assert!((8e-6..=8e-5).contains(&lr));
        }
    }

    #[test]
    fn schedule_cycle_multiplier() {
        let s = ScheduleSpec {
            cycle_steps: 100,
            warmup_steps: 10,
            cycle_mult: 2.0,
            ..sched()
        };
        assert_eq!(lr_at(100, &s), 0.0);
        assert_eq!(lr_at(120, &s), 8e-5);
        assert_eq!(lr_at(300, &s), 0.0);
    }

    fn scalar_state(lambda: f64) -> (Vec<Tensor>, OptimizerState) {
        let p = vec![Tensor::scalar(1.0)];
        let cfg = AdamWConfig {
            weight_decay: lambda,
            ..AdamWConfig::default()
        };
        let st = OptimizerState::new(cfg, &p);
        (p, st)
    }

    #[test]
    fn adamw_zero_gradient() {
        let (mut p, mut st) = scalar_state(0.0);
        adamw_step(&mut p, &[Tensor::scalar(0.0)], &mut st, 0.1).unwrap();
        assert_eq!(p[0].item(), 1.0);
        let (mut p, mut st) = scalar_state(0.01);
        adamw_step(&mut p, &[Tensor::scalar(0.0)], &mut st, 0.1).unwrap();
        assert_eq!(p[0].item(), 1.0 * (1.0 - 0.1 * 0.01));
    }

    #[test]
    fn adamw_first_step_by_hand() {
        let (mut p, mut st) = scalar_state(0.0);
        adamw_step(&mut p, &[Tensor::scalar(1.0)], &mut st, 0.1).unwrap();
        assert!((p[0].item() - 0.9).abs() < 1e-8);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adamw_rejects_nan() {
        let (mut p, mut st) = scalar_state(0.0);
        assert!(matches!(
            adamw_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut st, 0.1),
            Err(TrainError::NonFinite { .. })
        ));
        assert_eq!(p[0].item(), 1.0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::row_vector(vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
        assert_eq!(clip_global_norm(&mut g, 2.0), global_norm(&g));
    }

    fn dataset() -> FieldDataset {
        FieldDataset::generate(&DataConfig {
            timesteps: 80,
            ..DataConfig::default()
        })
        .unwrap()
    }

    fn sampler(ds: &FieldDataset, mix: TaskMix) -> TaskSampler {
        let cfg = TrainConfig {
            tasks: mix,
            query_points: None,
            ..TrainConfig::default()
        };
        TaskSampler::from_config(&cfg, ds).unwrap()
    }

    fn only(i: usize) -> TaskMix {
        let mut w = [0.0; 4];
        w[i] = 1.0;
        TaskMix {
            reconstruction: w[0],
            interpolation: w[1],
            forecasting: w[2],
            cross_modal: w[3],
        }
    }

    #[test]
    fn reconstruction_queries_context_sites() {
        let ds = dataset();
        let s = sampler(&ds, only(0));
        let mut rng = rng_for(0, 0, 0);
        let inst = sample_task(&ds, &s, ds.train_windows(), &mut rng).unwrap();
        assert_eq!(inst.task, Task::Reconstruction);
        assert_eq!(inst.delta, 0);
        for m in 0..2 {
            assert_eq!(inst.query_sites[m].as_deref(), Some(ds.masks().sites(m)));
            let ctx = &inst.context.observations()[m];
            let n = ds.masks().sites(m).len();
            assert_eq!(&ctx.locations[ctx.len() - n..], &inst.queries.locations[m].as_ref().unwrap()[..]);
            assert_eq!(&ctx.values[ctx.len() - n..], &inst.targets.values[m].as_ref().unwrap()[..]);
        }
    }

    #[test]
    fn interpolation_avoids_sensors() {
        let ds = dataset();
        let s = sampler(&ds, only(1));
        let mut rng = rng_for(0, 0, 1);
        let inst = sample_task(&ds, &s, ds.train_windows(), &mut rng).unwrap();
        for m in 0..2 {
            let q = inst.query_sites[m].as_ref().unwrap();
            assert!(q.iter().all(|s| !ds.masks().sites(m).contains(s)));
        }
    }

    #[test]
    fn forecasting_horizon_and_targets() {
        let ds = dataset();
        let s = sampler(&ds, only(2));
        let mut rng = rng_for(0, 0, 2);
        let inst = sample_task(&ds, &s, ds.train_windows(), &mut rng).unwrap();
        assert_eq!(inst.delta, 1);
        assert_eq!(inst.queries.delta_t, 1.0);
        let frame = ds.input_frame(inst.window) + 1;
        let grid: Vec<usize> = (0..ds.sites()).collect();
        assert_eq!(inst.targets.values[1].as_ref().unwrap(), &ds.normalized_values(1, frame, &grid));
    }

    #[test]
    fn cross_modal_holds_out_a_supervised_modality() {
        let ds = dataset();
        let s = sampler(&ds, only(3));
        for i in 0..10 {
            let mut rng = rng_for(0, 0, 10 + i);
            let inst = sample_task(&ds, &s, ds.train_windows(), &mut rng).unwrap();
            let held: Vec<usize> = (0..2).filter(|&m| !inst.context.is_present(m)).collect();
            assert_eq!(held.len(), 1);
            assert!(inst.queries.supervised[held[0]]);
            assert!(!inst.queries.supervised[1 - held[0]]);
        }
    }

    #[test]
    fn cross_modal_infeasible_with_one_input() {
        let ds = dataset();
        let cfg = TrainConfig {
            tasks: only(3),
            input_modalities: Some(vec![1]),
            ..TrainConfig::default()
        };
        let s = TaskSampler::from_config(&cfg, &ds).unwrap();
        let mut rng = rng_for(0, 0, 0);
        assert!(matches!(
            sample_task(&ds, &s, ds.train_windows(), &mut rng),
            Err(TrainError::NoFeasibleTask(_))
        ));
    }

    #[test]
    fn task_names_parse() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("nowcasting".parse::<Task>().is_err());
    }

    fn micro_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            eval_every: 3,
            query_points: Some(8),
            ..TrainConfig::default()
        }
    }

    fn micro_model() -> OmniFieldModel {
        OmniFieldModel::new(ModelConfig::micro(), vec!["s1".into(), "s2".into()], 1).unwrap()
    }

    #[test]
    fn resume_is_bitwise() {
        let ds = dataset();
        let mut a = micro_model();
        let full = train(&mut a, &ds, &micro_cfg(6), None, &mut |_| {}).unwrap();
        let mut b = micro_model();
        let half = train(&mut b, &ds, &micro_cfg(3), None, &mut |_| {}).unwrap();
        let rest = train(&mut b, &ds, &micro_cfg(6), Some(half.state), &mut |_| {}).unwrap();
        assert_eq!(a.params().values(), b.params().values());
        assert_eq!(full.metrics[3..], rest.metrics[..]);
        assert_eq!(full.state, rest.state);
    }

    #[test]
    fn unsupervised_loss_is_zero_and_changes_nothing() {
        let ds = dataset();
        let model = micro_model();
        let s = sampler(&ds, only(2));
        let mut rng = rng_for(0, 0, 3);
        let mut inst = sample_task(&ds, &s, ds.train_windows(), &mut rng).unwrap();
        inst.queries.supervised = vec![false, false];
        let (loss, grads) = batch_gradients(&model, &[inst]).unwrap();
        assert_eq!(loss, 0.0);
        let mut params = model.params().values().to_vec();
        let before = params.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = OptimizerState::new(cfg, &params);
        adamw_step(&mut params, &grads, &mut st, 1e-2).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn metrics_rows_format() {
        let row = MetricsRow {
            step: 3,
            lr: 0.5,
            train_loss: 1.25,
            grad_norm: 2.0,
            val_rmse: Some(vec![Some(0.5), None]),
        };
        assert_eq!(row.to_csv(2), "3,0.5,1.25,2,0.5,");
        assert_eq!(metrics_header(&["a".into(), "b".into()]), "step,lr,train_loss,grad_norm,val_rmse_a,val_rmse_b");
    }
}
