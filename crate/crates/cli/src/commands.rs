use std::fs;
use std::path::{Path, PathBuf};

use omnifield::config::{fingerprint_of, EvalRegion, RunConfig, SensorLayout};
use omnifield::container::{read_checkpoint, read_dataset, write_checkpoint, write_dataset, Checkpoint, Container, ContainerError};
use omnifield::data::FieldDataset;
use omnifield::eval::{
    ablation_experiments, apply_strategy, evaluate, forecast_grid, fusion_experiments, magnitude_spectrum, noise_experiments,
    power_spectrum_delta, run_experiments, EvalReport, EvalSpec, ReportRow, Strategy,
};
use omnifield::model::OmniFieldModel;
use omnifield::tensor::Tensor;
use omnifield::training::{self, metrics_header, validation_score, Task, TaskSampler};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::settings::{describe, resolve};
use crate::{Common, Region, Split, SweepArgs};

fn config(common: &Common) -> Result<RunConfig> {
    let mut cfg = resolve(common.preset.as_deref(), common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.data.seed = seed;
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(steps) = common.steps {
        cfg.train.steps = steps;
        cfg.train.eval_every = cfg.train.eval_every.min(steps.max(1));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(ContainerError::Exists(path.to_path_buf()).into());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent.display()))?;
    }
    fs::write(path, text).map_err(CliError::io(path.display()))
}

fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

/// Writes a report CSV and its run manifest next to it.
fn write_report(out: &Path, csv: &str, command: &str, cfg: &RunConfig, dataset: &str, seeds: &[u64]) -> Result<()> {
    write_text(out, csv)?;
    let manifest = json!({
        "command": command,
        "config_fingerprint": cfg.fingerprint(),
        "dataset_fingerprint": dataset,
        "seeds": seeds,
        "report": out.file_name().map(|n| n.to_string_lossy().into_owned()),
        "report_sha256": hex::encode(Sha256::digest(csv.as_bytes())),
        "config": cfg,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&manifest_path(out), &text)
}

fn dataset_fingerprint(dir: &Path) -> Result<String> {
    Ok(Container::open(dir)?.manifest().fingerprint.clone())
}

fn modality_index(ds: &FieldDataset, name: Option<&str>) -> Result<usize> {
    let Some(name) = name else {
        return Ok(ds.modality_count() - 1);
    };
    if let Some(i) = ds.modalities().iter().position(|m| m == name) {
        return Ok(i);
    }
    match name.parse::<usize>() {
        Ok(i) if i < ds.modality_count() => Ok(i),
        _ => Err(CliError::Usage(format!(
            "unknown modality `{name}` (dataset has {})",
            ds.modalities().join(", ")
        ))),
    }
}

pub fn gen_data(common: &Common, out: &Path, sparsity: Option<&str>, coupling: Option<f64>, timesteps: Option<usize>) -> Result<()> {
    let mut cfg = config(common)?;
    if let Some(name) = sparsity {
        cfg.data.sensors = SensorLayout::preset(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown sparsity preset `{name}` (expected full, ~50, ~30, climsim-thw or climsim-1pct)"
            ))
        })?;
    }
    if let Some(k) = coupling {
        cfg.data.coupling = k;
    }
    if let Some(t) = timesteps {
        cfg.data.timesteps = t;
    }
    refuse_existing(out, common.force)?;
    let ds = FieldDataset::generate(&cfg.data)?;
    let manifest = write_dataset(&ds, out, Some(&cfg), &fingerprint_of(&cfg.data), common.force)?;
    let counts = ds.masks().counts();
    println!("wrote {} ({} arrays)", out.display(), manifest.arrays.len());
    println!(
        "windows: {} (train {}, val {})",
        ds.window_count(),
        ds.train_windows().len(),
        ds.val_windows().len()
    );
    for (name, n) in ds.modalities().iter().zip(&counts.per_modality) {
        println!("sensors {name}: {n}");
    }
    println!(
        "sensors shared by all: {} | union: {} | intersection: {}",
        counts.all_overlap,
        counts.union,
        ds.masks().intersection().len()
    );
    Ok(())
}

fn read_metrics(path: &Path, upto: usize) -> Result<Vec<String>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::io(path.display())(e)),
    };
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|s| s.parse::<usize>().ok()).is_some_and(|s| s <= upto))
        .map(str::to_owned)
        .collect())
}

pub fn train(common: &Common, data: &Path, out: &Path, resume: bool) -> Result<()> {
    let (ds, _) = read_dataset(data)?;
    let ds_fp = dataset_fingerprint(data)?;
    let metrics_path = out.join("metrics.csv");
    let (cfg, mut model, state, mut lines) = if resume {
        let Checkpoint {
            model,
            current,
            state,
            metadata,
        } = read_checkpoint(out)?;
        if metadata.dataset_fingerprint != ds_fp {
            return Err(CliError::Usage(format!(
                "checkpoint {} was trained on a different dataset",
                out.display()
            )));
        }
        let mut cfg = metadata.config;
        if let Some(steps) = common.steps {
            cfg.train.steps = steps;
        }
        let mut model = model;
        model.params_mut().load_values(current).map_err(ContainerError::Invalid)?;
        let lines = read_metrics(&metrics_path, state.step)?;
        (cfg, model, Some(state), lines)
    } else {
        refuse_existing(out, common.force)?;
        let cfg = config(common)?;
        let model = OmniFieldModel::new(cfg.model.clone(), ds.modalities().to_vec(), ds.spatial_dim())
            .map_err(|e| CliError::Train(e.into()))?;
        (cfg, model, None, Vec::new())
    };
    println!("{}", describe(&cfg));
    println!("parameters: {}", model.param_count());
    let m = ds.modality_count();
    let outcome = training::train(&mut model, &ds, &cfg.train, state, &mut |row| {
        if let Some(rmse) = &row.val_rmse {
            let parts: Vec<String> = ds
                .modalities()
                .iter()
                .zip(rmse)
                .filter_map(|(n, r)| r.map(|r| format!("{n} {r:.5}")))
                .collect();
            println!("step {} loss {:.5} val rmse: {}", row.step, row.train_loss, parts.join(", "));
        }
    })?;
    lines.extend(outcome.metrics.iter().map(|r| r.to_csv(m)));
    write_checkpoint(out, &model, &outcome.state, &cfg, &ds_fp, true)?;
    let mut csv = metrics_header(ds.modalities());
    csv.push('\n');
    for l in &lines {
        csv.push_str(l);
        csv.push('\n');
    }
    write_text(&metrics_path, &csv)?;
    if let Some(best) = &outcome.state.best {
        println!("best step {} (score {:.5})", best.step, best.score);
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub task: Task,
    pub strategy: Option<Strategy>,
    pub region: Option<Region>,
    pub split: Split,
    pub delta: Option<usize>,
    pub out: &'a Path,
}

fn region(r: Region) -> EvalRegion {
    match r {
        Region::Grid => EvalRegion::Grid,
        Region::Union => EvalRegion::Union,
        Region::Intersection => EvalRegion::Intersection,
    }
}

pub fn eval(common: &Common, a: EvalArgs) -> Result<()> {
    refuse_existing(a.out, common.force)?;
    let ck = read_checkpoint(a.checkpoint)?;
    let (ds, _) = read_dataset(a.data)?;
    if ck.model.modalities() != ds.modalities() {
        return Err(CliError::Usage(format!(
            "checkpoint modalities {:?} do not match dataset {:?}",
            ck.model.modalities(),
            ds.modalities()
        )));
    }
    let cfg = &ck.metadata.config;
    let sampler = TaskSampler::from_config(&cfg.train, &ds)?;
    let (view, scored) = match a.strategy {
        Some(s @ (Strategy::MidFusion | Strategy::Icmr)) if s.fusion() != ck.model.config().fusion => {
            return Err(CliError::Usage(format!(
                "strategy {s} needs a checkpoint trained with that fusion mode"
            )))
        }
        Some(s) => (apply_strategy(&ds, s, cfg.eval.idw_power, cfg.eval.idw_neighbors)?, s.region()),
        None => (ds.clone(), cfg.eval.region),
    };
    let scored = a.region.map(region).unwrap_or(scored);
    let windows = match a.split {
        Split::Train => ds.train_windows(),
        Split::Val => ds.val_windows(),
        Split::All => 0..ds.window_count(),
    };
    let mut targets = sampler.targets.clone();
    if a.task == Task::CrossModal && sampler.inputs.iter().all(|i| targets.contains(i)) {
        targets = targets.last().copied().into_iter().collect();
    }
    let spec = EvalSpec {
        task: a.task,
        windows,
        inputs: sampler.inputs.clone(),
        targets,
        region: scored,
        delta: a.delta.unwrap_or(sampler.horizon),
    };
    let rmse = evaluate(&ck.model, &view, &spec)?;
    let split = format!("{:?}", a.split).to_lowercase();
    let row = ReportRow {
        labels: vec![
            ("task".into(), a.task.name().into()),
            ("strategy".into(), a.strategy.map_or("model".into(), |s| s.name().to_string())),
            ("split".into(), split),
            ("region".into(), format!("{scored:?}").to_lowercase()),
        ],
        seed: cfg.train.seed,
        fingerprint: cfg.fingerprint(),
        score: validation_score(&ds, &rmse),
        rmse,
        best_step: ck.metadata.best_step,
    };
    for (name, r) in ds.modalities().iter().zip(&row.rmse) {
        if let Some(r) = r {
            println!("rmse {name}: {r:.6}");
        }
    }
    let report = EvalReport {
        fingerprint: cfg.fingerprint(),
        seed: cfg.train.seed,
        modalities: ds.modalities().to_vec(),
        rows: vec![row],
    };
    write_report(a.out, &report.to_csv(), "eval", cfg, &dataset_fingerprint(a.data)?, &[cfg.train.seed])
}

struct Sweep {
    cfg: RunConfig,
    ds: FieldDataset,
    ds_fp: String,
    seeds: Vec<u64>,
}

fn sweep_setup(common: &Common, args: &SweepArgs) -> Result<Sweep> {
    refuse_existing(&args.out, common.force)?;
    let cfg = config(common)?;
    let (ds, ds_fp) = match &args.data {
        Some(dir) => (read_dataset(dir)?.0, dataset_fingerprint(dir)?),
        None => (FieldDataset::generate(&cfg.data)?, fingerprint_of(&cfg.data)),
    };
    let seeds = args.seeds.clone().unwrap_or_else(|| cfg.eval.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Usage("no seeds given".into()));
    }
    Ok(Sweep { cfg, ds, ds_fp, seeds })
}

fn finish_sweep(command: &str, sweep: &Sweep, rows: Vec<ReportRow>, out: &Path) -> Result<()> {
    for r in &rows {
        let labels: Vec<String> = r.labels.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{} seed={} score={:.5}", labels.join(" "), r.seed, r.score);
    }
    let report = EvalReport {
        fingerprint: sweep.cfg.fingerprint(),
        seed: sweep.cfg.train.seed,
        modalities: sweep.ds.modalities().to_vec(),
        rows,
    };
    write_report(out, &report.to_csv(), command, &sweep.cfg, &sweep.ds_fp, &sweep.seeds)
}

pub fn ablate(common: &Common, args: &SweepArgs) -> Result<()> {
    let s = sweep_setup(common, args)?;
    let exps = ablation_experiments(&s.cfg, &s.ds, &s.seeds)?;
    let rows = run_experiments(std::slice::from_ref(&s.ds), &exps)?;
    finish_sweep("ablate", &s, rows, &args.out)
}

pub fn noise(common: &Common, args: &SweepArgs, sigmas: Option<Vec<f64>>) -> Result<()> {
    let s = sweep_setup(common, args)?;
    let sigmas = sigmas.unwrap_or_else(|| s.cfg.eval.noise_levels.clone());
    if sigmas.iter().any(|v| !(*v >= 0.0)) {
        return Err(CliError::Usage("noise levels must be non-negative".into()));
    }
    let exps = noise_experiments(&s.cfg, &s.ds, &s.seeds, &sigmas)?;
    let rows = run_experiments(std::slice::from_ref(&s.ds), &exps)?;
    finish_sweep("noise", &s, rows, &args.out)
}

pub fn fusion(common: &Common, args: &SweepArgs, target: Option<&str>, strategies: Option<Vec<Strategy>>) -> Result<()> {
    let s = sweep_setup(common, args)?;
    let target = modality_index(&s.ds, target)?;
    let strategies = strategies.unwrap_or_else(|| Strategy::ALL.to_vec());
    let setup = fusion_experiments(&s.cfg, &s.ds, &s.seeds, target, &strategies)?;
    let rows = run_experiments(&setup.datasets, &setup.experiments)?;
    finish_sweep("fusion", &s, rows, &args.out)
}

fn field_grid(ds: &FieldDataset, m: usize) -> Result<Tensor> {
    let f = &ds.fields()[m];
    Tensor::new(vec![f.sites(), f.steps()], f.values().to_vec()).map_err(|e| CliError::Eval(e.into()))
}

pub fn spectrum(common: &Common, data: &Path, checkpoint: Option<&Path>, against: Option<&Path>, modality: Option<&str>, out: &Path) -> Result<()> {
    refuse_existing(out, common.force)?;
    let (ds, _) = read_dataset(data)?;
    let m = modality_index(&ds, modality)?;
    let (pred, truth, cfg) = match (checkpoint, against) {
        (Some(dir), _) => {
            let ck = read_checkpoint(dir)?;
            let sampler = TaskSampler::from_config(&ck.metadata.config.train, &ds)?;
            let (p, t) = forecast_grid(&ck.model, &ds, ds.val_windows(), m, &sampler.inputs, sampler.horizon)?;
            (p, t, ck.metadata.config)
        }
        (None, Some(dir)) => {
            let (other, _) = read_dataset(dir)?;
            if other.modalities() != ds.modalities() {
                return Err(CliError::Usage("datasets have different modalities".into()));
            }
            (field_grid(&other, m)?, field_grid(&ds, m)?, config(common)?)
        }
        (None, None) => (field_grid(&ds, m)?, field_grid(&ds, m)?, config(common)?),
    };
    let delta = power_spectrum_delta(&pred, &truth)?;
    let ft = magnitude_spectrum(&truth)?;
    let fp = magnitude_spectrum(&pred)?;
    let cols = delta.cols();
    let mut csv = String::from("row,col,truth,pred,delta\n");
    for (i, d) in delta.data().iter().enumerate() {
        csv.push_str(&format!("{},{},{},{},{}\n", i / cols, i % cols, ft.data()[i], fp.data()[i], d));
    }
    let total: f64 = delta.data().iter().sum();
    let max = delta.data().iter().copied().fold(0.0, f64::max);
    println!(
        "{}: {}x{} grid, total delta {total:.6e}, max delta {max:.6e}",
        ds.modalities()[m],
        delta.rows(),
        cols
    );
    write_report(out, &csv, "spectrum", &cfg, &dataset_fingerprint(data)?, &[cfg.train.seed])
}
