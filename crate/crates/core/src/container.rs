//! Directory containers: a JSON manifest plus one little-endian binary file
//! per array, each with a SHA-256 checksum.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{RunConfig, WindowSpec};
use crate::data::{DatasetParts, Field, FieldDataset, MaskCounts, SensorMaskSet, SyntheticMetadata, ZScore};
use crate::model::{ModelSpec, OmniFieldModel};
use crate::tensor::Tensor;
use crate::training::{BestSnapshot, OptimizerState, TrainState};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed manifest: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0} already exists (use --force to overwrite)")]
    Exists(PathBuf),
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("expected a {expected} container, found {found}")]
    Kind { expected: String, found: String },
    #[error("array `{0}` missing from manifest")]
    Missing(String),
    #[error("array `{name}`: expected {expected} bytes, found {actual}")]
    Length { name: String, expected: usize, actual: usize },
    #[error("array `{0}`: checksum mismatch")]
    Checksum(String),
    #[error("invalid container contents: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ContainerError + '_ {
    move |source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub fingerprint: String,
    pub arrays: Vec<ArrayEntry>,
    pub metadata: serde_json::Value,
}

impl Manifest {
    pub fn entry(&self, name: &str) -> Option<&ArrayEntry> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

pub fn encode_le(values: &[f64], dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.width());
    for &v in values {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_le(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    }
}

fn file_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{clean}.bin")
}

/// Builds a container directory; nothing is visible under the final path
/// until [`ContainerWriter::finish`] succeeds.
pub struct ContainerWriter {
    dir: PathBuf,
    staging: PathBuf,
    manifest: Manifest,
}

impl ContainerWriter {
    pub fn create(dir: impl AsRef<Path>, kind: &str, fingerprint: &str, force: bool) -> Result<Self, ContainerError> {
        let dir = dir.as_ref().to_path_buf();
        if dir.exists() && !force {
            return Err(ContainerError::Exists(dir));
        }
        let mut staging = dir.clone().into_os_string();
        staging.push(".partial");
        let staging = PathBuf::from(staging);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        Ok(Self {
            dir,
            staging,
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                kind: kind.into(),
                fingerprint: fingerprint.into(),
                arrays: Vec::new(),
                metadata: serde_json::Value::Null,
            },
        })
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: &[f64], dtype: DType) -> Result<(), ContainerError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(ContainerError::Invalid(format!(
                "array `{name}`: shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        if self.manifest.entry(name).is_some() {
            return Err(ContainerError::Invalid(format!("duplicate array `{name}`")));
        }
        let bytes = encode_le(values, dtype);
        let file = file_name(self.manifest.arrays.len(), name);
        let path = self.staging.join(&file);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        self.manifest.arrays.push(ArrayEntry {
            name: name.into(),
            shape: shape.to_vec(),
            dtype,
            file,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn add_tensor(&mut self, name: &str, t: &Tensor) -> Result<(), ContainerError> {
        self.add(name, t.shape(), t.data(), DType::F64)
    }

    pub fn set_metadata<T: Serialize>(&mut self, metadata: &T) -> Result<(), ContainerError> {
        self.manifest.metadata = serde_json::to_value(metadata).map_err(|source| ContainerError::Json {
            path: self.dir.join(MANIFEST),
            source,
        })?;
        Ok(())
    }

    pub fn finish(self) -> Result<Manifest, ContainerError> {
        let path = self.staging.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|source| ContainerError::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        if self.dir.exists() {
            fs::remove_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        }
        fs::rename(&self.staging, &self.dir).map_err(io_err(&self.dir))?;
        Ok(self.manifest)
    }
}

/// An opened container; arrays are read and verified on demand.
#[derive(Clone, Debug)]
pub struct Container {
    dir: PathBuf,
    manifest: Manifest,
}

impl Container {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ContainerError> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| ContainerError::Json { path, source })?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(ContainerError::Schema(manifest.schema_version));
        }
        Ok(Self { dir, manifest })
    }

    pub fn open_kind(dir: impl AsRef<Path>, kind: &str) -> Result<Self, ContainerError> {
        let c = Self::open(dir)?;
        if c.manifest.kind != kind {
            return Err(ContainerError::Kind {
                expected: kind.into(),
                found: c.manifest.kind.clone(),
            });
        }
        Ok(c)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn read(&self, name: &str) -> Result<Tensor, ContainerError> {
        let entry = self.manifest.entry(name).ok_or_else(|| ContainerError::Missing(name.into()))?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let expected = entry.shape.iter().product::<usize>() * entry.dtype.width();
        if bytes.len() != expected {
            return Err(ContainerError::Length {
                name: name.into(),
                expected,
                actual: bytes.len(),
            });
        }
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(ContainerError::Checksum(name.into()));
        }
        Tensor::new(entry.shape.clone(), decode_le(&bytes, entry.dtype)).map_err(|e| ContainerError::Invalid(e.to_string()))
    }

    /// Reads and checks every array.
    pub fn verify(&self) -> Result<(), ContainerError> {
        for a in &self.manifest.arrays {
            self.read(&a.name)?;
        }
        Ok(())
    }

    pub fn metadata<T: DeserializeOwned>(&self) -> Result<T, ContainerError> {
        serde_json::from_value(self.manifest.metadata.clone()).map_err(|source| ContainerError::Json {
            path: self.dir.join(MANIFEST),
            source,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub modalities: Vec<String>,
    pub spatial_dim: usize,
    pub sites: usize,
    pub timesteps: usize,
    pub window: WindowSpec,
    pub windows: usize,
    pub train_windows: usize,
    pub context_frames: usize,
    pub train_fraction: f64,
    pub stats: Vec<ZScore>,
    pub mask_counts: MaskCounts,
    pub generator: Option<SyntheticMetadata>,
    pub config: Option<RunConfig>,
}

pub const DATASET_KIND: &str = "dataset";
pub const CHECKPOINT_KIND: &str = "checkpoint";

pub fn write_dataset(
    ds: &FieldDataset,
    dir: impl AsRef<Path>,
    config: Option<&RunConfig>,
    fingerprint: &str,
    force: bool,
) -> Result<Manifest, ContainerError> {
    let mut w = ContainerWriter::create(dir, DATASET_KIND, fingerprint, force)?;
    w.add("coords", &[ds.sites(), ds.spatial_dim()], ds.coords(), DType::F64)?;
    for (name, field) in ds.modalities().iter().zip(ds.fields()) {
        w.add(&format!("field.{name}"), &[field.sites(), field.steps()], field.values(), DType::F64)?;
    }
    let incidence: Vec<f64> = ds
        .masks()
        .incidence()
        .iter()
        .flat_map(|row| row.iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    w.add("incidence", &[ds.sites(), ds.modality_count()], &incidence, DType::F64)?;
    let starts: Vec<f64> = ds.starts().iter().map(|&s| s as f64).collect();
    w.add("window_starts", &[starts.len()], &starts, DType::F64)?;
    w.set_metadata(&DatasetMetadata {
        modalities: ds.modalities().to_vec(),
        spatial_dim: ds.spatial_dim(),
        sites: ds.sites(),
        timesteps: ds.timesteps(),
        window: *ds.window(),
        windows: ds.window_count(),
        train_windows: ds.train_windows().len(),
        context_frames: ds.context_frames(),
        train_fraction: ds.train_fraction(),
        stats: ds.stats().to_vec(),
        mask_counts: ds.masks().counts(),
        generator: ds.metadata().cloned(),
        config: config.cloned(),
    })?;
    w.finish()
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(FieldDataset, DatasetMetadata), ContainerError> {
    let c = Container::open_kind(dir, DATASET_KIND)?;
    let meta: DatasetMetadata = c.metadata()?;
    let coords = c.read("coords")?.into_data();
    let fields = meta
        .modalities
        .iter()
        .map(|name| {
            let t = c.read(&format!("field.{name}"))?;
            let (s, n) = t.dims2("field").map_err(|e| ContainerError::Invalid(e.to_string()))?;
            Field::new(s, n, t.into_data()).map_err(|e| ContainerError::Invalid(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let inc = c.read("incidence")?;
    let m = meta.modalities.len();
    let mut sites = vec![Vec::new(); m];
    for (s, row) in inc.data().chunks(m).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                sites[j].push(s);
            }
        }
    }
    let masks = SensorMaskSet::from_sites(meta.sites, sites).map_err(|e| ContainerError::Invalid(e.to_string()))?;
    let ds = FieldDataset::from_parts(DatasetParts {
        modalities: meta.modalities.clone(),
        spatial_dim: meta.spatial_dim,
        coords,
        fields,
        masks,
        window: meta.window,
        context_frames: meta.context_frames,
        train_fraction: meta.train_fraction,
        stats: Some(meta.stats.clone()),
        metadata: meta.generator.clone(),
    })
    .map_err(|e| ContainerError::Invalid(e.to_string()))?;
    if ds.window_count() != meta.windows {
        return Err(ContainerError::Invalid(format!(
            "manifest lists {} windows, data yields {}",
            meta.windows,
            ds.window_count()
        )));
    }
    Ok((ds, meta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub model: ModelSpec,
    pub config: RunConfig,
    pub param_names: Vec<String>,
    pub step: usize,
    pub best_step: Option<usize>,
    pub best_score: Option<f64>,
    pub optimizer_step: u64,
    pub skipped: usize,
    pub dataset_fingerprint: String,
}

/// A trained model plus the state needed to resume training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Model holding the evaluation (best validation) parameters.
    pub model: OmniFieldModel,
    /// Parameters at the last completed step.
    pub current: Vec<Tensor>,
    pub state: TrainState,
    pub metadata: CheckpointMetadata,
}

pub fn write_checkpoint(
    dir: impl AsRef<Path>,
    model: &OmniFieldModel,
    state: &TrainState,
    config: &RunConfig,
    dataset_fingerprint: &str,
    force: bool,
) -> Result<Manifest, ContainerError> {
    let mut w = ContainerWriter::create(dir, CHECKPOINT_KIND, &config.fingerprint(), force)?;
    let names: Vec<String> = model.params().iter().map(|(_, n, _)| n.to_string()).collect();
    let best = state.best.as_ref();
    let eval_params = best.map_or(model.params().values(), |b| &b.params[..]);
    for (name, t) in names.iter().zip(eval_params) {
        w.add_tensor(&format!("param.{name}"), t)?;
    }
    for (name, t) in names.iter().zip(model.params().values()) {
        w.add_tensor(&format!("current.{name}"), t)?;
    }
    for (name, t) in names.iter().zip(&state.optimizer.first) {
        w.add_tensor(&format!("adam_m.{name}"), t)?;
    }
    for (name, t) in names.iter().zip(&state.optimizer.second) {
        w.add_tensor(&format!("adam_v.{name}"), t)?;
    }
    w.add_tensor("encoding.space", model.space_encoder().matrix())?;
    w.add_tensor("encoding.time", model.time_encoder().matrix())?;
    w.set_metadata(&CheckpointMetadata {
        model: model.spec().clone(),
        config: config.clone(),
        param_names: names,
        step: state.step,
        best_step: best.map(|b| b.step),
        best_score: best.map(|b| b.score),
        optimizer_step: state.optimizer.step,
        skipped: state.skipped,
        dataset_fingerprint: dataset_fingerprint.into(),
    })?;
    w.finish()
}

pub fn read_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint, ContainerError> {
    let c = Container::open_kind(dir, CHECKPOINT_KIND)?;
    let meta: CheckpointMetadata = c.metadata()?;
    let mut model = OmniFieldModel::from_spec(&meta.model).map_err(|e| ContainerError::Invalid(e.to_string()))?;
    let own: Vec<String> = model.params().iter().map(|(_, n, _)| n.to_string()).collect();
    if own != meta.param_names {
        return Err(ContainerError::Invalid("parameter names differ from the model layout".into()));
    }
    for (name, own) in [("encoding.space", model.space_encoder().matrix()), ("encoding.time", model.time_encoder().matrix())] {
        if &c.read(name)? != own {
            return Err(ContainerError::Invalid(format!("{name} differs from the regenerated encoder")));
        }
    }
    let group = |prefix: &str| -> Result<Vec<Tensor>, ContainerError> {
        meta.param_names.iter().map(|n| c.read(&format!("{prefix}.{n}"))).collect()
    };
    let params = group("param")?;
    let current = group("current")?;
    let state = TrainState {
        step: meta.step,
        optimizer: OptimizerState {
            config: meta.config.train.optimizer,
            step: meta.optimizer_step,
            first: group("adam_m")?,
            second: group("adam_v")?,
        },
        best: match (meta.best_step, meta.best_score) {
            (Some(step), Some(score)) => Some(BestSnapshot {
                step,
                score,
                params: params.clone(),
            }),
            _ => None,
        },
        skipped: meta.skipped,
    };
    model.params_mut().load_values(params).map_err(ContainerError::Invalid)?;
    Ok(Checkpoint {
        model,
        current,
        state,
        metadata: meta,
    })
}
