//! Run configuration and named presets.
//!
//! Every struct rejects unknown keys so a typo in a config file is an error
//! rather than a silently ignored setting.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (expected one of: desk-synthetic, climsim-thw, epa-aqs)")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Iterative cross-modal refinement through the global code.
    Icmr,
    /// Single fusion point; the global code stays zero.
    MidFusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    Gaussian,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryInitKind {
    Sinusoidal,
    RandomNormal,
}

/// How space and time features of a decoder query are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryCombine {
    Concat,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierConfig {
    pub bands: usize,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Token width D.
    pub width: usize,
    /// Latent queries per modality per stage.
    pub latents: usize,
    /// Number of refinement stages.
    pub stages: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// Self-attention blocks inside each stage's processor.
    pub processor_depth: usize,
    /// Self-attention blocks applied to the final field before decoding.
    pub trunk_depth: usize,
    /// Width of the per-modality input projection MLP.
    pub input_hidden: usize,
    pub space: FourierConfig,
    pub time: FourierConfig,
    pub query_combine: QueryCombine,
    pub share_encoders: bool,
    pub fusion: FusionMode,
    pub positional: PositionalKind,
    pub query_init: QueryInitKind,
    pub sin_base: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Small default used for synthetic runs on one CPU core.
    pub fn desk() -> Self {
        Self {
            width: 32,
            latents: 16,
            stages: 3,
            heads: 2,
            ff_mult: 4,
            processor_depth: 1,
            trunk_depth: 1,
            input_hidden: 32,
            space: FourierConfig { bands: 16, scale: 2.0 },
            time: FourierConfig { bands: 8, scale: 1.0 },
            query_combine: QueryCombine::Concat,
            share_encoders: false,
            fusion: FusionMode::Icmr,
            positional: PositionalKind::Gaussian,
            query_init: QueryInitKind::Sinusoidal,
            sin_base: 10_000.0,
            seed: 0,
        }
    }

    /// Micro model used by gradient checks and smoke tests.
    pub fn micro() -> Self {
        Self {
            width: 8,
            latents: 4,
            stages: 2,
            heads: 2,
            ff_mult: 2,
            processor_depth: 1,
            trunk_depth: 1,
            input_hidden: 8,
            space: FourierConfig { bands: 3, scale: 1.0 },
            time: FourierConfig { bands: 2, scale: 1.0 },
            ..Self::desk()
        }
    }

    pub fn climsim_thw() -> Self {
        Self {
            width: 128,
            latents: 128,
            stages: 3,
            heads: 8,
            ff_mult: 4,
            processor_depth: 1,
            trunk_depth: 3,
            input_hidden: 128,
            space: FourierConfig { bands: 32, scale: 15.0 },
            time: FourierConfig { bands: 16, scale: 10.0 },
            query_combine: QueryCombine::Concat,
            ..Self::desk()
        }
    }

    pub fn epa_aqs() -> Self {
        Self {
            width: 64,
            latents: 64,
            stages: 3,
            heads: 2,
            ff_mult: 4,
            processor_depth: 1,
            trunk_depth: 3,
            input_hidden: 128,
            space: FourierConfig { bands: 32, scale: 15.0 },
            time: FourierConfig { bands: 32, scale: 15.0 },
            query_combine: QueryCombine::Sum,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.width == 0 || self.width % 2 != 0 {
            return bad(format!("width must be even and positive, got {}", self.width));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if self.stages == 0 {
            return bad("stages must be at least 1".into());
        }
        if self.latents == 0 || self.input_hidden == 0 || self.ff_mult == 0 {
            return bad("latents, input_hidden and ff_mult must be positive".into());
        }
        if self.space.bands == 0 || self.time.bands == 0 {
            return bad("encoding bands must be positive".into());
        }
        if !(self.space.scale > 0.0 && self.time.scale > 0.0) {
            return bad("encoding scales must be positive".into());
        }
        if self.query_combine == QueryCombine::Sum && self.space.bands != self.time.bands {
            return bad("query_combine = sum needs equal space and time band counts".into());
        }
        if !(self.sin_base > 1.0) {
            return bad(format!("sin_base must exceed 1, got {}", self.sin_base));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub input_len: usize,
    pub pred_len: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            input_len: 20,
            pred_len: 1,
            stride: 1,
        }
    }
}

/// Which catalog sites each modality observes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensorLayout {
    /// Every modality sees every site.
    Full,
    /// Exact overlap classes: sites shared by all modalities, sites shared by
    /// exactly one pair (per pair), and sites exclusive to one modality.
    Exact {
        all_overlap: usize,
        pairwise_only: usize,
        exclusive: usize,
    },
    /// Fixed per-modality total and all-modality overlap; pairwise overlaps
    /// are drawn so the union stays at or above `min_union`.
    Bounded {
        per_modality: usize,
        all_overlap: usize,
        min_union: usize,
    },
}

impl SensorLayout {
    /// Named sparsity presets for the 100-site synthetic catalog.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" | "off" => Some(Self::Full),
            "~50" | "50" | "sparse-50" => Some(Self::Exact {
                all_overlap: 20,
                pairwise_only: 0,
                exclusive: 30,
            }),
            "~30" | "30" | "sparse-30" => Some(Self::Exact {
                all_overlap: 10,
                pairwise_only: 0,
                exclusive: 20,
            }),
            "climsim-thw" => Some(Self::Exact {
                all_overlap: 108,
                pairwise_only: 81,
                exclusive: 162,
            }),
            "climsim-1pct" => Some(Self::Bounded {
                per_modality: 216,
                all_overlap: 108,
                min_union: 324,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub spatial_points: usize,
    pub timesteps: usize,
    pub x_max: f64,
    pub t_max: f64,
    pub components: usize,
    pub oscillators: usize,
    pub coupling: f64,
    pub integrator: Integrator,
    /// Integrator steps per grid interval.
    pub substeps: usize,
    /// Standard deviation of additive noise on the driving field; 0 disables it.
    pub noise_std: f64,
    pub window: WindowSpec,
    pub train_fraction: f64,
    pub sensors: SensorLayout,
    /// Trailing frames of each input window exposed as context.
    pub context_frames: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            spatial_points: 100,
            timesteps: 500,
            x_max: 10.0,
            t_max: 50.0,
            components: 3,
            oscillators: 2,
            coupling: 2.5,
            integrator: Integrator::Euler,
            substeps: 1,
            noise_std: 0.0,
            window: WindowSpec::default(),
            train_fraction: 0.8,
            sensors: SensorLayout::preset("~50").expect("builtin preset"),
            context_frames: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub cycle_steps: usize,
    pub cycle_mult: f64,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.min_lr >= 0.0 && self.min_lr <= self.max_lr) {
            return Err(ConfigError::Invalid(format!(
                "need 0 <= min_lr <= max_lr, got {} / {}",
                self.min_lr, self.max_lr
            )));
        }
        if self.warmup_steps >= self.cycle_steps {
            return Err(ConfigError::Invalid(format!(
                "warmup_steps {} must be below cycle_steps {}",
                self.warmup_steps, self.cycle_steps
            )));
        }
        if !(self.cycle_mult >= 1.0) {
            return Err(ConfigError::Invalid("cycle_mult must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonFinitePolicy {
    /// Drop the update and keep going.
    Skip,
    Abort,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMix {
    pub reconstruction: f64,
    pub interpolation: f64,
    pub forecasting: f64,
    pub cross_modal: f64,
}

impl TaskMix {
    pub fn forecasting_only() -> Self {
        Self {
            reconstruction: 0.0,
            interpolation: 0.0,
            forecasting: 1.0,
            cross_modal: 0.0,
        }
    }

    pub fn weights(&self) -> [f64; 4] {
        [self.reconstruction, self.interpolation, self.forecasting, self.cross_modal]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        if w.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(format!(
                "task weights must be non-negative and sum to 1, got {w:?}"
            )));
        }
        Ok(())
    }
}

impl Default for TaskMix {
    fn default() -> Self {
        Self {
            reconstruction: 0.25,
            interpolation: 0.25,
            forecasting: 0.25,
            cross_modal: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// At most this many modalities are corrupted per sample.
    pub max_corrupted: usize,
    /// Noise level as a multiple of the sample's observed standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub schedule: ScheduleSpec,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub non_finite: NonFinitePolicy,
    pub eval_every: usize,
    pub tasks: TaskMix,
    /// Modalities ever shown as input; `None` means all of them.
    pub input_modalities: Option<Vec<usize>>,
    /// Modalities ever supervised; `None` means all of them.
    pub target_modalities: Option<Vec<usize>>,
    pub noise: Option<NoiseSpec>,
    /// Random grid sites queried per training target; `None` queries all.
    pub query_points: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 4,
            optimizer: AdamWConfig::default(),
            schedule: ScheduleSpec {
                max_lr: 3e-3,
                min_lr: 3e-4,
                warmup_steps: 30,
                cycle_steps: 300,
                cycle_mult: 1.0,
            },
            grad_clip: Some(1.0),
            non_finite: NonFinitePolicy::Abort,
            eval_every: 100,
            tasks: TaskMix::forecasting_only(),
            input_modalities: None,
            target_modalities: None,
            noise: None,
            query_points: Some(32),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(ConfigError::Invalid("eval_every must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(ConfigError::Invalid("grad_clip must be positive".into()));
            }
        }
        self.schedule.validate()?;
        self.tasks.validate()
    }
}

/// Where evaluation queries are placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalRegion {
    /// Every catalog site.
    Grid,
    /// Union of all modalities' sensor sites.
    Union,
    /// Sites observed by every modality.
    Intersection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub region: EvalRegion,
    /// Seeds used by sweep commands.
    pub seeds: Vec<u64>,
    pub noise_levels: Vec<f64>,
    pub idw_power: f64,
    pub idw_neighbors: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            region: EvalRegion::Grid,
            seeds: vec![0, 1, 2, 3, 4],
            noise_levels: vec![0.0, 0.5, 1.0, 2.0],
            idw_power: 2.0,
            idw_neighbors: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk-synthetic" => Ok(Self {
                preset: Some(name.into()),
                model: ModelConfig::desk(),
                data: DataConfig::default(),
                train: TrainConfig::default(),
                eval: EvalConfig::default(),
            }),
            "climsim-thw" => Ok(Self {
                preset: Some(name.into()),
                model: ModelConfig::climsim_thw(),
                data: DataConfig {
                    window: WindowSpec {
                        pred_len: 6,
                        ..WindowSpec::default()
                    },
                    ..DataConfig::default()
                },
                train: TrainConfig {
                    steps: 100_000,
                    batch_size: 8,
                    schedule: ScheduleSpec {
                        max_lr: 8e-5,
                        min_lr: 8e-6,
                        warmup_steps: 1000,
                        cycle_steps: 100_000,
                        cycle_mult: 1.0,
                    },
                    eval_every: 1000,
                    query_points: None,
                    ..TrainConfig::default()
                },
                eval: EvalConfig::default(),
            }),
            "epa-aqs" => Ok(Self {
                preset: Some(name.into()),
                model: ModelConfig::epa_aqs(),
                data: DataConfig::default(),
                train: TrainConfig {
                    steps: 30_000,
                    batch_size: 4,
                    schedule: ScheduleSpec {
                        max_lr: 8e-5,
                        min_lr: 8e-6,
                        // 10% of each cycle
                        warmup_steps: 1000,
                        cycle_steps: 10_000,
                        cycle_mult: 1.0,
                    },
                    eval_every: 1000,
                    query_points: None,
                    ..TrainConfig::default()
                },
                eval: EvalConfig::default(),
            }),
            other => Err(ConfigError::UnknownPreset(other.into())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.context_frames == 0 || self.data.context_frames > self.data.window.input_len {
            return Err(ConfigError::Invalid(format!(
                "context_frames must be in 1..={}",
                self.data.window.input_len
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

pub fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config types serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}
