//! Synthetic multimodal fields, sensor masks, windows and normalization.

mod masks;
mod noise;
mod normalize;
mod synthetic;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use masks::{build_sensor_masks, MaskCounts, SensorMaskSet};
pub use noise::corrupt;
pub use normalize::ZScore;
pub use synthetic::{
    circular_variance, gen_s1, gen_s2_kuramoto, kuramoto_phases, Field, Grid, KuramotoParams, ParamRanges, S1Params,
};

use crate::config::{DataConfig, EvalRegion, Integrator, WindowSpec};
use crate::model::{ContextSet, ModalityObservations, ModelError};
use crate::seed::{rng_for, tags};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid data configuration: {0}")]
    Invalid(String),
    #[error("infeasible sensor layout: {0}")]
    InfeasibleMasks(String),
    #[error("catalog too small: layout needs {needed} sites, catalog has {available}")]
    CatalogTooSmall { needed: usize, available: usize },
    #[error("mask index {index} outside catalog of {catalog} sites")]
    MaskIndex { index: usize, catalog: usize },
    #[error("integrator step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("integrator step {dt} does not divide grid spacing {spacing}")]
    StepMismatch { dt: f64, spacing: f64 },
    #[error("{timesteps} timesteps cannot hold a window of {input} inputs and {pred} predictions")]
    TooFewTimesteps { timesteps: usize, input: usize, pred: usize },
    #[error("cannot normalize a constant or empty modality")]
    ZeroVariance,
    #[error("cannot corrupt {k} of {modalities} modalities and keep one clean")]
    TooManyCorrupted { k: usize, modalities: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Number of windows, `T − L_in − L_pred` at unit stride.
pub fn window_count(timesteps: usize, spec: &WindowSpec) -> Result<usize, DataError> {
    Ok(window_starts(timesteps, spec)?.len())
}

/// First frame of every window.
pub fn window_starts(timesteps: usize, spec: &WindowSpec) -> Result<Vec<usize>, DataError> {
    if spec.input_len == 0 || spec.pred_len == 0 || spec.stride == 0 {
        return Err(DataError::Invalid("window lengths and stride must be positive".into()));
    }
    let span = spec.input_len + spec.pred_len;
    if timesteps <= span {
        return Err(DataError::TooFewTimesteps {
            timesteps,
            input: spec.input_len,
            pred: spec.pred_len,
        });
    }
    Ok((0..timesteps - span).step_by(spec.stride).collect())
}

/// Reads each modality's field at its mask sites over `frames`. Time offsets
/// are frame distances from `input_frame`; points are emitted frame by frame
/// in ascending site order.
pub fn sparsify(
    fields: &[Field],
    coords: &[f64],
    spatial_dim: usize,
    masks: &SensorMaskSet,
    frames: &[usize],
    input_frame: usize,
) -> Result<Vec<ModalityObservations>, DataError> {
    if fields.len() != masks.modalities() {
        return Err(DataError::Invalid(format!(
            "{} fields for {} masks",
            fields.len(),
            masks.modalities()
        )));
    }
    let mut out = Vec::with_capacity(fields.len());
    for (m, field) in fields.iter().enumerate() {
        let mut locations = Vec::new();
        let mut offsets = Vec::new();
        let mut values = Vec::new();
        for &f in frames {
            for &s in masks.sites(m) {
                if s >= field.sites() {
                    return Err(DataError::MaskIndex {
                        index: s,
                        catalog: field.sites(),
                    });
                }
                locations.extend_from_slice(&coords[s * spatial_dim..(s + 1) * spatial_dim]);
                offsets.push(f as f64 - input_frame as f64);
                values.push(field.at(s, f));
            }
        }
        out.push(ModalityObservations::new(m, spatial_dim, locations, offsets, values, input_frame as f64)?);
    }
    Ok(out)
}

/// Generator parameters recorded alongside a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetadata {
    pub grid: Grid,
    pub ranges: ParamRanges,
    pub s1: S1Params,
    pub kuramoto: KuramotoParams,
    pub integrator: Integrator,
    pub seed: u64,
}

/// Fields, masks, windows and normalization for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDataset {
    modalities: Vec<String>,
    spatial_dim: usize,
    coords: Vec<f64>,
    fields: Vec<Field>,
    masks: SensorMaskSet,
    window: WindowSpec,
    context_frames: usize,
    starts: Vec<usize>,
    train_fraction: f64,
    train_count: usize,
    stats: Vec<ZScore>,
    metadata: Option<SyntheticMetadata>,
    /// Values read as model inputs when they differ from the true fields.
    input_fields: Option<Vec<Field>>,
}

/// Everything needed to rebuild a [`FieldDataset`] except derived windows.
#[derive(Clone, Debug)]
pub struct DatasetParts {
    pub modalities: Vec<String>,
    pub spatial_dim: usize,
    pub coords: Vec<f64>,
    pub fields: Vec<Field>,
    pub masks: SensorMaskSet,
    pub window: WindowSpec,
    pub context_frames: usize,
    pub train_fraction: f64,
    /// Refit from the training split when `None`.
    pub stats: Option<Vec<ZScore>>,
    pub metadata: Option<SyntheticMetadata>,
}

impl FieldDataset {
    /// Generates the coupled S1/S2 dataset described by `cfg`.
    pub fn generate(cfg: &DataConfig) -> Result<Self, DataError> {
        let grid = Grid::new(cfg.spatial_points, cfg.timesteps, cfg.x_max, cfg.t_max)?;
        if cfg.substeps == 0 {
            return Err(DataError::Invalid("substeps must be positive".into()));
        }
        let ranges = ParamRanges::default();
        let mut s1 = S1Params::sample(cfg.components, &ranges, &mut rng_for(cfg.seed, tags::S1_PARAMS, 0));
        s1.noise_std = cfg.noise_std;
        let dt = grid.dt() / cfg.substeps as f64;
        let kuramoto = KuramotoParams::sample(
            cfg.oscillators,
            cfg.coupling,
            dt,
            &ranges,
            &mut rng_for(cfg.seed, tags::KURAMOTO_PARAMS, 0),
        );
        let f1 = gen_s1(&s1, &grid, cfg.seed)?;
        let f2 = gen_s2_kuramoto(&kuramoto, &s1, &grid, cfg.integrator)?;
        let masks = build_sensor_masks(grid.spatial_points, 2, &cfg.sensors, cfg.seed)?;
        let coords = (0..grid.spatial_points).map(|s| grid.x(s) / grid.x_max).collect();
        Self::from_parts(DatasetParts {
            modalities: vec!["s1".into(), "s2".into()],
            spatial_dim: 1,
            coords,
            fields: vec![f1, f2],
            masks,
            window: cfg.window,
            context_frames: cfg.context_frames,
            train_fraction: cfg.train_fraction,
            stats: None,
            metadata: Some(SyntheticMetadata {
                grid,
                ranges,
                s1,
                kuramoto,
                integrator: cfg.integrator,
                seed: cfg.seed,
            }),
        })
    }

    pub fn from_parts(parts: DatasetParts) -> Result<Self, DataError> {
        let m = parts.modalities.len();
        if m == 0 || parts.fields.len() != m || parts.masks.modalities() != m {
            return Err(DataError::Invalid(format!(
                "{m} modalities, {} fields, {} masks",
                parts.fields.len(),
                parts.masks.modalities()
            )));
        }
        let sites = parts.fields[0].sites();
        let steps = parts.fields[0].steps();
        if parts.fields.iter().any(|f| f.sites() != sites || f.steps() != steps) {
            return Err(DataError::Invalid("fields differ in shape".into()));
        }
        if parts.spatial_dim == 0 || parts.coords.len() != sites * parts.spatial_dim || parts.masks.catalog() != sites {
            return Err(DataError::Invalid("coordinates or masks do not match the site catalog".into()));
        }
        if parts.context_frames == 0 || parts.context_frames > parts.window.input_len {
            return Err(DataError::Invalid(format!(
                "context_frames must be in 1..={}",
                parts.window.input_len
            )));
        }
        if !(parts.train_fraction > 0.0 && parts.train_fraction < 1.0) {
            return Err(DataError::Invalid("train_fraction must lie strictly between 0 and 1".into()));
        }
        let starts = window_starts(steps, &parts.window)?;
        let train_count = ((starts.len() as f64 * parts.train_fraction).round() as usize).clamp(1, starts.len().saturating_sub(1).max(1));
        let mut ds = Self {
            modalities: parts.modalities,
            spatial_dim: parts.spatial_dim,
            coords: parts.coords,
            fields: parts.fields,
            masks: parts.masks,
            window: parts.window,
            context_frames: parts.context_frames,
            starts,
            train_fraction: parts.train_fraction,
            train_count,
            stats: Vec::new(),
            metadata: parts.metadata,
            input_fields: None,
        };
        ds.stats = match parts.stats {
            Some(s) if s.len() == m => s,
            Some(_) => return Err(DataError::Invalid("one z-score per modality required".into())),
            None => ds.fit_stats()?,
        };
        Ok(ds)
    }

    /// Frames touched by training windows, inputs and targets.
    pub fn train_frames(&self) -> Range<usize> {
        let last = self.starts[self.train_count - 1];
        0..last + self.window.input_len + self.window.pred_len
    }

    fn fit_stats(&self) -> Result<Vec<ZScore>, DataError> {
        let frames = self.train_frames();
        (0..self.modalities.len())
            .map(|m| {
                let values: Vec<f64> = frames
                    .clone()
                    .flat_map(|f| self.masks.sites(m).iter().map(move |&s| (s, f)))
                    .map(|(s, f)| self.fields[m].at(s, f))
                    .collect();
                ZScore::fit(&values)
            })
            .collect()
    }

    pub fn modalities(&self) -> &[String] {
        &self.modalities
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn sites(&self) -> usize {
        self.fields[0].sites()
    }

    pub fn timesteps(&self) -> usize {
        self.fields[0].steps()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn site_coords(&self, sites: &[usize]) -> Vec<f64> {
        let d = self.spatial_dim;
        sites.iter().flat_map(|&s| self.coords[s * d..(s + 1) * d].iter().copied()).collect()
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn masks(&self) -> &SensorMaskSet {
        &self.masks
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn context_frames(&self) -> usize {
        self.context_frames
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn window_count(&self) -> usize {
        self.starts.len()
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction
    }

    pub fn train_windows(&self) -> Range<usize> {
        0..self.train_count
    }

    pub fn val_windows(&self) -> Range<usize> {
        self.train_count..self.starts.len()
    }

    pub fn stats(&self) -> &[ZScore] {
        &self.stats
    }

    pub fn metadata(&self) -> Option<&SyntheticMetadata> {
        self.metadata.as_ref()
    }

    /// Last input frame of window `w`.
    pub fn input_frame(&self, w: usize) -> usize {
        self.starts[w] + self.window.input_len - 1
    }

    pub fn target_frame(&self, w: usize, delta: usize) -> usize {
        self.input_frame(w) + delta
    }

    /// Sites where evaluation queries are placed.
    pub fn region_sites(&self, region: EvalRegion) -> Vec<usize> {
        match region {
            EvalRegion::Grid => (0..self.sites()).collect(),
            EvalRegion::Union => self.masks.union(),
            EvalRegion::Intersection => self.masks.intersection(),
        }
    }

    /// Copy whose inputs are read through `masks` from `input_fields` (the
    /// true fields when `None`). Targets and statistics are unchanged.
    pub fn with_input_view(&self, masks: SensorMaskSet, input_fields: Option<Vec<Field>>) -> Result<Self, DataError> {
        if masks.modalities() != self.modality_count() || masks.catalog() != self.sites() {
            return Err(DataError::Invalid("input masks do not match the dataset".into()));
        }
        if let Some(f) = &input_fields {
            if f.len() != self.fields.len() || f.iter().any(|f| f.sites() != self.sites() || f.steps() != self.timesteps()) {
                return Err(DataError::Invalid("input fields do not match the dataset".into()));
            }
        }
        Ok(Self {
            masks,
            input_fields,
            ..self.clone()
        })
    }

    pub fn input_fields(&self) -> &[Field] {
        self.input_fields.as_deref().unwrap_or(&self.fields)
    }

    pub fn raw_values(&self, modality: usize, frame: usize, sites: &[usize]) -> Vec<f64> {
        sites.iter().map(|&s| self.fields[modality].at(s, frame)).collect()
    }

    pub fn normalized_values(&self, modality: usize, frame: usize, sites: &[usize]) -> Vec<f64> {
        let z = self.stats[modality];
        sites.iter().map(|&s| z.apply(self.fields[modality].at(s, frame))).collect()
    }

    /// Normalized context for window `w` read through `masks`. Modalities
    /// with `present[m] == false` keep their values but are marked absent.
    pub fn context_with(&self, w: usize, present: &[bool], masks: &SensorMaskSet) -> Result<ContextSet, DataError> {
        let input = self.input_frame(w);
        let frames: Vec<usize> = (input + 1 - self.context_frames..=input).collect();
        let mut obs = sparsify(self.input_fields(), &self.coords, self.spatial_dim, masks, &frames, input)?;
        for (m, o) in obs.iter_mut().enumerate() {
            let z = self.stats[m];
            for v in &mut o.values {
                *v = z.apply(*v);
            }
        }
        let mut ctx = ContextSet::new(obs);
        for (m, &p) in present.iter().enumerate() {
            if !p {
                ctx.mark_absent(m);
            }
        }
        Ok(ctx)
    }

    pub fn context(&self, w: usize, present: &[bool]) -> Result<ContextSet, DataError> {
        self.context_with(w, present, &self.masks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SensorLayout;

    #[test]
    fn window_counts() {
        let spec = WindowSpec::default();
        assert_eq!(window_count(500, &spec).unwrap(), 479);
        assert_eq!(window_count(22, &spec).unwrap(), 1);
        assert_eq!(window_count(25, &spec).unwrap(), 4);
        assert!(matches!(window_count(21, &spec), Err(DataError::TooFewTimesteps { .. })));
    }

    fn small() -> DataConfig {
        DataConfig {
            timesteps: 60,
            ..DataConfig::default()
        }
    }

    #[test]
    fn default_dataset_shape() {
        let ds = FieldDataset::generate(&DataConfig::default()).unwrap();
        assert_eq!(ds.window_count(), 479);
        assert_eq!(ds.train_windows(), 0..383);
        assert_eq!(ds.val_windows(), 383..479);
        assert_eq!(ds.masks().counts().per_modality, vec![50, 50]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = FieldDataset::generate(&small()).unwrap();
        let b = FieldDataset::generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = FieldDataset::generate(&DataConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.fields(), c.fields());
    }

    #[test]
    fn training_split_is_standardized() {
        let ds = FieldDataset::generate(&DataConfig::default()).unwrap();
        for m in 0..2 {
            let vals: Vec<f64> = ds
                .train_frames()
                .flat_map(|f| ds.normalized_values(m, f, ds.masks().sites(m)))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-10, "std {std}");
        }
    }

    #[test]
    fn full_mask_reproduces_field() {
        let cfg = DataConfig {
            sensors: SensorLayout::Full,
            ..small()
        };
        let ds = FieldDataset::generate(&cfg).unwrap();
        let masks = SensorMaskSet::full(ds.sites(), 2);
        let obs = sparsify(ds.fields(), ds.coords(), 1, &masks, &[7], 7).unwrap();
        for (o, field) in obs.iter().zip(ds.fields()) {
            assert_eq!(o.values, field.frame(7));
            assert!(o.time_offsets.iter().all(|&t| t == 0.0));
        }
    }

    #[test]
    fn disjoint_masks_share_no_locations() {
        let cfg = DataConfig {
            sensors: SensorLayout::Exact {
                all_overlap: 0,
                pairwise_only: 0,
                exclusive: 40,
            },
            ..small()
        };
        let ds = FieldDataset::generate(&cfg).unwrap();
        let ctx = ds.context(0, &[true, true]).unwrap();
        let a = &ctx.observations()[0].locations;
        assert!(a.iter().all(|x| !ctx.observations()[1].locations.contains(x)));
    }

    #[test]
    fn context_frames_and_offsets() {
        let ds = FieldDataset::generate(&small()).unwrap();
        let ctx = ds.context(3, &[true, false]).unwrap();
        assert!(ctx.is_present(0) && !ctx.is_present(1));
        let o = &ctx.observations()[0];
        assert_eq!(o.len(), 50 * ds.context_frames());
        assert_eq!(o.time_offsets[0], -1.0);
        assert_eq!(*o.time_offsets.last().unwrap(), 0.0);
        let site = ds.masks().sites(0)[0];
        assert_eq!(o.values[50], ds.stats()[0].apply(ds.fields()[0].at(site, ds.input_frame(3))));
    }
}
