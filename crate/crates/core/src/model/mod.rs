//! The conditioned multimodal field network.
//!
//! Data flows through three parts:
//!
//! 1. **Encoders.** For each stage and modality, learnable latent queries
//!    cross-attend to that modality's projected observation tokens. Absent
//!    modalities are never encoded; their latent block is all zeros.
//! 2. **Refinement.** Each stage concatenates the latent blocks along the
//!    token axis, adds the global code `z` to every token and runs the
//!    stage's self-attention processor. The next stage's `z` is the token
//!    mean of this stage's output; `z` starts at zero. The last stage's
//!    output is the field `g`.
//! 3. **Decoder.** A self-attention trunk refines `g`; query embeddings
//!    (Fourier features of location and time offset) cross-attend into it
//!    and per-modality heads emit one scalar per query.
//!
//! Tokens of absent modalities are excluded from every attention through an
//! additive key mask.

mod inputs;
pub mod layers;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use inputs::{ContextSet, ModalityObservations, QuerySet, Targets};

use crate::autodiff::{Tape, Var, MASKED_LOGIT};
use crate::config::{FusionMode, ModelConfig, PositionalKind, QueryCombine, QueryInitKind};
use crate::encodings::{
    EncodingError, FixedSinusoidalFeatures, GaussianFourierFeatures, PositionalEncoder, SinusoidalQueryInit,
};
use crate::params::{Bound, ParamId, ParamStore};
use crate::seed::{rng_for, tags};
use crate::tensor::{Tensor, TensorError};
use layers::{CrossBlock, Init, Linear, Mlp, SelfBlock};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("no modality is present in the context")]
    NoModalityPresent,
    #[error("modality {0} is marked present but has no observations")]
    EmptyPresent(usize),
    #[error("unknown modality id {0}")]
    UnknownModality(usize),
    #[error("modality {0} is supervised but has no targets")]
    MissingTargets(usize),
    #[error("modality {modality}: {predictions} predictions vs {targets} targets")]
    TargetLength {
        modality: usize,
        predictions: usize,
        targets: usize,
    },
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Debug)]
struct ModalityEncoder {
    input: Mlp,
    latents: ParamId,
    cross: CrossBlock,
}

/// Intermediate state of the refinement loop.
pub struct FieldState<'t> {
    /// Final field tokens, `(modalities · latents) × width`.
    pub field: Var<'t>,
    /// Global code fed to each stage.
    pub codes: Vec<Var<'t>>,
    /// Processor output of each stage that was evaluated.
    pub stage_outputs: Vec<Var<'t>>,
    /// Additive logit per field token (0 present, large negative absent).
    pub key_mask: Tensor,
}

/// Per-modality outputs, each `queries × 1`.
pub struct Predictions<'t> {
    pub per_modality: Vec<Option<Var<'t>>>,
}

impl Predictions<'_> {
    pub fn values(&self) -> Vec<Option<Vec<f64>>> {
        self.per_modality
            .iter()
            .map(|p| p.map(|v| v.value().into_data()))
            .collect()
    }
}

/// Serializable description sufficient to rebuild an untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub modalities: Vec<String>,
    pub spatial_dim: usize,
}

#[derive(Clone, Debug)]
pub struct OmniFieldModel {
    spec: ModelSpec,
    params: ParamStore,
    space: PositionalEncoder,
    time: PositionalEncoder,
    encoders: Vec<ModalityEncoder>,
    processors: Vec<Vec<SelfBlock>>,
    trunk: Vec<SelfBlock>,
    query_proj: Linear,
    reader: CrossBlock,
    heads: Vec<Mlp>,
}

fn positional(kind: PositionalKind, input_dim: usize, bands: usize, scale: f64, seed: u64) -> Result<PositionalEncoder> {
    Ok(match kind {
        PositionalKind::Gaussian => {
            PositionalEncoder::Gaussian(GaussianFourierFeatures::new(input_dim, bands, scale, seed)?)
        }
        PositionalKind::Fixed => {
            PositionalEncoder::Fixed(FixedSinusoidalFeatures::new(input_dim, bands, (2.0 * scale).max(1.0))?)
        }
    })
}

impl OmniFieldModel {
    pub fn new(config: ModelConfig, modalities: Vec<String>, spatial_dim: usize) -> Result<Self> {
        config.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        if modalities.is_empty() {
            return Err(ModelError::Config("modality catalog is empty".into()));
        }
        if spatial_dim == 0 {
            return Err(ModelError::Config("spatial_dim must be positive".into()));
        }
        let c = &config;
        let space = positional(
            c.positional,
            spatial_dim,
            c.space.bands,
            c.space.scale,
            crate::seed::derive_seed(c.seed, tags::SPACE_ENCODING, 0),
        )?;
        let time = positional(
            c.positional,
            1,
            c.time.bands,
            c.time.scale,
            crate::seed::derive_seed(c.seed, tags::TIME_ENCODING, 0),
        )?;

        let mut store = ParamStore::new();
        let mut rng = rng_for(c.seed, tags::MODEL_INIT, 0);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };

        let raw_dim = spatial_dim + 2;
        let token_dim = c.input_hidden + space.width() + time.width();
        let latent_init = match c.query_init {
            QueryInitKind::Sinusoidal => Some(
                SinusoidalQueryInit {
                    queries: c.latents,
                    width: c.width,
                    base: c.sin_base,
                }
                .build()?,
            ),
            QueryInitKind::RandomNormal => None,
        };
        let encoder_sets = if c.share_encoders { 1 } else { c.stages };
        let mut encoders = Vec::with_capacity(encoder_sets * modalities.len());
        for s in 0..encoder_sets {
            for name in &modalities {
                let prefix = format!("stage{s}.encoder.{name}");
                let input = Mlp::new(&mut init, &format!("{prefix}.input"), raw_dim, c.input_hidden, c.input_hidden);
                let latents = match &latent_init {
                    Some(q) => init.constant(format!("{prefix}.latents"), q.clone()),
                    None => init.normal(format!("{prefix}.latents"), &[c.latents, c.width], 0.02),
                };
                let cross = CrossBlock::new(&mut init, &format!("{prefix}.cross"), c.width, token_dim, c.heads, c.ff_mult);
                encoders.push(ModalityEncoder { input, latents, cross });
            }
        }
        let processors = (0..c.stages)
            .map(|s| {
                (0..c.processor_depth)
                    .map(|b| SelfBlock::new(&mut init, &format!("stage{s}.processor{b}"), c.width, c.heads, c.ff_mult))
                    .collect()
            })
            .collect();
        let trunk = (0..c.trunk_depth)
            .map(|b| SelfBlock::new(&mut init, &format!("trunk{b}"), c.width, c.heads, c.ff_mult))
            .collect();
        let query_dim = match c.query_combine {
            QueryCombine::Concat => space.width() + time.width(),
            QueryCombine::Sum => space.width(),
        };
        let query_proj = Linear::new(&mut init, "decoder.query_proj", query_dim, c.width);
        let reader = CrossBlock::new(&mut init, "decoder.reader", c.width, c.width, c.heads, c.ff_mult);
        let heads = modalities
            .iter()
            .map(|name| Mlp::new(&mut init, &format!("decoder.head.{name}"), c.width, c.width, 1))
            .collect();

        Ok(Self {
            spec: ModelSpec {
                config,
                modalities,
                spatial_dim,
            },
            params: store,
            space,
            time,
            encoders,
            processors,
            trunk,
            query_proj,
            reader,
            heads,
        })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        Self::new(spec.config.clone(), spec.modalities.clone(), spec.spatial_dim)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn config(&self) -> &ModelConfig {
        &self.spec.config
    }

    pub fn modalities(&self) -> &[String] {
        &self.spec.modalities
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn space_encoder(&self) -> &PositionalEncoder {
        &self.space
    }

    pub fn time_encoder(&self) -> &PositionalEncoder {
        &self.time
    }

    /// Parameters of the output head for `modality`.
    pub fn head_params(&self, modality: usize) -> Vec<ParamId> {
        self.heads[modality].params()
    }

    fn encoder(&self, stage: usize, modality: usize) -> &ModalityEncoder {
        let set = if self.spec.config.share_encoders { 0 } else { stage };
        &self.encoders[set * self.spec.modalities.len() + modality]
    }

    /// Latent tokens (`latents × width`) for one modality at one stage.
    /// Absent modalities yield the zero block without reading their data.
    pub fn encode_modality<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        stage: usize,
        obs: &ModalityObservations,
        present: bool,
    ) -> Result<Var<'t>> {
        let c = &self.spec.config;
        let modality = obs.modality;
        if modality >= self.spec.modalities.len() {
            return Err(ModelError::UnknownModality(modality));
        }
        if !present {
            return Ok(tape.constant(Tensor::zeros(&[c.latents, c.width])));
        }
        if obs.is_empty() {
            return Err(ModelError::EmptyPresent(modality));
        }
        if obs.spatial_dim != self.spec.spatial_dim {
            return Err(ModelError::Input(format!(
                "modality {modality} has spatial dim {}, model expects {}",
                obs.spatial_dim, self.spec.spatial_dim
            )));
        }
        let n = obs.len();
        let d = obs.spatial_dim;
        let mut raw = Vec::with_capacity(n * (d + 2));
        for i in 0..n {
            raw.push(obs.values[i]);
            raw.extend_from_slice(obs.location(i));
            raw.push(obs.time_offsets[i]);
        }
        let raw = Tensor::from_parts(vec![n, d + 2], raw);
        let space = self.space.encode(&Tensor::from_parts(vec![n, d], obs.locations.clone()))?;
        let time = self.time.encode(&Tensor::from_parts(vec![n, 1], obs.time_offsets.clone()))?;

        let enc = self.encoder(stage, modality);
        let projected = enc.input.forward(p, tape.constant(raw))?;
        let tokens = tape.concat(&[projected, tape.constant(space), tape.constant(time)], 1)?;
        Ok(enc.cross.forward(p, p.get(enc.latents), tokens, None)?)
    }

    fn key_mask(&self, presence: &[bool]) -> Tensor {
        let lat = self.spec.config.latents;
        let mut mask = Vec::with_capacity(presence.len() * lat);
        for &present in presence {
            let v = if present { 0.0 } else { MASKED_LOGIT };
            mask.extend(std::iter::repeat_n(v, lat));
        }
        Tensor::from_parts(vec![1, mask.len()], mask)
    }

    /// One crosstalk stage: concatenate latent blocks, add the global code to
    /// every token, run the stage processor.
    pub fn mct_block<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        stage: usize,
        blocks: &[Var<'t>],
        code: Var<'t>,
        key_mask: &Tensor,
    ) -> Result<Var<'t>> {
        let width = self.spec.config.width;
        if code.shape() != [1, width] {
            return Err(TensorError::ShapeMismatch {
                op: "mct_block",
                lhs: vec![1, width],
                rhs: code.shape(),
            }
            .into());
        }
        for b in blocks {
            let shape = b.shape();
            if shape.len() != 2 || shape[1] != width {
                return Err(TensorError::ShapeMismatch {
                    op: "mct_block",
                    lhs: vec![self.spec.config.latents, width],
                    rhs: shape,
                }
                .into());
            }
        }
        let mut x = tape.concat(blocks, 0)?.add(code)?;
        for block in &self.processors[stage] {
            x = block.forward(p, x, Some(key_mask))?;
        }
        Ok(x)
    }

    fn check_context(&self, ctx: &ContextSet) -> Result<()> {
        if ctx.modalities() != self.spec.modalities.len() {
            return Err(ModelError::Input(format!(
                "context has {} modalities, model has {}",
                ctx.modalities(),
                self.spec.modalities.len()
            )));
        }
        if !ctx.any_present() {
            return Err(ModelError::NoModalityPresent);
        }
        Ok(())
    }

    fn stage_tokens<'t>(&self, p: &Bound<'t>, tape: &'t Tape, stage: usize, ctx: &ContextSet) -> Result<Vec<Var<'t>>> {
        ctx.observations()
            .iter()
            .enumerate()
            .map(|(m, obs)| {
                if obs.modality != m {
                    return Err(ModelError::Input(format!(
                        "context slot {m} holds modality {}",
                        obs.modality
                    )));
                }
                self.encode_modality(p, tape, stage, obs, ctx.is_present(m))
            })
            .collect()
    }

    /// Iterative refinement: `z⁰ = 0`, `hᵏ = MCT(U, zᵏ)`, `zᵏ⁺¹ = mean_rows(hᵏ)`.
    pub fn icmr_forward<'t>(&self, p: &Bound<'t>, tape: &'t Tape, ctx: &ContextSet) -> Result<FieldState<'t>> {
        self.check_context(ctx)?;
        let width = self.spec.config.width;
        let key_mask = self.key_mask(ctx.presence());
        let mut code = tape.constant(Tensor::zeros(&[1, width]));
        let mut codes = Vec::with_capacity(self.spec.config.stages);
        let mut outputs = Vec::with_capacity(self.spec.config.stages);
        let shared = if self.spec.config.share_encoders {
            Some(self.stage_tokens(p, tape, 0, ctx)?)
        } else {
            None
        };
        for stage in 0..self.spec.config.stages {
            let blocks = match &shared {
                Some(b) => b.clone(),
                None => self.stage_tokens(p, tape, stage, ctx)?,
            };
            let h = self.mct_block(p, tape, stage, &blocks, code, &key_mask)?;
            codes.push(code);
            outputs.push(h);
            code = h.mean_rows()?;
        }
        Ok(FieldState {
            field: *outputs.last().expect("stages >= 1"),
            codes,
            stage_outputs: outputs,
            key_mask,
        })
    }

    /// Mid-fusion fallback: the global code is pinned to zero, so only the
    /// final stage influences the output and earlier stages are skipped.
    pub fn midfusion_field<'t>(&self, p: &Bound<'t>, tape: &'t Tape, ctx: &ContextSet) -> Result<FieldState<'t>> {
        self.check_context(ctx)?;
        let width = self.spec.config.width;
        let key_mask = self.key_mask(ctx.presence());
        let last = self.spec.config.stages - 1;
        let code = tape.constant(Tensor::zeros(&[1, width]));
        let blocks = self.stage_tokens(p, tape, last, ctx)?;
        let h = self.mct_block(p, tape, last, &blocks, code, &key_mask)?;
        Ok(FieldState {
            field: h,
            codes: vec![code],
            stage_outputs: vec![h],
            key_mask,
        })
    }

    fn query_features(&self, locations: &[f64], count: usize, delta_t: f64) -> Result<Tensor> {
        let d = self.spec.spatial_dim;
        let space = self.space.encode(&Tensor::from_parts(vec![count, d], locations.to_vec()))?;
        let time = self.time.encode(&Tensor::from_parts(vec![count, 1], vec![delta_t; count]))?;
        Ok(match self.spec.config.query_combine {
            QueryCombine::Concat => {
                let (sw, tw) = (space.cols(), time.cols());
                let mut data = Vec::with_capacity(count * (sw + tw));
                for r in 0..count {
                    data.extend_from_slice(space.row(r));
                    data.extend_from_slice(time.row(r));
                }
                Tensor::from_parts(vec![count, sw + tw], data)
            }
            QueryCombine::Sum => {
                let data = space.data().iter().zip(time.data()).map(|(a, b)| a + b).collect();
                Tensor::from_parts(space.shape().to_vec(), data)
            }
        })
    }

    /// Reads per-modality predictions for `queries` out of a field.
    pub fn decode<'t>(&self, p: &Bound<'t>, tape: &'t Tape, state: &FieldState<'t>, queries: &QuerySet) -> Result<Predictions<'t>> {
        let m_count = self.spec.modalities.len();
        if queries.modalities() > m_count {
            return Err(ModelError::UnknownModality(queries.modalities() - 1));
        }
        if queries.spatial_dim != self.spec.spatial_dim {
            return Err(ModelError::Input(format!(
                "queries have spatial dim {}, model expects {}",
                queries.spatial_dim, self.spec.spatial_dim
            )));
        }
        let requested: Vec<usize> = queries.requested().collect();
        let mut per_modality = vec![None; m_count];
        if requested.is_empty() {
            return Ok(Predictions { per_modality });
        }

        let mut trunk = state.field;
        for block in &self.trunk {
            trunk = block.forward(p, trunk, Some(&state.key_mask))?;
        }

        // All query rows share the reader, so they are processed as one batch.
        let mut rows = Vec::new();
        let mut spans = Vec::with_capacity(requested.len());
        let mut total = 0;
        for &m in &requested {
            let locs = queries.locations[m].as_ref().expect("requested");
            if locs.len() % queries.spatial_dim != 0 {
                return Err(ModelError::Input(format!("modality {m}: ragged query locations")));
            }
            let count = locs.len() / queries.spatial_dim;
            rows.push(self.query_features(locs, count, queries.delta_t)?);
            spans.push((m, total, count));
            total += count;
        }
        let qw = rows[0].cols();
        let mut data = Vec::with_capacity(total * qw);
        for r in &rows {
            data.extend_from_slice(r.data());
        }
        let q_in = tape.constant(Tensor::from_parts(vec![total, qw], data));
        let q = self.query_proj.forward(p, q_in)?;
        let read = self.reader.forward(p, q, trunk, Some(&state.key_mask))?;
        for (m, start, count) in spans {
            let block = if spans_cover_all(start, count, total) {
                read
            } else {
                read.slice(0, start, count)?
            };
            per_modality[m] = Some(self.heads[m].forward(p, block)?);
        }
        Ok(Predictions { per_modality })
    }

    /// Field construction according to the configured fusion mode.
    pub fn field<'t>(&self, p: &Bound<'t>, tape: &'t Tape, ctx: &ContextSet) -> Result<FieldState<'t>> {
        match self.spec.config.fusion {
            FusionMode::Icmr => self.icmr_forward(p, tape, ctx),
            FusionMode::MidFusion => self.midfusion_field(p, tape, ctx),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, tape: &'t Tape, ctx: &ContextSet, queries: &QuerySet) -> Result<Predictions<'t>> {
        let state = self.field(p, tape, ctx)?;
        self.decode(p, tape, &state, queries)
    }

    /// Forward pass with the mid-fusion wiring regardless of configuration.
    pub fn midfusion_forward<'t>(&self, p: &Bound<'t>, tape: &'t Tape, ctx: &ContextSet, queries: &QuerySet) -> Result<Predictions<'t>> {
        let state = self.midfusion_field(p, tape, ctx)?;
        self.decode(p, tape, &state, queries)
    }

    /// Gradient-free prediction.
    pub fn predict(&self, ctx: &ContextSet, queries: &QuerySet) -> Result<Vec<Option<Vec<f64>>>> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        Ok(self.forward(&p, &tape, ctx, queries)?.values())
    }
}

fn spans_cover_all(start: usize, count: usize, total: usize) -> bool {
    start == 0 && count == total
}

/// `Σ_m τ_m · mean((ŷ_m − y_m)²)`. Unsupervised modalities contribute nothing.
///
/// Returns a detached zero when no modality is supervised.
pub fn masked_loss<'t>(
    tape: &'t Tape,
    predictions: &Predictions<'t>,
    targets: &Targets,
    supervised: &[bool],
) -> Result<Var<'t>> {
    let mut terms = Vec::new();
    for (m, &tau) in supervised.iter().enumerate() {
        if !tau {
            continue;
        }
        let pred = predictions
            .per_modality
            .get(m)
            .copied()
            .flatten()
            .ok_or(ModelError::MissingTargets(m))?;
        let target = targets
            .values
            .get(m)
            .and_then(Option::as_ref)
            .ok_or(ModelError::MissingTargets(m))?;
        let n = pred.with_value(Tensor::len);
        if n != target.len() {
            return Err(ModelError::TargetLength {
                modality: m,
                predictions: n,
                targets: target.len(),
            });
        }
        let y = tape.constant(Tensor::from_parts(pred.shape(), target.clone()));
        terms.push(pred.sub(y)?.square()?.sum()?.scale(1.0 / n as f64)?);
    }
    let mut iter = terms.into_iter();
    let Some(mut total) = iter.next() else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    for t in iter {
        total = total.add(t)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn obs(m: usize, pts: &[(f64, f64)]) -> ModalityObservations {
        ModalityObservations::new(
            m,
            1,
            pts.iter().map(|p| p.0).collect(),
            vec![0.0; pts.len()],
            pts.iter().map(|p| p.1).collect(),
            0.0,
        )
        .unwrap()
    }

    fn micro(modalities: usize) -> OmniFieldModel {
        let names = (0..modalities).map(|m| format!("m{m}")).collect();
        OmniFieldModel::new(ModelConfig::micro(), names, 1).unwrap()
    }

    #[test]
    fn absent_modality_encodes_to_zero_block() {
        let model = micro(2);
        let tape = Tape::new();
        let p = model.params().bind(&tape);
        let o = obs(1, &[(0.1, 3.0)]);
        let z = model.encode_modality(&p, &tape, 0, &o, false).unwrap();
        assert_eq!(z.shape(), vec![4, 8]);
        assert!(z.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn present_but_empty_is_an_error() {
        let model = micro(1);
        let tape = Tape::new();
        let p = model.params().bind(&tape);
        let o = ModalityObservations::empty(0, 1, 0.0);
        assert!(matches!(
            model.encode_modality(&p, &tape, 0, &o, true),
            Err(ModelError::EmptyPresent(0))
        ));
    }

    #[test]
    fn all_absent_context_is_rejected() {
        let model = micro(2);
        let ctx = ContextSet::new(vec![
            ModalityObservations::empty(0, 1, 0.0),
            ModalityObservations::empty(1, 1, 0.0),
        ]);
        let q = QuerySet::new(1, 0.0, vec![Some(vec![0.5]), None]);
        assert!(matches!(model.predict(&ctx, &q), Err(ModelError::NoModalityPresent)));
    }

    #[test]
    fn mct_token_count() {
        let mut cfg = ModelConfig::micro();
        cfg.latents = 64;
        cfg.width = 8;
        let names = vec!["a".into(), "b".into(), "c".into()];
        let model = OmniFieldModel::new(cfg, names, 1).unwrap();
        let ctx = ContextSet::new((0..3).map(|m| obs(m, &[(0.2, 1.0), (0.4, -1.0)])).collect());
        let tape = Tape::new();
        let p = model.params().bind_frozen(&tape);
        let state = model.icmr_forward(&p, &tape, &ctx).unwrap();
        assert_eq!(state.field.shape(), vec![192, 8]);
    }

    #[test]
    fn mct_rejects_wrong_width() {
        let model = micro(1);
        let tape = Tape::new();
        let p = model.params().bind_frozen(&tape);
        let block = tape.constant(Tensor::zeros(&[4, 6]));
        let code = tape.constant(Tensor::zeros(&[1, 8]));
        let mask = Tensor::zeros(&[1, 4]);
        assert!(model.mct_block(&p, &tape, 0, &[block], code, &mask).is_err());
    }

    #[test]
    fn decoder_head_shapes() {
        let model = micro(2);
        let ctx = ContextSet::new(vec![obs(0, &[(0.1, 1.0)]), obs(1, &[(0.3, 2.0)])]);
        let q = QuerySet::new(1, 0.1, vec![Some(vec![0.1, 0.2, 0.3]), Some(vec![0.5])]);
        let tape = Tape::new();
        let p = model.params().bind_frozen(&tape);
        let preds = model.forward(&p, &tape, &ctx, &q).unwrap();
        assert_eq!(preds.per_modality[0].unwrap().shape(), vec![3, 1]);
        assert_eq!(preds.per_modality[1].unwrap().shape(), vec![1, 1]);
    }

    #[test]
    fn masked_loss_values() {
        let tape = Tape::new();
        let pred = tape.leaf(Tensor::column(vec![1.0, 3.0]).unwrap());
        let preds = Predictions {
            per_modality: vec![Some(pred)],
        };
        let targets = Targets {
            values: vec![Some(vec![1.0, 1.0])],
        };
        let loss = masked_loss(&tape, &preds, &targets, &[true]).unwrap();
        assert_eq!(loss.value().item(), 2.0);
        let none = masked_loss(&tape, &preds, &targets, &[false]).unwrap();
        assert_eq!(none.value().item(), 0.0);
        let exact = Targets {
            values: vec![Some(vec![1.0, 3.0])],
        };
        assert_eq!(masked_loss(&tape, &preds, &exact, &[true]).unwrap().value().item(), 0.0);
        let missing = Targets { values: vec![None] };
        assert!(matches!(
            masked_loss(&tape, &preds, &missing, &[true]),
            Err(ModelError::MissingTargets(0))
        ));
    }

    #[test]
    fn sum_combine_model_runs() {
        let mut cfg = ModelConfig::micro();
        cfg.query_combine = QueryCombine::Sum;
        cfg.time.bands = cfg.space.bands;
        let model = OmniFieldModel::new(cfg, vec!["a".into()], 1).unwrap();
        let ctx = ContextSet::new(vec![obs(0, &[(0.1, 1.0)])]);
        let q = QuerySet::new(1, 0.0, vec![Some(vec![0.1])]);
        assert_eq!(model.predict(&ctx, &q).unwrap()[0].as_ref().unwrap().len(), 1);
    }
}
