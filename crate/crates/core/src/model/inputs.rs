//! Context sets, query sets and targets exchanged with the model.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Observations of one modality around one input time.
///
/// Each point carries a spatial location, a time offset relative to the
/// input time (zero or negative), and a value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityObservations {
    pub modality: usize,
    pub spatial_dim: usize,
    /// Row-major `len × spatial_dim`.
    pub locations: Vec<f64>,
    pub time_offsets: Vec<f64>,
    pub values: Vec<f64>,
    pub input_time: f64,
}

impl ModalityObservations {
    pub fn new(
        modality: usize,
        spatial_dim: usize,
        locations: Vec<f64>,
        time_offsets: Vec<f64>,
        values: Vec<f64>,
        input_time: f64,
    ) -> Result<Self, ModelError> {
        let n = values.len();
        if spatial_dim == 0 || locations.len() != n * spatial_dim || time_offsets.len() != n {
            return Err(ModelError::Input(format!(
                "modality {modality}: {n} values, {} location entries for dim {spatial_dim}, {} time offsets",
                locations.len(),
                time_offsets.len()
            )));
        }
        if locations.iter().chain(&time_offsets).any(|v| !v.is_finite()) {
            return Err(ModelError::Input(format!(
                "modality {modality}: non-finite location or time offset"
            )));
        }
        Ok(Self {
            modality,
            spatial_dim,
            locations,
            time_offsets,
            values,
            input_time,
        })
    }

    pub fn empty(modality: usize, spatial_dim: usize, input_time: f64) -> Self {
        Self {
            modality,
            spatial_dim,
            locations: Vec::new(),
            time_offsets: Vec::new(),
            values: Vec::new(),
            input_time,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.locations[i * self.spatial_dim..(i + 1) * self.spatial_dim]
    }

    /// Reorders points; `order[i]` is the source index of output point `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = Self::empty(self.modality, self.spatial_dim, self.input_time);
        for &i in order {
            out.locations.extend_from_slice(self.location(i));
            out.time_offsets.push(self.time_offsets[i]);
            out.values.push(self.values[i]);
        }
        out
    }

    /// Sample standard deviation of the values (population form).
    pub fn value_std(&self) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        let mean = self.values.iter().sum::<f64>() / n as f64;
        (self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
    }
}

/// Inputs for one instance: one observation set per catalog modality plus
/// presence bits. A modality marked absent is never read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    observations: Vec<ModalityObservations>,
    presence: Vec<bool>,
}

impl ContextSet {
    /// Presence is inferred: a modality is present iff it has observations.
    pub fn new(observations: Vec<ModalityObservations>) -> Self {
        let presence = observations.iter().map(|o| !o.is_empty()).collect();
        Self {
            observations,
            presence,
        }
    }

    pub fn with_presence(observations: Vec<ModalityObservations>, presence: Vec<bool>) -> Result<Self, ModelError> {
        if presence.len() != observations.len() {
            return Err(ModelError::Input(format!(
                "{} presence bits for {} modalities",
                presence.len(),
                observations.len()
            )));
        }
        for (m, (obs, &p)) in observations.iter().zip(&presence).enumerate() {
            if p && obs.is_empty() {
                return Err(ModelError::EmptyPresent(m));
            }
        }
        Ok(Self {
            observations,
            presence,
        })
    }

    /// Marks `modality` absent without discarding its stored values.
    pub fn mark_absent(&mut self, modality: usize) {
        if let Some(p) = self.presence.get_mut(modality) {
            *p = false;
        }
    }

    pub fn modalities(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[ModalityObservations] {
        &self.observations
    }

    pub fn observations_mut(&mut self) -> &mut [ModalityObservations] {
        &mut self.observations
    }

    pub fn presence(&self) -> &[bool] {
        &self.presence
    }

    pub fn is_present(&self, modality: usize) -> bool {
        self.presence.get(modality).copied().unwrap_or(false)
    }

    pub fn any_present(&self) -> bool {
        self.presence.iter().any(|&p| p)
    }

    pub fn input_time(&self) -> f64 {
        self.observations.first().map_or(0.0, |o| o.input_time)
    }
}

/// Requested outputs for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub spatial_dim: usize,
    /// Offset of the output time from the input time, in model time units.
    pub delta_t: f64,
    /// Query sites per modality (row-major `n × spatial_dim`); `None` when
    /// nothing is requested for that modality.
    pub locations: Vec<Option<Vec<f64>>>,
    /// Supervision bits.
    pub supervised: Vec<bool>,
}

impl QuerySet {
    pub fn new(spatial_dim: usize, delta_t: f64, locations: Vec<Option<Vec<f64>>>) -> Self {
        let supervised = locations.iter().map(Option::is_some).collect();
        Self {
            spatial_dim,
            delta_t,
            locations,
            supervised,
        }
    }

    pub fn modalities(&self) -> usize {
        self.locations.len()
    }

    pub fn count(&self, modality: usize) -> usize {
        self.locations
            .get(modality)
            .and_then(Option::as_ref)
            .map_or(0, |l| l.len() / self.spatial_dim)
    }

    pub fn requested(&self) -> impl Iterator<Item = usize> + '_ {
        self.locations
            .iter()
            .enumerate()
            .filter_map(|(m, l)| l.as_ref().filter(|l| !l.is_empty()).map(|_| m))
    }
}

/// Ground truth aligned with a [`QuerySet`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub values: Vec<Option<Vec<f64>>>,
}
