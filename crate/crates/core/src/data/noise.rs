//! Per-sample Gaussian corruption of a subset of input modalities.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DataError;
use crate::config::NoiseSpec;
use crate::model::ContextSet;

/// Adds zero-mean Gaussian noise to between 1 and `max_corrupted` present
/// modalities, scaled by each modality's observed standard deviation in this
/// sample. At least one present modality is left untouched. Returns the
/// corrupted modality indices.
pub fn corrupt(ctx: &mut ContextSet, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, DataError> {
    let m = ctx.modalities();
    if spec.max_corrupted >= m {
        return Err(DataError::TooManyCorrupted {
            k: spec.max_corrupted,
            modalities: m,
        });
    }
    if spec.sigma == 0.0 || spec.max_corrupted == 0 {
        return Ok(Vec::new());
    }
    if !(spec.sigma > 0.0) {
        return Err(DataError::Invalid(format!("noise level {} must be non-negative", spec.sigma)));
    }
    let mut present: Vec<usize> = (0..m).filter(|&i| ctx.is_present(i)).collect();
    if present.len() < 2 {
        return Ok(Vec::new());
    }
    let k = rng.random_range(1..=spec.max_corrupted).min(present.len() - 1);
    present.shuffle(rng);
    let mut chosen = present[..k].to_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        let obs = &mut ctx.observations_mut()[i];
        let scale = spec.sigma * obs.value_std();
        for v in &mut obs.values {
            let z: f64 = StandardNormal.sample(rng);
            *v += scale * z;
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModalityObservations;
    use rand::SeedableRng;

    fn ctx(m: usize) -> ContextSet {
        ContextSet::new(
            (0..m)
                .map(|i| {
                    let vals: Vec<f64> = (0..20).map(|j| (j as f64 * 0.3 + i as f64).sin()).collect();
                    ModalityObservations::new(i, 1, (0..20).map(|j| j as f64 / 20.0).collect(), vec![0.0; 20], vals, 0.0).unwrap()
                })
                .collect(),
        )
    }

    fn spec(k: usize, sigma: f64) -> NoiseSpec {
        NoiseSpec {
            max_corrupted: k,
            sigma,
            seed: 0,
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut c = ctx(3);
        let before = c.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(corrupt(&mut c, &spec(2, 0.0), &mut rng).unwrap().is_empty());
        assert_eq!(c, before);
    }

    #[test]
    fn clean_modalities_are_bitwise_unchanged() {
        for seed in 0..30 {
            let mut c = ctx(3);
            let before = c.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chosen = corrupt(&mut c, &spec(2, 1.0), &mut rng).unwrap();
            assert!((1..=2).contains(&chosen.len()));
            for i in 0..3 {
                let same = c.observations()[i] == before.observations()[i];
                assert_eq!(same, !chosen.contains(&i));
            }
        }
    }

    #[test]
    fn reproducible() {
        let run = || {
            let mut c = ctx(3);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            corrupt(&mut c, &spec(2, 2.0), &mut rng).unwrap();
            c
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noise_scales_with_sample_std() {
        let mut c = ctx(2);
        let before = c.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chosen = corrupt(&mut c, &spec(1, 0.5), &mut rng).unwrap();
        let i = chosen[0];
        let std = before.observations()[i].value_std();
        let diffs: Vec<f64> = c.observations()[i]
            .values
            .iter()
            .zip(&before.observations()[i].values)
            .map(|(a, b)| a - b)
            .collect();
        let rms = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!(rms > 0.1 * std && rms < 2.0 * std);
    }

    #[test]
    fn k_must_leave_one_clean() {
        let mut c = ctx(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            corrupt(&mut c, &spec(2, 1.0), &mut rng),
            Err(DataError::TooManyCorrupted { k: 2, modalities: 2 })
        ));
    }
}
