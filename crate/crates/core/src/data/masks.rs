//! Sensor incidence over a site catalog with exact overlap-class counts.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::config::SensorLayout;
use crate::seed::{rng_for, tags};

/// Per-modality sorted site lists over a catalog of `catalog` sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorMaskSet {
    catalog: usize,
    sites: Vec<Vec<usize>>,
}

/// Overlap-class counts read back from an incidence matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub per_modality: Vec<usize>,
    /// Sites observed by every modality.
    pub all_overlap: usize,
    /// Sites observed by exactly two modalities (and not by all of them).
    pub pairwise_only: usize,
    /// Sites observed by exactly one modality, per modality.
    pub exclusive: Vec<usize>,
    pub union: usize,
}

impl SensorMaskSet {
    pub fn from_sites(catalog: usize, sites: Vec<Vec<usize>>) -> Result<Self, DataError> {
        if sites.is_empty() {
            return Err(DataError::Invalid("mask set needs at least one modality".into()));
        }
        let mut sorted = Vec::with_capacity(sites.len());
        for list in sites {
            let set: BTreeSet<usize> = list.iter().copied().collect();
            if set.len() != list.len() {
                return Err(DataError::Invalid("duplicate site in mask".into()));
            }
            if let Some(&bad) = set.iter().find(|&&s| s >= catalog) {
                return Err(DataError::MaskIndex { index: bad, catalog });
            }
            sorted.push(set.into_iter().collect());
        }
        Ok(Self { catalog, sites: sorted })
    }

    /// Every modality observes every site.
    pub fn full(catalog: usize, modalities: usize) -> Self {
        Self {
            catalog,
            sites: vec![(0..catalog).collect(); modalities],
        }
    }

    pub fn catalog(&self) -> usize {
        self.catalog
    }

    pub fn modalities(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self, modality: usize) -> &[usize] {
        &self.sites[modality]
    }

    /// `|S| × M` boolean incidence, row-major.
    pub fn incidence(&self) -> Vec<Vec<bool>> {
        let mut rows = vec![vec![false; self.modalities()]; self.catalog];
        for (m, list) in self.sites.iter().enumerate() {
            for &s in list {
                rows[s][m] = true;
            }
        }
        rows
    }

    pub fn union(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.sites.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    pub fn intersection(&self) -> Vec<usize> {
        self.incidence()
            .iter()
            .enumerate()
            .filter(|(_, row)| row.iter().all(|&b| b))
            .map(|(s, _)| s)
            .collect()
    }

    pub fn counts(&self) -> MaskCounts {
        let m = self.modalities();
        let mut counts = MaskCounts {
            per_modality: self.sites.iter().map(Vec::len).collect(),
            all_overlap: 0,
            pairwise_only: 0,
            exclusive: vec![0; m],
            union: 0,
        };
        for row in self.incidence() {
            let k = row.iter().filter(|&&b| b).count();
            if k > 0 {
                counts.union += 1;
            }
            if k == m {
                counts.all_overlap += 1;
            } else if k == 2 {
                counts.pairwise_only += 1;
            }
            if k == 1 && m > 1 {
                let owner = row.iter().position(|&b| b).expect("one set bit");
                counts.exclusive[owner] += 1;
            }
        }
        counts
    }
}

fn exact(catalog: usize, modalities: usize, all: usize, pairwise: usize, exclusive: usize, order: &[usize]) -> Result<SensorMaskSet, DataError> {
    let m = modalities;
    if pairwise > 0 && m < 3 {
        return Err(DataError::InfeasibleMasks(format!(
            "pairwise-only sites need at least 3 modalities, got {m}"
        )));
    }
    let pairs = m * (m - 1) / 2;
    let needed = all + pairs * pairwise + m * exclusive;
    if needed > catalog {
        return Err(DataError::CatalogTooSmall { needed, available: catalog });
    }
    let mut sites = vec![Vec::new(); m];
    let mut next = order.iter().copied();
    for _ in 0..all {
        let s = next.next().expect("counted");
        for list in &mut sites {
            list.push(s);
        }
    }
    for a in 0..m {
        for b in a + 1..m {
            for _ in 0..pairwise {
                let s = next.next().expect("counted");
                sites[a].push(s);
                sites[b].push(s);
            }
        }
    }
    for list in &mut sites {
        for _ in 0..exclusive {
            list.push(next.next().expect("counted"));
        }
    }
    SensorMaskSet::from_sites(catalog, sites)
}

/// Assigns catalog sites to modalities at random, honoring the layout's
/// overlap counts exactly. Deterministic given `seed`.
pub fn build_sensor_masks(catalog: usize, modalities: usize, layout: &SensorLayout, seed: u64) -> Result<SensorMaskSet, DataError> {
    if modalities == 0 {
        return Err(DataError::Invalid("no modalities".into()));
    }
    let mut rng = rng_for(seed, tags::SENSOR_MASKS, 0);
    let mut order: Vec<usize> = (0..catalog).collect();
    order.shuffle(&mut rng);
    match *layout {
        SensorLayout::Full => Ok(SensorMaskSet::full(catalog, modalities)),
        SensorLayout::Exact {
            all_overlap,
            pairwise_only,
            exclusive,
        } => exact(catalog, modalities, all_overlap, pairwise_only, exclusive, &order),
        SensorLayout::Bounded {
            per_modality,
            all_overlap,
            min_union,
        } => {
            let m = modalities;
            if all_overlap > per_modality {
                return Err(DataError::InfeasibleMasks(format!(
                    "overlap {all_overlap} exceeds per-modality total {per_modality}"
                )));
            }
            let free = per_modality - all_overlap;
            if m < 3 {
                return exact(catalog, m, all_overlap, 0, free, &order);
            }
            // union = all + M·free − p·M(M−1)/2 for p pairwise-only sites per pair.
            let top = all_overlap + m * free;
            let shrink = m * (m - 1) / 2;
            if top < min_union {
                return Err(DataError::InfeasibleMasks(format!(
                    "largest achievable union {top} is below {min_union}"
                )));
            }
            let max_p = ((top - min_union) / shrink).min(free / (m - 1));
            let p = rng.random_range(0..=max_p);
            exact(catalog, m, all_overlap, p, free - (m - 1) * p, &order)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(all: usize, pair: usize, excl: usize) -> SensorLayout {
        SensorLayout::Exact {
            all_overlap: all,
            pairwise_only: pair,
            exclusive: excl,
        }
    }

    #[test]
    fn climsim_counts_are_exact() {
        let masks = build_sensor_masks(21_600, 3, &layout(108, 81, 162), 0).unwrap();
        let c = masks.counts();
        assert_eq!(c.per_modality, vec![432; 3]);
        assert_eq!(c.all_overlap, 108);
        assert_eq!(c.pairwise_only, 3 * 81);
        assert_eq!(c.exclusive, vec![162; 3]);
        assert_eq!(c.union, 837);
        assert_eq!(masks.intersection().len(), 108);
    }

    #[test]
    fn disjoint_union() {
        let masks = build_sensor_masks(100, 3, &layout(0, 0, 10), 1).unwrap();
        assert_eq!(masks.union().len(), 30);
        assert!(masks.intersection().is_empty());
    }

    #[test]
    fn bounded_variant_stays_in_range() {
        let l = SensorLayout::preset("climsim-1pct").unwrap();
        for seed in 0..20 {
            let c = build_sensor_masks(21_600, 3, &l, seed).unwrap().counts();
            assert_eq!(c.per_modality, vec![216; 3]);
            assert_eq!(c.all_overlap, 108);
            assert!((324..=432).contains(&c.union), "union {}", c.union);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = build_sensor_masks(100, 2, &layout(20, 0, 30), 4).unwrap();
        let b = build_sensor_masks(100, 2, &layout(20, 0, 30), 4).unwrap();
        let c = build_sensor_masks(100, 2, &layout(20, 0, 30), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.counts().per_modality, vec![50, 50]);
    }

    #[test]
    fn infeasible_layouts() {
        assert!(matches!(
            build_sensor_masks(50, 3, &layout(10, 5, 10), 0),
            Err(DataError::CatalogTooSmall { needed: 55, .. })
        ));
        assert!(matches!(build_sensor_masks(100, 2, &layout(10, 5, 10), 0), Err(DataError::InfeasibleMasks(_))));
        assert!(matches!(
            SensorMaskSet::from_sites(10, vec![vec![3, 10]]),
            Err(DataError::MaskIndex { index: 10, catalog: 10 })
        ));
    }

    #[test]
    fn sites_are_sorted() {
        let masks = build_sensor_masks(100, 2, &layout(20, 0, 30), 7).unwrap();
        for m in 0..2 {
            assert!(masks.sites(m).windows(2).all(|w| w[0] < w[1]));
        }
    }
}
