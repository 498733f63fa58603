//! Inverse-distance-weighted imputation.

/// Neighbor indices and normalized weights for one query point.
#[derive(Clone, Debug, PartialEq)]
pub struct IdwStencil {
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

impl IdwStencil {
    /// Uses the `k` nearest of `sources` (row-major, `dim` columns) with
    /// weights `1/d^power`. A source at distance zero takes all the weight.
    pub fn new(sources: &[f64], dim: usize, query: &[f64], power: f64, k: usize) -> Self {
        let n = sources.len() / dim;
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let d2: f64 = sources[i * dim..(i + 1) * dim].iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some(&(d, i)) = dist.first() {
            if d == 0.0 {
                return Self {
                    neighbors: vec![i],
                    weights: vec![1.0],
                };
            }
        }
        dist.truncate(k.max(1));
        let raw: Vec<f64> = dist.iter().map(|(d, _)| d.powf(-power)).collect();
        let total: f64 = raw.iter().sum();
        Self {
            neighbors: dist.iter().map(|&(_, i)| i).collect(),
            weights: raw.iter().map(|w| w / total).collect(),
        }
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.neighbors.iter().zip(&self.weights).map(|(&i, w)| w * values[i]).sum()
    }
}

pub fn idw(sources: &[f64], dim: usize, values: &[f64], query: &[f64], power: f64, k: usize) -> f64 {
    IdwStencil::new(sources, dim, query, power, k).apply(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_at_sensor() {
        let src = [0.0, 0.5, 1.0];
        assert_eq!(idw(&src, 1, &[3.0, 7.0, 9.0], &[0.5], 2.0, 4), 7.0);
    }

    #[test]
    fn midpoint_of_two() {
        assert_eq!(idw(&[0.0, 1.0], 1, &[0.0, 2.0], &[0.5], 2.0, 4), 1.0);
    }

    #[test]
    fn only_nearest_k_count() {
        let src = [0.0, 0.1, 0.2, 0.3, 5.0];
        let s = IdwStencil::new(&src, 1, &[0.15], 2.0, 4);
        assert_eq!(s.neighbors.len(), 4);
        assert!(!s.neighbors.contains(&4));
        assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_dimensional() {
        let src = [0.0, 0.0, 2.0, 0.0];
        assert!((idw(&src, 2, &[1.0, 3.0], &[1.0, 0.0], 2.0, 4) - 2.0).abs() < 1e-15);
    }
}
