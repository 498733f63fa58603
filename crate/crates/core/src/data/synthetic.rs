//! Driving sinusoidal field and Kuramoto-coupled response field.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::config::Integrator;
use crate::seed::{rng_for, tags};

/// Uniform space-time grid; `x_i = i·x_max/X`, `t_n = n·t_max/T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub spatial_points: usize,
    pub timesteps: usize,
    pub x_max: f64,
    pub t_max: f64,
}

impl Grid {
    pub fn new(spatial_points: usize, timesteps: usize, x_max: f64, t_max: f64) -> Result<Self, DataError> {
        if spatial_points < 2 || timesteps < 2 {
            return Err(DataError::Invalid(format!(
                "grid needs at least 2 points per axis, got {spatial_points}×{timesteps}"
            )));
        }
        if !(x_max > 0.0 && t_max > 0.0) {
            return Err(DataError::Invalid("grid extents must be positive".into()));
        }
        Ok(Self {
            spatial_points,
            timesteps,
            x_max,
            t_max,
        })
    }

    pub fn dx(&self) -> f64 {
        self.x_max / self.spatial_points as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.timesteps as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

/// Values on a grid, stored `sites × steps` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    sites: usize,
    steps: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(sites: usize, steps: usize, values: Vec<f64>) -> Result<Self, DataError> {
        if values.len() != sites * steps {
            return Err(DataError::Invalid(format!(
                "field {sites}×{steps} needs {} values, got {}",
                sites * steps,
                values.len()
            )));
        }
        Ok(Self { sites, steps, values })
    }

    pub fn from_fn(sites: usize, steps: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(sites * steps);
        for s in 0..sites {
            for n in 0..steps {
                values.push(f(s, n));
            }
        }
        Self { sites, steps, values }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, site: usize, step: usize) -> f64 {
        self.values[site * self.steps + step]
    }

    pub fn frame(&self, step: usize) -> Vec<f64> {
        (0..self.sites).map(|s| self.at(s, step)).collect()
    }
}

/// Sampling ranges for unspecified generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub amplitude: (f64, f64),
    pub wavenumber: (f64, f64),
    pub frequency: (f64, f64),
    pub natural_frequency: (f64, f64),
    pub output_amplitude: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            amplitude: (0.5, 1.5),
            wavenumber: (0.5, 3.0),
            frequency: (0.5, 3.0),
            natural_frequency: (0.5, 2.0),
            output_amplitude: (0.5, 1.5),
        }
    }
}

/// `S1(x,t) = Σ A_i sin(k_i x − ω_i t + φ_i)`, optionally with additive noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct S1Params {
    pub amplitudes: Vec<f64>,
    pub wavenumbers: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    pub noise_std: f64,
}

impl S1Params {
    pub fn sample(components: usize, ranges: &ParamRanges, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |(lo, hi): (f64, f64)| -> Vec<f64> { (0..components).map(|_| rng.random_range(lo..hi)).collect() };
        let amplitudes = draw(ranges.amplitude);
        let wavenumbers = draw(ranges.wavenumber);
        let frequencies = draw(ranges.frequency);
        let phases = draw((0.0, TAU));
        Self {
            amplitudes,
            wavenumbers,
            frequencies,
            phases,
            noise_std: 0.0,
        }
    }

    pub fn components(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.amplitudes.len();
        if n == 0 {
            return Err(DataError::Invalid("S1 needs at least one component".into()));
        }
        if self.wavenumbers.len() != n || self.frequencies.len() != n || self.phases.len() != n {
            return Err(DataError::Invalid("S1 parameter vectors differ in length".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(DataError::Invalid("S1 noise std must be non-negative".into()));
        }
        Ok(())
    }

    /// Phase `ψ_i(x,t) = k_i x − ω_i t + φ_i`.
    pub fn phase(&self, i: usize, x: f64, t: f64) -> f64 {
        self.wavenumbers[i] * x - self.frequencies[i] * t + self.phases[i]
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        (0..self.components()).map(|i| self.amplitudes[i] * self.phase(i, x, t).sin()).sum()
    }
}

/// Phase oscillators driven by the S1 phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KuramotoParams {
    pub natural_frequencies: Vec<f64>,
    pub coupling: f64,
    pub amplitudes: Vec<f64>,
    pub initial_phases: Vec<f64>,
    pub dt: f64,
}

impl KuramotoParams {
    pub fn sample(oscillators: usize, coupling: f64, dt: f64, ranges: &ParamRanges, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |(lo, hi): (f64, f64)| -> Vec<f64> { (0..oscillators).map(|_| rng.random_range(lo..hi)).collect() };
        let natural_frequencies = draw(ranges.natural_frequency);
        let amplitudes = draw(ranges.output_amplitude);
        let initial_phases = draw((0.0, TAU));
        Self {
            natural_frequencies,
            coupling,
            amplitudes,
            initial_phases,
            dt,
        }
    }

    pub fn oscillators(&self) -> usize {
        self.natural_frequencies.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let m = self.natural_frequencies.len();
        if m == 0 {
            return Err(DataError::Invalid("Kuramoto needs at least one oscillator".into()));
        }
        if self.amplitudes.len() != m || self.initial_phases.len() != m {
            return Err(DataError::Invalid("Kuramoto parameter vectors differ in length".into()));
        }
        if !(self.coupling >= 0.0) {
            return Err(DataError::Invalid("coupling must be non-negative".into()));
        }
        if !(self.dt > 0.0) {
            return Err(DataError::NonPositiveStep(self.dt));
        }
        Ok(())
    }
}

/// Evaluates the S1 field on `grid`. Noise, when enabled, is drawn from a
/// stream derived from `seed`.
pub fn gen_s1(params: &S1Params, grid: &Grid, seed: u64) -> Result<Field, DataError> {
    params.validate()?;
    let mut field = Field::from_fn(grid.spatial_points, grid.timesteps, |s, n| params.value(grid.x(s), grid.t(n)));
    if params.noise_std > 0.0 {
        let mut rng = rng_for(seed, tags::FIELD_NOISE, 0);
        let normal = Normal::new(0.0, params.noise_std).expect("validated std");
        for v in &mut field.values {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(field)
}

fn substeps(kp: &KuramotoParams, grid: &Grid) -> Result<usize, DataError> {
    let ratio = grid.dt() / kp.dt;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(DataError::StepMismatch {
            dt: kp.dt,
            spacing: grid.dt(),
        });
    }
    Ok(rounded as usize)
}

/// Oscillator phases `θ_j(x_s, t_n)`, one field per oscillator.
pub fn kuramoto_phases(kp: &KuramotoParams, s1: &S1Params, grid: &Grid, integrator: Integrator) -> Result<Vec<Field>, DataError> {
    kp.validate()?;
    s1.validate()?;
    let sub = substeps(kp, grid)?;
    let m = kp.oscillators();
    let n_drive = s1.components() as f64;
    let h = kp.dt;
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; grid.spatial_points * grid.timesteps]; m];
    let mut theta = vec![0.0; m];
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut tmp = vec![0.0; m];

    let rhs = |x: f64, t: f64, th: &[f64], out: &mut [f64]| {
        for (j, o) in out.iter_mut().enumerate() {
            let mut drive = 0.0;
            for i in 0..s1.components() {
                drive += (s1.phase(i, x, t) - th[j]).sin();
            }
            *o = kp.natural_frequencies[j] + kp.coupling / n_drive * drive;
        }
    };

    for s in 0..grid.spatial_points {
        let x = grid.x(s);
        theta.copy_from_slice(&kp.initial_phases);
        for n in 0..grid.timesteps {
            for j in 0..m {
                out[j][s * grid.timesteps + n] = theta[j];
            }
            if n + 1 == grid.timesteps {
                break;
            }
            let t_n = grid.t(n);
            for k in 0..sub {
                let t = t_n + k as f64 * h;
                match integrator {
                    Integrator::Euler => {
                        rhs(x, t, &theta, &mut k1);
                        for j in 0..m {
                            theta[j] += h * k1[j];
                        }
                    }
                    Integrator::Rk4 => {
                        rhs(x, t, &theta, &mut k1);
                        for j in 0..m {
                            tmp[j] = theta[j] + 0.5 * h * k1[j];
                        }
                        rhs(x, t + 0.5 * h, &tmp, &mut k2);
                        for j in 0..m {
                            tmp[j] = theta[j] + 0.5 * h * k2[j];
                        }
                        rhs(x, t + 0.5 * h, &tmp, &mut k3);
                        for j in 0..m {
                            tmp[j] = theta[j] + h * k3[j];
                        }
                        rhs(x, t + h, &tmp, &mut k4);
                        for j in 0..m {
                            theta[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                        }
                    }
                }
            }
        }
    }
    Ok(out
        .into_iter()
        .map(|values| Field {
            sites: grid.spatial_points,
            steps: grid.timesteps,
            values,
        })
        .collect())
}

/// `S2(x,t) = Σ B_j sin θ_j(x,t)`.
pub fn gen_s2_kuramoto(kp: &KuramotoParams, s1: &S1Params, grid: &Grid, integrator: Integrator) -> Result<Field, DataError> {
    let phases = kuramoto_phases(kp, s1, grid, integrator)?;
    let len = grid.spatial_points * grid.timesteps;
    let mut values = vec![0.0; len];
    for (theta, b) in phases.iter().zip(&kp.amplitudes) {
        for (v, th) in values.iter_mut().zip(theta.values()) {
            *v += b * th.sin();
        }
    }
    Field::new(grid.spatial_points, grid.timesteps, values)
}

/// `1 − |mean_j exp(iθ_j)|`.
pub fn circular_variance(phases: &[f64]) -> f64 {
    if phases.is_empty() {
        return 0.0;
    }
    let n = phases.len() as f64;
    let c = phases.iter().map(|p| p.cos()).sum::<f64>() / n;
    let s = phases.iter().map(|p| p.sin()).sum::<f64>() / n;
    1.0 - c.hypot(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::f64::consts::FRAC_PI_2;

    fn grid() -> Grid {
        Grid::new(100, 500, 10.0, 50.0).unwrap()
    }

    fn single(a: f64, k: f64, w: f64, phi: f64) -> S1Params {
        S1Params {
            amplitudes: vec![a],
            wavenumbers: vec![k],
            frequencies: vec![w],
            phases: vec![phi],
            noise_std: 0.0,
        }
    }

    #[test]
    fn grid_spacing_is_a_tenth() {
        let g = grid();
        assert_eq!(g.dt(), 0.1);
        assert_eq!(g.dx(), 0.1);
    }

    #[test]
    fn zero_amplitudes_give_zero_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = S1Params::sample(3, &ParamRanges::default(), &mut rng);
        p.amplitudes = vec![0.0; 3];
        let f = gen_s1(&p, &grid(), 0).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_component() {
        let f = gen_s1(&single(1.0, 0.0, 0.0, FRAC_PI_2), &grid(), 0).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn s1_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = S1Params::sample(3, &ParamRanges::default(), &mut rng);
        let g = grid();
        let f = gen_s1(&p, &g, 0).unwrap();
        assert_eq!((f.sites(), f.steps()), (100, 500));
        let (s, n) = (37, 211);
        let (x, t) = (g.x(s), g.t(n));
        let want: f64 = (0..3).map(|i| p.amplitudes[i] * (p.wavenumbers[i] * x - p.frequencies[i] * t + p.phases[i]).sin()).sum();
        assert_eq!(f.at(s, n), want);
    }

    #[test]
    fn noise_is_seeded() {
        let mut p = single(1.0, 1.0, 1.0, 0.0);
        p.noise_std = 0.1;
        let a = gen_s1(&p, &grid(), 3).unwrap();
        let b = gen_s1(&p, &grid(), 3).unwrap();
        let c = gen_s1(&p, &grid(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_euler_step_by_hand() {
        let g = Grid::new(2, 2, 1.0, 0.2).unwrap();
        let s1 = single(1.0, 0.0, 0.0, FRAC_PI_2);
        let kp = KuramotoParams {
            natural_frequencies: vec![1.0],
            coupling: 2.5,
            amplitudes: vec![1.0],
            initial_phases: vec![0.0],
            dt: 0.1,
        };
        let th = kuramoto_phases(&kp, &s1, &g, Integrator::Euler).unwrap();
        assert!((th[0].at(0, 1) - 0.35).abs() < 1e-15);
    }

    #[test]
    fn uncoupled_phases_advance_linearly() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s1 = S1Params::sample(3, &ParamRanges::default(), &mut rng);
        let kp = KuramotoParams::sample(2, 0.0, g.dt(), &ParamRanges::default(), &mut rng);
        let th = kuramoto_phases(&kp, &s1, &g, Integrator::Euler).unwrap();
        for (j, f) in th.iter().enumerate() {
            for s in [0, 50, 99] {
                for n in [0, 1, 250, 499] {
                    let want = kp.initial_phases[j] + kp.natural_frequencies[j] * g.t(n);
                    assert!((f.at(s, n) - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rk4_agrees_with_fine_euler() {
        let g = Grid::new(3, 50, 10.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s1 = S1Params::sample(2, &ParamRanges::default(), &mut rng);
        let mut kp = KuramotoParams::sample(2, 2.5, 0.1, &ParamRanges::default(), &mut rng);
        let rk = kuramoto_phases(&kp, &s1, &g, Integrator::Rk4).unwrap();
        kp.dt = 0.0001;
        let eu = kuramoto_phases(&kp, &s1, &g, Integrator::Euler).unwrap();
        for (a, b) in rk.iter().zip(&eu) {
            let err = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 5e-3, "rk4 vs euler {err}");
        }
    }

    #[test]
    fn strong_coupling_synchronizes() {
        let g = Grid::new(4, 200, 10.0, 20.0).unwrap();
        let s1 = single(1.0, 0.7, 1.3, 0.2);
        let base = KuramotoParams {
            natural_frequencies: vec![1.3; 4],
            coupling: 0.0,
            amplitudes: vec![1.0; 4],
            initial_phases: vec![0.0, 1.5, 3.0, 4.5],
            dt: 0.001,
        };
        let strong = KuramotoParams { coupling: 60.0, ..base.clone() };
        let last = g.timesteps - 1;
        for s in 0..g.spatial_points {
            let spread = |kp: &KuramotoParams| {
                let th = kuramoto_phases(kp, &s1, &g, Integrator::Euler).unwrap();
                circular_variance(&th.iter().map(|f| f.at(s, last)).collect::<Vec<_>>())
            };
            assert!(spread(&strong) < spread(&base));
        }
    }

    #[test]
    fn step_must_divide_spacing() {
        let g = grid();
        let s1 = single(1.0, 1.0, 1.0, 0.0);
        let mut kp = KuramotoParams {
            natural_frequencies: vec![1.0],
            coupling: 1.0,
            amplitudes: vec![1.0],
            initial_phases: vec![0.0],
            dt: 0.03,
        };
        assert!(matches!(kuramoto_phases(&kp, &s1, &g, Integrator::Euler), Err(DataError::StepMismatch { .. })));
        kp.dt = 0.0;
        assert!(matches!(kuramoto_phases(&kp, &s1, &g, Integrator::Euler), Err(DataError::NonPositiveStep(_))));
        kp.dt = 0.025;
        assert!(kuramoto_phases(&kp, &s1, &g, Integrator::Euler).is_ok());
    }

    #[test]
    fn circular_variance_bounds() {
        assert!(circular_variance(&[0.3, 0.3, 0.3]).abs() < 1e-15);
        assert!((circular_variance(&[0.0, std::f64::consts::PI]) - 1.0).abs() < 1e-15);
    }
}
