//! Data-generating processes for the two simulation settings.
//!
//! Predictors are overlapping sums of squared-exponential Gaussian processes,
//! `X_m = Σ_{i=0}^{lag} V_{m+i} / √(lag+1)`, so that `lag` controls how many
//! latent processes neighbouring predictors share. Responses integrate the
//! predictors against fixed coefficient functions by trapezoid quadrature on
//! the data grid and add white noise.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::Grid;
use crate::design::{FunctionalSample, TermSet};
use crate::error::{FofError, Result};

pub mod benchmark;
pub use benchmark::*;

/// Number of simulated predictors.
pub const N_PREDICTORS: usize = 5;

const GP_JITTER: f64 = 1e-10;
const GP_SCALE: f64 = 100.0;

const PREDICTOR_STREAM: u64 = 0;
const RESPONSE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Setting {
    One,
    Two,
}

impl Setting {
    pub fn number(self) -> u8 {
        match self {
            Setting::One => 1,
            Setting::Two => 2,
        }
    }

    /// Terms used by the data-generating process.
    pub fn true_terms(self) -> TermSet {
        let (main, inter) = match self {
            Setting::One => (vec![2, 3, 4, 5], vec![(2, 2), (3, 4), (4, 5)]),
            Setting::Two => (
                vec![1, 2, 4, 5],
                vec![(1, 1), (1, 2), (1, 5), (2, 4), (4, 5), (5, 5)],
            ),
        };
        TermSet::new(main, inter).expect("static term sets are valid")
    }
}

impl TryFrom<u8> for Setting {
    type Error = FofError;
    fn try_from(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            other => Err(FofError::UnknownSetting(other)),
        }
    }
}

impl From<Setting> for u8 {
    fn from(s: Setting) -> u8 {
        s.number()
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub setting: Setting,
    pub lag: usize,
    pub n_curves: usize,
    pub grid_len: usize,
    pub noise_sd_eps: f64,
    pub noise_sd_u: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            setting: Setting::One,
            lag: 2,
            n_curves: 300,
            grid_len: 100,
            noise_sd_eps: 2.0,
            noise_sd_u: 2.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_curves == 0 {
            return Err(FofError::InvalidConfiguration(
                "n_curves must be >= 1".into(),
            ));
        }
        if self.grid_len < 2 {
            return Err(FofError::InvalidConfiguration(
                "grid_len must be >= 2".into(),
            ));
        }
        if !(self.noise_sd_eps >= 0.0 && self.noise_sd_u >= 0.0) {
            return Err(FofError::InvalidConfiguration(
                "noise standard deviations must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::uniform(self.grid_len)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// SplitMix64 finalizer; used to derive per-replicate seeds from a master seed.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `rep` under master seed `master`.
pub fn replicate_seed(master: u64, rep: usize) -> u64 {
    splitmix64(master ^ splitmix64(rep as u64))
}

/// Draws zero-mean GP paths with covariance exp(−100 (s − s')²) on a grid.
#[derive(Debug, Clone)]
pub struct GpSampler {
    factor: DMatrix<f64>,
}

impl GpSampler {
    pub fn new(grid: &Grid) -> Result<Self> {
        let p = grid.points();
        let l = p.len();
        let cov = DMatrix::from_fn(l, l, |i, j| {
            let d = p[i] - p[j];
            (-GP_SCALE * d * d).exp() + if i == j { GP_JITTER } else { 0.0 }
        });
        let eig = SymmetricEigen::new(cov);
        let lmax = eig.eigenvalues.max();
        let mut roots = eig.eigenvalues.clone();
        for v in roots.iter_mut() {
            if *v < -1e-8 * lmax {
                return Err(FofError::NumericalFailure(format!(
                    "GP covariance has eigenvalue {v:e}"
                )));
            }
            *v = v.max(0.0).sqrt();
        }
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self { factor })
    }

    /// `n`×L matrix of independent draws.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let l = self.factor.nrows();
        let z = DMatrix::from_row_iterator(
            n,
            l,
            (0..n * l).map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z
            }),
        );
        z * self.factor.transpose()
    }
}

/// `n` GP draws on `grid` from a seeded generator.
pub fn sample_gp(n: usize, grid: &Grid, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(GpSampler::new(grid)?.sample(n, &mut rng))
}

/// Noise-free predictors and their noisy observed copies.
#[derive(Debug, Clone)]
pub struct SimPredictors {
    pub truth: Vec<FunctionalSample>,
    pub noisy: Vec<FunctionalSample>,
}

pub fn make_predictors(config: &SimConfig) -> Result<SimPredictors> {
    config.validate()?;
    let grid = config.grid()?;
    let sampler = GpSampler::new(&grid)?;
    let mut rng = config.rng(PREDICTOR_STREAM);
    let latent: Vec<DMatrix<f64>> = (0..N_PREDICTORS + config.lag)
        .map(|_| sampler.sample(config.n_curves, &mut rng))
        .collect();
    let scale = 1.0 / ((config.lag + 1) as f64).sqrt();
    let mut truth = Vec::with_capacity(N_PREDICTORS);
    let mut noisy = Vec::with_capacity(N_PREDICTORS);
    for m in 0..N_PREDICTORS {
        let mut x = DMatrix::zeros(config.n_curves, grid.len());
        for v in &latent[m..=m + config.lag] {
            x += v;
        }
        x *= scale;
        let l = grid.len();
        let noise = DMatrix::from_row_iterator(
            config.n_curves,
            l,
            (0..config.n_curves * l).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                config.noise_sd_u * z
            }),
        );
        let label = format!("x{}", m + 1);
        noisy.push(FunctionalSample::new(
            grid.clone(),
            &x + noise,
            label.clone(),
        )?);
        truth.push(FunctionalSample::new(
            grid.clone(),
            x,
            format!("{label}_true"),
        )?);
    }
    Ok(SimPredictors { truth, noisy })
}

pub type Fn1 = fn(f64) -> f64;
pub type Fn2 = fn(f64, f64) -> f64;
pub type Fn3 = fn(f64, f64, f64) -> f64;

/// β_m(s, t).
#[derive(Clone, Copy)]
pub struct MainEffect {
    pub predictor: usize,
    pub beta: Fn2,
}

/// One product term f(s) g(r) h(t) of a separable decomposition.
#[derive(Clone, Copy)]
pub struct Separable {
    pub s: Fn1,
    pub r: Fn1,
    pub t: Fn1,
}

/// γ_mn(s, r, t) with an exact decomposition into separable products.
#[derive(Clone)]
pub struct InterEffect {
    pub pair: (usize, usize),
    pub gamma: Fn3,
    pub factors: Vec<Separable>,
}

#[derive(Clone)]
pub struct CoefficientSuite {
    pub main: Vec<MainEffect>,
    pub inter: Vec<InterEffect>,
}

fn sep(s: Fn1, r: Fn1, t: Fn1) -> Separable {
    Separable { s, r, t }
}

fn one(_: f64) -> f64 {
    1.0
}

pub fn coefficient_suite(setting: Setting) -> CoefficientSuite {
    use std::f64::consts::PI;
    match setting {
        Setting::One => CoefficientSuite {
            main: vec![
                MainEffect {
                    predictor: 2,
                    beta: |s, t| (-3.0 * (s - 1.0).powi(2) - 5.0 * (t - 0.5).powi(2)).exp(),
                },
                MainEffect {
                    predictor: 3,
                    beta: |s, t| {
                        (-5.0 * (s - 0.5).powi(2) - 5.0 * (t - 0.5).powi(2)).exp()
                            + 8.0 * (-5.0 * (s - 1.5).powi(2) - 5.0 * (t - 0.5).powi(2)).exp()
                    },
                },
                MainEffect {
                    predictor: 4,
                    beta: |s, t| (1.5 * PI * s).sin() * (PI * t).sin(),
                },
                MainEffect {
                    predictor: 5,
                    beta: |s, t| (s * t).sqrt(),
                },
            ],
            inter: vec![
                InterEffect {
                    pair: (2, 2),
                    gamma: |s, r, t| 5.0 * s * r * t.sqrt(),
                    factors: vec![sep(|s| 5.0 * s, |r| r, f64::sqrt)],
                },
                InterEffect {
                    pair: (3, 4),
                    gamma: |s, r, t| {
                        5.0 * (PI * s).cos() * (2.0 * PI * r).sin() * (2.0 * PI * t).cos()
                    },
                    factors: vec![sep(
                        |s| 5.0 * (PI * s).cos(),
                        |r| (2.0 * PI * r).sin(),
                        |t| (2.0 * PI * t).cos(),
                    )],
                },
                InterEffect {
                    pair: (4, 5),
                    gamma: |s, r, t| 0.5 * (s + 2.0 * r - t).exp(),
                    factors: vec![sep(|s| 0.5 * s.exp(), |r| (2.0 * r).exp(), |t| (-t).exp())],
                },
            ],
        },
        Setting::Two => CoefficientSuite {
            main: vec![
                MainEffect {
                    predictor: 1,
                    beta: |s, t| (s - 2.0 * t).powi(2) / 3.0,
                },
                MainEffect {
                    predictor: 2,
                    beta: |s, t| 2.0 * (1.0 + s).ln().powi(2) * (2.0 * PI * (t - 0.5)).sin(),
                },
                MainEffect {
                    predictor: 4,
                    beta: |s, t| ((1.0 - s).cos() + t.sqrt()) / 3.0,
                },
                MainEffect {
                    predictor: 5,
                    beta: |s, t| (1.0 + s).powi(2) / (3.0 * (1.0 + t * t)),
                },
            ],
            inter: vec![
                InterEffect {
                    pair: (1, 1),
                    gamma: |s, r, t| 2.0 * (s + r) * t * t,
                    factors: vec![
                        sep(|s| 2.0 * s, one, |t| t * t),
                        sep(|_| 2.0, |r| r, |t| t * t),
                    ],
                },
                InterEffect {
                    pair: (1, 2),
                    gamma: |s, r, t| 0.01 * (s * s - r.powi(3) + t),
                    factors: vec![
                        sep(|s| 0.01 * s * s, one, one),
                        sep(|_| -0.01, |r| r.powi(3), one),
                        sep(|_| 0.01, one, |t| t),
                    ],
                },
                InterEffect {
                    pair: (1, 5),
                    gamma: |s, r, t| 0.01 * (2.0 * s - r + 3.0 * t).exp(),
                    factors: vec![sep(
                        |s| 0.01 * (2.0 * s).exp(),
                        |r| (-r).exp(),
                        |t| (3.0 * t).exp(),
                    )],
                },
                InterEffect {
                    pair: (2, 4),
                    gamma: |s, r, t| 0.01 * (2.0 * s - r + 3.0 * t),
                    factors: vec![
                        sep(|s| 0.02 * s, one, one),
                        sep(|_| -0.01, |r| r, one),
                        sep(|_| 0.03, one, |t| t),
                    ],
                },
                InterEffect {
                    pair: (4, 5),
                    gamma: |s, _r, t| 0.01 * (1.0 + 2.0 * s).ln() / (1.0 + t),
                    factors: vec![sep(
                        |s| 0.01 * (1.0 + 2.0 * s).ln(),
                        one,
                        |t| 1.0 / (1.0 + t),
                    )],
                },
                InterEffect {
                    pair: (5, 5),
                    gamma: |s, r, t| (PI * (s + r)).cos() + 3.0 * t.sqrt(),
                    factors: vec![
                        sep(|s| (PI * s).cos(), |r| (PI * r).cos(), one),
                        sep(|s| -(PI * s).sin(), |r| (PI * r).sin(), one),
                        sep(|_| 3.0, one, f64::sqrt),
                    ],
                },
            ],
        },
    }
}

/// Noise-free responses Σ ∫X_m β_m + Σ ∫∫X_m X_n γ_mn by trapezoid quadrature.
pub fn response_signal(predictors: &[FunctionalSample], setting: Setting) -> Result<DMatrix<f64>> {
    if predictors.len() < N_PREDICTORS {
        return Err(FofError::InvalidInput(format!(
            "need {N_PREDICTORS} predictors, got {}",
            predictors.len()
        )));
    }
    let grid = predictors[0].grid();
    let n = predictors[0].n_curves();
    for x in predictors {
        if x.grid() != grid || x.n_curves() != n {
            return Err(FofError::GridMismatch(
                "simulated predictors must share one grid".into(),
            ));
        }
    }
    let pts = grid.points();
    let w = grid.trapezoid_weights();
    let l = pts.len();
    let weighted: Vec<DMatrix<f64>> = predictors
        .iter()
        .map(|x| {
            let mut v = x.values().clone();
            for (j, wj) in w.iter().enumerate() {
                v.column_mut(j).scale_mut(*wj);
            }
            v
        })
        .collect();

    let suite = coefficient_suite(setting);
    let mut y = DMatrix::zeros(n, l);
    for effect in &suite.main {
        let beta = DMatrix::from_fn(l, l, |p, q| (effect.beta)(pts[p], pts[q]));
        y += &weighted[effect.predictor - 1] * beta;
    }
    for effect in &suite.inter {
        let (m, q) = effect.pair;
        for f in &effect.factors {
            let fs = nalgebra::DVector::from_iterator(l, pts.iter().map(|&s| (f.s)(s)));
            let fr = nalgebra::DVector::from_iterator(l, pts.iter().map(|&r| (f.r)(r)));
            let a = &weighted[m - 1] * fs;
            let b = &weighted[q - 1] * fr;
            for i in 0..n {
                let ab = a[i] * b[i];
                for (k, &t) in pts.iter().enumerate() {
                    y[(i, k)] += ab * (f.t)(t);
                }
            }
        }
    }
    Ok(y)
}

/// Noise-free and observed responses.
#[derive(Debug, Clone)]
pub struct SimResponse {
    pub signal: FunctionalSample,
    pub observed: FunctionalSample,
}

pub fn generate_response(
    predictors_true: &[FunctionalSample],
    config: &SimConfig,
) -> Result<SimResponse> {
    config.validate()?;
    let signal = response_signal(predictors_true, config.setting)?;
    let grid = predictors_true[0].grid().clone();
    let mut rng = config.rng(RESPONSE_STREAM);
    let (n, l) = signal.shape();
    let noise = DMatrix::from_row_iterator(
        n,
        l,
        (0..n * l).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.noise_sd_eps * z
        }),
    );
    let observed = FunctionalSample::new(grid.clone(), &signal + noise, "y")?;
    let signal = FunctionalSample::new(grid, signal, "y_true")?;
    Ok(SimResponse { signal, observed })
}

/// One complete simulated dataset.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub config: SimConfig,
    pub x_true: Vec<FunctionalSample>,
    pub x_noisy: Vec<FunctionalSample>,
    pub y_signal: FunctionalSample,
    pub y_observed: FunctionalSample,
}

pub fn simulate(config: &SimConfig) -> Result<SimDataset> {
    let predictors = make_predictors(config)?;
    let response = generate_response(&predictors.truth, config)?;
    Ok(SimDataset {
        config: config.clone(),
        x_true: predictors.truth,
        x_noisy: predictors.noisy,
        y_signal: response.signal,
        y_observed: response.observed,
    })
}

impl SimDataset {
    /// Curves `rows` of every variable.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            config: self.config.clone(),
            x_true: self.x_true.iter().map(|x| x.select_rows(rows)).collect(),
            x_noisy: self.x_noisy.iter().map(|x| x.select_rows(rows)).collect(),
            y_signal: self.y_signal.select_rows(rows),
            y_observed: self.y_observed.select_rows(rows),
        }
    }
}

/// Model variants compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Main,
    Full,
    True,
    Selected,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Main => "main",
            ModelKind::Full => "full",
            ModelKind::True => "true",
            ModelKind::Selected => "selected",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = FofError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "main" => Ok(ModelKind::Main),
            "full" => Ok(ModelKind::Full),
            "true" => Ok(ModelKind::True),
            "selected" => Ok(ModelKind::Selected),
            other => Err(FofError::InvalidConfiguration(format!(
                "unknown model '{other}'"
            ))),
        }
    }
}
