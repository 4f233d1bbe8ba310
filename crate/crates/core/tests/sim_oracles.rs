mod common;

use std::f64::consts::PI;

use common::simulator_moments;
use fofpls::basis::Grid;
use fofpls::sim::{
    generate_response, make_predictors, replicate_seed, simulate, Setting, SimConfig,
};
use fofpls::FunctionalSample;
use nalgebra::DMatrix;

type Beta = (usize, fn(f64, f64) -> f64);
type Gamma = (usize, usize, fn(f64, f64, f64) -> f64);

fn setting_one() -> (Vec<Beta>, Vec<Gamma>) {
    (
        vec![
            (2, |s, t| {
                (-3.0 * (s - 1.0) * (s - 1.0) - 5.0 * (t - 0.5) * (t - 0.5)).exp()
            }),
            (3, |s, t| {
                let g = (-5.0 * (t - 0.5) * (t - 0.5)).exp();
                g * ((-5.0 * (s - 0.5) * (s - 0.5)).exp()
                    + 8.0 * (-5.0 * (s - 1.5) * (s - 1.5)).exp())
            }),
            (4, |s, t| (1.5 * PI * s).sin() * (PI * t).sin()),
            (5, |s, t| (s * t).sqrt()),
        ],
        vec![
            (2, 2, |s, r, t| 5.0 * s * r * t.sqrt()),
            (3, 4, |s, r, t| {
                5.0 * (PI * s).cos() * (2.0 * PI * r).sin() * (2.0 * PI * t).cos()
            }),
            (4, 5, |s, r, t| 0.5 * (s + 2.0 * r - t).exp()),
        ],
    )
}

fn setting_two() -> (Vec<Beta>, Vec<Gamma>) {
    (
        vec![
            (1, |s, t| (s - 2.0 * t) * (s - 2.0 * t) / 3.0),
            (2, |s, t| {
                2.0 * (1.0 + s).ln() * (1.0 + s).ln() * (2.0 * PI * (t - 0.5)).sin()
            }),
            (4, |s, t| ((1.0 - s).cos() + t.sqrt()) / 3.0),
            (5, |s, t| (1.0 + s) * (1.0 + s) / (3.0 * (1.0 + t * t))),
        ],
        vec![
            (1, 1, |s, r, t| 2.0 * (s + r) * t * t),
            (1, 2, |s, r, t| 0.01 * (s * s - r * r * r + t)),
            (1, 5, |s, r, t| 0.01 * (2.0 * s - r + 3.0 * t).exp()),
            (2, 4, |s, r, t| 0.01 * (2.0 * s - r + 3.0 * t)),
            (4, 5, |s, _r, t| 0.01 * (1.0 + 2.0 * s).ln() / (1.0 + t)),
            (5, 5, |s, r, t| (PI * (s + r)).cos() + 3.0 * t.sqrt()),
        ],
    )
}

/// Direct double/triple trapezoid sums over the grid, one curve at a time.
fn brute_force(x: &[DMatrix<f64>], grid: &Grid, effects: &(Vec<Beta>, Vec<Gamma>)) -> DMatrix<f64> {
    let p = grid.points();
    let l = p.len();
    let w: Vec<f64> = (0..l)
        .map(|j| {
            if j == 0 || j == l - 1 {
                0.5 / (l - 1) as f64
            } else {
                1.0 / (l - 1) as f64
            }
        })
        .collect();
    let n = x[0].nrows();
    DMatrix::from_fn(n, l, |i, k| {
        let t = p[k];
        let mut y = 0.0;
        for (m, beta) in &effects.0 {
            for a in 0..l {
                y += w[a] * x[m - 1][(i, a)] * beta(p[a], t);
            }
        }
        for (m, q, gamma) in &effects.1 {
            for a in 0..l {
                for b in 0..l {
                    y += w[a] * w[b] * x[m - 1][(i, a)] * x[q - 1][(i, b)] * gamma(p[a], p[b], t);
                }
            }
        }
        y
    })
}

fn quiet(setting: Setting, n: usize, seed: u64) -> SimConfig {
    SimConfig {
        setting,
        n_curves: n,
        seed,
        noise_sd_eps: 0.0,
        ..SimConfig::default()
    }
}

#[test]
fn response_matches_brute_force_quadrature() {
    for (setting, effects) in [(Setting::One, setting_one()), (Setting::Two, setting_two())] {
        let cfg = quiet(setting, 3, 17);
        let data = simulate(&cfg).unwrap();
        let x: Vec<DMatrix<f64>> = data.x_true.iter().map(|s| s.values().clone()).collect();
        let oracle = brute_force(&x, data.y_signal.grid(), &effects);
        let diff = (&oracle - data.y_signal.values()).amax();
        assert!(
            diff < 1e-6 * oracle.amax().max(1.0),
            "setting {setting}: {diff}"
        );
        assert_eq!(data.y_signal.values(), data.y_observed.values());
    }
}

#[test]
fn constant_second_predictor_gives_closed_form_sums() {
    let grid = Grid::uniform(100).unwrap();
    let mut xs = Vec::new();
    for m in 1..=5 {
        let v = if m == 2 { 1.0 } else { 0.0 };
        xs.push(
            FunctionalSample::new(
                grid.clone(),
                DMatrix::from_element(1, 100, v),
                format!("x{m}"),
            )
            .unwrap(),
        );
    }
    let y = generate_response(&xs, &quiet(Setting::One, 1, 0))
        .unwrap()
        .signal;
    let p = grid.points();
    let w = grid.trapezoid_weights();
    for k in 0..100 {
        let t = p[k];
        let beta: f64 = (0..100)
            .map(|a| w[a] * (-3.0 * (p[a] - 1.0).powi(2) - 5.0 * (t - 0.5).powi(2)).exp())
            .sum();
        // ∫∫ 5 s r √t = 5 √t (∫s)², and the trapezoid rule integrates s exactly
        let gamma = 5.0 * t.sqrt() * 0.25;
        assert!((y.values()[(0, k)] - beta - gamma).abs() < 1e-6);
    }
}

#[test]
fn zero_predictors_give_centered_noise() {
    let grid = Grid::uniform(100).unwrap();
    let xs: Vec<FunctionalSample> = (1..=5)
        .map(|m| {
            FunctionalSample::new(grid.clone(), DMatrix::zeros(2000, 100), format!("x{m}")).unwrap()
        })
        .collect();
    let cfg = SimConfig {
        n_curves: 2000,
        ..SimConfig::default()
    };
    let r = generate_response(&xs, &cfg).unwrap();
    assert_eq!(r.signal.values().amax(), 0.0);
    let v = r.observed.values();
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 4.0).abs() < 0.05, "var {var}");
}

#[test]
fn lag_four_moments() {
    let (vars, cors) = simulator_moments(10_000, 3);
    for v in vars {
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }
    for c in cors {
        assert!((c - 0.8).abs() < 0.05, "correlation {c}");
    }
}

#[test]
fn predictor_noise_has_requested_scale() {
    let cfg = SimConfig {
        n_curves: 500,
        ..SimConfig::default()
    };
    let p = make_predictors(&cfg).unwrap();
    let d = p.noisy[0].values() - p.truth[0].values();
    let var = d.iter().map(|z| z * z).sum::<f64>() / d.len() as f64;
    assert!((var - 4.0).abs() < 0.1, "var {var}");
}

#[test]
fn same_seed_same_data_and_different_seed_different_data() {
    let a = simulate(&SimConfig {
        n_curves: 20,
        seed: 5,
        ..SimConfig::default()
    })
    .unwrap();
    let b = simulate(&SimConfig {
        n_curves: 20,
        seed: 5,
        ..SimConfig::default()
    })
    .unwrap();
    let c = simulate(&SimConfig {
        n_curves: 20,
        seed: 6,
        ..SimConfig::default()
    })
    .unwrap();
    assert_eq!(a.y_observed.values(), b.y_observed.values());
    for m in 0..5 {
        assert_eq!(a.x_noisy[m].values(), b.x_noisy[m].values());
    }
    assert_ne!(a.y_observed.values(), c.y_observed.values());
    assert_ne!(replicate_seed(0, 0), replicate_seed(0, 1));
}

#[test]
fn response_noise_does_not_disturb_predictors() {
    let a = simulate(&SimConfig {
        n_curves: 10,
        noise_sd_eps: 0.0,
        ..SimConfig::default()
    })
    .unwrap();
    let b = simulate(&SimConfig {
        n_curves: 10,
        noise_sd_eps: 2.0,
        ..SimConfig::default()
    })
    .unwrap();
    assert_eq!(a.x_noisy[3].values(), b.x_noisy[3].values());
    assert_eq!(a.y_signal.values(), b.y_signal.values());
}
