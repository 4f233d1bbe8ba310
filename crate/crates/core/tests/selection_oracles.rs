mod common;

use common::*;
use fofpls::basis::Grid;
use fofpls::design::{Term, TermSet};
use fofpls::selection::{
    forward_select_interactions, forward_select_main, interaction_pool, select_basis_counts,
    select_components, SelectionTrace,
};
use fofpls::sim::{make_predictors, SimConfig};
use fofpls::{FofError, FunctionalSample};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn accepted(trace: &SelectionTrace) -> Vec<Term> {
    trace
        .steps
        .iter()
        .filter(|s| s.accepted)
        .map(|s| s.term)
        .collect()
}

/// Y(t) = Σ ∫ X_m(s) s t^k ds over the listed predictors, plus white noise.
fn linear_response(
    x: &[FunctionalSample],
    which: &[usize],
    noise: f64,
    seed: u64,
) -> FunctionalSample {
    let grid = x[0].grid().clone();
    let p = grid.points();
    let w = grid.trapezoid_weights();
    let n = x[0].n_curves();
    let mut r = rng(seed);
    let mut y = normal_matrix(n, p.len(), &mut r) * noise;
    for (k, &m) in which.iter().enumerate() {
        let beta = DMatrix::from_fn(p.len(), p.len(), |a, b| {
            w[a] * (1.0 + p[a]) * p[b].powi(k as i32)
        });
        y += x[m - 1].values() * beta;
    }
    FunctionalSample::new(grid, y, "y").unwrap()
}

fn predictors(n: usize, lag: usize, seed: u64, m: usize) -> Vec<FunctionalSample> {
    let cfg = SimConfig {
        n_curves: n,
        lag,
        seed,
        noise_sd_u: 0.0,
        ..SimConfig::default()
    };
    make_predictors(&cfg)
        .unwrap()
        .truth
        .into_iter()
        .take(m)
        .collect()
}

#[test]
fn single_predictor_trace_has_one_step() {
    let x = predictors(60, 0, 1, 1);
    let y = linear_response(&x, &[1], 0.1, 2);
    let b = basis(6, x[0].grid());
    let trace = forward_select_main(&y, &x, &b, &b, 4).unwrap();
    assert_eq!(trace.steps.len(), 1);
    let step = &trace.steps[0];
    assert_eq!(step.accepted, step.mse < trace.start_mse);
    assert!(step.accepted);
    let norm = fofpls::CurveNorm::trapezoid(y.grid());
    let mean = y.mean_curve();
    let flat = DMatrix::from_fn(60, 100, |_, j| mean[j]);
    let var = fofpls::mse(y.values(), &flat, &norm).unwrap();
    assert!((trace.start_mse - var).abs() < 1e-12 * var);
}

#[test]
fn response_from_second_predictor_selects_it_first() {
    let x = predictors(80, 0, 3, 3);
    let y = linear_response(&x[1..2], &[1], 0.0, 0);
    let b = basis(8, x[0].grid());
    let trace = forward_select_main(&y, &x, &b, &b, 8).unwrap();
    assert_eq!(accepted(&trace)[0], Term::Main(2));
}

#[test]
fn identical_predictors_keep_the_lower_index() {
    let base = predictors(60, 0, 4, 1).remove(0);
    let twin = FunctionalSample::new(base.grid().clone(), base.values().clone(), "x2").unwrap();
    let x = vec![base, twin];
    let y = linear_response(&x, &[1], 0.2, 9);
    let b = basis(6, x[0].grid());
    let trace = forward_select_main(&y, &x, &b, &b, 4).unwrap();
    assert_eq!(trace.final_terms.main(), &[1]);
    let second: Vec<_> = trace
        .steps
        .iter()
        .filter(|s| s.term == Term::Main(2))
        .collect();
    assert!(second.iter().all(|s| !s.accepted));
}

#[test]
fn interaction_pool_and_errors() {
    assert_eq!(interaction_pool(&[1]), vec![Term::Inter(1, 1)]);
    let x = predictors(20, 0, 1, 2);
    let y = linear_response(&x, &[1], 0.1, 1);
    let b = basis(5, x[0].grid());
    assert!(matches!(
        forward_select_interactions(&y, &x, &TermSet::default(), &b, &b, 3),
        Err(FofError::NothingToExtend)
    ));
    assert!(forward_select_main(&y, &[], &b, &b, 3).is_err());
    let one = TermSet::new(vec![1], vec![]).unwrap();
    let trace = forward_select_interactions(&y, &x, &one, &b, &b, 3).unwrap();
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.steps[0].term, Term::Inter(1, 1));
}

#[test]
fn quadratic_signal_selects_its_pair_first() {
    let x = predictors(100, 0, 6, 3);
    let grid = x[0].grid().clone();
    let p = grid.points();
    let w = grid.trapezoid_weights();
    let lin = linear_response(&x[1..2], &[1], 0.1, 12);
    let a: Vec<f64> = (0..100)
        .map(|i| (0..100).map(|s| w[s] * p[s] * x[1].values()[(i, s)]).sum())
        .collect();
    let y = DMatrix::from_fn(100, 100, |i, k| {
        lin.values()[(i, k)] + 5.0 * a[i] * a[i] * p[k].sqrt()
    });
    let y = FunctionalSample::new(grid.clone(), y, "y").unwrap();
    let b = basis(8, &grid);
    let mains = TermSet::new(vec![2, 3], vec![]).unwrap();
    let trace = forward_select_interactions(&y, &x, &mains, &b, &b, 8).unwrap();
    assert_eq!(accepted(&trace).first(), Some(&Term::Inter(2, 2)));
}

#[test]
fn pure_linear_data_rarely_accepts_pairs() {
    let reps = 50;
    let mut clean = 0;
    for rep in 0..reps {
        let cfg = SimConfig {
            n_curves: 100,
            seed: 1000 + rep,
            ..SimConfig::default()
        };
        let pr = make_predictors(&cfg).unwrap();
        let y = linear_response(&pr.truth, &[2, 3, 4, 5], 0.5, rep);
        let b = basis(8, y.grid());
        let mains = TermSet::new(vec![2, 3, 4, 5], vec![]).unwrap();
        let trace = forward_select_interactions(&y, &pr.truth, &mains, &b, &b, 8).unwrap();
        if trace.final_terms.inter().is_empty() {
            clean += 1;
        }
    }
    println!("no pair accepted in {clean}/{reps} replicates");
    assert!(
        clean as f64 >= 0.9 * reps as f64,
        "no pair accepted in only {clean}/{reps} replicates"
    );
}

fn low_rank(n: usize, seed: u64) -> (FunctionalSample, Vec<FunctionalSample>, fofpls::BasisSystem) {
    let grid = Grid::uniform(100).unwrap();
    let b = basis(6, &grid);
    let mut r = rng(seed);
    let t = normal_matrix(n, 2, &mut r);
    let x: Vec<FunctionalSample> = (0..2)
        .map(|m| {
            let a = &t * normal_matrix(2, 6, &mut r) + normal_matrix(n, 6, &mut r) * 0.01;
            spline_sample(a, &b, &format!("x{}", m + 1)).sample
        })
        .collect();
    let c = &t * normal_matrix(2, 6, &mut r) + normal_matrix(n, 6, &mut r) * 0.05;
    (spline_sample(c, &b, "y").sample, x, b)
}

#[test]
fn rank_two_data_needs_two_components() {
    let terms = TermSet::main_effects(2);
    let mut hits = 0;
    for seed in 0..10 {
        let (y, x, b) = low_rank(80, seed);
        let sel = select_components(&y, &x, &terms, &b, &b, 8, seed).unwrap();
        if (2..=3).contains(&sel.h_opt) {
            hits += 1;
        }
        assert!(sel.mspe_path[1] < 0.2 * sel.mspe_path[0]);
        let again = select_components(&y, &x, &terms, &b, &b, 8, seed).unwrap();
        assert_eq!(sel, again);
        assert_eq!(
            select_components(&y, &x, &terms, &b, &b, 1, seed)
                .unwrap()
                .h_opt,
            1
        );
    }
    assert!(hits >= 9, "h_opt in {{2, 3}} for {hits}/10 datasets");
}

#[test]
fn too_few_curves_to_split() {
    let (y, x, b) = low_rank(3, 0);
    assert!(matches!(
        select_components(&y, &x, &TermSet::main_effects(2), &b, &b, 2, 0),
        Err(FofError::InsufficientData(_))
    ));
}

#[test]
fn basis_search_edge_cases() {
    let (y, x, _) = low_rank(40, 2);
    let terms = TermSet::main_effects(2);
    let one = select_basis_counts(&y, &x, &terms, &[5], &[7], 4, 3).unwrap();
    assert_eq!((one.k_y, one.k_x), (5, 7));
    let a = select_basis_counts(&y, &x, &terms, &[4, 6], &[4, 6, 8], 4, 3).unwrap();
    let b = select_basis_counts(&y, &x, &terms, &[6, 4], &[8, 6, 4], 4, 3).unwrap();
    assert_eq!(a, b);
    assert!(select_basis_counts(&y, &x, &terms, &[], &[4], 4, 3).is_err());
    assert!(select_basis_counts(&y, &x, &terms, &[4], &[200], 4, 3).is_err());
}

#[test]
fn spline_generated_predictors_get_at_least_their_basis_size() {
    let grid = Grid::uniform(100).unwrap();
    let b6 = basis(6, &grid);
    let reps = 20;
    let mut ok = 0;
    for seed in 0..reps {
        let mut r = rng(seed);
        let x = vec![spline_sample(normal_matrix(60, 6, &mut r), &b6, "x1").sample];
        let y = linear_response(&x, &[1], 0.2, seed + 100);
        let choice = select_basis_counts(
            &y,
            &x,
            &TermSet::main_effects(1),
            &[4, 6, 8],
            &[4, 6, 8, 10],
            4,
            8,
        )
        .unwrap();
        if choice.k_x >= 6 {
            ok += 1;
        }
    }
    assert!(ok as f64 >= 0.9 * reps as f64, "K_X >= 6 in {ok}/{reps}");
}

#[test]
fn selection_follows_predictor_permutation() {
    let x = predictors(80, 1, 8, 4);
    let y = linear_response(&x, &[1, 3], 0.3, 5);
    let b = basis(6, x[0].grid());
    let base = forward_select_main(&y, &x, &b, &b, 6).unwrap();
    let order = [2usize, 0, 3, 1];
    let permuted: Vec<FunctionalSample> = order.iter().map(|&i| x[i].clone()).collect();
    let other = forward_select_main(&y, &permuted, &b, &b, 6).unwrap();
    let mut mapped: Vec<usize> = other
        .final_terms
        .main()
        .iter()
        .map(|&m| order[m - 1] + 1)
        .collect();
    mapped.sort_unstable();
    let mut expect = base.final_terms.main().to_vec();
    expect.sort_unstable();
    assert_eq!(mapped, expect);
    assert!(
        (base.mse_path.last().unwrap() - other.mse_path.last().unwrap()).abs()
            < 1e-9 * base.start_mse
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn accepted_steps_strictly_reduce_mse(seed in 0u64..1000, noise in 0.05f64..1.0) {
        let x = predictors(40, 1, seed, 3);
        let y = linear_response(&x, &[2], noise, seed + 1);
        let b = basis(5, x[0].grid());
        let main = forward_select_main(&y, &x, &b, &b, 4).unwrap();
        let mut prev = main.start_mse;
        for m in &main.mse_path {
            prop_assert!(*m < prev);
            prev = *m;
        }
        prop_assert_eq!(main.mse_path.len(), main.final_terms.main().len());
        let inter = forward_select_interactions(&y, &x, &main.final_terms, &b, &b, 4).unwrap();
        let mut prev = inter.start_mse;
        for m in &inter.mse_path {
            prop_assert!(*m < prev);
            prev = *m;
        }
        prop_assert!(inter.start_mse <= main.mse_path.last().copied().unwrap_or(main.start_mse) * (1.0 + 1e-9));
    }
}
