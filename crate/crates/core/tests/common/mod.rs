#![allow(dead_code)]

use fofpls::basis::{BasisSpec, BasisSystem, Grid};
use fofpls::design::{FunctionalSample, TermSet};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    })
}

pub fn basis(k: usize, grid: &Grid) -> BasisSystem {
    BasisSystem::new(BasisSpec { k, order: 4 }, grid).unwrap()
}

/// Composite Simpson weights on `n` (odd) equally spaced points of [0, 1].
pub fn simpson(n: usize) -> (Grid, Vec<f64>) {
    assert!(n % 2 == 1);
    let h = 1.0 / (n - 1) as f64;
    let w = (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (Grid::uniform(n).unwrap(), w)
}

/// 4-point Gauss-Legendre on each interval between consecutive `breaks`, with
/// zero-weight endpoints so the nodes form a valid grid on [0, 1].
pub fn gauss_grid(breaks: &[f64]) -> (Grid, Vec<f64>) {
    let x = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    let w = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let mut pts = vec![0.0];
    let mut wts = vec![0.0];
    for ab in breaks.windows(2) {
        let (mid, half) = ((ab[0] + ab[1]) / 2.0, (ab[1] - ab[0]) / 2.0);
        for k in 0..4 {
            pts.push(mid + half * x[k]);
            wts.push(half * w[k]);
        }
    }
    pts.push(1.0);
    wts.push(0.0);
    (Grid::new(pts).unwrap(), wts)
}

/// Curves in the span of `basis`: values on the basis grid plus their coefficients.
pub struct SplineData {
    pub coefs: DMatrix<f64>,
    pub sample: FunctionalSample,
}

pub fn spline_sample(coefs: DMatrix<f64>, basis: &BasisSystem, label: &str) -> SplineData {
    let values = &coefs * basis.eval().transpose();
    let sample = FunctionalSample::new(basis.grid().clone(), values, label).unwrap();
    SplineData { coefs, sample }
}

/// In-span synthetic problem with two predictors and a response that mixes
/// linear and product effects.
pub struct InSpan {
    pub bx: BasisSystem,
    pub by: BasisSystem,
    pub x: Vec<SplineData>,
    pub y: SplineData,
}

pub fn in_span_problem(n: usize, kx: usize, ky: usize, seed: u64) -> InSpan {
    let grid = Grid::uniform(100).unwrap();
    let bx = basis(kx, &grid);
    let by = basis(ky, &grid);
    let mut r = rng(seed);
    let a1 = normal_matrix(n, kx, &mut r);
    let a2 = normal_matrix(n, kx, &mut r);
    let b1 = normal_matrix(kx, ky, &mut r);
    let b2 = normal_matrix(kx, ky, &mut r) * 0.5;
    let g = normal_matrix(kx * kx, ky, &mut r) * 0.1;
    let mut c = &a1 * &b1 + &a2 * &b2 + normal_matrix(n, ky, &mut r) * 0.3;
    for i in 0..n {
        let prod = DMatrix::from_fn(1, kx * kx, |_, idx| a1[(i, idx / kx)] * a2[(i, idx % kx)]);
        let add = prod * &g;
        for k in 0..ky {
            c[(i, k)] += add[(0, k)] + 1.0;
        }
    }
    InSpan {
        x: vec![spline_sample(a1, &bx, "x1"), spline_sample(a2, &bx, "x2")],
        y: spline_sample(c, &by, "y"),
        bx,
        by,
    }
}

impl InSpan {
    pub fn xs(&self) -> Vec<FunctionalSample> {
        self.x.iter().map(|d| d.sample.clone()).collect()
    }
}

fn center_rows(m: &mut DMatrix<f64>) {
    let mean = m.row_mean();
    for mut row in m.row_iter_mut() {
        row -= &mean;
    }
}

/// Discretized, quadrature-weighted predictor and response matrices on an
/// odd-sized Simpson grid: main effects contribute √w_p X_m(s_p), product terms
/// √(w_p w_q) X_m(s_p) X_n(s_q); every column is centered.
pub fn quadrature_space(
    p: &InSpan,
    terms: &TermSet,
    n_quad: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (grid, w) = simpson(n_quad);
    let ex = p.bx.evaluate(grid.points());
    let ey = p.by.evaluate(grid.points());
    let vals: Vec<DMatrix<f64>> = p.x.iter().map(|d| &d.coefs * ex.transpose()).collect();
    let n = p.y.coefs.nrows();
    let q = n_quad;
    let width = terms.main().len() * q + terms.inter().len() * q * q;
    let mut xq = DMatrix::zeros(n, width);
    let mut col = 0;
    for &m in terms.main() {
        for s in 0..q {
            for i in 0..n {
                xq[(i, col)] = w[s].sqrt() * vals[m - 1][(i, s)];
            }
            col += 1;
        }
    }
    for &(m, k) in terms.inter() {
        for s in 0..q {
            for r in 0..q {
                let ww = (w[s] * w[r]).sqrt();
                for i in 0..n {
                    xq[(i, col)] = ww * vals[m - 1][(i, s)] * vals[k - 1][(i, r)];
                }
                col += 1;
            }
        }
    }
    let yv = &p.y.coefs * ey.transpose();
    let mut yq = DMatrix::from_fn(n, q, |i, t| w[t].sqrt() * yv[(i, t)]);
    center_rows(&mut xq);
    center_rows(&mut yq);
    (xq, yq)
}

/// PLS scores from the dominant singular pair of XᵀY at each step, computed
/// through the small matrix YᵀXXᵀY.
pub fn svd_pls_scores(mut x: DMatrix<f64>, mut y: DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let mut t_all = DMatrix::zeros(n, h);
    for a in 0..h {
        let xy = x.transpose() * &y;
        let m = xy.transpose() * &xy;
        let eig = SymmetricEigen::new(m);
        let v = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
        let w = &xy * v;
        let w = &w / w.norm();
        let t = &x * &w;
        let tt = t.dot(&t);
        let p = x.transpose() * &t / tt;
        let q = y.transpose() * &t / tt;
        x -= &t * p.transpose();
        y -= &t * q.transpose();
        t_all.set_column(a, &t);
    }
    t_all
}

pub fn abs_cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).abs()
}

/// Largest relative off-diagonal entry of TᵀT.
pub fn score_orthogonality(t: &DMatrix<f64>) -> f64 {
    let g = t.transpose() * t;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                worst = worst.max(g[(i, j)].abs() / (g[(i, i)] * g[(j, j)]).sqrt());
            }
        }
    }
    worst
}

/// max |Tᵀ(Π − T Pᵀ)| relative to ‖T‖‖Π‖.
pub fn residual_orthogonality(pi: &DMatrix<f64>, t: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let e = pi - t * p.transpose();
    (t.transpose() * e).amax() / (t.norm() * pi.norm())
}

/// Per-component |cosine| between library scores and quadrature-space scores.
pub fn prop2_cosines(seed: u64, n: usize, h: usize) -> Vec<f64> {
    use fofpls::pls::{FittedModel, PlsOptions};
    let p = in_span_problem(n, 6, 5, seed);
    let terms = TermSet::full(2);
    let model = FittedModel::fit(
        &p.y.sample,
        &p.xs(),
        &terms,
        &p.bx,
        &p.by,
        h,
        &PlsOptions::default(),
    )
    .unwrap();
    let (xq, yq) = quadrature_space(&p, &terms, 121);
    let tq = svd_pls_scores(xq, yq, h);
    (0..h)
        .map(|a| {
            abs_cosine(
                &model.pls().t_scores.column(a).into_owned(),
                &tq.column(a).into_owned(),
            )
        })
        .collect()
}

/// Max |prediction through reconstructed surfaces − coefficient-space prediction|
/// over 10 new in-span curves.
pub fn reconstruction_max_diff(seed: u64) -> f64 {
    use fofpls::pls::{FittedModel, PlsOptions};
    let p = in_span_problem(60, 6, 5, seed);
    let terms = TermSet::full(2);
    let model = FittedModel::fit(
        &p.y.sample,
        &p.xs(),
        &terms,
        &p.bx,
        &p.by,
        3,
        &PlsOptions::default(),
    )
    .unwrap();

    let mut r = rng(seed ^ 0xabcdef);
    let new: Vec<SplineData> = (0..2)
        .map(|m| spline_sample(normal_matrix(10, 6, &mut r), &p.bx, &format!("x{}", m + 1)))
        .collect();
    let x_new: Vec<FunctionalSample> = new.iter().map(|d| d.sample.clone()).collect();
    let direct = model.predict(&x_new).unwrap();

    // integrands are piecewise polynomials of degree 6 between the knots
    let (sg, w) = gauss_grid(&[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    let q = sg.len();
    let ex = p.bx.evaluate(sg.points());
    let train_vals: Vec<DMatrix<f64>> = p.x.iter().map(|d| &d.coefs * ex.transpose()).collect();
    let new_vals: Vec<DMatrix<f64>> = new.iter().map(|d| &d.coefs * ex.transpose()).collect();
    let t_grid = p.by.grid().clone();
    let surf = model.reconstruct_surfaces(&sg, &sg, &t_grid);
    let dims = surf.dims();
    let nt = t_grid.len();
    let n_train = train_vals[0].nrows() as f64;

    let mut worst: f64 = 0.0;
    for j in 0..10 {
        let mut pred: Vec<f64> = model.y_mean().iter().copied().collect();
        for ms in &surf.main {
            let m = ms.predictor - 1;
            let mean = train_vals[m].row_mean();
            for s in 0..q {
                let xc = new_vals[m][(j, s)] - mean[s];
                for k in 0..nt {
                    pred[k] += w[s] * xc * ms.values[(s, k)];
                }
            }
        }
        for g in &surf.inter {
            let (m, n) = (g.pair.0 - 1, g.pair.1 - 1);
            for s in 0..q {
                for rr in 0..q {
                    let mean_prod: f64 = (0..train_vals[m].nrows())
                        .map(|i| train_vals[m][(i, s)] * train_vals[n][(i, rr)])
                        .sum::<f64>()
                        / n_train;
                    let xc = new_vals[m][(j, s)] * new_vals[n][(j, rr)] - mean_prod;
                    let ww = w[s] * w[rr] * xc;
                    for k in 0..nt {
                        pred[k] += ww * g.at(dims, s, rr, k);
                    }
                }
            }
        }
        for k in 0..nt {
            worst = worst.max((pred[k] - direct[(j, k)]).abs());
        }
    }
    worst
}

/// Training MSE of a model with as many components as design columns on
/// responses that are an exact linear function of the predictor coefficients.
pub fn full_rank_training_mse(seed: u64) -> f64 {
    use fofpls::pls::{FittedModel, PlsOptions};
    let grid = Grid::uniform(100).unwrap();
    let bx = basis(5, &grid);
    let by = basis(5, &grid);
    let mut r = rng(seed);
    let n = 40;
    let a: Vec<DMatrix<f64>> = (0..2).map(|_| normal_matrix(n, 5, &mut r)).collect();
    let b = normal_matrix(10, 5, &mut r);
    let mut d = DMatrix::zeros(n, 10);
    d.columns_mut(0, 5).copy_from(&a[0]);
    d.columns_mut(5, 5).copy_from(&a[1]);
    let c = d * b;
    let y = spline_sample(c, &by, "y");
    let xs: Vec<FunctionalSample> = a
        .into_iter()
        .enumerate()
        .map(|(m, am)| spline_sample(am, &bx, &format!("x{m}")).sample)
        .collect();
    let model = FittedModel::fit(
        &y.sample,
        &xs,
        &TermSet::main_effects(2),
        &bx,
        &by,
        10,
        &PlsOptions::default(),
    )
    .unwrap();
    model.train_mse()
}

/// Pointwise variances of X_1..X_5 and correlations of neighbouring predictors
/// at a few grid points, from `n` noise-free lag-4 draws.
pub fn simulator_moments(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    use fofpls::sim::{make_predictors, SimConfig};
    let cfg = SimConfig {
        lag: 4,
        n_curves: n,
        seed,
        noise_sd_u: 0.0,
        ..SimConfig::default()
    };
    let x = make_predictors(&cfg).unwrap().truth;
    let points = [0, 33, 66, 99];
    let moments = |a: &DMatrix<f64>, b: &DMatrix<f64>, p: usize| {
        let nf = n as f64;
        let (ma, mb) = (a.column(p).sum() / nf, b.column(p).sum() / nf);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for i in 0..n {
            let (u, v) = (a[(i, p)] - ma, b[(i, p)] - mb);
            sab += u * v;
            saa += u * u;
            sbb += v * v;
        }
        (saa / (nf - 1.0), sab / (saa * sbb).sqrt())
    };
    let mut vars = Vec::new();
    let mut cors = Vec::new();
    for m in 0..5 {
        for &p in &points {
            vars.push(moments(x[m].values(), x[m].values(), p).0);
            if m + 1 < 5 {
                cors.push(moments(x[m].values(), x[m + 1].values(), p).1);
            }
        }
    }
    (vars, cors)
}

pub fn run_cli(args: &[&str]) -> i32 {
    let mut full = vec!["fofpls".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    fofpls::cli::run(full)
}

/// File name → contents for every file in `dir`.
pub fn dir_bytes(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

/// Runs every CLI command twice with the same seed under `root` and reports,
/// per command, whether both runs wrote byte-identical files.
pub fn cli_determinism(root: &std::path::Path) -> Vec<(String, bool)> {
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    let mut out = Vec::new();
    let mut dirs = Vec::new();
    for run in 0..2 {
        let base = root.join(format!("run{run}"));
        let data = base.join("data");
        let fit = base.join("fit");
        let sel = base.join("select");
        let pred = base.join("predict");
        let bench = base.join("bench");
        let codes = [
            run_cli(&[
                "simulate",
                "--n",
                "80",
                "--seed",
                "7",
                "--out-dir",
                &s(&data),
            ]),
            run_cli(&[
                "fit",
                "--data-dir",
                &s(&data),
                "--terms",
                "main=2,3,4,5;inter=2:2,3:4,4:5",
                "--ky-candidates",
                "4,6",
                "--kx-candidates",
                "4,6",
                "--seed",
                "3",
                "--out-dir",
                &s(&fit),
            ]),
            run_cli(&[
                "select",
                "--data-dir",
                &s(&data),
                "--ky",
                "6",
                "--kx",
                "6",
                "--criterion",
                "holdout",
                "--seed",
                "3",
                "--out-dir",
                &s(&sel),
            ]),
            run_cli(&[
                "predict",
                "--model",
                &s(&fit.join("model.json")),
                "--data-dir",
                &s(&data),
                "--out-dir",
                &s(&pred),
            ]),
            run_cli(&[
                "benchmark",
                "--reps",
                "2",
                "--n",
                "60",
                "--n-train",
                "30",
                "--models",
                "main,true",
                "--ky-candidates",
                "4",
                "--kx-candidates",
                "4,6",
                "--h-max",
                "4",
                "--seed",
                "11",
                "--out-dir",
                &s(&bench),
            ]),
        ];
        assert!(codes.iter().all(|&c| c == 0), "exit codes {codes:?}");
        dirs.push([data, fit, sel, pred, bench]);
    }
    for (k, name) in ["simulate", "fit", "select", "predict", "benchmark"]
        .iter()
        .enumerate()
    {
        out.push((
            name.to_string(),
            dir_bytes(&dirs[0][k]) == dir_bytes(&dirs[1][k]),
        ));
    }
    out
}
