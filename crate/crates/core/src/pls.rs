//! NIPALS partial least squares in metric-weighted coefficient space.
//!
//! Predictor coefficients `D` and response coefficients `C` are mapped through
//! the square roots of their basis metrics, `Π = D·Ψ^{1/2}` and
//! `Λ = C·Φ^{1/2}`, so that Euclidean inner products of rows equal L2 inner
//! products of the underlying functions. Ordinary NIPALS on `(Π, Λ)` then
//! yields the functional PLS components, and the regression matrix `Θ` maps
//! back to a coefficient tensor for the surfaces β̂ and γ̂.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::basis::{BasisSystem, Grid};
use crate::design::{
    build_design, design_rows, BlockMetric, DesignCentering, FunctionalSample, MetricFactor,
    StackedDesign, Term, TermSet,
};
use crate::error::{FofError, Result};
use crate::metrics::{mse, CurveNorm};

/// Inner-loop controls for NIPALS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlsOptions {
    /// Relative change in the score vector that ends the inner loop.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop early (instead of failing) once the predictor or response residual is exhausted.
    pub stop_at_exhaustion: bool,
}

impl Default for PlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            stop_at_exhaustion: false,
        }
    }
}

/// Components extracted by NIPALS from transformed predictors and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsFit {
    /// P×h weights.
    pub w: DMatrix<f64>,
    /// N×h scores.
    pub t_scores: DMatrix<f64>,
    /// P×h predictor loadings.
    pub p_load: DMatrix<f64>,
    /// K_Y×h response loadings (regression of the deflated response on each score).
    pub q_load: DMatrix<f64>,
    /// P×K_Y regression matrix in transformed space.
    pub theta: DMatrix<f64>,
}

// Relative squared-norm level below which a residual counts as exhausted.
const EXHAUSTED: f64 = 1e-24;

impl PlsFit {
    pub fn n_components(&self) -> usize {
        self.w.ncols()
    }

    /// Regression matrix `W (PᵀW)⁻¹ Qᵀ` using only the first `h` components.
    pub fn theta_with(&self, h: usize) -> Result<DMatrix<f64>> {
        if h == 0 || h > self.n_components() {
            return Err(FofError::TooManyComponents {
                requested: h,
                limit: self.n_components(),
            });
        }
        let w = self.w.columns(0, h);
        let p = self.p_load.columns(0, h);
        let q = self.q_load.columns(0, h);
        let ptw = p.transpose() * w;
        let inv = ptw
            .lu()
            .try_inverse()
            .ok_or_else(|| FofError::DegenerateDesign("singular PᵀW".into()))?;
        Ok(w * inv * q.transpose())
    }

    /// Keeps the first `h` components.
    pub fn truncate(&self, h: usize) -> Result<Self> {
        let theta = self.theta_with(h)?;
        Ok(Self {
            w: self.w.columns(0, h).into_owned(),
            t_scores: self.t_scores.columns(0, h).into_owned(),
            p_load: self.p_load.columns(0, h).into_owned(),
            q_load: self.q_load.columns(0, h).into_owned(),
            theta,
        })
    }
}

fn top_eigenvector(m: &DMatrix<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let idx = eig.eigenvalues.imax();
    eig.eigenvectors.column(idx).into_owned()
}

/// K ← (I − ttᵀ/tᵀt) K (I − ttᵀ/tᵀt), the kernel of the deflated matrix.
fn deflate_kernel(k: &mut DMatrix<f64>, t: &DVector<f64>, tt: f64) {
    let kt = &*k * t;
    let tkt = t.dot(&kt);
    k.ger(-1.0 / tt, t, &kt, 1.0);
    k.ger(-1.0 / tt, &kt, t, 1.0);
    k.ger(tkt / (tt * tt), t, t, 1.0);
}

/// Runs NIPALS for `h` components on already-transformed matrices.
///
/// `pi` is N×P, `lambda` is N×K_Y; both must be column-centered.
pub fn nipals(
    pi: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    h: usize,
    opts: &PlsOptions,
) -> Result<PlsFit> {
    let (n, p) = pi.shape();
    let ky = lambda.ncols();
    if lambda.nrows() != n {
        return Err(FofError::ShapeMismatch(format!(
            "{n} predictor rows but {} response rows",
            lambda.nrows()
        )));
    }
    let limit = n.saturating_sub(1).min(p);
    if h == 0 || h > limit {
        return Err(FofError::TooManyComponents {
            requested: h,
            limit,
        });
    }

    let mut x = pi.clone();
    let mut y = lambda.clone();
    let x_ss0 = x.norm_squared();
    let y_ss0 = y.norm_squared();
    if x_ss0 == 0.0 {
        return Err(FofError::DegenerateDesign(
            "predictor matrix is zero".into(),
        ));
    }
    if y_ss0 == 0.0 {
        return Err(FofError::DegenerateDesign("response matrix is zero".into()));
    }

    let mut w_cols = Vec::with_capacity(h);
    let mut t_cols = Vec::with_capacity(h);
    let mut p_cols = Vec::with_capacity(h);
    let mut q_cols = Vec::with_capacity(h);

    // The inner loop only needs XXᵀu and YYᵀt, so it runs in N-space on kernels
    // that are deflated alongside X and Y.
    let mut kx = &x * x.transpose();
    let mut ky_k = &y * y.transpose();

    for comp in 0..h {
        let exhausted =
            x.norm_squared() <= EXHAUSTED * x_ss0 || y.norm_squared() <= EXHAUSTED * y_ss0;
        if exhausted {
            if opts.stop_at_exhaustion {
                break;
            }
            return Err(FofError::DegenerateDesign(format!(
                "residuals exhausted before component {}",
                comp + 1
            )));
        }

        // Start from the fixed point's response direction when it is well defined.
        let m = y.transpose() * &kx * &y;
        let mut u = &y * top_eigenvector(&m);
        if u.norm() == 0.0 {
            let best = (0..ky).max_by(|&a, &b| {
                y.column(a)
                    .norm_squared()
                    .total_cmp(&y.column(b).norm_squared())
            });
            u = y.column(best.unwrap_or(0)).into_owned();
        }

        let mut t_old: Option<DVector<f64>> = None;
        let mut converged = false;
        for _ in 0..opts.max_iter {
            let a = &kx * &u;
            let norm = u.dot(&a).max(0.0).sqrt();
            if norm == 0.0 {
                return Err(FofError::DegenerateDesign(format!(
                    "zero weight vector at component {}",
                    comp + 1
                )));
            }
            let t = a / norm;
            let b = &ky_k * &t;
            let qn = t.dot(&b).max(0.0).sqrt();
            if qn == 0.0 {
                return Err(FofError::DegenerateDesign(format!(
                    "score uncorrelated with response at component {}",
                    comp + 1
                )));
            }
            u = b / qn;
            if let Some(prev) = &t_old {
                if (&t - prev).norm() < opts.tol * prev.norm() {
                    converged = true;
                    break;
                }
            }
            t_old = Some(t);
        }
        if !converged {
            return Err(FofError::ConvergenceFailure {
                component: comp + 1,
                iterations: opts.max_iter,
            });
        }

        let mut w = x.transpose() * &u;
        w /= w.norm();
        let imax = w.iamax();
        if w[imax] < 0.0 {
            w.neg_mut();
        }
        let t = &x * &w;
        let tt = t.norm_squared();
        let p_vec = x.transpose() * &t / tt;
        let q_vec = y.transpose() * &t / tt;
        x -= &t * p_vec.transpose();
        y -= &t * q_vec.transpose();
        deflate_kernel(&mut kx, &t, tt);
        deflate_kernel(&mut ky_k, &t, tt);

        w_cols.push(w);
        t_cols.push(t);
        p_cols.push(p_vec);
        q_cols.push(q_vec);
    }

    let fit = PlsFit {
        w: DMatrix::from_columns(&w_cols),
        t_scores: DMatrix::from_columns(&t_cols),
        p_load: DMatrix::from_columns(&p_cols),
        q_load: DMatrix::from_columns(&q_cols),
        theta: DMatrix::zeros(p, ky),
    };
    let h_done = fit.n_components();
    let theta = fit.theta_with(h_done)?;
    Ok(PlsFit { theta, ..fit })
}

/// NIPALS on `D·x_factor` and `C·y_factor` for dense metric factors.
pub fn nipals_fit(
    d: &DMatrix<f64>,
    c: &DMatrix<f64>,
    x_factor: &DMatrix<f64>,
    y_factor: &DMatrix<f64>,
    h: usize,
    opts: &PlsOptions,
) -> Result<PlsFit> {
    if d.ncols() != x_factor.nrows() || c.ncols() != y_factor.nrows() {
        return Err(FofError::ShapeMismatch(
            "metric factor does not match design".into(),
        ));
    }
    nipals(&(d * x_factor), &(c * y_factor), h, opts)
}

/// Response curves reduced to centered basis coefficients.
#[derive(Debug, Clone)]
pub struct PreparedResponse {
    basis_y: BasisSystem,
    observed: DMatrix<f64>,
    y_mean: DVector<f64>,
    coefs: DMatrix<f64>,
    lambda: DMatrix<f64>,
}

impl PreparedResponse {
    pub fn new(y: &FunctionalSample, basis_y: &BasisSystem) -> Result<Self> {
        if y.grid() != basis_y.grid() {
            return Err(FofError::GridMismatch(
                "response is not on the response basis grid".into(),
            ));
        }
        let y_mean = y.mean_curve();
        let mut centered = y.values().clone();
        for mut row in centered.row_iter_mut() {
            row -= y_mean.transpose();
        }
        let coefs = basis_y.project_rows(&centered)?;
        let lambda = &coefs * basis_y.gram_sqrt();
        Ok(Self {
            basis_y: basis_y.clone(),
            observed: y.values().clone(),
            y_mean,
            coefs,
            lambda,
        })
    }

    pub fn basis_y(&self) -> &BasisSystem {
        &self.basis_y
    }

    /// Centered response coefficients, N×K_Y.
    pub fn coefs(&self) -> &DMatrix<f64> {
        &self.coefs
    }

    pub fn y_mean(&self) -> &DVector<f64> {
        &self.y_mean
    }

    pub fn observed(&self) -> &DMatrix<f64> {
        &self.observed
    }
}

/// Everything needed to predict new curves and reconstruct coefficient surfaces.
#[derive(Debug, Clone)]
pub struct FittedModel {
    terms: TermSet,
    basis_x: BasisSystem,
    basis_y: BasisSystem,
    metric: BlockMetric,
    centering: DesignCentering,
    y_mean: DVector<f64>,
    pls: PlsFit,
    train_mse: f64,
    fitted: DMatrix<f64>,
}

impl FittedModel {
    /// Builds the design and fits `h` components.
    pub fn fit(
        y: &FunctionalSample,
        predictors: &[FunctionalSample],
        terms: &TermSet,
        basis_x: &BasisSystem,
        basis_y: &BasisSystem,
        h: usize,
        opts: &PlsOptions,
    ) -> Result<Self> {
        let design = build_design(predictors, terms, basis_x)?;
        let response = PreparedResponse::new(y, basis_y)?;
        Self::fit_prepared(&design, &response, h, opts)
    }

    pub fn fit_prepared(
        design: &StackedDesign,
        response: &PreparedResponse,
        h: usize,
        opts: &PlsOptions,
    ) -> Result<Self> {
        if design.n_curves() != response.coefs.nrows() {
            return Err(FofError::ShapeMismatch(format!(
                "{} predictor curves but {} response curves",
                design.n_curves(),
                response.coefs.nrows()
            )));
        }
        let pi = design.metric().right_apply(design.d(), MetricFactor::Sqrt);
        let pls = nipals(&pi, &response.lambda, h, opts)?;
        let mut model = Self {
            terms: design.terms().clone(),
            basis_x: design.basis_x().clone(),
            basis_y: response.basis_y.clone(),
            metric: design.metric().clone(),
            centering: design.centering().clone(),
            y_mean: response.y_mean.clone(),
            pls,
            train_mse: 0.0,
            fitted: DMatrix::zeros(0, 0),
        };
        model.fitted = model.predict_design(design.d())?;
        model.train_mse = mse(
            &response.observed,
            &model.fitted,
            &CurveNorm::trapezoid(response.basis_y.grid()),
        )?;
        Ok(model)
    }

    /// Reassembles a model from archived parts.
    pub(crate) fn from_parts(
        terms: TermSet,
        basis_x: BasisSystem,
        basis_y: BasisSystem,
        centering: DesignCentering,
        y_mean: DVector<f64>,
        pls: PlsFit,
        train_mse: f64,
    ) -> Self {
        let blocks = crate::design::build_blocks(&terms, basis_x.k());
        let metric = BlockMetric::new(blocks, &basis_x);
        Self {
            terms,
            basis_x,
            basis_y,
            metric,
            centering,
            y_mean,
            pls,
            train_mse,
            fitted: DMatrix::zeros(0, 0),
        }
    }

    /// Copy of the model that uses only its first `h` components.
    ///
    /// The copy carries no training fit: `fitted` is empty and `train_mse` is NaN.
    pub fn with_components(&self, h: usize) -> Result<Self> {
        let pls = self.pls.truncate(h)?;
        Ok(Self {
            pls,
            fitted: DMatrix::zeros(0, 0),
            train_mse: f64::NAN,
            ..self.clone()
        })
    }

    pub fn terms(&self) -> &TermSet {
        &self.terms
    }

    pub fn basis_x(&self) -> &BasisSystem {
        &self.basis_x
    }

    pub fn basis_y(&self) -> &BasisSystem {
        &self.basis_y
    }

    pub fn centering(&self) -> &DesignCentering {
        &self.centering
    }

    pub fn metric(&self) -> &BlockMetric {
        &self.metric
    }

    pub fn y_mean(&self) -> &DVector<f64> {
        &self.y_mean
    }

    pub fn pls(&self) -> &PlsFit {
        &self.pls
    }

    pub fn n_components(&self) -> usize {
        self.pls.n_components()
    }

    /// Training MSE of the fitted curves against the observed responses.
    pub fn train_mse(&self) -> f64 {
        self.train_mse
    }

    /// Fitted training curves (empty for archived or truncated models).
    pub fn fitted(&self) -> &DMatrix<f64> {
        &self.fitted
    }

    /// Predicted response coefficients (centered) for design rows.
    pub fn predict_coefs(&self, d_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if d_new.ncols() != self.metric.dim() {
            return Err(FofError::DesignMismatch(format!(
                "design has {} columns, model expects {}",
                d_new.ncols(),
                self.metric.dim()
            )));
        }
        let pi = self.metric.right_apply(d_new, MetricFactor::Sqrt);
        Ok(pi * &self.pls.theta * self.basis_y.gram_inv_sqrt())
    }

    /// Predicted curves on the response grid for design rows.
    pub fn predict_design(&self, d_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.predict_coefs(d_new)?;
        let mut curves = c * self.basis_y.eval().transpose();
        for mut row in curves.row_iter_mut() {
            row += self.y_mean.transpose();
        }
        Ok(curves)
    }

    /// Design rows for new predictor curves, centered with the training means.
    pub fn design_rows(&self, x_new: &[FunctionalSample]) -> Result<DMatrix<f64>> {
        design_rows(x_new, &self.terms, &self.basis_x, &self.centering)
    }

    /// Predicted response curves for new predictor curves.
    pub fn predict(&self, x_new: &[FunctionalSample]) -> Result<DMatrix<f64>> {
        self.predict_design(&self.design_rows(x_new)?)
    }

    /// Basis-coefficient tensor `Ψ^{-1/2} Θ Φ^{-1/2}` (P×K_Y).
    pub fn coefficient_tensor(&self) -> DMatrix<f64> {
        let left = self
            .metric
            .right_apply(&self.pls.theta.transpose(), MetricFactor::InvSqrt)
            .transpose();
        left * self.basis_y.gram_inv_sqrt()
    }

    /// Evaluates β̂_m(s,t) and γ̂_mn(s,r,t) on the given grids.
    pub fn reconstruct_surfaces(
        &self,
        s_grid: &Grid,
        r_grid: &Grid,
        t_grid: &Grid,
    ) -> CoefficientSurfaces {
        reconstruct_surfaces(self, s_grid, r_grid, t_grid)
    }
}

/// Grid-sampled β̂_m(s,t) for one main term.
#[derive(Debug, Clone)]
pub struct MainSurface {
    pub predictor: usize,
    /// |s|×|t| values.
    pub values: DMatrix<f64>,
    /// K_X×K_Y basis coefficients.
    pub coefs: DMatrix<f64>,
}

/// Grid-sampled γ̂_mn(s,r,t) for one interaction term.
#[derive(Debug, Clone)]
pub struct InterSurface {
    pub pair: (usize, usize),
    /// Values in s-major order: index `(i * |r| + j) * |t| + k`.
    pub values: Vec<f64>,
    /// K_X²×K_Y basis coefficients, row `j * K_X + l` for ψ_j(s)ψ_l(r).
    pub coefs: DMatrix<f64>,
}

impl InterSurface {
    pub fn at(&self, dims: (usize, usize, usize), i: usize, j: usize, k: usize) -> f64 {
        let (_, nr, nt) = dims;
        self.values[(i * nr + j) * nt + k]
    }
}

#[derive(Debug, Clone)]
pub struct CoefficientSurfaces {
    pub s_grid: Grid,
    pub r_grid: Grid,
    pub t_grid: Grid,
    pub main: Vec<MainSurface>,
    pub inter: Vec<InterSurface>,
    /// Full P×K_Y coefficient tensor.
    pub gamma: DMatrix<f64>,
}

impl CoefficientSurfaces {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.s_grid.len(), self.r_grid.len(), self.t_grid.len())
    }
}

pub fn reconstruct_surfaces(
    model: &FittedModel,
    s_grid: &Grid,
    r_grid: &Grid,
    t_grid: &Grid,
) -> CoefficientSurfaces {
    let gamma = model.coefficient_tensor();
    let kx = model.basis_x.k();
    let es = model.basis_x.evaluate(s_grid.points());
    let er = model.basis_x.evaluate(r_grid.points());
    let et = model.basis_y.evaluate(t_grid.points());
    let blocks = crate::design::build_blocks(&model.terms, kx);
    let mut main = Vec::new();
    let mut inter = Vec::new();
    for block in blocks {
        let coefs = gamma.rows(block.offset, block.width).into_owned();
        match block.term {
            Term::Main(m) => {
                let values = &es * &coefs * et.transpose();
                main.push(MainSurface {
                    predictor: m,
                    values,
                    coefs,
                });
            }
            Term::Inter(m, n) => {
                let (ns, nr, nt) = (s_grid.len(), r_grid.len(), t_grid.len());
                let mut values = vec![0.0; ns * nr * nt];
                // coefficient matrix at each t, reshaped K×K
                let at_t = &coefs * et.transpose();
                for k in 0..nt {
                    let bt = DMatrix::from_fn(kx, kx, |j, l| at_t[(j * kx + l, k)]);
                    let slice = &es * bt * er.transpose();
                    for i in 0..ns {
                        for j in 0..nr {
                            values[(i * nr + j) * nt + k] = slice[(i, j)];
                        }
                    }
                }
                inter.push(InterSurface {
                    pair: (m, n),
                    values,
                    coefs,
                });
            }
        }
    }
    CoefficientSurfaces {
        s_grid: s_grid.clone(),
        r_grid: r_grid.clone(),
        t_grid: t_grid.clone(),
        main,
        inter,
        gamma,
    }
}
