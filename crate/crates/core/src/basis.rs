//! B-spline bases on the standardized interval [0, 1].
//!
//! A [`BasisSystem`] bundles a clamped, uniformly knotted B-spline basis with
//! its evaluation matrix on an observation grid, the exact Gram matrix of the
//! basis functions, and the symmetric square root of that Gram matrix. The
//! Gram matrix is the metric that turns inner products of coefficient vectors
//! into L2 inner products of the curves they represent.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FofError, Result};

const ENDPOINT_TOL: f64 = 1e-9;

/// Ordered observation points on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// Validates a strictly increasing grid that starts at 0 and ends at 1.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FofError::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(bad) = points.iter().position(|p| !p.is_finite()) {
            return Err(FofError::InvalidGrid(format!(
                "non-finite point at index {bad}"
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(FofError::InvalidGrid(format!(
                "points not strictly increasing at index {}",
                i + 1
            )));
        }
        let (first, last) = (points[0], points[points.len() - 1]);
        if first.abs() > ENDPOINT_TOL || (last - 1.0).abs() > ENDPOINT_TOL {
            return Err(FofError::InvalidGrid(format!(
                "grid must span [0, 1], got [{first}, {last}]"
            )));
        }
        Ok(Self { points })
    }

    /// `len` equally spaced points with spacing 1/(len-1).
    pub fn uniform(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(FofError::InvalidGrid(format!(
                "need at least 2 points, got {len}"
            )));
        }
        let step = (len - 1) as f64;
        Self::new((0..len).map(|i| i as f64 / step).collect())
    }

    /// Maps arbitrary increasing abscissae affinely onto [0, 1].
    pub fn standardize(raw: &[f64]) -> Result<Self> {
        if raw.len() < 2 {
            return Err(FofError::InvalidGrid(format!(
                "need at least 2 points, got {}",
                raw.len()
            )));
        }
        let (lo, hi) = (raw[0], raw[raw.len() - 1]);
        if !(hi > lo) {
            return Err(FofError::InvalidGrid(format!(
                "degenerate range [{lo}, {hi}]"
            )));
        }
        let mut points: Vec<f64> = raw.iter().map(|x| (x - lo) / (hi - lo)).collect();
        points[0] = 0.0;
        let n = points.len();
        points[n - 1] = 1.0;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Trapezoid-rule cell weights; they sum to the grid span.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let p = &self.points;
        let n = p.len();
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let half = 0.5 * (p[i + 1] - p[i]);
            w[i] += half;
            w[i + 1] += half;
        }
        w
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = FofError;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.points
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut deriv = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            deriv = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / deriv;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Kronecker product `a ⊗ b`, with row index `i * b.nrows() + k`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |r, c| {
        a[(r / br, c / bc)] * b[(r % br, c % bc)]
    })
}

/// Symmetric square root and inverse square root of a symmetric PSD matrix.
///
/// Eigenvalues are clamped from below at `tol` (default `1e-12 * λ_max`).
pub fn symmetric_sqrt(a: &DMatrix<f64>, tol: Option<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !a.is_square() {
        return Err(FofError::ShapeMismatch(format!(
            "matrix is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(FofError::InvalidConfiguration(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.max();
    let tol = tol.unwrap_or(1e-12 * lmax.max(0.0));
    if lmax <= 0.0 || lmax < tol {
        return Err(FofError::SingularMetric(lmax));
    }
    let mut root = DVector::zeros(a.nrows());
    let mut inv_root = DVector::zeros(a.nrows());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -tol {
            return Err(FofError::NotPositiveSemidefinite { eigenvalue: l, tol });
        }
        let r = l.max(tol).sqrt();
        root[i] = r;
        inv_root[i] = 1.0 / r;
    }
    let v = &eig.eigenvectors;
    let sqrt = symmetrize(v * DMatrix::from_diagonal(&root) * v.transpose());
    let inv_sqrt = symmetrize(v * DMatrix::from_diagonal(&inv_root) * v.transpose());
    Ok((sqrt, inv_sqrt))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Serializable description from which a [`BasisSystem`] can be rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub k: usize,
    pub order: usize,
}

/// Clamped B-spline basis with uniform interior knots, tied to an observation grid.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    order: usize,
    k: usize,
    knots: Vec<f64>,
    grid: Grid,
    eval: DMatrix<f64>,
    gram: DMatrix<f64>,
    gram_sqrt: DMatrix<f64>,
    gram_inv_sqrt: DMatrix<f64>,
    projector: std::result::Result<DMatrix<f64>, String>,
}

/// Builds a cubic-by-default B-spline basis with `k` functions of the given order.
pub fn make_bspline_basis(k: usize, order: usize, grid: &Grid) -> Result<BasisSystem> {
    BasisSystem::new(BasisSpec { k, order }, grid)
}

impl BasisSystem {
    pub fn new(spec: BasisSpec, grid: &Grid) -> Result<Self> {
        let BasisSpec { k, order } = spec;
        if order == 0 {
            return Err(FofError::InvalidConfiguration(
                "spline order must be >= 1".into(),
            ));
        }
        if k < order {
            return Err(FofError::InvalidConfiguration(format!(
                "number of basis functions ({k}) must be >= order ({order})"
            )));
        }
        let interior = k - order;
        let mut knots = Vec::with_capacity(k + order);
        knots.extend(std::iter::repeat_n(0.0, order));
        knots.extend((1..=interior).map(|i| i as f64 / (interior + 1) as f64));
        knots.extend(std::iter::repeat_n(1.0, order));

        let mut basis = Self {
            order,
            k,
            knots,
            grid: grid.clone(),
            eval: DMatrix::zeros(0, 0),
            gram: DMatrix::zeros(0, 0),
            gram_sqrt: DMatrix::zeros(0, 0),
            gram_inv_sqrt: DMatrix::zeros(0, 0),
            projector: Err(String::new()),
        };
        basis.eval = basis.evaluate(grid.points());
        basis.gram = basis.exact_gram();
        let (sqrt, inv_sqrt) = symmetric_sqrt(&basis.gram, None)?;
        basis.gram_sqrt = sqrt;
        basis.gram_inv_sqrt = inv_sqrt;
        basis.projector = least_squares_projector(&basis.eval);
        Ok(basis)
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            k: self.k,
            order: self.order,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// L×K matrix of basis values on the observation grid.
    pub fn eval(&self) -> &DMatrix<f64> {
        &self.eval
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_sqrt(&self) -> &DMatrix<f64> {
        &self.gram_sqrt
    }

    pub fn gram_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.gram_inv_sqrt
    }

    fn degree(&self) -> usize {
        self.order - 1
    }

    fn find_span(&self, t: f64) -> usize {
        let p = self.degree();
        let n = self.k - 1;
        if t >= self.knots[n + 1] {
            return n;
        }
        if t <= self.knots[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n + 1);
        let mut mid = (lo + hi) / 2;
        while t < self.knots[mid] || t >= self.knots[mid + 1] {
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        mid
    }

    /// Cox-de Boor recursion for the `order` functions that are nonzero on `span`.
    fn nonzero_funs(&self, span: usize, t: f64) -> Vec<f64> {
        let p = self.degree();
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Values of all K basis functions at `t`; zero outside [0, 1].
    pub fn evaluate_at(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.k);
        if !(-1e-12..=1.0 + 1e-12).contains(&t) {
            return out;
        }
        let t = t.clamp(0.0, 1.0);
        let span = self.find_span(t);
        let first = span - self.degree();
        for (i, v) in self.nonzero_funs(span, t).into_iter().enumerate() {
            out[first + i] = v;
        }
        out
    }

    /// Matrix of basis values, one row per point.
    pub fn evaluate(&self, points: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(points.len(), self.k);
        for (row, &t) in points.iter().enumerate() {
            m.row_mut(row).copy_from(&self.evaluate_at(t).transpose());
        }
        m
    }

    // Per-span Gauss-Legendre with `order` nodes integrates polynomials of
    // degree 2*order - 1, which covers the product of two splines of degree order - 1.
    fn exact_gram(&self) -> DMatrix<f64> {
        let p = self.degree();
        let (nodes, weights) = gauss_legendre(self.order);
        let mut g = DMatrix::zeros(self.k, self.k);
        for span in p..self.k {
            let (a, b) = (self.knots[span], self.knots[span + 1]);
            if b <= a {
                continue;
            }
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let vals = self.nonzero_funs(span, t);
                let first = span - p;
                for i in 0..=p {
                    for j in i..=p {
                        g[(first + i, first + j)] += half * w * vals[i] * vals[j];
                    }
                }
            }
        }
        for i in 0..self.k {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    /// K×L least-squares projector onto the basis, if the grid resolves it.
    pub fn projector(&self) -> Result<&DMatrix<f64>> {
        self.projector
            .as_ref()
            .map_err(|msg| FofError::UnderdeterminedProjection(msg.clone()))
    }

    /// Least-squares coefficients of every row of `values` (N×L → N×K).
    pub fn project_rows(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if values.ncols() != self.grid.len() {
            return Err(FofError::ShapeMismatch(format!(
                "curves have {} points, basis grid has {}",
                values.ncols(),
                self.grid.len()
            )));
        }
        Ok(values * self.projector()?.transpose())
    }
}

/// Least-squares coefficients of a single discretized curve.
pub fn project_curve(values: &[f64], basis: &BasisSystem) -> Result<DVector<f64>> {
    if values.len() != basis.grid().len() {
        return Err(FofError::ShapeMismatch(format!(
            "curve has {} points, basis grid has {}",
            values.len(),
            basis.grid().len()
        )));
    }
    Ok(basis.projector()? * DVector::from_column_slice(values))
}

fn least_squares_projector(eval: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, String> {
    let (l, k) = eval.shape();
    if l < k {
        return Err(format!("{l} grid points cannot determine {k} coefficients"));
    }
    let svd = eval.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(format!(
            "evaluation matrix is rank deficient (singular values {smin:e} / {smax:e})"
        ));
    }
    let u = svd.u.as_ref().ok_or("SVD failed")?;
    let v_t = svd.v_t.as_ref().ok_or("SVD failed")?;
    let inv = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    Ok(v_t.transpose() * inv * u.transpose())
}

/// Gram matrix of the tensor-product basis ψ_j(s)ψ_l(r) and its factors.
#[derive(Debug, Clone)]
pub struct TensorMetric {
    k: usize,
    gram2: DMatrix<f64>,
    gram2_sqrt: DMatrix<f64>,
    gram2_inv_sqrt: DMatrix<f64>,
}

pub fn tensor_metric(basis: &BasisSystem) -> TensorMetric {
    TensorMetric {
        k: basis.k(),
        gram2: kron(basis.gram(), basis.gram()),
        gram2_sqrt: kron(basis.gram_sqrt(), basis.gram_sqrt()),
        gram2_inv_sqrt: kron(basis.gram_inv_sqrt(), basis.gram_inv_sqrt()),
    }
}

impl TensorMetric {
    /// Number of univariate functions per axis.
    pub fn base_k(&self) -> usize {
        self.k
    }

    pub fn gram2(&self) -> &DMatrix<f64> {
        &self.gram2
    }

    pub fn gram2_sqrt(&self) -> &DMatrix<f64> {
        &self.gram2_sqrt
    }

    pub fn gram2_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.gram2_inv_sqrt
    }
}
