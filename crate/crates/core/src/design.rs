//! Stacked design for main and quadratic/interaction terms.
//!
//! Each curve becomes one row of the design matrix. Main term `m` contributes
//! the (centered) B-spline coefficients of predictor `m`; interaction term
//! `(m, n)` contributes the coefficients of the product surface
//! `X_m(s) X_n(r)` in the tensor-product basis, which for curves in the spline
//! span are exactly `vec(a_m a_nᵀ)`. Columns are ordered: all main blocks, then
//! all interaction blocks. The matching metric is block diagonal with the
//! univariate Gram matrix on main blocks and its Kronecker square on
//! interaction blocks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{kron, tensor_metric, BasisSystem, Grid, TensorMetric};
use crate::error::{FofError, Result};

/// N curves observed on a common grid.
#[derive(Debug, Clone)]
pub struct FunctionalSample {
    grid: Grid,
    values: DMatrix<f64>,
    label: String,
}

impl FunctionalSample {
    pub fn new(grid: Grid, values: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if values.nrows() == 0 {
            return Err(FofError::InvalidInput(format!(
                "{label}: sample has no curves"
            )));
        }
        if values.ncols() != grid.len() {
            return Err(FofError::ShapeMismatch(format!(
                "{label}: {} columns for a grid of {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (i % values.nrows(), i / values.nrows());
            return Err(FofError::InvalidInput(format!(
                "{label}: non-finite value at curve {row}, point {col}"
            )));
        }
        Ok(Self {
            grid,
            values,
            label,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// N×L matrix, one curve per row.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_curves(&self) -> usize {
        self.values.nrows()
    }

    /// Pointwise mean curve.
    pub fn mean_curve(&self) -> DVector<f64> {
        self.values.row_mean().transpose()
    }

    /// Subset of curves, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.select_rows(rows),
            label: self.label.clone(),
        }
    }
}

/// Subtracts the pointwise mean from every curve.
pub fn center_sample(x: &FunctionalSample) -> (FunctionalSample, DVector<f64>) {
    let mean = x.mean_curve();
    let mut values = x.values.clone();
    for mut row in values.row_iter_mut() {
        row -= mean.transpose();
    }
    let centered = FunctionalSample {
        grid: x.grid.clone(),
        values,
        label: x.label.clone(),
    };
    (centered, mean)
}

/// One regressor of the stacked model. Predictor numbers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Main(usize),
    Inter(usize, usize),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(m) => write!(f, "X{m}"),
            Term::Inter(m, n) => write!(f, "X{m}:X{n}"),
        }
    }
}

/// Main-effect indices and quadratic/interaction pairs (1-based predictor numbers).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TermSet {
    main: Vec<usize>,
    inter: Vec<(usize, usize)>,
}

impl TermSet {
    pub fn new(main: Vec<usize>, inter: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &m in &main {
            if m == 0 {
                return Err(FofError::InvalidTerm("predictor numbers start at 1".into()));
            }
            if !seen.insert(Term::Main(m)) {
                return Err(FofError::InvalidTerm(format!("duplicate main term {m}")));
            }
        }
        for &(m, n) in &inter {
            if m == 0 || n == 0 {
                return Err(FofError::InvalidTerm("predictor numbers start at 1".into()));
            }
            if m > n {
                return Err(FofError::InvalidTerm(format!(
                    "interaction ({m},{n}) must be written with m <= n"
                )));
            }
            if !seen.insert(Term::Inter(m, n)) {
                return Err(FofError::InvalidTerm(format!(
                    "duplicate interaction ({m},{n})"
                )));
            }
        }
        Ok(Self { main, inter })
    }

    /// All main effects 1..=m_total, no interactions.
    pub fn main_effects(m_total: usize) -> Self {
        Self {
            main: (1..=m_total).collect(),
            inter: Vec::new(),
        }
    }

    /// All main effects plus every pair (m, n) with m <= n.
    pub fn full(m_total: usize) -> Self {
        let inter = (1..=m_total)
            .flat_map(|m| (m..=m_total).map(move |n| (m, n)))
            .collect();
        Self {
            main: (1..=m_total).collect(),
            inter,
        }
    }

    pub fn main(&self) -> &[usize] {
        &self.main
    }

    pub fn inter(&self) -> &[(usize, usize)] {
        &self.inter
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty() && self.inter.is_empty()
    }

    /// Terms in design-column order.
    pub fn terms(&self) -> Vec<Term> {
        self.main
            .iter()
            .map(|&m| Term::Main(m))
            .chain(self.inter.iter().map(|&(m, n)| Term::Inter(m, n)))
            .collect()
    }

    pub fn with_main(&self, m: usize) -> Result<Self> {
        let mut main = self.main.clone();
        main.push(m);
        Self::new(main, self.inter.clone())
    }

    pub fn with_inter(&self, pair: (usize, usize)) -> Result<Self> {
        let mut inter = self.inter.clone();
        inter.push(pair);
        Self::new(self.main.clone(), inter)
    }

    /// Checks every index against the number of available predictors.
    pub fn validate(&self, m_total: usize) -> Result<()> {
        if self.is_empty() {
            return Err(FofError::InvalidTerm("term set is empty".into()));
        }
        let bad = self
            .main
            .iter()
            .copied()
            .chain(self.inter.iter().flat_map(|&(m, n)| [m, n]))
            .find(|&m| m > m_total);
        match bad {
            Some(m) => Err(FofError::InvalidTerm(format!(
                "predictor {m} out of range (have {m_total})"
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for TermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let main: Vec<String> = self.main.iter().map(|m| m.to_string()).collect();
        let inter: Vec<String> = self.inter.iter().map(|(m, n)| format!("{m}:{n}")).collect();
        write!(f, "main={};inter={}", main.join(","), inter.join(","))
    }
}

/// Parses `main=2,3;inter=2:2,3:4`. Either part may be omitted.
impl FromStr for TermSet {
    type Err = FofError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| FofError::InvalidTerm(msg);
        let mut main = Vec::new();
        let mut inter = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, list) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got '{part}'")))?;
            let items = list.split(',').map(str::trim).filter(|x| !x.is_empty());
            match key.trim() {
                "main" => {
                    for item in items {
                        main.push(
                            item.parse()
                                .map_err(|_| bad(format!("bad index '{item}'")))?,
                        );
                    }
                }
                "inter" => {
                    for item in items {
                        let (a, b) = item
                            .split_once(':')
                            .ok_or_else(|| bad(format!("bad pair '{item}'")))?;
                        let a: usize = a
                            .trim()
                            .parse()
                            .map_err(|_| bad(format!("bad pair '{item}'")))?;
                        let b: usize = b
                            .trim()
                            .parse()
                            .map_err(|_| bad(format!("bad pair '{item}'")))?;
                        inter.push((a.min(b), a.max(b)));
                    }
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        Self::new(main, inter)
    }
}

/// Column range of one term in the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub term: Term,
    pub offset: usize,
    pub width: usize,
}

/// Which factor of the block-diagonal metric to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricFactor {
    Gram,
    Sqrt,
    InvSqrt,
}

/// Block-diagonal metric: the univariate Gram matrix on main blocks and the
/// tensor-product Gram matrix on interaction blocks.
#[derive(Debug, Clone)]
pub struct BlockMetric {
    blocks: Vec<Block>,
    gram: DMatrix<f64>,
    gram_sqrt: DMatrix<f64>,
    gram_inv_sqrt: DMatrix<f64>,
    tensor: Option<TensorMetric>,
}

impl BlockMetric {
    pub fn new(blocks: Vec<Block>, basis: &BasisSystem) -> Self {
        let has_inter = blocks.iter().any(|b| matches!(b.term, Term::Inter(..)));
        Self {
            blocks,
            gram: basis.gram().clone(),
            gram_sqrt: basis.gram_sqrt().clone(),
            gram_inv_sqrt: basis.gram_inv_sqrt().clone(),
            tensor: has_inter.then(|| tensor_metric(basis)),
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.width)
    }

    fn univariate(&self, which: MetricFactor) -> &DMatrix<f64> {
        match which {
            MetricFactor::Gram => &self.gram,
            MetricFactor::Sqrt => &self.gram_sqrt,
            MetricFactor::InvSqrt => &self.gram_inv_sqrt,
        }
    }

    /// Right-multiplies `x` (rows × P) by the chosen block-diagonal factor.
    ///
    /// Interaction blocks use `vec(R)ᵀ (S ⊗ S) = vec(S R S)ᵀ` for symmetric S,
    /// so the K²×K² Kronecker factor is never formed.
    pub fn right_apply(&self, x: &DMatrix<f64>, which: MetricFactor) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.dim(), "metric dimension mismatch");
        let s = self.univariate(which);
        let k = s.nrows();
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for block in &self.blocks {
            let cols = x.columns(block.offset, block.width);
            match block.term {
                Term::Main(_) => {
                    out.columns_mut(block.offset, block.width)
                        .copy_from(&(cols * s));
                }
                Term::Inter(..) => {
                    for row in 0..x.nrows() {
                        // row-major K×K reshape: entry (j, l) at j*K + l
                        let r = DMatrix::from_fn(k, k, |j, l| cols[(row, j * k + l)]);
                        let srs = s * r * s;
                        for j in 0..k {
                            for l in 0..k {
                                out[(row, block.offset + j * k + l)] = srs[(j, l)];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Dense P×P matrix of the chosen factor.
    pub fn dense(&self, which: MetricFactor) -> DMatrix<f64> {
        let p = self.dim();
        let mut out = DMatrix::zeros(p, p);
        let s = self.univariate(which);
        let s2 = kron(s, s);
        for block in &self.blocks {
            let m = match block.term {
                Term::Main(_) => s,
                Term::Inter(..) => &s2,
            };
            out.view_mut((block.offset, block.offset), (block.width, block.width))
                .copy_from(m);
        }
        out
    }

    pub fn tensor(&self) -> Option<&TensorMetric> {
        self.tensor.as_ref()
    }
}

/// Means subtracted from training data, reused for new curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCentering {
    /// Pointwise mean curve of every predictor in the training list.
    pub x_means: Vec<Vec<f64>>,
    /// Column means of each interaction block's uncentered product coefficients.
    pub inter_means: Vec<Vec<f64>>,
}

/// Design matrix of per-curve basis coefficients with its block metric.
#[derive(Debug, Clone)]
pub struct StackedDesign {
    terms: TermSet,
    basis_x: BasisSystem,
    blocks: Vec<Block>,
    d: DMatrix<f64>,
    metric: BlockMetric,
    centering: DesignCentering,
}

pub(crate) fn build_blocks(terms: &TermSet, k: usize) -> Vec<Block> {
    let mut offset = 0;
    terms
        .terms()
        .into_iter()
        .map(|term| {
            let width = match term {
                Term::Main(_) => k,
                Term::Inter(..) => k * k,
            };
            let b = Block {
                term,
                offset,
                width,
            };
            offset += width;
            b
        })
        .collect()
}

fn check_grids(predictors: &[FunctionalSample], grid: &Grid) -> Result<usize> {
    let n = predictors
        .first()
        .ok_or_else(|| FofError::InvalidInput("no predictors supplied".into()))?
        .n_curves();
    for (i, x) in predictors.iter().enumerate() {
        if x.grid() != grid {
            return Err(FofError::GridMismatch(format!(
                "predictor {} ({}) is not on the basis grid",
                i + 1,
                x.label()
            )));
        }
        if x.n_curves() != n {
            return Err(FofError::ShapeMismatch(format!(
                "predictor {} has {} curves, expected {n}",
                i + 1,
                x.n_curves()
            )));
        }
    }
    Ok(n)
}

/// Uncentered coefficients of every predictor referenced by `terms`.
fn raw_coefficients(
    predictors: &[FunctionalSample],
    terms: &TermSet,
    basis: &BasisSystem,
) -> Result<Vec<Option<DMatrix<f64>>>> {
    let mut used = vec![false; predictors.len()];
    for t in terms.terms() {
        match t {
            Term::Main(m) => used[m - 1] = true,
            Term::Inter(m, n) => {
                used[m - 1] = true;
                used[n - 1] = true;
            }
        }
    }
    predictors
        .iter()
        .zip(used)
        .map(|(x, u)| u.then(|| basis.project_rows(x.values())).transpose())
        .collect()
}

fn product_block(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.ncols();
    DMatrix::from_fn(a.nrows(), k * k, |i, c| a[(i, c / k)] * b[(i, c % k)])
}

fn assemble(
    coefs: &[Option<DMatrix<f64>>],
    mean_coefs: &[Option<DVector<f64>>],
    inter_means: &[DVector<f64>],
    blocks: &[Block],
    n: usize,
) -> DMatrix<f64> {
    let p = blocks.last().map_or(0, |b| b.offset + b.width);
    let mut d = DMatrix::zeros(n, p);
    let mut inter_idx = 0;
    for block in blocks {
        let mut cols = d.columns_mut(block.offset, block.width);
        match block.term {
            Term::Main(m) => {
                let a = coefs[m - 1]
                    .as_ref()
                    .expect("coefficients computed for used predictor");
                let mu = mean_coefs[m - 1]
                    .as_ref()
                    .expect("mean computed for used predictor");
                for i in 0..n {
                    for j in 0..block.width {
                        cols[(i, j)] = a[(i, j)] - mu[j];
                    }
                }
            }
            Term::Inter(m, q) => {
                let a = coefs[m - 1].as_ref().expect("coefficients computed");
                let b = coefs[q - 1].as_ref().expect("coefficients computed");
                let prod = product_block(a, b);
                let mu = &inter_means[inter_idx];
                inter_idx += 1;
                for i in 0..n {
                    for j in 0..block.width {
                        cols[(i, j)] = prod[(i, j)] - mu[j];
                    }
                }
            }
        }
    }
    d
}

fn mean_coefficients(
    x_means: &[Vec<f64>],
    coefs: &[Option<DMatrix<f64>>],
    basis: &BasisSystem,
) -> Result<Vec<Option<DVector<f64>>>> {
    let proj = basis.projector()?;
    Ok(x_means
        .iter()
        .zip(coefs)
        .map(|(mean, c)| c.as_ref().map(|_| proj * DVector::from_column_slice(mean)))
        .collect())
}

/// Builds the stacked design for `terms` from the training predictors.
pub fn build_design(
    predictors: &[FunctionalSample],
    terms: &TermSet,
    basis_x: &BasisSystem,
) -> Result<StackedDesign> {
    let n = check_grids(predictors, basis_x.grid())?;
    terms.validate(predictors.len())?;
    let blocks = build_blocks(terms, basis_x.k());
    let coefs = raw_coefficients(predictors, terms, basis_x)?;
    let x_means: Vec<Vec<f64>> = predictors
        .iter()
        .map(|x| x.mean_curve().as_slice().to_vec())
        .collect();
    let mean_coefs = mean_coefficients(&x_means, &coefs, basis_x)?;
    let inter_means: Vec<DVector<f64>> = terms
        .inter()
        .iter()
        .map(|&(m, q)| {
            let a = coefs[m - 1].as_ref().expect("coefficients computed");
            let b = coefs[q - 1].as_ref().expect("coefficients computed");
            product_block(a, b).row_mean().transpose()
        })
        .collect();
    let d = assemble(&coefs, &mean_coefs, &inter_means, &blocks, n);
    let metric = BlockMetric::new(blocks.clone(), basis_x);
    Ok(StackedDesign {
        terms: terms.clone(),
        basis_x: basis_x.clone(),
        blocks,
        d,
        metric,
        centering: DesignCentering {
            x_means,
            inter_means: inter_means.iter().map(|v| v.as_slice().to_vec()).collect(),
        },
    })
}

/// Design rows for new curves, centered with the training means.
pub fn design_columns_for_new(
    x_new: &[FunctionalSample],
    design: &StackedDesign,
) -> Result<DMatrix<f64>> {
    design_rows(x_new, &design.terms, &design.basis_x, &design.centering)
}

pub(crate) fn design_rows(
    x_new: &[FunctionalSample],
    terms: &TermSet,
    basis_x: &BasisSystem,
    centering: &DesignCentering,
) -> Result<DMatrix<f64>> {
    if x_new.len() != centering.x_means.len() {
        return Err(FofError::DesignMismatch(format!(
            "expected {} predictors, got {}",
            centering.x_means.len(),
            x_new.len()
        )));
    }
    let n = check_grids(x_new, basis_x.grid())?;
    let blocks = build_blocks(terms, basis_x.k());
    let coefs = raw_coefficients(x_new, terms, basis_x)?;
    let mean_coefs = mean_coefficients(&centering.x_means, &coefs, basis_x)?;
    let inter_means: Vec<DVector<f64>> = centering
        .inter_means
        .iter()
        .map(|v| DVector::from_column_slice(v))
        .collect();
    Ok(assemble(&coefs, &mean_coefs, &inter_means, &blocks, n))
}

impl StackedDesign {
    pub fn terms(&self) -> &TermSet {
        &self.terms
    }

    pub fn basis_x(&self) -> &BasisSystem {
        &self.basis_x
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// N×P design matrix.
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn metric(&self) -> &BlockMetric {
        &self.metric
    }

    pub fn centering(&self) -> &DesignCentering {
        &self.centering
    }

    pub fn n_curves(&self) -> usize {
        self.d.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.d.ncols()
    }
}
