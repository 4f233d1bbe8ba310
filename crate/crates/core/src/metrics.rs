//! Curve-level error metrics with L2 norms approximated by trapezoid sums.

use nalgebra::{DMatrix, DVector};

use crate::basis::Grid;
use crate::error::{FofError, Result};

/// Smallest |y_true| accepted as a denominator in relative metrics.
pub const RELATIVE_GUARD: f64 = 1e-8;

/// Quadrature weights for squared L2 norms of curves on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveNorm {
    weights: DVector<f64>,
}

impl CurveNorm {
    pub fn trapezoid(grid: &Grid) -> Self {
        Self {
            weights: DVector::from_vec(grid.trapezoid_weights()),
        }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// ∫ f(t)² dt for a curve sampled on the grid.
    pub fn squared<'a>(&self, values: impl IntoIterator<Item = &'a f64>) -> f64 {
        values
            .into_iter()
            .zip(self.weights.iter())
            .map(|(v, w)| w * v * v)
            .sum()
    }

    fn row_sq(&self, m: &DMatrix<f64>, row: usize) -> f64 {
        (0..m.ncols())
            .map(|j| self.weights[j] * m[(row, j)] * m[(row, j)])
            .sum()
    }
}

fn check(a: &DMatrix<f64>, b: &DMatrix<f64>, norm: &CurveNorm) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(FofError::ShapeMismatch(format!(
            "curves are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.ncols() != norm.weights.len() {
        return Err(FofError::ShapeMismatch(format!(
            "curves have {} points, norm has {}",
            a.ncols(),
            norm.weights.len()
        )));
    }
    if a.nrows() == 0 {
        return Err(FofError::ShapeMismatch("no curves".into()));
    }
    Ok(())
}

/// Mean over curves of ‖y_true − y_fit‖².
pub fn mse(y_true: &DMatrix<f64>, y_fit: &DMatrix<f64>, norm: &CurveNorm) -> Result<f64> {
    check(y_true, y_fit, norm)?;
    let diff = y_fit - y_true;
    let total: f64 = (0..diff.nrows()).map(|i| norm.row_sq(&diff, i)).sum();
    Ok(total / diff.nrows() as f64)
}

/// Mean squared prediction error; same functional as [`mse`] on held-out curves.
pub fn mspe(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>, norm: &CurveNorm) -> Result<f64> {
    mse(y_true, y_pred, norm)
}

fn relative_errors(
    y_true: &DMatrix<f64>,
    y_pred: &DMatrix<f64>,
    norm: &CurveNorm,
) -> Result<DMatrix<f64>> {
    check(y_true, y_pred, norm)?;
    let mut rel = DMatrix::zeros(y_true.nrows(), y_true.ncols());
    for i in 0..y_true.nrows() {
        for j in 0..y_true.ncols() {
            let denom = y_true[(i, j)];
            if denom.abs() < RELATIVE_GUARD {
                return Err(FofError::NearZeroDenominator { curve: i, point: j });
            }
            rel[(i, j)] = (y_pred[(i, j)] - denom) / denom;
        }
    }
    Ok(rel)
}

/// Square root of the mean squared L2 norm of the relative error curve.
pub fn rmspe(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>, norm: &CurveNorm) -> Result<f64> {
    let rel = relative_errors(y_true, y_pred, norm)?;
    let total: f64 = (0..rel.nrows()).map(|i| norm.row_sq(&rel, i)).sum();
    Ok((total / rel.nrows() as f64).sqrt())
}

/// Mean L2 norm of the absolute relative error curve.
pub fn mape(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>, norm: &CurveNorm) -> Result<f64> {
    let rel = relative_errors(y_true, y_pred, norm)?;
    let total: f64 = (0..rel.nrows()).map(|i| norm.row_sq(&rel, i).sqrt()).sum();
    Ok(total / rel.nrows() as f64)
}

/// RMSPE and MAPE with near-zero denominators dropped from the quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedRelative {
    pub rmspe: f64,
    pub mape: f64,
    /// Number of (curve, point) cells excluded because |y_true| < [`RELATIVE_GUARD`].
    pub masked: usize,
}

pub fn relative_metrics_masked(
    y_true: &DMatrix<f64>,
    y_pred: &DMatrix<f64>,
    norm: &CurveNorm,
) -> Result<MaskedRelative> {
    check(y_true, y_pred, norm)?;
    let mut masked = 0;
    let mut sq_total = 0.0;
    let mut abs_total = 0.0;
    for i in 0..y_true.nrows() {
        let mut sq = 0.0;
        for j in 0..y_true.ncols() {
            let denom = y_true[(i, j)];
            if denom.abs() < RELATIVE_GUARD {
                masked += 1;
                continue;
            }
            let rel = (y_pred[(i, j)] - denom) / denom;
            sq += norm.weights[j] * rel * rel;
        }
        sq_total += sq;
        abs_total += sq.sqrt();
    }
    let n = y_true.nrows() as f64;
    Ok(MaskedRelative {
        rmspe: (sq_total / n).sqrt(),
        mape: abs_total / n,
        masked,
    })
}

/// Coefficient of determination 1 − Σ‖ŷ − y‖² / Σ‖y − ȳ‖².
pub fn r2(y_obs: &DMatrix<f64>, y_hat: &DMatrix<f64>, norm: &CurveNorm) -> Result<f64> {
    check(y_obs, y_hat, norm)?;
    if y_obs.nrows() < 2 {
        return Err(FofError::InsufficientData(
            "R² needs at least 2 curves".into(),
        ));
    }
    let mean = y_obs.row_mean();
    let mut dev = y_obs.clone();
    for mut row in dev.row_iter_mut() {
        row -= &mean;
    }
    let diff = y_hat - y_obs;
    let ss_res: f64 = (0..diff.nrows()).map(|i| norm.row_sq(&diff, i)).sum();
    let ss_tot: f64 = (0..dev.nrows()).map(|i| norm.row_sq(&dev, i)).sum();
    if ss_tot == 0.0 {
        return Err(FofError::UndefinedR2);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Predictive R²: the same functional evaluated on held-out curves and predictions.
pub fn r2_pred(y_obs: &DMatrix<f64>, y_pred: &DMatrix<f64>, norm: &CurveNorm) -> Result<f64> {
    r2(y_obs, y_pred, norm)
}
