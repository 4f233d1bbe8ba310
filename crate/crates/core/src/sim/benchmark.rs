//! Monte-Carlo comparison of model variants on simulated data.

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{replicate_seed, simulate, ModelKind, SimConfig, SimDataset, N_PREDICTORS};
use crate::basis::{BasisSpec, BasisSystem};
use crate::design::{FunctionalSample, TermSet};
use crate::error::{FofError, Result};
use crate::metrics::{mspe, relative_metrics_masked, CurveNorm};
use crate::pls::{FittedModel, PlsOptions};
use crate::selection::{
    effective_components, select_basis_counts, select_components, select_model, SelectionCriterion,
    DEFAULT_H_FIXED,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// Per-replicate data settings; `seed` is the master seed.
    pub sim: SimConfig,
    pub models: Vec<ModelKind>,
    pub reps: usize,
    /// Curves used for fitting; the rest are the test set.
    pub n_train: usize,
    pub ky_candidates: Vec<usize>,
    pub kx_candidates: Vec<usize>,
    pub order: usize,
    pub h_fixed: usize,
    pub h_max: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            models: vec![
                ModelKind::Main,
                ModelKind::Full,
                ModelKind::True,
                ModelKind::Selected,
            ],
            reps: 50,
            n_train: 100,
            ky_candidates: vec![4, 6, 8, 10],
            kx_candidates: vec![4, 6, 8, 10, 15],
            order: 4,
            h_fixed: DEFAULT_H_FIXED,
            h_max: 10,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.reps == 0 {
            return Err(FofError::InvalidConfiguration("reps must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(FofError::InvalidConfiguration("no models requested".into()));
        }
        if self.n_train < 4 || self.n_train >= self.sim.n_curves {
            return Err(FofError::InvalidConfiguration(format!(
                "n_train = {} must be in [4, n_curves = {})",
                self.n_train, self.sim.n_curves
            )));
        }
        if self.h_fixed == 0 || self.h_max == 0 {
            return Err(FofError::InvalidConfiguration(
                "component counts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Test-set performance of one model on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub model: ModelKind,
    pub terms: TermSet,
    pub k_y: usize,
    pub k_x: usize,
    pub h: usize,
    pub mspe: f64,
    pub rmspe: f64,
    pub mape: f64,
    pub masked_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub variants: Vec<VariantResult>,
}

/// Mean and sample standard deviation over replicates for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelKind,
    pub reps: usize,
    pub mspe: f64,
    pub mspe_se: f64,
    pub rmspe: f64,
    pub rmspe_se: f64,
    pub mape: f64,
    pub mape_se: f64,
    pub mean_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub rows: Vec<ReportRow>,
    pub replicates: Vec<ReplicateResult>,
}

impl BenchmarkReport {
    pub fn row(&self, model: ModelKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Split {
    x_train: Vec<FunctionalSample>,
    y_train: FunctionalSample,
    x_test: Vec<FunctionalSample>,
    y_test_signal: FunctionalSample,
}

fn split(data: &SimDataset, n_train: usize) -> Split {
    let n = data.y_observed.n_curves();
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..n).collect();
    Split {
        x_train: data.x_noisy.iter().map(|x| x.select_rows(&train)).collect(),
        y_train: data.y_observed.select_rows(&train),
        x_test: data.x_noisy.iter().map(|x| x.select_rows(&test)).collect(),
        y_test_signal: data.y_signal.select_rows(&test),
    }
}

fn choose_terms(kind: ModelKind, cfg: &BenchmarkConfig, s: &Split) -> Result<TermSet> {
    Ok(match kind {
        ModelKind::Main => TermSet::main_effects(N_PREDICTORS),
        ModelKind::Full => TermSet::full(N_PREDICTORS),
        ModelKind::True => cfg.sim.setting.true_terms(),
        ModelKind::Selected => {
            select_model(
                &s.y_train,
                &s.x_train,
                &cfg.ky_candidates,
                &cfg.kx_candidates,
                cfg.order,
                cfg.h_fixed,
                SelectionCriterion::TrainingMse,
            )?
            .terms
        }
    })
}

/// Selects basis sizes and components for one variant, fits on the training set
/// and scores predictions against the noise-free test responses.
fn fit_variant(
    kind: ModelKind,
    cfg: &BenchmarkConfig,
    s: &Split,
    seed: u64,
) -> Result<VariantResult> {
    let terms = choose_terms(kind, cfg, s)?;
    let norm = CurveNorm::trapezoid(s.y_test_signal.grid());
    if terms.is_empty() {
        let mean = s.y_train.mean_curve();
        let pred =
            nalgebra::DMatrix::from_fn(s.y_test_signal.n_curves(), mean.len(), |_, j| mean[j]);
        let rel = relative_metrics_masked(s.y_test_signal.values(), &pred, &norm)?;
        return Ok(VariantResult {
            model: kind,
            terms,
            k_y: 0,
            k_x: 0,
            h: 0,
            mspe: mspe(s.y_test_signal.values(), &pred, &norm)?,
            rmspe: rel.rmspe,
            mape: rel.mape,
            masked_cells: rel.masked,
        });
    }
    let b = select_basis_counts(
        &s.y_train,
        &s.x_train,
        &terms,
        &cfg.ky_candidates,
        &cfg.kx_candidates,
        cfg.order,
        cfg.h_fixed,
    )?;
    let bx = BasisSystem::new(
        BasisSpec {
            k: b.k_x,
            order: cfg.order,
        },
        s.x_train[0].grid(),
    )?;
    let by = BasisSystem::new(
        BasisSpec {
            k: b.k_y,
            order: cfg.order,
        },
        s.y_train.grid(),
    )?;
    let comps = select_components(&s.y_train, &s.x_train, &terms, &bx, &by, cfg.h_max, seed)?;
    let h = effective_components(comps.h_opt, s.y_train.n_curves(), usize::MAX);
    let opts = PlsOptions {
        stop_at_exhaustion: true,
        ..PlsOptions::default()
    };
    let model = FittedModel::fit(&s.y_train, &s.x_train, &terms, &bx, &by, h, &opts)?;
    let pred = model.predict(&s.x_test)?;
    let rel = relative_metrics_masked(s.y_test_signal.values(), &pred, &norm)?;
    let out = VariantResult {
        model: kind,
        terms,
        k_y: b.k_y,
        k_x: b.k_x,
        h: model.n_components(),
        mspe: mspe(s.y_test_signal.values(), &pred, &norm)?,
        rmspe: rel.rmspe,
        mape: rel.mape,
        masked_cells: rel.masked,
    };
    debug!(
        "{kind}: terms {} K_Y={} K_X={} h={} MSPE={:.4}",
        out.terms, out.k_y, out.k_x, out.h, out.mspe
    );
    Ok(out)
}

/// Runs one replicate: simulate, split, then fit every requested model.
pub fn run_replicate(cfg: &BenchmarkConfig, replicate: usize) -> Result<ReplicateResult> {
    let seed = replicate_seed(cfg.sim.seed, replicate);
    let tag = |e: FofError| FofError::Replicate {
        replicate,
        source: Box::new(e),
    };
    let sim = SimConfig {
        seed,
        ..cfg.sim.clone()
    };
    let data = simulate(&sim).map_err(tag)?;
    let s = split(&data, cfg.n_train);
    let variants = cfg
        .models
        .iter()
        .map(|&kind| fit_variant(kind, cfg, &s, seed))
        .collect::<Result<Vec<_>>>()
        .map_err(tag)?;
    Ok(ReplicateResult {
        replicate,
        seed,
        variants,
    })
}

pub fn summarize(cfg: &BenchmarkConfig, replicates: &[ReplicateResult]) -> Vec<ReportRow> {
    cfg.models
        .iter()
        .enumerate()
        .map(|(i, &model)| {
            let col = |f: fn(&VariantResult) -> f64| -> Vec<f64> {
                replicates.iter().map(|r| f(&r.variants[i])).collect()
            };
            let (mspe, mspe_se) = mean_sd(&col(|v| v.mspe));
            let (rmspe, rmspe_se) = mean_sd(&col(|v| v.rmspe));
            let (mape, mape_se) = mean_sd(&col(|v| v.mape));
            let (mean_h, _) = mean_sd(&col(|v| v.h as f64));
            ReportRow {
                model,
                reps: replicates.len(),
                mspe,
                mspe_se,
                rmspe,
                rmspe_se,
                mape,
                mape_se,
                mean_h,
            }
        })
        .collect()
}

/// Runs all replicates in parallel; results are ordered by replicate index.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let replicates: Vec<ReplicateResult> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let out = run_replicate(cfg, r);
            if out.is_ok() {
                info!("replicate {r} done");
            }
            out
        })
        .collect::<Result<_>>()?;
    let rows = summarize(cfg, &replicates);
    Ok(BenchmarkReport {
        config: cfg.clone(),
        rows,
        replicates,
    })
}
