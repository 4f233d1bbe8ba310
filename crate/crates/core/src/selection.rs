//! Forward term selection, component-count selection and basis-size search.
//!
//! Main effects enter first, one at a time, each round adding the candidate
//! whose model has the lowest training MSE, for as long as the MSE strictly
//! improves. Quadratic and interaction pairs among the selected main effects
//! are then added the same way. The number of PLS components is chosen on a
//! random half split of the training curves.

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, BasisSystem};
use crate::design::{
    build_design, design_columns_for_new, FunctionalSample, StackedDesign, Term, TermSet,
};
use crate::error::{FofError, Result};
use crate::metrics::{mse, mspe, CurveNorm};
use crate::pls::{FittedModel, PlsOptions, PreparedResponse};

/// Default number of components used while selecting terms and basis sizes.
pub const DEFAULT_H_FIXED: usize = 8;

/// Relative margin a candidate must beat the current MSE by.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub term: Term,
    pub mse: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    /// Every candidate evaluation, in order.
    pub steps: Vec<SelectionStep>,
    pub final_terms: TermSet,
    pub h_fixed: usize,
    /// MSE of the starting model (the mean curve for main-effect selection).
    pub start_mse: f64,
    /// MSE after each accepted term.
    pub mse_path: Vec<f64>,
}

fn selection_opts() -> PlsOptions {
    PlsOptions {
        stop_at_exhaustion: true,
        ..PlsOptions::default()
    }
}

/// Component count actually usable for a design of this size.
pub fn effective_components(h: usize, n_curves: usize, n_columns: usize) -> usize {
    h.min(n_curves.saturating_sub(1)).min(n_columns).max(1)
}

fn fit_fixed(
    design: &StackedDesign,
    response: &PreparedResponse,
    h_fixed: usize,
) -> Result<FittedModel> {
    let h = effective_components(h_fixed, design.n_curves(), design.n_columns());
    FittedModel::fit_prepared(design, response, h, &selection_opts())
}

/// Score used to compare candidate term sets during forward selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SelectionCriterion {
    /// MSE of the fitted curves on all training curves.
    TrainingMse,
    /// MSPE on the second half of a seeded 50/50 split, fitting on the first half.
    HoldoutMspe { seed: u64 },
}

impl Default for SelectionCriterion {
    fn default() -> Self {
        SelectionCriterion::TrainingMse
    }
}

/// Data prepared once for scoring many term sets.
struct Scorer<'a> {
    h_fixed: usize,
    basis_x: &'a BasisSystem,
    norm: CurveNorm,
    fit_x: Vec<FunctionalSample>,
    fit_y: FunctionalSample,
    response: PreparedResponse,
    /// Held-out predictors and responses; `None` scores on the fitting curves.
    holdout: Option<(Vec<FunctionalSample>, FunctionalSample)>,
}

fn half_split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 4 {
        return Err(FofError::InsufficientData(format!(
            "{n} curves cannot be split in half"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = order.split_at(n / 2);
    Ok((a.to_vec(), b.to_vec()))
}

impl<'a> Scorer<'a> {
    fn new(
        y: &FunctionalSample,
        predictors: &[FunctionalSample],
        basis_x: &'a BasisSystem,
        basis_y: &BasisSystem,
        h_fixed: usize,
        criterion: SelectionCriterion,
    ) -> Result<Self> {
        let (fit_x, fit_y, holdout) = match criterion {
            SelectionCriterion::TrainingMse => (predictors.to_vec(), y.clone(), None),
            SelectionCriterion::HoldoutMspe { seed } => {
                let (a, b) = half_split(y.n_curves(), seed)?;
                let xa = predictors.iter().map(|x| x.select_rows(&a)).collect();
                let xb = predictors.iter().map(|x| x.select_rows(&b)).collect();
                (xa, y.select_rows(&a), Some((xb, y.select_rows(&b))))
            }
        };
        let response = PreparedResponse::new(&fit_y, basis_y)?;
        Ok(Self {
            h_fixed,
            basis_x,
            norm: CurveNorm::trapezoid(basis_y.grid()),
            fit_x,
            fit_y,
            response,
            holdout,
        })
    }

    fn score(&self, terms: &TermSet) -> Result<f64> {
        let design = build_design(&self.fit_x, terms, self.basis_x)?;
        let model = fit_fixed(&design, &self.response, self.h_fixed)?;
        match &self.holdout {
            None => Ok(model.train_mse()),
            Some((x_out, y_out)) => {
                let pred = model.predict_design(&design_columns_for_new(x_out, &design)?)?;
                mspe(y_out.values(), &pred, &self.norm)
            }
        }
    }

    /// Score of the model that predicts the mean curve of the fitting curves.
    fn mean_only(&self) -> Result<f64> {
        let mean = self.fit_y.mean_curve();
        let target = self.holdout.as_ref().map_or(&self.fit_y, |(_, y)| y);
        let pred = DMatrix::from_fn(target.n_curves(), mean.len(), |_, j| mean[j]);
        mse(target.values(), &pred, &self.norm)
    }
}

fn improves(candidate: f64, current: f64) -> bool {
    candidate < current - IMPROVEMENT_TOL * current.abs()
}

/// One greedy pass: repeatedly add the best candidate while it strictly improves.
fn greedy<F>(
    start: TermSet,
    start_mse: f64,
    candidates: Vec<Term>,
    h_fixed: usize,
    evaluate: F,
) -> Result<SelectionTrace>
where
    F: Fn(&TermSet) -> Result<f64> + Sync,
{
    let mut current = start;
    let mut current_mse = start_mse;
    let mut remaining = candidates;
    let mut steps = Vec::new();
    let mut mse_path = Vec::new();

    while !remaining.is_empty() {
        let mut trials: Vec<TermSet> = remaining
            .iter()
            .map(|&t| match t {
                Term::Main(m) => current.with_main(m),
                Term::Inter(m, n) => current.with_inter((m, n)),
            })
            .collect::<Result<_>>()?;
        let scores: Vec<f64> = trials.par_iter().map(&evaluate).collect::<Result<_>>()?;

        // candidates are in ascending index order, so the first minimum wins ties
        let best = scores
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |acc, (i, &s)| match acc {
                Some((_, b)) if s >= b => acc,
                _ => Some((i, s)),
            })
            .map(|(i, _)| i)
            .expect("non-empty candidate list");
        let accept = improves(scores[best], current_mse);
        for (i, (&term, &score)) in remaining.iter().zip(&scores).enumerate() {
            steps.push(SelectionStep {
                term,
                mse: score,
                accepted: accept && i == best,
            });
        }
        if !accept {
            break;
        }
        current = trials.swap_remove(best);
        current_mse = scores[best];
        mse_path.push(current_mse);
        remaining.remove(best);
    }

    Ok(SelectionTrace {
        steps,
        final_terms: current,
        h_fixed,
        start_mse,
        mse_path,
    })
}

/// Greedy forward selection of main effects by training MSE.
pub fn forward_select_main(
    y: &FunctionalSample,
    predictors: &[FunctionalSample],
    basis_x: &BasisSystem,
    basis_y: &BasisSystem,
    h_fixed: usize,
) -> Result<SelectionTrace> {
    forward_select_main_with(
        y,
        predictors,
        basis_x,
        basis_y,
        h_fixed,
        SelectionCriterion::TrainingMse,
    )
}

pub fn forward_select_main_with(
    y: &FunctionalSample,
    predictors: &[FunctionalSample],
    basis_x: &BasisSystem,
    basis_y: &BasisSystem,
    h_fixed: usize,
    criterion: SelectionCriterion,
) -> Result<SelectionTrace> {
    if predictors.is_empty() {
        return Err(FofError::InvalidInput(
            "no predictors to select from".into(),
        ));
    }
    if h_fixed == 0 {
        return Err(FofError::InvalidConfiguration(
            "h_fixed must be >= 1".into(),
        ));
    }
    let scorer = Scorer::new(y, predictors, basis_x, basis_y, h_fixed, criterion)?;
    let candidates = (1..=predictors.len()).map(Term::Main).collect();
    greedy(
        TermSet::default(),
        scorer.mean_only()?,
        candidates,
        h_fixed,
        |terms| scorer.score(terms),
    )
}

/// Greedy forward selection of quadratic/interaction pairs among the selected main effects, by training MSE.
pub fn forward_select_interactions(
    y: &FunctionalSample,
    predictors: &[FunctionalSample],
    main_terms: &TermSet,
    basis_x: &BasisSystem,
    basis_y: &BasisSystem,
    h_fixed: usize,
) -> Result<SelectionTrace> {
    forward_select_interactions_with(
        y,
        predictors,
        main_terms,
        basis_x,
        basis_y,
        h_fixed,
        SelectionCriterion::TrainingMse,
    )
}

pub fn forward_select_interactions_with(
    y: &FunctionalSample,
    predictors: &[FunctionalSample],
    main_terms: &TermSet,
    basis_x: &BasisSystem,
    basis_y: &BasisSystem,
    h_fixed: usize,
    criterion: SelectionCriterion,
) -> Result<SelectionTrace> {
    if main_terms.main().is_empty() {
        return Err(FofError::NothingToExtend);
    }
    let mut mains = main_terms.main().to_vec();
    mains.sort_unstable();
    let start = TermSet::new(main_terms.main().to_vec(), main_terms.inter().to_vec())?;
    let candidates: Vec<Term> = interaction_pool(&mains)
        .into_iter()
        .filter(|t| match t {
            Term::Inter(m, n) => !start.inter().contains(&(*m, *n)),
            Term::Main(_) => false,
        })
        .collect();
    let scorer = Scorer::new(y, predictors, basis_x, basis_y, h_fixed, criterion)?;
    let start_mse = scorer.score(&start)?;
    greedy(start, start_mse, candidates, h_fixed, |terms| {
        scorer.score(terms)
    })
}

/// All pairs (m, n), m <= n, drawn from `mains` (sorted ascending).
pub fn interaction_pool(mains: &[usize]) -> Vec<Term> {
    let mut pool = Vec::new();
    for (i, &m) in mains.iter().enumerate() {
        for &n in &mains[i..] {
            pool.push(Term::Inter(m, n));
        }
    }
    pool
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSelection {
    pub h_opt: usize,
    /// Inner-test MSPE for h = 1, 2, ...
    pub mspe_path: Vec<f64>,
}

/// Chooses the component count minimizing MSPE on a seeded 50/50 split of the training curves.
pub fn select_components(
    y_train: &FunctionalSample,
    predictors_train: &[FunctionalSample],
    terms: &TermSet,
    basis_x: &BasisSystem,
    basis_y: &BasisSystem,
    h_max: usize,
    split_seed: u64,
) -> Result<ComponentSelection> {
    if h_max == 0 {
        return Err(FofError::InvalidConfiguration("h_max must be >= 1".into()));
    }
    let (inner_train, inner_test) = half_split(y_train.n_curves(), split_seed)?;

    let x_in: Vec<FunctionalSample> = predictors_train
        .iter()
        .map(|x| x.select_rows(&inner_train))
        .collect();
    let x_out: Vec<FunctionalSample> = predictors_train
        .iter()
        .map(|x| x.select_rows(&inner_test))
        .collect();
    let y_in = y_train.select_rows(&inner_train);
    let y_out = y_train.select_rows(&inner_test);

    let design = build_design(&x_in, terms, basis_x)?;
    let response = PreparedResponse::new(&y_in, basis_y)?;
    let h = effective_components(h_max, design.n_curves(), design.n_columns());
    let model = FittedModel::fit_prepared(&design, &response, h, &selection_opts())?;
    let d_out = design_columns_for_new(&x_out, &design)?;
    let norm = CurveNorm::trapezoid(basis_y.grid());

    let mut mspe_path = Vec::with_capacity(model.n_components());
    for k in 1..=model.n_components() {
        let pred = model.with_components(k)?.predict_design(&d_out)?;
        mspe_path.push(mspe(y_out.values(), &pred, &norm)?);
    }
    let h_opt = mspe_path
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        )
        .0
        + 1;
    Ok(ComponentSelection { h_opt, mspe_path })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisChoice {
    pub k_y: usize,
    pub k_x: usize,
    /// (K_Y, K_X, training MSE) for every evaluated pair.
    pub table: Vec<(usize, usize, f64)>,
}

/// Grid search over basis sizes by training MSE; ties go to the smaller K_X, then K_Y.
#[allow(clippy::too_many_arguments)]
pub fn select_basis_counts(
    y_train: &FunctionalSample,
    predictors_train: &[FunctionalSample],
    terms: &TermSet,
    candidates_y: &[usize],
    candidates_x: &[usize],
    order: usize,
    h_fixed: usize,
) -> Result<BasisChoice> {
    if candidates_y.is_empty() || candidates_x.is_empty() {
        return Err(FofError::InvalidConfiguration(
            "basis candidate lists must be non-empty".into(),
        ));
    }
    let mut ky: Vec<usize> = candidates_y.to_vec();
    let mut kx: Vec<usize> = candidates_x.to_vec();
    ky.sort_unstable();
    ky.dedup();
    kx.sort_unstable();
    kx.dedup();
    let x_grid = predictors_train
        .first()
        .ok_or_else(|| FofError::InvalidInput("no predictors supplied".into()))?
        .grid();

    let responses: Vec<Option<PreparedResponse>> = ky
        .iter()
        .map(|&k| {
            let prepared = BasisSystem::new(BasisSpec { k, order }, y_train.grid())
                .and_then(|b| PreparedResponse::new(y_train, &b));
            match prepared {
                Ok(r) => Some(r),
                Err(e) => {
                    warn!("skipping K_Y = {k}: {e}");
                    None
                }
            }
        })
        .collect();

    let per_kx: Vec<Vec<(usize, usize, f64)>> = kx
        .par_iter()
        .map(|&k_x| {
            let design = BasisSystem::new(BasisSpec { k: k_x, order }, x_grid)
                .and_then(|b| build_design(predictors_train, terms, &b));
            let design = match design {
                Ok(d) => d,
                Err(FofError::UnderdeterminedProjection(msg))
                | Err(FofError::InvalidConfiguration(msg)) => {
                    warn!("skipping K_X = {k_x}: {msg}");
                    return Ok(Vec::new());
                }
                Err(e) => return Err(e),
            };
            let mut rows = Vec::new();
            for response in responses.iter().flatten() {
                let m = fit_fixed(&design, response, h_fixed)?;
                rows.push((response.basis_y().k(), k_x, m.train_mse()));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let table: Vec<(usize, usize, f64)> = per_kx.into_iter().flatten().collect();
    // table is ordered by K_X then K_Y, so strict improvement keeps the smaller sizes on ties
    let best = table
        .iter()
        .fold(None::<&(usize, usize, f64)>, |acc, row| match acc {
            Some(b) if row.2 >= b.2 => acc,
            _ => Some(row),
        })
        .ok_or_else(|| {
            FofError::InvalidConfiguration("every basis candidate was skipped".into())
        })?;
    Ok(BasisChoice {
        k_y: best.0,
        k_x: best.1,
        table: table.clone(),
    })
}

/// Outcome of the full term-selection pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub criterion: SelectionCriterion,
    /// Basis sizes chosen with all main effects in the model.
    pub basis: BasisChoice,
    pub main: SelectionTrace,
    /// Absent when no main effect was selected.
    pub interactions: Option<SelectionTrace>,
    pub terms: TermSet,
}

/// Chooses basis sizes with the main-effects model, then selects main effects
/// and finally quadratic/interaction pairs among them.
#[allow(clippy::too_many_arguments)]
pub fn select_model(
    y: &FunctionalSample,
    predictors: &[FunctionalSample],
    candidates_y: &[usize],
    candidates_x: &[usize],
    order: usize,
    h_fixed: usize,
    criterion: SelectionCriterion,
) -> Result<ModelSelection> {
    let all = TermSet::main_effects(predictors.len());
    let basis = select_basis_counts(
        y,
        predictors,
        &all,
        candidates_y,
        candidates_x,
        order,
        h_fixed,
    )?;
    let x_grid = predictors[0].grid();
    let bx = BasisSystem::new(
        BasisSpec {
            k: basis.k_x,
            order,
        },
        x_grid,
    )?;
    let by = BasisSystem::new(
        BasisSpec {
            k: basis.k_y,
            order,
        },
        y.grid(),
    )?;
    let main = forward_select_main_with(y, predictors, &bx, &by, h_fixed, criterion)?;
    let interactions = if main.final_terms.main().is_empty() {
        None
    } else {
        Some(forward_select_interactions_with(
            y,
            predictors,
            &main.final_terms,
            &bx,
            &by,
            h_fixed,
            criterion,
        )?)
    };
    let terms = interactions
        .as_ref()
        .map_or_else(|| main.final_terms.clone(), |t| t.final_terms.clone());
    Ok(ModelSelection {
        criterion,
        basis,
        main,
        interactions,
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_sizes() {
        assert_eq!(interaction_pool(&[1]), vec![Term::Inter(1, 1)]);
        assert_eq!(interaction_pool(&[2, 3, 4, 5]).len(), 10);
        assert_eq!(interaction_pool(&[1, 2, 3]).len(), 6);
    }

    #[test]
    fn improvement_is_strict() {
        assert!(improves(0.9, 1.0));
        assert!(!improves(1.0, 1.0));
        assert!(!improves(1.0 - 1e-15, 1.0));
    }

    #[test]
    fn effective_components_clamps() {
        assert_eq!(effective_components(8, 100, 4), 4);
        assert_eq!(effective_components(8, 5, 100), 4);
        assert_eq!(effective_components(3, 100, 100), 3);
    }
}
