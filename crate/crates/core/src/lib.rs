//! Partial least squares estimation of function-on-function regression with
//! quadratic and interaction effects.
//!
//! Curves are projected onto B-spline bases, the predictor coefficients of
//! main effects and of pairwise product surfaces are stacked into one design,
//! and NIPALS runs on the metric-weighted coefficients. The fitted regression
//! matrix maps back to coefficient surfaces β̂_m(s,t) and γ̂_mn(s,r,t).

pub mod basis;
pub mod cli;
pub mod design;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pls;
pub mod selection;
pub mod sim;

pub use basis::{
    make_bspline_basis, project_curve, symmetric_sqrt, tensor_metric, BasisSpec, BasisSystem, Grid,
    TensorMetric,
};
pub use design::{
    build_design, center_sample, design_columns_for_new, FunctionalSample, StackedDesign, Term,
    TermSet,
};
pub use error::{FofError, Result};
pub use io::{load_model, save_model, CurveTable, ModelArchive};
pub use metrics::{
    mape, mse, mspe, r2, r2_pred, relative_metrics_masked, rmspe, CurveNorm, MaskedRelative,
};
pub use pls::{
    nipals, nipals_fit, reconstruct_surfaces, CoefficientSurfaces, FittedModel, PlsFit, PlsOptions,
    PreparedResponse,
};
pub use selection::{
    forward_select_interactions, forward_select_main, select_basis_counts, select_components,
    select_model, BasisChoice, ComponentSelection, ModelSelection, SelectionCriterion,
    SelectionTrace,
};
pub use sim::{
    run_benchmark, simulate, BenchmarkConfig, BenchmarkReport, ModelKind, Setting, SimConfig,
    SimDataset,
};
