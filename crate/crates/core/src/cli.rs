//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::basis::{BasisSpec, BasisSystem, Grid};
use crate::design::{FunctionalSample, TermSet};
use crate::error::{FofError, Result};
use crate::io;
use crate::pls::{FittedModel, PlsOptions};
use crate::selection::{
    effective_components, select_basis_counts, select_components, select_model, BasisChoice,
    ComponentSelection, SelectionCriterion, DEFAULT_H_FIXED,
};
use crate::sim::{run_benchmark, simulate, BenchmarkConfig, ModelKind, Setting, SimConfig};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "FOFPLS_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fofpls",
    version,
    about = "PLS function-on-function regression with quadratic and interaction effects"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset as CSV files.
    Simulate(SimulateArgs),
    /// Fit a model and write the archive, fitted curves and coefficient surfaces.
    Fit(FitArgs),
    /// Run forward term selection and write the selection trace.
    Select(SelectArgs),
    /// Predict response curves for new predictors with a saved model.
    Predict(PredictArgs),
    /// Run the Monte-Carlo comparison of model variants.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub setting: u8,
    #[arg(long, default_value_t = 2)]
    pub lag: usize,
    /// Number of curves.
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Number of grid points.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the response noise.
    #[arg(long, default_value_t = 2.0)]
    pub noise_eps: f64,
    /// Standard deviation of the predictor noise.
    #[arg(long, default_value_t = 2.0)]
    pub noise_u: f64,
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig> {
        let config = SimConfig {
            setting: Setting::try_from(self.setting)?,
            lag: self.lag,
            n_curves: self.n,
            grid_len: self.grid,
            noise_sd_eps: self.noise_eps,
            noise_sd_u: self.noise_u,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    /// Response basis size; searched over --ky-candidates when omitted.
    #[arg(long)]
    pub ky: Option<usize>,
    /// Predictor basis size; searched over --kx-candidates when omitted.
    #[arg(long)]
    pub kx: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10")]
    pub ky_candidates: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10,15")]
    pub kx_candidates: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Components used while comparing basis sizes and terms.
    #[arg(long, default_value_t = DEFAULT_H_FIXED)]
    pub h_fixed: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory holding y.csv and x1.csv, x2.csv, ...
    #[arg(long)]
    pub data_dir: PathBuf,
    /// `main`, `full`, or a list such as `main=2,3;inter=2:2,3:4`.
    #[arg(long, default_value = "main")]
    pub terms: String,
    #[command(flatten)]
    pub basis: BasisArgs,
    /// Number of components; chosen on a random half split when omitted.
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub h_max: usize,
    /// Seed of the split used to choose the number of components.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid size for the reconstructed surfaces.
    #[arg(long, default_value_t = 25)]
    pub eval_grid: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[command(flatten)]
    pub basis: BasisArgs,
    /// Score for comparing candidates: `training` MSE or `holdout` MSPE on a seeded half split.
    #[arg(long, default_value = "training", value_parser = ["training", "holdout"])]
    pub criterion: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model archive written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding x1.csv, x2.csv, ...
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "main,full,true,selected")]
    pub models: Vec<ModelKind>,
    /// Training curves per replicate; the remaining curves form the test set.
    #[arg(long, default_value_t = 100)]
    pub n_train: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10")]
    pub ky_candidates: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10,15")]
    pub kx_candidates: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    #[arg(long, default_value_t = DEFAULT_H_FIXED)]
    pub h_fixed: usize,
    #[arg(long, default_value_t = 10)]
    pub h_max: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// `main`, `full`, or a [`TermSet`] string, validated against `m_total` predictors.
pub fn parse_terms(spec: &str, m_total: usize) -> Result<TermSet> {
    let terms = match spec.trim() {
        "main" => TermSet::main_effects(m_total),
        "full" => TermSet::full(m_total),
        other => other.parse()?,
    };
    terms.validate(m_total)?;
    Ok(terms)
}

struct Data {
    y: FunctionalSample,
    xs: Vec<FunctionalSample>,
}

fn read_data(dir: &Path) -> Result<Data> {
    let y = io::read_curves(&dir.join("y.csv"), "y")?;
    let xs = io::read_predictors(dir)?;
    if let Some(x) = xs.iter().find(|x| x.n_curves() != y.n_curves()) {
        return Err(FofError::ShapeMismatch(format!(
            "{} has {} curves, y has {}",
            x.label(),
            x.n_curves(),
            y.n_curves()
        )));
    }
    Ok(Data { y, xs })
}

fn resolve_bases(
    data: &Data,
    terms: &TermSet,
    b: &BasisArgs,
) -> Result<(BasisSystem, BasisSystem, Option<BasisChoice>)> {
    let ky = b.ky.map_or_else(|| b.ky_candidates.clone(), |k| vec![k]);
    let kx = b.kx.map_or_else(|| b.kx_candidates.clone(), |k| vec![k]);
    let choice = if ky.len() == 1 && kx.len() == 1 {
        None
    } else {
        Some(select_basis_counts(
            &data.y, &data.xs, terms, &ky, &kx, b.order, b.h_fixed,
        )?)
    };
    let (k_y, k_x) = choice.as_ref().map_or((ky[0], kx[0]), |c| (c.k_y, c.k_x));
    let bx = BasisSystem::new(
        BasisSpec {
            k: k_x,
            order: b.order,
        },
        data.xs[0].grid(),
    )?;
    let by = BasisSystem::new(
        BasisSpec {
            k: k_y,
            order: b.order,
        },
        data.y.grid(),
    )?;
    Ok((bx, by, choice))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let data = simulate(&a.sim.config()?)?;
    let files = io::write_dataset(&a.out_dir, &data)?;
    println!("wrote {} files to {}", files.len(), a.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct FitSummary<'a> {
    terms: String,
    k_y: usize,
    k_x: usize,
    h: usize,
    train_mse: f64,
    basis_choice: Option<&'a BasisChoice>,
    components: Option<&'a ComponentSelection>,
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let data = read_data(&a.data_dir)?;
    let terms = parse_terms(&a.terms, data.xs.len())?;
    let (bx, by, choice) = resolve_bases(&data, &terms, &a.basis)?;
    let comps = match a.h {
        Some(_) => None,
        None => Some(select_components(
            &data.y, &data.xs, &terms, &bx, &by, a.h_max, a.seed,
        )?),
    };
    let h = match (a.h, &comps) {
        (Some(h), _) => h,
        (None, Some(c)) => effective_components(c.h_opt, data.y.n_curves(), usize::MAX),
        (None, None) => unreachable!(),
    };
    let model = FittedModel::fit(
        &data.y,
        &data.xs,
        &terms,
        &bx,
        &by,
        h,
        &PlsOptions::default(),
    )?;
    info!(
        "fitted {} with K_Y={} K_X={} h={}",
        terms,
        by.k(),
        bx.k(),
        h
    );

    io::save_model(&a.out_dir.join("model.json"), &model)?;
    io::write_matrix_curves(&a.out_dir.join("fitted.csv"), data.y.grid(), model.fitted())?;
    let g = Grid::uniform(a.eval_grid)?;
    io::write_surfaces(
        &a.out_dir.join("surfaces.csv"),
        &model.reconstruct_surfaces(&g, &g, &g),
    )?;
    let summary = FitSummary {
        terms: terms.to_string(),
        k_y: by.k(),
        k_x: bx.k(),
        h: model.n_components(),
        train_mse: model.train_mse(),
        basis_choice: choice.as_ref(),
        components: comps.as_ref(),
    };
    io::write_json(&a.out_dir.join("fit_summary.json"), &summary)?;
    println!(
        "terms {}  K_Y {}  K_X {}  h {}  training MSE {:.6}",
        summary.terms, summary.k_y, summary.k_x, summary.h, summary.train_mse
    );
    Ok(())
}

fn cmd_select(a: &SelectArgs) -> Result<()> {
    let data = read_data(&a.data_dir)?;
    let b = &a.basis;
    let ky = b.ky.map_or_else(|| b.ky_candidates.clone(), |k| vec![k]);
    let kx = b.kx.map_or_else(|| b.kx_candidates.clone(), |k| vec![k]);
    let criterion = match a.criterion.as_str() {
        "holdout" => SelectionCriterion::HoldoutMspe { seed: a.seed },
        _ => SelectionCriterion::TrainingMse,
    };
    let out = select_model(&data.y, &data.xs, &ky, &kx, b.order, b.h_fixed, criterion)?;
    io::write_json(&a.out_dir.join("selection.json"), &out)?;
    println!(
        "K_Y {}  K_X {}  selected {}",
        out.basis.k_y, out.basis.k_x, out.terms
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let xs = io::read_predictors(&a.data_dir)?;
    let pred = model.predict(&xs)?;
    io::write_matrix_curves(
        &a.out_dir.join("predicted.csv"),
        model.basis_y().grid(),
        &pred,
    )?;
    println!("predicted {} curves", pred.nrows());
    Ok(())
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    let cfg = BenchmarkConfig {
        sim: a.sim.config()?,
        models: a.models.clone(),
        reps: a.reps,
        n_train: a.n_train,
        ky_candidates: a.ky_candidates.clone(),
        kx_candidates: a.kx_candidates.clone(),
        order: a.order,
        h_fixed: a.h_fixed,
        h_max: a.h_max,
    };
    let report = run_benchmark(&cfg)?;
    io::write_atomic(
        &a.out_dir.join("report.csv"),
        io::report_csv(&report).as_bytes(),
    )?;
    let text = io::report_text(&report);
    io::write_atomic(&a.out_dir.join("report.txt"), text.as_bytes())?;
    io::write_json(&a.out_dir.join("replicates.json"), &report.replicates)?;
    print!("{text}");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Select(a) => cmd_select(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

fn thread_count() -> std::result::Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            )),
        },
    }
}

/// Parses arguments and runs the command; returns the process exit code.
///
/// 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = match thread_count() {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(FofError::InvalidConfiguration(e.to_string())),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
