//! File formats: curve CSVs, model archives, coefficient surfaces and benchmark reports.
//!
//! A curve file has a header `id,<t_1>,...,<t_L>` followed by one row per curve.
//! Numbers are written with Rust's shortest round-trip formatting, so reading a
//! file and writing it back reproduces it exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, BasisSystem, Grid};
use crate::design::{DesignCentering, FunctionalSample, TermSet};
use crate::error::{FofError, Result};
use crate::pls::{CoefficientSurfaces, FittedModel, PlsFit};
use crate::sim::{BenchmarkReport, SimDataset};

pub const FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FofError + '_ {
    move |source| FofError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> FofError {
    FofError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Curves as stored on disk, with the raw abscissae from the header.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub ids: Vec<String>,
    pub abscissae: Vec<f64>,
    /// One row per curve.
    pub values: DMatrix<f64>,
}

impl CurveTable {
    pub fn from_sample(sample: &FunctionalSample) -> Self {
        Self {
            ids: (1..=sample.n_curves()).map(|i| i.to_string()).collect(),
            abscissae: sample.grid().points().to_vec(),
            values: sample.values().clone(),
        }
    }

    /// Converts to a sample on the abscissae rescaled to [0, 1].
    pub fn to_sample(&self, label: &str) -> Result<FunctionalSample> {
        let grid = Grid::standardize(&self.abscissae)?;
        FunctionalSample::new(grid, self.values.clone(), label)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id");
        for a in &self.abscissae {
            write!(out, ",{a}").unwrap();
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for v in self.values.row(i).iter() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| parse_err(path, e.to_string()))?
            .clone();
        if header.len() < 3 {
            return Err(parse_err(
                path,
                "header needs an id column and at least 2 grid points",
            ));
        }
        let abscissae = header
            .iter()
            .skip(1)
            .map(|h| {
                h.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, format!("bad grid value '{h}' in header")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let l = abscissae.len();
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
            if rec.len() != l + 1 {
                return Err(parse_err(
                    path,
                    format!("row {} has {} values, expected {l}", r + 1, rec.len() - 1),
                ));
            }
            ids.push(rec[0].to_string());
            for (c, cell) in rec.iter().skip(1).enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    parse_err(
                        path,
                        format!("row {}, column {}: '{cell}' is not a number", r + 1, c + 2),
                    )
                })?;
                if !v.is_finite() {
                    return Err(parse_err(
                        path,
                        format!("row {}, column {}: non-finite value", r + 1, c + 2),
                    ));
                }
                data.push(v);
            }
        }
        if ids.is_empty() {
            return Err(parse_err(path, "no curves"));
        }
        Ok(Self {
            values: DMatrix::from_row_slice(ids.len(), l, &data),
            ids,
            abscissae,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }
}

pub fn read_curves(path: &Path, label: &str) -> Result<FunctionalSample> {
    CurveTable::read(path)?.to_sample(label)
}

pub fn write_curves(path: &Path, sample: &FunctionalSample) -> Result<()> {
    CurveTable::from_sample(sample).write(path)
}

/// Writes predicted or fitted curves on `grid`.
pub fn write_matrix_curves(path: &Path, grid: &Grid, values: &DMatrix<f64>) -> Result<()> {
    let table = CurveTable {
        ids: (1..=values.nrows()).map(|i| i.to_string()).collect(),
        abscissae: grid.points().to_vec(),
        values: values.clone(),
    };
    table.write(path)
}

/// Reads `x1.csv`, `x2.csv`, ... until the first missing index.
pub fn read_predictors(dir: &Path) -> Result<Vec<FunctionalSample>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("x{}.csv", out.len() + 1));
        if !path.exists() {
            break;
        }
        out.push(read_curves(&path, &format!("x{}", out.len() + 1))?);
    }
    if out.is_empty() {
        return Err(FofError::InvalidInput(format!(
            "no x1.csv found in {}",
            dir.display()
        )));
    }
    let l = out[0].grid().len();
    if let Some(x) = out.iter().find(|x| x.grid().len() != l) {
        return Err(FofError::GridMismatch(format!(
            "{} has {} points, x1 has {l}",
            x.label(),
            x.grid().len()
        )));
    }
    Ok(out)
}

pub fn dataset_files(n_predictors: usize) -> Vec<String> {
    let mut names = vec!["y.csv".to_string(), "y_true.csv".to_string()];
    names.extend((1..=n_predictors).map(|m| format!("x{m}.csv")));
    names.extend((1..=n_predictors).map(|m| format!("x{m}_true.csv")));
    names.push("meta.json".into());
    names
}

/// Writes a simulated dataset as curve CSVs plus `meta.json`.
pub fn write_dataset(dir: &Path, data: &SimDataset) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, sample: &FunctionalSample| -> Result<()> {
        let p = dir.join(name);
        write_curves(&p, sample)?;
        written.push(p);
        Ok(())
    };
    put("y.csv".into(), &data.y_observed)?;
    put("y_true.csv".into(), &data.y_signal)?;
    for (m, x) in data.x_noisy.iter().enumerate() {
        put(format!("x{}.csv", m + 1), x)?;
    }
    for (m, x) in data.x_true.iter().enumerate() {
        put(format!("x{}_true.csv", m + 1), x)?;
    }
    let meta = dir.join("meta.json");
    write_json(&meta, &data.config)?;
    written.push(meta);
    Ok(written)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

/// Row-major matrix for JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for StoredMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl StoredMatrix {
    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(FofError::ShapeMismatch(format!(
                "stored matrix {}×{} has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Serialized form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format_version: u32,
    pub terms: String,
    pub basis_x: BasisSpec,
    pub basis_y: BasisSpec,
    pub knots_x: Vec<f64>,
    pub knots_y: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub centering: DesignCentering,
    pub y_mean: Vec<f64>,
    /// Absent for models without a training fit.
    pub train_mse: Option<f64>,
    pub w: StoredMatrix,
    pub t_scores: StoredMatrix,
    pub p_load: StoredMatrix,
    pub q_load: StoredMatrix,
    pub theta: StoredMatrix,
}

impl ModelArchive {
    pub fn from_model(model: &FittedModel) -> Self {
        let pls = model.pls();
        Self {
            format_version: FORMAT_VERSION,
            terms: model.terms().to_string(),
            basis_x: model.basis_x().spec(),
            basis_y: model.basis_y().spec(),
            knots_x: model.basis_x().knots().to_vec(),
            knots_y: model.basis_y().knots().to_vec(),
            x_grid: model.basis_x().grid().points().to_vec(),
            y_grid: model.basis_y().grid().points().to_vec(),
            centering: model.centering().clone(),
            y_mean: model.y_mean().iter().copied().collect(),
            train_mse: Some(model.train_mse()).filter(|v| v.is_finite()),
            w: (&pls.w).into(),
            t_scores: (&pls.t_scores).into(),
            p_load: (&pls.p_load).into(),
            q_load: (&pls.q_load).into(),
            theta: (&pls.theta).into(),
        }
    }

    pub fn into_model(self) -> Result<FittedModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(FofError::InvalidInput(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let terms: TermSet = self.terms.parse()?;
        let basis_x = BasisSystem::new(self.basis_x, &Grid::new(self.x_grid)?)?;
        let basis_y = BasisSystem::new(self.basis_y, &Grid::new(self.y_grid)?)?;
        if basis_x.knots() != self.knots_x.as_slice() || basis_y.knots() != self.knots_y.as_slice()
        {
            return Err(FofError::InvalidInput(
                "stored knots do not match the basis specification".into(),
            ));
        }
        if self.y_mean.len() != basis_y.grid().len() {
            return Err(FofError::ShapeMismatch(
                "y_mean length differs from the response grid".into(),
            ));
        }
        let pls = PlsFit {
            w: self.w.to_matrix()?,
            t_scores: self.t_scores.to_matrix()?,
            p_load: self.p_load.to_matrix()?,
            q_load: self.q_load.to_matrix()?,
            theta: self.theta.to_matrix()?,
        };
        let p = crate::design::build_blocks(&terms, basis_x.k())
            .iter()
            .map(|b| b.width)
            .sum::<usize>();
        if pls.theta.nrows() != p || pls.theta.ncols() != basis_y.k() {
            return Err(FofError::ShapeMismatch(format!(
                "Θ is {}×{}, model needs {p}×{}",
                pls.theta.nrows(),
                pls.theta.ncols(),
                basis_y.k()
            )));
        }
        Ok(FittedModel::from_parts(
            terms,
            basis_x,
            basis_y,
            self.centering,
            DVector::from_vec(self.y_mean),
            pls,
            self.train_mse.unwrap_or(f64::NAN),
        ))
    }
}

pub fn save_model(path: &Path, model: &FittedModel) -> Result<()> {
    write_json(path, &ModelArchive::from_model(model))
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    read_json::<ModelArchive>(path)?.into_model()
}

/// Long-format surfaces: `term,s,r,t,value`; `r` is empty for main effects.
pub fn surfaces_csv(surfaces: &CoefficientSurfaces) -> String {
    let s = surfaces.s_grid.points();
    let r = surfaces.r_grid.points();
    let t = surfaces.t_grid.points();
    let mut out = String::from("term,s,r,t,value\n");
    for m in &surfaces.main {
        for (i, si) in s.iter().enumerate() {
            for (k, tk) in t.iter().enumerate() {
                writeln!(out, "X{},{si},,{tk},{}", m.predictor, m.values[(i, k)]).unwrap();
            }
        }
    }
    let dims = surfaces.dims();
    for g in &surfaces.inter {
        let name = format!("X{}:X{}", g.pair.0, g.pair.1);
        for (i, si) in s.iter().enumerate() {
            for (j, rj) in r.iter().enumerate() {
                for (k, tk) in t.iter().enumerate() {
                    writeln!(out, "{name},{si},{rj},{tk},{}", g.at(dims, i, j, k)).unwrap();
                }
            }
        }
    }
    out
}

pub fn write_surfaces(path: &Path, surfaces: &CoefficientSurfaces) -> Result<()> {
    write_atomic(path, surfaces_csv(surfaces).as_bytes())
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "model", "reps", "mspe", "mspe_se", "rmspe", "rmspe_se", "mape", "mape_se", "mean_h",
];

pub fn report_csv(report: &BenchmarkReport) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.model, r.reps, r.mspe, r.mspe_se, r.rmspe, r.rmspe_se, r.mape, r.mape_se, r.mean_h
        )
        .unwrap();
    }
    out
}

/// Human-readable table with standard deviations in brackets.
pub fn report_text(report: &BenchmarkReport) -> String {
    let c = &report.config;
    let mut out = format!(
        "setting {}  lag {}  reps {}  train {}  test {}\n",
        c.sim.setting,
        c.sim.lag,
        c.reps,
        c.n_train,
        c.sim.n_curves - c.n_train
    );
    writeln!(
        out,
        "{:<10} {:>18} {:>22} {:>20}",
        "model", "MSPE", "RMSPE", "MAPE"
    )
    .unwrap();
    for r in &report.rows {
        let cell = |m: f64, s: f64| format!("{m:.3} ({s:.3})");
        writeln!(
            out,
            "{:<10} {:>18} {:>22} {:>20}",
            format!("PLS_{}", r.model),
            cell(r.mspe, r.mspe_se),
            cell(r.rmspe, r.rmspe_se),
            cell(r.mape, r.mape_se)
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_text_round_trips() {
        let text = "id,0,0.5,1\na,1.5,-2,3.25e-7\nb,0.1,0.2,0.30000000000000004\n";
        let t = CurveTable::parse(text, Path::new("mem")).unwrap();
        assert_eq!(t.values.shape(), (2, 3));
        assert_eq!(
            t.to_csv_string(),
            "id,0,0.5,1\na,1.5,-2,0.000000325\nb,0.1,0.2,0.30000000000000004\n"
        );
        let again = CurveTable::parse(&t.to_csv_string(), Path::new("mem")).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn csv_errors_are_descriptive() {
        let p = Path::new("mem");
        let e = CurveTable::parse("id,0,1\na,1,NaN\n", p)
            .unwrap_err()
            .to_string();
        assert!(e.contains("non-finite"), "{e}");
        let e = CurveTable::parse("id,0,1\na,1\n", p)
            .unwrap_err()
            .to_string();
        assert!(e.contains("expected 2"), "{e}");
        let e = CurveTable::parse("id,0,1\na,1,x\n", p)
            .unwrap_err()
            .to_string();
        assert!(e.contains("not a number"), "{e}");
    }

    #[test]
    fn raw_abscissae_are_standardized() {
        let t = CurveTable::parse("id,10,15,20\na,1,2,3\n", Path::new("mem")).unwrap();
        assert_eq!(t.to_sample("y").unwrap().grid().points(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn stored_matrix_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = StoredMatrix::from(&m);
        assert_eq!(s.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.to_matrix().unwrap(), m);
    }
}
