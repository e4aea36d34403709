//! File formats: response CSV, versioned JSON result files, TOML study
//! manifests, and CSV table exports.
//!
//! # Response CSV
//!
//! UTF-8, comma separated, LF or CRLF line ends, no quoting. An optional
//! first row of item names is recognised by containing a non-numeric cell.
//! Every other row holds one respondent's `J` scores in `{0, 1}`. Rows are
//! numbered by file line (1-based) in diagnostics.
//!
//! # Result files
//!
//! A JSON object
//!
//! ```json
//! { "schema": "clldif-result", "version": 1, "kind": "fit",
//!   "grid_points": 61, "master_seed": 7, "seed_rule": "...", "body": { ... } }
//! ```
//!
//! where `kind` is one of `fit`, `path`, `select_k`, `replication`,
//! `report`, `truth` and `body` the serde form of the corresponding type. Reals are
//! printed as the shortest decimal that reads back to the same `f64`. An
//! optional `item_names` array carries the response file header.
//!
//! # Study manifest
//!
//! ```toml
//! manifest_version = 1
//! n_replications = 20
//! k_fit = 1
//! path_m = 30
//! master_seed = 2024
//! output_dir = "study-out"
//! grid_points = 61          # optional
//!
//! [grid]
//! designs = ["A", "B"]
//! n = [500, 1000, 3000]
//! pi = [0.1, 0.3, 0.5]
//!
//! [fit]                     # optional, every key optional
//! max_outer_iter = 500
//! tol = 1e-7
//! n_starts = 5
//! step_init = 0.1
//! warm_start = true
//! return_sweep = true
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::em::{FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::metrics::{AggregateReport, ReplicationRecord};
use crate::model::ResponseMatrix;
use crate::regpath::{PathOptions, PathResult, SelectKResult, DEFAULT_PATH_POINTS};
use crate::registry::{Named, Registry};
use crate::simulate::{Design, SimDesign, SimTruth, SEED_RULE};

pub const RESULT_SCHEMA: &str = "clldif-result";
pub const RESULT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_responses(path: impl AsRef<Path>) -> Result<ResponseMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .quoting(false)
        .from_reader(file);
    let csv_err = |e: csv::Error| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
        _ => Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    };

    let mut names: Option<Vec<String>> = None;
    let mut n_items: Option<usize> = None;
    let mut data = Vec::new();
    let mut n_rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if idx == 0 && record.iter().any(|c| c.parse::<f64>().is_err()) {
            names = Some(record.iter().map(str::to_string).collect());
            n_items = Some(record.len());
            continue;
        }
        let expected = *n_items.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row: line,
                found: record.len(),
                expected,
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v = match cell {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::NonBinaryCell {
                        path: path.to_path_buf(),
                        row: line,
                        column: col + 1,
                        value: other.to_string(),
                    })
                }
            };
            data.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::EmptyFile { path: path.to_path_buf() });
    }
    let y = ResponseMatrix::new(n_rows, n_items.expect("at least one row"), data)?;
    match names {
        Some(n) => y.with_item_names(n),
        None => Ok(y),
    }
}

pub fn write_responses(y: &ResponseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut line = String::with_capacity(2 * y.n_items());
    if let Some(names) = y.item_names() {
        writeln!(w, "{}", names.join(",")).map_err(io_err(path))?;
    }
    for row in y.rows() {
        line.clear();
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push(if v == 1 { '1' } else { '0' });
        }
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Payload of a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum ResultBody {
    Fit(FitResult),
    Path(PathResult),
    SelectK(SelectKResult),
    Replication(ReplicationRecord),
    Report(Vec<AggregateReport>),
    Truth(SimTruth),
}

/// A result with the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub schema: String,
    pub version: u32,
    pub grid_points: usize,
    pub master_seed: u64,
    pub seed_rule: String,
    /// Item names from the response file header, when it had one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_names: Option<Vec<String>>,
    #[serde(flatten)]
    pub body: ResultBody,
}

impl ResultFile {
    pub fn new(body: ResultBody, grid_points: usize, master_seed: u64) -> Self {
        ResultFile {
            schema: RESULT_SCHEMA.into(),
            version: RESULT_VERSION,
            grid_points,
            master_seed,
            seed_rule: SEED_RULE.into(),
            item_names: None,
            body,
        }
    }

    pub fn with_item_names(mut self, names: Option<&[String]>) -> Self {
        self.item_names = names.map(<[String]>::to_vec);
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result types serialize");
        s.push('\n');
        s
    }
}

pub fn write_result(file: &ResultFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, file.to_json()).map_err(io_err(path))
}

pub fn read_result(path: impl AsRef<Path>) -> Result<ResultFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_result(&text, path)
}

fn parse_result(text: &str, path: &Path) -> Result<ResultFile> {
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format(e.to_string()))?;
    if value.get("schema").and_then(|s| s.as_str()) != Some(RESULT_SCHEMA) {
        return Err(format(format!("not a {RESULT_SCHEMA} file")));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| format("missing version".into()))?;
    if version != RESULT_VERSION as u64 {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: version.min(u32::MAX as u64) as u32,
            supported: RESULT_VERSION,
        });
    }
    let file: ResultFile = serde_json::from_value(value).map_err(|e| format(e.to_string()))?;
    file.body.validate().map_err(|e| format(e.to_string()))?;
    Ok(file)
}

impl ResultBody {
    fn validate(&self) -> Result<()> {
        match self {
            ResultBody::Fit(f) => f.params.validate(),
            ResultBody::Path(p) => p.selected_model.params.validate(),
            ResultBody::SelectK(s) => s.paths.iter().try_for_each(|p| p.selected_model.params.validate()),
            ResultBody::Replication(r) => r.estimate.params.validate(),
            ResultBody::Report(_) => Ok(()),
            ResultBody::Truth(t) => t.params.validate(),
        }
    }
}

pub fn write_fit(fit: &FitResult, grid_points: usize, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    write_result(&ResultFile::new(ResultBody::Fit(fit.clone()), grid_points, seed), path)
}

pub fn read_fit(path: impl AsRef<Path>) -> Result<FitResult> {
    let path = path.as_ref();
    match read_result(path)?.body {
        ResultBody::Fit(f) => Ok(f),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected a fit result".into(),
        }),
    }
}

pub fn write_path(result: &PathResult, grid_points: usize, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    write_result(&ResultFile::new(ResultBody::Path(result.clone()), grid_points, seed), path)
}

pub fn read_path(path: impl AsRef<Path>) -> Result<PathResult> {
    let path = path.as_ref();
    match read_result(path)?.body {
        ResultBody::Path(p) => Ok(p),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected a path result".into(),
        }),
    }
}

/// Estimation settings of a study manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifestFit {
    pub max_outer_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub step_init: f64,
    pub warm_start: bool,
    pub return_sweep: bool,
}

impl Default for ManifestFit {
    fn default() -> Self {
        let f = FitOptions::default();
        ManifestFit {
            max_outer_iter: f.max_outer_iter,
            tol: f.tol,
            n_starts: f.n_starts,
            step_init: f.step_init,
            warm_start: true,
            return_sweep: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestGrid {
    pub designs: Vec<Design>,
    pub n: Vec<usize>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyManifest {
    pub manifest_version: u32,
    pub n_replications: usize,
    #[serde(default = "default_k_fit")]
    pub k_fit: usize,
    #[serde(default = "default_path_m")]
    pub path_m: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub grid: ManifestGrid,
    #[serde(default)]
    pub fit: ManifestFit,
}

fn default_k_fit() -> usize {
    1
}

fn default_path_m() -> usize {
    DEFAULT_PATH_POINTS
}

fn default_grid_points() -> usize {
    crate::quadrature::DEFAULT_GRID_POINTS
}

impl StudyManifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        match value.get("manifest_version").and_then(|v| v.as_integer()) {
            Some(v) if v == MANIFEST_VERSION as i64 => {}
            Some(v) => {
                return Err(Error::SchemaVersion {
                    path: path.to_path_buf(),
                    found: v.clamp(0, u32::MAX as i64) as u32,
                    supported: MANIFEST_VERSION,
                })
            }
            None => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: "missing manifest_version".into(),
                })
            }
        }
        let m: StudyManifest = toml::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.designs.is_empty() || g.n.is_empty() || g.pi.is_empty() {
            return Err(Error::Config("the manifest grid is empty".into()));
        }
        if self.n_replications == 0 {
            return Err(Error::Config("n_replications must be at least 1".into()));
        }
        if self.k_fit == 0 {
            return Err(Error::Config("k_fit must be at least 1 for a DIF study".into()));
        }
        if self.path_m < 2 {
            return Err(Error::Config("path_m must be at least 2".into()));
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        self.path_options().fit.validate()
    }

    /// Grid cells in design, N, pi order; the seed field is left at 0 and set
    /// per replication by the study runner.
    pub fn cells(&self) -> Vec<SimDesign> {
        let mut out = Vec::new();
        for &d in &self.grid.designs {
            for &n in &self.grid.n {
                for &pi in &self.grid.pi {
                    out.push(SimDesign::new(d, n, pi, 0));
                }
            }
        }
        out
    }

    pub fn path_options(&self) -> PathOptions {
        PathOptions {
            m: self.path_m,
            warm_start: self.fit.warm_start,
            return_sweep: self.fit.return_sweep,
            fit: FitOptions {
                max_outer_iter: self.fit.max_outer_iter,
                tol: self.fit.tol,
                n_starts: self.fit.n_starts,
                step_init: self.fit.step_init,
                ..FitOptions::default()
            },
        }
    }
}

/// A CSV layout for aggregate reports.
pub trait TableExporter: Named + Send + Sync {
    fn export(&self, reports: &[AggregateReport], out: &mut dyn Write) -> Result<()>;
}

fn write_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<export>"),
        source: e,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Reports of one design keyed by `(N, pi)`; fails when the `N x pi` grid
/// spanned by the reports has holes.
fn complete_grid(reports: &[AggregateReport]) -> Result<BTreeMap<Design, (Vec<usize>, Vec<f64>)>> {
    let mut by_design: BTreeMap<Design, (BTreeSet<usize>, Vec<f64>)> = BTreeMap::new();
    for r in reports {
        let e = by_design.entry(r.design.design).or_default();
        e.0.insert(r.design.n);
        if !e.1.contains(&r.design.pi_focal) {
            e.1.push(r.design.pi_focal);
        }
    }
    let mut missing = Vec::new();
    let mut out = BTreeMap::new();
    for (d, (ns, mut pis)) in by_design {
        pis.sort_by(f64::total_cmp);
        for &n in &ns {
            for &pi in &pis {
                if find(reports, d, n, pi).is_none() {
                    missing.push(format!("design {} N={n} pi={pi}", d.label()));
                }
            }
        }
        out.insert(d, (ns.into_iter().collect(), pis));
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::IncompleteReport(missing.join("; ")))
    }
}

fn find(reports: &[AggregateReport], d: Design, n: usize, pi: f64) -> Option<&AggregateReport> {
    reports
        .iter()
        .find(|r| r.design.design == d && r.design.n == n && r.design.pi_focal == pi)
}

/// Structural parameters: one row per (design, N, parameter), bias and RMSE
/// per pi.
pub struct Table2;
/// Detection and classification: one row per (design, N, metric), one
/// column per pi.
pub struct Table3;
/// Per-item bias and RMSE of `d` and `delta` in long format.
pub struct ItemGrid;
/// ROC curve of a single cell.
pub struct RocCurve;

impl Named for Table2 {
    fn name(&self) -> &'static str {
        "table2"
    }
}

impl TableExporter for Table2 {
    fn export(&self, reports: &[AggregateReport], out: &mut dyn Write) -> Result<()> {
        let grid = complete_grid(reports)?;
        let all_pis: Vec<f64> = {
            let mut v: Vec<f64> = grid.values().flat_map(|(_, p)| p.iter().copied()).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let mut header = vec!["design".to_string(), "N".into(), "parameter".into()];
        for pi in &all_pis {
            header.push(format!("bias_pi={pi}"));
            header.push(format!("rmse_pi={pi}"));
        }
        writeln!(out, "{}", header.join(",")).map_err(write_err)?;
        for (d, (ns, _)) in &grid {
            for &n in ns {
                for param in ["pi", "mu1", "sigma1"] {
                    let mut row = vec![d.label().to_string(), n.to_string(), param.to_string()];
                    for &pi in &all_pis {
                        match find(reports, *d, n, pi) {
                            Some(r) => {
                                let e = match param {
                                    "pi" => r.errors.pi,
                                    "mu1" => r.errors.mu1,
                                    _ => r.errors.sigma1,
                                };
                                row.push(e.bias.to_string());
                                row.push(e.rmse.to_string());
                            }
                            None => row.extend(["NA".to_string(), "NA".to_string()]),
                        }
                    }
                    writeln!(out, "{}", row.join(",")).map_err(write_err)?;
                }
            }
        }
        Ok(())
    }
}

impl Named for Table3 {
    fn name(&self) -> &'static str {
        "table3"
    }
}

impl TableExporter for Table3 {
    fn export(&self, reports: &[AggregateReport], out: &mut dyn Write) -> Result<()> {
        let grid = complete_grid(reports)?;
        let mut all_pis: Vec<f64> = grid.values().flat_map(|(_, p)| p.iter().copied()).collect();
        all_pis.sort_by(f64::total_cmp);
        all_pis.dedup();
        let mut header = vec!["design".to_string(), "N".into(), "metric".into()];
        header.extend(all_pis.iter().map(|pi| format!("pi={pi}")));
        writeln!(out, "{}", header.join(",")).map_err(write_err)?;
        type Metric = fn(&AggregateReport) -> Option<f64>;
        let metrics: [(&str, Metric); 5] = [
            ("TPR", |r| r.tpr),
            ("FPR", |r| Some(r.fpr)),
            ("classification_error", |r| Some(r.classification_error)),
            ("naive_error", |r| Some(r.naive_error)),
            ("AUC", |r| Some(r.auc)),
        ];
        for (d, (ns, _)) in &grid {
            for &n in ns {
                for (name, f) in &metrics {
                    let mut row = vec![d.label().to_string(), n.to_string(), name.to_string()];
                    for &pi in &all_pis {
                        row.push(fmt_opt(find(reports, *d, n, pi).and_then(f)));
                    }
                    writeln!(out, "{}", row.join(",")).map_err(write_err)?;
                }
            }
        }
        Ok(())
    }
}

impl Named for ItemGrid {
    fn name(&self) -> &'static str {
        "itemgrid"
    }
}

impl TableExporter for ItemGrid {
    fn export(&self, reports: &[AggregateReport], out: &mut dyn Write) -> Result<()> {
        complete_grid(reports)?;
        writeln!(out, "design,N,pi,parameter,item,bias,rmse").map_err(write_err)?;
        for r in reports {
            for (param, errs) in [("d", &r.errors.d), ("delta", &r.errors.delta)] {
                for (j, e) in errs.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{param},{},{},{}",
                        r.design.design.label(),
                        r.design.n,
                        r.design.pi_focal,
                        j + 1,
                        e.bias,
                        e.rmse
                    )
                    .map_err(write_err)?;
                }
            }
        }
        Ok(())
    }
}

impl Named for RocCurve {
    fn name(&self) -> &'static str {
        "roc"
    }
}

impl TableExporter for RocCurve {
    fn export(&self, reports: &[AggregateReport], out: &mut dyn Write) -> Result<()> {
        let [r] = reports else {
            return Err(Error::Config(format!(
                "roc export needs exactly one design cell, got {}",
                reports.len()
            )));
        };
        writeln!(out, "fpr,tpr").map_err(write_err)?;
        for (f, t) in &r.roc {
            writeln!(out, "{f},{t}").map_err(write_err)?;
        }
        Ok(())
    }
}

pub fn table_exporters() -> Registry<dyn TableExporter> {
    let mut r: Registry<dyn TableExporter> = Registry::new("table style");
    r.register(Arc::new(Table2));
    r.register(Arc::new(Table3));
    r.register(Arc::new(ItemGrid));
    r.register(Arc::new(RocCurve));
    r
}

/// Writes `reports` in the registered layout `style`.
pub fn export_tables(reports: &[AggregateReport], style: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let exporter = table_exporters().get(style)?;
    let mut buf = Vec::new();
    exporter.export(reports, &mut buf)?;
    std::fs::write(path, buf).map_err(io_err(path))
}
