//! Replication-study runner.
//!
//! Every `(cell, replication)` pair is an isolated task whose data seed is
//! [`replication_seed`]`(master_seed, cell_index, rep)`, so outputs do not
//! depend on scheduling. Each task writes one result file; aggregation reads
//! them back in cell and replication order.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! replications/<cell>/rep-0000.json   one ReplicationRecord each
//! report.json                         all AggregateReports
//! table2.csv table3.csv itemgrid.csv  exports
//! roc/<cell>.csv                      pooled ROC curve per cell
//! failures.json                       only when a replication failed
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::posterior_class_probabilities;
use crate::error::{Error, Result};
use crate::io::{export_tables, read_result, write_result, ResultBody, ResultFile, StudyManifest};
use crate::metrics::{aggregate, AggregateReport, ReplicationRecord};
use crate::quadrature::QuadratureGrid;
use crate::regpath::{two_stage_path, PathOptions};
use crate::simulate::{generate, replication_seed, SimDesign};

/// Exports written after aggregation, by registered table style.
pub const STUDY_EXPORTS: [&str; 3] = ["table2", "table3", "itemgrid"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub cell: String,
    pub replication_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    /// One per cell with at least one successful replication, in cell order.
    pub reports: Vec<AggregateReport>,
    pub computed: usize,
    /// Replications whose result file already existed.
    pub reused: usize,
    /// Replications whose selected refit did not converge.
    pub unconverged: usize,
    pub failures: Vec<ReplicationFailure>,
}

/// Directory name of a grid cell, e.g. `A-n1000-pi0.3`.
pub fn cell_name(design: &SimDesign) -> String {
    format!("{}-n{}-pi{}", design.design.label(), design.n, design.pi_focal)
}

pub fn replication_path(output_dir: &Path, design: &SimDesign, rep: usize) -> PathBuf {
    output_dir
        .join("replications")
        .join(cell_name(design))
        .join(format!("rep-{rep:04}.json"))
}

/// Simulates and fits one replication: data from `design` with its seed
/// replaced by the derived one, then the BIC-selected two-stage fit.
pub fn run_replication(
    design: &SimDesign,
    cell_index: usize,
    rep: usize,
    master_seed: u64,
    n_focal: usize,
    grid: &QuadratureGrid,
    opts: &PathOptions,
) -> Result<ReplicationRecord> {
    let design = SimDesign {
        seed: replication_seed(master_seed, cell_index as u64, rep as u64),
        ..design.clone()
    };
    let (y, truth) = generate(&design)?;
    let path = two_stage_path(&y, n_focal, grid, opts)?;
    let estimate = path.selected_model;
    let class_probabilities = posterior_class_probabilities(&estimate.params, &y, grid)?;
    Ok(ReplicationRecord {
        design,
        replication_index: rep,
        truth,
        estimate,
        class_probabilities,
    })
}

/// A stored replication is reused when it parses and belongs to this task.
fn load_existing(path: &Path, design: &SimDesign, rep: usize) -> Option<ReplicationRecord> {
    if !path.exists() {
        return None;
    }
    match read_result(path).ok()?.body {
        ResultBody::Replication(r)
            if r.replication_index == rep
                && r.design.design == design.design
                && r.design.n == design.n
                && r.design.pi_focal == design.pi_focal =>
        {
            Some(r)
        }
        _ => None,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs every replication of `manifest` on a pool of `threads` workers,
/// skipping replications whose result file is already present, then writes
/// the report and exports. Failed replications are listed in the outcome and
/// in `failures.json`; the remaining ones are still aggregated.
pub fn run_study(manifest: &StudyManifest, threads: usize) -> Result<StudyOutcome> {
    manifest.validate()?;
    if threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    let grid = QuadratureGrid::new(manifest.grid_points)?;
    let opts = manifest.path_options();
    let out = &manifest.output_dir;
    let cells = manifest.cells();
    for cell in &cells {
        create_dir(&out.join("replications").join(cell_name(cell)))?;
    }
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..manifest.n_replications).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    // (record, reused) per task, in task order
    let results: Vec<std::result::Result<(ReplicationRecord, bool), ReplicationFailure>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, rep)| {
                let cell = &cells[c];
                let path = replication_path(out, cell, rep);
                if let Some(r) = load_existing(&path, cell, rep) {
                    return Ok((r, true));
                }
                let fail = |e: Error| ReplicationFailure {
                    cell: cell_name(cell),
                    replication_index: rep,
                    message: e.to_string(),
                };
                let record = run_replication(cell, c, rep, manifest.master_seed, manifest.k_fit, &grid, &opts)
                    .map_err(fail)?;
                let file = ResultFile::new(
                    ResultBody::Replication(record.clone()),
                    manifest.grid_points,
                    manifest.master_seed,
                );
                write_result(&file, &path).map_err(fail)?;
                Ok((record, false))
            })
            .collect()
    });

    let mut per_cell: Vec<Vec<ReplicationRecord>> = vec![Vec::new(); cells.len()];
    let (mut computed, mut reused, mut unconverged) = (0, 0, 0);
    let mut failures = Vec::new();
    for (&(c, _), res) in tasks.iter().zip(results) {
        match res {
            Ok((r, was_reused)) => {
                if was_reused {
                    reused += 1;
                } else {
                    computed += 1;
                }
                unconverged += usize::from(!r.estimate.converged);
                per_cell[c].push(r);
            }
            Err(f) => failures.push(f),
        }
    }
    let reports = per_cell
        .iter()
        .filter(|recs| !recs.is_empty())
        .map(|recs| aggregate(recs))
        .collect::<Result<Vec<_>>>()?;
    write_reports(&reports, manifest.grid_points, manifest.master_seed, out)?;
    let failures_path = out.join("failures.json");
    if failures.is_empty() {
        if failures_path.exists() {
            std::fs::remove_file(&failures_path).map_err(|source| Error::Io {
                path: failures_path.clone(),
                source,
            })?;
        }
    } else {
        let text = serde_json::to_string_pretty(&failures).expect("failures serialize") + "\n";
        std::fs::write(&failures_path, text).map_err(|source| Error::Io {
            path: failures_path.clone(),
            source,
        })?;
    }
    Ok(StudyOutcome {
        reports,
        computed,
        reused,
        unconverged,
        failures,
    })
}

/// Writes `report.json`, the grid exports and one ROC curve per cell. Grid
/// exports that need a complete `N x pi` grid are skipped when it has holes.
pub fn write_reports(reports: &[AggregateReport], grid_points: usize, master_seed: u64, out: &Path) -> Result<()> {
    create_dir(&out.join("roc"))?;
    let file = ResultFile::new(ResultBody::Report(reports.to_vec()), grid_points, master_seed);
    write_result(&file, out.join("report.json"))?;
    for style in STUDY_EXPORTS {
        match export_tables(reports, style, out.join(format!("{style}.csv"))) {
            Ok(()) | Err(Error::IncompleteReport(_)) => {}
            Err(e) => return Err(e),
        }
    }
    for r in reports {
        export_tables(
            std::slice::from_ref(r),
            "roc",
            out.join("roc").join(format!("{}.csv", cell_name(&r.design))),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{ManifestFit, ManifestGrid, MANIFEST_VERSION};
    use crate::simulate::Design;

    fn manifest(dir: &Path) -> StudyManifest {
        StudyManifest {
            manifest_version: MANIFEST_VERSION,
            n_replications: 2,
            k_fit: 1,
            path_m: 3,
            master_seed: 11,
            output_dir: dir.to_path_buf(),
            grid_points: 21,
            grid: ManifestGrid {
                designs: vec![Design::B],
                n: vec![120],
                pi: vec![0.3],
            },
            fit: ManifestFit {
                max_outer_iter: 40,
                tol: 1e-5,
                n_starts: 1,
                ..ManifestFit::default()
            },
        }
    }

    #[test]
    fn cell_names_and_paths() {
        let d = SimDesign::design_a(1000, 0.3, 0);
        assert_eq!(cell_name(&d), "A-n1000-pi0.3");
        assert_eq!(
            replication_path(Path::new("out"), &d, 7),
            Path::new("out/replications/A-n1000-pi0.3/rep-0007.json")
        );
    }

    #[test]
    fn rerun_reuses_every_replication() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        let first = run_study(&m, 1).unwrap();
        assert_eq!((first.computed, first.reused), (2, 0));
        assert!(first.failures.is_empty());
        assert_eq!(first.reports.len(), 1);
        assert_eq!(first.reports[0].n_reps, 2);
        let report = std::fs::read(dir.path().join("report.json")).unwrap();
        let second = run_study(&m, 1).unwrap();
        assert_eq!((second.computed, second.reused), (0, 2));
        assert_eq!(std::fs::read(dir.path().join("report.json")).unwrap(), report);
        assert!(dir.path().join("table3.csv").exists());
        assert!(dir.path().join("roc").join("B-n120-pi0.3.csv").exists());
    }

    #[test]
    fn corrupt_replication_file_is_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        run_study(&m, 1).unwrap();
        let p = replication_path(dir.path(), &m.cells()[0], 1);
        let good = std::fs::read(&p).unwrap();
        std::fs::write(&p, "{ truncated").unwrap();
        let again = run_study(&m, 1).unwrap();
        assert_eq!((again.computed, again.reused), (1, 1));
        assert_eq!(std::fs::read(&p).unwrap(), good);
    }

    #[test]
    fn zero_threads_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(run_study(&manifest(dir.path()), 0), Err(Error::Config(_))));
    }
}
