//! `clldif`: simulate, fit, select and evaluate latent-class DIF models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
//! or non-convergence (results are still written and flagged).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clldif::em::FitOptions;
use clldif::io::{
    export_tables, read_responses, read_result, table_exporters, write_responses, write_result, ResultBody,
    ResultFile, StudyManifest,
};
use clldif::metrics::{aggregate, AggregateReport};
use clldif::quadrature::DEFAULT_GRID_POINTS;
use clldif::regpath::{select_k, two_stage_path, PathOptions, PathResult, DEFAULT_PATH_POINTS};
use clldif::simulate::{generate, Design, SimDesign, DEFAULT_ITEMS};
use clldif::study::{cell_name, run_study, write_reports};
use clldif::{fit_constrained, fit_penalized, Category, Error, FitResult, QuadratureGrid, ResponseMatrix, Support};

#[derive(Debug, Parser)]
#[command(name = "clldif", version, about = "Latent-class DIF detection under the CLL-Gumbel IRT model")]
struct Cli {
    /// Worker threads [default: available cores]
    #[arg(long, global = true, env = "CLLDIF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset and write it with its generating truth
    Simulate(SimulateArgs),
    /// Penalized fit at one lambda, or a constrained fit on a given support
    Fit(FitArgs),
    /// Penalize-then-refit path with BIC selection over lambda
    Path(PathArgs),
    /// Paths for K = 0..=k-max and BIC comparison across K
    SelectK(SelectKArgs),
    /// Run a replication study from a manifest (resumable)
    Study(StudyArgs),
    /// Recompute aggregate reports from stored replication files
    Metrics(MetricsArgs),
    /// Re-export a stored report in a table layout
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Design: A (10 DIF items) or B (impact only)
    #[arg(long)]
    design: Design,
    /// Number of respondents
    #[arg(long)]
    n: usize,
    /// Focal class proportion
    #[arg(long)]
    pi: f64,
    /// Number of items
    #[arg(long, default_value_t = DEFAULT_ITEMS)]
    j: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Response CSV to write
    #[arg(long)]
    out: PathBuf,
    /// Truth file [default: OUT with extension .truth.json]
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimationArgs {
    /// Random starts per fit
    #[arg(long, default_value_t = 5)]
    starts: usize,
    /// Seed of the start jitter
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum outer EM iterations
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Relative objective change counted as converged
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Quadrature points on (-8, 8)
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
}

impl EstimationArgs {
    fn fit_options(&self) -> FitOptions {
        FitOptions {
            n_starts: self.starts,
            seed: self.seed,
            max_outer_iter: self.max_iter,
            tol: self.tol,
            ..FitOptions::default()
        }
    }

    fn grid(&self) -> clldif::Result<QuadratureGrid> {
        QuadratureGrid::new(self.grid_points)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Response CSV
    #[arg(long)]
    data: PathBuf,
    /// Number of focal classes
    #[arg(long)]
    k: usize,
    /// Penalty weight on the total log-likelihood scale
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// CSV of free DIF pairs `item,class` (1-based); fits without penalty
    #[arg(long, conflicts_with = "lambda")]
    support: Option<PathBuf>,
    #[command(flatten)]
    est: EstimationArgs,
    /// Result file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PathArgs {
    /// Response CSV
    #[arg(long)]
    data: PathBuf,
    /// Number of focal classes
    #[arg(long)]
    k: usize,
    /// Penalty grid points
    #[arg(long, default_value_t = DEFAULT_PATH_POINTS)]
    m: usize,
    /// Multi-start every lambda instead of warm starting along the path
    #[arg(long)]
    cold: bool,
    /// Skip the ascending warm-start sweep and its continuation above the grid
    #[arg(long, conflicts_with = "cold")]
    one_way: bool,
    #[command(flatten)]
    est: EstimationArgs,
    /// Result file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectKArgs {
    /// Response CSV
    #[arg(long)]
    data: PathBuf,
    /// Largest number of focal classes tried
    #[arg(long)]
    k_max: usize,
    /// Penalty grid points
    #[arg(long, default_value_t = DEFAULT_PATH_POINTS)]
    m: usize,
    /// Multi-start every lambda instead of warm starting along the path
    #[arg(long)]
    cold: bool,
    /// Skip the ascending warm-start sweep and its continuation above the grid
    #[arg(long, conflicts_with = "cold")]
    one_way: bool,
    #[command(flatten)]
    est: EstimationArgs,
    /// Result file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Study manifest (TOML)
    #[arg(long)]
    manifest: PathBuf,
    /// Override the manifest's replication count
    #[arg(long)]
    reps: Option<usize>,
    /// Override the manifest's output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Study output directory holding `replications/`
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Report file (`report.json` of a study)
    #[arg(long)]
    report: PathBuf,
    /// Table layout: table2, table3, itemgrid or roc
    #[arg(long)]
    style: String,
    /// Design cell for the roc layout, e.g. A-n1000-pi0.3
    #[arg(long)]
    cell: Option<String>,
    /// CSV to write
    #[arg(long)]
    out: PathBuf,
}

/// Outcome of a command that completed but whose estimates are flagged.
struct Flagged(String);

type Outcome = clldif::Result<Option<Flagged>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Flagged(msg))) => {
            eprintln!("warning: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                Category::Usage => 1,
                Category::Data => 2,
                Category::Numerical => 3,
            })
        }
    }
}

fn threads(requested: Option<usize>) -> clldif::Result<usize> {
    match requested {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(t) => Ok(t),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: Cli) -> Outcome {
    let threads = threads(cli.threads)?;
    if let Command::Study(args) = cli.command {
        return study(args, threads);
    }
    // only `study` builds its own pool; everything else uses the global one
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Path(a) => path(a),
        Command::SelectK(a) => select_k_cmd(a),
        Command::Metrics(a) => metrics(a),
        Command::Export(a) => export(a),
        Command::Study(_) => unreachable!("handled above"),
    }
}

fn simulate(a: SimulateArgs) -> Outcome {
    let design = SimDesign {
        j: a.j,
        ..SimDesign::new(a.design, a.n, a.pi, a.seed)
    };
    let (y, truth) = generate(&design)?;
    write_responses(&y, &a.out)?;
    let truth_path = a.truth.unwrap_or_else(|| a.out.with_extension("truth.json"));
    let file = ResultFile::new(ResultBody::Truth(truth), DEFAULT_GRID_POINTS, a.seed);
    write_result(&file, &truth_path)?;
    println!("wrote {} and {}", a.out.display(), truth_path.display());
    Ok(None)
}

/// Reads `item,class` pairs (1-based); a first line that does not parse is a
/// header.
fn read_support(path: &Path, n_items: usize, n_focal: usize) -> clldif::Result<Support> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |row: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        message: format!("row {row}: {message}"),
    };
    let mut support = Support::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<(usize, usize)> = match cells.as_slice() {
            [j, k] => j.parse().ok().zip(k.parse().ok()),
            _ => None,
        };
        match parsed {
            Some((j, k)) if (1..=n_items).contains(&j) && (1..=n_focal).contains(&k) => {
                support.insert(j - 1, k);
            }
            Some((j, k)) => {
                return Err(bad(
                    i + 1,
                    format!("pair ({j}, {k}) is outside items 1..={n_items}, classes 1..={n_focal}"),
                ))
            }
            None if i == 0 => {}
            None => return Err(bad(i + 1, format!("expected `item,class`, got {line:?}"))),
        }
    }
    Ok(support)
}

fn item_label(y: &ResponseMatrix, j: usize) -> String {
    y.item_names()
        .map_or_else(|| format!("item {}", j + 1), |n| n[j].clone())
}

fn describe_support(y: &ResponseMatrix, s: &Support) -> String {
    if s.is_empty() {
        return "(none)".into();
    }
    s.iter()
        .map(|(j, k)| format!("{}/class {k}", item_label(y, j)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn convergence_flag(fit: &FitResult, what: &str) -> Option<Flagged> {
    (!fit.converged).then(|| {
        Flagged(format!(
            "{what} did not converge within {} outer iterations",
            fit.n_outer_iters
        ))
    })
}

fn fit(a: FitArgs) -> Outcome {
    let y = read_responses(&a.data)?;
    let grid = a.est.grid()?;
    let opts = a.est.fit_options();
    let result = match &a.support {
        Some(p) => {
            let s = read_support(p, y.n_items(), a.k)?;
            fit_constrained(&y, a.k, &s, &grid, &opts, None)?
        }
        None => fit_penalized(&y, a.k, a.lambda, &grid, &opts)?,
    };
    let file = ResultFile::new(ResultBody::Fit(result.clone()), a.est.grid_points, a.est.seed)
        .with_item_names(y.item_names());
    write_result(&file, &a.out)?;
    println!("log-likelihood {:.6}", result.loglik);
    println!("penalized objective {:.6}", result.penalized_objective);
    println!("class proportions {:?}", result.params.nu());
    println!("support: {}", describe_support(&y, &result.support));
    Ok(convergence_flag(&result, "the fit"))
}

fn path_options(m: usize, cold: bool, one_way: bool, est: &EstimationArgs) -> PathOptions {
    PathOptions {
        m,
        warm_start: !cold,
        return_sweep: !one_way,
        fit: est.fit_options(),
    }
}

fn print_path(y: &ResponseMatrix, p: &PathResult) {
    println!("{:>4} {:>14} {:>8} {:>14}", "m", "lambda", "|S|", "BIC");
    for (i, r) in p.per_lambda.iter().enumerate() {
        let bic = r.bic.map_or_else(|| "failed".into(), |b| format!("{b:.3}"));
        let mark = if i == p.selected_index { " *" } else { "" };
        println!("{:>4} {:>14.6} {:>8} {:>14}{mark}", i + 1, r.lambda, r.support.len(), bic);
    }
    let sel = p.selected();
    println!("selected lambda {:.6}, BIC {:.3}", sel.lambda, p.selected_bic());
    println!("selected support: {}", describe_support(y, &sel.support));
}

fn path(a: PathArgs) -> Outcome {
    let y = read_responses(&a.data)?;
    let grid = a.est.grid()?;
    let p = two_stage_path(&y, a.k, &grid, &path_options(a.m, a.cold, a.one_way, &a.est))?;
    let file = ResultFile::new(ResultBody::Path(p.clone()), a.est.grid_points, a.est.seed)
        .with_item_names(y.item_names());
    write_result(&file, &a.out)?;
    print_path(&y, &p);
    Ok(convergence_flag(&p.selected_model, "the selected refit"))
}

fn select_k_cmd(a: SelectKArgs) -> Outcome {
    let y = read_responses(&a.data)?;
    let grid = a.est.grid()?;
    let ks: Vec<usize> = (0..=a.k_max).collect();
    let r = select_k(&y, &ks, &grid, &path_options(a.m, a.cold, a.one_way, &a.est))?;
    let file = ResultFile::new(ResultBody::SelectK(r.clone()), a.est.grid_points, a.est.seed)
        .with_item_names(y.item_names());
    write_result(&file, &a.out)?;
    println!("{:>8} {:>8} {:>14} {:>14}", "classes", "|S|", "log-lik", "BIC");
    for p in &r.paths {
        let mark = if p.n_focal == r.best_k { " *" } else { "" };
        println!(
            "{:>8} {:>8} {:>14.3} {:>14.3}{mark}",
            p.n_focal + 1,
            p.selected().support.len(),
            p.selected_model.loglik,
            p.selected_bic()
        );
    }
    let best = r.best();
    println!("selected {} classes ({} focal)", r.best_k + 1, r.best_k);
    println!("selected support: {}", describe_support(&y, &best.selected().support));
    Ok(convergence_flag(&best.selected_model, "the selected refit"))
}

fn study(a: StudyArgs, threads: usize) -> Outcome {
    let mut m = StudyManifest::read(&a.manifest)?;
    if let Some(r) = a.reps {
        m.n_replications = r;
    }
    if let Some(d) = a.output_dir {
        m.output_dir = d;
    }
    let out = run_study(&m, threads)?;
    println!(
        "{} replications computed, {} reused, {} failed",
        out.computed,
        out.reused,
        out.failures.len()
    );
    for r in &out.reports {
        let tpr = r.tpr.map_or_else(|| "NA".into(), |t| format!("{t:.3}"));
        println!(
            "{}: TPR {tpr} FPR {:.3} class. error {:.3} AUC {:.3}",
            cell_name(&r.design),
            r.fpr,
            r.classification_error,
            r.auc
        );
    }
    println!("outputs in {}", m.output_dir.display());
    Ok(if !out.failures.is_empty() {
        Some(Flagged(format!(
            "{} replications failed; see {}",
            out.failures.len(),
            m.output_dir.join("failures.json").display()
        )))
    } else if out.unconverged > 0 {
        Some(Flagged(format!("{} selected refits did not converge", out.unconverged)))
    } else {
        None
    })
}

fn metrics(a: MetricsArgs) -> Outcome {
    let root = a.dir.join("replications");
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    let mut cells: Vec<PathBuf> = std::fs::read_dir(&root)
        .map_err(io_err(&root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    cells.sort();
    let mut reports: Vec<AggregateReport> = Vec::new();
    let (mut grid_points, mut seed) = (DEFAULT_GRID_POINTS, 0);
    for cell in cells {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&cell)
            .map_err(io_err(&cell))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut records = Vec::with_capacity(files.len());
        for f in files {
            let file = read_result(&f)?;
            grid_points = file.grid_points;
            seed = file.master_seed;
            match file.body {
                ResultBody::Replication(r) => records.push(r),
                _ => {
                    return Err(Error::Format {
                        path: f,
                        message: "expected a replication result".into(),
                    })
                }
            }
        }
        if !records.is_empty() {
            reports.push(aggregate(&records)?);
        }
    }
    if reports.is_empty() {
        return Err(Error::Config(format!("no replication files under {}", root.display())));
    }
    write_reports(&reports, grid_points, seed, &a.dir)?;
    println!("aggregated {} cells into {}", reports.len(), a.dir.join("report.json").display());
    Ok(None)
}

fn export(a: ExportArgs) -> Outcome {
    table_exporters().get(&a.style)?;
    let reports = match read_result(&a.report)?.body {
        ResultBody::Report(r) => r,
        _ => {
            return Err(Error::Format {
                path: a.report,
                message: "expected a report result".into(),
            })
        }
    };
    let chosen: Vec<AggregateReport> = match &a.cell {
        Some(c) => {
            let r: Vec<_> = reports.into_iter().filter(|r| &cell_name(&r.design) == c).collect();
            if r.is_empty() {
                return Err(Error::Config(format!("--cell {c}: no such design cell in the report")));
            }
            r
        }
        None => reports,
    };
    export_tables(&chosen, &a.style, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(None)
}
