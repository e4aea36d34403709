//! Penalize-then-refit regularization path with BIC selection over the
//! penalty weight and the number of focal classes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::estep::run_e_step;
use crate::em::{fit_constrained, fit_from, fit_penalized, gradients, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::likelihood::ResponseIndex;
use crate::model::{ResponseMatrix, Support};
use crate::quadrature::QuadratureGrid;

pub const DEFAULT_PATH_POINTS: usize = 30;
/// Smallest grid value relative to `lambda_max`.
pub const LAMBDA_MIN_RATIO: f64 = 1e-3;
/// Inflation of the computed `lambda_max` that absorbs the optimization
/// tolerance of the impact-only fit.
pub const LAMBDA_MAX_INFLATION: f64 = 1.01;
/// Cap on the grid points added above `lambda_max` by the return sweep.
pub const MAX_UPWARD_POINTS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub m: usize,
    /// Warm-start each penalty value from the previous solution; cold
    /// multi-starts are then used at the first value only.
    pub warm_start: bool,
    /// With warm starts, sweep the grid a second time in ascending order and
    /// keep, per penalty value, the fit with the lower penalized objective.
    /// When the top fit still carries DIF, the grid is then continued above
    /// `lambda_max` at the same ratio until the support empties.
    #[serde(default = "default_return_sweep")]
    pub return_sweep: bool,
    pub fit: FitOptions,
}

fn default_return_sweep() -> bool {
    true
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            m: DEFAULT_PATH_POINTS,
            warm_start: true,
            return_sweep: true,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub lambda: f64,
    pub penalized_fit: FitResult,
    pub support: Support,
    /// `None` when the refit failed numerically; the point is then skipped by
    /// selection.
    pub refit: Option<FitResult>,
    pub bic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub n_focal: usize,
    /// Strictly decreasing. The last `m` values are the geometric grid; any
    /// earlier ones come from the upward continuation of the return sweep.
    pub lambdas: Vec<f64>,
    pub per_lambda: Vec<PathRecord>,
    pub selected_index: usize,
    pub selected_model: FitResult,
}

impl PathResult {
    pub fn selected(&self) -> &PathRecord {
        &self.per_lambda[self.selected_index]
    }

    pub fn selected_bic(&self) -> f64 {
        self.selected().bic.expect("selected record has a BIC")
    }
}

/// Number of free parameters: `J + |support| + K + 2K`.
pub fn parameter_count(n_items: usize, n_focal: usize, support_len: usize) -> usize {
    n_items + support_len + n_focal + 2 * n_focal
}

/// `-2 ln L + ln(N) * card` of a refit.
pub fn bic(refit: &FitResult, n: usize) -> f64 {
    let card = parameter_count(refit.params.n_items(), refit.params.n_focal(), refit.support.len());
    -2.0 * refit.loglik + (n as f64).ln() * card as f64
}

/// `N * max |d(-Q/N)/d delta|` at the impact-only fit, times
/// [`LAMBDA_MAX_INFLATION`]; at or above it the zero DIF matrix is a fixed
/// point of the proximal step started from that fit.
pub fn lambda_max(responses: &ResponseMatrix, n_focal: usize, grid: &QuadratureGrid, opts: &FitOptions) -> Result<f64> {
    Ok(lambda_max_with_fit(responses, n_focal, grid, opts)?.0)
}

/// [`lambda_max`] together with the impact-only fit it is computed at
/// (`None` when `n_focal = 0`).
///
/// The penalized problem is not convex: other starts can reach DIF-carrying
/// optima with a lower penalized objective even above this value.
pub fn lambda_max_with_fit(
    responses: &ResponseMatrix,
    n_focal: usize,
    grid: &QuadratureGrid,
    opts: &FitOptions,
) -> Result<(f64, Option<FitResult>)> {
    if n_focal == 0 {
        return Ok((0.0, None));
    }
    let base = fit_constrained(responses, n_focal, &Support::new(), grid, opts, None)?;
    let index = ResponseIndex::new(responses);
    let (_, stats) = run_e_step(&base.params, &index, grid, false)?;
    let g = gradients(&base.params, &stats, grid);
    let worst = g.delta.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok((responses.n_respondents() as f64 * worst * LAMBDA_MAX_INFLATION, Some(base)))
}

fn geometric_grid(top: f64, m: usize) -> Vec<f64> {
    let ratio = LAMBDA_MIN_RATIO.powf(1.0 / (m - 1) as f64);
    let mut out: Vec<f64> = (0..m).map(|i| top * ratio.powi(i as i32)).collect();
    out[m - 1] = top * LAMBDA_MIN_RATIO;
    out
}

/// `m` geometrically spaced values from `lambda_max` down to
/// `1e-3 * lambda_max`.
pub fn lambda_grid(
    responses: &ResponseMatrix,
    n_focal: usize,
    m: usize,
    grid: &QuadratureGrid,
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::Config(format!("the penalty grid needs at least 2 points, got {m}")));
    }
    let top = lambda_max(responses, n_focal, grid, opts)?;
    if !(top > 0.0) {
        return Err(Error::Numerical("lambda_max is zero: the DIF gradient vanishes at the impact-only fit".into()));
    }
    Ok(geometric_grid(top, m))
}

/// Arg-min BIC; ties go to the larger penalty (earlier index).
fn select(records: &[PathRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(b) = r.bic {
            if best.is_none_or(|(_, v)| b < v) {
                best = Some((i, b));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn refit_record(
    responses: &ResponseMatrix,
    n_focal: usize,
    lambda: f64,
    penalized: FitResult,
    grid: &QuadratureGrid,
    opts: &FitOptions,
    cache: &mut BTreeMap<Support, Option<FitResult>>,
) -> PathRecord {
    let support = penalized.support.clone();
    let refit = cache
        .entry(support.clone())
        .or_insert_with(|| {
            let refit_opts = FitOptions { candidate_set: None, ..opts.clone() };
            fit_constrained(responses, n_focal, &support, grid, &refit_opts, Some(&penalized.params)).ok()
        })
        .clone();
    let bic = refit.as_ref().map(|r| bic(r, responses.n_respondents()));
    PathRecord {
        lambda,
        penalized_fit: penalized,
        support,
        refit,
        bic,
    }
}

/// Descending warm-started penalized fits, optionally improved by an
/// ascending sweep started from the smallest penalty. Warm starts from
/// opposite ends can settle in different local optima; the lower penalized
/// objective wins, the descending fit on ties.
///
/// The ascending sweep can end in a DIF-carrying optimum at `lambda_max`,
/// whose sparser neighbours lie above the grid. It then continues upward at
/// the grid ratio until the support is empty. Returns the penalty values,
/// extended at the front, with their fits.
fn warm_sweeps(
    responses: &ResponseMatrix,
    n_focal: usize,
    lambdas: &[f64],
    grid: &QuadratureGrid,
    opts: &PathOptions,
) -> Result<(Vec<f64>, Vec<FitResult>)> {
    let mut fits: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let fit = match fits.last() {
            None => fit_penalized(responses, n_focal, lambda, grid, &opts.fit)?,
            Some(prev) => fit_from(responses, &prev.params, lambda, grid, &opts.fit)?,
        };
        fits.push(fit);
    }
    if !opts.return_sweep {
        return Ok((lambdas.to_vec(), fits));
    }
    let mut prev = fits[fits.len() - 1].params.clone();
    for i in (0..lambdas.len() - 1).rev() {
        let up = fit_from(responses, &prev, lambdas[i], grid, &opts.fit)?;
        prev = up.params.clone();
        if up.penalized_objective < fits[i].penalized_objective {
            fits[i] = up;
        }
    }
    let growth = lambdas[0] / lambdas[1];
    let mut above: Vec<(f64, FitResult)> = Vec::new();
    let mut top = fits[0].clone();
    let mut lambda = lambdas[0];
    while !top.support.is_empty() && above.len() < MAX_UPWARD_POINTS {
        lambda *= growth;
        top = fit_from(responses, &top.params, lambda, grid, &opts.fit)?;
        above.push((lambda, top.clone()));
    }
    let (mut all_lambdas, mut all_fits): (Vec<f64>, Vec<FitResult>) = above.into_iter().rev().unzip();
    all_lambdas.extend_from_slice(lambdas);
    all_fits.extend(fits);
    Ok((all_lambdas, all_fits))
}

/// Two-stage path: for every penalty value a penalized fit, a constrained
/// refit on its support, and the refit's BIC. Refits are shared between
/// penalty values with identical supports.
///
/// With `n_focal = 0` there is no DIF to penalize and the path is a single
/// record at `lambda = 0`.
pub fn two_stage_path(
    responses: &ResponseMatrix,
    n_focal: usize,
    grid: &QuadratureGrid,
    opts: &PathOptions,
) -> Result<PathResult> {
    opts.fit.validate()?;
    if n_focal == 0 {
        let fit = fit_constrained(responses, 0, &Support::new(), grid, &opts.fit, None)?;
        let rec = PathRecord {
            lambda: 0.0,
            support: Support::new(),
            bic: Some(bic(&fit, responses.n_respondents())),
            refit: Some(fit.clone()),
            penalized_fit: fit.clone(),
        };
        return Ok(PathResult {
            n_focal,
            lambdas: vec![0.0],
            per_lambda: vec![rec],
            selected_index: 0,
            selected_model: fit,
        });
    }
    let mut lambdas = lambda_grid(responses, n_focal, opts.m, grid, &opts.fit)?;
    let mut cache = BTreeMap::new();
    let records: Vec<PathRecord> = if opts.warm_start {
        let (extended, fits) = warm_sweeps(responses, n_focal, &lambdas, grid, opts)?;
        lambdas = extended;
        fits.into_iter()
            .zip(&lambdas)
            .map(|(fit, &lambda)| refit_record(responses, n_focal, lambda, fit, grid, &opts.fit, &mut cache))
            .collect()
    } else {
        let fits: Vec<Result<FitResult>> = lambdas
            .par_iter()
            .map(|&lambda| fit_penalized(responses, n_focal, lambda, grid, &opts.fit))
            .collect();
        let mut out = Vec::with_capacity(lambdas.len());
        for (fit, &lambda) in fits.into_iter().zip(&lambdas) {
            out.push(refit_record(responses, n_focal, lambda, fit?, grid, &opts.fit, &mut cache));
        }
        out
    };
    let selected_index = select(&records)
        .ok_or_else(|| Error::Numerical("every refit along the path failed".into()))?;
    let selected_model = records[selected_index].refit.clone().expect("selected record has a refit");
    Ok(PathResult {
        n_focal,
        lambdas,
        per_lambda: records,
        selected_index,
        selected_model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectKResult {
    /// One path per candidate, in ascending order of K.
    pub paths: Vec<PathResult>,
    pub best_k: usize,
}

impl SelectKResult {
    pub fn best(&self) -> &PathResult {
        self.paths.iter().find(|p| p.n_focal == self.best_k).expect("best K has a path")
    }
}

/// Path per candidate K; the smallest selected BIC wins, ties to smaller K.
pub fn select_k(
    responses: &ResponseMatrix,
    candidates: &[usize],
    grid: &QuadratureGrid,
    opts: &PathOptions,
) -> Result<SelectKResult> {
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::Config("no candidate class counts given".into()));
    }
    let paths = ks
        .iter()
        .map(|&k| two_stage_path(responses, k, grid, opts))
        .collect::<Result<Vec<_>>>()?;
    let best = paths
        .iter()
        .fold(None::<&PathResult>, |b, p| match b {
            Some(b) if b.selected_bic() <= p.selected_bic() => Some(b),
            _ => Some(p),
        })
        .expect("non-empty");
    Ok(SelectKResult {
        best_k: best.n_focal,
        paths,
    })
}
