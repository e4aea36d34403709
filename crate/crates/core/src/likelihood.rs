//! Marginal likelihood of a response matrix under the mixture model.
//!
//! For every class `k` and node `q` the item log-probabilities are tabulated
//! once; a respondent's log-likelihood at `(k, q)` is then the sum of
//! `ln(1 - P)` over all items plus `ln P - ln(1 - P)` over the items answered
//! correctly. Class and node are marginalised with log-sum-exp.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{log_probs, ModelParams, ResponseMatrix};
use crate::quadrature::QuadratureGrid;

/// Respondents per work unit. Partial sums are always combined in chunk order,
/// so totals do not depend on the number of threads.
pub(crate) const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodValue {
    pub loglik: f64,
    pub per_respondent: Vec<f64>,
}

/// Correct-answer item indices per respondent, flattened.
pub(crate) struct ResponseIndex {
    offsets: Vec<usize>,
    items: Vec<u32>,
}

impl ResponseIndex {
    pub(crate) fn new(y: &ResponseMatrix) -> Self {
        let mut offsets = Vec::with_capacity(y.n_respondents() + 1);
        let mut items = Vec::new();
        offsets.push(0);
        for row in y.rows() {
            items.extend(row.iter().enumerate().filter(|(_, &v)| v == 1).map(|(j, _)| j as u32));
            offsets.push(items.len());
        }
        ResponseIndex { offsets, items }
    }

    #[inline]
    pub(crate) fn correct(&self, i: usize) -> &[u32] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }

    pub(crate) fn n(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Item log-probabilities on the class-specific node grid.
///
/// Cells are indexed `c = k * G + q`.
pub(crate) struct LogTables {
    pub(crate) n_cells: usize,
    /// `ln(nu_k) + ln(omega_q)` plus `sum_j ln(1 - P_jkq)`.
    pub(crate) base: Vec<f64>,
    /// `ln P_jkq - ln(1 - P_jkq)`, item-major (`j * n_cells + c`).
    pub(crate) logit: Vec<f64>,
}

impl LogTables {
    pub(crate) fn new(params: &ModelParams, grid: &QuadratureGrid) -> Self {
        let g = grid.n_nodes();
        let c_tot = params.n_classes() * g;
        let j_tot = params.n_items();
        let mut base = vec![0.0; c_tot];
        let mut logit = vec![0.0; j_tot * c_tot];
        for k in 0..params.n_classes() {
            let ln_nu = params.nu[k].ln();
            for (q, (&rho, &lw)) in grid.nodes().iter().zip(grid.log_weights()).enumerate() {
                let c = k * g + q;
                let theta = params.mu[k] + params.sigma[k] * rho;
                let mut acc = ln_nu + lw;
                for j in 0..j_tot {
                    let (lp, lq) = log_probs(theta - params.d[j] - params.dif(j, k));
                    acc += lq;
                    logit[j * c_tot + c] = lp - lq;
                }
                base[c] = acc;
            }
        }
        LogTables {
            n_cells: c_tot,
            base,
            logit,
        }
    }

    /// Joint log-density of respondent `i`'s responses and each cell, written
    /// into `out`.
    #[inline]
    pub(crate) fn respondent_cells(&self, correct: &[u32], out: &mut [f64]) {
        out.copy_from_slice(&self.base);
        for &j in correct {
            let row = &self.logit[j as usize * self.n_cells..(j as usize + 1) * self.n_cells];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
}

/// Log-sum-exp over `cells` in place: on return `cells[c]` holds
/// `exp(cells[c] - lse)` and the function returns `lse`.
#[inline]
pub(crate) fn normalize_in_place(cells: &mut [f64]) -> f64 {
    let m = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in cells.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    let inv = 1.0 / s;
    cells.iter_mut().for_each(|v| *v *= inv);
    m + s.ln()
}

pub(crate) fn check_dims(params: &ModelParams, y: &ResponseMatrix) -> Result<()> {
    if params.n_items() != y.n_items() {
        return Err(Error::Dimension(format!(
            "model has {} items but the data has {}",
            params.n_items(),
            y.n_items()
        )));
    }
    Ok(())
}

/// Deterministic pairwise sum.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Marginal log-likelihood, total and per respondent.
pub fn marginal_loglik(
    params: &ModelParams,
    responses: &ResponseMatrix,
    grid: &QuadratureGrid,
) -> Result<LikelihoodValue> {
    check_dims(params, responses)?;
    let tables = LogTables::new(params, grid);
    let index = ResponseIndex::new(responses);
    let n = index.n();
    let per_respondent: Vec<f64> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut cells = vec![0.0; tables.n_cells];
            chunk
                .iter()
                .map(|&i| {
                    tables.respondent_cells(index.correct(i), &mut cells);
                    normalize_in_place(&mut cells)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    if let Some(i) = per_respondent.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { respondent: i });
    }
    Ok(LikelihoodValue {
        loglik: pairwise_sum(&per_respondent),
        per_respondent,
    })
}

/// `-ln L + lambda * sum |delta|` on the total (not per-respondent) scale.
pub fn penalized_objective(
    params: &ModelParams,
    responses: &ResponseMatrix,
    grid: &QuadratureGrid,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let ll = marginal_loglik(params, responses, grid)?;
    Ok(-ll.loglik + lambda * params.delta_l1())
}
