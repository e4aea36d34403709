use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::{check_dims, normalize_in_place, pairwise_sum, LogTables, ResponseIndex, CHUNK};
use crate::model::{ModelParams, ResponseMatrix};
use crate::quadrature::QuadratureGrid;

/// Joint posterior over `(class, node)` for every respondent, row-major
/// `N x (K+1) x G`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorWeights {
    pub n_respondents: usize,
    pub n_classes: usize,
    pub n_nodes: usize,
    pub w: Vec<f64>,
}

impl PosteriorWeights {
    #[inline]
    pub fn get(&self, i: usize, k: usize, q: usize) -> f64 {
        self.w[(i * self.n_classes + k) * self.n_nodes + q]
    }

    /// Posterior class probabilities, row-major `N x (K+1)`.
    pub fn class_probabilities(&self) -> Vec<f64> {
        self.w.chunks_exact(self.n_nodes).map(|c| c.iter().sum()).collect()
    }
}

/// Expected counts from the E-step.
///
/// `s[k * G + q]` is the posterior mass at `(k, q)` and
/// `o[j * (K+1) * G + k * G + q]` the part of it from respondents who
/// answered item `j` correctly.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepSufficientStats {
    pub n_respondents: usize,
    pub n_items: usize,
    pub n_classes: usize,
    pub n_nodes: usize,
    pub s: Vec<f64>,
    pub o: Vec<f64>,
    /// Observed-data log-likelihood at the parameters the E-step ran with.
    pub loglik: f64,
}

impl EStepSufficientStats {
    #[inline]
    pub fn s(&self, k: usize, q: usize) -> f64 {
        self.s[k * self.n_nodes + q]
    }

    #[inline]
    pub fn o(&self, j: usize, k: usize, q: usize) -> f64 {
        self.o[(j * self.n_classes + k) * self.n_nodes + q]
    }
}

struct Partial {
    s: Vec<f64>,
    o: Vec<f64>,
    ll: Vec<f64>,
    w: Vec<f64>,
}

pub(crate) fn run_e_step(
    params: &ModelParams,
    index: &ResponseIndex,
    grid: &QuadratureGrid,
    keep_weights: bool,
) -> Result<(Option<PosteriorWeights>, EStepSufficientStats)> {
    let tables = LogTables::new(params, grid);
    let n = index.n();
    let cells = tables.n_cells;
    let n_items = params.n_items();
    let ids: Vec<usize> = (0..n).collect();
    let partials: Vec<Partial> = ids
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut p = Partial {
                s: vec![0.0; cells],
                o: vec![0.0; n_items * cells],
                ll: Vec::with_capacity(chunk.len()),
                w: Vec::new(),
            };
            let mut buf = vec![0.0; cells];
            for &i in chunk {
                let correct = index.correct(i);
                tables.respondent_cells(correct, &mut buf);
                p.ll.push(normalize_in_place(&mut buf));
                for (s, &w) in p.s.iter_mut().zip(&buf) {
                    *s += w;
                }
                for &j in correct {
                    let row = &mut p.o[j as usize * cells..(j as usize + 1) * cells];
                    for (o, &w) in row.iter_mut().zip(&buf) {
                        *o += w;
                    }
                }
                if keep_weights {
                    p.w.extend_from_slice(&buf);
                }
            }
            p
        })
        .collect();

    let mut s = vec![0.0; cells];
    let mut o = vec![0.0; n_items * cells];
    let mut ll = Vec::with_capacity(n);
    let mut w = Vec::new();
    for p in partials {
        s.iter_mut().zip(&p.s).for_each(|(a, b)| *a += b);
        o.iter_mut().zip(&p.o).for_each(|(a, b)| *a += b);
        ll.extend(p.ll);
        if keep_weights {
            w.extend(p.w);
        }
    }
    if let Some(i) = ll.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { respondent: i });
    }
    let stats = EStepSufficientStats {
        n_respondents: n,
        n_items,
        n_classes: params.n_classes(),
        n_nodes: grid.n_nodes(),
        s,
        o,
        loglik: pairwise_sum(&ll),
    };
    let weights = keep_weights.then(|| PosteriorWeights {
        n_respondents: n,
        n_classes: params.n_classes(),
        n_nodes: grid.n_nodes(),
        w,
    });
    Ok((weights, stats))
}

/// Posterior weights over `(class, node)` and their aggregated sufficient
/// statistics.
pub fn e_step(
    params: &ModelParams,
    responses: &ResponseMatrix,
    grid: &QuadratureGrid,
) -> Result<(PosteriorWeights, EStepSufficientStats)> {
    check_dims(params, responses)?;
    let index = ResponseIndex::new(responses);
    let (w, stats) = run_e_step(params, &index, grid, true)?;
    Ok((w.expect("weights requested"), stats))
}

/// Closed-form class proportions `nu_k = (1/N) sum_q S_q^(k)`.
pub fn m_step_nu(stats: &EStepSufficientStats, n: usize) -> Vec<f64> {
    let g = stats.n_nodes;
    let mass: Vec<f64> = (0..stats.n_classes)
        .map(|k| pairwise_sum(&stats.s[k * g..(k + 1) * g]))
        .collect();
    let inv = 1.0 / n as f64;
    let mut nu: Vec<f64> = mass.iter().map(|m| m * inv).collect();
    // absorb rounding into the largest class so the simplex holds exactly
    let total: f64 = nu.iter().sum();
    if let Some(big) = (0..nu.len()).max_by(|&a, &b| nu[a].total_cmp(&nu[b])) {
        nu[big] += 1.0 - total;
        nu[big] = nu[big].max(0.0);
    }
    nu
}
