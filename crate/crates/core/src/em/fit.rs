use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::estep::{m_step_nu, run_e_step};
use super::gradients::{gradient_rules, m_step_objective, GradientRule};
use super::metric::{step_metrics, StepMetric};
use super::prox::{CandidateMask, DifUpdate, Lasso, Unpenalized};
use super::{FitOptions, FitResult, COLLAPSE_PATIENCE, COLLAPSE_THRESHOLD};
use crate::error::{Error, Result};
use crate::likelihood::{check_dims, ResponseIndex};
use crate::model::{ModelParams, ResponseMatrix, Support, EULER_GAMMA, MU_CLIP, SIGMA_FLOOR};
use crate::quadrature::QuadratureGrid;

const START_JITTER_SD: f64 = 0.25;
const START_MU_OFFSET: f64 = 0.5;

/// Starting values for start `start` (0-based).
///
/// Difficulties invert the link at the reference-class mean ability,
/// `d_j = gamma - ln(-ln(1 - p_j))`; proportions are uniform, focal locations
/// alternate `+0.5, -0.5, ...`, scales are 1 and DIF is 0. Starts after the
/// first add N(0, 0.25^2) noise to `d` and the focal locations, drawn from
/// stream `start` of a generator seeded with `seed`.
pub fn initial_params(y: &ResponseMatrix, n_focal: usize, start: usize, seed: u64) -> Result<ModelParams> {
    let n = y.n_respondents() as f64;
    let floor = 0.5 / n;
    let mut d: Vec<f64> = y
        .item_means()
        .into_iter()
        .map(|p| {
            let p = p.clamp(floor, 1.0 - floor).clamp(1e-6, 1.0 - 1e-6);
            EULER_GAMMA - (-(-p).ln_1p()).ln()
        })
        .collect();
    let c = n_focal + 1;
    let mut mu: Vec<f64> = (0..c)
        .map(|k| match k {
            0 => 0.0,
            k if k % 2 == 1 => START_MU_OFFSET,
            _ => -START_MU_OFFSET,
        })
        .collect();
    if start > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(start as u64);
        let noise = Normal::new(0.0, START_JITTER_SD).expect("valid sd");
        d.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        mu.iter_mut().skip(1).for_each(|v| *v = (*v + noise.sample(&mut rng)).clamp(-MU_CLIP, MU_CLIP));
    }
    ModelParams::new(
        y.n_items(),
        n_focal,
        d,
        vec![0.0; y.n_items() * n_focal],
        vec![1.0 / c as f64; c],
        mu,
        vec![1.0; c],
    )
}

struct Engine<'a> {
    index: &'a ResponseIndex,
    grid: &'a QuadratureGrid,
    n: usize,
    lambda: f64,
    update: Arc<dyn DifUpdate>,
    rule: Arc<dyn GradientRule>,
    metric: Arc<dyn StepMetric>,
    mask: CandidateMask,
    opts: &'a FitOptions,
}

impl Engine<'_> {
    fn run(&self, init: &ModelParams, start_index: usize) -> Result<FitResult> {
        let n = self.n as f64;
        let lambda_unit = self.lambda / n;
        let kf = init.n_focal();
        let mut params = init.clone();
        for idx in 0..params.delta.len() {
            if !self.mask.is_free(idx) {
                params.delta[idx] = 0.0;
            }
        }

        let mut alpha = self.opts.step_init;
        let mut trace = Vec::new();
        let mut below = vec![0usize; kf];
        let mut frozen = vec![false; kf];
        let mut exhaustions = 0;
        let mut converged = false;
        let mut iters = 0;
        let loglik;

        loop {
            let (_, stats) = run_e_step(&params, self.index, self.grid, false)?;
            let objective = -stats.loglik + self.lambda * params.delta_l1();
            if let Some(&prev) = trace.last() {
                let change = (prev - objective) / f64::max(f64::abs(prev), f64::MIN_POSITIVE);
                if change.abs() < self.opts.tol {
                    converged = true;
                }
            }
            trace.push(objective);
            if converged || iters >= self.opts.max_outer_iter {
                loglik = stats.loglik;
                break;
            }
            iters += 1;

            params.nu = m_step_nu(&stats, self.n);
            for k in 0..kf {
                if params.nu[k + 1] < COLLAPSE_THRESHOLD {
                    below[k] += 1;
                    if below[k] >= COLLAPSE_PATIENCE {
                        frozen[k] = true;
                    }
                } else {
                    below[k] = 0;
                }
            }

            let grad = self.rule.compute(&params, &stats, self.grid);
            let scale = self.metric.scales(&params, &stats, self.grid);
            let current = m_step_objective(&params, &stats, self.grid) + self.update.penalty(&params.delta, lambda_unit);
            let outcome = self.opts.line_search.search(current, alpha, |a| {
                let mut cand = params.clone();
                for ((v, g), h) in cand.d.iter_mut().zip(&grad.d).zip(&scale.d) {
                    *v -= a * h * g;
                }
                let steps: Vec<f64> = scale.delta.iter().map(|h| a * h).collect();
                cand.delta = self.update.step(&params.delta, &grad.delta, &steps, lambda_unit, &self.mask);
                for k in 0..kf {
                    if frozen[k] {
                        continue;
                    }
                    cand.mu[k + 1] = (params.mu[k + 1] - a * scale.mu[k] * grad.mu[k]).clamp(-MU_CLIP, MU_CLIP);
                    cand.sigma[k + 1] = (params.sigma[k + 1] - a * scale.sigma[k] * grad.sigma[k]).max(SIGMA_FLOOR);
                }
                let value = m_step_objective(&cand, &stats, self.grid) + self.update.penalty(&cand.delta, lambda_unit);
                (cand, value)
            });
            match outcome.accepted {
                Some((cand, _)) => {
                    params = cand;
                    alpha = outcome.alpha;
                }
                None => exhaustions += 1,
            }
        }

        let penalized_objective = *trace.last().expect("at least one E-step");
        let collapsed_classes = (0..kf).filter(|&k| frozen[k] || params.nu[k + 1] < COLLAPSE_THRESHOLD).map(|k| k + 1).collect();
        Ok(FitResult {
            support: params.support(),
            params,
            lambda: self.lambda,
            loglik,
            penalized_objective,
            n_outer_iters: iters,
            converged,
            trace,
            start_index,
            collapsed_classes,
            line_search_exhaustions: exhaustions,
            step_size: alpha,
        })
    }
}

/// Relabels focal classes by descending proportion.
fn finalize(mut fit: FitResult) -> FitResult {
    let kf = fit.params.n_focal();
    let mut order: Vec<usize> = (0..kf).collect();
    order.sort_by(|&a, &b| fit.params.nu[b + 1].total_cmp(&fit.params.nu[a + 1]));
    fit.params = fit.params.permute_focal(&order);
    fit.collapsed_classes = fit
        .collapsed_classes
        .iter()
        .map(|&old| order.iter().position(|&o| o + 1 == old).expect("class in order") + 1)
        .collect();
    fit.collapsed_classes.sort_unstable();
    fit.support = fit.params.support();
    fit
}

fn build_engine<'a>(
    y: &ResponseMatrix,
    index: &'a ResponseIndex,
    lambda: f64,
    grid: &'a QuadratureGrid,
    opts: &'a FitOptions,
    update: Arc<dyn DifUpdate>,
    mask: CandidateMask,
) -> Result<Engine<'a>> {
    opts.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let rule = gradient_rules().get(&opts.gradient_rule)?;
    let metric = step_metrics().get(&opts.step_metric)?;
    Ok(Engine {
        index,
        grid,
        n: y.n_respondents(),
        lambda,
        update,
        rule,
        metric,
        mask,
        opts,
    })
}

fn multi_start(engine: &Engine<'_>, y: &ResponseMatrix, n_focal: usize, opts: &FitOptions) -> Result<FitResult> {
    let runs: Vec<Result<FitResult>> = (0..opts.n_starts)
        .into_par_iter()
        .map(|s| {
            let init = initial_params(y, n_focal, s, opts.seed)?;
            engine.run(&init, s)
        })
        .collect();
    let mut best: Option<FitResult> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.penalized_objective < b.penalized_objective) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(b) => Ok(finalize(b)),
        None => Err(first_err.expect("at least one start")),
    }
}

fn candidate_mask(n_items: usize, n_focal: usize, opts: &FitOptions) -> CandidateMask {
    match &opts.candidate_set {
        Some(s) => CandidateMask::from_support(n_items, n_focal, s),
        None => CandidateMask::all(n_items, n_focal),
    }
}

/// l1-penalized fit with `opts.n_starts` cold starts; `lambda` is on the total
/// (sum over respondents) scale.
pub fn fit_penalized(
    responses: &ResponseMatrix,
    n_focal: usize,
    lambda: f64,
    grid: &QuadratureGrid,
    opts: &FitOptions,
) -> Result<FitResult> {
    let index = ResponseIndex::new(responses);
    let mask = candidate_mask(responses.n_items(), n_focal, opts);
    let engine = build_engine(responses, &index, lambda, grid, opts, Arc::new(Lasso), mask)?;
    multi_start(&engine, responses, n_focal, opts)
}

/// Penalized fit from a single warm start.
pub fn fit_from(
    responses: &ResponseMatrix,
    init: &ModelParams,
    lambda: f64,
    grid: &QuadratureGrid,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_dims(init, responses)?;
    let index = ResponseIndex::new(responses);
    let mask = candidate_mask(responses.n_items(), init.n_focal(), opts);
    let engine = build_engine(responses, &index, lambda, grid, opts, Arc::new(Lasso), mask)?;
    Ok(finalize(engine.run(init, 0)?))
}

/// Unpenalized fit with `delta_jk = 0` for every `(j, k)` outside `support`.
///
/// With a warm start a single run is made from it; otherwise
/// `opts.n_starts` cold starts.
pub fn fit_constrained(
    responses: &ResponseMatrix,
    n_focal: usize,
    support: &Support,
    grid: &QuadratureGrid,
    opts: &FitOptions,
    warm_start: Option<&ModelParams>,
) -> Result<FitResult> {
    let index = ResponseIndex::new(responses);
    let mask = CandidateMask::from_support(responses.n_items(), n_focal, support);
    let engine = build_engine(responses, &index, 0.0, grid, opts, Arc::new(Unpenalized), mask)?;
    match warm_start {
        Some(init) => {
            check_dims(init, responses)?;
            if init.n_focal() != n_focal {
                return Err(Error::Dimension(format!(
                    "warm start has {} focal classes, expected {n_focal}",
                    init.n_focal()
                )));
            }
            Ok(finalize(engine.run(init, 0)?))
        }
        None => multi_start(&engine, responses, n_focal, opts),
    }
}

/// Posterior class probabilities per respondent, row-major `N x (K+1)`.
pub fn posterior_class_probabilities(
    params: &ModelParams,
    responses: &ResponseMatrix,
    grid: &QuadratureGrid,
) -> Result<Vec<f64>> {
    let (w, _) = super::estep::e_step(params, responses, grid)?;
    Ok(w.class_probabilities())
}
