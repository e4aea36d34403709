//! Gradients of the per-respondent negative expected complete-data
//! log-likelihood `-Q / N` for fixed E-step statistics.
//!
//! With `z = mu_k + sigma_k rho_q - d_j - delta_jk` and residual
//! `D = O - P S`, the derivative of the cell's contribution with respect to
//! `z` is `-D s(z)`. Chain-rule factors are `dz/dd = dz/ddelta = -1`,
//! `dz/dmu = 1` and `dz/dsigma = rho_q`.

use std::sync::Arc;

use crate::em::estep::EStepSufficientStats;
use crate::model::{active_score, clamped_prob, log_probs, score_unchecked, ModelParams};
use crate::quadrature::QuadratureGrid;
use crate::registry::{Named, Registry};

/// Gradient with respect to every free parameter; focal-class entries only
/// for `delta` (`J x K`, row-major), `mu` and `sigma` (length `K`).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d: Vec<f64>,
    pub delta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GradientBundle {
    fn zeros(j: usize, k: usize) -> Self {
        GradientBundle {
            d: vec![0.0; j],
            delta: vec![0.0; j * k],
            mu: vec![0.0; k],
            sigma: vec![0.0; k],
        }
    }
}

/// `-Q / N` restricted to the item terms:
/// `-(1/N) sum_{j,k,q} [O ln P + (S - O) ln(1 - P)]`.
pub fn m_step_objective(params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> f64 {
    let mut total = 0.0;
    for k in 0..params.n_classes() {
        for (q, &rho) in grid.nodes().iter().enumerate() {
            let s = stats.s(k, q);
            let theta = params.mu[k] + params.sigma[k] * rho;
            for j in 0..params.n_items() {
                let o = stats.o(j, k, q);
                let (lp, lq) = log_probs(theta - params.d[j] - params.dif(j, k));
                total += o * lp + (s - o) * lq;
            }
        }
    }
    -total / stats.n_respondents as f64
}

/// Analytic gradient of [`m_step_objective`].
pub fn gradients(params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> GradientBundle {
    let (jn, kn) = (params.n_items(), params.n_focal());
    let inv_n = 1.0 / stats.n_respondents as f64;
    let mut g = GradientBundle::zeros(jn, kn);
    for k in 0..params.n_classes() {
        for (q, &rho) in grid.nodes().iter().enumerate() {
            let s = stats.s(k, q);
            let theta = params.mu[k] + params.sigma[k] * rho;
            for j in 0..jn {
                let z = theta - params.d[j] - params.dif(j, k);
                let resid = stats.o(j, k, q) - clamped_prob(z) * s;
                let a = resid * active_score(z) * inv_n;
                g.d[j] += a;
                if k > 0 {
                    g.delta[j * kn + k - 1] += a;
                    g.mu[k - 1] -= a;
                    g.sigma[k - 1] -= a * rho;
                }
            }
        }
    }
    g
}

/// Alternative sign convention: a leading minus sign on every term and the
/// node factor `(rho_q - mu_k) / sigma_k` for the scale. The signs for `d`
/// and `delta` disagree with finite differences; kept for diagnostic
/// comparison only.
pub fn gradients_printed(params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> GradientBundle {
    let (jn, kn) = (params.n_items(), params.n_focal());
    let inv_n = 1.0 / stats.n_respondents as f64;
    let mut g = GradientBundle::zeros(jn, kn);
    for k in 0..params.n_classes() {
        for (q, &rho) in grid.nodes().iter().enumerate() {
            let s = stats.s(k, q);
            let theta = params.mu[k] + params.sigma[k] * rho;
            let rho_std = (rho - params.mu[k]) / params.sigma[k];
            for j in 0..jn {
                let z = theta - params.d[j] - params.dif(j, k);
                let resid = stats.o(j, k, q) - clamped_prob(z) * s;
                let a = -resid * score_unchecked(z) * inv_n;
                g.d[j] += a;
                if k > 0 {
                    g.delta[j * kn + k - 1] += a;
                    g.mu[k - 1] += a;
                    g.sigma[k - 1] += a * rho_std;
                }
            }
        }
    }
    g
}

/// A rule producing the M-step gradient.
pub trait GradientRule: Named + Send + Sync {
    fn compute(&self, params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> GradientBundle;
}

/// Chain-rule derivation, verified against finite differences.
pub struct Derived;

/// The alternative sign convention of [`gradients_printed`].
pub struct Printed;

impl Named for Derived {
    fn name(&self) -> &'static str {
        "derived"
    }
}

impl GradientRule for Derived {
    fn compute(&self, params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> GradientBundle {
        gradients(params, stats, grid)
    }
}

impl Named for Printed {
    fn name(&self) -> &'static str {
        "printed"
    }
}

impl GradientRule for Printed {
    fn compute(&self, params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> GradientBundle {
        gradients_printed(params, stats, grid)
    }
}

pub fn gradient_rules() -> Registry<dyn GradientRule> {
    let mut r: Registry<dyn GradientRule> = Registry::new("gradient rule");
    r.register(Arc::new(Derived));
    r.register(Arc::new(Printed));
    r
}

/// Largest relative disagreement between a gradient rule and central finite
/// differences of [`m_step_objective`] over all coordinates.
pub fn finite_difference_check(
    rule: &dyn GradientRule,
    params: &ModelParams,
    stats: &EStepSufficientStats,
    grid: &QuadratureGrid,
    h: f64,
) -> f64 {
    let g = rule.compute(params, stats, grid);
    let fd = |bump: &dyn Fn(&mut ModelParams, f64)| {
        let mut plus = params.clone();
        bump(&mut plus, h);
        let mut minus = params.clone();
        bump(&mut minus, -h);
        (m_step_objective(&plus, stats, grid) - m_step_objective(&minus, stats, grid)) / (2.0 * h)
    };
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-6);
    let mut worst: f64 = 0.0;
    for j in 0..params.n_items() {
        worst = worst.max(rel(g.d[j], fd(&|p, e| p.d[j] += e)));
    }
    for idx in 0..params.delta.len() {
        worst = worst.max(rel(g.delta[idx], fd(&|p, e| p.delta[idx] += e)));
    }
    for k in 1..params.n_classes() {
        worst = worst.max(rel(g.mu[k - 1], fd(&|p, e| p.mu[k] += e)));
        worst = worst.max(rel(g.sigma[k - 1], fd(&|p, e| p.sigma[k] += e)));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::estep::e_step;
    use crate::model::ResponseMatrix;

    fn instance() -> (ModelParams, ResponseMatrix) {
        let p = ModelParams::new(
            3,
            1,
            vec![-0.8, 0.1, 0.9],
            vec![0.4, 0.0, -0.3],
            vec![0.65, 0.35],
            vec![0.0, 0.5],
            vec![1.0, 0.8],
        )
        .unwrap();
        let rows: Vec<Vec<u8>> = (0..40u32)
            .map(|i| (0..3).map(|j| (((i * 7 + j * 3) % 5) < 3) as u8).collect())
            .collect();
        (p, ResponseMatrix::from_rows(&rows).unwrap())
    }

    #[test]
    fn derived_gradient_matches_finite_differences() {
        let grid = QuadratureGrid::default();
        let (p, y) = instance();
        let (_, stats) = e_step(&p, &y, &grid).unwrap();
        let worst = finite_difference_check(&Derived, &p, &stats, &grid, 1e-5);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn printed_gradient_fails_finite_differences() {
        let grid = QuadratureGrid::default();
        let (p, y) = instance();
        let (_, stats) = e_step(&p, &y, &grid).unwrap();
        assert!(finite_difference_check(&Printed, &p, &stats, &grid, 1e-5) > 0.5);
    }

    #[test]
    fn d_gradient_on_a_perturbed_coordinate() {
        let grid = QuadratureGrid::default();
        let (p, y) = instance();
        let (_, stats) = e_step(&p, &y, &grid).unwrap();
        let g = gradients(&p, &stats, &grid);
        let h = 1e-5;
        let mut a = p.clone();
        a.d[1] += h;
        let mut b = p.clone();
        b.d[1] -= h;
        let fd = (m_step_objective(&a, &stats, &grid) - m_step_objective(&b, &stats, &grid)) / (2.0 * h);
        assert!(((g.d[1] - fd) / fd).abs() < 1e-5);
    }

    #[test]
    fn delta_gradient_is_the_focal_slice_of_the_d_gradient() {
        let grid = QuadratureGrid::default();
        let (mut p, y) = instance();
        p.delta = vec![0.0; 3];
        let (_, stats) = e_step(&p, &y, &grid).unwrap();
        let g = gradients(&p, &stats, &grid);
        // reference-only contribution, recomputed from the class-0 cells
        let mut reference = vec![0.0; 3];
        for (q, &rho) in grid.nodes().iter().enumerate() {
            for (j, r) in reference.iter_mut().enumerate() {
                let z = rho - p.d()[j];
                *r += (stats.o(j, 0, q) - clamped_prob(z) * stats.s(0, q)) * active_score(z) / 40.0;
            }
        }
        for j in 0..3 {
            assert!((g.d[j] - reference[j] - g.delta[j]).abs() < 1e-14);
        }
        // shifting every delta and mu together is flat: sum of delta grads = mu grad
        let total: f64 = g.delta.iter().sum();
        assert!((total + g.mu[0]).abs() < 1e-12);
    }

    #[test]
    fn gradients_vanish_at_a_saturated_fit() {
        // when O = P S exactly in every cell the residuals and gradients are zero
        let grid = QuadratureGrid::new(9).unwrap();
        let p = ModelParams::single_class(vec![0.3]).unwrap();
        let s: Vec<f64> = grid.weights().iter().map(|w| w * 100.0).collect();
        let o: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(&s)
            .map(|(&r, s)| clamped_prob(r - 0.3) * s)
            .collect();
        let stats = EStepSufficientStats { n_respondents: 100, n_items: 1, n_classes: 1, n_nodes: 9, s, o, loglik: 0.0 };
        let g = gradients(&p, &stats, &grid);
        assert!(g.d[0].abs() < 1e-14);
    }

    #[test]
    fn registry_lookup() {
        let r = gradient_rules();
        assert_eq!(r.names(), vec!["derived", "printed"]);
        assert!(r.get("symbolic").is_err());
    }
}
