//! Per-coordinate step scaling for the M-step.

use std::sync::Arc;

use crate::em::estep::EStepSufficientStats;
use crate::em::gradients::GradientBundle;
use crate::model::{active_score, clamped_prob, ModelParams};
use crate::quadrature::QuadratureGrid;
use crate::registry::{Named, Registry};

/// Curvature below this is treated as this value.
pub const CURVATURE_FLOOR: f64 = 1e-4;

/// Maps the current iterate to one step multiplier per free parameter, laid
/// out like [`GradientBundle`]. The line-searched step of coordinate `i` is
/// `alpha * scale[i]`.
pub trait StepMetric: Named + Send + Sync {
    fn scales(&self, params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> GradientBundle;
}

/// Unit scaling: a plain gradient step shared by all coordinates.
pub struct Identity;

/// Inverse of the diagonal of the expected information of `-Q / N`.
pub struct Fisher;

impl Named for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
}

impl StepMetric for Identity {
    fn scales(&self, params: &ModelParams, _stats: &EStepSufficientStats, _grid: &QuadratureGrid) -> GradientBundle {
        let (j, k) = (params.n_items(), params.n_focal());
        GradientBundle {
            d: vec![1.0; j],
            delta: vec![1.0; j * k],
            mu: vec![1.0; k],
            sigma: vec![1.0; k],
        }
    }
}

impl Named for Fisher {
    fn name(&self) -> &'static str {
        "fisher"
    }
}

impl StepMetric for Fisher {
    fn scales(&self, params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> GradientBundle {
        let mut h = fisher_diagonal(params, stats, grid);
        for v in h.d.iter_mut().chain(&mut h.delta).chain(&mut h.mu).chain(&mut h.sigma) {
            *v = 1.0 / v.max(CURVATURE_FLOOR);
        }
        h
    }
}

/// Diagonal of the expected information of `-Q / N`: per cell the binomial
/// information in `z` is `S P (1 - P) s^2`, times the squared chain-rule
/// factor of the coordinate.
pub fn fisher_diagonal(params: &ModelParams, stats: &EStepSufficientStats, grid: &QuadratureGrid) -> GradientBundle {
    let (jn, kn) = (params.n_items(), params.n_focal());
    let inv_n = 1.0 / stats.n_respondents as f64;
    let mut h = GradientBundle {
        d: vec![0.0; jn],
        delta: vec![0.0; jn * kn],
        mu: vec![0.0; kn],
        sigma: vec![0.0; kn],
    };
    for k in 0..params.n_classes() {
        for (q, &rho) in grid.nodes().iter().enumerate() {
            let s = stats.s(k, q);
            let theta = params.mu()[k] + params.sigma()[k] * rho;
            for j in 0..jn {
                let z = theta - params.d()[j] - params.dif(j, k);
                let p = clamped_prob(z);
                let sc = active_score(z);
                let info = s * p * (1.0 - p) * sc * sc * inv_n;
                h.d[j] += info;
                if k > 0 {
                    h.delta[j * kn + k - 1] += info;
                    h.mu[k - 1] += info;
                    h.sigma[k - 1] += info * rho * rho;
                }
            }
        }
    }
    h
}

pub fn step_metrics() -> Registry<dyn StepMetric> {
    let mut r: Registry<dyn StepMetric> = Registry::new("step metric");
    r.register(Arc::new(Identity));
    r.register(Arc::new(Fisher));
    r
}
