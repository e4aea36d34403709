//! Proximal EM for the penalized and the support-constrained problems.
//!
//! One outer iteration runs the E-step, the closed-form update of the class
//! proportions, and a single line-searched gradient block over `(d, delta, mu,
//! sigma)` in which `delta` moves through a pluggable [`DifUpdate`].
//! Internally the per-respondent objective `-(1/N) ln L + (lambda/N) |delta|_1`
//! is minimised; reported objectives are on the total scale.

pub mod estep;
mod fit;
pub mod gradients;
pub mod linesearch;
pub mod metric;
pub mod prox;

use serde::{Deserialize, Serialize};

pub use estep::{e_step, m_step_nu, EStepSufficientStats, PosteriorWeights};
pub use fit::{fit_constrained, fit_from, fit_penalized, initial_params, posterior_class_probabilities};
pub use gradients::{
    finite_difference_check, gradient_rules, gradients, gradients_printed, m_step_objective, GradientBundle,
    GradientRule,
};
pub use linesearch::{LineSearch, LineSearchOutcome};
pub use metric::{fisher_diagonal, step_metrics, StepMetric};
pub use prox::{dif_updates, prox_update, prox_update_scaled, soft_threshold, CandidateMask, DifUpdate};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Support};

/// A class whose proportion stays below this for
/// [`COLLAPSE_PATIENCE`] iterations has its location and scale frozen.
pub const COLLAPSE_THRESHOLD: f64 = 1e-3;
pub const COLLAPSE_PATIENCE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_outer_iter: usize,
    /// Relative change of the penalized objective that counts as converged.
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub step_init: f64,
    /// DIF coordinates allowed to be non-zero; `None` means all of them.
    pub candidate_set: Option<Support>,
    pub line_search: LineSearch,
    /// Registered name of the gradient rule.
    pub gradient_rule: String,
    /// Registered name of the per-coordinate step scaling.
    pub step_metric: String,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_outer_iter: 500,
            tol: 1e-7,
            n_starts: 5,
            seed: 0,
            step_init: 0.1,
            candidate_set: None,
            line_search: LineSearch::default(),
            gradient_rule: "derived".into(),
            step_metric: "fisher".into(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iter == 0 {
            return Err(Error::Config("max_outer_iter must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Config("n_starts must be positive".into()));
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return Err(Error::Config("step_init must be positive".into()));
        }
        if !(self.line_search.growth > 0.0 && self.line_search.allowance >= 0.0) {
            return Err(Error::Config("invalid line-search settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Penalty weight on the total scale (0 for constrained refits).
    pub lambda: f64,
    pub loglik: f64,
    pub penalized_objective: f64,
    pub support: Support,
    pub n_outer_iters: usize,
    pub converged: bool,
    /// Penalized objective (total scale) at the start of every outer iteration
    /// and at the returned parameters.
    pub trace: Vec<f64>,
    pub start_index: usize,
    /// Focal classes whose proportion collapsed below the threshold.
    pub collapsed_classes: Vec<usize>,
    pub line_search_exhaustions: usize,
    pub step_size: f64,
}
