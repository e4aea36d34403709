//! Backtracking step-size search for the M-step.

use serde::{Deserialize, Serialize};

/// Step-size growth between outer iterations.
pub const STEP_GROWTH: f64 = 1.15;
/// Maximum number of halvings.
pub const MAX_HALVINGS: usize = 40;
/// Relative slack of the relaxed acceptance rule.
pub const RELAXED_ALLOWANCE: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub growth: f64,
    pub max_halvings: usize,
    /// A trial is accepted when `F_new <= F_old + allowance * (|F_old| + 1)`.
    pub allowance: f64,
}

impl Default for LineSearch {
    /// Monotone acceptance (`allowance = 0`).
    fn default() -> Self {
        LineSearch {
            growth: STEP_GROWTH,
            max_halvings: MAX_HALVINGS,
            allowance: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome<P> {
    /// Accepted proposal, or `None` when every trial was rejected.
    pub accepted: Option<(P, f64)>,
    /// Step size that produced the accepted proposal; on exhaustion the last
    /// (smallest) trial step.
    pub alpha: f64,
    pub trials: usize,
}

impl<P> LineSearchOutcome<P> {
    pub fn exhausted(&self) -> bool {
        self.accepted.is_none()
    }
}

impl LineSearch {
    /// Relaxed acceptance with `allowance = 5e-3`.
    pub fn relaxed() -> Self {
        LineSearch {
            allowance: RELAXED_ALLOWANCE,
            ..Self::default()
        }
    }

    /// Tries `alpha_init * growth`, then halves up to `max_halvings` times.
    /// `propose` maps a step size to a candidate and its objective value.
    pub fn search<P>(
        &self,
        current_objective: f64,
        alpha_init: f64,
        mut propose: impl FnMut(f64) -> (P, f64),
    ) -> LineSearchOutcome<P> {
        let bound = current_objective + self.allowance * (current_objective.abs() + 1.0);
        let mut alpha = alpha_init * self.growth;
        for trial in 0..=self.max_halvings {
            let (candidate, value) = propose(alpha);
            if value.is_finite() && value <= bound {
                return LineSearchOutcome {
                    accepted: Some((candidate, value)),
                    alpha,
                    trials: trial + 1,
                };
            }
            if trial < self.max_halvings {
                alpha *= 0.5;
            }
        }
        LineSearchOutcome {
            accepted: None,
            alpha,
            trials: self.max_halvings + 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descent_accepted_on_first_trial() {
        // f(x) = x^2 at x = 1, gradient 2
        let ls = LineSearch::default();
        let out = ls.search(1.0, 0.01, |a| {
            let x = 1.0 - a * 2.0;
            (x, x * x)
        });
        assert_eq!(out.trials, 1);
        assert!((out.alpha - 0.0115).abs() < 1e-15);
        assert!(out.accepted.unwrap().1 < 1.0);
    }

    #[test]
    fn large_step_is_halved() {
        let ls = LineSearch::default();
        let out = ls.search(1.0, 10.0, |a| {
            let x = 1.0 - a * 2.0;
            (x, x * x)
        });
        assert!(out.trials > 1);
        assert!(out.alpha < 1.0);
    }

    #[test]
    fn exhaustion_leaves_parameters_unchanged() {
        let ls = LineSearch::default();
        let mut calls = 0;
        let out = ls.search(0.0, 1.0, |a| {
            calls += 1;
            (a, 1.0)
        });
        assert!(out.exhausted());
        assert_eq!(calls, MAX_HALVINGS + 1);
        assert_eq!(out.trials, 41);
    }

    #[test]
    fn growth_is_bounded_per_iteration() {
        let ls = LineSearch::default();
        let mut alpha = 0.1;
        for _ in 0..20 {
            let out = ls.search(1.0, alpha, |a| (a, 0.0));
            assert!(out.alpha <= alpha * 1.15 + 1e-15);
            alpha = out.alpha;
        }
    }

    #[test]
    fn relaxed_rule_tolerates_small_increases() {
        let out = LineSearch::relaxed().search(10.0, 1.0, |a| (a, 10.05));
        assert!(!out.exhausted());
        let out = LineSearch::default().search(10.0, 1.0, |a| (a, 10.05));
        assert!(out.exhausted());
        let out = LineSearch::relaxed().search(10.0, 1.0, |a| (a, 10.06));
        assert!(out.exhausted());
    }

    #[test]
    fn non_finite_trials_are_rejected() {
        let out = LineSearch::relaxed().search(1.0, 1.0, |a| (a, if a > 0.1 { f64::NAN } else { 0.5 }));
        assert!(out.alpha <= 0.1);
        assert!(!out.exhausted());
    }
}
