//! DIF update rules for the M-step.

use std::sync::Arc;

use crate::model::{Support, DELTA_CLIP};
use crate::registry::{Named, Registry};

/// `sign(x) max(|x| - tau, 0)`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Which DIF coordinates may be non-zero, row-major `J x K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateMask {
    n_focal: usize,
    free: Vec<bool>,
}

impl CandidateMask {
    pub fn all(n_items: usize, n_focal: usize) -> Self {
        CandidateMask {
            n_focal,
            free: vec![true; n_items * n_focal],
        }
    }

    pub fn none(n_items: usize, n_focal: usize) -> Self {
        CandidateMask {
            n_focal,
            free: vec![false; n_items * n_focal],
        }
    }

    /// Mask from `(item, class)` pairs; class indices start at 1.
    pub fn from_support(n_items: usize, n_focal: usize, support: &Support) -> Self {
        let mut m = Self::none(n_items, n_focal);
        for (j, k) in support.iter() {
            if j < n_items && (1..=n_focal).contains(&k) {
                m.free[j * n_focal + k - 1] = true;
            }
        }
        m
    }

    #[inline]
    pub fn is_free(&self, idx: usize) -> bool {
        self.free[idx]
    }

    pub fn is_free_pair(&self, item: usize, class: usize) -> bool {
        self.free[item * self.n_focal + class - 1]
    }

    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }
}

/// Proximal-gradient step on the DIF matrix.
///
/// For candidates: `S_{alpha lambda}(delta - alpha grad)` clipped to `[-3, 3]`;
/// every other coordinate is pinned to zero.
pub fn prox_update(delta: &[f64], grad: &[f64], alpha: f64, lambda: f64, mask: &CandidateMask) -> Vec<f64> {
    prox_update_scaled(delta, grad, &vec![alpha; delta.len()], lambda, mask)
}

/// [`prox_update`] with a separate step size per coordinate; the threshold of
/// coordinate `i` is `steps[i] * lambda`.
pub fn prox_update_scaled(delta: &[f64], grad: &[f64], steps: &[f64], lambda: f64, mask: &CandidateMask) -> Vec<f64> {
    delta
        .iter()
        .zip(grad)
        .zip(steps)
        .enumerate()
        .map(|(idx, ((&x, &g), &a))| {
            if mask.is_free(idx) {
                soft_threshold(x - a * g, a * lambda).clamp(-DELTA_CLIP, DELTA_CLIP)
            } else {
                0.0
            }
        })
        .collect()
}

/// How the DIF block moves inside one M-step.
///
/// `lambda` is on the per-respondent scale the engine optimises; `steps`
/// holds one step size per coordinate.
pub trait DifUpdate: Named + Send + Sync {
    fn step(&self, delta: &[f64], grad: &[f64], steps: &[f64], lambda: f64, mask: &CandidateMask) -> Vec<f64>;

    /// Penalty term added to the M-step objective.
    fn penalty(&self, delta: &[f64], lambda: f64) -> f64;
}

/// Soft-thresholded proximal step for the l1-penalised problem.
pub struct Lasso;

/// Plain projected gradient step with the penalty removed, used for the
/// confirmatory refit on a fixed support.
pub struct Unpenalized;

impl Named for Lasso {
    fn name(&self) -> &'static str {
        "lasso"
    }
}

impl DifUpdate for Lasso {
    fn step(&self, delta: &[f64], grad: &[f64], steps: &[f64], lambda: f64, mask: &CandidateMask) -> Vec<f64> {
        prox_update_scaled(delta, grad, steps, lambda, mask)
    }

    fn penalty(&self, delta: &[f64], lambda: f64) -> f64 {
        lambda * delta.iter().map(|x| x.abs()).sum::<f64>()
    }
}

impl Named for Unpenalized {
    fn name(&self) -> &'static str {
        "unpenalized"
    }
}

impl DifUpdate for Unpenalized {
    fn step(&self, delta: &[f64], grad: &[f64], steps: &[f64], _lambda: f64, mask: &CandidateMask) -> Vec<f64> {
        prox_update_scaled(delta, grad, steps, 0.0, mask)
    }

    fn penalty(&self, _delta: &[f64], _lambda: f64) -> f64 {
        0.0
    }
}

pub fn dif_updates() -> Registry<dyn DifUpdate> {
    let mut r: Registry<dyn DifUpdate> = Registry::new("DIF update");
    r.register(Arc::new(Lasso));
    r.register(Arc::new(Unpenalized));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_identities() {
        assert!((soft_threshold(1.2, 0.5) - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert!((soft_threshold(-1.2, 0.5) + 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(0.4, 0.0), 0.4);
    }

    #[test]
    fn zero_lambda_is_a_gradient_step() {
        let mask = CandidateMask::all(2, 1);
        let out = prox_update(&[0.1, -0.2], &[1.0, -2.0], 0.1, 0.0, &mask);
        assert!((out[0] - 0.0).abs() < 1e-15);
        assert!((out[1] - 0.0).abs() < 1e-15);
        let out = prox_update(&[0.5, -0.2], &[1.0, 1.0], 0.1, 0.0, &mask);
        assert!((out[0] - 0.4).abs() < 1e-15 && (out[1] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn clipped_to_bound() {
        let mask = CandidateMask::all(1, 1);
        assert_eq!(prox_update(&[3.0], &[-4.0], 0.1, 0.0, &mask), vec![3.0]);
        assert_eq!(prox_update(&[-2.9], &[10.0], 0.1, 0.0, &mask), vec![-3.0]);
    }

    #[test]
    fn non_candidates_pinned_to_zero() {
        let mut s = Support::new();
        s.insert(1, 1);
        let mask = CandidateMask::from_support(3, 1, &s);
        let out = prox_update(&[0.7, 0.7, 0.7], &[-1.0, -1.0, -1.0], 0.5, 0.1, &mask);
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 1.15).abs() < 1e-15);
        assert_eq!(out[2], 0.0);
        assert_eq!(mask.n_free(), 1);
    }

    #[test]
    fn update_strategies_by_name() {
        let r = dif_updates();
        let lasso = r.get("lasso").unwrap();
        let plain = r.get("unpenalized").unwrap();
        let mask = CandidateMask::all(1, 1);
        assert_eq!(lasso.step(&[0.0], &[-1.0], &[0.2], 2.0, &mask), vec![0.0]);
        assert!((plain.step(&[0.0], &[-1.0], &[0.2], 2.0, &mask)[0] - 0.2).abs() < 1e-15);
        assert_eq!(lasso.penalty(&[0.5, -1.0], 2.0), 3.0);
        assert_eq!(plain.penalty(&[0.5, -1.0], 2.0), 0.0);
    }

    #[test]
    fn scaled_threshold_is_per_coordinate() {
        let mask = CandidateMask::all(2, 1);
        let out = prox_update_scaled(&[0.0, 0.0], &[-1.0, -1.0], &[0.1, 10.0], 0.5, &mask);
        // thresholds 0.05 and 5: the second coordinate hits the clip
        assert!((out[0] - 0.05).abs() < 1e-15);
        assert!((out[1] - 3.0).abs() < 1e-15);
        assert_eq!(
            prox_update_scaled(&[0.4, -0.2], &[0.3, 0.1], &[0.5, 0.5], 0.1, &mask),
            prox_update(&[0.4, -0.2], &[0.3, 0.1], 0.5, 0.1, &mask)
        );
    }

    proptest! {
        #[test]
        fn prox_never_leaves_the_box(x in -5.0f64..5.0, g in -50.0f64..50.0, a in 1e-4f64..2.0, l in 0.0f64..5.0) {
            let out = prox_update(&[x.clamp(-3.0, 3.0)], &[g], a, l, &CandidateMask::all(1, 1));
            prop_assert!(out[0].abs() <= DELTA_CLIP);
        }

        #[test]
        fn soft_threshold_shrinks(x in -10.0f64..10.0, tau in 0.0f64..5.0) {
            let y = soft_threshold(x, tau);
            prop_assert!(y.abs() <= x.abs());
            prop_assert!(y == 0.0 || y.signum() == x.signum());
        }
    }
}
