//! Fixed standardized quadrature grid shared by every latent class.
//!
//! Nodes `rho_q` are evenly spaced on the open interval (-8, 8) and carry
//! standard-Gumbel weights. A class with location `mu_k` and scale `sigma_k`
//! integrates over the transformed nodes `mu_k + sigma_k * rho_q` with the same
//! weights, so the class density never has to be re-evaluated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 61;
pub const GRID_HALF_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Builds a `g`-point grid: `rho_q = -8 + 16 q / (g + 1)` for `q = 1..=g`,
    /// `omega_q ∝ exp(-rho_q - exp(-rho_q))`.
    ///
    /// Weights far in the left tail underflow to zero in double precision;
    /// `log_weights` keeps them finite.
    pub fn new(g: usize) -> Result<Self> {
        if g < 3 {
            return Err(Error::Config(format!("quadrature needs at least 3 points, got {g}")));
        }
        let span = 2.0 * GRID_HALF_WIDTH;
        let nodes: Vec<f64> = (1..=g)
            .map(|q| -GRID_HALF_WIDTH + span * q as f64 / (g as f64 + 1.0))
            .collect();
        let log_kernel: Vec<f64> = nodes.iter().map(|&r| -r - (-r).exp()).collect();
        let log_norm = log_sum_exp(&log_kernel);
        let log_weights: Vec<f64> = log_kernel.iter().map(|&l| l - log_norm).collect();
        let weights = log_weights.iter().map(|l| l.exp()).collect();
        Ok(QuadratureGrid {
            nodes,
            weights,
            log_weights,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn spacing(&self) -> f64 {
        2.0 * GRID_HALF_WIDTH / (self.nodes.len() as f64 + 1.0)
    }

    /// Latent-trait nodes for a class with location `mu` and scale `sigma`.
    pub fn class_nodes(&self, mu: f64, sigma: f64) -> Result<Vec<f64>> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        Ok(self.nodes.iter().map(|&r| mu + sigma * r).collect())
    }

    /// Quadrature estimate of `E[h(theta)]` for theta ~ Gumbel(mu, sigma).
    pub fn expectation(&self, mu: f64, sigma: f64, h: impl Fn(f64) -> f64) -> Result<f64> {
        Ok(self
            .class_nodes(mu, sigma)?
            .into_iter()
            .zip(&self.weights)
            .map(|(t, w)| w * h(t))
            .sum())
    }
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid::new(DEFAULT_GRID_POINTS).expect("default grid is valid")
    }
}

/// Numerically stable `ln(sum(exp(xs)))`; `-inf` for an empty or all `-inf`
/// input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
