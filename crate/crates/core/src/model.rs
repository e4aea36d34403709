//! Link function, latent-trait density and the parameter containers.
//!
//! Item response probabilities use the complementary log-log (CLL) link
//! `F(z) = 1 - exp(-exp(z))` with `z = theta - d_j - delta_jk`. Latent traits
//! within a class follow a Gumbel(mu_k, sigma_k) law. Class 0 is the reference
//! class: `mu_0 = 0`, `sigma_0 = 1` and `delta_j0 = 0` for every item.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;
/// Bound on every DIF shift.
pub const DELTA_CLIP: f64 = 3.0;
/// Lower bound on class scales.
pub const SIGMA_FLOOR: f64 = 0.05;
/// Range focal-class locations are projected onto during estimation.
pub const MU_CLIP: f64 = 4.0;
/// Euler–Mascheroni constant (mean of the standard Gumbel law).
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const NU_SUM_TOL: f64 = 1e-12;

fn check_finite(z: f64, what: &str) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be finite, got {z}")))
    }
}

/// Clamped CLL probability, no domain check.
#[inline]
pub(crate) fn clamped_prob(z: f64) -> f64 {
    (-(-z.exp()).exp_m1()).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `(ln P, ln(1 - P))` for the clamped CLL probability at `z`.
///
/// Both logs are computed without cancellation: `ln(1 - F) = -exp(z)` and
/// `ln F = ln_1p(-exp(-exp(z)))` in the upper half.
#[inline]
pub(crate) fn log_probs(z: f64) -> (f64, f64) {
    let ez = z.exp();
    let q = (-ez).exp();
    let p = -(-ez).exp_m1();
    if p < PROB_FLOOR {
        (PROB_FLOOR.ln(), (-PROB_FLOOR).ln_1p())
    } else if q < PROB_FLOOR {
        ((-PROB_FLOOR).ln_1p(), PROB_FLOOR.ln())
    } else {
        let lp = if p > 0.5 { (-q).ln_1p() } else { p.ln() };
        (lp, -ez)
    }
}

/// Score factor evaluated with clamped probabilities.
#[inline]
pub(crate) fn score_unchecked(z: f64) -> f64 {
    let ez = z.exp();
    let p = clamped_prob(z);
    (z - ez).exp() / (p * (1.0 - p))
}

/// Derivative of the clamped log-likelihood terms with respect to `z`, per
/// unit residual: the score factor inside the unclamped range and zero where
/// the clamp is active (the clamped terms are flat there).
#[inline]
pub(crate) fn active_score(z: f64) -> f64 {
    let ez = z.exp();
    let q = (-ez).exp();
    let p = -(-ez).exp_m1();
    if p < PROB_FLOOR || q < PROB_FLOOR {
        0.0
    } else {
        (z - ez).exp() / (p * q)
    }
}

/// CLL response probability `1 - exp(-exp(z))`, clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn cll_prob(z: f64) -> Result<f64> {
    check_finite(z, "z")?;
    Ok(clamped_prob(z))
}

/// CLL score factor `exp(z - e^z) / (F(z) (1 - F(z)))` with clamped `F`.
///
/// Tends to 1 in the lower tail and collapses towards 0 once the upper clamp
/// is reached.
pub fn cll_score(z: f64) -> Result<f64> {
    check_finite(z, "z")?;
    Ok(score_unchecked(z))
}

/// Gumbel(mu, sigma) density.
pub fn gumbel_pdf(theta: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_finite(theta, "theta")?;
    check_finite(mu, "mu")?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let z = (theta - mu) / sigma;
    Ok((-z - (-z).exp()).exp() / sigma)
}

/// Gumbel quantile `mu - sigma ln(-ln u)` for `u` in (0, 1).
pub fn gumbel_quantile(u: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("u must lie in (0, 1), got {u}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    check_finite(mu, "mu")?;
    Ok(mu - sigma * (-u.ln()).ln())
}

/// Draws from Gumbel(mu, sigma) by inverting the CDF of one open-interval
/// uniform variate.
pub fn gumbel_sample<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> Result<f64> {
    let u: f64 = rng.sample(rand::distr::Open01);
    gumbel_quantile(u, mu, sigma)
}

/// Item response function `P(Y = 1 | theta)` for difficulty `d_j` and shift
/// `delta_jk`.
pub fn irf(theta: f64, d_j: f64, delta_jk: f64) -> Result<f64> {
    cll_prob(theta - d_j - delta_jk)
}

/// All free parameters of a (K+1)-class CLL-Gumbel mixture.
///
/// `delta` is stored row-major as a `J x K` matrix covering the focal classes
/// only; the reference column is implicitly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    pub(crate) n_items: usize,
    pub(crate) n_focal: usize,
    pub(crate) d: Vec<f64>,
    pub(crate) delta: Vec<f64>,
    pub(crate) nu: Vec<f64>,
    pub(crate) mu: Vec<f64>,
    pub(crate) sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    n_items: usize,
    n_focal: usize,
    d: Vec<f64>,
    delta: Vec<Vec<f64>>,
    nu: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        if raw.delta.len() != raw.n_items {
            return Err(Error::InvalidParams(format!(
                "delta has {} rows, expected {}",
                raw.delta.len(),
                raw.n_items
            )));
        }
        let delta = raw.delta.into_iter().flatten().collect();
        ModelParams::new(raw.n_items, raw.n_focal, raw.d, delta, raw.nu, raw.mu, raw.sigma)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        let delta = (0..p.n_items).map(|j| p.delta_row(j).to_vec()).collect();
        RawParams {
            n_items: p.n_items,
            n_focal: p.n_focal,
            d: p.d,
            delta,
            nu: p.nu,
            mu: p.mu,
            sigma: p.sigma,
        }
    }
}

impl ModelParams {
    /// Validates and builds a parameter set. `delta` is row-major `J x K`.
    pub fn new(
        n_items: usize,
        n_focal: usize,
        d: Vec<f64>,
        delta: Vec<f64>,
        nu: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        let p = ModelParams {
            n_items,
            n_focal,
            d,
            delta,
            nu,
            mu,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Reference-only model with the given difficulties (`K = 0`).
    pub fn single_class(d: Vec<f64>) -> Result<Self> {
        let j = d.len();
        Self::new(j, 0, d, Vec::new(), vec![1.0], vec![0.0], vec![1.0])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        let j = self.n_items;
        let c = self.n_focal + 1;
        if j == 0 {
            return bad("n_items must be positive".into());
        }
        if self.d.len() != j {
            return bad(format!("d has length {}, expected {j}", self.d.len()));
        }
        if self.delta.len() != j * self.n_focal {
            return bad(format!(
                "delta has {} entries, expected {}",
                self.delta.len(),
                j * self.n_focal
            ));
        }
        for (name, v) in [("nu", &self.nu), ("mu", &self.mu), ("sigma", &self.sigma)] {
            if v.len() != c {
                return bad(format!("{name} has length {}, expected {c}", v.len()));
            }
        }
        let all = self
            .d
            .iter()
            .chain(&self.delta)
            .chain(&self.nu)
            .chain(&self.mu)
            .chain(&self.sigma);
        if all.clone().any(|x| !x.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if self.nu.iter().any(|&v| v < 0.0) {
            return bad("class proportions must be non-negative".into());
        }
        let total: f64 = self.nu.iter().sum();
        if (total - 1.0).abs() > NU_SUM_TOL {
            return bad(format!("class proportions sum to {total}, expected 1"));
        }
        if self.mu[0] != 0.0 || self.sigma[0] != 1.0 {
            return bad("reference class must have mu = 0 and sigma = 1".into());
        }
        if let Some(x) = self.delta.iter().find(|x| x.abs() > DELTA_CLIP) {
            return bad(format!("DIF shift {x} outside [-{DELTA_CLIP}, {DELTA_CLIP}]"));
        }
        if let Some(s) = self.sigma.iter().find(|&&s| s < SIGMA_FLOOR) {
            return bad(format!("scale {s} below floor {SIGMA_FLOOR}"));
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of focal classes `K`.
    pub fn n_focal(&self) -> usize {
        self.n_focal
    }

    /// Total number of classes `K + 1`.
    pub fn n_classes(&self) -> usize {
        self.n_focal + 1
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Row-major `J x K` DIF matrix.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn delta_row(&self, j: usize) -> &[f64] {
        &self.delta[j * self.n_focal..(j + 1) * self.n_focal]
    }

    /// DIF shift for item `j` in class `k`, with `k = 0` the reference class.
    #[inline]
    pub fn dif(&self, j: usize, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.delta[j * self.n_focal + k - 1]
        }
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Non-zero DIF coordinates as `(item, class)` pairs with `class >= 1`.
    pub fn support(&self) -> Support {
        let mut s = Support::default();
        for j in 0..self.n_items {
            for k in 1..=self.n_focal {
                if self.dif(j, k) != 0.0 {
                    s.insert(j, k);
                }
            }
        }
        s
    }

    /// Sum of absolute DIF shifts.
    pub fn delta_l1(&self) -> f64 {
        self.delta.iter().map(|x| x.abs()).sum()
    }

    /// Returns a copy with focal classes permuted: new focal class `i + 1`
    /// takes old focal class `order[i] + 1`.
    pub fn permute_focal(&self, order: &[usize]) -> ModelParams {
        assert_eq!(order.len(), self.n_focal);
        let mut out = self.clone();
        for (new, &old) in order.iter().enumerate() {
            out.nu[new + 1] = self.nu[old + 1];
            out.mu[new + 1] = self.mu[old + 1];
            out.sigma[new + 1] = self.sigma[old + 1];
            for j in 0..self.n_items {
                out.delta[j * self.n_focal + new] = self.delta[j * self.n_focal + old];
            }
        }
        out
    }

    /// Focal classes sorted by descending proportion (stable on ties).
    pub fn ordered_by_proportion(&self) -> ModelParams {
        let mut order: Vec<usize> = (0..self.n_focal).collect();
        order.sort_by(|&a, &b| self.nu[b + 1].total_cmp(&self.nu[a + 1]));
        self.permute_focal(&order)
    }
}

/// Set of `(item, class)` DIF coordinates, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Support(std::collections::BTreeSet<(usize, usize)>);

impl Support {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every focal coordinate of a `J x K` model.
    pub fn full(n_items: usize, n_focal: usize) -> Self {
        let mut s = Self::default();
        for j in 0..n_items {
            for k in 1..=n_focal {
                s.insert(j, k);
            }
        }
        s
    }

    pub fn insert(&mut self, item: usize, class: usize) -> bool {
        self.0.insert((item, class))
    }

    pub fn contains(&self, item: usize, class: usize) -> bool {
        self.0.contains(&(item, class))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().copied()
    }

    pub fn intersection_len(&self, other: &Support) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn difference_len(&self, other: &Support) -> usize {
        self.0.difference(&other.0).count()
    }

    pub fn is_subset(&self, other: &Support) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<(usize, usize)> for Support {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        Support(iter.into_iter().collect())
    }
}

/// `N x J` matrix of binary responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    n_respondents: usize,
    n_items: usize,
    data: Vec<u8>,
    item_names: Option<Vec<String>>,
}

impl ResponseMatrix {
    /// Builds a matrix from row-major data; every entry must be 0 or 1.
    pub fn new(n_respondents: usize, n_items: usize, data: Vec<u8>) -> Result<Self> {
        if n_respondents == 0 || n_items == 0 {
            return Err(Error::Dimension(
                "response matrix needs at least one row and one column".into(),
            ));
        }
        if data.len() != n_respondents * n_items {
            return Err(Error::Dimension(format!(
                "{} values for a {n_respondents} x {n_items} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!(
                "entry ({}, {}) is {}, expected 0 or 1",
                pos / n_items,
                pos % n_items,
                data[pos]
            )));
        }
        Ok(ResponseMatrix {
            n_respondents,
            n_items,
            data,
            item_names: None,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let j = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != j) {
            return Err(Error::Dimension("rows have unequal lengths".into()));
        }
        Self::new(n, j, rows.concat())
    }

    pub fn with_item_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_items {
            return Err(Error::Dimension(format!(
                "{} item names for {} items",
                names.len(),
                self.n_items
            )));
        }
        self.item_names = Some(names);
        Ok(self)
    }

    pub fn n_respondents(&self) -> usize {
        self.n_respondents
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn item_names(&self) -> Option<&[String]> {
        self.item_names.as_deref()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.n_items + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.n_items..(i + 1) * self.n_items]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.n_items)
    }

    /// Proportion correct per item.
    pub fn item_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_items];
        for row in self.rows() {
            for (acc, &y) in m.iter_mut().zip(row) {
                *acc += y as f64;
            }
        }
        let n = self.n_respondents as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Stacks `self` on top of `other`.
    pub fn concat(&self, other: &ResponseMatrix) -> Result<ResponseMatrix> {
        if self.n_items != other.n_items {
            return Err(Error::Dimension("item counts differ".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut out = ResponseMatrix::new(self.n_respondents + other.n_respondents, self.n_items, data)?;
        out.item_names = self.item_names.clone();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Reference values from a 40-digit mpmath evaluation.
    const CLL_HALF: f64 = 0.807_704_354_452_035_1;
    const CLL_QUARTER: f64 = 0.723_079_665_900_091_1;
    const SCORE_ZERO: f64 = 1.581_976_706_869_326_4;
    const SCORE_MINUS15: f64 = 1.000_000_152_951_168;
    const GUMBEL_PDF_ONE: f64 = 0.254_646_380_043_582_5;

    #[test]
    fn cll_prob_reference_points() {
        assert!((cll_prob(0.0).unwrap() - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!((cll_prob(0.0).unwrap() - 0.632121).abs() < 1e-6);
        assert!((cll_prob(0.5).unwrap() - CLL_HALF).abs() < 1e-15);
        assert_eq!(cll_prob(-30.0).unwrap(), PROB_FLOOR);
        assert_eq!(cll_prob(40.0).unwrap(), 1.0 - PROB_FLOOR);
    }

    #[test]
    fn cll_prob_rejects_non_finite() {
        assert!(matches!(cll_prob(f64::NAN), Err(Error::Domain(_))));
        assert!(cll_prob(f64::INFINITY).is_err());
        assert!(cll_score(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn cll_score_reference_points() {
        assert!((cll_score(-15.0).unwrap() - 1.0).abs() < 1e-5);
        assert!((cll_score(-15.0).unwrap() - SCORE_MINUS15).abs() < 1e-12);
        let direct = (-1f64).exp() / (0.632_120_558_828_557_7 * 0.367_879_441_171_442_3);
        assert!((cll_score(0.0).unwrap() - direct).abs() < 1e-14);
        assert!((cll_score(0.0).unwrap() - SCORE_ZERO).abs() < 1e-14);
        assert!(cll_score(8.0).unwrap() < 1e-3);
    }

    #[test]
    fn cll_is_asymmetric() {
        let median = 2f64.ln().ln();
        assert!(median < 0.0);
        assert!((cll_prob(median).unwrap() - 0.5).abs() < 1e-14);
        // second derivative changes sign at z = 0 where F = 0.632 > 0.5
        let h = 1e-3;
        let f2 = |z: f64| {
            (cll_prob(z + h).unwrap() - 2.0 * cll_prob(z).unwrap() + cll_prob(z - h).unwrap()) / (h * h)
        };
        assert!(f2(-0.05) > 0.0);
        assert!(f2(0.05) < 0.0);
    }

    #[test]
    fn cll_prob_strictly_increasing() {
        // the upper clamp binds from z ~ 3.32 on
        let zs: Vec<f64> = (0..=1130).map(|i| -8.0 + i as f64 * 0.01).collect();
        for w in zs.windows(2) {
            assert!(cll_prob(w[0]).unwrap() < cll_prob(w[1]).unwrap(), "at {}", w[0]);
        }
    }

    #[test]
    fn score_is_derivative_of_log_prob() {
        let h = 1e-6;
        let mut z = -6.0;
        while z <= 3.0 {
            let fd = (log_probs(z + h).0 - log_probs(z - h).0) / (2.0 * h);
            // d ln F / dz = f / F = s (1 - F)
            let analytic = cll_score(z).unwrap() * (1.0 - cll_prob(z).unwrap());
            assert!(((fd - analytic) / analytic).abs() < 1e-6, "z = {z}: {fd} vs {analytic}");
            z += 0.125;
        }
    }

    #[test]
    fn log_probs_match_direct_logs() {
        for &z in &[-30.0, -10.0, -2.0, 0.0, 1.0, 3.0, 3.5, 10.0] {
            let p = clamped_prob(z);
            let (lp, lq) = log_probs(z);
            assert!((lp - p.ln()).abs() < 1e-9, "z = {z}");
            assert!((lq - (1.0 - p).ln()).abs() < 1e-3 * (1.0 + lq.abs()), "z = {z}");
        }
    }

    #[test]
    fn gumbel_pdf_values() {
        assert!((gumbel_pdf(0.0, 0.0, 1.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        for &s in &[0.3, 1.0, 2.5] {
            let v = gumbel_pdf(1.7, 1.7, s).unwrap();
            assert!((v - (-1f64).exp() / s).abs() < 1e-14);
        }
        assert!((gumbel_pdf(1.0, 0.0, 1.0).unwrap() - GUMBEL_PDF_ONE).abs() < 1e-15);
        assert!(gumbel_pdf(0.0, 0.0, 0.0).is_err());
        assert!(gumbel_pdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn gumbel_pdf_integrates_to_one() {
        for &(mu, sigma) in &[(0.0, 1.0), (0.75, 0.8), (-1.5, 0.7), (2.0, 2.0)] {
            let (a, b) = (mu - 10.0 * sigma, mu + 15.0 * sigma);
            let n = 200_000;
            let h = (b - a) / n as f64;
            let mut s = 0.5 * (gumbel_pdf(a, mu, sigma).unwrap() + gumbel_pdf(b, mu, sigma).unwrap());
            for i in 1..n {
                s += gumbel_pdf(a + i as f64 * h, mu, sigma).unwrap();
            }
            assert!((s * h - 1.0).abs() < 1e-6, "({mu}, {sigma}): {}", s * h);
        }
    }

    #[test]
    fn gumbel_sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| gumbel_sample(0.0, 1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - EULER_GAMMA).abs() < 0.005, "{mean}");

        let mut draws: Vec<f64> = (0..200_001).map(|_| gumbel_sample(2.0, 0.5, &mut rng).unwrap()).collect();
        draws.sort_by(f64::total_cmp);
        let median = draws[100_000];
        let expected = 2.0 - 0.5 * 2f64.ln().ln();
        assert!((median - expected).abs() < 0.01, "{median} vs {expected}");
    }

    #[test]
    fn gumbel_quantile_at_mode() {
        let u = (-1f64).exp();
        for &s in &[0.1, 1.0, 7.0] {
            assert!((gumbel_quantile(u, 3.0, s).unwrap() - 3.0).abs() < 1e-14);
        }
        assert!(gumbel_quantile(0.0, 0.0, 1.0).is_err());
        assert!(gumbel_sample(0.0, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn irf_examples() {
        assert!((irf(1.5, 1.0, 0.5).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!(irf(0.3, 0.1, 0.4).unwrap() < irf(0.3, 0.1, 0.0).unwrap());
        assert!((irf(1.0, 0.5, 0.25).unwrap() - CLL_QUARTER).abs() < 1e-15);
    }

    #[test]
    fn params_constructor_enforces_invariants() {
        let ok = || ModelParams::new(2, 1, vec![0.0, 1.0], vec![0.5, -0.2], vec![0.6, 0.4], vec![0.0, 0.7], vec![1.0, 0.8]);
        assert!(ok().is_ok());
        let with = |delta: Vec<f64>, nu: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>| {
            ModelParams::new(2, 1, vec![0.0, 1.0], delta, nu, mu, sigma)
        };
        assert!(with(vec![0.5, 3.2], vec![0.6, 0.4], vec![0.0, 0.7], vec![1.0, 0.8]).is_err());
        assert!(with(vec![0.5, 0.0], vec![0.6, 0.5], vec![0.0, 0.7], vec![1.0, 0.8]).is_err());
        assert!(with(vec![0.5, 0.0], vec![1.1, -0.1], vec![0.0, 0.7], vec![1.0, 0.8]).is_err());
        assert!(with(vec![0.5, 0.0], vec![0.6, 0.4], vec![0.1, 0.7], vec![1.0, 0.8]).is_err());
        assert!(with(vec![0.5, 0.0], vec![0.6, 0.4], vec![0.0, 0.7], vec![1.0, 0.04]).is_err());
        assert!(with(vec![0.5], vec![0.6, 0.4], vec![0.0, 0.7], vec![1.0, 0.8]).is_err());
        assert!(with(vec![0.5, f64::NAN], vec![0.6, 0.4], vec![0.0, 0.7], vec![1.0, 0.8]).is_err());
        assert!(ModelParams::new(0, 0, vec![], vec![], vec![1.0], vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn params_serde_validates() {
        let p = ModelParams::new(2, 1, vec![0.0, 1.0], vec![0.5, 0.0], vec![0.6, 0.4], vec![0.0, 0.7], vec![1.0, 0.8]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: ModelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        let broken = s.replace("0.8", "0.01");
        assert!(serde_json::from_str::<ModelParams>(&broken).is_err());
    }

    #[test]
    fn ordering_by_proportion() {
        let p = ModelParams::new(
            1,
            2,
            vec![0.0],
            vec![0.1, 0.2],
            vec![0.5, 0.2, 0.3],
            vec![0.0, -1.0, 1.0],
            vec![1.0, 0.5, 1.5],
        )
        .unwrap();
        let o = p.ordered_by_proportion();
        assert_eq!(o.nu(), &[0.5, 0.3, 0.2]);
        assert_eq!(o.mu(), &[0.0, 1.0, -1.0]);
        assert_eq!(o.sigma(), &[1.0, 1.5, 0.5]);
        assert_eq!(o.delta(), &[0.2, 0.1]);
    }

    #[test]
    fn response_matrix_checks() {
        assert!(ResponseMatrix::new(1, 2, vec![0, 2]).is_err());
        assert!(ResponseMatrix::new(0, 2, vec![]).is_err());
        let m = ResponseMatrix::from_rows(&[vec![1, 0, 1], vec![0, 0, 1]]).unwrap();
        assert_eq!(m.n_respondents(), 2);
        assert_eq!(m.item_means(), vec![0.5, 0.0, 1.0]);
    }
}
