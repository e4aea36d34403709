//! Data generation from CLL-Gumbel mixture models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clamped_prob, gumbel_sample, ModelParams, ResponseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Design {
    /// Impact plus DIF on the first `n_dif_items` items.
    A,
    /// Impact only.
    B,
    /// Every field taken as given.
    Custom,
}

impl Design {
    pub fn label(self) -> &'static str {
        match self {
            Design::A => "A",
            Design::B => "B",
            Design::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Design::A),
            "B" | "b" => Ok(Design::B),
            "custom" => Ok(Design::Custom),
            other => Err(Error::Config(format!("unknown design '{other}' (expected A, B or custom)"))),
        }
    }
}

/// A two-class simulation condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub design: Design,
    pub n: usize,
    pub j: usize,
    pub pi_focal: f64,
    pub n_dif_items: usize,
    pub dif_range: (f64, f64),
    pub d_range: (f64, f64),
    pub focal_mu: f64,
    pub focal_sigma: f64,
    pub seed: u64,
}

pub const DEFAULT_ITEMS: usize = 25;
pub const DESIGN_A_DIF_ITEMS: usize = 10;

impl SimDesign {
    /// Default condition for `design`; `Custom` starts from Design A's values.
    pub fn new(design: Design, n: usize, pi_focal: f64, seed: u64) -> Self {
        SimDesign {
            design,
            n,
            j: DEFAULT_ITEMS,
            pi_focal,
            n_dif_items: if design == Design::B { 0 } else { DESIGN_A_DIF_ITEMS },
            dif_range: (0.5, 1.5),
            d_range: (-2.0, 2.0),
            focal_mu: 0.75,
            focal_sigma: 0.80,
            seed,
        }
    }

    pub fn design_a(n: usize, pi_focal: f64, seed: u64) -> Self {
        Self::new(Design::A, n, pi_focal, seed)
    }

    pub fn design_b(n: usize, pi_focal: f64, seed: u64) -> Self {
        Self::new(Design::B, n, pi_focal, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.j == 0 {
            return bad("N and J must be positive".into());
        }
        if !(self.pi_focal > 0.0 && self.pi_focal < 1.0) {
            return bad(format!("pi must lie in (0, 1), got {}", self.pi_focal));
        }
        if self.n_dif_items > self.j {
            return bad(format!("{} DIF items exceed J = {}", self.n_dif_items, self.j));
        }
        match self.design {
            Design::A if self.n_dif_items == 0 => return bad("design A needs DIF items".into()),
            Design::B if self.n_dif_items != 0 => return bad("design B has no DIF items".into()),
            _ => {}
        }
        for (name, (lo, hi)) in [("dif_range", self.dif_range), ("d_range", self.d_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!("{name} must be an ordered finite interval"));
            }
        }
        if !(self.focal_mu.is_finite() && self.focal_sigma > 0.0 && self.focal_sigma.is_finite()) {
            return bad("focal Gumbel parameters invalid".into());
        }
        Ok(())
    }
}

/// Generating values and latent draws of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub params: ModelParams,
    pub class_labels: Vec<usize>,
    pub thetas: Vec<f64>,
}

impl SimTruth {
    /// 0/1 focal indicator per respondent.
    pub fn focal_indicator(&self) -> Vec<bool> {
        self.class_labels.iter().map(|&c| c > 0).collect()
    }
}

/// Draws item parameters, then respondents, from one generator seeded with
/// `design.seed`. Item parameters are fresh on every call.
pub fn generate(design: &SimDesign) -> Result<(ResponseMatrix, SimTruth)> {
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let (lo, hi) = design.d_range;
    let d: Vec<f64> = (0..design.j).map(|_| rng.random_range(lo..hi)).collect();
    let (dlo, dhi) = design.dif_range;
    let delta: Vec<f64> = (0..design.j)
        .map(|j| if j < design.n_dif_items { rng.random_range(dlo..dhi) } else { 0.0 })
        .collect();
    let params = ModelParams::new(
        design.j,
        1,
        d,
        delta,
        vec![1.0 - design.pi_focal, design.pi_focal],
        vec![0.0, design.focal_mu],
        vec![1.0, design.focal_sigma],
    )?;
    sample_respondents(params, design.n, &mut rng)
}

/// Same respondent pipeline with user-supplied parameters.
pub fn generate_custom(params: &ModelParams, n: usize, seed: u64) -> Result<(ResponseMatrix, SimTruth)> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Config("N must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_respondents(params.clone(), n, &mut rng)
}

fn draw_class<R: Rng + ?Sized>(nu: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in nu.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding slack: last class with positive mass
    nu.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn sample_respondents<R: Rng + ?Sized>(
    params: ModelParams,
    n: usize,
    rng: &mut R,
) -> Result<(ResponseMatrix, SimTruth)> {
    let j_n = params.n_items();
    let mut labels = Vec::with_capacity(n);
    let mut thetas = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * j_n);
    for _ in 0..n {
        let k = draw_class(params.nu(), rng);
        let theta = gumbel_sample(params.mu()[k], params.sigma()[k], rng)?;
        for j in 0..j_n {
            let p = clamped_prob(theta - params.d()[j] - params.dif(j, k));
            data.push(u8::from(rng.random::<f64>() < p));
        }
        labels.push(k);
        thetas.push(theta);
    }
    let y = ResponseMatrix::new(n, j_n, data)?;
    Ok((
        y,
        SimTruth {
            params,
            class_labels: labels,
            thetas,
        },
    ))
}

/// Seed of replication `rep` in grid cell `cell`: two rounds of the
/// splitmix64 finalizer over `master`, `cell` and `rep`.
pub fn replication_seed(master: u64, cell: u64, rep: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(cell.wrapping_add(0x5EED)));
    splitmix64(a ^ splitmix64(rep.wrapping_add(0xC0FFEE)))
}

/// Human-readable statement of [`replication_seed`], embedded in result files.
pub const SEED_RULE: &str =
    "seed(cell, rep) = mix(mix(master ^ mix(cell + 0x5EED)) ^ mix(rep + 0xC0FFEE)), mix = splitmix64 finalizer";

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
