//! Latent-class DIF detection under a complementary log-log IRT model whose
//! ability distributions are Gumbel mixtures.

pub mod em;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod registry;
pub mod regpath;
pub mod simulate;
pub mod study;

pub use em::{fit_constrained, fit_from, fit_penalized, FitOptions, FitResult};
pub use error::{Category, Error, Result};
pub use likelihood::{marginal_loglik, penalized_objective, LikelihoodValue};
pub use model::{ModelParams, ResponseMatrix, Support};
pub use quadrature::QuadratureGrid;
