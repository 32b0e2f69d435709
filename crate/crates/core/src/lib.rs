//! Bayesian low-rank determinantal point process mixtures for basket completion.
//!
//! A model is a mixture of `W` low-rank DPPs, each parameterized by an `M x K`
//! trait matrix `V_w` with kernel `L_w = V_w V_wᵀ`. Training alternates Gibbs
//! updates of the discrete assignments, mixing weights and prior precisions
//! with stochastic-gradient Hamiltonian Monte Carlo updates of each trait
//! matrix. Next-item predictions average conditional k-DPP probabilities over
//! the retained posterior samples.
//!
//! Modules:
//!
//! * [`dpp`]: single-component probabilities, likelihood, gradients and
//!   conditionals.
//! * [`mixture`]: sampler state and the closed-form Gibbs conditionals.
//! * [`sghmc`]: the outer sampler loop and the chain file format.
//! * [`predict`]: posterior-averaged next-item scores and ranking.
//! * [`eval`]: held-out-item protocol, MPR and precision@k metrics.
//! * [`data`]: basket files, catalog, splitting and synthetic data.
//! * [`oracle`]: brute-force reference computations for tiny catalogs.

pub mod data;
pub mod dpp;
pub mod error;
pub mod eval;
pub mod mixture;
pub mod oracle;
pub mod predict;
pub mod rng;
pub mod sghmc;

pub use data::{BasketDataset, Catalog, Format};
pub use dpp::{Basket, TraitMatrix};
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalInstance, EvalReport};
pub use mixture::{Hyperparams, MixtureState};
pub use predict::PredictionRequest;
pub use sghmc::{SampleChain, SamplerConfig};
