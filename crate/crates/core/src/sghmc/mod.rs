//! The outer MCMC loop: Gibbs updates of assignments, weights and precisions
//! interleaved with stochastic-gradient HMC updates of every trait matrix.
//!
//! Each sweep works on one uniformly drawn minibatch. Randomness for every
//! parallel unit of work comes from [`crate::rng::stream`], keyed by sweep and
//! observation or component index, so chains are bitwise reproducible whether
//! or not the work is spread across threads.

mod chain;
mod config;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use chain::{
    decode_chain, encode_chain, load_chain, load_chain_expecting, save_chain, CHAIN_MAGIC,
    CHAIN_VERSION,
};
pub use config::SamplerConfig;

use crate::data::BasketDataset;
use crate::dpp::{self, Basket, TraitMatrix};
use crate::error::{Error, Result};
use crate::mixture::{self, Hyperparams, MixtureState};
use crate::rng::{stream, Phase};

/// One SGHMC update in its momentum form:
/// `R ← (1 - beta) R + eta · grad + N(0, 2 · beta · eta)`, then `V ← V + R`.
///
/// `grad` is the gradient of the log posterior (an ascent direction).
pub fn sghmc_step<R: Rng + ?Sized>(
    v: &mut TraitMatrix,
    momentum: &mut DMatrix<f64>,
    grad: &DMatrix<f64>,
    eta: f64,
    beta: f64,
    rng: &mut R,
) -> Result<()> {
    let shape = (v.num_items(), v.num_traits());
    if momentum.shape() != shape || grad.shape() != shape {
        return Err(Error::Shape {
            expected: format!("{}x{}", shape.0, shape.1),
            found: format!(
                "momentum {:?}, gradient {:?}",
                momentum.shape(),
                grad.shape()
            ),
        });
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let noise_sd = (2.0 * beta * eta).sqrt();
    for (r, g) in momentum.iter_mut().zip(grad.iter()) {
        let noise: f64 = if noise_sd > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            noise_sd * z
        } else {
            0.0
        };
        *r = (1.0 - beta) * *r + eta * g + noise;
    }
    v.0 += &*momentum;
    Ok(())
}

/// Posterior snapshot kept after a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub components: Vec<TraitMatrix>,
    pub weights: Vec<f64>,
}

/// Ordered posterior samples plus the configuration and catalog they were
/// trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleChain {
    pub config: SamplerConfig,
    /// External item ids, indexed by dense item index.
    pub catalog: Vec<String>,
    pub samples: Vec<Snapshot>,
}

impl SampleChain {
    pub fn num_items(&self) -> usize {
        self.samples
            .first()
            .and_then(|s| s.components.first())
            .map_or(self.catalog.len(), TraitMatrix::num_items)
    }

    pub fn num_traits(&self) -> usize {
        self.config.num_traits
    }

    pub fn num_components(&self) -> usize {
        self.config.num_components
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples left after discarding `burn_in`.
    pub fn retained(&self, burn_in: usize) -> &[Snapshot] {
        &self.samples[burn_in.min(self.samples.len())..]
    }

    /// Errors unless the chain was trained for `M = num_items`, `K = num_traits`.
    pub fn check_dims(&self, num_items: usize, num_traits: usize) -> Result<()> {
        if self.num_items() != num_items || self.num_traits() != num_traits {
            return Err(Error::ChainDimension {
                expected_m: num_items,
                expected_k: num_traits,
                found_m: self.num_items(),
                found_k: self.num_traits(),
            });
        }
        Ok(())
    }
}

/// Per-sweep diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepStats {
    pub sweep: usize,
    pub minibatch_len: usize,
    /// `Σ_{n ∈ minibatch} log Σ_w φ_w P(A_n | V_w)` at the start of the sweep.
    pub minibatch_log_likelihood: f64,
    /// Components with `φ_w > 1/(10W)` after the sweep.
    pub occupied: usize,
}

/// Stateful sampler over a fixed set of training baskets.
pub struct Sampler<'a> {
    baskets: &'a [Basket],
    config: SamplerConfig,
    hyper: Hyperparams,
    state: MixtureState,
    sweeps_done: usize,
}

impl<'a> Sampler<'a> {
    /// Validates the configuration, rejects baskets larger than `K` and
    /// initializes the state. An empty basket list is allowed (prior-only
    /// sampling).
    pub fn new(baskets: &'a [Basket], num_items: usize, config: &SamplerConfig) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        for (index, basket) in baskets.iter().enumerate() {
            basket.check_bounds(num_items)?;
            if basket.len() > config.num_traits {
                return Err(Error::BasketExceedsRank {
                    index,
                    size: basket.len(),
                    k: config.num_traits,
                });
            }
        }
        let hyper = config.hyperparams();
        let mut rng = stream(config.seed, Phase::Init, 0, 0);
        let state = MixtureState::initialize(
            num_items,
            config.num_traits,
            config.num_components,
            baskets.len(),
            &hyper,
            config.init_scale,
            &mut rng,
        )?;
        Ok(Sampler {
            baskets,
            config,
            hyper,
            state,
            sweeps_done: 0,
        })
    }

    pub fn state(&self) -> &MixtureState {
        &self.state
    }

    /// Replaces the state, e.g. to start from a known configuration.
    pub fn set_state(&mut self, state: MixtureState) -> Result<()> {
        state.validate()?;
        if state.assignments.len() != self.baskets.len()
            || state.num_components() != self.config.num_components
        {
            return Err(Error::Shape {
                expected: format!(
                    "{} assignments, {} components",
                    self.baskets.len(),
                    self.config.num_components
                ),
                found: format!(
                    "{} assignments, {} components",
                    state.assignments.len(),
                    state.num_components()
                ),
            });
        }
        self.state = state;
        Ok(())
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            components: self.state.components.clone(),
            weights: self.state.weights.clone(),
        }
    }

    /// Uniform minibatch (sorted indices) for the given sweep.
    pub fn minibatch(&self, sweep: usize) -> Vec<usize> {
        let n = self.baskets.len();
        if n <= self.config.minibatch_size {
            return (0..n).collect();
        }
        let mut rng = stream(self.config.seed, Phase::Minibatch, sweep as u64, 0);
        let mut picked = index::sample(&mut rng, n, self.config.minibatch_size).into_vec();
        picked.sort_unstable();
        picked
    }

    /// Gradient of the component log posterior estimated from `minibatch`,
    /// scaled by (assigned total) / (assigned in minibatch).
    pub fn component_gradient(&self, w: usize, minibatch: &[usize]) -> Result<DMatrix<f64>> {
        let assigned: Vec<&Basket> = minibatch
            .iter()
            .filter(|&&n| self.state.assignments[n] == w)
            .map(|&n| &self.baskets[n])
            .collect();
        let total = self.state.assignments.iter().filter(|&&z| z == w).count();
        let (scale, n_total) = likelihood_scale(total, assigned.len());
        mixture::component_posterior_gradient(
            &self.state.components[w],
            assigned,
            n_total,
            self.state.precisions[w],
            scale,
        )
    }

    /// Runs one full sweep.
    pub fn sweep(&mut self) -> Result<SweepStats> {
        let sweep = self.sweeps_done;
        let seed = self.config.seed;
        let minibatch = self.minibatch(sweep);

        // assignments
        let log_norms: Vec<f64> = self
            .state
            .components
            .iter()
            .map(dpp::log_det_plus_identity)
            .collect();
        let draw = |&n: &usize| -> Result<(usize, f64)> {
            let logits = mixture::assignment_logits_with(
                &self.baskets[n],
                &self.state.components,
                &self.state.weights,
                &log_norms,
            );
            let probs = mixture::categorical_probs(&logits)?;
            let mut rng = stream(seed, Phase::Assignment, sweep as u64, n as u64);
            Ok((
                mixture::sample_categorical(&probs, &mut rng),
                mixture::log_sum_exp(&logits),
            ))
        };
        let drawn: Vec<(usize, f64)> = if self.config.parallel {
            minibatch.par_iter().map(draw).collect::<Result<_>>()?
        } else {
            minibatch.iter().map(draw).collect::<Result<_>>()?
        };
        let mut log_lik = 0.0;
        for (&n, &(z, lse)) in minibatch.iter().zip(&drawn) {
            self.state.assignments[n] = z;
            log_lik += lse;
        }

        // weights
        let counts = self.state.counts();
        let mut rng = stream(seed, Phase::Weights, sweep as u64, 0);
        self.state.weights = mixture::sample_weights(&counts, self.hyper.alpha, &mut rng);

        // components
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); self.config.num_components];
        for &n in &minibatch {
            assigned[self.state.assignments[n]].push(n);
        }
        let baskets = self.baskets;
        let hyper = self.hyper;
        let config = &self.config;
        let update =
            |(w, ((v, r), gamma)): (usize, ((&mut TraitMatrix, &mut DMatrix<f64>), &mut f64))| {
                let mut rng = stream(seed, Phase::Component, sweep as u64, w as u64);
                *gamma = mixture::sample_precision(v, hyper.a0, hyper.b0, &mut rng);
                let (scale, n_total) = likelihood_scale(counts[w], assigned[w].len());
                for _ in 0..config.leapfrog_steps {
                    let grad = mixture::component_posterior_gradient(
                        v,
                        assigned[w].iter().map(|&n| &baskets[n]),
                        n_total,
                        *gamma,
                        scale,
                    )?;
                    sghmc_step(v, r, &grad, config.eta, config.beta, &mut rng)?;
                }
                Ok(())
            };
        let state = &mut self.state;
        let results: Vec<Result<()>> = if config.parallel {
            state
                .components
                .par_iter_mut()
                .zip(state.momenta.par_iter_mut())
                .zip(state.precisions.par_iter_mut())
                .enumerate()
                .map(update)
                .collect()
        } else {
            state
                .components
                .iter_mut()
                .zip(state.momenta.iter_mut())
                .zip(state.precisions.iter_mut())
                .enumerate()
                .map(update)
                .collect()
        };
        for r in results {
            r.map_err(|e| match e {
                Error::NonFiniteGradient | Error::NonFinite => Error::Diverged { sweep },
                other => other,
            })?;
        }
        if !state.components.iter().all(TraitMatrix::is_finite)
            || !state
                .momenta
                .iter()
                .all(|r| r.iter().all(|x| x.is_finite()))
        {
            return Err(Error::Diverged { sweep });
        }
        debug_assert!(
            state.validate().is_ok(),
            "invalid state after sweep {sweep}"
        );

        self.sweeps_done += 1;
        let threshold = 1.0 / (10.0 * self.config.num_components as f64);
        Ok(SweepStats {
            sweep,
            minibatch_len: minibatch.len(),
            minibatch_log_likelihood: log_lik,
            occupied: self
                .state
                .weights
                .iter()
                .filter(|&&p| p > threshold)
                .count(),
        })
    }
}

/// `(scale, n_total)` for a component with `total` assigned observations of
/// which `in_batch` are in the minibatch. Components with nothing in the
/// minibatch get a prior-only update.
fn likelihood_scale(total: usize, in_batch: usize) -> (f64, usize) {
    if in_batch == 0 {
        (0.0, 0)
    } else {
        (total as f64 / in_batch as f64, total)
    }
}

/// Trains on `dataset` and returns the full chain.
pub fn run_sampler(dataset: &BasketDataset, config: &SamplerConfig) -> Result<SampleChain> {
    run_sampler_with(dataset, config, |_| {})
}

/// [`run_sampler`] with a callback after every sweep.
pub fn run_sampler_with(
    dataset: &BasketDataset,
    config: &SamplerConfig,
    mut on_sweep: impl FnMut(&SweepStats),
) -> Result<SampleChain> {
    if dataset.baskets.is_empty() {
        return Err(Error::Empty("training dataset has no baskets".into()));
    }
    let mut sampler = Sampler::new(&dataset.baskets, dataset.num_items(), config)?;
    let mut samples = Vec::with_capacity(config.total_samples);
    for _ in 0..config.total_samples {
        for _ in 0..config.thinning {
            let stats = sampler.sweep()?;
            on_sweep(&stats);
        }
        samples.push(sampler.snapshot());
    }
    Ok(SampleChain {
        config: sampler.config.clone(),
        catalog: dataset.catalog.ids().to_vec(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    #[test]
    fn step_without_friction_or_gradient_is_identity() {
        let mut v = TraitMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let before = v.clone();
        let mut r = DMatrix::zeros(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sghmc_step(&mut v, &mut r, &DMatrix::zeros(2, 2), 0.1, 0.0, &mut rng).unwrap();
        assert_eq!(v, before);
    }

    #[test]
    fn vanishing_step_size_leaves_state_nearly_fixed() {
        let mut v = TraitMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.5]).unwrap();
        let before = v.clone();
        let mut r = DMatrix::zeros(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        sghmc_step(&mut v, &mut r, &DMatrix::zeros(1, 3), 1e-14, 1.0, &mut rng).unwrap();
        assert!((v.as_matrix() - before.as_matrix()).amax() < 1e-5);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut v = TraitMatrix::zeros(1, 1);
        let mut r = DMatrix::zeros(1, 1);
        let grad = DMatrix::from_element(1, 1, f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = sghmc_step(&mut v, &mut r, &grad, 0.1, 0.1, &mut rng).unwrap_err();
        assert!(err.to_string().contains("diverged, reduce eta"));
    }

    fn tiny_dataset(seed: u64) -> BasketDataset {
        let synth = SynthConfig {
            num_items: 10,
            num_traits: 3,
            num_components: 2,
            num_baskets: 60,
            min_size: 2,
            max_size: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_synthetic(&synth, &mut rng).unwrap().0
    }

    fn tiny_config() -> SamplerConfig {
        let mut c = SamplerConfig::new(3);
        c.num_components = 4;
        c.eta = 1e-3;
        c.minibatch_size = 25;
        c.total_samples = 12;
        c.burn_in = 6;
        c.seed = 99;
        c
    }

    #[test]
    fn chains_are_reproducible_and_parallelism_neutral() {
        let data = tiny_dataset(1);
        let mut config = tiny_config();
        let a = run_sampler(&data, &config).unwrap();
        let b = run_sampler(&data, &config).unwrap();
        assert_eq!(a, b);
        config.parallel = false;
        let c = run_sampler(&data, &config).unwrap();
        assert_eq!(a.samples, c.samples);
        config.seed += 1;
        let d = run_sampler(&data, &config).unwrap();
        assert_ne!(a.samples, d.samples);
    }

    #[test]
    fn state_stays_valid() {
        let data = tiny_dataset(2);
        let mut sampler = Sampler::new(&data.baskets, data.num_items(), &tiny_config()).unwrap();
        for _ in 0..20 {
            let stats = sampler.sweep().unwrap();
            assert_eq!(stats.minibatch_len, 25);
            assert!(stats.minibatch_log_likelihood.is_finite());
            sampler.state().validate().unwrap();
        }
    }

    #[test]
    fn small_datasets_use_full_batches() {
        let data = tiny_dataset(3);
        let mut config = tiny_config();
        config.minibatch_size = 1000;
        let sampler = Sampler::new(&data.baskets, data.num_items(), &config).unwrap();
        assert_eq!(sampler.minibatch(0), (0..60).collect::<Vec<_>>());
        assert_eq!(likelihood_scale(60, 60), (1.0, 60));
    }

    #[test]
    fn single_sample_chain() {
        let data = tiny_dataset(4);
        let mut config = tiny_config();
        config.total_samples = 1;
        config.burn_in = 0;
        let chain = run_sampler(&data, &config).unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain.num_items(), 10);
    }

    #[test]
    fn rejects_baskets_above_rank() {
        let mut data = tiny_dataset(5);
        data.baskets.push(Basket::new([0, 1, 2, 3]));
        let err = run_sampler(&data, &tiny_config()).unwrap_err();
        assert!(matches!(
            err,
            Error::BasketExceedsRank {
                index: 60,
                size: 4,
                k: 3
            }
        ));
        assert!(err
            .to_string()
            .contains("zero probability mass on subsets with more than K items"));
    }

    #[test]
    fn divergence_names_the_sweep() {
        let data = tiny_dataset(6);
        let mut config = tiny_config();
        config.init_scale = 1e200;
        match run_sampler(&data, &config) {
            Err(Error::Diverged { .. }) | Err(Error::UnsupportedObservation) => {}
            other => panic!("expected divergence, got {:?}", other.map(|c| c.len())),
        }
    }

    #[test]
    fn prior_only_sampler_runs_without_data() {
        let mut config = tiny_config();
        config.num_components = 2;
        let mut sampler = Sampler::new(&[], 4, &config).unwrap();
        for _ in 0..10 {
            sampler.sweep().unwrap();
        }
        assert!(sampler
            .state()
            .components
            .iter()
            .all(TraitMatrix::is_finite));
    }
}
