//! Mixture state and the closed-form Gibbs conditionals for assignments,
//! mixing weights and prior precisions.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardUniform};

use crate::dpp::{self, Basket, TraitMatrix};
use crate::error::{Error, Result};

/// Shared hyperparameters: symmetric Dirichlet concentration `alpha` and the
/// Gamma(shape `a0`, rate `b0`) prior on each component precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub alpha: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Hyperparams {
    /// `alpha = 1/W`, `a0 = √K`, `b0 = 1`.
    pub fn defaults(num_components: usize, num_traits: usize) -> Self {
        Hyperparams {
            alpha: 1.0 / num_components as f64,
            a0: (num_traits as f64).sqrt(),
            b0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("a0", self.a0), ("b0", self.b0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Full sampler state for a `W`-component mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    pub components: Vec<TraitMatrix>,
    pub precisions: Vec<f64>,
    pub weights: Vec<f64>,
    /// Component index per observation (the one-hot `Z` stored densely).
    pub assignments: Vec<usize>,
    /// SGHMC momentum, one matrix per component.
    pub momenta: Vec<DMatrix<f64>>,
}

impl MixtureState {
    /// Trait entries i.i.d. `N(0, init_scale²)`, precisions from their prior,
    /// uniform weights, uniform-random assignments and zero momenta.
    pub fn initialize<R: Rng + ?Sized>(
        num_items: usize,
        num_traits: usize,
        num_components: usize,
        num_observations: usize,
        hyper: &Hyperparams,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_components == 0 || num_items == 0 || num_traits == 0 {
            return Err(Error::Config("W, M and K must all be positive".into()));
        }
        hyper.validate()?;
        let normal =
            Normal::new(0.0, init_scale).map_err(|e| Error::Config(format!("init scale: {e}")))?;
        let prior = Gamma::new(hyper.a0, 1.0 / hyper.b0)
            .map_err(|e| Error::Config(format!("precision prior: {e}")))?;
        let components = (0..num_components)
            .map(|_| {
                TraitMatrix(DMatrix::from_fn(num_items, num_traits, |_, _| {
                    normal.sample(rng)
                }))
            })
            .collect();
        let precisions = (0..num_components)
            .map(|_| prior.sample(rng).max(f64::MIN_POSITIVE))
            .collect();
        let weights = vec![1.0 / num_components as f64; num_components];
        let assignments = (0..num_observations)
            .map(|_| rng.random_range(0..num_components))
            .collect();
        let momenta = vec![DMatrix::zeros(num_items, num_traits); num_components];
        Ok(MixtureState {
            components,
            precisions,
            weights,
            assignments,
            momenta,
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn num_items(&self) -> usize {
        self.components[0].num_items()
    }

    pub fn num_traits(&self) -> usize {
        self.components[0].num_traits()
    }

    /// Number of observations assigned to each component.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_components()];
        for &z in &self.assignments {
            counts[z] += 1;
        }
        counts
    }

    /// Checks the state invariants: weights on the simplex, positive
    /// precisions, assignment indices in range, finite matrices.
    pub fn validate(&self) -> Result<()> {
        let w = self.num_components();
        if self.precisions.len() != w || self.weights.len() != w || self.momenta.len() != w {
            return Err(Error::Shape {
                expected: format!("{w} components"),
                found: format!(
                    "{} precisions, {} weights, {} momenta",
                    self.precisions.len(),
                    self.weights.len(),
                    self.momenta.len()
                ),
            });
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config(format!(
                "mixing weights off the simplex (sum {sum})"
            )));
        }
        if self.precisions.iter().any(|&g| !(g.is_finite() && g > 0.0)) {
            return Err(Error::Config("non-positive precision".into()));
        }
        if self.assignments.iter().any(|&z| z >= w) {
            return Err(Error::Config("assignment index out of range".into()));
        }
        if !self.components.iter().all(TraitMatrix::is_finite)
            || !self.momenta.iter().all(|r| r.iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// `log φ_w + f(A | V_w)` for every component, given precomputed
/// `log det(L_w + I)` normalizers.
pub fn assignment_logits_with(
    basket: &Basket,
    components: &[TraitMatrix],
    weights: &[f64],
    log_normalizers: &[f64],
) -> Vec<f64> {
    components
        .iter()
        .zip(weights)
        .zip(log_normalizers)
        .map(|((v, &phi), &norm)| {
            if phi <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let log_det = dpp::log_det_submatrix(v, basket);
            if log_det == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                phi.ln() + log_det - norm
            }
        })
        .collect()
}

/// `log φ_w + f(A | V_w)` for every component.
pub fn assignment_logits(basket: &Basket, state: &MixtureState) -> Vec<f64> {
    let norms: Vec<f64> = state
        .components
        .iter()
        .map(dpp::log_det_plus_identity)
        .collect();
    assignment_logits_with(basket, &state.components, &state.weights, &norms)
}

/// Softmax after subtracting the largest logit. `-inf` logits get exactly 0.
pub fn categorical_probs(logits: &[f64]) -> Result<Vec<f64>> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::UnsupportedObservation);
    }
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// `log Σ exp(logits)`, `-inf` when every logit is.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

/// Inverse-CDF draw from normalized probabilities; zero-probability entries
/// are never returned.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.sample(StandardUniform);
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = i;
            if u < cumulative {
                return i;
            }
        }
    }
    last_positive
}

pub fn sample_assignment<R: Rng + ?Sized>(
    basket: &Basket,
    state: &MixtureState,
    rng: &mut R,
) -> Result<usize> {
    let probs = categorical_probs(&assignment_logits(basket, state))?;
    Ok(sample_categorical(&probs, rng))
}

/// `log` of a Gamma(shape, 1) draw. Shapes below 1 use
/// `G(a) = G(a + 1) · U^{1/a}` in log space so tiny concentrations do not
/// underflow to zero.
fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0)
            .expect("positive shape")
            .sample(rng)
            .ln()
    } else {
        let boosted = Gamma::new(shape + 1.0, 1.0)
            .expect("positive shape")
            .sample(rng);
        let u: f64 = rng.sample(rand_distr::OpenClosed01);
        boosted.ln() + u.ln() / shape
    }
}

/// `φ ~ Dirichlet(alpha + counts_1, …, alpha + counts_W)`.
pub fn sample_weights<R: Rng + ?Sized>(counts: &[usize], alpha: f64, rng: &mut R) -> Vec<f64> {
    assert!(alpha > 0.0, "Dirichlet concentration must be positive");
    let logs: Vec<f64> = counts
        .iter()
        .map(|&c| log_gamma_draw(alpha + c as f64, rng))
        .collect();
    let norm = log_sum_exp(&logs);
    let mut weights: Vec<f64> = logs.iter().map(|&l| (l - norm).exp()).collect();
    // renormalize once more so the simplex holds to rounding
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|p| *p /= total);
    weights
}

/// Shape and rate of the precision conditional:
/// `a = a0 + MK/2`, `b = b0 + ½ Σ_i ‖v_i‖²`.
pub fn precision_posterior(v: &TraitMatrix, a0: f64, b0: f64) -> (f64, f64) {
    let shape = a0 + (v.num_items() * v.num_traits()) as f64 / 2.0;
    let rate = b0 + 0.5 * v.squared_norm();
    (shape, rate)
}

pub fn sample_precision<R: Rng + ?Sized>(v: &TraitMatrix, a0: f64, b0: f64, rng: &mut R) -> f64 {
    let (shape, rate) = precision_posterior(v, a0, b0);
    Gamma::new(shape, 1.0 / rate)
        .expect("finite positive gamma parameters")
        .sample(rng)
        .max(f64::MIN_POSITIVE)
}

/// Gradient of `log p(V_w | 𝒜, Z, γ_w)`:
/// `scale · Σ_n ∇f(A_n) - n_assigned_total · ∇ log det(L + I) - γ_w V_w`.
///
/// The Gaussian prior enters once per component with a negative sign.
pub fn component_posterior_gradient<'a>(
    v: &TraitMatrix,
    assigned: impl IntoIterator<Item = &'a Basket>,
    n_assigned_total: usize,
    precision: f64,
    scale: f64,
) -> Result<DMatrix<f64>> {
    let mut grad = dpp::log_likelihood_gradient(v, assigned, n_assigned_total, scale)?;
    grad -= v.as_matrix() * precision;
    Ok(grad)
}
