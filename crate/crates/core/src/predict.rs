//! Next-item scores averaged over retained posterior samples:
//! `(1/S) Σ_s Σ_w φ_w^(s) P(A ∪ {b} | A, V_w^(s))`.

use rayon::prelude::*;

use crate::dpp::{self, Basket};
use crate::error::{Error, Result};
use crate::sghmc::{SampleChain, Snapshot};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRequest {
    pub basket: Basket,
    /// Overrides the chain's configured burn-in.
    pub burn_in: Option<usize>,
    /// Restricts the output to these items; all others score 0.
    pub candidates: Option<Basket>,
}

impl PredictionRequest {
    pub fn new(basket: Basket) -> Self {
        PredictionRequest {
            basket,
            burn_in: None,
            candidates: None,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = Some(burn_in);
        self
    }
}

/// `Σ_w φ_w P(· | A, V_w)` for one sample, or `None` when no component
/// supports the basket. Components where the basket is impossible (or leaves
/// no candidate mass) contribute nothing.
fn sample_scores(
    snapshot: &Snapshot,
    basket: &Basket,
    num_items: usize,
) -> Result<Option<Vec<f64>>> {
    let mut acc = vec![0.0; num_items];
    let mut supported = false;
    for (v, &phi) in snapshot.components.iter().zip(&snapshot.weights) {
        if phi <= 0.0 {
            continue;
        }
        match dpp::next_item_probs(v, basket) {
            Ok(p) => {
                supported = true;
                for (a, x) in acc.iter_mut().zip(p.iter()) {
                    *a += phi * x;
                }
            }
            Err(Error::SingularConditioning | Error::DegenerateConditional) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(supported.then_some(acc))
}

/// Posterior-averaged next-item probabilities, one entry per catalog item.
/// Basket members score 0.
pub fn predict_next_item(chain: &SampleChain, request: &PredictionRequest) -> Result<Vec<f64>> {
    let m = chain.num_items();
    let basket = &request.basket;
    if basket.is_empty() {
        return Err(Error::Empty("prediction basket".into()));
    }
    basket.check_bounds(m)?;
    if basket.len() >= m {
        return Err(Error::NoCandidates);
    }
    let burn_in = request.burn_in.unwrap_or(chain.config.burn_in);
    if burn_in >= chain.len() {
        return Err(Error::Config(format!(
            "burn-in {burn_in} leaves no samples in a chain of length {}",
            chain.len()
        )));
    }
    let retained = chain.retained(burn_in);
    let per_sample: Vec<Option<Vec<f64>>> = retained
        .par_iter()
        .map(|s| sample_scores(s, basket, m))
        .collect::<Result<_>>()?;
    if per_sample.iter().all(Option::is_none) {
        return Err(Error::UnsupportedBasket);
    }
    // summed in sample order
    let mut scores = vec![0.0; m];
    for sample in per_sample.iter().flatten() {
        for (s, x) in scores.iter_mut().zip(sample) {
            *s += x;
        }
    }
    let count = retained.len() as f64;
    for s in &mut scores {
        *s /= count;
    }
    if let Some(mask) = &request.candidates {
        for (i, s) in scores.iter_mut().enumerate() {
            if !mask.contains(i) {
                *s = 0.0;
            }
        }
    }
    Ok(scores)
}

/// Items outside `basket`, by descending score; ties go to the lower index.
pub fn rank_candidates(scores: &[f64], basket: &Basket) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| !basket.contains(*i))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
