//! Held-out-item evaluation: one item is removed from each test basket and
//! the model ranks every non-observed catalog item as its completion.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::dpp::Basket;
use crate::error::{Error, Result};
use crate::predict::{predict_next_item, PredictionRequest};
use crate::sghmc::SampleChain;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalInstance {
    pub observed: Basket,
    pub held_out: usize,
}

/// One instance per basket, holding out a uniformly chosen member.
pub fn make_eval_instances<R: Rng + ?Sized>(
    baskets: &[Basket],
    rng: &mut R,
) -> Result<Vec<EvalInstance>> {
    baskets
        .iter()
        .map(|b| {
            if b.len() < 2 {
                return Err(Error::BasketTooSmall { size: b.len() });
            }
            let held_out = b.items()[rng.random_range(0..b.len())];
            Ok(EvalInstance {
                observed: b.without(held_out),
                held_out,
            })
        })
        .collect()
}

/// Anything that scores every catalog item given an observed basket.
pub trait Scorer: Sync {
    fn scores(&self, observed: &Basket) -> Result<Vec<f64>>;
}

impl<F> Scorer for F
where
    F: Fn(&Basket) -> Result<Vec<f64>> + Sync,
{
    fn scores(&self, observed: &Basket) -> Result<Vec<f64>> {
        self(observed)
    }
}

/// Scores from a trained chain.
pub struct ChainScorer<'a> {
    pub chain: &'a SampleChain,
    pub burn_in: Option<usize>,
}

impl Scorer for ChainScorer<'_> {
    fn scores(&self, observed: &Basket) -> Result<Vec<f64>> {
        let request = PredictionRequest {
            basket: observed.clone(),
            burn_in: self.burn_in,
            candidates: None,
        };
        predict_next_item(self.chain, &request)
    }
}

/// `100 · |{j ∈ C : p_held ≥ p_j}| / |C|` with `C` the catalog minus the
/// observed items (the held-out item included).
pub fn percentile_rank(scores: &[f64], instance: &EvalInstance) -> f64 {
    let target = scores[instance.held_out];
    let mut candidates = 0usize;
    let mut below = 0usize;
    for (j, &s) in scores.iter().enumerate() {
        if instance.observed.contains(j) {
            continue;
        }
        candidates += 1;
        if target >= s {
            below += 1;
        }
    }
    below as f64 / candidates as f64 * 100.0
}

/// 1-based rank of the held-out item in the candidate ordering of
/// [`crate::predict::rank_candidates`].
pub fn held_out_rank(scores: &[f64], instance: &EvalInstance) -> usize {
    let h = instance.held_out;
    let target = scores[h];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| !instance.observed.contains(j) && (s > target || (s == target && j < h)))
        .count()
}

/// Per-instance metric inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub percentile_rank: f64,
    pub rank: usize,
    pub held_out: usize,
}

/// Scores every instance (in parallel) and returns outcomes in instance order.
pub fn score_instances(instances: &[EvalInstance], scorer: &dyn Scorer) -> Result<Vec<Outcome>> {
    instances
        .par_iter()
        .map(|inst| {
            let scores = scorer.scores(&inst.observed)?;
            Ok(Outcome {
                percentile_rank: percentile_rank(&scores, inst),
                rank: held_out_rank(&scores, inst),
                held_out: inst.held_out,
            })
        })
        .collect()
}

fn non_empty(outcomes: &[Outcome]) -> Result<()> {
    if outcomes.is_empty() {
        return Err(Error::Empty("no evaluation instances".into()));
    }
    Ok(())
}

pub fn mpr_of(outcomes: &[Outcome]) -> Result<f64> {
    non_empty(outcomes)?;
    Ok(outcomes.iter().map(|o| o.percentile_rank).sum::<f64>() / outcomes.len() as f64)
}

pub fn precision_of(outcomes: &[Outcome], k: usize) -> Result<f64> {
    non_empty(outcomes)?;
    if k == 0 {
        return Err(Error::Config("precision@k needs k >= 1".into()));
    }
    let hits: f64 = outcomes
        .iter()
        .map(|o| if o.rank <= k { 1.0 } else { 0.0 })
        .sum();
    Ok(hits / outcomes.len() as f64)
}

/// What to do when a held-out item never appears in the training data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnseenPolicy {
    /// Treat its training count as 1 (the largest weight).
    #[default]
    CountAsOne,
    Error,
}

/// Popularity-weighted precision@k with weights `C(t)^-beta`. Returns the
/// value and the number of instances whose held-out item was unseen.
pub fn pop_weighted_precision_of(
    outcomes: &[Outcome],
    k: usize,
    beta: f64,
    train_counts: &[usize],
    policy: UnseenPolicy,
) -> Result<(f64, usize)> {
    non_empty(outcomes)?;
    if k == 0 {
        return Err(Error::Config("precision@k needs k >= 1".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    let mut unseen = 0;
    let mut num = 0.0;
    let mut den = 0.0;
    for o in outcomes {
        let count = train_counts.get(o.held_out).copied().unwrap_or(0);
        let weight = if beta == 0.0 {
            1.0
        } else if count == 0 {
            unseen += 1;
            match policy {
                UnseenPolicy::CountAsOne => 1.0,
                UnseenPolicy::Error => return Err(Error::UnseenHeldOut { item: o.held_out }),
            }
        } else {
            (count as f64).powf(-beta)
        };
        if o.rank <= k {
            num += weight;
        }
        den += weight;
    }
    Ok((num / den, unseen))
}

pub fn mean_percentile_rank(instances: &[EvalInstance], scorer: &dyn Scorer) -> Result<f64> {
    mpr_of(&score_instances(instances, scorer)?)
}

pub fn precision_at_k(instances: &[EvalInstance], scorer: &dyn Scorer, k: usize) -> Result<f64> {
    precision_of(&score_instances(instances, scorer)?, k)
}

pub fn pop_weighted_precision_at_k(
    instances: &[EvalInstance],
    scorer: &dyn Scorer,
    k: usize,
    beta: f64,
    train_counts: &[usize],
) -> Result<f64> {
    let outcomes = score_instances(instances, scorer)?;
    pop_weighted_precision_of(&outcomes, k, beta, train_counts, UnseenPolicy::default())
        .map(|r| r.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    pub beta_list: Vec<f64>,
    pub unseen_policy: UnseenPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_list: vec![5, 10, 20],
            beta_list: vec![0.0, 0.33, 0.6, 1.0],
            unseen_policy: UnseenPolicy::CountAsOne,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty()
            || self.k_list[0] == 0
            || !self.k_list.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::Config(
                "k-list must be nonempty, positive and ascending".into(),
            ));
        }
        if self.beta_list.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("every beta must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Metric values for one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mpr: f64,
    pub precision_at: Vec<(usize, f64)>,
    /// `(k, beta, value)`.
    pub pop_weighted_precision_at: Vec<(usize, f64, f64)>,
    pub num_instances: usize,
    /// Instances whose held-out item had no training occurrences.
    pub unseen_held_out: usize,
    /// Resolved settings echoed into every output.
    pub config_echo: Vec<(String, String)>,
}

pub fn evaluate(
    instances: &[EvalInstance],
    scorer: &dyn Scorer,
    train_counts: &[usize],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let outcomes = score_instances(instances, scorer)?;
    let mpr = mpr_of(&outcomes)?;
    let precision_at = config
        .k_list
        .iter()
        .map(|&k| Ok((k, precision_of(&outcomes, k)?)))
        .collect::<Result<_>>()?;
    let mut unseen_held_out = 0;
    let mut pop = Vec::new();
    for &k in &config.k_list {
        for &beta in &config.beta_list {
            let (value, unseen) =
                pop_weighted_precision_of(&outcomes, k, beta, train_counts, config.unseen_policy)?;
            unseen_held_out = unseen_held_out.max(unseen);
            pop.push((k, beta, value));
        }
    }
    Ok(EvalReport {
        mpr,
        precision_at,
        pop_weighted_precision_at: pop,
        num_instances: outcomes.len(),
        unseen_held_out,
        config_echo: Vec::new(),
    })
}

impl EvalReport {
    /// Flat `key=value` text.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config_echo {
            let _ = writeln!(out, "config.{k}={v}");
        }
        let _ = writeln!(out, "instances={}", self.num_instances);
        let _ = writeln!(out, "unseen_held_out={}", self.unseen_held_out);
        let _ = writeln!(out, "mpr={:?}", self.mpr);
        for (k, v) in &self.precision_at {
            let _ = writeln!(out, "precision@{k}={v:?}");
        }
        for (k, beta, v) in &self.pop_weighted_precision_at {
            let _ = writeln!(out, "pop_weighted_precision@{k}[beta={beta:?}]={v:?}");
        }
        out
    }

    /// Rows of `metric,k,beta,value,n_instances`, preceded by the config
    /// echo as `#` comment lines.
    pub fn to_csv(&self) -> String {
        let n = self.num_instances;
        let mut out = String::new();
        for (k, v) in &self.config_echo {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("metric,k,beta,value,n_instances\n");
        let _ = writeln!(out, "mpr,,,{:?},{n}", self.mpr);
        for (k, v) in &self.precision_at {
            let _ = writeln!(out, "precision,{k},,{v:?},{n}");
        }
        for (k, beta, v) in &self.pop_weighted_precision_at {
            let _ = writeln!(out, "pop_weighted_precision,{k},{beta:?},{v:?},{n}");
        }
        out
    }
}
