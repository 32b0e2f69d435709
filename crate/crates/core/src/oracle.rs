//! Exact brute-force references over tiny catalogs.
//!
//! Everything here works on an explicit `M x M` kernel and enumerates
//! subsets, with determinants from LU factorization. None of it shares code
//! with [`crate::dpp`], so the two can check each other.

use nalgebra::DMatrix;

use crate::dpp::Basket;
use crate::error::{Error, Result};

pub const MAX_ORACLE_ITEMS: usize = 12;

/// Dense symmetric positive semi-definite kernel `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseKernel(DMatrix<f64>);

impl DenseKernel {
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::Shape {
                expected: "square kernel".into(),
                found: format!("{}x{}", l.nrows(), l.ncols()),
            });
        }
        let scale = l.amax().max(1.0);
        if (&l - l.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Config("kernel is not symmetric".into()));
        }
        if l.nrows() > 0 && l.clone().symmetric_eigenvalues().min() < -1e-10 * scale {
            return Err(Error::Config("kernel is not positive semi-definite".into()));
        }
        Ok(DenseKernel(l))
    }

    /// `L = V Vᵀ` for a row-major `M x K` factor.
    pub fn from_factor(v: &DMatrix<f64>) -> Self {
        let l = v * v.transpose();
        DenseKernel((&l + l.transpose()) * 0.5)
    }

    pub fn num_items(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `det(L_A)`, with `det(L_∅) = 1`.
    pub fn subset_det(&self, items: &[usize]) -> f64 {
        if items.is_empty() {
            return 1.0;
        }
        self.0
            .select_rows(items)
            .select_columns(items)
            .determinant()
    }

    fn check_size(&self) -> Result<()> {
        let m = self.num_items();
        if m > MAX_ORACLE_ITEMS {
            return Err(Error::OracleTooLarge {
                m,
                max: MAX_ORACLE_ITEMS,
            });
        }
        Ok(())
    }
}

fn mask_items(mask: usize, m: usize) -> Vec<usize> {
    (0..m).filter(|i| mask & (1 << i) != 0).collect()
}

/// Probabilities of all `2^M` subsets, indexed by bitmask (bit `i` = item `i`).
#[derive(Clone, Debug)]
pub struct SubsetProbs {
    num_items: usize,
    probs: Vec<f64>,
}

impl SubsetProbs {
    pub fn get(&self, items: &[usize]) -> f64 {
        let mask = items.iter().fold(0usize, |acc, &i| acc | (1 << i));
        self.probs[mask]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let m = self.num_items;
        self.probs
            .iter()
            .enumerate()
            .map(move |(mask, &p)| (mask_items(mask, m), p))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `P(A) = det(L_A) / det(L + I)` for every subset. The normalizer is the
/// determinant of the explicit `L + I`, not the subset sum, so the total
/// checks the normalization identity.
pub fn enumerate_subset_probs(kernel: &DenseKernel) -> Result<SubsetProbs> {
    kernel.check_size()?;
    let m = kernel.num_items();
    let normalizer = (kernel.matrix() + DMatrix::identity(m, m)).determinant();
    let probs = (0..1usize << m)
        .map(|mask| kernel.subset_det(&mask_items(mask, m)) / normalizer)
        .collect();
    Ok(SubsetProbs {
        num_items: m,
        probs,
    })
}

/// Exact probability of `A` under the DPP.
pub fn subset_prob(kernel: &DenseKernel, basket: &Basket) -> f64 {
    let m = kernel.num_items();
    kernel.subset_det(basket.items()) / (kernel.matrix() + DMatrix::identity(m, m)).determinant()
}

/// Next-item distribution in its definitional form,
/// `det(L_{A∪{b}}) / Σ_{b'∉A} det(L_{A∪{b'}})`; basket members get 0.
pub fn oracle_next_item(kernel: &DenseKernel, basket: &Basket) -> Result<Vec<f64>> {
    kernel.check_size()?;
    let m = kernel.num_items();
    basket.check_bounds(m)?;
    if kernel.subset_det(basket.items()) <= 0.0 {
        return Err(Error::SingularConditioning);
    }
    let mut out: Vec<f64> = (0..m)
        .map(|b| {
            if basket.contains(b) {
                0.0
            } else {
                kernel.subset_det(basket.with(b).items()).max(0.0)
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateConditional);
    }
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// `Σ_n log Σ_w φ_w P(A_n | L_w)`.
pub fn oracle_mixture_loglik(
    components: &[DenseKernel],
    weights: &[f64],
    baskets: &[Basket],
) -> Result<f64> {
    if components.len() != weights.len() {
        return Err(Error::Shape {
            expected: format!("{} weights", components.len()),
            found: format!("{} weights", weights.len()),
        });
    }
    for c in components {
        c.check_size()?;
    }
    Ok(baskets
        .iter()
        .map(|a| {
            components
                .iter()
                .zip(weights)
                .filter(|(_, &phi)| phi > 0.0)
                .map(|(l, &phi)| phi * subset_prob(l, a))
                .sum::<f64>()
                .ln()
        })
        .sum())
}
