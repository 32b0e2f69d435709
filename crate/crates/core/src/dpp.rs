//! Single-component low-rank DPP: `P(A) = det(L_A) / det(L + I)` with
//! `L = V Vᵀ`.
//!
//! Zero-probability events are reported as `f64::NEG_INFINITY` log-values
//! rather than errors, so mixture code can weigh them out naturally. Every
//! determinant is taken through a Cholesky factorization; a Gram matrix that
//! fails to factor is singular and its log-determinant is `-inf`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// `M x K` item trait matrix `V`; row `i` is the trait vector of item `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraitMatrix(pub(crate) DMatrix<f64>);

impl TraitMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape {
                expected: "at least one item and one trait".into(),
                found: format!("{}x{}", values.nrows(), values.ncols()),
            });
        }
        if !values.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(TraitMatrix(values))
    }

    pub fn zeros(num_items: usize, num_traits: usize) -> Self {
        assert!(num_items > 0 && num_traits > 0, "empty trait matrix");
        TraitMatrix(DMatrix::zeros(num_items, num_traits))
    }

    /// Builds from row-major data.
    pub fn from_row_slice(num_items: usize, num_traits: usize, data: &[f64]) -> Result<Self> {
        if data.len() != num_items * num_traits {
            return Err(Error::Shape {
                expected: format!("{} values", num_items * num_traits),
                found: format!("{} values", data.len()),
            });
        }
        Self::new(DMatrix::from_row_slice(num_items, num_traits, data))
    }

    pub fn identity(n: usize) -> Self {
        TraitMatrix(DMatrix::identity(n, n))
    }

    /// Catalog size `M`.
    pub fn num_items(&self) -> usize {
        self.0.nrows()
    }

    /// Trait dimension `K`.
    pub fn num_traits(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Dense `M x M` kernel `V Vᵀ`. Only meant for small catalogs.
    pub fn kernel(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    /// Stacks the rows indexed by `items`.
    pub fn select_rows(&self, items: &[usize]) -> DMatrix<f64> {
        self.0.select_rows(items)
    }

    /// Applies a catalog permutation: row `i` of the result is row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        TraitMatrix(self.0.select_rows(perm))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        TraitMatrix(&self.0 * factor)
    }

    /// Squared Frobenius norm, `Σ_i ‖v_i‖²`.
    pub fn squared_norm(&self) -> f64 {
        self.0.norm_squared()
    }
}

/// Sorted set of distinct item indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Basket(Vec<usize>);

impl Basket {
    /// Sorts and removes duplicates.
    pub fn new(items: impl IntoIterator<Item = usize>) -> Self {
        let mut items: Vec<usize> = items.into_iter().collect();
        items.sort_unstable();
        items.dedup();
        Basket(items)
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    pub fn with(&self, item: usize) -> Basket {
        Basket::new(self.0.iter().copied().chain(std::iter::once(item)))
    }

    pub fn without(&self, item: usize) -> Basket {
        Basket(self.0.iter().copied().filter(|&i| i != item).collect())
    }

    pub fn check_bounds(&self, num_items: usize) -> Result<()> {
        match self.0.last() {
            Some(&item) if item >= num_items => Err(Error::ItemOutOfRange { item, num_items }),
            _ => Ok(()),
        }
    }
}

impl FromIterator<usize> for Basket {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Basket::new(iter)
    }
}

fn cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m)
}

fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

/// `I_K + VᵀV`, positive definite for any finite `V`.
fn dual_kernel_plus_identity(v: &TraitMatrix) -> DMatrix<f64> {
    let k = v.num_traits();
    v.0.tr_mul(&v.0) + DMatrix::identity(k, k)
}

/// `None` only when `V` is not finite.
fn dual_cholesky(v: &TraitMatrix) -> Option<Cholesky<f64, Dyn>> {
    cholesky(dual_kernel_plus_identity(v))
}

/// Gram matrix `V_A V_Aᵀ` of a basket together with its row block.
fn basket_gram(v: &TraitMatrix, basket: &Basket) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows = v.select_rows(basket.items());
    let gram = &rows * rows.transpose();
    (rows, gram)
}

/// `log det(L + I_M)`, computed in the `K x K` dual form `log det(I_K + VᵀV)`.
/// NaN when `V` is not finite.
pub fn log_det_plus_identity(v: &TraitMatrix) -> f64 {
    dual_cholesky(v).map_or(f64::NAN, |c| log_det_from_cholesky(&c))
}

/// `log det(L_A)`. `-inf` when `|A| > K` or the Gram matrix is singular; `0`
/// for the empty basket.
pub fn log_det_submatrix(v: &TraitMatrix, basket: &Basket) -> f64 {
    if basket.is_empty() {
        return 0.0;
    }
    if basket.len() > v.num_traits() {
        return f64::NEG_INFINITY;
    }
    let (_, gram) = basket_gram(v, basket);
    cholesky(gram).map_or(f64::NEG_INFINITY, |c| log_det_from_cholesky(&c))
}

/// Log-probability of a single basket, `log det(L_A) - log det(L + I)`.
pub fn log_prob(v: &TraitMatrix, basket: &Basket) -> f64 {
    log_det_submatrix(v, basket) - log_det_plus_identity(v)
}

/// `Σ_n log det(L_[n]) - N log det(L + I)`.
pub fn log_likelihood<'a>(v: &TraitMatrix, baskets: impl IntoIterator<Item = &'a Basket>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for basket in baskets {
        total += log_det_submatrix(v, basket);
        count += 1;
    }
    if total == f64::NEG_INFINITY {
        return total;
    }
    total - count as f64 * log_det_plus_identity(v)
}

/// Gradient of the (minibatch-estimated) log-likelihood with respect to `V`.
///
/// The basket terms contribute `2 L_A⁻¹ V_A` to the rows of `A` and are
/// multiplied by `scale`. The normalization term `-n_total · 2 (L + I)⁻¹ V`
/// is evaluated as `-n_total · 2 V (I_K + VᵀV)⁻¹`, which equals `2 B V` with
/// `B = I - V (I_K + VᵀV)⁻¹ Vᵀ` and touches every row.
pub fn log_likelihood_gradient<'a>(
    v: &TraitMatrix,
    baskets: impl IntoIterator<Item = &'a Basket>,
    n_total: usize,
    scale: f64,
) -> Result<DMatrix<f64>> {
    let mut grad = DMatrix::zeros(v.num_items(), v.num_traits());
    if scale != 0.0 {
        for (index, basket) in baskets.into_iter().enumerate() {
            if basket.len() > v.num_traits() {
                return Err(Error::SingularBasket { index });
            }
            let (rows, gram) = basket_gram(v, basket);
            let chol = cholesky(gram).ok_or(Error::SingularBasket { index })?;
            let inv_rows = chol.solve(&rows);
            for (r, &item) in basket.items().iter().enumerate() {
                let mut g = grad.row_mut(item);
                g += inv_rows.row(r) * (2.0 * scale);
            }
        }
    }
    if n_total > 0 {
        let solved = dual_cholesky(v)
            .ok_or(Error::NonFinite)?
            .solve(&v.0.transpose());
        grad -= solved.transpose() * (2.0 * n_total as f64);
    }
    Ok(grad)
}

/// Diagonal of the kernel conditioned on including `A`:
/// `L^A_bb = v_b P v_bᵀ` with `P = I_K - V_Aᵀ (V_A V_Aᵀ)⁻¹ V_A`.
///
/// Entry `b ∉ A` equals `det(L_{A∪{b}}) / det(L_A)`. Entries for `b ∈ A` are 0.
pub fn conditioned_diagonal(v: &TraitMatrix, basket: &Basket) -> Result<DVector<f64>> {
    basket.check_bounds(v.num_items())?;
    let k = v.num_traits();
    if basket.len() > k {
        return Err(Error::SingularConditioning);
    }
    if basket.len() == k {
        let (_, gram) = basket_gram(v, basket);
        cholesky(gram).ok_or(Error::SingularConditioning)?;
        return Ok(DVector::zeros(v.num_items()));
    }
    let mut projector = DMatrix::identity(k, k);
    if !basket.is_empty() {
        let (rows, gram) = basket_gram(v, basket);
        let chol = cholesky(gram).ok_or(Error::SingularConditioning)?;
        projector -= rows.tr_mul(&chol.solve(&rows));
    }
    let projected = &v.0 * &projector;
    let mut diag = DVector::from_iterator(
        v.num_items(),
        projected
            .row_iter()
            .zip(v.0.row_iter())
            .map(|(p, r)| p.dot(&r).max(0.0)),
    );
    for &item in basket.items() {
        diag[item] = 0.0;
    }
    Ok(diag)
}

/// Next-item probabilities `L^A_bb / Σ_{b'∉A} L^A_b'b'` (the trace of the
/// conditioned kernel is the first elementary symmetric polynomial of its
/// eigenvalues). Basket members get 0.
pub fn next_item_probs(v: &TraitMatrix, basket: &Basket) -> Result<DVector<f64>> {
    let mut diag = conditioned_diagonal(v, basket)?;
    let total: f64 = diag.sum();
    // rounding residue of an exhausted projector is not mass
    let floor = 1e-12 * v.squared_norm();
    if !(total.is_finite() && total > floor) {
        return Err(Error::DegenerateConditional);
    }
    diag /= total;
    Ok(diag)
}

/// Log of [`next_item_probs`]; `-inf` for basket members and for candidates
/// with zero conditioned mass.
pub fn next_item_log_probs(v: &TraitMatrix, basket: &Basket) -> Result<DVector<f64>> {
    let probs = next_item_probs(v, basket)?;
    Ok(probs.map(f64::ln))
}
