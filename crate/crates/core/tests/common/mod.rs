#![allow(dead_code)]

use dppmix::dpp::{Basket, TraitMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[-bound, bound]`.
pub fn random_traits<R: Rng>(rng: &mut R, m: usize, k: usize, bound: f64) -> TraitMatrix {
    let data: Vec<f64> = (0..m * k)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    TraitMatrix::from_row_slice(m, k, &data).unwrap()
}

/// Distinct items drawn uniformly from `0..m`.
pub fn random_basket<R: Rng>(rng: &mut R, m: usize, size: usize) -> Basket {
    Basket::new(rand::seq::index::sample(rng, m, size))
}

/// `log |det(A)|` by LU with partial pivoting, written out independently of
/// the library.
pub fn lu_log_det(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut m = a.clone();
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs()))
            .unwrap();
        if m[(p, c)] == 0.0 {
            return f64::NEG_INFINITY;
        }
        m.swap_rows(p, c);
        let pivot = m[(c, c)];
        log_det += pivot.abs().ln();
        for r in c + 1..n {
            let f = m[(r, c)] / pivot;
            for j in c..n {
                m[(r, j)] -= f * m[(c, j)];
            }
        }
    }
    log_det
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standard error of the sample variance, from the sample fourth moment.
pub fn var_standard_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mean, var) = mean_var(xs);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    ((m4 - var * var) / n).sqrt()
}
