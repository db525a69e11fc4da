//! Small dense helpers shared by the families and optimizers.
//!
//! Symmetric matrices are flattened as `[diag; sqrt(2) * upper off-diagonals]`
//! (row-major over `i < j`). The sqrt(2) scaling keeps the Frobenius inner product
//! `tr(A B)` equal to the Euclidean inner product of the flat vectors, so natural
//! and expectation coordinates stay a dual pair after flattening.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// RNG used everywhere; explicit, seedable and stream-splittable.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

pub const fn sym_flat_len(p: usize) -> usize {
    p * (p + 1) / 2
}

pub fn sym_to_flat(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(sym_flat_len(p));
    out.extend((0..p).map(|i| m[(i, i)]));
    for i in 0..p {
        for j in (i + 1)..p {
            out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    DVector::from_vec(out)
}

pub fn flat_to_sym(v: &[f64], p: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), sym_flat_len(p));
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p {
        m[(i, i)] = v[i];
    }
    let mut k = p;
    for i in 0..p {
        for j in (i + 1)..p {
            let x = v[k] / std::f64::consts::SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a matrix that must be symmetric positive definite.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{what} has non-finite entries")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::Domain(format!("{what} is not positive definite")))
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&spd_cholesky(m, what)?.inverse()))
}

pub fn log_det_spd(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Numerically safe `1 - tanh(x)^2`.
pub fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    1.0 / (c * c)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_preserves_frobenius_inner_product() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -1.0, 0.5, 3.0, 0.25, -1.0, 0.25, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -0.3, 0.2, -0.3, 0.7, 0.9, 0.2, 0.9, 4.0]);
        let frob = (&a * &b).trace();
        let flat = sym_to_flat(&a).dot(&sym_to_flat(&b));
        assert!((frob - flat).abs() < 1e-12);
        let back = flat_to_sym(sym_to_flat(&a).as_slice(), 3);
        assert!((back - a).abs().max() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spd_cholesky(&m, "S"), Err(Error::Domain(_))));
    }

    #[test]
    fn sech2_large_argument() {
        assert_eq!(sech2(1000.0), 0.0);
        assert!((sech2(0.0) - 1.0).abs() < 1e-15);
    }
}
