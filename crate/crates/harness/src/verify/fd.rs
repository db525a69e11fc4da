//! Central finite differences and random test inputs shared by the checks.

use blrkit::linalg::{standard_normal, Rng};
use blrkit::{DMatrix, DVector, Result};

/// Central-difference gradient of a scalar function.
pub fn gradient(f: impl Fn(&DVector<f64>) -> Result<f64>, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let (mut up, mut dn) = (x.clone(), x.clone());
        up[i] += h;
        dn[i] -= h;
        g[i] = (f(&up)? - f(&dn)?) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Jacobian; column `j` is the derivative along `x_j`.
pub fn jacobian(f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let (mut up, mut dn) = (x.clone(), x.clone());
        up[i] += h;
        dn[i] -= h;
        cols.push((f(&up)? - f(&dn)?) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// `max |a - b| / max(1, max |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// `B B^T / p + c I` with standard normal `B`.
pub fn random_spd(rng: &mut Rng, p: usize, c: f64) -> DMatrix<f64> {
    let b = DMatrix::from_iterator(p, p, standard_normal(rng, p * p).iter().copied());
    let a = &b * b.transpose() / p as f64 + DMatrix::identity(p, p) * c;
    (&a + a.transpose()) * 0.5
}

pub fn random_vec(rng: &mut Rng, p: usize, scale: f64) -> DVector<f64> {
    standard_normal(rng, p) * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_a_cubic() {
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let g = gradient(|t| Ok(t[0].powi(3) + t[0] * t[1]), &x, 1e-5).unwrap();
        assert!(rel_err(g.as_slice(), &[3.0 + -2.0, 1.0]) < 1e-8);
        let j = jacobian(|t| Ok(DVector::from_vec(vec![t[0] * t[1], t[1]])), &x, 1e-5).unwrap();
        assert!(rel_err(j.as_slice(), DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, 1.0]).as_slice()) < 1e-8);
    }
}
