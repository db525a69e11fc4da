//! Independent `{-1, +1}` variables with `p(theta = +1) = p`.
//! Sufficient statistic `theta`, `lambda = artanh(2p - 1)`, `A = sum log(2 cosh lambda)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::linalg::{sech2, Rng};
use crate::{Error, Result};

pub fn log_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

pub fn to_expectation(lambda: &DVector<f64>) -> DVector<f64> {
    lambda.map(f64::tanh)
}

pub fn to_natural(mu: &DVector<f64>) -> Result<DVector<f64>> {
    if mu.iter().any(|m| !(m.abs() < 1.0)) {
        return Err(Error::Domain("Bernoulli expectation must lie in (-1, 1)".into()));
    }
    Ok(mu.map(f64::atanh))
}

pub fn log_partition(lambda: &DVector<f64>) -> f64 {
    lambda.iter().map(|l| log_2cosh(*l)).sum()
}

pub fn entropy(lambda: &DVector<f64>) -> f64 {
    lambda.iter().map(|l| log_2cosh(*l) - l * l.tanh()).sum()
}

pub fn fisher(lambda: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&lambda.map(sech2))
}

pub fn sample(p_plus: &DVector<f64>, rng: &mut Rng) -> DVector<f64> {
    p_plus.map(|p| if rng.random::<f64>() < p { 1.0 } else { -1.0 })
}

pub fn log_pdf(lambda: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    if theta.iter().any(|t| t.abs() != 1.0) {
        return Err(Error::Domain("Bernoulli outcomes must be -1 or +1".into()));
    }
    Ok(lambda.dot(theta) - log_partition(lambda))
}
