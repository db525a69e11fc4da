//! Gaussian candidates with isotropic-fixed, diagonal or full precision.
//!
//! Base measure convention: full and diagonal Gaussians use `h = 1`, so the
//! `(2 pi)^(P/2)` constant sits inside `A(lambda)`. The isotropic family has a fixed
//! precision `s0` and keeps its non-constant base measure
//! `h(theta) = (s0 / 2 pi)^(P/2) exp(-s0 |theta|^2 / 2)`; its natural parameter is
//! `s0 * m` and `A = |lambda|^2 / (2 s0)`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{flat_to_sym, log_det_spd, spd_cholesky, spd_inverse, standard_normal, sym_flat_len, sym_to_flat, Rng};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Covariance structure of a Gaussian block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Structure {
    /// Known precision `s0 * I`; only the mean is free.
    Iso(f64),
    Diag,
    Full,
}

impl Structure {
    pub fn flat_len(self, p: usize) -> usize {
        match self {
            Structure::Iso(_) => p,
            Structure::Diag => 2 * p,
            Structure::Full => p + sym_flat_len(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Precision {
    Scalar(f64),
    Diag(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Precision {
    pub fn to_matrix(&self, p: usize) -> DMatrix<f64> {
        match self {
            Precision::Scalar(s) => DMatrix::identity(p, p) * *s,
            Precision::Diag(d) => DMatrix::from_diagonal(d),
            Precision::Full(m) => m.clone(),
        }
    }

    pub fn covariance(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            Precision::Scalar(s) => Ok(DMatrix::identity(p, p) / *s),
            Precision::Diag(d) => Ok(DMatrix::from_diagonal(&d.map(|x| 1.0 / x))),
            Precision::Full(m) => spd_inverse(m, "precision"),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Precision::Scalar(s) => v * *s,
            Precision::Diag(d) => v.component_mul(d),
            Precision::Full(m) => m * v,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        match self {
            Precision::Scalar(s) if !(s.is_finite() && *s > 0.0) => Err(Error::Domain(format!("precision {s} is not positive"))),
            Precision::Diag(d) if d.iter().any(|x| !(x.is_finite() && *x > 0.0)) => {
                Err(Error::Domain("diagonal precision has non-positive entries".into()))
            }
            Precision::Full(m) => spd_cholesky(m, "precision").map(|_| ()),
            _ => Ok(()),
        }
    }
}

/// Mean and precision of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub precision: Precision,
}

impl GaussianMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_det_precision(&self) -> Result<f64> {
        let p = self.dim() as f64;
        Ok(match &self.precision {
            Precision::Scalar(s) => p * s.ln(),
            Precision::Diag(d) => d.iter().map(|x| x.ln()).sum(),
            Precision::Full(m) => log_det_spd(&spd_cholesky(m, "precision")?),
        })
    }
}

pub fn natural_from_moments(structure: Structure, g: &GaussianMoments) -> DVector<f64> {
    let p = g.dim();
    let eta1 = g.precision.apply(&g.mean);
    match (structure, &g.precision) {
        (Structure::Iso(_), _) => eta1,
        (Structure::Diag, Precision::Diag(d)) => stack(&eta1, &(d * -0.5)),
        (Structure::Diag, other) => stack(&eta1, &(other.to_matrix(p).diagonal() * -0.5)),
        (Structure::Full, prec) => stack(&eta1, &sym_to_flat(&(prec.to_matrix(p) * -0.5))),
    }
}

pub fn moments_from_natural(structure: Structure, p: usize, v: &[f64]) -> Result<GaussianMoments> {
    match structure {
        Structure::Iso(s0) => Ok(GaussianMoments {
            mean: DVector::from_column_slice(&v[..p]) / s0,
            precision: Precision::Scalar(s0),
        }),
        Structure::Diag => {
            let s = DVector::from_iterator(p, v[p..2 * p].iter().map(|x| -2.0 * x));
            let prec = Precision::Diag(s);
            prec.check()?;
            let Precision::Diag(s) = &prec else { unreachable!() };
            let mean = DVector::from_column_slice(&v[..p]).component_div(s);
            Ok(GaussianMoments { mean, precision: prec })
        }
        Structure::Full => {
            let s = flat_to_sym(&v[p..], p) * -2.0;
            let chol = spd_cholesky(&s, "precision")?;
            let mean = chol.solve(&DVector::from_column_slice(&v[..p]));
            Ok(GaussianMoments { mean, precision: Precision::Full(s) })
        }
    }
}

pub fn expectation_from_moments(structure: Structure, g: &GaussianMoments) -> Result<DVector<f64>> {
    let p = g.dim();
    let m = &g.mean;
    Ok(match structure {
        Structure::Iso(_) => m.clone(),
        Structure::Diag => {
            let var = match &g.precision {
                Precision::Diag(d) => d.map(|x| 1.0 / x),
                other => other.covariance(p)?.diagonal(),
            };
            stack(m, &(var + m.component_mul(m)))
        }
        Structure::Full => {
            let second = g.precision.covariance(p)? + m * m.transpose();
            stack(m, &sym_to_flat(&second))
        }
    })
}

pub fn moments_from_expectation(structure: Structure, p: usize, v: &[f64]) -> Result<GaussianMoments> {
    let mean = DVector::from_column_slice(&v[..p]);
    match structure {
        Structure::Iso(s0) => Ok(GaussianMoments { mean, precision: Precision::Scalar(s0) }),
        Structure::Diag => {
            let var = DVector::from_iterator(p, (0..p).map(|i| v[p + i] - mean[i] * mean[i]));
            if var.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Domain("second moment minus squared mean is not positive".into()));
            }
            Ok(GaussianMoments { mean, precision: Precision::Diag(var.map(|x| 1.0 / x)) })
        }
        Structure::Full => {
            let cov = flat_to_sym(&v[p..], p) - &mean * mean.transpose();
            let s = spd_inverse(&cov, "second moment minus mean outer product")?;
            Ok(GaussianMoments { mean, precision: Precision::Full(s) })
        }
    }
}

pub fn log_partition(structure: Structure, g: &GaussianMoments) -> Result<f64> {
    let p = g.dim() as f64;
    let quad = g.mean.dot(&g.precision.apply(&g.mean));
    Ok(match structure {
        Structure::Iso(_) => 0.5 * quad,
        _ => 0.5 * quad - 0.5 * g.log_det_precision()? + 0.5 * p * LN_2PI,
    })
}

pub fn entropy(g: &GaussianMoments) -> Result<f64> {
    let p = g.dim() as f64;
    Ok(0.5 * p * (1.0 + LN_2PI) - 0.5 * g.log_det_precision()?)
}

pub fn log_pdf(g: &GaussianMoments, theta: &DVector<f64>) -> Result<f64> {
    let p = g.dim() as f64;
    let r = theta - &g.mean;
    Ok(-0.5 * p * LN_2PI + 0.5 * g.log_det_precision()? - 0.5 * r.dot(&g.precision.apply(&r)))
}

/// Prepared draw from `N(m, S^-1)`; factorises the precision once.
pub fn sampler(g: &GaussianMoments) -> Result<impl Fn(&mut Rng) -> DVector<f64> + '_> {
    let dev = deviation_map(&g.precision)?;
    Ok(move |rng: &mut Rng| &g.mean + dev(&standard_normal(rng, g.dim())))
}

/// Maps standard-normal noise `z` to a zero-mean draw with covariance `S^-1`.
/// The map is linear, so `-z` gives the antithetic draw.
pub fn deviation_map(precision: &Precision) -> Result<impl Fn(&DVector<f64>) -> DVector<f64>> {
    enum Factor {
        Scalar(f64),
        Diag(DVector<f64>),
        // upper factor U = L^T of S = L L^T; x = U^{-1} z has covariance S^{-1}
        Upper(DMatrix<f64>),
    }
    let factor = match precision {
        Precision::Scalar(s) => Factor::Scalar(1.0 / s.sqrt()),
        Precision::Diag(d) => Factor::Diag(d.map(|x| 1.0 / x.sqrt())),
        Precision::Full(m) => Factor::Upper(spd_cholesky(m, "precision")?.l().transpose()),
    };
    Ok(move |z: &DVector<f64>| match &factor {
        Factor::Scalar(sd) => z * *sd,
        Factor::Diag(sd) => z.component_mul(sd),
        Factor::Upper(u) => u.solve_upper_triangular(z).expect("cholesky factor has positive diagonal"),
    })
}

/// Fisher matrix `grad^2 A` in flat natural coordinates, computed as the covariance
/// of the flat sufficient statistics under the Gaussian.
pub fn fisher(structure: Structure, g: &GaussianMoments) -> Result<DMatrix<f64>> {
    let p = g.dim();
    let cov = g.precision.covariance(p)?;
    let m = &g.mean;
    if let Structure::Iso(_) = structure {
        return Ok(cov);
    }
    // second-block coordinates as (a, b, scale)
    let pairs: Vec<(usize, usize, f64)> = match structure {
        Structure::Diag => (0..p).map(|a| (a, a, 1.0)).collect(),
        _ => {
            let mut v: Vec<(usize, usize, f64)> = (0..p).map(|a| (a, a, 1.0)).collect();
            for a in 0..p {
                for b in (a + 1)..p {
                    v.push((a, b, std::f64::consts::SQRT_2));
                }
            }
            v
        }
    };
    let n = p + pairs.len();
    let mut f = DMatrix::zeros(n, n);
    for i in 0..p {
        for j in 0..p {
            f[(i, j)] = cov[(i, j)];
        }
    }
    for (k, &(a, b, c)) in pairs.iter().enumerate() {
        for i in 0..p {
            let v = c * (cov[(i, a)] * m[b] + cov[(i, b)] * m[a]);
            f[(i, p + k)] = v;
            f[(p + k, i)] = v;
        }
        for (l, &(cc, d, c2)) in pairs.iter().enumerate() {
            let s = cov[(a, cc)] * cov[(b, d)]
                + cov[(a, d)] * cov[(b, cc)]
                + m[a] * m[cc] * cov[(b, d)]
                + m[a] * m[d] * cov[(b, cc)]
                + m[b] * m[cc] * cov[(a, d)]
                + m[b] * m[d] * cov[(a, cc)];
            f[(p + k, p + l)] = c * c2 * s;
        }
    }
    Ok(f)
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}
