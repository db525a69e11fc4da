//! Duality, Fisher, natural-gradient, entropy, KL and mixture checks.

use blrkit::estimators::{self, Curvature, EstimatorConfig, HessianSurrogate, Shape};
use blrkit::expfam::{
    bregman_dual, entropy_natgrad, fisher, log_pdf, responsibility, to_expectation, to_natural, ExpectationParams,
    FamilyKind, NaturalParams,
};
use blrkit::linalg::{log_sum_exp, rng_from_seed, spd_cholesky, sym_to_flat, Rng};
use blrkit::problems::{Objective, Quadratic};
use blrkit::{DMatrix, DVector, Result};
use rand::Rng as _;

use super::fd::{jacobian, random_spd, random_vec, rel_err};
use super::{Check, CheckFn};

pub fn checks() -> Vec<CheckFn> {
    vec![
        ("duality_roundtrip", duality_roundtrip),
        ("fisher_matches_fd_jacobian", fisher_matches_fd),
        ("natural_gradient_identity", || natural_gradient_identity(&delta_estimator)),
        ("entropy_natgrad_is_minus_lambda", entropy_natgrad_minus_lambda),
        ("bregman_equals_kl", bregman_equals_kl),
        ("mixture_responsibilities_and_density", mixture_consistency),
    ]
}

/// One random in-domain parameter per family kind: full (1-3 dims), diagonal,
/// Bernoulli and a two-component mixture.
fn random_params(rng: &mut Rng, kind: usize) -> Result<NaturalParams> {
    match kind {
        0 => {
            let p = rng.random_range(1..=3);
            NaturalParams::gauss_full(random_vec(rng, p, 2.0), random_spd(rng, p, 0.5))
        }
        1 => NaturalParams::gauss_diag(random_vec(rng, 3, 2.0), DVector::from_fn(3, |_, _| rng.random_range(0.2..5.0))),
        2 => NaturalParams::bernoulli(random_vec(rng, 3, 2.0)),
        _ => NaturalParams::mixture(
            vec![0.3, 0.7],
            vec![(random_vec(rng, 2, 2.0), random_spd(rng, 2, 0.5)), (random_vec(rng, 2, 2.0), random_spd(rng, 2, 0.5))],
        ),
    }
}

fn duality_roundtrip() -> Result<Check> {
    let mut rng = rng_from_seed(11, 0);
    let mut worst = 0.0f64;
    for kind in 0..4 {
        for _ in 0..100 {
            let lam = random_params(&mut rng, kind)?;
            let back = to_natural(&to_expectation(&lam)?)?;
            worst = worst.max((back.values() - lam.values()).amax());
        }
    }
    Ok(Check::at_most("", worst, 1e-8).with_note("100 draws per family, infinity norm"))
}

fn fisher_matches_fd() -> Result<Check> {
    let mut rng = rng_from_seed(12, 0);
    let mut worst = 0.0f64;
    for kind in 0..4 {
        for _ in 0..5 {
            let lam = random_params(&mut rng, kind)?;
            let fam = lam.family().clone();
            let j = jacobian(
                |v| Ok(to_expectation(&NaturalParams::new(fam.clone(), v.clone())?)?.values().clone()),
                lam.values(),
                1e-6,
            )?;
            let f = fisher(&lam)?;
            worst = worst.max((&f - &j).amax() / f.amax());
        }
    }
    Ok(Check::at_most("", worst, 1e-4).with_note("relative to the largest Fisher entry"))
}

/// `E_q[1/2 theta^T A theta - b^T theta]` in closed form.
pub fn expected_quadratic(lam: &NaturalParams, q: &Quadratic) -> Result<f64> {
    match lam.family() {
        FamilyKind::BernoulliPm1 { .. } => {
            // E[theta] = mu, E[theta_i theta_j] = mu_i mu_j off the diagonal and 1 on it
            let mu = to_expectation(lam)?.values().clone();
            let mut second = &mu * mu.transpose();
            second.fill_diagonal(1.0);
            Ok(0.5 * (&q.a * second).trace() - q.b.dot(&mu))
        }
        _ => {
            let view = lam.moments()?;
            let g = &view.components[0];
            let cov = g.precision.covariance(g.dim())?;
            Ok(0.5 * (&q.a * cov).trace() + q.value(&g.mean, None)?)
        }
    }
}

/// Returns `(E_q[grad f], E_q[hess f])` for a Gaussian candidate.
pub type GhEstimator = dyn Fn(&dyn Objective, &NaturalParams) -> Result<(DVector<f64>, Curvature)>;

/// The library's delta-method estimator (exact for quadratics).
pub fn delta_estimator(obj: &dyn Objective, lam: &NaturalParams) -> Result<(DVector<f64>, Curvature)> {
    let cfg = EstimatorConfig::delta(HessianSurrogate::Exact);
    let e = estimators::estimate(obj, lam, &cfg, None, Shape::Full, &mut rng_from_seed(0, 0))?;
    Ok((e.g, e.h))
}

/// For a quadratic `f`, `F(lambda)^-1 grad_lambda E_q[f]` (finite differences in
/// `lambda`) must equal `grad_mu E_q[f]` (finite differences in `mu`), and for
/// Gaussians also the pairs `(E[g] - E[H] m, E[H] / 2)` built from `est`.
pub fn natural_gradient_identity(est: &GhEstimator) -> Result<Check> {
    let mut rng = rng_from_seed(13, 0);
    let mut worst = 0.0f64;
    let cases: Vec<NaturalParams> = vec![
        NaturalParams::gauss_full(random_vec(&mut rng, 1, 1.0), random_spd(&mut rng, 1, 0.5))?,
        NaturalParams::gauss_full(random_vec(&mut rng, 2, 1.0), random_spd(&mut rng, 2, 0.5))?,
        NaturalParams::bernoulli(random_vec(&mut rng, 1, 0.8))?,
        NaturalParams::bernoulli(random_vec(&mut rng, 2, 0.8))?,
    ];
    for lam in cases {
        let p = lam.family().dim();
        let q = blrkit::problems::quadratic(random_spd(&mut rng, p, 1.0), random_vec(&mut rng, p, 1.0))?;
        let fam = lam.family().clone();
        let h = 1e-5;
        let by_lambda = fd_grad(|v| expected_quadratic(&NaturalParams::new(fam.clone(), v.clone())?, &q), lam.values(), h)?;
        let nat = spd_cholesky(&fisher(&lam)?, "Fisher matrix")?.solve(&by_lambda);
        let mu = to_expectation(&lam)?;
        let by_mu = fd_grad(
            |v| expected_quadratic(&to_natural(&ExpectationParams::new(fam.clone(), v.clone())?)?, &q),
            mu.values(),
            h,
        )?;
        worst = worst.max(rel_err(nat.as_slice(), by_mu.as_slice()));
        if lam.family().is_gaussian() {
            let (g, hm) = est(&q, &lam)?;
            let (a, b) = estimators::natgrad_pairs_from_gh(&g, &hm, &lam.mean()?);
            let flat: Vec<f64> = a.iter().chain(sym_to_flat(&b.to_matrix()).iter()).copied().collect();
            worst = worst.max(rel_err(&flat, by_mu.as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-3).with_note("1D/2D Gaussians and Bernoulli, quadratic f"))
}

fn fd_grad(f: impl Fn(&DVector<f64>) -> Result<f64>, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    super::fd::gradient(f, x, h)
}

fn entropy_natgrad_minus_lambda() -> Result<Check> {
    let mut rng = rng_from_seed(14, 0);
    let mut worst = 0.0f64;
    for kind in 0..3 {
        for _ in 0..50 {
            let lam = random_params(&mut rng, kind)?;
            worst = worst.max((entropy_natgrad(&lam)? + lam.values()).amax());
        }
    }
    Ok(Check::at_most("", worst, 0.0).with_note("exact equality"))
}

/// `KL(N(m1, S1^-1) || N(m2, S2^-1))` from the covariance form.
fn gaussian_kl(m1: &DVector<f64>, s1: &DMatrix<f64>, m2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let c1 = blrkit::linalg::spd_inverse(s1, "precision")?;
    let d = m2 - m1;
    let k = m1.len() as f64;
    Ok(0.5 * ((s2 * &c1).trace() + d.dot(&(s2 * &d)) - k + (s1.determinant() / s2.determinant()).ln()))
}

fn bregman_equals_kl() -> Result<Check> {
    let mut rng = rng_from_seed(15, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(1..=3);
        let (m1, s1) = (random_vec(&mut rng, p, 1.5), random_spd(&mut rng, p, 0.5));
        let (m2, s2) = (random_vec(&mut rng, p, 1.5), random_spd(&mut rng, p, 0.5));
        let a = NaturalParams::gauss_full(m1.clone(), s1.clone())?;
        let b = NaturalParams::gauss_full(m2.clone(), s2.clone())?;
        let d = bregman_dual(&to_expectation(&a)?, &to_expectation(&b)?)?;
        let kl = gaussian_kl(&m1, &s1, &m2, &s2)?;
        worst = worst.max((d - kl).abs() / (1.0 + kl.abs()));
    }
    Ok(Check::at_most("", worst, 1e-6).with_note("closed-form Gaussian KL oracle"))
}

fn mixture_consistency() -> Result<Check> {
    let mut rng = rng_from_seed(16, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let lam = random_params(&mut rng, 3)?;
        let theta = random_vec(&mut rng, 2, 2.0);
        let r = responsibility(&lam, &theta)?;
        worst = worst.max((r.sum() - 1.0).abs());
        let view = lam.moments()?;
        let terms = view
            .weights
            .iter()
            .zip(&view.components)
            .map(|(w, g)| {
                let single = NaturalParams::gauss_full(g.mean.clone(), g.precision.to_matrix(g.dim()))?;
                Ok(w.ln() + log_pdf(&single, &theta)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        let expect = log_sum_exp(&terms);
        worst = worst.max((log_pdf(&lam, &theta)? - expect).abs() / (1.0 + expect.abs()));
    }
    Ok(Check::at_most("", worst, 1e-12).with_note("sum of responsibilities and log-sum of component densities"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_quadratic_matches_monte_carlo() {
        let q = blrkit::problems::quadratic(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), DVector::from_vec(vec![1.0, -1.0]))
            .unwrap();
        let mut rng = rng_from_seed(1, 0);
        for lam in [
            NaturalParams::gauss_full(DVector::from_vec(vec![0.3, -0.4]), DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]))
                .unwrap(),
            NaturalParams::bernoulli(DVector::from_vec(vec![0.4, -1.1])).unwrap(),
        ] {
            let n = 200_000;
            let draws = blrkit::expfam::sample(&lam, &mut rng, n).unwrap();
            let mc = draws.iter().map(|t| q.value(t, None).unwrap()).sum::<f64>() / n as f64;
            assert!((mc - expected_quadratic(&lam, &q).unwrap()).abs() < 0.02, "{}", lam.family().name());
        }
    }

    #[test]
    fn sign_error_in_the_mean_gradient_is_caught() {
        let flipped = |obj: &dyn Objective, lam: &NaturalParams| {
            let (g, h) = delta_estimator(obj, lam)?;
            Ok((-g, h))
        };
        assert!(natural_gradient_identity(&delta_estimator).unwrap().passed);
        assert!(!natural_gradient_identity(&flipped).unwrap().passed);
    }
}
