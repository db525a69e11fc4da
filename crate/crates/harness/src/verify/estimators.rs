//! Unbiasedness of the sampling estimators, delta-vs-sampling on quadratics,
//! Gauss-Newton positivity, the Concrete limit and the natural-gradient pairs.

use blrkit::estimators::{
    concrete_relax, delta_estimate, derivatives_at, mc_estimate, natgrad_pairs_from_gh, Curvature, EstimatorConfig,
    HessianSurrogate, Shape,
};
use blrkit::expfam::NaturalParams;
use blrkit::linalg::rng_from_seed;
use blrkit::problems::{cubic_1d, double_well, logistic_objective, make_dataset, mlp_objective, ridge_objective, DatasetKind, Objective};
use blrkit::quadrature::GaussHermite;
use blrkit::{DMatrix, DVector, Result};
use rand::Rng as _;

use super::fd::{gradient, random_spd, random_vec};
use super::{Check, CheckFn};

pub fn checks() -> Vec<CheckFn> {
    vec![
        ("mean_gradient_unbiased", || sampling_unbiased(50, 10_000).map(|c| c[0].clone())),
        ("mean_hessian_unbiased", || sampling_unbiased(50, 10_000).map(|c| c[1].clone())),
        ("delta_equals_sampling_hessian_on_quadratic", delta_equals_sampling_on_quadratic),
        ("gauss_newton_at_least_regularizer", gauss_newton_nonnegative),
        ("concrete_low_temperature_is_sign", concrete_limit),
        ("natgrad_pairs_match_quadrature_fd", natgrad_pairs_quadrature),
    ]
}

/// Sampled `E_q[grad l]` and `E_q[hess l]` on the cubic loss under `N(0.4, 0.6^2)`:
/// `runs` independent estimates of `n` draws each, compared with Gauss-Hermite
/// values. Measures `|mean - exact| / stderr` for the gradient and the Hessian.
pub fn sampling_unbiased(runs: usize, n: usize) -> Result<[Check; 2]> {
    let obj = cubic_1d();
    let (m, sd) = (0.4, 0.6);
    let lam = NaturalParams::gauss_full(DVector::from_element(1, m), DMatrix::from_element(1, 1, 1.0 / (sd * sd)))?;
    let gh = GaussHermite::new(20);
    let exact_g = gh.expect(m, sd * sd, |t| obj.slope(t));
    let exact_h = gh.expect(m, sd * sd, |t| obj.curvature(t));
    let cfg = EstimatorConfig::monte_carlo(n, HessianSurrogate::Exact);
    let mut gs = Vec::with_capacity(runs);
    let mut hs = Vec::with_capacity(runs);
    for seed in 0..runs as u64 {
        let e = mc_estimate(&obj, &lam, &cfg, None, Shape::Full, &mut rng_from_seed(seed, 7))?;
        gs.push(e.g[0]);
        hs.push(e.h.to_matrix()[(0, 0)]);
    }
    let z = |xs: &[f64], exact: f64| {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (mean - exact).abs() / (var / k).sqrt()
    };
    let note = format!("{runs} runs of {n} draws, cubic loss, standard errors");
    Ok([Check::at_most("", z(&gs, exact_g), 5.0).with_note(note.clone()), Check::at_most("", z(&hs, exact_h), 5.0).with_note(note)])
}

fn delta_equals_sampling_on_quadratic() -> Result<Check> {
    let mut rng = rng_from_seed(21, 0);
    let mut worst = 0.0f64;
    for p in 1..=5 {
        let q = blrkit::problems::quadratic(random_spd(&mut rng, p, 1.0), random_vec(&mut rng, p, 1.0))?;
        let lam = NaturalParams::gauss_full(random_vec(&mut rng, p, 1.0), random_spd(&mut rng, p, 0.5))?;
        let d = delta_estimate(&q, &lam.mean()?, None, HessianSurrogate::Exact, Shape::Full)?;
        let cfg = EstimatorConfig::monte_carlo(9, HessianSurrogate::Exact);
        let s = mc_estimate(&q, &lam, &cfg, None, Shape::Full, &mut rng)?;
        worst = worst.max((d.h.to_matrix() - s.h.to_matrix()).amax() / q.a.amax());
    }
    Ok(Check::at_most("", worst, 1e-12).with_note("relative, constant Hessian"))
}

fn gauss_newton_nonnegative() -> Result<Check> {
    let mut rng = rng_from_seed(22, 0);
    let lin = make_dataset(DatasetKind::Linreg, 30, 3, 1)?;
    let log = make_dataset(DatasetKind::Logreg, 30, 3, 2)?;
    let objs: Vec<Box<dyn Objective>> = vec![
        Box::new(ridge_objective(lin.x.clone(), lin.y.clone(), 0.5)?),
        Box::new(logistic_objective(&log, 0.5)?),
        Box::new(mlp_objective(&[3, 4, 1], &lin, 0.5)?),
    ];
    let mut worst = f64::NEG_INFINITY;
    for obj in &objs {
        let reg = obj.regularizer_hessian_diag();
        for _ in 0..5 {
            let theta = random_vec(&mut rng, obj.dim(), 1.0);
            let batch: Vec<usize> = (0..obj.len()).filter(|_| rng.random_bool(0.5)).collect();
            let batch = if batch.is_empty() { vec![0] } else { batch };
            let (_, h) = derivatives_at(obj.as_ref(), &theta, Some(&batch), HessianSurrogate::GaussNewton, Shape::Diag)?;
            worst = worst.max((&reg - h.diagonal()).max());
        }
    }
    Ok(Check::at_most("", worst, 0.0).with_note("max of reg - h over coordinates"))
}

fn concrete_limit() -> Result<Check> {
    let mut rng = rng_from_seed(23, 0);
    let mut worst = 0.0f64;
    for tau in [1e-4, 1e-6, 1e-8] {
        let lam = DVector::from_fn(200, |_, _| {
            let mag = 10f64.powf(rng.random_range(-3.0..1.0));
            if rng.random_bool(0.5) { mag } else { -mag }
        });
        let (theta, _) = concrete_relax(&lam, None, tau)?;
        for (t, l) in theta.iter().zip(lam.iter()) {
            worst = worst.max((t - l.signum()).abs());
        }
    }
    Ok(Check::at_most("", worst, 1e-6).with_note("|lambda| >= 1e-3, tau <= 1e-4, noise off"))
}

/// In 1D, `grad_mu E_q[l]` by finite differences of the Gauss-Hermite value in
/// `mu = (m, m^2 + v)` against `natgrad_pairs_from_gh` applied to the
/// Gauss-Hermite `E[l']` and `E[l'']`.
fn natgrad_pairs_quadrature() -> Result<Check> {
    let data = make_dataset(DatasetKind::Logreg, 6, 1, 3)?;
    let logistic = logistic_objective(&data, 0.2)?;
    let well = double_well(1.0)?;
    let objs: [&dyn Objective; 2] = [&logistic, &well];
    let gh = GaussHermite::new(80);
    let mut worst = 0.0f64;
    for obj in objs {
        let f = |t: f64, k: usize| -> f64 {
            let x = DVector::from_element(1, t);
            match k {
                0 => obj.value(&x, None).expect("1D objective"),
                1 => obj.gradient(&x, None).expect("1D objective")[0],
                _ => obj.hessian(&x, None).expect("1D objective")[(0, 0)],
            }
        };
        for (m, v) in [(0.3, 0.25), (-0.8, 0.5), (1.2, 0.1)] {
            let value = |mu: &DVector<f64>| Ok(gh.expect(mu[0], mu[1] - mu[0] * mu[0], |t| f(t, 0)));
            let fd = gradient(value, &DVector::from_vec(vec![m, m * m + v]), 1e-5)?;
            let g = DVector::from_element(1, gh.expect(m, v, |t| f(t, 1)));
            let h = Curvature::Full(DMatrix::from_element(1, 1, gh.expect(m, v, |t| f(t, 2))));
            let (a, b) = natgrad_pairs_from_gh(&g, &h, &DVector::from_element(1, m));
            let pair = [a[0], b.to_matrix()[(0, 0)]];
            worst = worst.max(super::fd::rel_err(&pair, fd.as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-4).with_note("logistic and double-well losses"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_checks_pass_at_small_sizes() {
        let [g, h] = sampling_unbiased(20, 2000).unwrap();
        assert!(g.passed && h.passed);
        assert!(g.measured.is_finite() && h.measured.is_finite());
    }
}
