//! Each preset against the classical algorithm it reduces to, plus the
//! VOGN and BayesBiNN behaviour checks used by the acceptance suite.

use blrkit::blr::Schedule;
use blrkit::estimators::{concrete_relax, grad_magnitude_diag, Concrete, EstimatorConfig, EstimatorMode, HessianSurrogate};
use blrkit::expfam::{responsibility, NaturalParams};
use blrkit::linalg::{rng_from_seed, spd_inverse};
use blrkit::optimizers::{registry, run, sign, DiagNewton, OptState, OptimizerSpec, RmspropRef, MINIBATCH_STREAM};
use blrkit::problems::{
    asymmetric_1d, binary_mlp_objective, double_well, logistic_objective, make_dataset, quadratic, ridge_objective, sample_minibatch,
    DatasetKind, Objective,
};
use blrkit::quadrature::GaussHermite;
use blrkit::{DMatrix, DVector, Error, Result};

use super::fd::rel_err;
use super::{Check, CheckFn};
use crate::problem::random_quadratic;

pub fn checks() -> Vec<CheckFn> {
    vec![
        ("newton_matches_classical_newton", || newton_equivalence(20, 10)),
        ("gd_matches_gradient_descent", gd_equivalence),
        ("rmsprop_scale_equals_diag_newton_scale", || rmsprop_twin_run(500).map(|c| c[0].clone())),
        ("rmsprop_theta_differs_from_diag_newton_mean", || rmsprop_twin_run(500).map(|c| c[1].clone())),
        ("ogn_ridge_scale_is_gram_diagonal", ogn_ridge_scale),
        ("bayesbinn_low_temperature_is_ste_sign", || bayesbinn_ste_signs(3, 50)),
        ("dropout_keep_one_is_newton_bitwise", || dropout_reduction(200)),
        ("single_component_mixture_is_newton", mixture_single_component),
    ]
}

fn preset(name: &str) -> Result<OptimizerSpec> {
    let mut s = OptimizerSpec::preset(name)?;
    s.extras.tol = 0.0;
    Ok(s)
}

/// BLR with a full Gaussian, the delta method and `rho = 1` against
/// `theta' = theta - A^-1 grad f(theta)` on random quadratics of size 1..=max_p.
/// Also requires every run to reach the minimizer after the first step.
pub fn newton_equivalence(instances: u64, max_p: usize) -> Result<Check> {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let p = 1 + (k as usize % max_p);
        let q = random_quadratic(p, 100 + k)?;
        let a_inv = spd_inverse(&q.a, "A")?;
        let mut spec = preset("newton")?;
        spec.schedule = Schedule::constant(1.0);
        spec.extras.init_scale = 3.0;
        let mut opt = registry().build(&spec, &q, k)?;
        let mut theta = opt.eval_point();
        for _ in 0..3 {
            opt.step(&q, None)?;
            theta = &theta - &a_inv * q.gradient(&theta, None)?;
            worst = worst.max(rel_err(opt.eval_point().as_slice(), theta.as_slice()));
            worst = worst.max(rel_err(opt.eval_point().as_slice(), q.minimizer().as_slice()));
        }
        let OptState::Gaussian { precision, .. } = opt.state() else { return Err(Error::Unsupported("newton state".into())) };
        worst = worst.max(rel_err(precision.as_slice(), q.a.as_slice()));
    }
    Ok(Check::at_most("", worst, 1e-10).with_note(format!("{instances} quadratics, P <= {max_p}, 3 iterates each")))
}

/// Isotropic candidate with fixed precision `c` against `m' = m - (rho / c) grad f(m)`.
fn gd_equivalence() -> Result<Check> {
    let mut worst = 0.0f64;
    for k in 0..10 {
        let q = random_quadratic(1 + k % 6, 200 + k as u64)?;
        let mut spec = preset("gd")?;
        spec.extras.init_precision = 4.0;
        spec.extras.init_scale = 1.0;
        let mut opt = registry().build(&spec, &q, k as u64)?;
        let mut m = opt.eval_point();
        for _ in 0..30 {
            opt.step(&q, None)?;
            m = &m - q.gradient(&m, None)? * (0.1 / 4.0);
            worst = worst.max(rel_err(opt.eval_point().as_slice(), m.as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-12).with_note("10 quadratics, 30 steps"))
}

/// Reference RMSprop and diag-newton with the squared-gradient surrogate fed the
/// same minibatch gradients (taken at the RMSprop iterate) for `steps` steps on
/// 2D logistic regression. Returns `max |v - s|` and `max |theta - m|`.
pub fn rmsprop_twin_run(steps: usize) -> Result<[Check; 2]> {
    let data = make_dataset(DatasetKind::Logreg, 60, 2, 4)?;
    let obj = logistic_objective(&data, 1.0)?;
    let (alpha, beta) = (0.01, 0.1);
    let mut r = RmspropRef::new(DVector::zeros(2), DVector::from_element(2, 1.0), alpha, beta, 1e-8)?;
    let mut spec = preset("diag-newton")?;
    spec.estimator.hessian = HessianSurrogate::GradMagnitude;
    spec.extras.alpha = Some(alpha);
    spec.extras.beta = Some(beta);
    let mut d = DiagNewton::new("diag-newton", DVector::zeros(2), DVector::from_element(2, 1.0), spec, 0)?;
    let mut rng = rng_from_seed(4, MINIBATCH_STREAM);
    let (mut dev_scale, mut dev_theta) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let b = sample_minibatch(&mut rng, obj.len(), 10)?;
        let g = obj.gradient(&r.theta, Some(&b))?;
        r.apply(&g)?;
        d.apply(&g, &grad_magnitude_diag(&g))?;
        dev_scale = dev_scale.max((&r.v - &d.s).amax());
        dev_theta = dev_theta.max((&r.theta - &d.m).amax());
    }
    let note = format!("{steps} steps, minibatch 10 of 60");
    Ok([
        Check::at_most("", dev_scale, 1e-12).with_note(note.clone()),
        Check::at_least("", dev_theta, 1e-6).with_note(format!("{note}; square root and c change the mean step")),
    ])
}

/// OGN on ridge regression: the scale converges to `diag(X^T X + delta I)`.
pub fn ogn_ridge_scale() -> Result<Check> {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let data = make_dataset(DatasetKind::Linreg, 40, 4, seed)?;
        let delta = 0.5;
        let target = (data.x.transpose() * &data.x).diagonal().add_scalar(delta);
        let obj = ridge_objective(data.x, data.y, delta)?;
        let mut spec = preset("ogn")?;
        spec.schedule = Schedule::constant(0.2);
        let trace = run(&spec, &obj, 300, seed)?;
        let OptState::Diagonal { scale, .. } = trace.final_state else { return Err(Error::Unsupported("ogn state".into())) };
        worst = worst.max(rel_err(scale.as_slice(), target.as_slice()));
    }
    Ok(Check::at_most("", worst, 1e-6).with_note("5 datasets, 300 steps, relative"))
}

/// VOGN with common random numbers on 2D logistic regression; returns the
/// first residual at or below `tol` (or the last one) and the step it occurred.
pub fn vogn_logistic_residual(max_steps: usize, tol: f64) -> Result<(Check, usize)> {
    let data = make_dataset(DatasetKind::Logreg, 100, 2, 7)?;
    let obj = logistic_objective(&data, 1.0)?;
    let mut spec = OptimizerSpec::preset("vogn")?;
    spec.estimator.common_noise = Some(7);
    spec.estimator.mode = EstimatorMode::WeightPerturb { samples: 32 };
    spec.extras.tol = tol;
    spec.schedule = Schedule::constant(0.1);
    let trace = run(&spec, &obj, max_steps, 7)?;
    let last = trace.records.last().ok_or(Error::EmptyBatch)?;
    Ok((
        Check::at_most("", last.residual, tol).with_note(format!("stopped at step {} ({})", last.step, trace.status.as_str())),
        last.step as usize,
    ))
}

/// Minimizer of the asymmetric loss: the root of its slope right of the wall.
fn asymmetric_erm() -> f64 {
    let f = asymmetric_1d();
    let (mut lo, mut hi) = (1.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f.slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fixed point of the Gaussian rule on the asymmetric loss with Gauss-Hermite
/// expectations: `E[l'] = 0` and `s = E[l'']`. Returns `(m, s)`.
pub fn asymmetric_quadrature_oracle() -> (f64, f64) {
    let f = asymmetric_1d();
    let gh = GaussHermite::new(100);
    let (mut m, mut s) = (asymmetric_erm(), 10.0);
    for _ in 0..5000 {
        let g = gh.expect(m, 1.0 / s, |t| f.slope(t));
        let h = gh.expect(m, 1.0 / s, |t| f.curvature(t));
        s = 0.8 * s + 0.2 * h;
        m -= 0.2 * g / s;
    }
    (m, s)
}

/// VOGN (exact curvature, common random numbers) on the asymmetric loss.
/// Measures the smaller of the VOGN and quadrature-oracle shifts of the mean
/// away from the minimizer; both must point away from the wall.
pub fn vogn_asymmetric_shift() -> Result<Check> {
    let f = asymmetric_1d();
    let erm = asymmetric_erm();
    let (oracle_m, _) = asymmetric_quadrature_oracle();
    let mut spec = OptimizerSpec::preset("vogn")?;
    spec.estimator = EstimatorConfig {
        mode: EstimatorMode::WeightPerturb { samples: 4000 },
        hessian: HessianSurrogate::Exact,
        common_noise: Some(11),
        ..EstimatorConfig::default()
    };
    spec.extras.init_mean = Some(vec![erm]);
    spec.extras.init_precision = 10.0;
    spec.extras.tol = 1e-9;
    spec.schedule = Schedule::constant(0.2);
    let trace = run(&spec, &f, 2000, 11)?;
    let OptState::Diagonal { mean, .. } = trace.final_state else { return Err(Error::Unsupported("vogn state".into())) };
    let note = format!("minimizer {erm:.4}, quadrature mean {oracle_m:.4}, vogn mean {:.4}", mean[0]);
    Ok(Check::at_least("", (mean[0] - erm).min(oracle_m - erm), 1e-3).with_note(note))
}

/// With `tau` tiny and the relaxation noise off, the point where BayesBiNN
/// evaluates gradients, `tanh(lambda / tau)`, equals `sign(lambda)` (the STE
/// forward weights) wherever `|lambda| >= 1e-3`. Measured over all steps of
/// `seeds` XOR runs.
pub fn bayesbinn_ste_signs(seeds: u64, steps: usize) -> Result<Check> {
    let tau = 1e-6;
    let data = make_dataset(DatasetKind::Xor, 40, 2, 2)?;
    let obj = binary_mlp_objective(&[2, 4, 1], &data)?;
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for seed in 0..seeds {
        let mut spec = preset("bayesbinn")?;
        spec.estimator.concrete = Concrete { tau, noise: false };
        spec.extras.init_scale = 1.0;
        let mut opt = registry().build(&spec, &obj, seed)?;
        for _ in 0..steps {
            opt.step(&obj, None)?;
            let OptState::Bernoulli { lambda } = opt.state() else { return Err(Error::Unsupported("bayesbinn state".into())) };
            let (theta, _) = concrete_relax(&lambda, None, tau)?;
            let ste = sign(&lambda);
            for j in 0..lambda.len() {
                if lambda[j].abs() >= 1e-3 {
                    worst = worst.max((theta[j] - ste[j]).abs());
                    compared += 1;
                }
            }
        }
    }
    Ok(Check::at_most("", worst, 1e-6).with_note(format!("tau = 1e-6, {compared} weights compared")))
}

/// BayesBiNN with `tau = 1` and relaxation noise on, trained on the XOR set
/// for up to `steps` steps. For each seed returns the first step at which the
/// training accuracy of `sign(lambda)` reaches `target` (if it does) and the
/// accuracy after the last step.
pub fn bayesbinn_xor_accuracy(seeds: u64, steps: usize, target: f64) -> Result<Vec<(Option<usize>, f64)>> {
    let data = make_dataset(DatasetKind::Xor, 100, 2, 1)?;
    let obj = binary_mlp_objective(&[2, 8, 1], &data)?;
    (0..seeds)
        .map(|seed| {
            let mut spec = preset("bayesbinn")?;
            spec.estimator.concrete = Concrete { tau: 1.0, noise: true };
            spec.extras.init_scale = 1.0;
            spec.extras.minibatch = Some(20);
            spec.schedule = Schedule::constant(0.01);
            let mut opt = registry().build(&spec, &obj, seed)?;
            let mut batches = rng_from_seed(seed, MINIBATCH_STREAM);
            let mut reached = None;
            for t in 1..=steps {
                let b = sample_minibatch(&mut batches, obj.len(), 20)?;
                opt.step(&obj, Some(&b))?;
                if reached.is_none() && obj.loss.accuracy(&opt.eval_point()) >= target {
                    reached = Some(t);
                }
            }
            Ok((reached, obj.loss.accuracy(&opt.eval_point())))
        })
        .collect()
}

/// K = 2 mixture-newton on the double-well at scale 100 from the slightly
/// asymmetric start `(-0.5 + 0.01 seed, 0.45)`. Returns the largest distance of
/// the sorted means from `-1, +1`, the smallest responsibility of a component at
/// its own mean, and whether the components merged.
pub fn mixture_double_well(seed: u64, steps: usize) -> Result<(f64, f64, bool)> {
    let obj = double_well(100.0)?;
    let mut spec = preset("mixture-newton")?;
    spec.extras.init_mean = Some(vec![-0.5 + 0.01 * seed as f64, 0.45]);
    let trace = run(&spec, &obj, steps, seed)?;
    let OptState::Mixture { weights, components } = trace.final_state else {
        return Err(Error::Unsupported("mixture state".into()));
    };
    let mut means: Vec<f64> = components.iter().map(|c| c.0[0]).collect();
    means.sort_by(f64::total_cmp);
    let err = (means[0] + 1.0).abs().max((means[1] - 1.0).abs());
    let lam = NaturalParams::mixture(weights, components.clone())?;
    let mut min_resp = f64::INFINITY;
    for (k, c) in components.iter().enumerate() {
        min_resp = min_resp.min(responsibility(&lam, &c.0)?[k]);
    }
    Ok((err, min_resp, trace.collapsed))
}

/// dropout-newton with keep probability 1 against newton on the same seed:
/// the number of trace values (and final states) that differ in any bit.
pub fn dropout_reduction(steps: usize) -> Result<Check> {
    let data = make_dataset(DatasetKind::Logreg, 60, 3, 2)?;
    let obj = logistic_objective(&data, 1.0)?;
    let mut a = preset("newton")?;
    a.extras.minibatch = Some(12);
    a.schedule = Schedule::constant(0.3);
    let mut b = a.clone();
    b.name = "dropout-newton".into();
    b.extras.pi1 = 1.0;
    let ta = run(&a, &obj, steps, 8)?;
    let tb = run(&b, &obj, steps, 8)?;
    let mut diffs = ta.records.len().abs_diff(tb.records.len());
    for (x, y) in ta.records.iter().zip(&tb.records) {
        for (u, v) in [(x.loss, y.loss), (x.lambda_norm, y.lambda_norm), (x.residual, y.residual)] {
            diffs += usize::from(u.to_bits() != v.to_bits());
        }
    }
    match (&ta.final_state, &tb.final_state) {
        (OptState::Gaussian { mean, precision }, OptState::Blocks { mean: bm, blocks }) => {
            diffs += usize::from(mean != bm || blocks.len() != 1 || &blocks[0].1 != precision);
        }
        _ => diffs += 1,
    }
    Ok(Check::at_most("", diffs as f64, 0.0).with_note(format!("{steps} steps, count of differing values")))
}

fn mixture_single_component() -> Result<Check> {
    let q = quadratic(DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]), DVector::from_vec(vec![1.0, -2.0]))?;
    let mut a = preset("newton")?;
    a.extras.init_mean = Some(vec![0.5, 0.5]);
    let mut b = a.clone();
    b.name = "mixture-newton".into();
    b.extras.components = 1;
    b.estimator = EstimatorConfig::default();
    let ta = run(&a, &q, 10, 0)?;
    let tb = run(&b, &q, 10, 0)?;
    let (OptState::Gaussian { mean, precision }, OptState::Mixture { components, .. }) = (&ta.final_state, &tb.final_state) else {
        return Err(Error::Unsupported("unexpected states".into()));
    };
    let dev = rel_err(mean.as_slice(), components[0].0.as_slice()).max(rel_err(precision.as_slice(), components[0].1.as_slice()));
    Ok(Check::at_most("", dev, 1e-12).with_note("delta method, 10 steps"))
}
