//! The rule's update: mirror-descent and natural-gradient forms, one-step
//! exactness on conjugate problems, domain safety and the decay form.

use blrkit::blr::{blr_step, blr_step_simplified, fixed_point_residual, mirror_step, BlrState, Schedule};
use blrkit::conjugate::ridge_solve;
use blrkit::estimators::{EstimatorConfig, HessianSurrogate};
use blrkit::expfam::{bregman_dual, fisher, to_expectation, to_natural, ExpectationParams, NaturalParams};
use blrkit::linalg::{rng_from_seed, spd_cholesky, Rng};
use blrkit::problems::{double_well, logistic_objective, make_dataset, ridge_objective, DatasetKind, Objective};
use blrkit::{DMatrix, DVector, Result};
use rand::Rng as _;

use super::fd::{gradient, random_spd, random_vec, rel_err};
use super::{Check, CheckFn};

pub fn checks() -> Vec<CheckFn> {
    vec![
        ("mirror_step_equals_natural_gradient_step", mirror_equals_natural),
        ("mirror_step_is_proximal_stationary", mirror_stationary),
        ("ridge_one_step_exact", ridge_one_step),
        ("residual_zero_at_exact_posterior", residual_at_posterior),
        ("updates_stay_in_domain", domain_preserved),
        ("decay_form_is_geometric", decay_geometric),
    ]
}

fn random_candidate(rng: &mut Rng, kind: usize) -> Result<NaturalParams> {
    match kind {
        0 => NaturalParams::gauss_full(random_vec(rng, 3, 1.0), random_spd(rng, 3, 0.5)),
        1 => NaturalParams::gauss_diag(random_vec(rng, 3, 1.0), DVector::from_fn(3, |_, _| rng.random_range(0.5..3.0))),
        2 => NaturalParams::gauss_iso(random_vec(rng, 3, 1.0), 2.0),
        _ => NaturalParams::bernoulli(random_vec(rng, 3, 1.0)),
    }
}

/// The mirror step in `mu` against `lambda - rho F^-1 grad_lambda <g, mu(lambda)>`,
/// where `grad_lambda <g, mu> = F g` is formed explicitly and solved back.
fn mirror_equals_natural() -> Result<Check> {
    let mut rng = rng_from_seed(31, 0);
    let mut worst = 0.0f64;
    for kind in 0..4 {
        for _ in 0..25 {
            let lam = random_candidate(&mut rng, kind)?;
            let g = random_vec(&mut rng, lam.values().len(), 0.3);
            let rho = 0.1;
            let mirror = to_natural(&mirror_step(&to_expectation(&lam)?, &g, rho)?)?;
            let f = fisher(&lam)?;
            let nat = spd_cholesky(&f, "Fisher matrix")?.solve(&(&f * &g));
            let natural = lam.values() - nat * rho;
            worst = worst.max(rel_err(mirror.values().as_slice(), natural.as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-12).with_note("full, diagonal, isotropic and Bernoulli families"))
}

/// `g + grad_mu D(mu || mu_t) / rho` vanishes at the mirror step's output.
fn mirror_stationary() -> Result<Check> {
    let mut rng = rng_from_seed(32, 0);
    let mut worst = 0.0f64;
    for kind in [0, 1, 3] {
        for _ in 0..10 {
            let lam = random_candidate(&mut rng, kind)?;
            let g = random_vec(&mut rng, lam.values().len(), 0.3);
            let rho = 0.2;
            let mu_t = to_expectation(&lam)?;
            let next = mirror_step(&mu_t, &g, rho)?;
            let fam = lam.family().clone();
            let d = gradient(|v| bregman_dual(&ExpectationParams::new(fam.clone(), v.clone())?, &mu_t), next.values(), 1e-6)?;
            let stat = &g + d / rho;
            worst = worst.max(rel_err(stat.as_slice(), &vec![0.0; stat.len()]));
        }
    }
    Ok(Check::at_most("", worst, 1e-5).with_note("finite differences of the Bregman term"))
}

fn ridge_instance(seed: u64) -> Result<(Box<dyn Objective>, DMatrix<f64>, DVector<f64>)> {
    let data = make_dataset(DatasetKind::Linreg, 20, 5, seed)?;
    let delta = 0.5;
    let (m, s) = ridge_solve(&data.x, &data.y, delta)?;
    Ok((Box::new(ridge_objective(data.x, data.y, delta)?), s, m))
}

/// With the delta method, exact Hessians and `rho = 1`, one step from any
/// full Gaussian lands on the closed-form ridge posterior.
fn ridge_one_step() -> Result<Check> {
    let mut rng = rng_from_seed(33, 0);
    let cfg = EstimatorConfig::delta(HessianSurrogate::Exact);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let (obj, s, m) = ridge_instance(seed)?;
        let exact = NaturalParams::gauss_full(m, s)?;
        for _ in 0..5 {
            let start = NaturalParams::gauss_full(random_vec(&mut rng, 5, 3.0), random_spd(&mut rng, 5, 0.1))?;
            let next = blr_step(&BlrState::new(start, 0), obj.as_ref(), &cfg, &Schedule::constant(1.0), None)?;
            worst = worst.max(rel_err(next.lambda.values().as_slice(), exact.values().as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-8).with_note("10 datasets, 5 random starts each"))
}

fn residual_at_posterior() -> Result<Check> {
    let cfg = EstimatorConfig::delta(HessianSurrogate::Exact);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let (obj, s, m) = ridge_instance(seed)?;
        let scale = s.amax();
        let r = fixed_point_residual(&NaturalParams::gauss_full(m, s)?, obj.as_ref(), &cfg, None, &mut rng_from_seed(0, 0))?;
        worst = worst.max(r / scale);
    }
    Ok(Check::at_most("", worst, 1e-10).with_note("relative to the largest precision entry"))
}

/// Aggressive steps on non-convex and sampled problems; every accepted
/// candidate must have a positive definite precision.
fn domain_preserved() -> Result<Check> {
    let well = double_well(1.0)?;
    let data = make_dataset(DatasetKind::Logreg, 40, 2, 5)?;
    let logistic = logistic_objective(&data, 0.1)?;
    let objs: [&dyn Objective; 2] = [&well, &logistic];
    let mut rng = rng_from_seed(34, 0);
    let mut bad = 0usize;
    for obj in objs {
        let p = obj.dim();
        for cfg in [EstimatorConfig::delta(HessianSurrogate::Exact), EstimatorConfig::monte_carlo(4, HessianSurrogate::Exact)] {
            for seed in 0..10 {
                let start = NaturalParams::gauss_full(random_vec(&mut rng, p, 0.5), random_spd(&mut rng, p, 0.5))?;
                let mut st = BlrState::new(start, seed);
                for _ in 0..50 {
                    st = blr_step(&st, obj, &cfg, &Schedule::constant(1.5), None)?;
                    let view = st.lambda.moments()?;
                    let g = &view.components[0];
                    if spd_cholesky(&g.precision.to_matrix(g.dim()), "precision").is_err() {
                        bad += 1;
                    }
                }
            }
        }
    }
    Ok(Check::at_most("", bad as f64, 0.0).with_note("rho = 1.5, 2000 steps, count of non-PD precisions"))
}

/// With a frozen gradient `g0`, `lambda_t + g0` shrinks by exactly `(1 - rho)` per step.
fn decay_geometric() -> Result<Check> {
    let mut rng = rng_from_seed(35, 0);
    let mut worst = 0.0f64;
    for rho in [0.05, 0.2, 0.5] {
        let start = random_vec(&mut rng, 4, 2.0);
        let g0 = random_vec(&mut rng, 4, 1.0);
        let mut st = BlrState::new(NaturalParams::bernoulli(start.clone())?, 0);
        let e0 = &start + &g0;
        for t in 1..=40 {
            st = blr_step_simplified(&st, &g0, &Schedule::constant(rho))?;
            let expect = &e0 * (1.0 - rho).powi(t);
            worst = worst.max(rel_err((st.lambda.values() + &g0).as_slice(), expect.as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-10).with_note("Bernoulli candidate, 40 steps"))
}
