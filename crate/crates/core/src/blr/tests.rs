use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::estimators::HessianSurrogate;
use crate::expfam::{to_expectation, to_natural};
use crate::linalg::{flat_to_sym, sym_flat_len};
use crate::problems::{make_dataset, ridge_objective, DataObjective, DatasetKind, RidgeLoss};

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn delta_exact() -> EstimatorConfig {
    EstimatorConfig::delta(HessianSurrogate::Exact)
}

fn ridge(seed: u64) -> (DataObjective<RidgeLoss>, DMatrix<f64>, DVector<f64>) {
    let data = make_dataset(DatasetKind::Linreg, 20, 5, seed).unwrap();
    let delta = 0.5;
    let prec = data.x.transpose() * &data.x + DMatrix::identity(5, 5) * delta;
    let xty = data.x.transpose() * &data.y;
    (ridge_objective(data.x, data.y, delta).unwrap(), prec, xty)
}

/// Objective with a constant gradient `g` and zero Hessian.
struct Linear(DVector<f64>);

impl Objective for Linear {
    fn name(&self) -> &str {
        "linear"
    }
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn value(&self, t: &DVector<f64>, _: Batch) -> Result<f64> {
        Ok(self.0.dot(t))
    }
    fn gradient(&self, _: &DVector<f64>, _: Batch) -> Result<DVector<f64>> {
        Ok(self.0.clone())
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, _: &DVector<f64>, _: Batch) -> Result<nalgebra::DMatrix<f64>> {
        Ok(DMatrix::zeros(self.0.len(), self.0.len()))
    }
}

#[test]
fn ridge_one_step_from_any_start() {
    let (obj, prec, xty) = ridge(3);
    for start in [v(&[0.0; 5]), v(&[3.0, -1.0, 2.0, 0.5, -4.0])] {
        let lam = NaturalParams::gauss_full(start, DMatrix::identity(5, 5) * 2.0).unwrap();
        let next = blr_step(&BlrState::new(lam, 0), &obj, &delta_exact(), &Schedule::constant(1.0), None).unwrap();
        let vals = next.lambda.values();
        assert!((vals.rows(0, 5) - &xty).amax() < 1e-10);
        let l2 = flat_to_sym(&vals.as_slice()[5..], 5);
        assert!((l2 + &prec * 0.5).amax() < 1e-10);
        assert_eq!(next.step, 1);
    }
}

#[test]
fn zero_loss_full_step_gives_max_entropy() {
    let zero = Linear(v(&[0.0, 0.0]));
    let lam = NaturalParams::bernoulli(v(&[0.7, -2.0])).unwrap();
    let cfg = EstimatorConfig { concrete: crate::estimators::Concrete { tau: 1.0, noise: false }, ..delta_exact() };
    let next = blr_step(&BlrState::new(lam, 0), &zero, &cfg, &Schedule::constant(1.0), None).unwrap();
    assert_eq!(next.lambda.values().as_slice(), &[0.0, 0.0]);
}

#[test]
fn zero_rate_is_a_no_op() {
    let (obj, _, _) = ridge(1);
    let lam = NaturalParams::gauss_full(v(&[1.0, 2.0, 3.0, 4.0, 5.0]), DMatrix::identity(5, 5)).unwrap();
    let next = blr_step(&BlrState::new(lam.clone(), 0), &obj, &delta_exact(), &Schedule::constant(0.0), None).unwrap();
    assert_eq!(next.lambda, lam);
}

#[test]
fn simplified_examples() {
    let st = BlrState::new(NaturalParams::bernoulli(v(&[1.0])).unwrap(), 0);
    let next = blr_step_simplified(&st, &v(&[-3.0]), &Schedule::constant(1.0)).unwrap();
    assert_eq!(next.lambda.values()[0], 3.0);
    let st = BlrState::new(NaturalParams::bernoulli(v(&[2.0])).unwrap(), 0);
    let next = blr_step_simplified(&st, &v(&[0.0]), &Schedule::constant(0.5)).unwrap();
    assert_eq!(next.lambda.values()[0], 1.0);
}

#[test]
fn simplified_matches_full_rule_for_constant_base_measure() {
    let (obj, _, _) = ridge(4);
    let lam = NaturalParams::gauss_full(v(&[0.1, 0.2, -0.3, 0.0, 1.0]), DMatrix::identity(5, 5) * 3.0).unwrap();
    let st = BlrState::new(lam.clone(), 0);
    let g = loss_natgrad(&obj, &lam, &delta_exact(), None, &mut rng_from_seed(0, 0)).unwrap();
    let a = blr_step_simplified(&st, &g, &Schedule::constant(0.3)).unwrap();
    let b = blr_step(&st, &obj, &delta_exact(), &Schedule::constant(0.3), None).unwrap();
    assert!((a.lambda.values() - b.lambda.values()).amax() < 1e-12);
}

#[test]
fn decay_form_converges_geometrically() {
    let g0 = v(&[0.4, -1.5]);
    let mut st = BlrState::new(NaturalParams::bernoulli(v(&[2.0, 3.0])).unwrap(), 0);
    let rho = 0.2;
    let target = -&g0;
    let mut prev_err = (st.lambda.values() - &target).amax();
    for _ in 0..30 {
        st = blr_step_simplified(&st, &g0, &Schedule::constant(rho)).unwrap();
        let err = (st.lambda.values() - &target).amax();
        assert_abs_diff_eq!(err, (1.0 - rho) * prev_err, epsilon = 1e-12);
        prev_err = err;
    }
}

#[test]
fn isotropic_family_with_delta_is_gradient_descent() {
    let obj = crate::problems::himmelblau();
    let rho = 0.01;
    let mut st = BlrState::new(NaturalParams::gauss_iso(v(&[1.0, 1.0]), 1.0).unwrap(), 0);
    let mut m = v(&[1.0, 1.0]);
    for _ in 0..50 {
        st = blr_step(&st, &obj, &delta_exact(), &Schedule::constant(rho), None).unwrap();
        m = &m - obj.gradient(&m, None).unwrap() * rho;
        assert_eq!(st.lambda.mean().unwrap(), m);
    }
}

#[test]
fn momentum_without_gamma_matches_plain_step() {
    let (obj, _, _) = ridge(2);
    let lam = NaturalParams::gauss_diag(v(&[0.1, 0.2, -0.3, 0.0, 1.0]), v(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
    let mut a = BlrState::new(lam.clone(), 0);
    let mut b = BlrState::new(lam, 0);
    for _ in 0..5 {
        a = blr_step(&a, &obj, &delta_exact(), &Schedule::constant(0.2), None).unwrap();
        b = blr_step_momentum(&b, &obj, &delta_exact(), &Schedule::with_momentum(0.2, 0.0), None).unwrap();
        assert_eq!(a.lambda, b.lambda);
    }
}

#[test]
fn momentum_matches_heavy_ball() {
    let g = v(&[0.5, -1.0]);
    let obj = Linear(g.clone());
    let (rho, gamma) = (0.1, 0.7);
    let m0 = v(&[1.0, 2.0]);
    let mut st = BlrState::new(NaturalParams::gauss_iso(m0.clone(), 1.0).unwrap(), 0);
    let (mut m, mut m_prev) = (m0.clone(), m0);
    for t in 0..40 {
        st = blr_step_momentum(&st, &obj, &delta_exact(), &Schedule::with_momentum(rho, gamma), None).unwrap();
        let next = &m - &g * rho + (&m - &m_prev) * gamma;
        m_prev = std::mem::replace(&mut m, next);
        assert!((st.lambda.mean().unwrap() - &m).amax() < 1e-12, "step {t}");
    }
}

#[test]
fn first_momentum_step_has_no_momentum() {
    let g = v(&[0.5]);
    let obj = Linear(g);
    let st = BlrState::new(NaturalParams::gauss_iso(v(&[1.0]), 1.0).unwrap(), 0);
    let a = blr_step_momentum(&st, &obj, &delta_exact(), &Schedule::with_momentum(0.1, 0.9), None).unwrap();
    let b = blr_step(&st, &obj, &delta_exact(), &Schedule::constant(0.1), None).unwrap();
    assert_eq!(a.lambda, b.lambda);
}

#[test]
fn mirror_step_tiny_rate() {
    let mu = to_expectation(&NaturalParams::bernoulli(v(&[0.3])).unwrap()).unwrap();
    let next = mirror_step(&mu, &v(&[5.0]), 0.0).unwrap();
    assert_eq!(next.values(), mu.values());
}

#[test]
fn bernoulli_mirror_step_solves_proximal_problem() {
    // minimise g mu + D_{A*}(mu || mu_t) / rho; stationarity g + (artanh mu - lambda_t) / rho = 0
    let lam_t = 0.4;
    let (g, rho) = (1.3, 0.6);
    let mu_t = to_expectation(&NaturalParams::bernoulli(v(&[lam_t])).unwrap()).unwrap();
    let mu = mirror_step(&mu_t, &v(&[g]), rho).unwrap().values()[0];
    let stationarity = |x: f64| g + (x.atanh() - lam_t) / rho;
    let (mut lo, mut hi) = (-1.0 + 1e-15, 1.0 - 1e-15);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if stationarity(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert_abs_diff_eq!(mu, 0.5 * (lo + hi), epsilon = 1e-12);
}

#[test]
fn local_step_examples() {
    let fam = FamilyKind::BernoulliPm1 { dim: 1 };
    let sites = SiteSet { family: fam.clone(), sites: vec![v(&[1.0]), v(&[2.0])] };
    let next = local_blr_step(&sites, &[v(&[3.0]), v(&[4.0])], 0.5).unwrap();
    assert_eq!(next.sites, vec![v(&[2.0]), v(&[3.0])]);
    assert_eq!(next.global().unwrap().values()[0], 5.0);
    let jump = local_blr_step(&sites, &[v(&[3.0]), v(&[4.0])], 1.0).unwrap();
    assert_eq!(jump.sites, vec![v(&[3.0]), v(&[4.0])]);
}

#[test]
fn single_site_matches_global_update() {
    let (obj, _, _) = ridge(6);
    let lam = NaturalParams::gauss_full(v(&[0.0; 5]), DMatrix::identity(5, 5)).unwrap();
    let g = loss_natgrad(&obj, &lam, &delta_exact(), None, &mut rng_from_seed(0, 0)).unwrap();
    // the site target is -grad_mu E[l] (its natural-parameter message)
    let sites = SiteSet { family: lam.family().clone(), sites: vec![lam.values().clone()] };
    let local = local_blr_step(&sites, &[-g], 0.3).unwrap();
    let global = blr_step(&BlrState::new(lam, 0), &obj, &delta_exact(), &Schedule::constant(0.3), None).unwrap();
    assert!((local.global().unwrap().values() - global.lambda.values()).amax() < 1e-12);
}

#[test]
fn residual_at_ridge_optimum() {
    let (obj, prec, xty) = ridge(8);
    let m = prec.clone().cholesky().unwrap().solve(&xty);
    let lam = NaturalParams::gauss_full(m, prec).unwrap();
    let r = fixed_point_residual(&lam, &obj, &delta_exact(), None, &mut rng_from_seed(0, 0)).unwrap();
    assert!(r <= 1e-10, "{r}");
}

#[test]
fn residual_without_loss_is_lambda_norm() {
    let zero = Linear(v(&[0.0]));
    let lam = NaturalParams::gauss_full(v(&[0.0]), DMatrix::identity(1, 1)).unwrap();
    let r = fixed_point_residual(&lam, &zero, &delta_exact(), None, &mut rng_from_seed(0, 0)).unwrap();
    assert_eq!(r, 0.5);
    let b = NaturalParams::bernoulli(v(&[0.0])).unwrap();
    let r = fixed_point_residual(&b, &zero, &delta_exact(), None, &mut rng_from_seed(0, 0)).unwrap();
    assert_eq!(r, 0.0);
}

#[test]
fn residual_decreases_on_quadratic_runs() {
    let (obj, _, _) = ridge(9);
    let mut st = BlrState::new(NaturalParams::gauss_full(v(&[1.0; 5]), DMatrix::identity(5, 5)).unwrap(), 0);
    let mut prev = f64::INFINITY;
    for _ in 0..20 {
        let r = fixed_point_residual(&st.lambda, &obj, &delta_exact(), None, &mut rng_from_seed(0, 0)).unwrap();
        assert!(r < prev);
        prev = r;
        st = blr_step(&st, &obj, &delta_exact(), &Schedule::constant(0.3), None).unwrap();
    }
}

#[test]
fn guard_halves_and_eventually_fails() {
    let lam = NaturalParams::gauss_diag(v(&[0.0]), v(&[1.0])).unwrap();
    // full step would make the precision negative; half a step is fine
    let (next, scale) = guarded_update(&lam, &v(&[0.0, 0.75])).unwrap();
    assert_eq!(scale, 0.5);
    assert!(next.moments().is_ok());
    let r = guarded_update(&lam, &v(&[0.0, 1e9]));
    assert_eq!(r.unwrap_err(), Error::StepFailure { halvings: MAX_HALVINGS });
}

#[test]
fn schedule_validation() {
    assert!(Schedule::constant(1.5).validate().is_err());
    assert!(Schedule::with_momentum(0.5, 1.0).validate().is_err());
    let decay = Schedule { rho: Rate::Decay { initial: 0.5, offset: 10.0, power: 1.0 }, gamma: Rate::Constant(0.0) };
    assert!(decay.validate().is_ok());
    assert_eq!(decay.rho.at(10), 0.25);
}

fn mirror_case(family: usize, seed: u64) -> (NaturalParams, Box<dyn Objective>) {
    let data = make_dataset(DatasetKind::Logreg, 15, 2, seed).unwrap();
    let obj: Box<dyn Objective> = Box::new(crate::problems::logistic_objective(&data, 0.3).unwrap());
    let lam = match family {
        0 => NaturalParams::gauss_full(v(&[0.2, -0.4]), DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0])).unwrap(),
        1 => NaturalParams::gauss_diag(v(&[0.2, -0.4]), v(&[2.0, 5.0])).unwrap(),
        2 => NaturalParams::gauss_iso(v(&[0.2, -0.4]), 4.0).unwrap(),
        _ => NaturalParams::bernoulli(v(&[0.2, -0.4])).unwrap(),
    };
    (lam, obj)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mirror_step_equals_natural_step(family in 0usize..4, seed in 0u64..1000, rho in 0.0..1.0f64) {
        let (lam, obj) = mirror_case(family, seed);
        let cfg = EstimatorConfig::monte_carlo(3, HessianSurrogate::Exact);
        let st = BlrState::new(lam.clone(), seed);
        let next = blr_step(&st, obj.as_ref(), &cfg, &Schedule::constant(rho), None);
        let d = natural_gradient(obj.as_ref(), &lam, &cfg, None, &mut st.rng.clone()).unwrap();
        let mirrored = mirror_step(&to_expectation(&lam).unwrap(), &d, rho);
        match (next, mirrored) {
            (Ok(next), Ok(mu)) => {
                let back = to_natural(&mu).unwrap();
                let tol = 1e-12 * (1.0 + next.lambda.values().amax());
                prop_assert!((back.values() - next.lambda.values()).amax() <= tol);
            }
            (a, b) => prop_assert!(a.is_err() && b.is_err()),
        }
    }

    #[test]
    fn accepted_steps_keep_precision_positive(seed in 0u64..1000, rho in 0.05..1.0f64) {
        let data = make_dataset(DatasetKind::Logreg, 20, 3, seed).unwrap();
        let obj = crate::problems::logistic_objective(&data, 0.1).unwrap();
        let lam = NaturalParams::gauss_full(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let mut st = BlrState::new(lam, seed);
        let cfg = EstimatorConfig::monte_carlo(2, HessianSurrogate::Exact);
        for _ in 0..10 {
            st = blr_step(&st, &obj, &cfg, &Schedule::constant(rho), None).unwrap();
            let s = flat_to_sym(&st.lambda.values().as_slice()[3..3 + sym_flat_len(3)], 3) * -2.0;
            prop_assert!(s.cholesky().is_some());
        }
    }
}
