use approx::assert_relative_eq;
use blrkit::blr::{blr_step, guarded_update, BlrState, Schedule};
use blrkit::conjugate::ridge_solve;
use blrkit::estimators::{EstimatorConfig, HessianSurrogate};
use blrkit::expfam::{to_expectation, to_natural, NaturalParams};
use blrkit::optimizers::{run, OptState, OptimizerSpec, RunStatus};
use blrkit::problems::{make_dataset, quadratic, ridge_objective, DatasetKind};
use blrkit::{DMatrix, DVector};
use proptest::prelude::*;

fn spd(p: usize, entries: &[f64]) -> DMatrix<f64> {
    let l = DMatrix::from_fn(p, p, |i, j| entries[i * p + j]);
    &l * l.transpose() + DMatrix::identity(p, p) * 0.5
}

fn spd_strategy(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.5..1.5f64, p * p).prop_map(move |e| spd(p, &e))
}

fn vec_strategy(p: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, p).prop_map(DVector::from_vec)
}

#[test]
fn newton_preset_reaches_the_ridge_posterior() {
    let data = make_dataset(DatasetKind::Linreg, 30, 4, 2).unwrap();
    let (m, s) = ridge_solve(&data.x, &data.y, 0.5).unwrap();
    let obj = ridge_objective(data.x, data.y, 0.5).unwrap();
    let mut spec = OptimizerSpec::preset("newton").unwrap();
    spec.schedule = Schedule::constant(0.5);
    spec.extras.tol = 1e-12;
    let trace = run(&spec, &obj, 400, 0).unwrap();
    assert_eq!(trace.status, RunStatus::Converged);
    let OptState::Gaussian { mean, precision } = trace.final_state else { panic!("newton keeps a full Gaussian") };
    assert_relative_eq!(mean, m, max_relative = 1e-8);
    assert_relative_eq!(precision, s, max_relative = 1e-8);
}

#[test]
fn sampled_runs_are_reproducible_per_seed() {
    let data = make_dataset(DatasetKind::Logreg, 60, 2, 3).unwrap();
    let obj = blrkit::problems::logistic_objective(&data, 1.0).unwrap();
    let mut spec = OptimizerSpec::preset("vogn").unwrap();
    spec.extras.minibatch = Some(10);
    let a = run(&spec, &obj, 40, 5).unwrap();
    let b = run(&spec, &obj, 40, 5).unwrap();
    let c = run(&spec, &obj, 40, 6).unwrap();
    assert!(a.same_values(&b));
    assert!(!a.same_values(&c));
}

#[test]
fn every_preset_runs_on_a_small_problem() {
    let data = make_dataset(DatasetKind::Linreg, 20, 2, 1).unwrap();
    let obj = ridge_objective(data.x, data.y, 1.0).unwrap();
    for name in blrkit::optimizers::registry().names() {
        let spec = OptimizerSpec::preset(name).unwrap();
        let trace = run(&spec, &obj, 20, 0).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!trace.records.is_empty(), "{name}");
        assert!(trace.records.iter().all(|r| r.loss.is_finite()), "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_full_step_lands_on_the_quadratic_posterior(
        (a, b, m0, s0) in (1usize..4).prop_flat_map(|p| (spd_strategy(p), vec_strategy(p), vec_strategy(p), spd_strategy(p)))
    ) {
        let q = quadratic(a.clone(), b).unwrap();
        let start = BlrState::new(NaturalParams::gauss_full(m0, s0).unwrap(), 0);
        let cfg = EstimatorConfig::delta(HessianSurrogate::Exact);
        let next = blr_step(&start, &q, &cfg, &Schedule::constant(1.0), None).unwrap();
        let exact = NaturalParams::gauss_full(q.minimizer(), a).unwrap();
        let err = (next.lambda.values() - exact.values()).amax();
        prop_assert!(err <= 1e-9 * (1.0 + exact.values().amax()), "error {}", err);
    }

    #[test]
    fn guarded_updates_never_leave_the_domain(
        (m, s, inc) in (1usize..4).prop_flat_map(|p| (vec_strategy(p), spd_strategy(p), prop::collection::vec(-50.0..50.0f64, p + p * (p + 1) / 2)))
    ) {
        let lam = NaturalParams::gauss_full(m, s).unwrap();
        if let Ok((next, scale)) = guarded_update(&lam, &DVector::from_vec(inc)) {
            prop_assert!(scale > 0.0 && scale <= 1.0);
            let view = next.moments().unwrap();
            let g = &view.components[0];
            prop_assert!(g.precision.to_matrix(g.dim()).cholesky().is_some());
        }
    }

    #[test]
    fn duality_maps_invert_each_other(m in vec_strategy(3), s in prop::collection::vec(0.05..20.0f64, 3), l in vec_strategy(3)) {
        for lam in [NaturalParams::gauss_diag(m.clone(), DVector::from_vec(s.clone())).unwrap(), NaturalParams::bernoulli(l.clone()).unwrap()] {
            let back = to_natural(&to_expectation(&lam).unwrap()).unwrap();
            prop_assert!((back.values() - lam.values()).amax() <= 1e-8 * (1.0 + lam.values().amax()));
        }
    }
}
