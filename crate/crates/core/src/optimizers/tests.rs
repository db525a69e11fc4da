use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};

use super::*;
use crate::estimators::{Concrete, HessianSurrogate};
use crate::expfam::NaturalParams;
use crate::problems::{
    double_well, logistic_objective, make_dataset, quadratic, ridge_objective, DatasetKind, Objective,
};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

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
    fn hessian(&self, _: &DVector<f64>, _: Batch) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.0.len(), self.0.len()))
    }
}

fn spec(name: &str) -> OptimizerSpec {
    OptimizerSpec::preset(name).unwrap()
}

#[test]
fn registry_has_every_preset() {
    let names = registry().names();
    for n in [
        "gd", "sgd", "newton", "diag-newton", "rmsprop-ref", "adam-like", "ogn", "vogn", "ste-ref", "bayesbinn",
        "dropout-newton", "mixture-newton",
    ] {
        assert!(names.contains(&n), "{n} missing");
    }
    assert!(matches!(OptimizerSpec::preset("lbfgs"), Err(Error::UnknownName(_))));
}

#[test]
fn custom_presets_can_be_registered() {
    fn build(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
        let mut s = spec.clone();
        s.name = "gd".into();
        registry().build(&s, obj, seed)
    }
    let mut r = Registry::with_builtins();
    r.register("my-gd", build, "gd under another name");
    let obj = Linear(v(&[1.0]));
    let mut s = spec("gd");
    s.name = "my-gd".into();
    let trace = r.run(&s, &obj, 3, 0).unwrap();
    assert_eq!(trace.records.len(), 3);
    assert!(matches!(registry().run(&s, &obj, 3, 0), Err(Error::UnknownName(_))));
}

#[test]
fn newton_one_step_on_quadratic() {
    let q = quadratic(DMatrix::from_diagonal(&v(&[2.0, 4.0])), v(&[2.0, 4.0])).unwrap();
    let mut s = spec("newton");
    s.schedule = Schedule::constant(1.0);
    let mut opt = registry().build(&s, &q, 0).unwrap();
    opt.step(&q, None).unwrap();
    match opt.state() {
        OptState::Gaussian { mean, precision } => {
            assert_abs_diff_eq!(mean.as_slice(), &[1.0, 1.0][..], epsilon = 1e-15);
            assert_eq!(precision, q.a);
        }
        other => panic!("unexpected state {other:?}"),
    }
    let trace = run(&s, &q, 50, 0).unwrap();
    assert_eq!(trace.status, RunStatus::Converged);
    assert_eq!(trace.records.len(), 1);
}

#[test]
fn zero_rate_changes_nothing() {
    let q = quadratic(DMatrix::from_diagonal(&v(&[2.0, 4.0])), v(&[2.0, 4.0])).unwrap();
    for name in ["newton", "gd", "diag-newton"] {
        let mut s = spec(name);
        s.schedule = Schedule::constant(0.0);
        s.extras.init_mean = Some(vec![0.3, -0.7]);
        let mut opt = registry().build(&s, &q, 0).unwrap();
        let before = opt.state();
        opt.step(&q, None).unwrap();
        assert_eq!(opt.state(), before, "{name}");
    }
}

#[test]
fn sgd_is_preconditioned_minibatch_descent() {
    let data = make_dataset(DatasetKind::Linreg, 40, 3, 2).unwrap();
    let obj = ridge_objective(data.x.clone(), data.y.clone(), 0.5).unwrap();
    let mut s = spec("sgd");
    s.extras.minibatch = Some(8);
    s.extras.init_precision = 50.0;
    let trace = run(&s, &obj, 30, 11).unwrap();
    let mut rng = rng_from_seed(11, MINIBATCH_STREAM);
    let mut m = DVector::zeros(3);
    for _ in 0..30 {
        let b = sample_minibatch(&mut rng, 40, 8).unwrap();
        m -= obj.gradient(&m, Some(&b)).unwrap() * (0.1 / 50.0);
    }
    match trace.final_state {
        OptState::Gaussian { mean, .. } => assert_abs_diff_eq!(mean.as_slice(), m.as_slice(), epsilon = 1e-12),
        other => panic!("unexpected state {other:?}"),
    }
}

#[test]
fn full_batch_sgd_equals_gd() {
    let data = make_dataset(DatasetKind::Logreg, 30, 2, 5).unwrap();
    let obj = logistic_objective(&data, 1.0).unwrap();
    let mut a = spec("sgd");
    a.extras.minibatch = Some(30);
    let ta = run(&a, &obj, 20, 3).unwrap();
    let tb = run(&spec("gd"), &obj, 20, 3).unwrap();
    assert_eq!(ta.final_state, tb.final_state);
}

#[test]
fn runs_are_deterministic() {
    let data = make_dataset(DatasetKind::Logreg, 50, 2, 7).unwrap();
    let obj = logistic_objective(&data, 1.0).unwrap();
    for name in ["sgd", "vogn", "bayesbinn", "dropout-newton", "mixture-newton"] {
        let mut s = spec(name);
        s.extras.minibatch = Some(10);
        s.extras.tol = 0.0;
        let a = run(&s, &obj, 15, 9).unwrap();
        let b = run(&s, &obj, 15, 9).unwrap();
        assert!(a.same_values(&b), "{name}");
        let c = run(&s, &obj, 15, 10).unwrap();
        assert!(!a.same_values(&c), "{name} ignores its seed");
    }
}

#[test]
fn zero_steps_give_empty_trace() {
    let obj = Linear(v(&[1.0, 2.0]));
    let t = run(&spec("gd"), &obj, 0, 0).unwrap();
    assert!(t.records.is_empty());
    assert_eq!(t.status, RunStatus::MaxSteps);
}

#[test]
fn trace_steps_are_monotone() {
    let data = make_dataset(DatasetKind::Logreg, 20, 2, 1).unwrap();
    let obj = logistic_objective(&data, 1.0).unwrap();
    let t = run(&spec("ogn"), &obj, 25, 0).unwrap();
    assert!(t.records.windows(2).all(|w| w[1].step == w[0].step + 1 && w[1].wall_ms >= w[0].wall_ms));
}

fn diag(name: &'static str, s: f64, rate: f64) -> DiagNewton {
    let mut sp = spec("diag-newton");
    sp.schedule = Schedule::constant(rate);
    DiagNewton::new(name, v(&[0.0]), v(&[s]), sp, 0).unwrap()
}

#[test]
fn diag_newton_recursion() {
    let mut d = diag("diag-newton", 1.0, 0.5);
    d.apply(&v(&[2.0]), &v(&[4.0])).unwrap();
    // s' = 0.5 * 1 + 0.5 * 4, m' = -0.5 * 2 / s'
    assert_abs_diff_eq!(d.s[0], 2.5, epsilon = 1e-15);
    assert_abs_diff_eq!(d.m[0], -0.4, epsilon = 1e-15);

    let mut d = diag("diag-newton", 3.0, 0.5);
    d.apply(&v(&[0.0]), &v(&[3.0])).unwrap();
    assert_eq!(d.s[0], 3.0);
}

#[test]
fn diag_newton_two_rates() {
    let mut sp = spec("diag-newton");
    sp.extras.alpha = Some(0.2);
    sp.extras.beta = Some(0.5);
    let mut d = DiagNewton::new("diag-newton", v(&[1.0]), v(&[1.0]), sp, 0).unwrap();
    d.apply(&v(&[2.0]), &v(&[3.0])).unwrap();
    assert_abs_diff_eq!(d.s[0], 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(d.m[0], 1.0 - 0.2 * 2.0 / 2.0, epsilon = 1e-15);
}

#[test]
fn diag_newton_with_unit_rate_is_diagonal_newton() {
    let q = quadratic(DMatrix::from_diagonal(&v(&[2.0, 5.0, 0.5])), v(&[1.0, -1.0, 3.0])).unwrap();
    let mut s = spec("diag-newton");
    s.schedule = Schedule::constant(1.0);
    s.extras.init_mean = Some(vec![4.0, 4.0, 4.0]);
    let mut opt = registry().build(&s, &q, 0).unwrap();
    opt.step(&q, None).unwrap();
    let t = v(&[4.0, 4.0, 4.0]);
    let expect = &t - q.gradient(&t, None).unwrap().component_div(&q.a.diagonal());
    assert_abs_diff_eq!(opt.eval_point().as_slice(), expect.as_slice(), epsilon = 1e-14);
}

#[test]
fn negative_curvature_is_halved_then_floored() {
    let mut d = diag("diag-newton", 1.0, 1.0);
    d.apply(&v(&[0.0]), &v(&[-3.0])).unwrap();
    // rate halves to 1/8: s' = 7/8 - 3/8
    assert_abs_diff_eq!(d.s[0], 0.5, epsilon = 1e-15);
    let mut d = diag("diag-newton", 1.0, 1.0);
    d.apply(&v(&[0.0]), &v(&[-1.0 + 1e-12])).unwrap();
    assert!(d.s[0] >= crate::expfam::PRECISION_FLOOR);
}

#[test]
fn rmsprop_examples() {
    let mut r = RmspropRef::new(v(&[0.0, 0.0]), v(&[0.0, 0.0]), 0.1, 0.5, 1e-8).unwrap();
    r.apply(&v(&[2.0, 0.0])).unwrap();
    assert_eq!(r.v.as_slice(), &[2.0, 0.0]);
    assert_abs_diff_eq!(r.theta[0], -0.1 * 2.0 / (2f64.sqrt() + 1e-8), epsilon = 1e-15);
    assert_eq!(r.theta[1], 0.0);
    r.apply(&v(&[0.0, 0.0])).unwrap();
    assert_eq!(r.v.as_slice(), &[1.0, 0.0]);
}

#[test]
fn rmsprop_v_matches_diag_newton_s_on_shared_gradients() {
    let data = make_dataset(DatasetKind::Logreg, 60, 2, 4).unwrap();
    let obj = logistic_objective(&data, 1.0).unwrap();
    let beta = 0.1;
    let mut r = RmspropRef::new(DVector::zeros(2), DVector::from_element(2, 1.0), 0.01, beta, 1e-8).unwrap();
    let mut sp = spec("diag-newton");
    sp.estimator.hessian = HessianSurrogate::GradMagnitude;
    sp.extras.alpha = Some(0.01);
    sp.extras.beta = Some(beta);
    let mut d = DiagNewton::new("diag-newton", DVector::zeros(2), DVector::from_element(2, 1.0), sp, 0).unwrap();
    let mut rng = rng_from_seed(4, MINIBATCH_STREAM);
    for _ in 0..100 {
        let b = sample_minibatch(&mut rng, 60, 10).unwrap();
        let g = obj.gradient(&r.theta, Some(&b)).unwrap();
        r.apply(&g).unwrap();
        d.apply(&g, &crate::estimators::grad_magnitude_diag(&g)).unwrap();
        assert_eq!(r.v, d.s);
    }
    assert!((r.theta - d.m).amax() > 1e-3);
}

#[test]
fn adam_like_reduces_to_rmsprop_without_momentum() {
    let data = make_dataset(DatasetKind::Logreg, 40, 2, 8).unwrap();
    let obj = logistic_objective(&data, 1.0).unwrap();
    let mut a = spec("adam-like");
    a.extras.tol = 0.0;
    let ta = run(&a, &obj, 40, 1).unwrap();
    let tr = run(&spec("rmsprop-ref"), &obj, 40, 1).unwrap();
    let (OptState::Diagonal { mean, scale }, OptState::Scaled { theta, v }) = (&ta.final_state, &tr.final_state) else {
        panic!("unexpected states");
    };
    assert_eq!(mean, theta);
    assert_eq!(scale, v);
}

#[test]
fn adam_like_exact_momentum_is_the_momentum_rule() {
    // no square root, exact momentum: s m must follow the natural-parameter recursion
    let mut sp = spec("adam-like");
    sp.schedule = Schedule::with_momentum(0.3, 0.5);
    sp.extras.alpha = Some(0.3);
    sp.extras.beta = Some(0.3);
    sp.extras.sqrt_scaling = false;
    sp.extras.exact_momentum = true;
    let mut a = AdamLike::new(v(&[1.0]), v(&[2.0]), (v(&[0.5]), v(&[1.5])), sp).unwrap();
    let (g, h) = (0.7, 3.0);
    let lam1 = 2.0 * 1.0;
    let lam1_prev = 1.5 * 0.5;
    let d1 = g - h * 1.0 + lam1;
    let d2 = 0.5 * h - 0.5 * 2.0;
    let lam1_new = lam1 - 0.3 * d1 + 0.5 * (lam1 - lam1_prev);
    let lam2_new = -1.0 - 0.3 * d2 + 0.5 * (-1.0 + 0.75);
    a.apply(&v(&[g]), &v(&[h])).unwrap();
    assert_abs_diff_eq!(a.s[0], -2.0 * lam2_new, epsilon = 1e-14);
    assert_abs_diff_eq!(a.m[0] * a.s[0], lam1_new, epsilon = 1e-14);
}

#[test]
fn ogn_on_linear_gaussian_matches_exact_diag_newton() {
    let data = make_dataset(DatasetKind::Linreg, 30, 3, 6).unwrap();
    let obj = ridge_objective(data.x.clone(), data.y.clone(), 0.7).unwrap();
    let mut a = spec("ogn");
    a.extras.tol = 0.0;
    let mut b = spec("diag-newton");
    b.extras.tol = 0.0;
    let ta = run(&a, &obj, 30, 0).unwrap();
    let tb = run(&b, &obj, 30, 0).unwrap();
    for (x, y) in ta.records.iter().zip(&tb.records) {
        assert_abs_diff_eq!(x.loss, y.loss, epsilon = 1e-9 * (1.0 + y.loss.abs()));
        assert_abs_diff_eq!(x.lambda_norm, y.lambda_norm, epsilon = 1e-9 * y.lambda_norm);
    }
}

#[test]
fn ogn_scale_stays_positive_on_logistic() {
    let data = make_dataset(DatasetKind::Logreg, 50, 2, 3).unwrap();
    let obj = logistic_objective(&data, 0.0).unwrap();
    let mut s = spec("ogn");
    s.extras.minibatch = Some(5);
    let mut opt = registry().build(&s, &obj, 0).unwrap();
    let t = drive(opt.as_mut(), &s, &obj, 200, 0).unwrap();
    assert_eq!(t.records.len(), 200);
    match t.final_state {
        OptState::Diagonal { scale, .. } => assert!(scale.iter().all(|x| *x > 0.0)),
        other => panic!("unexpected state {other:?}"),
    }
}

#[test]
fn vogn_with_tight_candidate_approaches_ogn() {
    let data = make_dataset(DatasetKind::Logreg, 40, 2, 3).unwrap();
    let obj = logistic_objective(&data, 1.0).unwrap();
    let mut results = vec![];
    for name in ["ogn", "vogn"] {
        let mut s = spec(name);
        s.extras.init_precision = 1e12;
        s.extras.init_mean = Some(vec![0.3, -0.2]);
        s.estimator.mode = if name == "vogn" { EstimatorMode::WeightPerturb { samples: 1 } } else { EstimatorMode::Delta };
        let mut opt = registry().build(&s, &obj, 5).unwrap();
        opt.step(&obj, None).unwrap();
        results.push(opt.state());
    }
    let (OptState::Diagonal { mean: a, scale: sa }, OptState::Diagonal { mean: b, scale: sb }) = (&results[0], &results[1]) else {
        panic!("unexpected states");
    };
    assert!((a - b).amax() < 1e-9);
    assert!((sa - sb).amax() / sa.amax() < 1e-9);
}

#[test]
fn presets_reject_mismatched_estimators() {
    let obj = Linear(v(&[1.0]));
    let mut s = spec("ogn");
    s.estimator.mode = EstimatorMode::MonteCarlo { samples: 4 };
    assert!(registry().build(&s, &obj, 0).is_err());
    let mut s = spec("vogn");
    s.estimator.mode = EstimatorMode::Delta;
    assert!(registry().build(&s, &obj, 0).is_err());
    let mut s = spec("newton");
    s.schedule = Schedule::with_momentum(0.1, 0.5);
    assert!(registry().build(&s, &obj, 0).is_err());
}

#[test]
fn ste_examples() {
    let obj = Linear(v(&[2.0]));
    let mut s = SteRef::new(v(&[0.2]), 0.1);
    s.step(&obj, None).unwrap();
    assert_abs_diff_eq!(s.theta_tilde[0], 0.0, epsilon = 1e-16);
    assert_eq!(s.eval_point()[0], 1.0);

    let zero = Linear(v(&[0.0, 0.0]));
    let mut s = SteRef::new(v(&[0.4, -0.3]), 0.1);
    s.step(&zero, None).unwrap();
    assert_eq!(s.theta_tilde, v(&[0.4, -0.3]));
    assert_eq!(s.eval_point(), v(&[1.0, -1.0]));
    assert_eq!(SteRef::new(v(&[-0.4, 0.3]), 0.1).eval_point(), v(&[-1.0, 1.0]));
}

#[test]
fn bayesbinn_decays_without_gradient() {
    let zero = Linear(v(&[0.0, 0.0]));
    let mut s = spec("bayesbinn");
    s.schedule = Schedule::constant(0.25);
    s.extras.init_mean = Some(vec![2.0, -1.0]);
    let mut opt = registry().build(&s, &zero, 0).unwrap();
    opt.step(&zero, None).unwrap();
    match opt.state() {
        OptState::Bernoulli { lambda } => assert_abs_diff_eq!(lambda.as_slice(), &[1.5, -0.75][..], epsilon = 1e-15),
        other => panic!("unexpected state {other:?}"),
    }
}

#[test]
fn bayesbinn_low_temperature_tracks_ste_signs() {
    let data = make_dataset(DatasetKind::Xor, 40, 2, 2).unwrap();
    let obj = crate::problems::binary_mlp_objective(&[2, 4, 1], &data).unwrap();
    let mut s = spec("bayesbinn");
    s.estimator.concrete = Concrete { tau: 1e-8, noise: false };
    s.extras.init_scale = 1.0;
    let mut opt = registry().build(&s, &obj, 4).unwrap();
    for _ in 0..20 {
        opt.step(&obj, None).unwrap();
        let OptState::Bernoulli { lambda } = opt.state() else { panic!() };
        let (theta, _) = crate::estimators::concrete_relax(&lambda, None, 1e-8).unwrap();
        for j in 0..lambda.len() {
            if lambda[j].abs() >= 1e-3 {
                assert_abs_diff_eq!(theta[j], sign(&lambda)[j], epsilon = 1e-6);
            }
        }
    }
}

#[test]
fn dropout_with_keep_probability_one_is_newton() {
    let data = make_dataset(DatasetKind::Logreg, 60, 3, 2).unwrap();
    let obj = logistic_objective(&data, 1.0).unwrap();
    let mut a = spec("newton");
    a.extras.minibatch = Some(12);
    a.extras.tol = 0.0;
    a.schedule = Schedule::constant(0.3);
    let mut b = a.clone();
    b.name = "dropout-newton".into();
    b.extras.pi1 = 1.0;
    let ta = run(&a, &obj, 50, 8).unwrap();
    let tb = run(&b, &obj, 50, 8).unwrap();
    for (x, y) in ta.records.iter().zip(&tb.records) {
        assert_eq!((x.loss.to_bits(), x.lambda_norm.to_bits(), x.residual.to_bits()), (y.loss.to_bits(), y.lambda_norm.to_bits(), y.residual.to_bits()));
    }
    let (OptState::Gaussian { mean, precision }, OptState::Blocks { mean: bm, blocks }) = (&ta.final_state, &tb.final_state) else {
        panic!("unexpected states");
    };
    assert_eq!(mean, bm);
    assert_eq!(&blocks[0].1, precision);
}

#[test]
fn dropout_rejects_zero_keep_probability() {
    let obj = Linear(v(&[1.0]));
    let mut s = spec("dropout-newton");
    s.extras.pi1 = 0.0;
    assert!(registry().build(&s, &obj, 0).is_err());
}

#[test]
fn dropped_units_are_evaluated_at_the_spike() {
    // quadratic whose gradient reveals the evaluation point: g = theta - b
    let q = quadratic(DMatrix::identity(2, 2), v(&[0.0, 0.0])).unwrap();
    let mut s = spec("dropout-newton");
    s.extras.pi1 = 1e-12;
    s.extras.init_mean = Some(vec![5.0, -5.0]);
    s.schedule = Schedule::constant(1.0);
    let mut opt = registry().build(&s, &q, 0).unwrap();
    opt.step(&q, None).unwrap();
    // the single unit is dropped: the gradient at the spike draw is ~0, so the
    // Newton jump m - H^-1 g(theta~) barely moves; kept, it would land on 0
    assert!((opt.eval_point() - v(&[5.0, -5.0])).amax() < 1e-2);
    s.extras.pi1 = 1.0;
    let mut kept = registry().build(&s, &q, 0).unwrap();
    kept.step(&q, None).unwrap();
    assert!(kept.eval_point().amax() < 1e-12);
}

#[test]
fn single_component_mixture_is_newton() {
    let q = quadratic(DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]), v(&[1.0, -2.0])).unwrap();
    let mut a = spec("newton");
    a.extras.init_mean = Some(vec![0.5, 0.5]);
    a.extras.tol = 0.0;
    let mut b = a.clone();
    b.name = "mixture-newton".into();
    b.extras.components = 1;
    b.estimator = EstimatorConfig::default();
    let ta = run(&a, &q, 10, 0).unwrap();
    let tb = run(&b, &q, 10, 0).unwrap();
    let (OptState::Gaussian { mean, precision }, OptState::Mixture { components, .. }) = (&ta.final_state, &tb.final_state) else {
        panic!("unexpected states");
    };
    assert_abs_diff_eq!(mean.as_slice(), components[0].0.as_slice(), epsilon = 1e-12);
    assert_abs_diff_eq!(precision.as_slice(), components[0].1.as_slice(), epsilon = 1e-12);
}

fn well_spec(seed: u64) -> OptimizerSpec {
    let mut s = spec("mixture-newton");
    s.extras.init_mean = Some(vec![-0.5, 0.5]);
    s.extras.tol = 0.0;
    s.estimator.common_noise = Some(seed);
    s
}

#[test]
fn symmetric_mixture_stays_mirror_symmetric() {
    let obj = double_well(100.0).unwrap();
    let t = run(&well_spec(3), &obj, 60, 3).unwrap();
    let OptState::Mixture { components, .. } = t.final_state else { panic!() };
    assert_eq!(components[0].0[0], -components[1].0[0]);
    assert_eq!(components[0].1, components[1].1);
}

#[test]
fn double_well_components_find_both_minima() {
    let obj = double_well(100.0).unwrap();
    for seed in 0..3 {
        let mut s = well_spec(seed);
        s.estimator.common_noise = None;
        s.extras.init_mean = Some(vec![-0.5 + 0.01 * seed as f64, 0.45]);
        let t = run(&s, &obj, 400, seed).unwrap();
        assert!(!t.collapsed);
        let OptState::Mixture { weights, components } = t.final_state else { panic!() };
        let mut means: Vec<f64> = components.iter().map(|c| c.0[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 1.0).abs() < 1e-2 && (means[1] - 1.0).abs() < 1e-2, "{means:?}");
        let lam = NaturalParams::mixture(weights, components.clone()).unwrap();
        for (k, c) in components.iter().enumerate() {
            assert!(crate::expfam::responsibility(&lam, &c.0).unwrap()[k] > 0.99);
        }
    }
}

#[test]
fn merged_components_are_flagged() {
    let obj = double_well(1.0).unwrap();
    let mut s = spec("mixture-newton");
    s.extras.init_mean = Some(vec![0.2, 0.2]);
    s.extras.tol = 0.0;
    let t = run(&s, &obj, 3, 0).unwrap();
    assert!(t.collapsed);
}

