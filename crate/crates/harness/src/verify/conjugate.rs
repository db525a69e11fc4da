//! Conjugate models (one step is exact Bayes), ridge routes, EM and SVI.

use blrkit::blr::{blr_step, variational_objective, BlrState, Schedule};
use blrkit::conjugate::{
    coordinate_sweep, em_step, exact_posterior, gaussian_mean_model, marginal_loglik, ridge_model, ridge_solve, svi_step, EmState,
    GmmModel, SviState,
};
use blrkit::estimators::EstimatorConfig;
use blrkit::expfam::NaturalParams;
use blrkit::linalg::rng_from_seed;
use blrkit::optimizers::{run, OptState, OptimizerSpec};
use blrkit::problems::{make_dataset, quadratic, ridge_objective, sample_minibatch, DatasetKind};
use blrkit::{DMatrix, DVector, Error, Result};
use rand::Rng as _;

use super::fd::{random_spd, random_vec, rel_err};
use super::{Check, CheckFn};

pub fn checks() -> Vec<CheckFn> {
    vec![
        ("one_step_is_exact_bayes", one_step_exact),
        ("ridge_routes_agree", || ridge_routes(20)),
        ("ridge_hand_instance", ridge_hand_instance),
        ("em_loglik_nondecreasing", || em_monotone(100)),
        ("em_matches_textbook_oracle", || em_textbook(20)),
        ("svi_full_batch_is_the_sweep", svi_full_batch_sweep),
        ("svi_recovers_generating_means", svi_recovery),
        ("exact_posterior_minimises_variational_objective", bayes_as_optimization),
    ]
}

/// Gaussian mean with a Gaussian prior: the loss `-log p(y|theta) - log p(theta)`
/// is the quadratic with `A = S0 + n tau I`, `b = S0 m0 + tau sum y`, and one
/// step with `rho = 1` from any start must land on the conjugate posterior.
fn one_step_exact() -> Result<Check> {
    let mut rng = rng_from_seed(41, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = rng.random_range(1..=4);
        let (m0, s0, tau) = (random_vec(&mut rng, p, 1.0), random_spd(&mut rng, p, 0.5), rng.random_range(0.2..3.0));
        let ys: Vec<DVector<f64>> = (0..rng.random_range(1..10)).map(|_| random_vec(&mut rng, p, 2.0)).collect();
        let post = exact_posterior(&gaussian_mean_model(m0.clone(), s0.clone(), tau)?, &ys)?;
        let sum: DVector<f64> = ys.iter().fold(DVector::zeros(p), |acc, y| acc + y);
        let a = &s0 + DMatrix::identity(p, p) * (tau * ys.len() as f64);
        let q = quadratic(a, &s0 * &m0 + sum * tau)?;
        let start = NaturalParams::gauss_full(random_vec(&mut rng, p, 3.0), random_spd(&mut rng, p, 0.1))?;
        let next = blr_step(&BlrState::new(start, 0), &q, &EstimatorConfig::default(), &Schedule::constant(1.0), None)?;
        worst = worst.max(rel_err(next.lambda.values().as_slice(), post.values().as_slice()));
    }
    Ok(Check::at_most("", worst, 1e-12).with_note("20 Gaussian-mean models, relative"))
}

/// Closed form, the conjugate one-step route (prior plus per-observation
/// sites) and the converged newton preset on random 20 x 5 ridge problems.
pub fn ridge_routes(instances: u64) -> Result<Check> {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let data = make_dataset(DatasetKind::Linreg, 20, 5, 300 + seed)?;
        let delta = 0.3 + 0.1 * seed as f64;
        let (m, s) = ridge_solve(&data.x, &data.y, delta)?;
        let obs: Vec<(DVector<f64>, f64)> = (0..20).map(|i| (data.x.row(i).transpose(), data.y[i])).collect();
        let post = exact_posterior(&ridge_model(5, delta)?, &obs)?;
        let g = &post.moments()?.components[0];
        worst = worst.max(rel_err(g.mean.as_slice(), m.as_slice()));
        worst = worst.max(rel_err(g.precision.to_matrix(5).as_slice(), s.as_slice()));

        let obj = ridge_objective(data.x.clone(), data.y.clone(), delta)?;
        let mut spec = OptimizerSpec::preset("newton")?;
        spec.schedule = Schedule::constant(0.5);
        spec.extras.tol = 1e-13;
        spec.extras.init_scale = 1.0;
        let trace = run(&spec, &obj, 500, seed)?;
        let OptState::Gaussian { mean, precision } = trace.final_state else {
            return Err(Error::Unsupported("newton state".into()));
        };
        worst = worst.max(rel_err(mean.as_slice(), m.as_slice()));
        worst = worst.max(rel_err(precision.as_slice(), s.as_slice()));
    }
    Ok(Check::at_most("", worst, 1e-8).with_note(format!("{instances} instances, iterated rho = 0.5")))
}

/// `X = I`, `y = (1, 2)`, `delta = 1` gives `m* = (0.5, 1.0)`.
pub fn ridge_hand_instance() -> Result<Check> {
    let (m, _) = ridge_solve(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 2.0]), 1.0)?;
    Ok(Check::at_most("", rel_err(m.as_slice(), &[0.5, 1.0]), 1e-15))
}

fn gmm_instance(seed: u64) -> Result<(GmmModel, Vec<DVector<f64>>)> {
    let mut rng = rng_from_seed(seed, 5);
    let d = rng.random_range(1..=3);
    let n = rng.random_range(5..60);
    let data = make_dataset(DatasetKind::Gmm, n, d, seed)?;
    let init = vec![random_vec(&mut rng, d, 2.0), random_vec(&mut rng, d, 2.0)];
    Ok((GmmModel::from_dataset(&data, 1.0)?, init))
}

/// The largest decrease of the marginal log-likelihood over 30 EM iterations
/// on each of `instances` random mixtures (negative when all increase).
pub fn em_monotone(instances: u64) -> Result<Check> {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..instances {
        let (model, init) = gmm_instance(seed)?;
        let mut st = EmState::new(init);
        let mut last = marginal_loglik(&model, &st.means)?;
        for _ in 0..30 {
            st = em_step(&st, &model)?;
            let now = marginal_loglik(&model, &st.means)?;
            worst = worst.max(last - now);
            last = now;
        }
    }
    Ok(Check::at_most("", worst, 1e-10).with_note(format!("{instances} instances, 30 iterations")))
}

/// Textbook EM for two unit-variance, equal-weight components on plain rows.
fn textbook_em(rows: &[Vec<f64>], means: [Vec<f64>; 2]) -> [Vec<f64>; 2] {
    let d = means[0].len();
    let mut num = [vec![0.0; d], vec![0.0; d]];
    let mut den = [0.0; 2];
    for y in rows {
        let sq = |m: &Vec<f64>| y.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let (e0, e1) = (-0.5 * sq(&means[0]), -0.5 * sq(&means[1]));
        let top = e0.max(e1);
        let (p0, p1) = ((e0 - top).exp(), (e1 - top).exp());
        let r = [p0 / (p0 + p1), p1 / (p0 + p1)];
        for k in 0..2 {
            den[k] += r[k];
            for j in 0..d {
                num[k][j] += r[k] * y[j];
            }
        }
    }
    let mut out = means.clone();
    for k in 0..2 {
        if den[k] > 0.0 {
            out[k] = num[k].iter().map(|x| x / den[k]).collect();
        }
    }
    out
}

/// Library EM against [`textbook_em`] at every iterate.
pub fn em_textbook(instances: u64) -> Result<Check> {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let (model, init) = gmm_instance(1000 + seed)?;
        let rows: Vec<Vec<f64>> = model.data.row_iter().map(|r| r.iter().copied().collect()).collect();
        let mut oracle = [init[0].as_slice().to_vec(), init[1].as_slice().to_vec()];
        let mut st = EmState::new(init);
        for _ in 0..25 {
            st = em_step(&st, &model)?;
            oracle = textbook_em(&rows, oracle);
            for k in 0..2 {
                worst = worst.max(rel_err(st.means[k].as_slice(), &oracle[k]));
            }
        }
    }
    Ok(Check::at_most("", worst, 1e-10).with_note(format!("{instances} instances, 25 iterates")))
}

/// Count of SVI steps (full batch, `rho = 1`) whose state differs in any bit
/// from a coordinate sweep.
pub fn svi_full_batch_sweep() -> Result<Check> {
    let mut diffs = 0usize;
    for seed in 0..10 {
        let (model, init) = gmm_instance(2000 + seed)?;
        let mut a = SviState::new(&model, &init, 2.0)?;
        let mut b = a.clone();
        for _ in 0..10 {
            a = svi_step(&a, &model, None, 1.0)?;
            b = coordinate_sweep(&b, &model)?;
            diffs += usize::from(a != b);
        }
    }
    Ok(Check::at_most("", diffs as f64, 0.0).with_note("10 instances, 10 steps, exact equality"))
}

/// Minibatch SVI on 200 points from a known two-cluster mixture. Measures the
/// largest error of the posterior means in units of the posterior sd, after
/// matching components to the generating means.
pub fn svi_recovery_error(seed: u64) -> Result<f64> {
    let data = make_dataset(DatasetKind::Gmm, 200, 2, seed)?;
    let model = GmmModel::from_dataset(&data, 0.1)?;
    let mut st = SviState::new(&model, &[DVector::from_vec(vec![-0.5, 0.0]), DVector::from_vec(vec![0.5, 0.0])], 1.0)?;
    let mut rng = rng_from_seed(seed, 0);
    for t in 0..2000 {
        let batch = sample_minibatch(&mut rng, model.len(), 20)?;
        let rho = (t as f64 + 10.0).powf(-0.7);
        st = svi_step(&st, &model, Some(&batch), rho)?;
    }
    // a few full sweeps remove the minibatch noise from the final factor
    for _ in 0..5 {
        st = svi_step(&st, &model, None, 1.0)?;
    }
    let (means, sds) = (st.means(), st.std_devs());
    let err = |order: [usize; 2]| {
        (0..2)
            .map(|k| (&means[order[k]] - &data.truth[k]).amax() / sds[order[k]])
            .fold(0.0f64, f64::max)
    };
    Ok(err([0, 1]).min(err([1, 0])))
}

fn svi_recovery() -> Result<Check> {
    let worst = (0..5).map(svi_recovery_error).collect::<Result<Vec<f64>>>()?.into_iter().fold(0.0, f64::max);
    Ok(Check::at_most("", worst, 3.0).with_note("N = 200, 5 seeds, posterior sd units"))
}

/// `E_q[l] - H(q)` at the exact ridge posterior against 50 perturbed candidates;
/// measures the smallest gap in standard errors.
fn bayes_as_optimization() -> Result<Check> {
    let data = make_dataset(DatasetKind::Linreg, 20, 3, 2)?;
    let obj = ridge_objective(data.x.clone(), data.y.clone(), 1.0)?;
    let (m, s) = ridge_solve(&data.x, &data.y, 1.0)?;
    let post = NaturalParams::gauss_full(m.clone(), s.clone())?;
    let n = 4000;
    let (best, se) = variational_objective(&post, &obj, &mut rng_from_seed(0, 9), n)?;
    let mut rng = rng_from_seed(1, 0);
    let mut min_z = f64::INFINITY;
    for t in 0..50 {
        let dm = DVector::from_fn(3, |_, _| rng.random_range(-0.3..0.3));
        let q = NaturalParams::gauss_full(&m + dm, &s * rng.random_range(0.5..2.0))?;
        let (val, se_q) = variational_objective(&q, &obj, &mut rng_from_seed(t, 9), n)?;
        min_z = min_z.min((val - best) / (se * se + se_q * se_q).sqrt());
    }
    Ok(Check::at_least("", min_z, 3.0).with_note("50 candidates, 4000 draws each, gap / stderr"))
}
