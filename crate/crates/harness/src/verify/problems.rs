//! Analytic derivatives of every objective, minibatch scaling and sampling,
//! and dataset serialization.

use blrkit::linalg::rng_from_seed;
use blrkit::problems::{make_dataset, ridge_objective, sample_minibatch, Dataset, DatasetKind, Objective};
use blrkit::{DMatrix, DVector, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::fd::{gradient, jacobian, random_vec, rel_err};
use super::{Check, CheckFn};
use crate::problem::{ProblemKind, ProblemSpec};

pub fn checks() -> Vec<CheckFn> {
    vec![
        ("gradients_match_fd", gradients_match_fd),
        ("hessians_symmetric", hessians_symmetric),
        ("hessians_match_fd", hessians_match_fd),
        ("per_example_gradients_sum_to_batch_gradient", per_example_sum),
        ("gauss_newton_exact_for_linear", gauss_newton_linear),
        ("minibatch_indices_uniform", minibatch_uniform),
        ("minibatch_stream_reproducible", minibatch_reproducible),
        ("dataset_text_roundtrip", dataset_roundtrip),
    ]
}

/// One instance of every problem kind, with small data.
fn all_objectives() -> Result<Vec<Box<dyn Objective>>> {
    ProblemKind::ALL
        .into_iter()
        .map(|kind| {
            let mut spec = ProblemSpec::new(kind);
            spec.n = 25;
            spec.d = if kind == ProblemKind::Quadratic { 4 } else { 2 };
            spec.delta = 0.5;
            spec.hidden = 3;
            spec.build()
        })
        .collect()
}

/// Evaluation points away from the asymmetric loss's curvature jump at 1.
fn points(obj: &dyn Objective, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = rng_from_seed(seed, 0);
    (0..5)
        .map(|_| {
            let mut t = random_vec(&mut rng, obj.dim(), 1.0);
            if obj.dim() == 1 && (t[0] - 1.0).abs() < 1e-3 {
                t[0] += 0.1;
            }
            t
        })
        .collect()
}

fn gradients_match_fd() -> Result<Check> {
    let mut worst = 0.0f64;
    for obj in all_objectives()? {
        for t in points(obj.as_ref(), 51) {
            let fd = gradient(|x| obj.value(x, None), &t, 1e-6)?;
            worst = worst.max(rel_err(obj.gradient(&t, None)?.as_slice(), fd.as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-5).with_note("every problem kind, 5 points, relative"))
}

fn hessians_symmetric() -> Result<Check> {
    let mut worst = 0.0f64;
    for obj in all_objectives()?.into_iter().filter(|o| o.has_hessian()) {
        for t in points(obj.as_ref(), 52) {
            let h = obj.hessian(&t, None)?;
            worst = worst.max((&h - h.transpose()).amax() / h.amax().max(1.0));
        }
    }
    Ok(Check::at_most("", worst, 1e-12).with_note("relative"))
}

fn hessians_match_fd() -> Result<Check> {
    let mut worst = 0.0f64;
    for obj in all_objectives()?.into_iter().filter(|o| o.has_hessian()) {
        for t in points(obj.as_ref(), 53) {
            let fd = jacobian(|x| obj.gradient(x, None), &t, 1e-5)?;
            worst = worst.max(rel_err(obj.hessian(&t, None)?.as_slice(), fd.as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-4).with_note("finite differences of the gradient"))
}

fn data_objectives() -> Result<Vec<Box<dyn Objective>>> {
    all_objectives().map(|v| v.into_iter().filter(|o| o.len() > 1).collect())
}

/// Full-batch and minibatch gradients against `(N / M) sum_i grad l_i + delta theta`.
fn per_example_sum() -> Result<Check> {
    let mut worst = 0.0f64;
    let mut rng = rng_from_seed(54, 0);
    for obj in data_objectives()? {
        let reg = obj.regularizer_hessian_diag();
        for t in points(obj.as_ref(), 55) {
            let batch = sample_minibatch(&mut rng, obj.len(), 7)?;
            for b in [None, Some(batch.as_slice())] {
                let sum = obj.example_gradients(&t, b)?.into_iter().fold(DVector::zeros(obj.dim()), |acc, g| acc + g);
                let expect = sum * obj.batch_scale(b) + reg.component_mul(&t);
                worst = worst.max(rel_err(obj.gradient(&t, b)?.as_slice(), expect.as_slice()));
            }
        }
    }
    Ok(Check::at_most("", worst, 1e-12).with_note("full batch and M = 7"))
}

/// For squared loss the Gauss-Newton matrix is the Hessian.
fn gauss_newton_linear() -> Result<Check> {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let data = make_dataset(DatasetKind::Linreg, 30, 4, seed)?;
        let obj = ridge_objective(data.x, data.y, 0.7)?;
        for t in points(&obj, 56 + seed) {
            let gn = obj
                .gauss_newton_factors(&t, None)?
                .iter()
                .fold(DMatrix::from_diagonal(&obj.regularizer_hessian_diag()), |acc, u| acc + u * u.transpose());
            worst = worst.max(rel_err(gn.as_slice(), obj.hessian(&t, None)?.as_slice()));
        }
    }
    Ok(Check::at_most("", worst, 1e-12).with_note("ridge, 5 datasets"))
}

/// Chi-square test that every index is equally likely to enter a minibatch;
/// measures the p-value.
fn minibatch_uniform() -> Result<Check> {
    let (n, m, draws) = (20usize, 5usize, 20_000usize);
    let mut counts = vec![0u64; n];
    let mut rng = rng_from_seed(57, 0);
    for _ in 0..draws {
        let b = sample_minibatch(&mut rng, n, m)?;
        if b.windows(2).any(|w| w[0] >= w[1]) {
            return Ok(Check::at_least("", 0.0, 1e-3).with_note("indices not distinct and sorted"));
        }
        for i in b {
            counts[i] += 1;
        }
    }
    let expect = (draws * m) as f64 / n as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let chi = ChiSquared::new((n - 1) as f64).expect("positive degrees of freedom");
    let p = 1.0 - chi.cdf(stat);
    Ok(Check::at_least("", p, 1e-3).with_note(format!("chi-square {stat:.2} on {} dof", n - 1)))
}

fn minibatch_reproducible() -> Result<Check> {
    let stream = |seed| -> Result<Vec<Vec<usize>>> {
        let mut rng = rng_from_seed(seed, 0);
        (0..100).map(|_| sample_minibatch(&mut rng, 50, 8)).collect()
    };
    let diffs = stream(9)?.iter().zip(stream(9)?.iter()).filter(|(a, b)| a != b).count();
    let distinct = stream(9)? != stream(10)?;
    Ok(Check::at_most("", (diffs + usize::from(!distinct)) as f64, 0.0).with_note("same seed same batches, new seed new batches"))
}

fn dataset_roundtrip() -> Result<Check> {
    let mut bad = 0usize;
    for kind in [DatasetKind::Linreg, DatasetKind::Logreg, DatasetKind::Gmm, DatasetKind::Xor] {
        for seed in 0..3 {
            let data = make_dataset(kind, 17, 2, seed)?;
            bad += usize::from(Dataset::from_text(&data.to_text())? != data);
        }
    }
    Ok(Check::at_most("", bad as f64, 0.0).with_note("four kinds, three seeds, exact equality"))
}
