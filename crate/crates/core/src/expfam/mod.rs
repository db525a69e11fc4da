//! Exponential-family candidates in natural (`lambda`) and expectation (`mu`)
//! coordinates.
//!
//! Parameters are stored as flat vectors so that `<lambda, mu>` is a plain dot
//! product. Layouts per family (`P` = dimension):
//!
//! | family          | natural                                 | expectation                        |
//! |-----------------|-----------------------------------------|------------------------------------|
//! | `gauss-iso(s0)` | `s0 m`                                  | `m`                                |
//! | `gauss-diag`    | `[S m; -s/2]`                           | `[m; 1/s + m^2]`                   |
//! | `gauss-full`    | `[S m; flat(-S/2)]`                     | `[m; flat(S^-1 + m m^T)]`          |
//! | `bernoulli-pm1` | `1/2 log(p / (1 - p))`                  | `2p - 1`                           |
//! | `gauss-mixture` | per component, as `gauss-full`          | per component, times `pi_k`        |
//!
//! `flat` is the sqrt(2)-scaled half-vectorisation from [`crate::linalg`].
//!
//! Mixtures with fixed weights are not an exponential family; for them
//! `log_partition` is defined as `sum_k pi_k A_k(lambda_k)`, which makes the
//! expectation map and Fisher matrix above exact derivatives of it.

mod bernoulli;
pub mod gaussian;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

pub use gaussian::{GaussianMoments, Precision, Structure};

use crate::linalg::{log_sum_exp, Rng};
use crate::{Error, Result};

/// Diagonal precisions below this are clamped after every update.
pub const PRECISION_FLOOR: f64 = 1e-8;
/// Bernoulli natural parameters are capped at this magnitude.
pub const LOGIT_CAP: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    /// Gaussian with fixed precision `precision * I`.
    GaussIso { dim: usize, precision: f64 },
    GaussDiag { dim: usize },
    GaussFull { dim: usize },
    /// Independent `{-1, +1}` variables.
    BernoulliPm1 { dim: usize },
    /// Full-covariance Gaussian components with fixed weights.
    GaussMixture { dim: usize, weights: Vec<f64> },
}

impl FamilyKind {
    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidArgument("family dimension must be at least 1".into()));
        }
        match self {
            FamilyKind::GaussIso { precision, .. } if !(precision.is_finite() && *precision > 0.0) => {
                Err(Error::InvalidArgument(format!("fixed precision must be positive, got {precision}")))
            }
            FamilyKind::GaussMixture { weights, .. } => {
                if weights.is_empty() {
                    return Err(Error::InvalidArgument("mixture needs at least one component".into()));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FamilyKind::GaussIso { dim, .. }
            | FamilyKind::GaussDiag { dim }
            | FamilyKind::GaussFull { dim }
            | FamilyKind::BernoulliPm1 { dim }
            | FamilyKind::GaussMixture { dim, .. } => *dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::GaussIso { .. } => "gauss-iso",
            FamilyKind::GaussDiag { .. } => "gauss-diag",
            FamilyKind::GaussFull { .. } => "gauss-full",
            FamilyKind::BernoulliPm1 { .. } => "bernoulli-pm1",
            FamilyKind::GaussMixture { .. } => "gauss-mixture",
        }
    }

    /// Number of mixture components (1 for plain families).
    pub fn components(&self) -> usize {
        match self {
            FamilyKind::GaussMixture { weights, .. } => weights.len(),
            _ => 1,
        }
    }

    /// Length of the flat natural / expectation vector.
    pub fn flat_len(&self) -> usize {
        let p = self.dim();
        match self {
            FamilyKind::BernoulliPm1 { .. } => p,
            FamilyKind::GaussMixture { weights, .. } => weights.len() * Structure::Full.flat_len(p),
            _ => self.gaussian_structure().expect("gaussian").flat_len(p),
        }
    }

    /// Whether the base measure `h` is constant, so that the entropy natural
    /// gradient is exactly `-lambda`.
    pub fn has_constant_base_measure(&self) -> bool {
        matches!(self, FamilyKind::GaussDiag { .. } | FamilyKind::GaussFull { .. } | FamilyKind::BernoulliPm1 { .. })
    }

    pub fn is_gaussian(&self) -> bool {
        !matches!(self, FamilyKind::BernoulliPm1 { .. })
    }

    fn gaussian_structure(&self) -> Option<Structure> {
        match self {
            FamilyKind::GaussIso { precision, .. } => Some(Structure::Iso(*precision)),
            FamilyKind::GaussDiag { .. } => Some(Structure::Diag),
            FamilyKind::GaussFull { .. } | FamilyKind::GaussMixture { .. } => Some(Structure::Full),
            FamilyKind::BernoulliPm1 { .. } => None,
        }
    }

    fn weights(&self) -> Vec<f64> {
        match self {
            FamilyKind::GaussMixture { weights, .. } => weights.clone(),
            _ => vec![1.0],
        }
    }

    fn block_len(&self) -> usize {
        self.flat_len() / self.components()
    }
}

/// Natural parameters `lambda`; always inside the family's domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    family: FamilyKind,
    values: DVector<f64>,
}

/// Expectation parameters `mu = grad A(lambda)`; always inside the mean domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationParams {
    family: FamilyKind,
    values: DVector<f64>,
}

/// Means, precisions and weights of a Gaussian or Gaussian-mixture candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentView {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianMoments>,
}

impl MomentView {
    pub fn single(mean: DVector<f64>, precision: Precision) -> Self {
        Self { weights: vec![1.0], components: vec![GaussianMoments { mean, precision }] }
    }
}

impl NaturalParams {
    /// Checks length and domain.
    pub fn new(family: FamilyKind, values: DVector<f64>) -> Result<Self> {
        family.validate()?;
        crate::error::check_dim(family.flat_len(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("natural parameters must be finite".into()));
        }
        let out = Self { family, values };
        if out.family.is_gaussian() {
            out.moments()?;
        }
        Ok(out)
    }

    /// Like [`NaturalParams::new`] but first applies the numerical safeguards:
    /// diagonal precisions in `(0, PRECISION_FLOOR)` are raised to the floor
    /// (keeping the mean), and Bernoulli parameters are capped at `LOGIT_CAP`.
    pub fn new_guarded(family: FamilyKind, mut values: DVector<f64>) -> Result<Self> {
        crate::error::check_dim(family.flat_len(), values.len())?;
        match family {
            FamilyKind::GaussDiag { dim } => {
                for i in 0..dim {
                    let s = -2.0 * values[dim + i];
                    if s > 0.0 && s < PRECISION_FLOOR {
                        let m = values[i] / s;
                        values[i] = PRECISION_FLOOR * m;
                        values[dim + i] = -0.5 * PRECISION_FLOOR;
                    }
                }
            }
            FamilyKind::BernoulliPm1 { .. } => values.apply(|v| *v = v.clamp(-LOGIT_CAP, LOGIT_CAP)),
            _ => {}
        }
        Self::new(family, values)
    }

    pub fn from_moments(family: FamilyKind, view: &MomentView) -> Result<Self> {
        family.validate()?;
        let structure = family
            .gaussian_structure()
            .ok_or_else(|| Error::Unsupported("moment view of a Bernoulli family".into()))?;
        crate::error::check_dim(family.components(), view.components.len())?;
        let mut out = Vec::with_capacity(family.flat_len());
        for g in &view.components {
            crate::error::check_dim(family.dim(), g.dim())?;
            g.precision.check()?;
            out.extend(gaussian::natural_from_moments(structure, g).iter());
        }
        Self::new(family, DVector::from_vec(out))
    }

    pub fn gauss_full(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let family = FamilyKind::GaussFull { dim: mean.len() };
        Self::from_moments(family, &MomentView::single(mean, Precision::Full(precision)))
    }

    pub fn gauss_diag(mean: DVector<f64>, precision: DVector<f64>) -> Result<Self> {
        let family = FamilyKind::GaussDiag { dim: mean.len() };
        Self::from_moments(family, &MomentView::single(mean, Precision::Diag(precision)))
    }

    pub fn gauss_iso(mean: DVector<f64>, precision: f64) -> Result<Self> {
        let family = FamilyKind::GaussIso { dim: mean.len(), precision };
        Self::from_moments(family, &MomentView::single(mean, Precision::Scalar(precision)))
    }

    pub fn bernoulli(lambda: DVector<f64>) -> Result<Self> {
        Self::new(FamilyKind::BernoulliPm1 { dim: lambda.len() }, lambda)
    }

    pub fn bernoulli_from_probs(p: &DVector<f64>) -> Result<Self> {
        if p.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(Error::Domain("probabilities must lie in (0, 1)".into()));
        }
        Self::bernoulli(p.map(|x| 0.5 * (x / (1.0 - x)).ln()))
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<(DVector<f64>, DMatrix<f64>)>) -> Result<Self> {
        let dim = components.first().map(|c| c.0.len()).unwrap_or(0);
        let family = FamilyKind::GaussMixture { dim, weights: weights.clone() };
        let view = MomentView {
            weights,
            components: components
                .into_iter()
                .map(|(mean, s)| GaussianMoments { mean, precision: Precision::Full(s) })
                .collect(),
        };
        Self::from_moments(family, &view)
    }

    pub fn family(&self) -> &FamilyKind {
        &self.family
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// Flat natural parameters of component `k` (the whole vector for plain families).
    pub fn component(&self, k: usize) -> &[f64] {
        let b = self.family.block_len();
        &self.values.as_slice()[k * b..(k + 1) * b]
    }

    pub fn moments(&self) -> Result<MomentView> {
        let structure = self
            .family
            .gaussian_structure()
            .ok_or_else(|| Error::Unsupported("moment view of a Bernoulli family".into()))?;
        let p = self.family.dim();
        let components = (0..self.family.components())
            .map(|k| gaussian::moments_from_natural(structure, p, self.component(k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MomentView { weights: self.family.weights(), components })
    }

    /// Mean of a single Gaussian, or the mean `tanh(lambda)` of a Bernoulli.
    pub fn mean(&self) -> Result<DVector<f64>> {
        if let FamilyKind::BernoulliPm1 { .. } = self.family {
            return Ok(self.values.map(f64::tanh));
        }
        let view = self.moments()?;
        if view.components.len() != 1 {
            return Err(Error::Unsupported("single mean of a mixture".into()));
        }
        Ok(view.components[0].mean.clone())
    }
}

impl ExpectationParams {
    pub fn new(family: FamilyKind, values: DVector<f64>) -> Result<Self> {
        family.validate()?;
        crate::error::check_dim(family.flat_len(), values.len())?;
        let out = Self { family, values };
        // domain check through the inverse map
        to_natural(&out)?;
        Ok(out)
    }

    pub fn family(&self) -> &FamilyKind {
        &self.family
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    fn component(&self, k: usize) -> &[f64] {
        let b = self.family.block_len();
        &self.values.as_slice()[k * b..(k + 1) * b]
    }
}

/// `mu = grad A(lambda)`.
pub fn to_expectation(lambda: &NaturalParams) -> Result<ExpectationParams> {
    let family = lambda.family.clone();
    let values = match &family {
        FamilyKind::BernoulliPm1 { .. } => bernoulli::to_expectation(&lambda.values),
        _ => {
            let structure = family.gaussian_structure().expect("gaussian");
            let view = lambda.moments()?;
            let mut out = Vec::with_capacity(family.flat_len());
            for (w, g) in view.weights.iter().zip(&view.components) {
                out.extend(gaussian::expectation_from_moments(structure, g)?.iter().map(|x| w * x));
            }
            DVector::from_vec(out)
        }
    };
    Ok(ExpectationParams { family, values })
}

/// `lambda = grad A*(mu)`, the exact inverse of [`to_expectation`].
pub fn to_natural(mu: &ExpectationParams) -> Result<NaturalParams> {
    let family = mu.family.clone();
    let values = match &family {
        FamilyKind::BernoulliPm1 { .. } => bernoulli::to_natural(&mu.values)?,
        _ => {
            let structure = family.gaussian_structure().expect("gaussian");
            let p = family.dim();
            let mut out = Vec::with_capacity(family.flat_len());
            for (k, w) in family.weights().iter().enumerate() {
                if *w <= 0.0 {
                    return Err(Error::Domain(format!("component {k} has zero weight; its parameters are not identifiable")));
                }
                let block: Vec<f64> = mu.component(k).iter().map(|x| x / w).collect();
                let g = gaussian::moments_from_expectation(structure, p, &block)?;
                out.extend(gaussian::natural_from_moments(structure, &g).iter());
            }
            DVector::from_vec(out)
        }
    };
    Ok(NaturalParams { family, values })
}

pub fn log_partition(lambda: &NaturalParams) -> Result<f64> {
    match &lambda.family {
        FamilyKind::BernoulliPm1 { .. } => Ok(bernoulli::log_partition(&lambda.values)),
        family => {
            let structure = family.gaussian_structure().expect("gaussian");
            let view = lambda.moments()?;
            let mut total = 0.0;
            for (w, g) in view.weights.iter().zip(&view.components) {
                total += w * gaussian::log_partition(structure, g)?;
            }
            Ok(total)
        }
    }
}

/// Convex conjugate `A*(mu) = <lambda, mu> - A(lambda)`.
pub fn dual_log_partition(mu: &ExpectationParams) -> Result<f64> {
    let lambda = to_natural(mu)?;
    Ok(lambda.values.dot(&mu.values) - log_partition(&lambda)?)
}

/// Bregman divergence of `A*`: `D(mu1 || mu2) = A*(mu1) - A*(mu2) - <mu1 - mu2, lambda2>`.
/// For exponential families this equals `KL(q1 || q2)`.
pub fn bregman_dual(mu1: &ExpectationParams, mu2: &ExpectationParams) -> Result<f64> {
    check_same_family(&mu1.family, &mu2.family)?;
    let lambda2 = to_natural(mu2)?;
    Ok(dual_log_partition(mu1)? - dual_log_partition(mu2)? - (&mu1.values - &mu2.values).dot(&lambda2.values))
}

/// `grad^2 A(lambda)` in flat coordinates.
pub fn fisher(lambda: &NaturalParams) -> Result<DMatrix<f64>> {
    match &lambda.family {
        FamilyKind::BernoulliPm1 { .. } => Ok(bernoulli::fisher(&lambda.values)),
        family => {
            let structure = family.gaussian_structure().expect("gaussian");
            let view = lambda.moments()?;
            let b = family.block_len();
            let n = family.flat_len();
            let mut f = DMatrix::zeros(n, n);
            for (k, (w, g)) in view.weights.iter().zip(&view.components).enumerate() {
                let block = gaussian::fisher(structure, g)? * *w;
                f.view_mut((k * b, k * b), (b, b)).copy_from(&block);
            }
            Ok(f)
        }
    }
}

/// Closed-form entropy; mixtures have none, see [`entropy_mc`].
pub fn entropy(lambda: &NaturalParams) -> Result<f64> {
    match &lambda.family {
        FamilyKind::BernoulliPm1 { .. } => Ok(bernoulli::entropy(&lambda.values)),
        FamilyKind::GaussMixture { .. } => Err(Error::Unsupported("closed-form entropy of a mixture; use entropy_mc".into())),
        _ => gaussian::entropy(&lambda.moments()?.components[0]),
    }
}

/// Monte-Carlo entropy estimate `-mean log q(theta_i)` with its standard error.
pub fn entropy_mc(lambda: &NaturalParams, rng: &mut Rng, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidArgument("entropy_mc needs at least two samples".into()));
    }
    let draws = sample(lambda, rng, n)?;
    let vals = draws.iter().map(|t| log_pdf(lambda, t).map(|v| -v)).collect::<Result<Vec<_>>>()?;
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

/// Natural gradient of the entropy, `-lambda`, for families with constant base measure.
pub fn entropy_natgrad(lambda: &NaturalParams) -> Result<DVector<f64>> {
    if !lambda.family.has_constant_base_measure() {
        return Err(Error::Unsupported(format!(
            "entropy natural gradient of {} (base measure is not constant)",
            lambda.family.name()
        )));
    }
    Ok(-&lambda.values)
}

/// `n` independent draws; mixtures draw the component index first.
pub fn sample(lambda: &NaturalParams, rng: &mut Rng, n: usize) -> Result<Vec<DVector<f64>>> {
    if let FamilyKind::BernoulliPm1 { .. } = lambda.family {
        let p = lambda.values.map(|l| 0.5 * (1.0 + l.tanh()));
        return Ok((0..n).map(|_| bernoulli::sample(&p, rng)).collect());
    }
    let view = lambda.moments()?;
    let samplers = view.components.iter().map(gaussian::sampler).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k = if samplers.len() == 1 { 0 } else { draw_index(&view.weights, rng) };
        out.push(samplers[k](rng));
    }
    Ok(out)
}

fn draw_index(weights: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

pub fn log_pdf(lambda: &NaturalParams, theta: &DVector<f64>) -> Result<f64> {
    crate::error::check_dim(lambda.family.dim(), theta.len())?;
    if let FamilyKind::BernoulliPm1 { .. } = lambda.family {
        return bernoulli::log_pdf(&lambda.values, theta);
    }
    let view = lambda.moments()?;
    Ok(log_sum_exp(&weighted_log_densities(&view, theta)?))
}

fn weighted_log_densities(view: &MomentView, theta: &DVector<f64>) -> Result<Vec<f64>> {
    view.weights
        .iter()
        .zip(&view.components)
        .map(|(w, g)| Ok(w.ln() + gaussian::log_pdf(g, theta)?))
        .collect()
}

/// Posterior component probabilities `r_k(theta)`.
pub fn responsibility(lambda: &NaturalParams, theta: &DVector<f64>) -> Result<DVector<f64>> {
    crate::error::check_dim(lambda.family.dim(), theta.len())?;
    let view = lambda.moments()?;
    let logs = weighted_log_densities(&view, theta)?;
    let z = log_sum_exp(&logs);
    Ok(DVector::from_iterator(logs.len(), logs.iter().map(|l| (l - z).exp())))
}

/// How [`mixture_logq_derivs`] treats the coupling between components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogqMode {
    Exact,
    /// Components assumed far apart and `theta` attributed to component `k`:
    /// `grad = S_k (m_k - theta)`, `hess = -S_k` (so `(0, -S_k)` at `theta = m_k`).
    FarApart { component: usize },
}

/// Gradient and Hessian of `log q(theta)` for a Gaussian or Gaussian mixture.
///
/// With `v_j = S_j (m_j - theta)` and `g = sum_j r_j v_j`:
/// `grad = g`, `hess = sum_j r_j (v_j v_j^T - S_j) - g g^T`.
pub fn mixture_logq_derivs(
    lambda: &NaturalParams,
    theta: &DVector<f64>,
    mode: LogqMode,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    crate::error::check_dim(lambda.family.dim(), theta.len())?;
    let view = lambda.moments()?;
    let p = theta.len();
    if let LogqMode::FarApart { component } = mode {
        let g = view
            .components
            .get(component)
            .ok_or_else(|| Error::InvalidArgument(format!("component {component} out of range")))?;
        let s = g.precision.to_matrix(p);
        return Ok((g.precision.apply(&(&g.mean - theta)), -s));
    }
    let r = responsibility(lambda, theta)?;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    for (rj, g) in r.iter().zip(&view.components) {
        if *rj == 0.0 {
            continue;
        }
        let v = g.precision.apply(&(&g.mean - theta));
        hess += (&v * v.transpose() - g.precision.to_matrix(p)) * *rj;
        grad += v * *rj;
    }
    hess -= &grad * grad.transpose();
    Ok((grad, crate::linalg::symmetrize(&hess)))
}

/// `KL(q1 || q2) = A(lambda2) - A(lambda1) - <lambda2 - lambda1, mu1>`.
pub fn kl_divergence(q1: &NaturalParams, q2: &NaturalParams) -> Result<f64> {
    check_same_family(&q1.family, &q2.family)?;
    if let FamilyKind::GaussMixture { .. } = q1.family {
        return Err(Error::Unsupported("closed-form KL between mixtures".into()));
    }
    let mu1 = to_expectation(q1)?;
    Ok(log_partition(q2)? - log_partition(q1)? - (&q2.values - &q1.values).dot(&mu1.values))
}

fn check_same_family(a: &FamilyKind, b: &FamilyKind) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("family mismatch: {} vs {}", a.name(), b.name())))
    }
}
