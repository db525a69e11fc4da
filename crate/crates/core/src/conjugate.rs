//! Conjugate models, where one step of the rule with `rho = 1` is exact Bayes,
//! and EM / stochastic VI for a two-component Gaussian mixture.

use nalgebra::{DMatrix, DVector};

use crate::expfam::{FamilyKind, NaturalParams};
use crate::linalg::{log_sum_exp, spd_cholesky, sym_to_flat};
use crate::problems::{Batch, Dataset};
use crate::{Error, Result};

type SiteFn<Y> = Box<dyn Fn(&Y) -> Result<DVector<f64>> + Send + Sync>;

/// Prior natural parameters and the natural parameters `lambda~_i(y_i)`
/// contributed by each observation, in the prior's coordinates.
pub struct ConjugateModel<Y> {
    pub prior: NaturalParams,
    pub site: SiteFn<Y>,
}

impl<Y> ConjugateModel<Y> {
    pub fn new(prior: NaturalParams, site: impl Fn(&Y) -> Result<DVector<f64>> + Send + Sync + 'static) -> Self {
        Self { prior, site: Box::new(site) }
    }
}

/// `lambda* = lambda_0 + sum_i lambda~_i(y_i)`.
pub fn exact_posterior<Y>(model: &ConjugateModel<Y>, data: &[Y]) -> Result<NaturalParams> {
    let mut total = model.prior.values().clone();
    for y in data {
        let s = (model.site)(y)?;
        crate::error::check_dim(total.len(), s.len())?;
        total += s;
    }
    NaturalParams::new(model.prior.family().clone(), total)
}

fn full_gaussian_natural(a: DVector<f64>, s: &DMatrix<f64>) -> DVector<f64> {
    let b = sym_to_flat(&(s * -0.5));
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Unknown mean `theta` with prior `N(m0, S0^-1)` and observations
/// `y ~ N(theta, tau^-1 I)`.
pub fn gaussian_mean_model(m0: DVector<f64>, s0: DMatrix<f64>, tau: f64) -> Result<ConjugateModel<DVector<f64>>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise precision must be positive, got {tau}")));
    }
    let p = m0.len();
    let prior = NaturalParams::gauss_full(m0, s0)?;
    let noise = DMatrix::identity(p, p) * tau;
    Ok(ConjugateModel::new(prior, move |y: &DVector<f64>| {
        crate::error::check_dim(p, y.len())?;
        Ok(full_gaussian_natural(y * tau, &noise))
    }))
}

/// Bayesian linear regression with unit noise and prior `N(0, delta^-1 I)`;
/// observations are `(x_i, y_i)`.
pub fn ridge_model(dim: usize, delta: f64) -> Result<ConjugateModel<(DVector<f64>, f64)>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge needs delta > 0, got {delta}")));
    }
    let prior = NaturalParams::gauss_full(DVector::zeros(dim), DMatrix::identity(dim, dim) * delta)?;
    Ok(ConjugateModel::new(prior, move |(x, y): &(DVector<f64>, f64)| {
        crate::error::check_dim(dim, x.len())?;
        Ok(full_gaussian_natural(x * *y, &(x * x.transpose())))
    }))
}

/// `S* = X^T X + delta I`, `m* = S*^-1 X^T y`.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, delta: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    crate::error::check_dim(x.nrows(), y.len())?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge needs delta > 0, got {delta}")));
    }
    let p = x.ncols();
    let s = x.transpose() * x + DMatrix::identity(p, p) * delta;
    let m = spd_cholesky(&s, "ridge precision")?.solve(&(x.transpose() * y));
    Ok((m, s))
}

/// Two unit-variance components with weights 1/2 and unknown means; each mean
/// has the prior `N(0, alpha^-1 I)` (used by SVI; EM is maximum likelihood).
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    /// One observation per row.
    pub data: DMatrix<f64>,
    pub prior_precision: f64,
}

pub const GMM_COMPONENTS: usize = 2;

impl GmmModel {
    pub fn new(data: DMatrix<f64>, prior_precision: f64) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument("mixture model needs at least one observation".into()));
        }
        if !(prior_precision > 0.0 && prior_precision.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior precision must be positive, got {prior_precision}")));
        }
        Ok(Self { data, prior_precision })
    }

    pub fn from_dataset(data: &Dataset, prior_precision: f64) -> Result<Self> {
        Self::new(data.x.clone(), prior_precision)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }

    fn check_means(&self, means: &[DVector<f64>]) -> Result<()> {
        crate::error::check_dim(GMM_COMPONENTS, means.len())?;
        means.iter().try_for_each(|m| crate::error::check_dim(self.dim(), m.len()))
    }
}

/// Normalises per-row log weights.
fn normalise(logits: &[[f64; GMM_COMPONENTS]]) -> DMatrix<f64> {
    DMatrix::from_fn(logits.len(), GMM_COMPONENTS, |i, k| {
        let z = log_sum_exp(&logits[i]);
        (logits[i][k] - z).exp()
    })
}

/// `sum_i log sum_k 1/2 N(y_i | m_k, I)`.
pub fn marginal_loglik(model: &GmmModel, means: &[DVector<f64>]) -> Result<f64> {
    model.check_means(means)?;
    let c = -0.5 * model.dim() as f64 * (2.0 * std::f64::consts::PI).ln() - (GMM_COMPONENTS as f64).ln();
    Ok((0..model.len())
        .map(|i| {
            let y = model.row(i);
            let terms: Vec<f64> = means.iter().map(|m| c - 0.5 * (&y - m).norm_squared()).collect();
            log_sum_exp(&terms)
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub means: Vec<DVector<f64>>,
    /// `N x 2` responsibilities from the last E-step (empty before the first).
    pub responsibilities: DMatrix<f64>,
}

impl EmState {
    pub fn new(means: Vec<DVector<f64>>) -> Self {
        Self { means, responsibilities: DMatrix::zeros(0, GMM_COMPONENTS) }
    }
}

/// Exact responsibilities at point means.
pub fn e_step(model: &GmmModel, means: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    model.check_means(means)?;
    let logits: Vec<[f64; GMM_COMPONENTS]> = (0..model.len())
        .map(|i| {
            let y = model.row(i);
            [0, 1].map(|k| -0.5 * (&y - &means[k]).norm_squared())
        })
        .collect();
    Ok(normalise(&logits))
}

/// One E-step at the current means followed by the M-step
/// `m_k = sum_i r_ik y_i / sum_i r_ik`. A component without responsibility
/// keeps its mean.
pub fn em_step(state: &EmState, model: &GmmModel) -> Result<EmState> {
    if model.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let r = e_step(model, &state.means)?;
    let means = (0..GMM_COMPONENTS)
        .map(|k| {
            let w = r.column(k).sum();
            if w > 0.0 {
                model.data.transpose() * r.column(k) / w
            } else {
                state.means[k].clone()
            }
        })
        .collect();
    Ok(EmState { means, responsibilities: r })
}

/// Global `q(m_k) = N(mu_k, Lambda_k^-1 I)` stored as `(Lambda_k mu_k, Lambda_k)`,
/// and the local responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SviState {
    pub eta: Vec<(DVector<f64>, f64)>,
    pub responsibilities: DMatrix<f64>,
}

impl SviState {
    pub fn new(model: &GmmModel, means: &[DVector<f64>], precision: f64) -> Result<Self> {
        model.check_means(means)?;
        if !(precision > 0.0) {
            return Err(Error::InvalidArgument(format!("precision must be positive, got {precision}")));
        }
        Ok(Self {
            eta: means.iter().map(|m| (m * precision, precision)).collect(),
            responsibilities: DMatrix::from_element(model.len(), GMM_COMPONENTS, 0.5),
        })
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        self.eta.iter().map(|(a, l)| a / *l).collect()
    }

    /// Posterior standard deviation of each coordinate of each mean.
    pub fn std_devs(&self) -> Vec<f64> {
        self.eta.iter().map(|(_, l)| 1.0 / l.sqrt()).collect()
    }

    /// Natural parameters of the global factor as a product of Gaussians,
    /// `[Lambda mu; flat(-Lambda I / 2)]` per component.
    pub fn natural(&self, k: usize) -> Result<NaturalParams> {
        let (a, l) = &self.eta[k];
        let p = a.len();
        NaturalParams::new(FamilyKind::GaussFull { dim: p }, full_gaussian_natural(a.clone(), &(DMatrix::identity(p, p) * *l)))
    }
}

/// Responsibilities under the global factor:
/// `r_ik ∝ exp(mu_k^T y_i - (|mu_k|^2 + D / Lambda_k) / 2)`.
fn local_update(model: &GmmModel, state: &SviState, rows: &[usize]) -> Vec<[f64; GMM_COMPONENTS]> {
    let d = model.dim() as f64;
    let mus = state.means();
    rows.iter()
        .map(|&i| {
            let y = model.row(i);
            [0, 1].map(|k| mus[k].dot(&y) - 0.5 * (mus[k].norm_squared() + d / state.eta[k].1))
        })
        .collect()
}

/// Local step with `rho = 1` on the minibatch, then
/// `eta' = (1 - rho) eta + rho (eta_0 + (N / M) sum_{i in batch} r_ik (y_i, 1))`.
pub fn svi_step(state: &SviState, model: &GmmModel, batch: Batch, rho: f64) -> Result<SviState> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1], got {rho}")));
    }
    let rows = crate::problems::resolve_batch(batch, model.len())?;
    let scale = model.len() as f64 / rows.len() as f64;
    let r = normalise(&local_update(model, state, &rows));
    let mut responsibilities = state.responsibilities.clone();
    for (j, &i) in rows.iter().enumerate() {
        responsibilities.set_row(i, &r.row(j));
    }
    let eta = (0..GMM_COMPONENTS)
        .map(|k| {
            let mut a = DVector::zeros(model.dim());
            let mut l = 0.0;
            for (j, &i) in rows.iter().enumerate() {
                a += model.row(i) * r[(j, k)];
                l += r[(j, k)];
            }
            let target_a = a * scale;
            let target_l = model.prior_precision + scale * l;
            let (ea, el) = &state.eta[k];
            (ea * (1.0 - rho) + target_a * rho, el * (1.0 - rho) + target_l * rho)
        })
        .collect();
    Ok(SviState { eta, responsibilities })
}

/// One full variational message-passing sweep: all responsibilities, then the
/// exact global factor given them.
pub fn coordinate_sweep(state: &SviState, model: &GmmModel) -> Result<SviState> {
    let rows: Vec<usize> = (0..model.len()).collect();
    let r = normalise(&local_update(model, state, &rows));
    let eta = (0..GMM_COMPONENTS)
        .map(|k| {
            let a = model.data.transpose() * r.column(k);
            (a, model.prior_precision + r.column(k).sum())
        })
        .collect();
    Ok(SviState { eta, responsibilities: r })
}
