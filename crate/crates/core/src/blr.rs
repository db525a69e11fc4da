//! The Bayesian learning rule
//!
//! `lambda' = lambda - rho * (grad_mu E_q[l] - grad_mu H(q))`
//!
//! in flat natural coordinates, with a step-halving guard that keeps `lambda`
//! inside the natural domain.

use nalgebra::DVector;
use rand::Rng as _;

use crate::estimators::{self, draw_points, EstimatorConfig, EstimatorMode, Shape};
use crate::expfam::{self, FamilyKind, NaturalParams};
use crate::linalg::{max_abs, rng_from_seed, sym_to_flat, Rng};
use crate::problems::{Batch, Objective};
use crate::{Error, Result};

/// Maximum number of step halvings before a step is declared failed.
pub const MAX_HALVINGS: u32 = 20;

/// A learning-rate sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Constant(f64),
    /// `initial / (1 + t / offset)^power`.
    Decay { initial: f64, offset: f64, power: f64 },
}

impl Rate {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            Rate::Constant(r) => r,
            Rate::Decay { initial, offset, power } => initial / (1.0 + t as f64 / offset).powf(power),
        }
    }

    fn initial(&self) -> f64 {
        self.at(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub rho: Rate,
    pub gamma: Rate,
}

impl Schedule {
    pub fn constant(rho: f64) -> Self {
        Self { rho: Rate::Constant(rho), gamma: Rate::Constant(0.0) }
    }

    pub fn with_momentum(rho: f64, gamma: f64) -> Self {
        Self { rho: Rate::Constant(rho), gamma: Rate::Constant(gamma) }
    }

    pub fn validate(&self) -> Result<()> {
        let rho = self.rho.initial();
        let gamma = self.gamma.initial();
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1], got {rho}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if let Rate::Decay { offset, .. } = self.rho {
            if offset <= 0.0 {
                return Err(Error::InvalidArgument("decay offset must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BlrState {
    pub lambda: NaturalParams,
    /// Previous iterate; starts equal to `lambda` so the first momentum term is zero.
    pub lambda_prev: NaturalParams,
    pub step: u64,
    pub rng: Rng,
}

impl BlrState {
    pub fn new(lambda: NaturalParams, seed: u64) -> Self {
        Self { lambda_prev: lambda.clone(), lambda, step: 0, rng: rng_from_seed(seed, 1) }
    }

    fn advance(&self, lambda: NaturalParams, rng: Rng) -> Self {
        Self { lambda_prev: self.lambda.clone(), lambda, step: self.step + 1, rng }
    }
}

/// Applies `lambda + increment`, halving the increment while the result leaves
/// the domain. Returns the new parameters and the scale actually used.
pub fn guarded_update(lambda: &NaturalParams, increment: &DVector<f64>) -> Result<(NaturalParams, f64)> {
    let mut scale = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let candidate = lambda.values() + increment * scale;
        match NaturalParams::new_guarded(lambda.family().clone(), candidate) {
            Ok(next) => return Ok((next, scale)),
            Err(Error::Domain(_)) => scale *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::StepFailure { halvings: MAX_HALVINGS })
}

/// `grad_mu E_q[l]` in flat coordinates.
///
/// Gaussians use the configured estimator and the pairs `(g - H m, H / 2)`;
/// the isotropic family only needs the mean gradient. Bernoulli candidates use
/// the Concrete relaxation: `s * grad l(theta_hat)`.
pub fn loss_natgrad(
    obj: &dyn Objective,
    lambda: &NaturalParams,
    cfg: &EstimatorConfig,
    batch: Batch,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    crate::error::check_dim(lambda.family().dim(), obj.dim())?;
    match lambda.family() {
        FamilyKind::GaussIso { .. } => {
            let m = lambda.mean()?;
            match cfg.mode {
                EstimatorMode::Delta => obj.gradient(&m, batch),
                EstimatorMode::MonteCarlo { samples } | EstimatorMode::WeightPerturb { samples } => {
                    cfg.validate()?;
                    let g = lambda.moments()?.components.remove(0);
                    let points = draw_points(&g, samples, cfg.common_noise, rng)?;
                    let mut acc = DVector::zeros(m.len());
                    for p in &points {
                        acc += obj.gradient(p, batch)?;
                    }
                    Ok(acc / points.len() as f64)
                }
            }
        }
        FamilyKind::GaussDiag { .. } => {
            let m = lambda.mean()?;
            let e = estimators::estimate(obj, lambda, cfg, batch, Shape::Diag, rng)?;
            let (a, b) = estimators::natgrad_pairs_from_gh(&e.g, &e.h, &m);
            Ok(stack(&a, &b.diagonal()))
        }
        FamilyKind::GaussFull { .. } => {
            let m = lambda.mean()?;
            let e = estimators::estimate(obj, lambda, cfg, batch, Shape::Full, rng)?;
            let (a, b) = estimators::natgrad_pairs_from_gh(&e.g, &e.h, &m);
            Ok(stack(&a, &sym_to_flat(&b.to_matrix())))
        }
        FamilyKind::BernoulliPm1 { dim } => {
            let eps = if cfg.concrete.noise { Some(uniform_open(rng, *dim)) } else { None };
            let (theta, s) = estimators::concrete_relax(lambda.values(), eps.as_ref(), cfg.concrete.tau)?;
            Ok(s.component_mul(&obj.gradient(&theta, batch)?))
        }
        FamilyKind::GaussMixture { .. } => {
            Err(Error::Unsupported("plain BLR step on a mixture; use the mixture-newton optimizer".into()))
        }
    }
}

/// `grad_mu H(q)`: `-lambda` for constant base measure, zero for the isotropic
/// family (its entropy does not depend on the mean).
pub fn entropy_mu_grad(lambda: &NaturalParams) -> Result<DVector<f64>> {
    match lambda.family() {
        FamilyKind::GaussIso { .. } => Ok(DVector::zeros(lambda.values().len())),
        _ => expfam::entropy_natgrad(lambda),
    }
}

/// `grad_mu E_q[l] - grad_mu H(q)`.
pub fn natural_gradient(
    obj: &dyn Objective,
    lambda: &NaturalParams,
    cfg: &EstimatorConfig,
    batch: Batch,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    Ok(loss_natgrad(obj, lambda, cfg, batch, rng)? - entropy_mu_grad(lambda)?)
}

/// One BLR step evaluated at the current candidate.
pub fn blr_step(
    state: &BlrState,
    obj: &dyn Objective,
    cfg: &EstimatorConfig,
    schedule: &Schedule,
    batch: Batch,
) -> Result<BlrState> {
    let mut rng = state.rng.clone();
    let d = natural_gradient(obj, &state.lambda, cfg, batch, &mut rng)?;
    let rho = schedule.rho.at(state.step);
    let (next, _) = guarded_update(&state.lambda, &(d * -rho))?;
    Ok(state.advance(next, rng))
}

/// `lambda' = (1 - rho) lambda - rho * grad_mu E_q[l + log h]` for a given gradient.
pub fn blr_step_simplified(state: &BlrState, gradmu_loss_plus_logh: &DVector<f64>, schedule: &Schedule) -> Result<BlrState> {
    crate::error::check_dim(state.lambda.values().len(), gradmu_loss_plus_logh.len())?;
    let rho = schedule.rho.at(state.step);
    // increment of (1 - rho) lambda - rho g relative to lambda
    let inc = (state.lambda.values() + gradmu_loss_plus_logh) * -rho;
    let (next, _) = guarded_update(&state.lambda, &inc)?;
    Ok(state.advance(next, state.rng.clone()))
}

/// `lambda' = lambda - rho d + gamma (lambda - lambda_prev)`; the guard halves
/// the whole increment.
pub fn blr_step_momentum(
    state: &BlrState,
    obj: &dyn Objective,
    cfg: &EstimatorConfig,
    schedule: &Schedule,
    batch: Batch,
) -> Result<BlrState> {
    let mut rng = state.rng.clone();
    let d = natural_gradient(obj, &state.lambda, cfg, batch, &mut rng)?;
    let rho = schedule.rho.at(state.step);
    let gamma = schedule.gamma.at(state.step);
    let inc = d * -rho + (state.lambda.values() - state.lambda_prev.values()) * gamma;
    let (next, _) = guarded_update(&state.lambda, &inc)?;
    Ok(state.advance(next, rng))
}

/// Mirror-descent step in expectation coordinates. The proximal problem
/// `argmin <grad, mu> + D_{A*}(mu || mu_t) / rho` has the stationarity
/// condition `grad A*(mu') = lambda - rho grad`, which is solved in closed form.
pub fn mirror_step(mu: &expfam::ExpectationParams, gradmu: &DVector<f64>, rho: f64) -> Result<expfam::ExpectationParams> {
    let lambda = expfam::to_natural(mu)?;
    crate::error::check_dim(lambda.values().len(), gradmu.len())?;
    let (next, _) = guarded_update(&lambda, &(gradmu * -rho))?;
    expfam::to_expectation(&next)
}

/// Per-factor natural parameters whose sum is the global candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    pub family: FamilyKind,
    pub sites: Vec<DVector<f64>>,
}

impl SiteSet {
    pub fn global(&self) -> Result<NaturalParams> {
        let mut total = DVector::zeros(self.family.flat_len());
        for s in &self.sites {
            crate::error::check_dim(total.len(), s.len())?;
            total += s;
        }
        NaturalParams::new(self.family.clone(), total)
    }
}

/// `site_i' = (1 - rho) site_i + rho * target_i`; `rho` is halved while the sum
/// leaves the domain.
pub fn local_blr_step(sites: &SiteSet, targets: &[DVector<f64>], rho: f64) -> Result<SiteSet> {
    crate::error::check_dim(sites.sites.len(), targets.len())?;
    let mut r = rho;
    for _ in 0..=MAX_HALVINGS {
        let next = SiteSet {
            family: sites.family.clone(),
            sites: sites
                .sites
                .iter()
                .zip(targets)
                .map(|(s, t)| s * (1.0 - r) + t * r)
                .collect(),
        };
        match next.global() {
            Ok(_) => return Ok(next),
            Err(Error::Domain(_)) => r *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::StepFailure { halvings: MAX_HALVINGS })
}

/// `|grad_mu E_q[l] - grad_mu H(q)|_inf`, zero at a fixed point of the rule.
pub fn fixed_point_residual(
    lambda: &NaturalParams,
    obj: &dyn Objective,
    cfg: &EstimatorConfig,
    batch: Batch,
    rng: &mut Rng,
) -> Result<f64> {
    Ok(max_abs(&natural_gradient(obj, lambda, cfg, batch, rng)?))
}

/// Monte-Carlo estimate of `E_q[l] - H(q)` with its standard error (of the
/// expectation term; the entropy is exact).
pub fn variational_objective(lambda: &NaturalParams, obj: &dyn Objective, rng: &mut Rng, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let draws = expfam::sample(lambda, rng, n)?;
    let vals = draws.iter().map(|t| obj.value(t, None)).collect::<Result<Vec<_>>>()?;
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean - expfam::entropy(lambda)?, (var / n as f64).sqrt()))
}

fn uniform_open(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(
        n,
        (0..n).map(|_| loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        }),
    )
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

#[cfg(test)]
mod tests;
