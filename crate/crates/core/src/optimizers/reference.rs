//! Reference baselines: RMSprop and the momentum form of the diagonal rule.

use nalgebra::DVector;

use super::{two_rates, OptState, Optimizer, OptimizerSpec};
use crate::estimators::{derivatives_at, grad_magnitude_diag, HessianSurrogate, Shape};
use crate::expfam::PRECISION_FLOOR;
use crate::linalg::max_abs;
use crate::problems::{Batch, Objective};
use crate::{Error, Result};

const DEFAULT_ALPHA: f64 = 0.01;
const DEFAULT_BETA: f64 = 0.1;

/// `v' = (1 - beta) v + beta g^2`, `theta' = theta - alpha g / (sqrt(v') + c)`.
pub struct RmspropRef {
    pub theta: DVector<f64>,
    pub v: DVector<f64>,
    alpha: f64,
    beta: f64,
    c: f64,
}

impl RmspropRef {
    pub fn new(theta: DVector<f64>, v: DVector<f64>, alpha: f64, beta: f64, c: f64) -> Result<Self> {
        crate::error::check_dim(theta.len(), v.len())?;
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
        }
        Ok(Self { theta, v, alpha, beta, c })
    }

    pub fn apply(&mut self, g: &DVector<f64>) -> Result<()> {
        crate::error::check_dim(self.theta.len(), g.len())?;
        self.v = &self.v * (1.0 - self.beta) + grad_magnitude_diag(g) * self.beta;
        let denom = self.v.map(|x| x.sqrt() + self.c);
        self.theta -= g.component_div(&denom) * self.alpha;
        Ok(())
    }
}

impl Optimizer for RmspropRef {
    fn name(&self) -> &str {
        "rmsprop-ref"
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        let g = obj.gradient(&self.theta, batch)?;
        self.apply(&g)
    }
    fn eval_point(&self) -> DVector<f64> {
        self.theta.clone()
    }
    fn lambda_norm(&self) -> f64 {
        (self.theta.norm_squared() + self.v.norm_squared()).sqrt()
    }
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        Ok(max_abs(&obj.gradient(&self.theta, None)?))
    }
    fn state(&self) -> OptState {
        OptState::Scaled { theta: self.theta.clone(), v: self.v.clone() }
    }
}

pub(super) fn build_rmsprop(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    spec.require_no_momentum()?;
    let p = obj.dim();
    let theta = spec.initial_mean(p, seed)?;
    let (alpha, beta) = two_rates(spec, 0, Some((DEFAULT_ALPHA, DEFAULT_BETA)));
    Ok(Box::new(RmspropRef::new(theta, DVector::zeros(p), alpha, beta, spec.extras.c)?))
}

/// Diagonal rule with momentum `gamma`:
///
/// `s' = (1 - beta) s + beta h + gamma (s - s_prev)`,
/// `m' = m - alpha g / s' + gamma s_prev (m - m_prev) / s'`.
///
/// By default the momentum terms are simplified with `s = s_prev`
/// (`s' = (1 - beta) s + beta h`, momentum `gamma (m - m_prev)`), and `s` is
/// replaced by `sqrt(s) + c` in the mean update. No bias correction.
pub struct AdamLike {
    pub m: DVector<f64>,
    pub s: DVector<f64>,
    m_prev: DVector<f64>,
    s_prev: DVector<f64>,
    spec: OptimizerSpec,
    step: u64,
}

impl AdamLike {
    /// Starts from `(m, s)` with the given previous iterate.
    pub fn new(m: DVector<f64>, s: DVector<f64>, prev: (DVector<f64>, DVector<f64>), spec: OptimizerSpec) -> Result<Self> {
        for x in [&s, &prev.0, &prev.1] {
            crate::error::check_dim(m.len(), x.len())?;
        }
        Ok(Self { m, s, m_prev: prev.0, s_prev: prev.1, spec, step: 0 })
    }

    pub fn apply(&mut self, g: &DVector<f64>, h: &DVector<f64>) -> Result<()> {
        crate::error::check_dim(self.m.len(), g.len())?;
        crate::error::check_dim(self.m.len(), h.len())?;
        let x = &self.spec.extras;
        let (alpha, beta) = two_rates(&self.spec, self.step, Some((DEFAULT_ALPHA, DEFAULT_BETA)));
        let gamma = self.spec.schedule.gamma.at(self.step);
        let mut s_new = &self.s * (1.0 - beta) + h * beta;
        if x.exact_momentum {
            s_new += (&self.s - &self.s_prev) * gamma;
        }
        let s_new = if x.sqrt_scaling { s_new.map(|v| v.max(0.0)) } else { s_new.map(|v| v.max(PRECISION_FLOOR)) };
        let scale = |v: &DVector<f64>| if x.sqrt_scaling { v.map(|e| e.sqrt() + x.c) } else { v.clone() };
        let denom = scale(&s_new);
        let dm = &self.m - &self.m_prev;
        let momentum = if x.exact_momentum { scale(&self.s_prev).component_mul(&dm).component_div(&denom) } else { dm };
        let m_new = &self.m - g.component_div(&denom) * alpha + momentum * gamma;
        self.m_prev = std::mem::replace(&mut self.m, m_new);
        self.s_prev = std::mem::replace(&mut self.s, s_new);
        self.step += 1;
        Ok(())
    }
}

impl Optimizer for AdamLike {
    fn name(&self) -> &str {
        "adam-like"
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        let (g, h) = derivatives_at(obj, &self.m, batch, self.spec.estimator.hessian, Shape::Diag)?;
        self.apply(&g, &h.diagonal())
    }
    fn eval_point(&self) -> DVector<f64> {
        self.m.clone()
    }
    fn lambda_norm(&self) -> f64 {
        let a = self.s.component_mul(&self.m);
        (a.norm_squared() + 0.25 * self.s.norm_squared()).sqrt()
    }
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        Ok(max_abs(&obj.gradient(&self.m, None)?))
    }
    fn state(&self) -> OptState {
        OptState::Diagonal { mean: self.m.clone(), scale: self.s.clone() }
    }
}

pub(super) fn build_adam_like(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    if spec.estimator.hessian == HessianSurrogate::Exact && !obj.has_hessian() {
        return Err(Error::Unsupported(format!("exact curvature of {}", obj.name())));
    }
    let p = obj.dim();
    let m = spec.initial_mean(p, seed)?;
    let prev = (m.clone(), DVector::zeros(p));
    Ok(Box::new(AdamLike::new(m, DVector::zeros(p), prev, spec.clone())?))
}
