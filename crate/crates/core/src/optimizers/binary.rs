//! Binary weights: straight-through estimator and BayesBiNN.

use nalgebra::DVector;

use super::{sign, OptState, Optimizer, OptimizerSpec};
use crate::blr::{blr_step_momentum, fixed_point_residual, BlrState, Schedule};
use crate::estimators::EstimatorConfig;
use crate::expfam::NaturalParams;
use crate::linalg::max_abs;
use crate::problems::{Batch, Objective};
use crate::Result;

const DEFAULT_ALPHA: f64 = 0.01;

/// `theta~' = theta~ - alpha grad l(sign(theta~))`.
pub struct SteRef {
    pub theta_tilde: DVector<f64>,
    alpha: f64,
}

impl SteRef {
    pub fn new(theta_tilde: DVector<f64>, alpha: f64) -> Self {
        Self { theta_tilde, alpha }
    }
}

impl Optimizer for SteRef {
    fn name(&self) -> &str {
        "ste-ref"
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        let g = obj.gradient(&sign(&self.theta_tilde), batch)?;
        self.theta_tilde -= g * self.alpha;
        Ok(())
    }
    fn eval_point(&self) -> DVector<f64> {
        sign(&self.theta_tilde)
    }
    fn lambda_norm(&self) -> f64 {
        self.theta_tilde.norm()
    }
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        Ok(max_abs(&obj.gradient(&self.eval_point(), None)?))
    }
    fn state(&self) -> OptState {
        OptState::Latent { theta_tilde: self.theta_tilde.clone() }
    }
}

pub(super) fn build_ste(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    spec.require_no_momentum()?;
    let alpha = spec.extras.alpha.unwrap_or(DEFAULT_ALPHA);
    Ok(Box::new(SteRef::new(spec.initial_mean(obj.dim(), seed)?, alpha)))
}

/// The rule on independent `+-1` Bernoulli weights with Concrete gradients:
/// `lambda' = (1 - rho) lambda - rho s * grad l(theta_hat)`.
pub struct BayesBinn {
    pub state: BlrState,
    cfg: EstimatorConfig,
    schedule: Schedule,
}

impl Optimizer for BayesBinn {
    fn name(&self) -> &str {
        "bayesbinn"
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        self.state = blr_step_momentum(&self.state, obj, &self.cfg, &self.schedule, batch)?;
        Ok(())
    }
    /// Most probable weights `sign(lambda)`.
    fn eval_point(&self) -> DVector<f64> {
        sign(self.state.lambda.values())
    }
    fn lambda_norm(&self) -> f64 {
        self.state.lambda.values().norm()
    }
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        fixed_point_residual(&self.state.lambda, obj, &self.cfg, None, &mut self.state.rng.clone())
    }
    fn state(&self) -> OptState {
        OptState::Bernoulli { lambda: self.state.lambda.values().clone() }
    }
}

pub(super) fn build_bayesbinn(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    let lambda = NaturalParams::bernoulli(spec.initial_mean(obj.dim(), seed)?)?;
    Ok(Box::new(BayesBinn { state: BlrState::new(lambda, seed), cfg: spec.estimator.clone(), schedule: spec.schedule }))
}
