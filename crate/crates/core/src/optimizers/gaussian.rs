//! Gaussian presets: gradient descent, online Newton and the diagonal family.

use nalgebra::{DMatrix, DVector};

use super::{full_natural, gaussian_residual, two_rates, OptState, Optimizer, OptimizerSpec};
use crate::blr::{blr_step_momentum, fixed_point_residual, BlrState, Schedule, MAX_HALVINGS};
use crate::estimators::{
    average_at_points, delta_estimate, draw_points, EstimatorConfig, EstimatorMode, GradHessEstimate, Shape,
};
use crate::expfam::gaussian::{GaussianMoments, Precision};
use crate::expfam::{NaturalParams, PRECISION_FLOOR};
use crate::linalg::{max_abs, rng_from_seed, symmetrize, Rng};
use crate::problems::{Batch, Objective};
use crate::{Error, Result};

/// Gradient / curvature estimate under `N(m, S^-1)` without a round trip
/// through natural parameters, so the delta method sees `m` bit-for-bit.
pub(crate) fn gauss_estimate(
    obj: &dyn Objective,
    m: &DVector<f64>,
    precision: Precision,
    cfg: &EstimatorConfig,
    batch: Batch,
    shape: Shape,
    rng: &mut Rng,
) -> Result<GradHessEstimate> {
    match cfg.mode {
        EstimatorMode::Delta => delta_estimate(obj, m, batch, cfg.hessian, shape),
        EstimatorMode::MonteCarlo { samples } | EstimatorMode::WeightPerturb { samples } => {
            cfg.validate()?;
            let g = GaussianMoments { mean: m.clone(), precision };
            let points = draw_points(&g, samples, cfg.common_noise, rng)?;
            average_at_points(obj, &points, batch, cfg.hessian, shape)
        }
    }
}

/// `S' = (1 - rho) S + rho H`, then `m' = m - rho S'^-1 g`. `rho` is halved while
/// `S'` is not positive definite.
pub fn newton_update(
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    rho: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut r = rho;
    for _ in 0..=MAX_HALVINGS {
        let s_new = symmetrize(&(s * (1.0 - r) + h * r));
        if s_new.iter().all(|x| x.is_finite()) {
            if let Some(ch) = s_new.clone().cholesky() {
                let m_new = m - ch.solve(g) * r;
                return Ok((m_new, s_new));
            }
        }
        r *= 0.5;
    }
    Err(Error::StepFailure { halvings: MAX_HALVINGS })
}

/// gd / sgd: the rule on `N(m, s0^-1 I)` with fixed `s0`, giving
/// `m' = m - (rho / s0) g`.
pub struct IsoGradient {
    name: &'static str,
    state: BlrState,
    cfg: EstimatorConfig,
    schedule: Schedule,
    full_batch: bool,
}

impl Optimizer for IsoGradient {
    fn name(&self) -> &str {
        self.name
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        let batch = if self.full_batch { None } else { batch };
        self.state = blr_step_momentum(&self.state, obj, &self.cfg, &self.schedule, batch)?;
        Ok(())
    }
    fn eval_point(&self) -> DVector<f64> {
        self.state.lambda.mean().expect("isotropic mean is always available")
    }
    fn lambda_norm(&self) -> f64 {
        self.state.lambda.values().norm()
    }
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        fixed_point_residual(&self.state.lambda, obj, &self.cfg, None, &mut self.state.rng.clone())
    }
    fn state(&self) -> OptState {
        let p = self.state.lambda.values().len();
        let s = match self.state.lambda.family() {
            crate::expfam::FamilyKind::GaussIso { precision, .. } => *precision,
            _ => unreachable!("isotropic family"),
        };
        OptState::Gaussian { mean: self.eval_point(), precision: DMatrix::identity(p, p) * s }
    }
}

fn build_iso(name: &'static str, full_batch: bool, spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    let m = spec.initial_mean(obj.dim(), seed)?;
    let lambda = NaturalParams::gauss_iso(m, spec.extras.init_precision)?;
    Ok(Box::new(IsoGradient {
        name,
        state: BlrState::new(lambda, seed),
        cfg: spec.estimator.clone(),
        schedule: spec.schedule,
        full_batch,
    }))
}

pub(super) fn build_gd(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    build_iso("gd", true, spec, obj, seed)
}

pub(super) fn build_sgd(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    build_iso("sgd", false, spec, obj, seed)
}

/// Online Newton on a full-covariance Gaussian.
pub struct Newton {
    pub m: DVector<f64>,
    pub s: DMatrix<f64>,
    cfg: EstimatorConfig,
    schedule: Schedule,
    step: u64,
    rng: Rng,
}

impl Newton {
    pub fn new(m: DVector<f64>, s: DMatrix<f64>, cfg: EstimatorConfig, schedule: Schedule, seed: u64) -> Result<Self> {
        crate::error::check_dim(m.len(), s.nrows())?;
        crate::linalg::spd_cholesky(&s, "initial precision")?;
        Ok(Self { m, s, cfg, schedule, step: 0, rng: rng_from_seed(seed, super::NOISE_STREAM) })
    }
}

impl Optimizer for Newton {
    fn name(&self) -> &str {
        "newton"
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        let est = gauss_estimate(obj, &self.m, Precision::Full(self.s.clone()), &self.cfg, batch, Shape::Full, &mut self.rng)?;
        let rho = self.schedule.rho.at(self.step);
        let (m, s) = newton_update(&self.m, &self.s, &est.g, &est.h.to_matrix(), rho)?;
        self.m = m;
        self.s = s;
        self.step += 1;
        Ok(())
    }
    fn eval_point(&self) -> DVector<f64> {
        self.m.clone()
    }
    fn lambda_norm(&self) -> f64 {
        full_natural(&self.m, &self.s).norm()
    }
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        let mut rng = self.rng.clone();
        let est = gauss_estimate(obj, &self.m, Precision::Full(self.s.clone()), &self.cfg, None, Shape::Full, &mut rng)?;
        Ok(gaussian_residual(&est.g, &est.h.to_matrix(), &self.m, &self.s))
    }
    fn state(&self) -> OptState {
        OptState::Gaussian { mean: self.m.clone(), precision: self.s.clone() }
    }
}

pub(super) fn build_newton(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    spec.require_no_momentum()?;
    let p = obj.dim();
    let m = spec.initial_mean(p, seed)?;
    let s = DMatrix::identity(p, p) * spec.extras.init_precision;
    Ok(Box::new(Newton::new(m, s, spec.estimator.clone(), spec.schedule, seed)?))
}

/// Diagonal Gaussian `N(m, diag(s)^-1)`:
/// `s' = (1 - beta) s + beta h`, `m' = m - alpha g / s'`.
///
/// With `alpha = beta = rho` this is the rule itself; OGN and VOGN are this
/// recursion with Gauss-Newton curvature at the mean and under weight
/// perturbation respectively.
pub struct DiagNewton {
    name: &'static str,
    pub m: DVector<f64>,
    pub s: DVector<f64>,
    spec: OptimizerSpec,
    step: u64,
    rng: Rng,
}

impl DiagNewton {
    pub fn new(name: &'static str, m: DVector<f64>, s: DVector<f64>, spec: OptimizerSpec, seed: u64) -> Result<Self> {
        crate::error::check_dim(m.len(), s.len())?;
        if s.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Domain("diagonal precision must be positive".into()));
        }
        Ok(Self { name, m, s, spec, step: 0, rng: rng_from_seed(seed, super::NOISE_STREAM) })
    }

    /// Applies one update from a given gradient and curvature diagonal.
    pub fn apply(&mut self, g: &DVector<f64>, h: &DVector<f64>) -> Result<()> {
        crate::error::check_dim(self.m.len(), g.len())?;
        crate::error::check_dim(self.m.len(), h.len())?;
        let (mut a, mut b) = two_rates(&self.spec, self.step, None);
        for _ in 0..=MAX_HALVINGS {
            let s_new = &self.s * (1.0 - b) + h * b;
            if s_new.iter().all(|x| x.is_finite() && *x > 0.0) {
                let s_new = s_new.map(|x| x.max(PRECISION_FLOOR));
                self.m -= g.component_div(&s_new) * a;
                self.s = s_new;
                self.step += 1;
                return Ok(());
            }
            a *= 0.5;
            b *= 0.5;
        }
        Err(Error::StepFailure { halvings: MAX_HALVINGS })
    }
}

impl Optimizer for DiagNewton {
    fn name(&self) -> &str {
        self.name
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        let cfg = &self.spec.estimator;
        let est = gauss_estimate(obj, &self.m, Precision::Diag(self.s.clone()), cfg, batch, Shape::Diag, &mut self.rng)?;
        self.apply(&est.g, &est.h.diagonal())
    }
    fn eval_point(&self) -> DVector<f64> {
        self.m.clone()
    }
    fn lambda_norm(&self) -> f64 {
        let a = self.s.component_mul(&self.m);
        (a.norm_squared() + 0.25 * self.s.norm_squared()).sqrt()
    }
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        let mut rng = self.rng.clone();
        let cfg = &self.spec.estimator;
        let est = gauss_estimate(obj, &self.m, Precision::Diag(self.s.clone()), cfg, None, Shape::Diag, &mut rng)?;
        let h = est.h.diagonal();
        let a = &est.g - h.component_mul(&self.m) + self.s.component_mul(&self.m);
        let b = (h - &self.s) * 0.5;
        Ok(max_abs(&a).max(max_abs(&b)))
    }
    fn state(&self) -> OptState {
        OptState::Diagonal { mean: self.m.clone(), scale: self.s.clone() }
    }
}

fn build_diag(name: &'static str, spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    spec.require_no_momentum()?;
    let p = obj.dim();
    let m = spec.initial_mean(p, seed)?;
    let s = DVector::from_element(p, spec.extras.init_precision);
    Ok(Box::new(DiagNewton::new(name, m, s, spec.clone(), seed)?))
}

pub(super) fn build_diag_newton(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    build_diag("diag-newton", spec, obj, seed)
}

pub(super) fn build_ogn(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    if spec.estimator.mode != EstimatorMode::Delta {
        return Err(Error::InvalidArgument("ogn evaluates at the mean; use the delta estimator (or vogn)".into()));
    }
    build_diag("ogn", spec, obj, seed)
}

pub(super) fn build_vogn(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    if spec.estimator.mode == EstimatorMode::Delta {
        return Err(Error::InvalidArgument("vogn needs a sampling estimator (mc or weight-perturb)".into()));
    }
    build_diag("vogn", spec, obj, seed)
}
