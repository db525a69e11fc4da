//! Named optimizer presets behind a common [`Optimizer`] trait.
//!
//! Every preset is built from an [`OptimizerSpec`] through a [`Registry`] that
//! maps names to builder functions. [`run`] drives any registered preset for a
//! number of steps and records a [`RunTrace`].

mod binary;
mod dropout;
mod gaussian;
mod mixture;
mod reference;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::blr::{Rate, Schedule};
use crate::estimators::{EstimatorConfig, EstimatorMode, HessianSurrogate, DEFAULT_SAMPLES};
use crate::expfam::FamilyKind;
use crate::linalg::{rng_from_seed, sym_to_flat, Rng};
use crate::problems::{sample_minibatch, Batch, Objective};
use crate::{Error, Result};

pub use binary::{BayesBinn, SteRef};
pub use dropout::DropoutNewton;
pub use gaussian::{newton_update, DiagNewton, IsoGradient, Newton};
pub use mixture::MixtureNewton;
pub use reference::{AdamLike, RmspropRef};

/// RNG stream for minibatch selection; optimizer noise uses stream 1 and
/// random initialisation stream 3.
pub const MINIBATCH_STREAM: u64 = 0;
pub const NOISE_STREAM: u64 = 1;
pub const INIT_STREAM: u64 = 3;

/// Current parameters of an optimizer, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub enum OptState {
    Gaussian { mean: DVector<f64>, precision: DMatrix<f64> },
    Diagonal { mean: DVector<f64>, scale: DVector<f64> },
    /// Point estimate with a smoothed squared-gradient vector.
    Scaled { theta: DVector<f64>, v: DVector<f64> },
    Latent { theta_tilde: DVector<f64> },
    Bernoulli { lambda: DVector<f64> },
    Blocks { mean: DVector<f64>, blocks: Vec<(Vec<usize>, DMatrix<f64>)> },
    Mixture { weights: Vec<f64>, components: Vec<(DVector<f64>, DMatrix<f64>)> },
}

pub trait Optimizer: Send {
    fn name(&self) -> &str;

    /// One update on the given minibatch (`None` = full batch).
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()>;

    /// The point whose loss is reported: the mean for Gaussian candidates,
    /// `sign` of the latent/natural parameters for binary ones.
    fn eval_point(&self) -> DVector<f64>;

    /// Euclidean norm of the parameter vector the optimizer iterates on
    /// (natural parameters for BLR presets).
    fn lambda_norm(&self) -> f64;

    /// Full-batch stationarity measure; the BLR fixed-point residual for
    /// presets derived from the rule. Does not advance the optimizer's RNG.
    fn residual(&self, obj: &dyn Objective) -> Result<f64>;

    fn state(&self) -> OptState;

    /// True once two mixture components have merged.
    fn collapsed(&self) -> bool {
        false
    }
}

/// Knobs that only some presets read.
#[derive(Debug, Clone, PartialEq)]
pub struct Extras {
    /// Mean / point learning rate of two-rate presets; `None` uses the schedule's rho
    /// (diag-newton family) or 0.01 (reference baselines).
    pub alpha: Option<f64>,
    /// Scale learning rate of two-rate presets; `None` uses rho (diag-newton family) or 0.1.
    pub beta: Option<f64>,
    pub c: f64,
    /// Keep probability of dropout units.
    pub pi1: f64,
    /// Precision of the dropout spike component.
    pub s0: f64,
    /// Mixture components `K` (uniform weights).
    pub components: usize,
    /// Minibatch size `M`; `None` means full batch.
    pub minibatch: Option<usize>,
    /// Convergence threshold on the residual.
    pub tol: f64,
    /// Explicit starting mean (`K * P` values for mixtures).
    pub init_mean: Option<Vec<f64>>,
    /// Standard deviation of a random starting mean when `init_mean` is unset.
    pub init_scale: f64,
    /// Starting precision (also the fixed precision of gd / sgd).
    pub init_precision: f64,
    /// adam-like: divide by `sqrt(s) + c` instead of `s`.
    pub sqrt_scaling: bool,
    /// adam-like: keep the `s_prev / s'` factors of the momentum terms instead
    /// of assuming `s_t = s_{t-1}`.
    pub exact_momentum: bool,
    /// mixture-newton: treat components as far apart in the `log q` derivatives.
    pub far_apart: bool,
}

impl Default for Extras {
    fn default() -> Self {
        Self {
            alpha: None,
            beta: None,
            c: 1e-8,
            pi1: 0.9,
            s0: 1e6,
            components: 2,
            minibatch: None,
            tol: 1e-8,
            init_mean: None,
            init_scale: 0.0,
            init_precision: 1.0,
            sqrt_scaling: true,
            exact_momentum: false,
            far_apart: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub name: String,
    pub estimator: EstimatorConfig,
    pub schedule: Schedule,
    pub extras: Extras,
}

impl OptimizerSpec {
    /// The preset's defaults: rho = 0.1, and an estimator matching the algorithm
    /// (Gauss-Newton for OGN/VOGN, squared gradients for the RMSprop family,
    /// weight perturbation for VOGN).
    pub fn preset(name: &str) -> Result<Self> {
        registry().entry(name)?;
        let estimator = match name {
            "ogn" => EstimatorConfig::delta(HessianSurrogate::GaussNewton),
            "vogn" => EstimatorConfig {
                mode: EstimatorMode::WeightPerturb { samples: DEFAULT_SAMPLES },
                hessian: HessianSurrogate::GaussNewton,
                ..EstimatorConfig::default()
            },
            "rmsprop-ref" | "adam-like" => EstimatorConfig::delta(HessianSurrogate::GradMagnitude),
            "mixture-newton" => EstimatorConfig::monte_carlo(DEFAULT_SAMPLES, HessianSurrogate::Exact),
            _ => EstimatorConfig::default(),
        };
        Ok(Self { name: name.to_string(), estimator, schedule: Schedule::constant(0.1), extras: Extras::default() })
    }

    /// Candidate family the preset iterates on, for a problem of dimension `dim`.
    pub fn family(&self, dim: usize) -> Result<FamilyKind> {
        Ok(match self.name.as_str() {
            "gd" | "sgd" => FamilyKind::GaussIso { dim, precision: self.extras.init_precision },
            "newton" | "dropout-newton" => FamilyKind::GaussFull { dim },
            "diag-newton" | "ogn" | "vogn" | "adam-like" => FamilyKind::GaussDiag { dim },
            "bayesbinn" => FamilyKind::BernoulliPm1 { dim },
            "mixture-newton" => {
                let k = self.extras.components.max(1);
                FamilyKind::GaussMixture { dim, weights: vec![1.0 / k as f64; k] }
            }
            "rmsprop-ref" | "ste-ref" => {
                return Err(Error::Unsupported(format!("{} is a point method without a candidate family", self.name)))
            }
            other => return Err(Error::UnknownName(other.to_string())),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.schedule.validate()?;
        let x = &self.extras;
        if !(x.c > 0.0) {
            return Err(Error::InvalidArgument(format!("c must be positive, got {}", x.c)));
        }
        if !(x.pi1 > 0.0 && x.pi1 <= 1.0) {
            return Err(Error::InvalidArgument(format!("pi1 must lie in (0, 1], got {}", x.pi1)));
        }
        if !(x.s0 > 0.0) {
            return Err(Error::InvalidArgument(format!("spike precision must be positive, got {}", x.s0)));
        }
        if !(x.init_precision > 0.0 && x.init_precision.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial precision must be positive, got {}", x.init_precision)));
        }
        if !(x.init_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!("init scale must be >= 0, got {}", x.init_scale)));
        }
        if x.components == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        if x.minibatch == Some(0) {
            return Err(Error::EmptyBatch);
        }
        for (what, r) in [("alpha", x.alpha), ("beta", x.beta)] {
            if let Some(r) = r {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::InvalidArgument(format!("{what} must be positive, got {r}")));
                }
            }
        }
        Ok(())
    }

    fn require_no_momentum(&self) -> Result<()> {
        if self.schedule.gamma != Rate::Constant(0.0) {
            return Err(Error::Unsupported(format!("{} has no momentum form; set gamma = 0", self.name)));
        }
        Ok(())
    }

    /// Starting mean: `init_mean`, or `init_scale * N(0, I)` from the init stream.
    fn initial_mean(&self, len: usize, seed: u64) -> Result<DVector<f64>> {
        match &self.extras.init_mean {
            Some(v) => {
                crate::error::check_dim(len, v.len())?;
                Ok(DVector::from_column_slice(v))
            }
            None if self.extras.init_scale > 0.0 => {
                let mut rng = rng_from_seed(seed, INIT_STREAM);
                Ok(DVector::from_fn(len, |_, _| {
                    self.extras.init_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                }))
            }
            None => Ok(DVector::zeros(len)),
        }
    }
}

/// Builds an optimizer for a problem; the seed fixes the initialisation and
/// the optimizer's noise stream.
pub type Builder = fn(&OptimizerSpec, &dyn Objective, u64) -> Result<Box<dyn Optimizer>>;

#[derive(Clone, Copy)]
pub struct Entry {
    pub builder: Builder,
    pub summary: &'static str,
}

#[derive(Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, Entry>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("gd", gaussian::build_gd, "isotropic Gaussian BLR with delta method: gradient descent");
        r.register("sgd", gaussian::build_sgd, "gd on minibatches with a fixed isotropic preconditioner");
        r.register("newton", gaussian::build_newton, "full Gaussian BLR: online Newton");
        r.register("diag-newton", gaussian::build_diag_newton, "diagonal Gaussian BLR: smoothed diagonal Newton");
        r.register("ogn", gaussian::build_ogn, "diag-newton with Gauss-Newton curvature at the mean");
        r.register("vogn", gaussian::build_vogn, "ogn with expectations by weight perturbation");
        r.register("rmsprop-ref", reference::build_rmsprop, "reference RMSprop");
        r.register("adam-like", reference::build_adam_like, "diagonal BLR with momentum, square-root scaling");
        r.register("ste-ref", binary::build_ste, "straight-through estimator on latent weights");
        r.register("bayesbinn", binary::build_bayesbinn, "Bernoulli BLR with the Concrete relaxation");
        r.register("dropout-newton", dropout::build, "Newton on spike-and-slab units evaluated at dropout weights");
        r.register("mixture-newton", mixture::build, "Newton-like BLR on a Gaussian mixture with fixed weights");
        r
    }

    /// Adds or replaces a preset.
    pub fn register(&mut self, name: &str, builder: Builder, summary: &'static str) {
        self.entries.insert(name.to_string(), Entry { builder, summary });
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries.get(name).ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn build(&self, spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
        spec.validate()?;
        if let Some(m) = spec.extras.minibatch {
            if m > obj.len() {
                return Err(Error::InvalidArgument(format!("minibatch size {m} exceeds dataset size {}", obj.len())));
            }
        }
        (self.entry(&spec.name)?.builder)(spec, obj, seed)
    }

    /// Runs `steps` updates. Stops early on convergence (`residual <= tol`) or a
    /// failed step.
    pub fn run(&self, spec: &OptimizerSpec, obj: &dyn Objective, steps: usize, seed: u64) -> Result<RunTrace> {
        let mut opt = self.build(spec, obj, seed)?;
        drive(opt.as_mut(), spec, obj, steps, seed)
    }
}

/// The built-in presets.
pub fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(Registry::with_builtins)
}

pub fn run(spec: &OptimizerSpec, obj: &dyn Objective, steps: usize, seed: u64) -> Result<RunTrace> {
    registry().run(spec, obj, steps, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxSteps,
    StepFailure,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxSteps => "max_steps",
            RunStatus::StepFailure => "step_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    /// Full-batch objective at [`Optimizer::eval_point`].
    pub loss: f64,
    pub lambda_norm: f64,
    pub residual: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub status: RunStatus,
    pub collapsed: bool,
    pub final_state: OptState,
}

impl RunTrace {
    /// Records without the timing column, which is the only nondeterministic part.
    pub fn same_values(&self, other: &RunTrace) -> bool {
        self.status == other.status
            && self.final_state == other.final_state
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.step == b.step
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.lambda_norm.to_bits() == b.lambda_norm.to_bits()
                    && a.residual.to_bits() == b.residual.to_bits()
            })
    }
}

/// Drives an already built optimizer; the minibatch stream is derived from `seed`.
pub fn drive(opt: &mut dyn Optimizer, spec: &OptimizerSpec, obj: &dyn Objective, steps: usize, seed: u64) -> Result<RunTrace> {
    let mut batch_rng = rng_from_seed(seed, MINIBATCH_STREAM);
    let mut records = Vec::with_capacity(steps);
    let mut status = RunStatus::MaxSteps;
    let start = Instant::now();
    for t in 1..=steps {
        let batch = next_batch(&mut batch_rng, spec.extras.minibatch, obj.len())?;
        match opt.step(obj, batch.as_deref()) {
            Ok(()) => {}
            Err(Error::StepFailure { .. }) => {
                status = RunStatus::StepFailure;
                break;
            }
            Err(e) => return Err(e),
        }
        let residual = opt.residual(obj)?;
        records.push(TraceRecord {
            step: t as u64,
            loss: obj.value(&opt.eval_point(), None)?,
            lambda_norm: opt.lambda_norm(),
            residual,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if residual <= spec.extras.tol {
            status = RunStatus::Converged;
            break;
        }
    }
    Ok(RunTrace { records, status, collapsed: opt.collapsed(), final_state: opt.state() })
}

fn next_batch(rng: &mut Rng, m: Option<usize>, n: usize) -> Result<Option<Vec<usize>>> {
    match m {
        Some(m) if m < n => Ok(Some(sample_minibatch(rng, n, m)?)),
        _ => Ok(None),
    }
}

/// `sign` with `sign(0) = +1`.
pub fn sign(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// `[S m; flat(-S / 2)]`.
pub(crate) fn full_natural(m: &DVector<f64>, s: &DMatrix<f64>) -> DVector<f64> {
    let a = s * m;
    let b = sym_to_flat(&(s * -0.5));
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Infinity norm of the Gaussian natural gradient `[g - H m + S m; flat((H - S) / 2)]`.
pub(crate) fn gaussian_residual(g: &DVector<f64>, h: &DMatrix<f64>, m: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let a = g - h * m + s * m;
    let b = sym_to_flat(&((h - s) * 0.5));
    a.iter().chain(b.iter()).fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Rate pair for the diagonal presets: explicit alpha / beta or the schedule's rho.
pub(crate) fn two_rates(spec: &OptimizerSpec, t: u64, fallback: Option<(f64, f64)>) -> (f64, f64) {
    let (da, db) = fallback.unwrap_or_else(|| {
        let r = spec.schedule.rho.at(t);
        (r, r)
    });
    (spec.extras.alpha.unwrap_or(da), spec.extras.beta.unwrap_or(db))
}
