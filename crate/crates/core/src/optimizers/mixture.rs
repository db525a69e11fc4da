//! Newton-like rule on a Gaussian mixture with fixed weights.

use nalgebra::{DMatrix, DVector};

use super::{full_natural, OptState, Optimizer, OptimizerSpec};
use crate::blr::{Schedule, MAX_HALVINGS};
use crate::estimators::{derivatives_at, EstimatorConfig, EstimatorMode, Shape};
use crate::expfam::gaussian::{deviation_map, Precision};
use crate::expfam::{mixture_logq_derivs, LogqMode, NaturalParams};
use crate::linalg::{rng_from_seed, spd_inverse, standard_normal, symmetrize, Rng};
use crate::problems::{Batch, Objective};
use crate::{Error, Result};

/// Distance below which two components count as merged.
pub const COLLAPSE_TOL: f64 = 1e-6;

/// For each component `k`, with expectations under `q_k`:
///
/// `S_k' = S_k + rho E[hess l + hess log q]`,
/// `m_k' = m_k - rho S_k'^-1 E[grad l + grad log q]`.
///
/// Monte-Carlo expectations use antithetic pairs `m_k +- U_k^-1 z` with the
/// same `z` for every component; the delta estimator evaluates at `m_k`.
pub struct MixtureNewton {
    pub weights: Vec<f64>,
    pub components: Vec<(DVector<f64>, DMatrix<f64>)>,
    cfg: EstimatorConfig,
    schedule: Schedule,
    far_apart: bool,
    collapsed: bool,
    step: u64,
    rng: Rng,
}

impl MixtureNewton {
    pub fn new(
        weights: Vec<f64>,
        components: Vec<(DVector<f64>, DMatrix<f64>)>,
        cfg: EstimatorConfig,
        schedule: Schedule,
        far_apart: bool,
        seed: u64,
    ) -> Result<Self> {
        NaturalParams::mixture(weights.clone(), components.clone())?;
        Ok(Self {
            weights,
            components,
            cfg,
            schedule,
            far_apart,
            collapsed: false,
            step: 0,
            rng: rng_from_seed(seed, super::NOISE_STREAM),
        })
    }

    pub fn candidate(&self) -> Result<NaturalParams> {
        NaturalParams::mixture(self.weights.clone(), self.components.clone())
    }

    fn noise(&self, rng: &mut Rng) -> Vec<DVector<f64>> {
        let p = self.components[0].0.len();
        let pairs = match self.cfg.mode {
            EstimatorMode::Delta => return vec![],
            EstimatorMode::MonteCarlo { samples } | EstimatorMode::WeightPerturb { samples } => samples.div_ceil(2),
        };
        match self.cfg.common_noise {
            Some(seed) => {
                let mut local = rng_from_seed(seed, 2);
                (0..pairs).map(|_| standard_normal(&mut local, p)).collect()
            }
            None => (0..pairs).map(|_| standard_normal(rng, p)).collect(),
        }
    }

    /// `(E[grad l + grad log q], E[hess l + hess log q])` for every component.
    pub fn expectations(
        &self,
        obj: &dyn Objective,
        batch: Batch,
        rng: &mut Rng,
    ) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        let lambda = self.candidate()?;
        let zs = self.noise(rng);
        let p = self.components[0].0.len();
        let at = |theta: &DVector<f64>, k: usize| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let (gl, hl) = derivatives_at(obj, theta, batch, self.cfg.hessian, Shape::Full)?;
            let mode = if self.far_apart { LogqMode::FarApart { component: k } } else { LogqMode::Exact };
            let (gq, hq) = mixture_logq_derivs(&lambda, theta, mode)?;
            Ok((gl + gq, hl.to_matrix() + hq))
        };
        let mut out = Vec::with_capacity(self.components.len());
        for (k, (m, s)) in self.components.iter().enumerate() {
            if zs.is_empty() {
                out.push(at(m, k)?);
                continue;
            }
            let dev = deviation_map(&Precision::Full(s.clone()))?;
            let mut g = DVector::zeros(p);
            let mut h = DMatrix::zeros(p, p);
            for z in &zs {
                let d = dev(z);
                let (g1, h1) = at(&(m + &d), k)?;
                let (g2, h2) = at(&(m - &d), k)?;
                g += g1 + g2;
                h += h1 + h2;
            }
            let n = 2.0 * zs.len() as f64;
            out.push((g / n, symmetrize(&(h / n))));
        }
        Ok(out)
    }

    fn check_collapse(&mut self) -> Result<()> {
        for i in 0..self.components.len() {
            for j in i + 1..self.components.len() {
                let (mi, si) = &self.components[i];
                let (mj, sj) = &self.components[j];
                if (mi - mj).norm() < COLLAPSE_TOL {
                    let ci = spd_inverse(si, "component precision")?;
                    let cj = spd_inverse(sj, "component precision")?;
                    if (ci - cj).norm() < COLLAPSE_TOL {
                        self.collapsed = true;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Optimizer for MixtureNewton {
    fn name(&self) -> &str {
        "mixture-newton"
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        let mut rng = self.rng.clone();
        let ex = self.expectations(obj, batch, &mut rng)?;
        self.rng = rng;
        let rho = self.schedule.rho.at(self.step);
        let mut next = Vec::with_capacity(ex.len());
        for ((m, s), (g, h)) in self.components.iter().zip(&ex) {
            let mut r = rho;
            let mut done = None;
            for _ in 0..=MAX_HALVINGS {
                let s_new = symmetrize(&(s + h * r));
                if let Some(ch) = s_new.clone().cholesky() {
                    done = Some((m - ch.solve(g) * r, s_new));
                    break;
                }
                r *= 0.5;
            }
            next.push(done.ok_or(Error::StepFailure { halvings: MAX_HALVINGS })?);
        }
        self.components = next;
        self.step += 1;
        self.check_collapse()
    }
    /// Mean of the first component.
    fn eval_point(&self) -> DVector<f64> {
        self.components[0].0.clone()
    }
    fn lambda_norm(&self) -> f64 {
        self.components.iter().map(|(m, s)| full_natural(m, s).norm_squared()).sum::<f64>().sqrt()
    }
    /// Largest entry of any component's expected gradient or Hessian term.
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        let ex = self.expectations(obj, None, &mut self.rng.clone())?;
        Ok(ex.iter().fold(0.0, |acc, (g, h)| acc.max(g.amax()).max(h.amax())))
    }
    fn state(&self) -> OptState {
        OptState::Mixture { weights: self.weights.clone(), components: self.components.clone() }
    }
    fn collapsed(&self) -> bool {
        self.collapsed
    }
}

pub(super) fn build(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    spec.require_no_momentum()?;
    let (p, k) = (obj.dim(), spec.extras.components);
    let means = if spec.extras.init_mean.is_some() || spec.extras.init_scale > 0.0 {
        spec.initial_mean(k * p, seed)?
    } else {
        // evenly spread along the diagonal, symmetric about the origin
        DVector::from_fn(k * p, |i, _| (i / p) as f64 - (k as f64 - 1.0) / 2.0)
    };
    let components = (0..k)
        .map(|j| (means.rows(j * p, p).into_owned(), DMatrix::identity(p, p) * spec.extras.init_precision))
        .collect();
    Ok(Box::new(MixtureNewton::new(
        vec![1.0 / k as f64; k],
        components,
        spec.estimator.clone(),
        spec.schedule,
        spec.extras.far_apart,
        seed,
    )?))
}
