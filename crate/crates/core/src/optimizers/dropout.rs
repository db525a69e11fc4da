//! Newton on a spike-and-slab candidate, one Gaussian slab per unit.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::gaussian::newton_update;
use super::{full_natural, gaussian_residual, OptState, Optimizer, OptimizerSpec};
use crate::blr::Schedule;
use crate::estimators::{derivatives_at, EstimatorConfig, EstimatorMode, Shape};
use crate::linalg::{rng_from_seed, Rng};
use crate::problems::{Batch, Objective};
use crate::{Error, Result};

struct Block {
    idx: Vec<usize>,
    droppable: bool,
    s: DMatrix<f64>,
}

/// Each step keeps every droppable unit with probability `pi1` (a dropped
/// unit's weights are drawn from the spike `N(0, s0^-1 I)`), evaluates the
/// gradient and Hessian at those weights, and applies per block
/// `S' = (1 - rho) S + rho H / pi1`, `m' = m - rho S'^-1 g / pi1`.
/// Units that are never dropped (biases) use `pi1 = 1`.
pub struct DropoutNewton {
    pub m: DVector<f64>,
    blocks: Vec<Block>,
    cfg: EstimatorConfig,
    schedule: Schedule,
    pi1: f64,
    spike_sd: f64,
    step: u64,
    rng: Rng,
}

impl DropoutNewton {
    fn restricted(&self, g: &DVector<f64>, h: &DMatrix<f64>, b: &Block) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        (g.select_rows(&b.idx), h.select_rows(&b.idx).select_columns(&b.idx), self.m.select_rows(&b.idx))
    }
}

impl Optimizer for DropoutNewton {
    fn name(&self) -> &str {
        "dropout-newton"
    }
    fn step(&mut self, obj: &dyn Objective, batch: Batch) -> Result<()> {
        let mut theta = self.m.clone();
        for b in self.blocks.iter().filter(|b| b.droppable) {
            if !self.rng.random_bool(self.pi1) {
                for &i in &b.idx {
                    let z: f64 = Distribution::<f64>::sample(&StandardNormal, &mut self.rng);
                    theta[i] = self.spike_sd * z;
                }
            }
        }
        let (g, h) = derivatives_at(obj, &theta, batch, self.cfg.hessian, Shape::Full)?;
        let h = h.to_matrix();
        let rho = self.schedule.rho.at(self.step);
        let mut updates = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (gb, hb, mb) = self.restricted(&g, &h, b);
            let f = if b.droppable { 1.0 / self.pi1 } else { 1.0 };
            updates.push(newton_update(&mb, &b.s, &(gb * f), &(hb * f), rho)?);
        }
        for (b, (mb, sb)) in self.blocks.iter_mut().zip(updates) {
            for (k, &i) in b.idx.iter().enumerate() {
                self.m[i] = mb[k];
            }
            b.s = sb;
        }
        self.step += 1;
        Ok(())
    }
    fn eval_point(&self) -> DVector<f64> {
        self.m.clone()
    }
    fn lambda_norm(&self) -> f64 {
        let parts: Vec<f64> = self
            .blocks
            .iter()
            .flat_map(|b| full_natural(&self.m.select_rows(&b.idx), &b.s).iter().copied().collect::<Vec<_>>())
            .collect();
        DVector::from_vec(parts).norm()
    }
    /// Slab residual at the mean with no unit dropped.
    fn residual(&self, obj: &dyn Objective) -> Result<f64> {
        let (g, h) = derivatives_at(obj, &self.m, None, self.cfg.hessian, Shape::Full)?;
        let h = h.to_matrix();
        Ok(self.blocks.iter().fold(0.0, |acc, b| {
            let (gb, hb, mb) = self.restricted(&g, &h, b);
            acc.max(gaussian_residual(&gb, &hb, &mb, &b.s))
        }))
    }
    fn state(&self) -> OptState {
        OptState::Blocks { mean: self.m.clone(), blocks: self.blocks.iter().map(|b| (b.idx.clone(), b.s.clone())).collect() }
    }
}

pub(super) fn build(spec: &OptimizerSpec, obj: &dyn Objective, seed: u64) -> Result<Box<dyn Optimizer>> {
    spec.require_no_momentum()?;
    if spec.estimator.mode != EstimatorMode::Delta {
        return Err(Error::InvalidArgument("dropout-newton evaluates at the dropout weights; use the delta estimator".into()));
    }
    let p = obj.dim();
    let groups = obj.unit_groups();
    let mut seen = vec![false; p];
    let mut blocks = Vec::new();
    let all = groups.droppable.into_iter().map(|g| (g, true)).chain(std::iter::once((groups.fixed, false)));
    for (idx, droppable) in all {
        if idx.is_empty() {
            continue;
        }
        for &i in &idx {
            if i >= p || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("unit groups of {} do not partition the parameters", obj.name())));
            }
        }
        let s = DMatrix::identity(idx.len(), idx.len()) * spec.extras.init_precision;
        blocks.push(Block { idx, droppable, s });
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument(format!("unit groups of {} do not cover every parameter", obj.name())));
    }
    Ok(Box::new(DropoutNewton {
        m: spec.initial_mean(p, seed)?,
        blocks,
        cfg: spec.estimator.clone(),
        schedule: spec.schedule,
        pi1: spec.extras.pi1,
        spike_sd: 1.0 / spec.extras.s0.sqrt(),
        step: 0,
        rng: rng_from_seed(seed, super::NOISE_STREAM),
    }))
}
