//! Objectives `l(theta) = sum_i l_i(theta) + R(theta)` and synthetic datasets.
//!
//! Data-backed objectives accept a minibatch of example indices; the data term is
//! then rescaled by `N / M` so that it is an unbiased estimate of the full sum.
//! The regularizer is always `R(theta) = delta / 2 |theta|^2`.

mod data;
mod functions;
mod glm;
mod mlp;

use nalgebra::{DMatrix, DVector};

pub use data::{make_dataset, Dataset, DatasetKind};
pub use functions::{asymmetric_1d, cubic_1d, double_well, himmelblau, quadratic, sharp_flat_1d, Himmelblau, Quadratic, Scalar1d};
pub use glm::{logistic_objective, ridge_objective, DataObjective, ExampleLoss, LogisticLoss, RidgeLoss};
pub use mlp::{binary_mlp_objective, mlp_objective, BinaryMlpLoss, MlpLoss};

use crate::linalg::Rng;
use crate::{Error, Result};

/// `None` means the full dataset.
pub type Batch<'a> = Option<&'a [usize]>;

/// Parameter indices grouped by network unit, used by dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitGroups {
    /// Incoming-weight blocks that can be dropped together.
    pub droppable: Vec<Vec<usize>>,
    /// Parameters that are never dropped (biases).
    pub fixed: Vec<usize>,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Number of examples `N`; 1 for objectives without data.
    fn len(&self) -> usize {
        1
    }

    fn value(&self, theta: &DVector<f64>, batch: Batch) -> Result<f64>;

    fn gradient(&self, theta: &DVector<f64>, batch: Batch) -> Result<DVector<f64>>;

    fn has_hessian(&self) -> bool {
        false
    }

    fn hessian(&self, _theta: &DVector<f64>, _batch: Batch) -> Result<DMatrix<f64>> {
        Err(Error::Unsupported(format!("exact Hessian of {}", self.name())))
    }

    fn hessian_diag(&self, theta: &DVector<f64>, batch: Batch) -> Result<DVector<f64>> {
        Ok(self.hessian(theta, batch)?.diagonal())
    }

    /// Unscaled gradients of the data terms `l_i` in the batch (no regularizer).
    fn example_gradients(&self, _theta: &DVector<f64>, _batch: Batch) -> Result<Vec<DVector<f64>>> {
        Err(Error::Unsupported(format!("per-example gradients of {}", self.name())))
    }

    /// Per-example Gauss-Newton factors `u_i = sqrt(l_i'') grad f_i` of the data
    /// terms in the batch, so that `sum_i u_i u_i^T` is the Gauss-Newton matrix.
    fn gauss_newton_factors(&self, _theta: &DVector<f64>, _batch: Batch) -> Result<Vec<DVector<f64>>> {
        Err(Error::Unsupported(format!("Gauss-Newton factors of {}", self.name())))
    }

    /// Diagonal of the regularizer Hessian.
    fn regularizer_hessian_diag(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    fn unit_groups(&self) -> UnitGroups {
        UnitGroups { droppable: vec![(0..self.dim()).collect()], fixed: vec![] }
    }

    /// `N / M` for a batch of size `M`.
    fn batch_scale(&self, batch: Batch) -> f64 {
        match batch {
            Some(b) if !b.is_empty() => self.len() as f64 / b.len() as f64,
            _ => 1.0,
        }
    }
}

/// Draws `m` distinct indices out of `n`, uniformly, returned in increasing order.
pub fn sample_minibatch(rng: &mut Rng, n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("minibatch size {m} exceeds dataset size {n}")));
    }
    let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub(crate) fn check_theta(obj: &dyn Objective, theta: &DVector<f64>) -> Result<()> {
    crate::error::check_dim(obj.dim(), theta.len())
}

/// Resolves a batch into indices and validates them.
pub(crate) fn resolve_batch(batch: Batch, n: usize) -> Result<Vec<usize>> {
    match batch {
        None => Ok((0..n).collect()),
        Some([]) => Err(Error::EmptyBatch),
        Some(b) => {
            if let Some(i) = b.iter().find(|i| **i >= n) {
                return Err(Error::InvalidArgument(format!("example index {i} out of range for {n} examples")));
            }
            Ok(b.to_vec())
        }
    }
}
