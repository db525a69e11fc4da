//! Sum-of-examples objectives with a ridge regularizer, and the two linear models.

use nalgebra::{DMatrix, DVector};

use super::{check_theta, resolve_batch, Batch, Dataset, Objective, UnitGroups};
use crate::linalg::symmetrize;
use crate::{Error, Result};

/// One term `l_i(theta)` per example.
pub trait ExampleLoss: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn loss(&self, i: usize, theta: &DVector<f64>) -> f64;
    fn grad(&self, i: usize, theta: &DVector<f64>) -> DVector<f64>;
    fn hess(&self, _i: usize, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    /// `sqrt(l'') grad f` for a model output `f` and a convex per-output loss.
    fn gn_factor(&self, i: usize, theta: &DVector<f64>) -> DVector<f64>;
    fn unit_groups(&self) -> UnitGroups {
        UnitGroups { droppable: vec![(0..self.dim()).collect()], fixed: vec![] }
    }
}

/// `(N/M) sum_{i in batch} l_i(theta) + delta/2 |theta|^2`.
#[derive(Debug, Clone)]
pub struct DataObjective<L> {
    pub loss: L,
    pub delta: f64,
}

impl<L: ExampleLoss> DataObjective<L> {
    pub fn new(loss: L, delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidArgument(format!("regularization delta must be >= 0, got {delta}")));
        }
        if loss.len() == 0 {
            return Err(Error::InvalidArgument("objective needs at least one example".into()));
        }
        Ok(Self { loss, delta })
    }

    fn indices(&self, batch: Batch) -> Result<(Vec<usize>, f64)> {
        let idx = resolve_batch(batch, self.loss.len())?;
        let scale = self.loss.len() as f64 / idx.len() as f64;
        Ok((idx, scale))
    }
}

impl<L: ExampleLoss> Objective for DataObjective<L> {
    fn name(&self) -> &str {
        self.loss.name()
    }
    fn dim(&self) -> usize {
        self.loss.dim()
    }
    fn len(&self) -> usize {
        self.loss.len()
    }
    fn value(&self, theta: &DVector<f64>, batch: Batch) -> Result<f64> {
        check_theta(self, theta)?;
        let (idx, scale) = self.indices(batch)?;
        let data: f64 = idx.iter().map(|&i| self.loss.loss(i, theta)).sum();
        Ok(scale * data + 0.5 * self.delta * theta.norm_squared())
    }
    fn gradient(&self, theta: &DVector<f64>, batch: Batch) -> Result<DVector<f64>> {
        check_theta(self, theta)?;
        let (idx, scale) = self.indices(batch)?;
        let mut g = DVector::zeros(self.dim());
        for &i in &idx {
            g += self.loss.grad(i, theta);
        }
        Ok(g * scale + theta * self.delta)
    }
    fn has_hessian(&self) -> bool {
        let probe = DVector::zeros(self.dim());
        self.loss.hess(0, &probe).is_some()
    }
    fn hessian(&self, theta: &DVector<f64>, batch: Batch) -> Result<DMatrix<f64>> {
        check_theta(self, theta)?;
        let (idx, scale) = self.indices(batch)?;
        let p = self.dim();
        let mut h = DMatrix::zeros(p, p);
        for &i in &idx {
            h += self
                .loss
                .hess(i, theta)
                .ok_or_else(|| Error::Unsupported(format!("exact Hessian of {}", self.name())))?;
        }
        Ok(symmetrize(&(h * scale + DMatrix::identity(p, p) * self.delta)))
    }
    fn example_gradients(&self, theta: &DVector<f64>, batch: Batch) -> Result<Vec<DVector<f64>>> {
        check_theta(self, theta)?;
        let (idx, _) = self.indices(batch)?;
        Ok(idx.iter().map(|&i| self.loss.grad(i, theta)).collect())
    }
    fn gauss_newton_factors(&self, theta: &DVector<f64>, batch: Batch) -> Result<Vec<DVector<f64>>> {
        check_theta(self, theta)?;
        let (idx, _) = self.indices(batch)?;
        Ok(idx.iter().map(|&i| self.loss.gn_factor(i, theta)).collect())
    }
    fn regularizer_hessian_diag(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), self.delta)
    }
    fn unit_groups(&self) -> UnitGroups {
        self.loss.unit_groups()
    }
}

/// Squared error `1/2 (y_i - x_i^T theta)^2`.
#[derive(Debug, Clone)]
pub struct RidgeLoss {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl ExampleLoss for RidgeLoss {
    fn name(&self) -> &str {
        "ridge"
    }
    fn dim(&self) -> usize {
        self.x.ncols()
    }
    fn len(&self) -> usize {
        self.x.nrows()
    }
    fn loss(&self, i: usize, theta: &DVector<f64>) -> f64 {
        let r = self.y[i] - self.x.row(i).dot(&theta.transpose());
        0.5 * r * r
    }
    fn grad(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let xi = self.x.row(i).transpose();
        let r = self.y[i] - xi.dot(theta);
        xi * -r
    }
    fn hess(&self, i: usize, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let xi = self.x.row(i).transpose();
        Some(&xi * xi.transpose())
    }
    fn gn_factor(&self, i: usize, _theta: &DVector<f64>) -> DVector<f64> {
        self.x.row(i).transpose()
    }
}

pub fn ridge_objective(x: DMatrix<f64>, y: DVector<f64>, delta: f64) -> Result<DataObjective<RidgeLoss>> {
    crate::error::check_dim(x.nrows(), y.len())?;
    DataObjective::new(RidgeLoss { x, y }, delta)
}

/// Logistic loss `log(1 + exp(-y_i x_i^T theta))` with labels in `{-1, +1}`.
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ExampleLoss for LogisticLoss {
    fn name(&self) -> &str {
        "logistic"
    }
    fn dim(&self) -> usize {
        self.x.ncols()
    }
    fn len(&self) -> usize {
        self.x.nrows()
    }
    fn loss(&self, i: usize, theta: &DVector<f64>) -> f64 {
        softplus(-self.y[i] * self.x.row(i).dot(&theta.transpose()))
    }
    fn grad(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let xi = self.x.row(i).transpose();
        let yz = self.y[i] * xi.dot(theta);
        xi * (-self.y[i] * sigmoid(-yz))
    }
    fn hess(&self, i: usize, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let xi = self.x.row(i).transpose();
        let z = xi.dot(theta);
        Some(&xi * xi.transpose() * (sigmoid(z) * sigmoid(-z)))
    }
    fn gn_factor(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let xi = self.x.row(i).transpose();
        let z = xi.dot(theta);
        xi * (sigmoid(z) * sigmoid(-z)).sqrt()
    }
}

pub fn logistic_objective(data: &Dataset, delta: f64) -> Result<DataObjective<LogisticLoss>> {
    if data.y.iter().any(|y| y.abs() != 1.0) {
        return Err(Error::InvalidArgument("logistic labels must be -1 or +1".into()));
    }
    DataObjective::new(LogisticLoss { x: data.x.clone(), y: data.y.clone() }, delta)
}
