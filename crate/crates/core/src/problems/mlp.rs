//! One-hidden-layer tanh networks with hand-written backpropagation.

use nalgebra::{DMatrix, DVector};

use super::glm::{sigmoid, softplus};
use super::{Dataset, DataObjective, ExampleLoss, UnitGroups};
use crate::{Error, Result};

fn check_arch(arch: &[usize], inputs: usize) -> Result<(usize, usize)> {
    match arch {
        [i, h, 1] if *i == inputs && *h >= 1 => Ok((*i, *h)),
        [i, _, 1] => Err(Error::InvalidArgument(format!("network expects {i} inputs, dataset has {inputs}"))),
        _ => Err(Error::InvalidArgument(format!("architecture must be [inputs, hidden, 1], got {arch:?}"))),
    }
}

/// Regression network `f(x) = w2^T tanh(W1 x + b1) + b2` with squared error.
///
/// Parameter layout: `W1` row-major (`hidden x inputs`), `b1`, `w2`, `b2`.
#[derive(Debug, Clone)]
pub struct MlpLoss {
    pub inputs: usize,
    pub hidden: usize,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl MlpLoss {
    fn forward(&self, i: usize, theta: &DVector<f64>) -> (Vec<f64>, f64) {
        let (ni, nh) = (self.inputs, self.hidden);
        let b1 = nh * ni;
        let w2 = b1 + nh;
        let mut h = Vec::with_capacity(nh);
        let mut out = theta[w2 + nh];
        for j in 0..nh {
            let mut a = theta[b1 + j];
            for k in 0..ni {
                a += theta[j * ni + k] * self.x[(i, k)];
            }
            let hj = a.tanh();
            out += theta[w2 + j] * hj;
            h.push(hj);
        }
        (h, out)
    }

    pub fn predict(&self, i: usize, theta: &DVector<f64>) -> f64 {
        self.forward(i, theta).1
    }
}

impl ExampleLoss for MlpLoss {
    fn name(&self) -> &str {
        "mlp"
    }
    fn dim(&self) -> usize {
        self.hidden * (self.inputs + 2) + 1
    }
    fn len(&self) -> usize {
        self.x.nrows()
    }
    fn loss(&self, i: usize, theta: &DVector<f64>) -> f64 {
        let r = self.forward(i, theta).1 - self.y[i];
        0.5 * r * r
    }
    fn grad(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let (ni, nh) = (self.inputs, self.hidden);
        let (b1, w2) = (nh * ni, nh * ni + nh);
        let (h, out) = self.forward(i, theta);
        let r = out - self.y[i];
        let mut g = DVector::zeros(self.dim());
        for j in 0..nh {
            g[w2 + j] = r * h[j];
            let da = r * theta[w2 + j] * (1.0 - h[j] * h[j]);
            g[b1 + j] = da;
            for k in 0..ni {
                g[j * ni + k] = da * self.x[(i, k)];
            }
        }
        g[w2 + nh] = r;
        g
    }
    fn gn_factor(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        // squared error has l'' = 1: the factor is the output Jacobian
        let (ni, nh) = (self.inputs, self.hidden);
        let (b1, w2) = (nh * ni, nh * ni + nh);
        let (h, _) = self.forward(i, theta);
        let mut u = DVector::zeros(self.dim());
        for j in 0..nh {
            u[w2 + j] = h[j];
            let da = theta[w2 + j] * (1.0 - h[j] * h[j]);
            u[b1 + j] = da;
            for k in 0..ni {
                u[j * ni + k] = da * self.x[(i, k)];
            }
        }
        u[w2 + nh] = 1.0;
        u
    }
    fn unit_groups(&self) -> UnitGroups {
        let (ni, nh) = (self.inputs, self.hidden);
        let (b1, w2) = (nh * ni, nh * ni + nh);
        let mut droppable: Vec<Vec<usize>> = (0..nh).map(|j| (j * ni..(j + 1) * ni).collect()).collect();
        droppable.push((w2..w2 + nh).collect());
        let mut fixed: Vec<usize> = (b1..b1 + nh).collect();
        fixed.push(w2 + nh);
        UnitGroups { droppable, fixed }
    }
}

pub fn mlp_objective(arch: &[usize], data: &Dataset, delta: f64) -> Result<DataObjective<MlpLoss>> {
    let (inputs, hidden) = check_arch(arch, data.d)?;
    DataObjective::new(MlpLoss { inputs, hidden, x: data.x.clone(), y: data.y.clone() }, delta)
}

/// Classifier `z(x) = v^T tanh(W [x; 1])` with logistic loss on labels `+-1`.
///
/// Weights are meant to be `+-1`; any real values are accepted so relaxed
/// weights in (-1, 1) can be evaluated and differentiated. Parameter layout:
/// `W` row-major (`hidden x (inputs + 1)`), then `v`.
#[derive(Debug, Clone)]
pub struct BinaryMlpLoss {
    pub inputs: usize,
    pub hidden: usize,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl BinaryMlpLoss {
    fn forward(&self, i: usize, theta: &DVector<f64>) -> (Vec<f64>, f64) {
        let ni = self.inputs + 1;
        let v = self.hidden * ni;
        let mut h = Vec::with_capacity(self.hidden);
        let mut z = 0.0;
        for j in 0..self.hidden {
            let mut a = theta[j * ni + self.inputs];
            for k in 0..self.inputs {
                a += theta[j * ni + k] * self.x[(i, k)];
            }
            let hj = a.tanh();
            z += theta[v + j] * hj;
            h.push(hj);
        }
        (h, z)
    }

    pub fn logit(&self, i: usize, theta: &DVector<f64>) -> f64 {
        self.forward(i, theta).1
    }

    fn logit_grad(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let ni = self.inputs + 1;
        let v = self.hidden * ni;
        let (h, _) = self.forward(i, theta);
        let mut g = DVector::zeros(self.dim());
        for j in 0..self.hidden {
            g[v + j] = h[j];
            let da = theta[v + j] * (1.0 - h[j] * h[j]);
            for k in 0..self.inputs {
                g[j * ni + k] = da * self.x[(i, k)];
            }
            g[j * ni + self.inputs] = da;
        }
        g
    }

    /// Fraction of examples with `sign(z) == y`, taking `sign(0) = +1`.
    pub fn accuracy(&self, theta: &DVector<f64>) -> f64 {
        let hits = (0..self.len())
            .filter(|&i| {
                let z = self.logit(i, theta);
                (if z >= 0.0 { 1.0 } else { -1.0 }) == self.y[i]
            })
            .count();
        hits as f64 / self.len() as f64
    }
}

impl ExampleLoss for BinaryMlpLoss {
    fn name(&self) -> &str {
        "binary-mlp"
    }
    fn dim(&self) -> usize {
        self.hidden * (self.inputs + 2)
    }
    fn len(&self) -> usize {
        self.x.nrows()
    }
    fn loss(&self, i: usize, theta: &DVector<f64>) -> f64 {
        softplus(-self.y[i] * self.logit(i, theta))
    }
    fn grad(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let (_, z) = self.forward(i, theta);
        self.logit_grad(i, theta) * (-self.y[i] * sigmoid(-self.y[i] * z))
    }
    fn gn_factor(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let z = self.logit(i, theta);
        self.logit_grad(i, theta) * (sigmoid(z) * sigmoid(-z)).sqrt()
    }
    fn unit_groups(&self) -> UnitGroups {
        let ni = self.inputs + 1;
        let mut droppable: Vec<Vec<usize>> = (0..self.hidden).map(|j| (j * ni..(j + 1) * ni).collect()).collect();
        droppable.push((self.hidden * ni..self.dim()).collect());
        UnitGroups { droppable, fixed: vec![] }
    }
}

pub fn binary_mlp_objective(arch: &[usize], data: &Dataset) -> Result<DataObjective<BinaryMlpLoss>> {
    let (inputs, hidden) = check_arch(arch, data.d)?;
    if data.y.iter().any(|y| y.abs() != 1.0) {
        return Err(Error::InvalidArgument("binary network labels must be -1 or +1".into()));
    }
    DataObjective::new(BinaryMlpLoss { inputs, hidden, x: data.x.clone(), y: data.y.clone() }, 0.0)
}
