//! Deterministic integration rules used by oracles, residual checks and the
//! verification suite.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Gauss-Hermite rule for the standard normal measure: `E[f(Z)] ~ sum w_i f(x_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let mut jac = DMatrix::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jac[(k - 1, k)] = b;
            jac[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    /// `E[f(X)]` for `X ~ N(mean, var)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, mean: f64, var: f64, f: F) -> f64 {
        let sd = var.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mean + sd * x))
            .sum()
    }

    /// Tensor-product rule for `N(mean, diag(var))`; calls `f` on every grid point
    /// with its weight.
    pub fn for_each_diag<F: FnMut(&DVector<f64>, f64)>(&self, mean: &DVector<f64>, var: &DVector<f64>, mut f: F) {
        let d = mean.len();
        let n = self.nodes.len();
        let mut idx = vec![0usize; d];
        let sd = var.map(f64::sqrt);
        let mut point = mean.clone();
        loop {
            let mut w = 1.0;
            for j in 0..d {
                point[j] = mean[j] + sd[j] * self.nodes[idx[j]];
                w *= self.weights[idx[j]];
            }
            f(&point, w);
            let mut j = 0;
            loop {
                if j == d {
                    return;
                }
                idx[j] += 1;
                if idx[j] < n {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n.max(2) };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    s * h / 3.0
}
