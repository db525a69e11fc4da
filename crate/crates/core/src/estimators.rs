//! Estimates of `E_q[grad l]` and `E_q[hess l]` (or a surrogate for the latter),
//! and the maps that turn them into natural gradients.

use nalgebra::{DMatrix, DVector};

use crate::expfam::{gaussian, GaussianMoments, NaturalParams};
use crate::linalg::{rng_from_seed, symmetrize, Rng};
use crate::problems::{Batch, Objective};
use crate::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorMode {
    /// Derivatives at the candidate mean.
    Delta,
    /// Average of derivatives at draws from the candidate.
    MonteCarlo { samples: usize },
    /// Same estimator phrased as perturbing the mean with candidate noise.
    WeightPerturb { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianSurrogate {
    Exact,
    /// `(N/M) sum_i u_i^2 + diag(hess R)` with per-example Gauss-Newton
    /// factors `u_i = sqrt(l_i'') grad f_i`.
    GaussNewton,
    /// Square of the minibatch gradient.
    GradMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concrete {
    pub tau: f64,
    pub noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub hessian: HessianSurrogate,
    pub concrete: Concrete,
    /// When set, every Monte-Carlo call reuses the same standard-normal draws
    /// (seeded from this value), making the estimator a deterministic function
    /// of the candidate.
    pub common_noise: Option<u64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::Delta,
            hessian: HessianSurrogate::Exact,
            concrete: Concrete { tau: 1.0, noise: true },
            common_noise: None,
        }
    }
}

impl EstimatorConfig {
    pub fn delta(hessian: HessianSurrogate) -> Self {
        Self { hessian, ..Self::default() }
    }

    pub fn monte_carlo(samples: usize, hessian: HessianSurrogate) -> Self {
        Self { mode: EstimatorMode::MonteCarlo { samples }, hessian, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            EstimatorMode::MonteCarlo { samples: 0 } | EstimatorMode::WeightPerturb { samples: 0 } => {
                return Err(Error::InvalidArgument("estimator needs at least one sample".into()))
            }
            _ => {}
        }
        if !(self.concrete.tau.is_finite() && self.concrete.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.concrete.tau)));
        }
        Ok(())
    }
}

/// Curvature estimate, either a full matrix or its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    Full(DMatrix<f64>),
    Diag(DVector<f64>),
}

impl Curvature {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Curvature::Full(m) => m.clone(),
            Curvature::Diag(d) => DMatrix::from_diagonal(d),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            Curvature::Full(m) => m.diagonal(),
            Curvature::Diag(d) => d.clone(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Curvature::Full(m) => m * v,
            Curvature::Diag(d) => d.component_mul(v),
        }
    }

    pub fn scale(&self, a: f64) -> Curvature {
        match self {
            Curvature::Full(m) => Curvature::Full(m * a),
            Curvature::Diag(d) => Curvature::Diag(d * a),
        }
    }
}

/// Which curvature shape the caller needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Full,
    Diag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPointKind {
    Mean,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradHessEstimate {
    pub g: DVector<f64>,
    pub h: Curvature,
    pub n_used: usize,
    pub eval_point: EvalPointKind,
}

/// Gradient and requested curvature of the objective at one point.
pub fn derivatives_at(
    obj: &dyn Objective,
    theta: &DVector<f64>,
    batch: Batch,
    hessian: HessianSurrogate,
    shape: Shape,
) -> Result<(DVector<f64>, Curvature)> {
    let g = obj.gradient(theta, batch)?;
    let h = match (hessian, shape) {
        (HessianSurrogate::Exact, Shape::Full) => Curvature::Full(symmetrize(&obj.hessian(theta, batch)?)),
        (HessianSurrogate::Exact, Shape::Diag) => Curvature::Diag(obj.hessian_diag(theta, batch)?),
        (HessianSurrogate::GaussNewton, _) => {
            let factors = obj.gauss_newton_factors(theta, batch)?;
            let d = gauss_newton_diag(&factors, obj.batch_scale(batch), &obj.regularizer_hessian_diag())?;
            diag_as(shape, d)
        }
        (HessianSurrogate::GradMagnitude, _) => diag_as(shape, grad_magnitude_diag(&g)),
    };
    Ok((g, h))
}

fn diag_as(shape: Shape, d: DVector<f64>) -> Curvature {
    match shape {
        Shape::Full => Curvature::Full(DMatrix::from_diagonal(&d)),
        Shape::Diag => Curvature::Diag(d),
    }
}

/// Delta method: derivatives at the mean `m`.
pub fn delta_estimate(
    obj: &dyn Objective,
    m: &DVector<f64>,
    batch: Batch,
    hessian: HessianSurrogate,
    shape: Shape,
) -> Result<GradHessEstimate> {
    let (g, h) = derivatives_at(obj, m, batch, hessian, shape)?;
    Ok(GradHessEstimate { g, h, n_used: 1, eval_point: EvalPointKind::Mean })
}

/// `n` draws from `N(m, S^-1)`; with `common_noise` the draws do not touch `rng`.
pub fn draw_points(g: &GaussianMoments, n: usize, common_noise: Option<u64>, rng: &mut Rng) -> Result<Vec<DVector<f64>>> {
    let draw = gaussian::sampler(g)?;
    Ok(match common_noise {
        Some(seed) => {
            let mut local = rng_from_seed(seed, 2);
            (0..n).map(|_| draw(&mut local)).collect()
        }
        None => (0..n).map(|_| draw(rng)).collect(),
    })
}

/// Averages gradient and curvature over the given points.
pub fn average_at_points(
    obj: &dyn Objective,
    points: &[DVector<f64>],
    batch: Batch,
    hessian: HessianSurrogate,
    shape: Shape,
) -> Result<GradHessEstimate> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no evaluation points".into()));
    }
    let p = obj.dim();
    let mut g = DVector::zeros(p);
    let mut h = match shape {
        Shape::Full => Curvature::Full(DMatrix::zeros(p, p)),
        Shape::Diag => Curvature::Diag(DVector::zeros(p)),
    };
    for theta in points {
        let (gi, hi) = derivatives_at(obj, theta, batch, hessian, shape)?;
        g += gi;
        match (&mut h, hi) {
            (Curvature::Full(acc), Curvature::Full(x)) => *acc += x,
            (Curvature::Diag(acc), Curvature::Diag(x)) => *acc += x,
            _ => unreachable!("shape is fixed per call"),
        }
    }
    let n = points.len() as f64;
    let h = match h {
        Curvature::Full(m) => Curvature::Full(symmetrize(&(m / n))),
        Curvature::Diag(d) => Curvature::Diag(d / n),
    };
    Ok(GradHessEstimate { g: g / n, h, n_used: points.len(), eval_point: EvalPointKind::Sampled })
}

/// Monte-Carlo estimate under a single Gaussian candidate; one shared sample set
/// serves both the gradient and the curvature.
pub fn mc_estimate(
    obj: &dyn Objective,
    lambda: &NaturalParams,
    cfg: &EstimatorConfig,
    batch: Batch,
    shape: Shape,
    rng: &mut Rng,
) -> Result<GradHessEstimate> {
    let n = match cfg.mode {
        EstimatorMode::MonteCarlo { samples } | EstimatorMode::WeightPerturb { samples } => samples,
        EstimatorMode::Delta => 1,
    };
    cfg.validate()?;
    let g = single_gaussian(lambda)?;
    let points = draw_points(&g, n, cfg.common_noise, rng)?;
    average_at_points(obj, &points, batch, cfg.hessian, shape)
}

/// Dispatches on the configured mode.
pub fn estimate(
    obj: &dyn Objective,
    lambda: &NaturalParams,
    cfg: &EstimatorConfig,
    batch: Batch,
    shape: Shape,
    rng: &mut Rng,
) -> Result<GradHessEstimate> {
    match cfg.mode {
        EstimatorMode::Delta => delta_estimate(obj, &single_gaussian(lambda)?.mean, batch, cfg.hessian, shape),
        _ => mc_estimate(obj, lambda, cfg, batch, shape, rng),
    }
}

fn single_gaussian(lambda: &NaturalParams) -> Result<GaussianMoments> {
    let mut view = lambda.moments()?;
    if view.components.len() != 1 {
        return Err(Error::Unsupported("estimators work on a single Gaussian; mixtures go component by component".into()));
    }
    Ok(view.components.remove(0))
}

/// `h_j = scale * sum_i g_ij^2 + reg_j`.
pub fn gauss_newton_diag(per_example: &[DVector<f64>], scale: f64, reg_hess_diag: &DVector<f64>) -> Result<DVector<f64>> {
    if per_example.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut h = DVector::zeros(reg_hess_diag.len());
    for g in per_example {
        crate::error::check_dim(h.len(), g.len())?;
        h += g.component_mul(g);
    }
    Ok(h * scale + reg_hess_diag)
}

pub fn grad_magnitude_diag(g: &DVector<f64>) -> DVector<f64> {
    g.component_mul(g)
}

/// Concrete relaxation of `+-1` variables with natural parameters `lambda`.
///
/// Returns `theta_hat = tanh((lambda + delta(eps)) / tau)` with
/// `delta(eps) = 1/2 log(eps / (1 - eps))`, and the chain-rule factor
/// `s = (1 - theta_hat^2) / (tau (1 - tanh(lambda)^2))`. `eps = None` switches the
/// noise off (`delta = 0`).
pub fn concrete_relax(lambda: &DVector<f64>, eps: Option<&DVector<f64>>, tau: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let noise = match eps {
        Some(e) => {
            crate::error::check_dim(lambda.len(), e.len())?;
            if e.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
                return Err(Error::InvalidArgument("relaxation noise must lie in (0, 1)".into()));
            }
            e.map(|x| 0.5 * (x / (1.0 - x)).ln())
        }
        None => DVector::zeros(lambda.len()),
    };
    let theta = DVector::from_iterator(lambda.len(), lambda.iter().zip(noise.iter()).map(|(l, d)| ((l + d) / tau).tanh()));
    // 1 - tanh^2 written as 1 / cosh^2 so it does not round to zero early
    let s = DVector::from_iterator(
        lambda.len(),
        lambda.iter().zip(noise.iter()).map(|(l, d)| {
            let c_num = ((l + d) / tau).cosh();
            let c_den = l.cosh();
            (c_den * c_den) / (tau * c_num * c_num)
        }),
    );
    Ok((theta, s))
}

/// `(grad_mu1, grad_mu2) = (g - H m, H / 2)`.
pub fn natgrad_pairs_from_gh(g: &DVector<f64>, h: &Curvature, m: &DVector<f64>) -> (DVector<f64>, Curvature) {
    (g - h.apply(m), h.scale(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_dataset, quadratic, ridge_objective, DatasetKind};
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn delta_on_quadratic() {
        let q = quadratic(DMatrix::from_element(1, 1, 2.0), v(&[0.0])).unwrap();
        let e = delta_estimate(&q, &v(&[3.0]), None, HessianSurrogate::Exact, Shape::Full).unwrap();
        assert_eq!(e.g[0], 6.0);
        assert_eq!(e.h, Curvature::Full(DMatrix::from_element(1, 1, 2.0)));
        assert_eq!(e.eval_point, EvalPointKind::Mean);
    }

    #[test]
    fn linear_loss_has_zero_hessian() {
        // ridge with a single all-zero row and delta = 0 behaves like a constant
        let r = ridge_objective(DMatrix::zeros(1, 2), v(&[1.0]), 0.0).unwrap();
        let e = delta_estimate(&r, &v(&[4.0, -2.0]), None, HessianSurrogate::Exact, Shape::Full).unwrap();
        assert_eq!(e.h.to_matrix(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn mc_hessian_constant_for_quadratics() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = quadratic(a.clone(), v(&[1.0, 0.0])).unwrap();
        let lam = NaturalParams::gauss_full(v(&[0.3, 0.1]), DMatrix::identity(2, 2)).unwrap();
        let cfg = EstimatorConfig::monte_carlo(7, HessianSurrogate::Exact);
        let e = mc_estimate(&q, &lam, &cfg, None, Shape::Full, &mut rng_from_seed(1, 0)).unwrap();
        assert!((e.h.to_matrix() - a).amax() < 1e-15);
        assert_eq!(e.n_used, 7);
    }

    #[test]
    fn mc_single_sample_reproducible() {
        let q = crate::problems::double_well(1.0).unwrap();
        let lam = NaturalParams::gauss_full(v(&[0.3]), DMatrix::identity(1, 1)).unwrap();
        let cfg = EstimatorConfig::monte_carlo(1, HessianSurrogate::Exact);
        let a = mc_estimate(&q, &lam, &cfg, None, Shape::Full, &mut rng_from_seed(9, 1)).unwrap();
        let b = mc_estimate(&q, &lam, &cfg, None, Shape::Full, &mut rng_from_seed(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mc_square_loss_moments() {
        // l = theta^2 under N(0, 1): E[grad] = 0, E[hess] = 2
        let sq = quadratic(DMatrix::from_element(1, 1, 2.0), v(&[0.0])).unwrap();
        let lam = NaturalParams::gauss_full(v(&[0.0]), DMatrix::identity(1, 1)).unwrap();
        let n = 100_000;
        let cfg = EstimatorConfig::monte_carlo(n, HessianSurrogate::Exact);
        let e = mc_estimate(&sq, &lam, &cfg, None, Shape::Full, &mut rng_from_seed(3, 0)).unwrap();
        // grad = 2 theta has sd 2
        assert!(e.g[0].abs() < 4.0 * 2.0 / (n as f64).sqrt());
        assert_eq!(e.h.to_matrix()[(0, 0)], 2.0);
    }

    #[test]
    fn common_noise_is_deterministic() {
        let q = crate::problems::double_well(1.0).unwrap();
        let lam = NaturalParams::gauss_diag(v(&[0.3]), v(&[4.0])).unwrap();
        let cfg = EstimatorConfig { common_noise: Some(5), ..EstimatorConfig::monte_carlo(4, HessianSurrogate::Exact) };
        let a = mc_estimate(&q, &lam, &cfg, None, Shape::Diag, &mut rng_from_seed(1, 0)).unwrap();
        let b = mc_estimate(&q, &lam, &cfg, None, Shape::Diag, &mut rng_from_seed(2, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gauss_newton_examples() {
        let h = gauss_newton_diag(&[v(&[3.0, -4.0])], 1.0, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(h.as_slice(), &[9.0, 16.0]);
        let h = gauss_newton_diag(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])], 2.0, &v(&[0.1, 0.1])).unwrap();
        assert_eq!(h.as_slice(), &[2.1, 2.1]);
        assert!(matches!(gauss_newton_diag(&[], 1.0, &v(&[0.0])), Err(Error::EmptyBatch)));
    }

    #[test]
    fn grad_magnitude_examples() {
        assert_eq!(grad_magnitude_diag(&v(&[2.0, -3.0])).as_slice(), &[4.0, 9.0]);
        assert_eq!(grad_magnitude_diag(&v(&[0.0])).as_slice(), &[0.0]);
    }

    #[test]
    fn grad_magnitude_differs_from_gauss_newton_for_larger_batches() {
        // M = 2 examples with opposite gradients: squared sum 0, sum of squares 2
        let grads = [v(&[1.0]), v(&[-1.0])];
        let gn = gauss_newton_diag(&grads, 1.0, &v(&[0.0])).unwrap();
        let gm = grad_magnitude_diag(&(&grads[0] + &grads[1]));
        assert_ne!(gn, gm);
        let single = gauss_newton_diag(&grads[..1], 1.0, &v(&[0.0])).unwrap();
        assert_eq!(single, grad_magnitude_diag(&grads[0]));
    }

    #[test]
    fn gauss_newton_on_data_objective() {
        let data = make_dataset(DatasetKind::Linreg, 6, 2, 1).unwrap();
        let r = ridge_objective(data.x.clone(), data.y.clone(), 0.3).unwrap();
        let t = v(&[0.1, 0.2]);
        let (_, h) = derivatives_at(&r, &t, Some(&[1, 4]), HessianSurrogate::GaussNewton, Shape::Diag).unwrap();
        let (x1, x4) = (data.x.row(1).transpose(), data.x.row(4).transpose());
        let expect = (x1.component_mul(&x1) + x4.component_mul(&x4)) * 3.0 + v(&[0.3, 0.3]);
        // linear model with squared error: Gauss-Newton is the exact Hessian diagonal
        let exact = r.hessian_diag(&t, Some(&[1, 4])).unwrap();
        assert_abs_diff_eq!(exact.as_slice(), expect.as_slice(), epsilon = 1e-12);
        assert_abs_diff_eq!(h.diagonal().as_slice(), expect.as_slice(), epsilon = 1e-12);
    }

    #[test]
    fn concrete_examples() {
        let (t, s) = concrete_relax(&v(&[0.0]), Some(&v(&[0.5])), 1.0).unwrap();
        assert_eq!((t[0], s[0]), (0.0, 1.0));
        let (t, s) = concrete_relax(&v(&[0.0]), Some(&v(&[0.5])), 0.5).unwrap();
        assert_eq!((t[0], s[0]), (0.0, 2.0));
        let (t, s) = concrete_relax(&v(&[1.0]), None, 1.0).unwrap();
        assert_abs_diff_eq!(t[0], 0.761_594_155_955_764_9, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-15);
        assert!(concrete_relax(&v(&[0.0]), Some(&v(&[1.0])), 1.0).is_err());
        assert!(concrete_relax(&v(&[0.0]), None, 0.0).is_err());
    }

    #[test]
    fn concrete_low_temperature_limit() {
        for l in [1e-3, -1e-3, 0.4, -2.0, 50.0] {
            let (t, _) = concrete_relax(&v(&[l]), None, 1e-4).unwrap();
            assert!((t[0] - l.signum()).abs() <= 1e-6);
        }
    }

    #[test]
    fn natgrad_pair_examples() {
        let (a, b) = natgrad_pairs_from_gh(&v(&[0.0, 0.0]), &Curvature::Full(DMatrix::identity(2, 2)), &v(&[1.0, 0.0]));
        assert_eq!(a.as_slice(), &[-1.0, 0.0]);
        assert_eq!(b.to_matrix(), DMatrix::identity(2, 2) * 0.5);
        let (a, b) = natgrad_pairs_from_gh(&v(&[2.0]), &Curvature::Diag(v(&[0.0])), &v(&[5.0]));
        assert_eq!(a.as_slice(), &[2.0]);
        assert_eq!(b.diagonal().as_slice(), &[0.0]);
    }

    #[test]
    fn ridge_natgrad_independent_of_mean() {
        let data = make_dataset(DatasetKind::Linreg, 12, 3, 5).unwrap();
        let delta = 0.7;
        let r = ridge_objective(data.x.clone(), data.y.clone(), delta).unwrap();
        let xty = data.x.transpose() * &data.y;
        let prec = data.x.transpose() * &data.x + DMatrix::identity(3, 3) * delta;
        for m in [v(&[0.0, 0.0, 0.0]), v(&[1.0, -2.0, 0.5])] {
            let e = delta_estimate(&r, &m, None, HessianSurrogate::Exact, Shape::Full).unwrap();
            let (a, b) = natgrad_pairs_from_gh(&e.g, &e.h, &m);
            assert!((a + &xty).amax() < 1e-12);
            assert!((b.to_matrix() - &prec * 0.5).amax() < 1e-12);
        }
    }
}
