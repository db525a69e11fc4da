//! Data-free test functions.

use nalgebra::{DMatrix, DVector};

use super::{check_theta, Batch, Objective};
use crate::linalg::{spd_cholesky, symmetrize};
use crate::{Error, Result};

/// `1/2 theta^T A theta - b^T theta` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

pub fn quadratic(a: DMatrix<f64>, b: DVector<f64>) -> Result<Quadratic> {
    if !a.is_square() || a.nrows() != b.len() || b.is_empty() {
        return Err(Error::InvalidArgument("quadratic needs a square matrix matching b".into()));
    }
    if (&a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
        return Err(Error::InvalidArgument("quadratic matrix is not symmetric".into()));
    }
    spd_cholesky(&a, "quadratic matrix")?;
    Ok(Quadratic { a: symmetrize(&a), b })
}

impl Quadratic {
    pub fn minimizer(&self) -> DVector<f64> {
        spd_cholesky(&self.a, "quadratic matrix").expect("checked at construction").solve(&self.b)
    }
}

impl Objective for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, theta: &DVector<f64>, _: Batch) -> Result<f64> {
        check_theta(self, theta)?;
        Ok(0.5 * theta.dot(&(&self.a * theta)) - self.b.dot(theta))
    }
    fn gradient(&self, theta: &DVector<f64>, _: Batch) -> Result<DVector<f64>> {
        check_theta(self, theta)?;
        Ok(&self.a * theta - &self.b)
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, theta: &DVector<f64>, _: Batch) -> Result<DMatrix<f64>> {
        check_theta(self, theta)?;
        Ok(self.a.clone())
    }
}

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// One-dimensional objective given by closed-form value, slope and curvature.
pub struct Scalar1d {
    name: &'static str,
    f: ScalarFn,
    df: ScalarFn,
    d2f: ScalarFn,
}

impl std::fmt::Debug for Scalar1d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scalar1d").field("name", &self.name).finish()
    }
}

impl Scalar1d {
    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }
    pub fn slope(&self, t: f64) -> f64 {
        (self.df)(t)
    }
    pub fn curvature(&self, t: f64) -> f64 {
        (self.d2f)(t)
    }
}

impl Objective for Scalar1d {
    fn name(&self) -> &str {
        self.name
    }
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, theta: &DVector<f64>, _: Batch) -> Result<f64> {
        check_theta(self, theta)?;
        Ok((self.f)(theta[0]))
    }
    fn gradient(&self, theta: &DVector<f64>, _: Batch) -> Result<DVector<f64>> {
        check_theta(self, theta)?;
        Ok(DVector::from_element(1, (self.df)(theta[0])))
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, theta: &DVector<f64>, _: Batch) -> Result<DMatrix<f64>> {
        check_theta(self, theta)?;
        Ok(DMatrix::from_element(1, 1, (self.d2f)(theta[0])))
    }
}

/// `scale * (theta^2 - 1)^2`: minima at +-1, local maximum `scale` at 0.
pub fn double_well(scale: f64) -> Result<Scalar1d> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("double-well scale must be positive, got {scale}")));
    }
    Ok(Scalar1d {
        name: "double-well",
        f: Box::new(move |t| scale * (t * t - 1.0).powi(2)),
        df: Box::new(move |t| 4.0 * scale * t * (t * t - 1.0)),
        d2f: Box::new(move |t| scale * (12.0 * t * t - 4.0)),
    })
}

/// `theta^3 + theta^2`; under `N(m, v)` the expected slope is `3 (m^2 + v) + 2 m`
/// and the expected curvature `6 m + 2`.
pub fn cubic_1d() -> Scalar1d {
    Scalar1d {
        name: "cubic-1d",
        f: Box::new(|t| t * t * t + t * t),
        df: Box::new(|t| 3.0 * t * t + 2.0 * t),
        d2f: Box::new(|t| 6.0 * t + 2.0),
    }
}

/// `exp(-8 (theta - 1)) + (theta - 1)^2 [theta >= 1]`.
///
/// A steep exponential wall on the left of the minimizer and a gentle quadratic on
/// the right; the pieces join with matching slope at 1 so the loss is C^1.
pub fn asymmetric_1d() -> Scalar1d {
    let step = |t: f64| if t >= 1.0 { 1.0 } else { 0.0 };
    Scalar1d {
        name: "asymmetric-1d",
        f: Box::new(move |t| (-8.0 * (t - 1.0)).exp() + (t - 1.0).powi(2) * step(t)),
        df: Box::new(move |t| -8.0 * (-8.0 * (t - 1.0)).exp() + 2.0 * (t - 1.0) * step(t)),
        d2f: Box::new(move |t| 64.0 * (-8.0 * (t - 1.0)).exp() + 2.0 * step(t)),
    }
}

/// `-exp(-50 (theta + 1)^2) - 0.8 exp(-2 (theta - 1)^2)`: a deep narrow minimum
/// near -1 and a shallower wide one near +1.
pub fn sharp_flat_1d() -> Scalar1d {
    let g = |a: f64, c: f64, w: f64| move |t: f64| w * (-a * (t - c) * (t - c)).exp();
    let sharp = g(50.0, -1.0, 1.0);
    let flat = g(2.0, 1.0, 0.8);
    Scalar1d {
        name: "sharp-flat-1d",
        f: Box::new(move |t| -sharp(t) - flat(t)),
        df: Box::new(move |t| 100.0 * (t + 1.0) * sharp(t) + 4.0 * (t - 1.0) * flat(t)),
        d2f: Box::new(move |t| {
            sharp(t) * (100.0 - 1e4 * (t + 1.0).powi(2)) + flat(t) * (4.0 - 16.0 * (t - 1.0).powi(2))
        }),
    }
}

/// Himmelblau's function; four minima with value 0, one at (3, 2).
#[derive(Debug, Clone, Copy)]
pub struct Himmelblau;

pub fn himmelblau() -> Himmelblau {
    Himmelblau
}

impl Objective for Himmelblau {
    fn name(&self) -> &str {
        "himmelblau"
    }
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, t: &DVector<f64>, _: Batch) -> Result<f64> {
        check_theta(self, t)?;
        let (x, y) = (t[0], t[1]);
        Ok((x * x + y - 11.0).powi(2) + (x + y * y - 7.0).powi(2))
    }
    fn gradient(&self, t: &DVector<f64>, _: Batch) -> Result<DVector<f64>> {
        check_theta(self, t)?;
        let (x, y) = (t[0], t[1]);
        let u = x * x + y - 11.0;
        let v = x + y * y - 7.0;
        Ok(DVector::from_vec(vec![4.0 * x * u + 2.0 * v, 2.0 * u + 4.0 * y * v]))
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, t: &DVector<f64>, _: Batch) -> Result<DMatrix<f64>> {
        check_theta(self, t)?;
        let (x, y) = (t[0], t[1]);
        let u = x * x + y - 11.0;
        let v = x + y * y - 7.0;
        let xy = 4.0 * x + 4.0 * y;
        Ok(DMatrix::from_row_slice(2, 2, &[4.0 * u + 8.0 * x * x + 2.0, xy, xy, 2.0 + 4.0 * v + 8.0 * y * y]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(t: f64) -> DVector<f64> {
        DVector::from_element(1, t)
    }

    #[test]
    fn quadratic_basics() {
        let q = quadratic(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let t = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(q.value(&t, None).unwrap(), 2.5);
        assert_eq!(q.gradient(&t, None).unwrap(), t);
        let q = quadratic(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])), DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_abs_diff_eq!(q.minimizer().as_slice(), [1.0, 1.0].as_slice(), epsilon = 1e-15);
        assert_eq!(q.hessian(&t, None).unwrap(), q.a);
        assert!(quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), DVector::zeros(2)).is_err());
    }

    #[test]
    fn double_well_values() {
        let f = double_well(1.0).unwrap();
        assert_eq!(f.eval(1.0), 0.0);
        assert_eq!(f.eval(-1.0), 0.0);
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.slope(0.0), 0.0);
        assert!(f.curvature(0.0) < 0.0);
    }

    #[test]
    fn himmelblau_minimum() {
        let h = himmelblau();
        let t = DVector::from_vec(vec![3.0, 2.0]);
        assert_eq!(h.value(&t, None).unwrap(), 0.0);
        assert_eq!(h.gradient(&t, None).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn asymmetric_is_c1_at_the_joint() {
        let f = asymmetric_1d();
        let e = 1e-7;
        let left = (f.eval(1.0) - f.eval(1.0 - e)) / e;
        let right = (f.eval(1.0 + e) - f.eval(1.0)) / e;
        assert!((left - right).abs() < 1e-4);
        assert_eq!(f.value(&s(1.0), None).unwrap(), 1.0);
    }

    #[test]
    fn scalar_functions_match_finite_differences() {
        let e = 1e-5;
        for f in [double_well(3.0).unwrap(), asymmetric_1d(), sharp_flat_1d()] {
            for t in [-1.3, -0.4, 0.2, 0.9, 1.6] {
                let fd = (f.eval(t + e) - f.eval(t - e)) / (2.0 * e);
                assert!((fd - f.slope(t)).abs() <= 1e-6 * (1.0 + fd.abs()), "{} at {t}", f.name);
                let fd2 = (f.slope(t + e) - f.slope(t - e)) / (2.0 * e);
                assert!((fd2 - f.curvature(t)).abs() <= 1e-4 * (1.0 + fd2.abs()), "{} at {t}", f.name);
            }
        }
    }
}
