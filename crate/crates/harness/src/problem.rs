//! Problem descriptions that can be built from a config.

use std::fmt;
use std::str::FromStr;

use blrkit::linalg::{rng_from_seed, standard_normal};
use blrkit::problems::{
    asymmetric_1d, binary_mlp_objective, cubic_1d, double_well, himmelblau, logistic_objective, make_dataset,
    mlp_objective, quadratic, ridge_objective, sharp_flat_1d, Dataset, DatasetKind, Objective, Quadratic,
};
use blrkit::{DMatrix, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Quadratic,
    Ridge,
    Logistic,
    Mlp,
    BinaryMlp,
    DoubleWell,
    Asymmetric1d,
    SharpFlat1d,
    Himmelblau,
    Cubic1d,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 10] = [
        ProblemKind::Quadratic,
        ProblemKind::Ridge,
        ProblemKind::Logistic,
        ProblemKind::Mlp,
        ProblemKind::BinaryMlp,
        ProblemKind::DoubleWell,
        ProblemKind::Asymmetric1d,
        ProblemKind::SharpFlat1d,
        ProblemKind::Himmelblau,
        ProblemKind::Cubic1d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Ridge => "ridge",
            ProblemKind::Logistic => "logistic",
            ProblemKind::Mlp => "mlp",
            ProblemKind::BinaryMlp => "binary-mlp",
            ProblemKind::DoubleWell => "double-well",
            ProblemKind::Asymmetric1d => "asymmetric-1d",
            ProblemKind::SharpFlat1d => "sharp-flat-1d",
            ProblemKind::Himmelblau => "himmelblau",
            ProblemKind::Cubic1d => "cubic-1d",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "random strictly convex quadratic of dimension d",
            ProblemKind::Ridge => "squared loss on a dataset plus delta/2 |theta|^2",
            ProblemKind::Logistic => "logistic loss on +-1 labels plus delta/2 |theta|^2",
            ProblemKind::Mlp => "one tanh hidden layer, squared loss",
            ProblemKind::BinaryMlp => "one tanh hidden layer over +-1 weights, logistic loss",
            ProblemKind::DoubleWell => "scale * (theta^2 - 1)^2",
            ProblemKind::Asymmetric1d => "exponential wall left of 1, gentle quadratic right of it",
            ProblemKind::SharpFlat1d => "deep narrow minimum near -1, wide shallow one near +1",
            ProblemKind::Himmelblau => "Himmelblau's function",
            ProblemKind::Cubic1d => "theta^3 + theta^2",
        }
    }

    /// Dataset used when the config does not name one; `None` for data-free problems.
    pub fn default_dataset(self) -> Option<DatasetKind> {
        match self {
            ProblemKind::Ridge | ProblemKind::Mlp => Some(DatasetKind::Linreg),
            ProblemKind::Logistic => Some(DatasetKind::Logreg),
            ProblemKind::BinaryMlp => Some(DatasetKind::Xor),
            _ => None,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Dataset kind for data-backed problems; `None` picks the problem's default.
    pub dataset: Option<DatasetKind>,
    pub n: usize,
    pub d: usize,
    /// Seed of the data (and of the random quadratic).
    pub seed: u64,
    pub delta: f64,
    pub hidden: usize,
    /// Double-well scale.
    pub scale: f64,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind) -> Self {
        Self { kind, dataset: None, n: 100, d: 2, seed: 0, delta: 1.0, hidden: 4, scale: 1.0 }
    }

    pub fn dataset(&self) -> Result<Option<Dataset>> {
        match self.dataset.or(self.kind.default_dataset()) {
            Some(kind) if self.kind.default_dataset().is_some() => Ok(Some(make_dataset(kind, self.n, self.d, self.seed)?)),
            Some(_) => Err(Error::InvalidArgument(format!("{} takes no dataset", self.kind))),
            None => Ok(None),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Objective>> {
        let data = self.dataset()?;
        let arch = [self.d, self.hidden, 1];
        Ok(match (self.kind, data) {
            (ProblemKind::Quadratic, _) => Box::new(random_quadratic(self.d, self.seed)?),
            (ProblemKind::Ridge, Some(data)) => Box::new(ridge_objective(data.x, data.y, self.delta)?),
            (ProblemKind::Logistic, Some(data)) => Box::new(logistic_objective(&data, self.delta)?),
            (ProblemKind::Mlp, Some(data)) => Box::new(mlp_objective(&arch, &data, self.delta)?),
            (ProblemKind::BinaryMlp, Some(data)) => Box::new(binary_mlp_objective(&arch, &data)?),
            (ProblemKind::DoubleWell, _) => Box::new(double_well(self.scale)?),
            (ProblemKind::Asymmetric1d, _) => Box::new(asymmetric_1d()),
            (ProblemKind::SharpFlat1d, _) => Box::new(sharp_flat_1d()),
            (ProblemKind::Himmelblau, _) => Box::new(himmelblau()),
            (ProblemKind::Cubic1d, _) => Box::new(cubic_1d()),
            (kind, None) => unreachable!("{kind} always has a dataset"),
        })
    }
}

/// `A = B B^T / p + I`, `b ~ N(0, I)` with `B` standard normal, from `seed`.
pub fn random_quadratic(p: usize, seed: u64) -> Result<Quadratic> {
    if p == 0 {
        return Err(Error::InvalidArgument("quadratic needs d >= 1".into()));
    }
    let mut rng = rng_from_seed(seed, 0);
    let b = DMatrix::from_iterator(p, p, standard_normal(&mut rng, p * p).iter().copied());
    let a = &b * b.transpose() / p as f64 + DMatrix::identity(p, p);
    let a = (&a + a.transpose()) * 0.5;
    quadratic(a, standard_normal(&mut rng, p))
}
