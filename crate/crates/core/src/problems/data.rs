//! Synthetic datasets and their text format.
//!
//! ```text
//! # dataset kind=gmm n=200 d=1 seed=7
//! # truth -2.1
//! # truth 1.9
//! x_1 ... x_d y
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so parsing a written
//! dataset gives back the same bits.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::glm::sigmoid;
use crate::linalg::{rng_from_seed, standard_normal};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// `y = x^T w + 0.5 eps`.
    Linreg,
    /// Labels `+-1` drawn with `P(y = 1) = sigmoid(x^T w)`.
    Logreg,
    /// Two unit-variance clusters picked with probability 1/2; `y` holds the
    /// cluster index (0 or 1).
    Gmm,
    /// Four noisy clusters at `2 (+-1, +-1)`, label = product of the signs.
    /// Requires `d = 2`.
    Xor,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Linreg => "linreg",
            DatasetKind::Logreg => "logreg",
            DatasetKind::Gmm => "gmm",
            DatasetKind::Xor => "xor",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linreg" => Ok(DatasetKind::Linreg),
            "logreg" => Ok(DatasetKind::Logreg),
            "gmm" => Ok(DatasetKind::Gmm),
            "xor" => Ok(DatasetKind::Xor),
            other => Err(Error::UnknownName(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// `n x d` inputs (data points for `gmm`).
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Generating parameters: the weight vector for `linreg` / `logreg`, the two
    /// cluster means for `gmm`, nothing for `xor`.
    pub truth: Vec<DVector<f64>>,
}

pub fn make_dataset(kind: DatasetKind, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs n >= 1".into()));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("dataset needs d >= 1".into()));
    }
    if kind == DatasetKind::Xor && d != 2 {
        return Err(Error::InvalidArgument("xor dataset is two-dimensional".into()));
    }
    let mut rng = rng_from_seed(seed, 0);
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let truth = match kind {
        DatasetKind::Linreg | DatasetKind::Logreg => {
            let w = standard_normal(&mut rng, d) * if kind == DatasetKind::Logreg { 2.0 } else { 1.0 };
            for i in 0..n {
                let xi = standard_normal(&mut rng, d);
                let z = xi.dot(&w);
                y[i] = if kind == DatasetKind::Linreg {
                    z + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                } else if rng.random::<f64>() < sigmoid(z) {
                    1.0
                } else {
                    -1.0
                };
                x.set_row(i, &xi.transpose());
            }
            vec![w]
        }
        DatasetKind::Gmm => {
            let means: Vec<DVector<f64>> = [-2.0, 2.0]
                .iter()
                .map(|c| DVector::from_element(d, *c) + standard_normal(&mut rng, d) * 0.5)
                .collect();
            for i in 0..n {
                let k = usize::from(rng.random::<f64>() >= 0.5);
                let xi = &means[k] + standard_normal(&mut rng, d);
                x.set_row(i, &xi.transpose());
                y[i] = k as f64;
            }
            means
        }
        DatasetKind::Xor => {
            for i in 0..n {
                let s1 = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                let s2 = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                let noise = standard_normal(&mut rng, 2) * 0.25;
                x[(i, 0)] = 2.0 * s1 + noise[0];
                x[(i, 1)] = 2.0 * s2 + noise[1];
                y[i] = s1 * s2;
            }
            vec![]
        }
    };
    Ok(Dataset { kind, n, d, seed, x, y, truth })
}

impl Dataset {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dataset kind={} n={} d={} seed={}", self.kind.as_str(), self.n, self.d, self.seed);
        for t in &self.truth {
            s.push_str("# truth");
            for v in t.iter() {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        for i in 0..self.n {
            for k in 0..self.d {
                let _ = write!(s, "{} ", self.x[(i, k)]);
            }
            let _ = writeln!(s, "{}", self.y[i]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let rest = header
            .strip_prefix("# dataset ")
            .ok_or_else(|| Error::Parse("missing `# dataset` header".into()))?;
        let (mut kind, mut n, mut d, mut seed) = (None, None, None, None);
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field `{field}`")))?;
            match k {
                "kind" => kind = Some(v.parse::<DatasetKind>()?),
                "n" => n = Some(parse_num::<usize>(v)?),
                "d" => d = Some(parse_num::<usize>(v)?),
                "seed" => seed = Some(parse_num::<u64>(v)?),
                other => return Err(Error::Parse(format!("unknown header field `{other}`"))),
            }
        }
        let missing = |what: &str| Error::Parse(format!("header lacks `{what}`"));
        let kind = kind.ok_or_else(|| missing("kind"))?;
        let n = n.ok_or_else(|| missing("n"))?;
        let d = d.ok_or_else(|| missing("d"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;

        let mut truth = Vec::new();
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        let mut row = 0;
        for line in lines {
            if let Some(t) = line.strip_prefix("# truth") {
                let vals = t.split_whitespace().map(parse_num::<f64>).collect::<Result<Vec<_>>>()?;
                truth.push(DVector::from_vec(vals));
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if row >= n {
                return Err(Error::Parse(format!("more than {n} records")));
            }
            let vals = line.split_whitespace().map(parse_num::<f64>).collect::<Result<Vec<_>>>()?;
            if vals.len() != d + 1 {
                return Err(Error::Parse(format!("record {} has {} fields, expected {}", row + 1, vals.len(), d + 1)));
            }
            for k in 0..d {
                x[(row, k)] = vals[k];
            }
            y[row] = vals[d];
            row += 1;
        }
        if row != n {
            return Err(Error::Parse(format!("expected {n} records, found {row}")));
        }
        Ok(Dataset { kind, n, d, seed, x, y, truth })
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
}
