//! Experiment configs: flat `section.key = value` lines with JSON scalar values.
//!
//! ```text
//! # comment
//! run.steps = 200
//! run.seed = 1
//! run.output = "out/newton"
//! optimizer.name = "newton"
//! problem.kind = "quadratic"
//! ```
//!
//! Unknown and duplicate keys are rejected. Everything except `run.*`,
//! `optimizer.name` and `problem.kind` has a default taken from the optimizer
//! preset or [`ProblemSpec::new`]. Vectors are written as indexed keys
//! (`optimizer.init_mean.0`, `optimizer.init_mean.1`, ...).

use std::collections::BTreeMap;
use std::path::PathBuf;

use blrkit::blr::{Rate, Schedule};
use blrkit::estimators::{Concrete, EstimatorMode, HessianSurrogate, DEFAULT_SAMPLES};
use blrkit::optimizers::{registry, OptimizerSpec};
use blrkit::problems::DatasetKind;
use serde_json::Value;
use thiserror::Error;

use crate::problem::{ProblemKind, ProblemSpec};

pub const SEED_ENV: &str = "BLRKIT_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("`{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub optimizer: OptimizerSpec,
    pub problem: ProblemSpec,
    pub steps: usize,
    pub seed: u64,
    /// Output prefix; the run writes `<output>.csv` and `<output>.json`.
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn csv_path(&self) -> PathBuf {
        with_suffix(&self.output, "csv")
    }

    pub fn json_path(&self) -> PathBuf {
        with_suffix(&self.output, "json")
    }

    /// Replaces the seed with `BLRKIT_SEED` when that variable is set.
    pub fn apply_env_seed(&mut self) -> Result<(), ConfigError> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.seed = s.trim().parse().map_err(|_| invalid(SEED_ENV, format!("not an unsigned integer: {s:?}")))?;
        }
        Ok(())
    }
}

fn with_suffix(p: &std::path::Path, ext: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Reads a config file and applies the seed override.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config(&text)?;
    cfg.apply_env_seed()?;
    Ok(cfg)
}

/// Key-value pairs in file order, with syntax and duplicate checks.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, Value>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |msg: &str| ConfigError::Syntax { line: i + 1, msg: msg.to_string() };
        let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-')) {
            return Err(syntax(&format!("bad key {key:?}")));
        }
        let value: Value = serde_json::from_str(value.trim()).map_err(|e| syntax(&format!("value is not JSON: {e}")))?;
        if value.is_array() || value.is_object() {
            return Err(syntax("values must be JSON scalars"));
        }
        if out.insert(key.to_string(), value).is_some() {
            return Err(ConfigError::Duplicate(key.to_string()));
        }
    }
    Ok(out)
}

/// Consumes keys from the parsed map; whatever is left at the end is unknown.
struct Fields(BTreeMap<String, Value>);

impl Fields {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.0.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<Value, ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.take(key).map(|v| as_f64(key, &v)).transpose()
    }

    /// `null` and absence both mean `None`.
    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => as_f64(key, &v).map(Some),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.take(key).map(|v| as_u64(key, &v)).transpose()
    }

    fn opt_u64(&mut self, key: &str) -> Result<Option<Option<u64>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Null) => Ok(Some(None)),
            Some(v) => as_u64(key, &v).map(|x| Some(Some(x))),
        }
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.take(key).map(|v| v.as_bool().ok_or_else(|| invalid(key, "expected true or false"))).transpose()
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        self.take(key).map(|v| as_string(key, &v)).transpose()
    }

    /// `prefix.0`, `prefix.1`, ... as a vector; keys must be contiguous from 0.
    fn indexed(&mut self, prefix: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let dotted = format!("{prefix}.");
        let keys: Vec<String> = self.0.keys().filter(|k| k.starts_with(&dotted)).cloned().collect();
        if keys.is_empty() {
            return Ok(None);
        }
        let mut vals = vec![None; keys.len()];
        for k in keys {
            let idx: usize = k[dotted.len()..].parse().map_err(|_| ConfigError::UnknownKey(k.clone()))?;
            if idx >= vals.len() {
                return Err(invalid(&k, format!("indices of `{prefix}` must run from 0 without gaps")));
            }
            let v = self.take(&k).expect("key listed above");
            vals[idx] = Some(as_f64(&k, &v)?);
        }
        Ok(Some(vals.into_iter().map(|v| v.expect("indices are a permutation")).collect()))
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| invalid(key, format!("expected a number, got {v}")))
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    v.as_u64().ok_or_else(|| invalid(key, format!("expected an unsigned integer, got {v}")))
}

fn as_string(key: &str, v: &Value) -> Result<String, ConfigError> {
    v.as_str().map(str::to_string).ok_or_else(|| invalid(key, format!("expected a string, got {v}")))
}

fn usize_of(key: &str, v: u64) -> Result<usize, ConfigError> {
    usize::try_from(v).map_err(|_| invalid(key, "value too large"))
}

fn mode_name(m: EstimatorMode) -> &'static str {
    match m {
        EstimatorMode::Delta => "delta",
        EstimatorMode::MonteCarlo { .. } => "monte-carlo",
        EstimatorMode::WeightPerturb { .. } => "weight-perturb",
    }
}

fn hessian_name(h: HessianSurrogate) -> &'static str {
    match h {
        HessianSurrogate::Exact => "exact",
        HessianSurrogate::GaussNewton => "gauss-newton",
        HessianSurrogate::GradMagnitude => "grad-magnitude",
    }
}

fn parse_hessian(key: &str, s: &str) -> Result<HessianSurrogate, ConfigError> {
    [HessianSurrogate::Exact, HessianSurrogate::GaussNewton, HessianSurrogate::GradMagnitude]
        .into_iter()
        .find(|h| hessian_name(*h) == s)
        .ok_or_else(|| invalid(key, format!("unknown curvature `{s}` (exact, gauss-newton, grad-magnitude)")))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut f = Fields(parse_pairs(text)?);

    let steps = usize_of("run.steps", as_u64("run.steps", &f.required("run.steps")?)?)?;
    let seed = as_u64("run.seed", &f.required("run.seed")?)?;
    let output = PathBuf::from(as_string("run.output", &f.required("run.output")?)?);

    let name = as_string("optimizer.name", &f.required("optimizer.name")?)?;
    if registry().entry(&name).is_err() {
        let known = registry().names().join(", ");
        return Err(invalid("optimizer.name", format!("unknown optimizer `{name}` (known: {known})")));
    }
    let mut opt = OptimizerSpec::preset(&name).map_err(|e| invalid("optimizer.name", e.to_string()))?;

    let rho = f.f64("optimizer.rho")?.unwrap_or(opt.schedule.rho.at(0));
    let offset = f.f64("optimizer.rho_offset")?;
    let power = f.f64("optimizer.rho_power")?;
    let rho = match (offset, power) {
        (None, None) => Rate::Constant(rho),
        (Some(offset), power) => Rate::Decay { initial: rho, offset, power: power.unwrap_or(1.0) },
        (None, Some(_)) => return Err(invalid("optimizer.rho_power", "needs optimizer.rho_offset")),
    };
    let gamma = f.f64("optimizer.gamma")?.unwrap_or(0.0);
    opt.schedule = Schedule { rho, gamma: Rate::Constant(gamma) };

    let x = &mut opt.extras;
    x.alpha = f.opt_f64("optimizer.alpha")?.or(x.alpha);
    x.beta = f.opt_f64("optimizer.beta")?.or(x.beta);
    x.c = f.f64("optimizer.c")?.unwrap_or(x.c);
    x.pi1 = f.f64("optimizer.pi1")?.unwrap_or(x.pi1);
    x.s0 = f.f64("optimizer.s0")?.unwrap_or(x.s0);
    if let Some(k) = f.u64("optimizer.components")? {
        x.components = usize_of("optimizer.components", k)?;
    }
    if let Some(m) = f.opt_u64("optimizer.minibatch")? {
        x.minibatch = m.map(|m| usize_of("optimizer.minibatch", m)).transpose()?;
    }
    x.tol = f.f64("optimizer.tol")?.unwrap_or(x.tol);
    x.init_scale = f.f64("optimizer.init_scale")?.unwrap_or(x.init_scale);
    x.init_precision = f.f64("optimizer.init_precision")?.unwrap_or(x.init_precision);
    x.sqrt_scaling = f.bool("optimizer.sqrt_scaling")?.unwrap_or(x.sqrt_scaling);
    x.exact_momentum = f.bool("optimizer.exact_momentum")?.unwrap_or(x.exact_momentum);
    x.far_apart = f.bool("optimizer.far_apart")?.unwrap_or(x.far_apart);
    x.init_mean = f.indexed("optimizer.init_mean")?.or(x.init_mean.take());

    let e = &mut opt.estimator;
    let samples = match f.u64("estimator.samples")? {
        Some(n) => usize_of("estimator.samples", n)?,
        None => match e.mode {
            EstimatorMode::MonteCarlo { samples } | EstimatorMode::WeightPerturb { samples } => samples,
            EstimatorMode::Delta => DEFAULT_SAMPLES,
        },
    };
    let mode = f.string("estimator.mode")?.unwrap_or_else(|| mode_name(e.mode).to_string());
    e.mode = match mode.as_str() {
        "delta" => EstimatorMode::Delta,
        "monte-carlo" => EstimatorMode::MonteCarlo { samples },
        "weight-perturb" => EstimatorMode::WeightPerturb { samples },
        other => return Err(invalid("estimator.mode", format!("unknown mode `{other}` (delta, monte-carlo, weight-perturb)"))),
    };
    if let Some(h) = f.string("estimator.hessian")? {
        e.hessian = parse_hessian("estimator.hessian", &h)?;
    }
    e.concrete = Concrete {
        tau: f.f64("estimator.tau")?.unwrap_or(e.concrete.tau),
        noise: f.bool("estimator.noise")?.unwrap_or(e.concrete.noise),
    };
    if let Some(c) = f.opt_u64("estimator.common_noise")? {
        e.common_noise = c;
    }
    opt.validate().map_err(|err| invalid("optimizer", err.to_string()))?;

    let kind_s = as_string("problem.kind", &f.required("problem.kind")?)?;
    let kind: ProblemKind = kind_s.parse().map_err(|_| {
        let known: Vec<_> = ProblemKind::ALL.iter().map(|k| k.as_str()).collect();
        invalid("problem.kind", format!("unknown problem `{kind_s}` (known: {})", known.join(", ")))
    })?;
    let mut problem = ProblemSpec::new(kind);
    match f.take("problem.dataset") {
        None | Some(Value::Null) => {}
        Some(v) => {
            let s = as_string("problem.dataset", &v)?;
            problem.dataset =
                Some(s.parse::<DatasetKind>().map_err(|_| invalid("problem.dataset", format!("unknown dataset `{s}`")))?);
        }
    }
    if let Some(n) = f.u64("problem.n")? {
        problem.n = usize_of("problem.n", n)?;
    }
    if let Some(d) = f.u64("problem.d")? {
        problem.d = usize_of("problem.d", d)?;
    }
    problem.seed = f.u64("problem.seed")?.unwrap_or(problem.seed);
    problem.delta = f.f64("problem.delta")?.unwrap_or(problem.delta);
    if let Some(h) = f.u64("problem.hidden")? {
        problem.hidden = usize_of("problem.hidden", h)?;
    }
    problem.scale = f.f64("problem.scale")?.unwrap_or(problem.scale);

    if let Some(k) = f.0.keys().next() {
        return Err(ConfigError::UnknownKey(k.clone()));
    }
    Ok(ExperimentConfig { optimizer: opt, problem, steps, seed, output })
}

/// Every key with its value, defaults included, in a stable order.
pub fn to_pairs(cfg: &ExperimentConfig) -> Vec<(String, Value)> {
    let mut out: Vec<(String, Value)> = Vec::new();
    let mut put = |k: &str, v: Value| out.push((k.to_string(), v));
    let num = |x: f64| Value::from(x);
    let opt_num = |x: Option<f64>| x.map(Value::from).unwrap_or(Value::Null);

    put("run.steps", Value::from(cfg.steps as u64));
    put("run.seed", Value::from(cfg.seed));
    put("run.output", Value::from(cfg.output.to_string_lossy().into_owned()));

    let o = &cfg.optimizer;
    put("optimizer.name", Value::from(o.name.clone()));
    match o.schedule.rho {
        Rate::Constant(r) => put("optimizer.rho", num(r)),
        Rate::Decay { initial, offset, power } => {
            put("optimizer.rho", num(initial));
            put("optimizer.rho_offset", num(offset));
            put("optimizer.rho_power", num(power));
        }
    }
    put("optimizer.gamma", num(o.schedule.gamma.at(0)));
    let x = &o.extras;
    put("optimizer.alpha", opt_num(x.alpha));
    put("optimizer.beta", opt_num(x.beta));
    put("optimizer.c", num(x.c));
    put("optimizer.pi1", num(x.pi1));
    put("optimizer.s0", num(x.s0));
    put("optimizer.components", Value::from(x.components as u64));
    put("optimizer.minibatch", x.minibatch.map(|m| Value::from(m as u64)).unwrap_or(Value::Null));
    put("optimizer.tol", num(x.tol));
    put("optimizer.init_scale", num(x.init_scale));
    put("optimizer.init_precision", num(x.init_precision));
    put("optimizer.sqrt_scaling", Value::from(x.sqrt_scaling));
    put("optimizer.exact_momentum", Value::from(x.exact_momentum));
    put("optimizer.far_apart", Value::from(x.far_apart));
    for (i, v) in x.init_mean.iter().flatten().enumerate() {
        put(&format!("optimizer.init_mean.{i}"), num(*v));
    }

    let e = &o.estimator;
    put("estimator.mode", Value::from(mode_name(e.mode)));
    let samples = match e.mode {
        EstimatorMode::MonteCarlo { samples } | EstimatorMode::WeightPerturb { samples } => samples,
        EstimatorMode::Delta => DEFAULT_SAMPLES,
    };
    put("estimator.samples", Value::from(samples as u64));
    put("estimator.hessian", Value::from(hessian_name(e.hessian)));
    put("estimator.tau", num(e.concrete.tau));
    put("estimator.noise", Value::from(e.concrete.noise));
    put("estimator.common_noise", e.common_noise.map(Value::from).unwrap_or(Value::Null));

    let p = &cfg.problem;
    put("problem.kind", Value::from(p.kind.as_str()));
    put("problem.dataset", p.dataset.map(|d| Value::from(d.as_str())).unwrap_or(Value::Null));
    put("problem.n", Value::from(p.n as u64));
    put("problem.d", Value::from(p.d as u64));
    put("problem.seed", Value::from(p.seed));
    put("problem.delta", num(p.delta));
    put("problem.hidden", Value::from(p.hidden as u64));
    put("problem.scale", num(p.scale));
    out
}

/// Config text with every key spelled out; parses back to an equal config.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    to_pairs(cfg).into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
