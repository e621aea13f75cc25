//! Experiment specification, its text-file form and the reproducibility hash.

use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use stiefel_svrg::{RetractionKind, StepMode};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Pca,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SSvrg,
    SSvrgBb,
    SSgd,
    Rgd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SSvrg => "s-svrg",
            Method::SSvrgBb => "s-svrg-bb",
            Method::SSgd => "s-sgd",
            Method::Rgd => "rgd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "s-svrg" => Ok(Method::SSvrg),
            "s-svrg-bb" => Ok(Method::SSvrgBb),
            "s-sgd" => Ok(Method::SSgd),
            "rgd" => Ok(Method::Rgd),
            _ => Err(format!("unknown method `{s}`")),
        }
    }
}

impl FromStr for ProblemKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pca" => Ok(ProblemKind::Pca),
            "mc" => Ok(ProblemKind::Mc),
            _ => Err(format!("unknown problem `{s}`")),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Pca => "pca",
            ProblemKind::Mc => "mc",
        })
    }
}

/// `fixed:<τ>`, `bb` or `thm1:<μ>,<κ>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSpec {
    Fixed(f64),
    Bb,
    Thm1 { mu: f64, kappa: f64 },
}

impl StepSpec {
    pub fn to_mode(self) -> StepMode {
        match self {
            StepSpec::Fixed(t) => StepMode::Fixed(t),
            StepSpec::Bb => StepMode::bb_default(),
            StepSpec::Thm1 { mu, kappa } => StepMode::Theorem1 { mu, kappa },
        }
    }
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSpec::Fixed(t) => write!(f, "fixed:{t}"),
            StepSpec::Bb => f.write_str("bb"),
            StepSpec::Thm1 { mu, kappa } => write!(f, "thm1:{mu},{kappa}"),
        }
    }
}

impl FromStr for StepSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
        if s == "bb" {
            return Ok(StepSpec::Bb);
        }
        if let Some(t) = s.strip_prefix("fixed:") {
            return Ok(StepSpec::Fixed(num(t)?));
        }
        if let Some(rest) = s.strip_prefix("thm1:") {
            let (mu, kappa) = rest.split_once(',').ok_or("thm1 needs <mu>,<kappa>")?;
            return Ok(StepSpec::Thm1 { mu: num(mu)?, kappa: num(kappa)? });
        }
        Err(format!("unknown step `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerK {
    /// `5 / batch-frac`, i.e. five effective data passes per epoch.
    Auto,
    Count(usize),
}

impl fmt::Display for InnerK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InnerK::Auto => f.write_str("auto"),
            InnerK::Count(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub problem: ProblemKind,
    pub method: Method,
    pub retraction: RetractionKind,
    pub d: usize,
    pub n: usize,
    pub r: usize,
    pub rho: f64,
    pub step: StepSpec,
    pub batch_frac: f64,
    pub inner_k: InnerK,
    pub max_epochs: usize,
    pub grad_tol: f64,
    pub runs: usize,
    pub seed: u64,
    /// Condition number of the synthetic MC ground truth.
    pub cond: f64,
    /// PCA data (CSV or binary) or MC triples; synthetic data when absent.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Pca,
            method: Method::SSvrgBb,
            retraction: RetractionKind::Jd(stiefel_svrg::JdPhi::Linear),
            d: 200,
            n: 2000,
            r: 5,
            rho: 0.0,
            step: StepSpec::Bb,
            batch_frac: 0.01,
            inner_k: InnerK::Auto,
            max_epochs: 200,
            grad_tol: 1e-6,
            runs: 20,
            seed: 0,
            cond: 10.0,
            data: None,
            out: None,
        }
    }
}

/// Keys accepted by [`ExperimentSpec::set`], in canonical order.
pub const KEYS: [&str; 17] = [
    "problem",
    "method",
    "retraction",
    "d",
    "n",
    "r",
    "rho",
    "step",
    "batch-frac",
    "inner-k",
    "max-epochs",
    "grad-tol",
    "runs",
    "seed",
    "cond",
    "data",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::BadValue { key: key.to_string(), msg: e.to_string() })
}

impl ExperimentSpec {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "problem" => self.problem = parse(key, v)?,
            "method" => self.method = parse(key, v)?,
            "retraction" => self.retraction = parse(key, v)?,
            "d" => self.d = parse(key, v)?,
            "n" => self.n = parse(key, v)?,
            "r" => self.r = parse(key, v)?,
            "rho" => self.rho = parse(key, v)?,
            "step" => self.step = parse(key, v)?,
            "batch-frac" => self.batch_frac = parse(key, v)?,
            "inner-k" => {
                self.inner_k = if v == "auto" { InnerK::Auto } else { InnerK::Count(parse(key, v)?) };
            }
            "max-epochs" => self.max_epochs = parse(key, v)?,
            "grad-tol" => self.grad_tol = parse(key, v)?,
            "runs" => self.runs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "cond" => self.cond = parse(key, v)?,
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        Some(match key {
            "problem" => self.problem.to_string(),
            "method" => self.method.to_string(),
            "retraction" => self.retraction.to_string(),
            "d" => self.d.to_string(),
            "n" => self.n.to_string(),
            "r" => self.r.to_string(),
            "rho" => self.rho.to_string(),
            "step" => self.step.to_string(),
            "batch-frac" => self.batch_frac.to_string(),
            "inner-k" => self.inner_k.to_string(),
            "max-epochs" => self.max_epochs.to_string(),
            "grad-tol" => self.grad_tol.to_string(),
            "runs" => self.runs.to_string(),
            "seed" => self.seed.to_string(),
            "cond" => self.cond.to_string(),
            "data" => path(&self.data),
            "out" => path(&self.out),
            _ => return None,
        })
    }

    /// Apply `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: no + 1 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    /// `key=value` lines for every setting that influences the numbers.
    pub fn canonical(&self) -> String {
        KEYS.iter()
            .filter(|k| !matches!(**k, "out" | "runs"))
            .map(|k| format!("{k}={}\n", self.get(k).unwrap()))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn batch(&self) -> usize {
        ((self.batch_frac * self.n as f64).round() as usize).max(1)
    }

    pub fn inner_iterations(&self) -> usize {
        match self.inner_k {
            InnerK::Count(k) => k,
            InnerK::Auto => ((5.0 / self.batch_frac).round() as usize).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.r == 0 || self.r > self.d || self.n == 0 {
            return bad("need 1 <= r <= d and n >= 1");
        }
        if !(self.batch_frac > 0.0 && self.batch_frac <= 1.0) {
            return bad("batch-frac must lie in (0, 1]");
        }
        if self.inner_iterations() == 0 {
            return bad("inner-k must be at least 1");
        }
        if self.method == Method::SSvrgBb && self.step != StepSpec::Bb {
            return bad("s-svrg-bb uses the bb step");
        }
        if matches!(self.method, Method::Rgd | Method::SSgd) && matches!(self.step, StepSpec::Thm1 { .. }) {
            return bad("thm1 steps apply to s-svrg only");
        }
        if let Some(out) = &self.out {
            std::fs::create_dir_all(out)?;
            let probe = out.join(".write-probe");
            std::fs::write(&probe, b"")?;
            std::fs::remove_file(probe)?;
        }
        Ok(())
    }
}
