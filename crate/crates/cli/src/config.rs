//! Run configuration: command-line flags merged with an optional JSON file,
//! resolved into typed settings, and hashed for provenance.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uials::als::Regularization;
use uials::simulation::UnknownInputSignal;

use crate::error::CliError;

/// Every setting is optional here; values from a config file replace flag
/// values field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<PathBuf>,
    /// A gains JSON path or `auto`.
    pub gains: Option<String>,
    /// Autocovariance window `N`.
    pub window: Option<usize>,
    /// Simulated data length `N_d`.
    pub nd: Option<usize>,
    pub input: Option<String>,
    pub q: Option<PathBuf>,
    pub r: Option<PathBuf>,
    pub reg: Option<String>,
    pub problem: Option<String>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Overlay the fields set in `file` on `self`.
    pub fn overlay(mut self, file: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(if file.$f.is_some() { self.$f = file.$f; })*};
        }
        take!(system, gains, window, nd, input, q, r, reg, problem, alpha, seed, out);
        self
    }

    /// Read a config file; relative paths in it are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Parse(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(v) = p.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        rebase(&mut cfg.system);
        rebase(&mut cfg.q);
        rebase(&mut cfg.r);
        rebase(&mut cfg.out);
        if let Some(g) = cfg.gains.as_mut() {
            if g != "auto" && Path::new(g.as_str()).is_relative() {
                *g = base.join(g.as_str()).to_string_lossy().into_owned();
            }
        }
        if let Some(i) = cfg.input.as_mut() {
            if let Some(p) = i.strip_prefix("file:") {
                if Path::new(p).is_relative() {
                    *i = format!("file:{}", base.join(p).display());
                }
            }
        }
        Ok(cfg)
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub enum GainsSource {
    Auto,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Joint,
    QOnly,
    ROnly,
}

/// Settings after defaults and parsing. File contents are read here so the
/// rest of the run never touches paths other than `out`.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub system_text: String,
    pub gains: GainsSource,
    pub gains_text: Option<String>,
    pub window: Option<usize>,
    pub nd: Option<usize>,
    pub input: UnknownInputSignal,
    pub input_label: String,
    pub q: Option<DMatrix<f64>>,
    pub r: Option<DMatrix<f64>>,
    pub q_text: Option<String>,
    pub r_text: Option<String>,
    pub reg: Regularization,
    pub problem: Problem,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Run-defining settings with file contents replaced by digests; the
/// output directory is deliberately excluded.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub system_sha256: String,
    pub gains: String,
    pub window: Option<usize>,
    pub nd: Option<usize>,
    pub input: String,
    pub q_sha256: Option<String>,
    pub r_sha256: Option<String>,
    pub reg: Regularization,
    pub problem: Problem,
    pub alpha: Option<f64>,
    pub seed: u64,
}

impl Resolved {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            system_sha256: sha256_hex(self.system_text.as_bytes()),
            gains: match &self.gains_text {
                Some(t) => format!("sha256:{}", sha256_hex(t.as_bytes())),
                None => "auto".into(),
            },
            window: self.window,
            nd: self.nd,
            input: self.input_label.clone(),
            q_sha256: self.q_text.as_ref().map(|t| sha256_hex(t.as_bytes())),
            r_sha256: self.r_text.as_ref().map(|t| sha256_hex(t.as_bytes())),
            reg: self.reg,
            problem: self.problem,
            alpha: self.alpha,
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON of [`Resolved::provenance`].
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(&self.provenance()).expect("provenance serializes");
        sha256_hex(&json)
    }

    pub fn require_window(&self) -> Result<usize, CliError> {
        self.window
            .ok_or_else(|| CliError::Parse("the window N is required (-N <int>)".into()))
    }
}

pub fn parse_reg(s: &str) -> Result<Regularization, CliError> {
    match s {
        "none" => Ok(Regularization::None),
        "minnorm" => Ok(Regularization::MinNorm),
        _ => {
            let lambda = s
                .strip_prefix("tik:")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::Parse(format!(
                        "bad --reg '{s}': use none, minnorm or tik:<lambda>"
                    ))
                })?;
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(CliError::Parse(format!(
                    "Tikhonov lambda must be positive, got {lambda}"
                )));
            }
            Ok(Regularization::Tikhonov(lambda))
        }
    }
}

fn parse_problem(s: &str) -> Result<Problem, CliError> {
    match s {
        "joint" => Ok(Problem::Joint),
        "q-only" => Ok(Problem::QOnly),
        "r-only" => Ok(Problem::ROnly),
        _ => Err(CliError::Parse(format!(
            "bad --problem '{s}': use joint, q-only or r-only"
        ))),
    }
}

fn numbers(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Parse(format!("bad {what} '{s}'")))
}

fn number<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CliError> {
    s.parse()
        .map_err(|_| CliError::Parse(format!("bad {what} '{s}'")))
}

/// Input signal syntax: `zero`, `step:<time>:<l1,..>`,
/// `sine:<a1,..>:<period>:<phase>`, `walk:<variance>:<seed>` (per-step
/// covariance `variance * I`), or `file:<path>` with a JSON array of rows.
/// `q` is needed to size the random-walk covariance.
pub fn parse_input(spec: &str, q: usize) -> Result<UnknownInputSignal, CliError> {
    let parts: Vec<&str> = spec.splitn(2, ':').collect();
    let rest = parts.get(1).copied().unwrap_or("");
    let fields: Vec<&str> = rest.split(':').collect();
    let bad = || CliError::Parse(format!("bad --input '{spec}'"));
    match parts[0] {
        "zero" if rest.is_empty() => Ok(UnknownInputSignal::Zero),
        "step" if fields.len() == 2 => Ok(UnknownInputSignal::Step {
            time: number(fields[0], "step time")?,
            level: numbers(fields[1], "step level")?,
        }),
        "sine" if fields.len() == 3 => Ok(UnknownInputSignal::Sinusoid {
            amplitude: numbers(fields[0], "sine amplitude")?,
            period: number(fields[1], "sine period")?,
            phase: number(fields[2], "sine phase")?,
        }),
        "walk" if fields.len() == 2 => {
            let var: f64 = number(fields[0], "walk variance")?;
            if !(var >= 0.0) {
                return Err(bad());
            }
            Ok(UnknownInputSignal::RandomWalk {
                step_cov: DMatrix::identity(q, q) * var,
                seed: number(fields[1], "walk seed")?,
            })
        }
        "file" if !rest.is_empty() => {
            let text = read(Path::new(rest))?;
            let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
                .map_err(|e| CliError::Parse(format!("input file {rest}: {e}")))?;
            Ok(UnknownInputSignal::Explicit(
                rows.into_iter().map(DVector::from_vec).collect(),
            ))
        }
        _ => Err(bad()),
    }
}

fn read_matrix(path: &Path) -> Result<(DMatrix<f64>, String), CliError> {
    let text = read(path)?;
    let m = uials::io::matrix_from_json(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok((m, text))
}

/// Apply defaults and read referenced files. `q_dim` sizes the random-walk
/// input; the system file has to be read first to know it.
pub fn resolve(cfg: &RunConfig, system_text: String, q_dim: usize) -> Result<Resolved, CliError> {
    let gains = match cfg.gains.as_deref() {
        None | Some("auto") => GainsSource::Auto,
        Some(p) => GainsSource::File(PathBuf::from(p)),
    };
    let gains_text = match &gains {
        GainsSource::Auto => None,
        GainsSource::File(p) => Some(read(p)?),
    };
    if cfg.window == Some(0) {
        return Err(CliError::Parse("N must be at least 1".into()));
    }
    if let (Some(n), Some(nd)) = (cfg.window, cfg.nd) {
        if nd < n {
            return Err(CliError::Parse(format!(
                "N_d = {nd} is smaller than N = {n}"
            )));
        }
    }
    let input_label = cfg.input.clone().unwrap_or_else(|| "zero".into());
    let input = parse_input(&input_label, q_dim)?;
    let (q, q_text) = match &cfg.q {
        Some(p) => {
            let (m, t) = read_matrix(p)?;
            (Some(m), Some(t))
        }
        None => (None, None),
    };
    let (r, r_text) = match &cfg.r {
        Some(p) => {
            let (m, t) = read_matrix(p)?;
            (Some(m), Some(t))
        }
        None => (None, None),
    };
    Ok(Resolved {
        system_text,
        gains,
        gains_text,
        window: cfg.window,
        nd: cfg.nd,
        input,
        input_label,
        q,
        r,
        q_text,
        r_text,
        reg: parse_reg(cfg.reg.as_deref().unwrap_or("minnorm"))?,
        problem: parse_problem(cfg.problem.as_deref().unwrap_or("joint"))?,
        alpha: cfg.alpha,
        seed: cfg.seed.unwrap_or(1),
        out: cfg.out.clone(),
    })
}
