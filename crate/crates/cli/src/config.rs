//! Run configuration: command-line flags layered over an optional JSON file
//! that uses the same key names, layered over per-command defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::Deserialize;

use qsdlab::models::ModelSpec;
use qsdlab::noise::CorrelationSpec;
use qsdlab::numerics::{ComplexMatrix, TimeGrid, C64};
use qsdlab::QsdError;

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or parameter values (exit 2).
    Usage(String),
    /// A run or check that failed (exit 1).
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<QsdError> for CliError {
    fn from(e: QsdError) -> Self {
        match e {
            QsdError::InvalidSpec(_)
            | QsdError::InvalidDensity(_)
            | QsdError::DimensionMismatch { .. }
            | QsdError::GridMismatch(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("i/o error: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    RwaQubit,
    ThreeLevel,
    ReverseEngineered,
}

impl ModelName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelName::RwaQubit => "rwa-qubit",
            ModelName::ThreeLevel => "three-level",
            ModelName::ReverseEngineered => "reverse-engineered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Numeric,
    Analytic,
    Both,
}

impl MethodArg {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodArg::Numeric => "numeric",
            MethodArg::Analytic => "analytic",
            MethodArg::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerArg {
    Ou,
    ModeSum,
}

impl SamplerArg {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerArg::Ou => "ou",
            SamplerArg::ModeSum => "mode-sum",
        }
    }
}

/// A complex vector written as `[[re, im], ...]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct ComplexVec(pub Vec<[f64; 2]>);

impl FromStr for ComplexVec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_str(s).map_err(|e| format!("expected [[re, im], ...]: {e}"))
    }
}

impl ComplexVec {
    fn values(&self) -> Vec<C64> {
        self.0.iter().map(|[re, im]| C64::new(*re, *im)).collect()
    }
}

/// A complex matrix written as rows of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct ComplexRows(pub Vec<Vec<[f64; 2]>>);

impl FromStr for ComplexRows {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_str(s).map_err(|e| format!("expected [[[re, im], ...], ...]: {e}"))
    }
}

/// Run parameters. Every flag name is also a key of the JSON config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// JSON file with any of the keys below; flags take precedence
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelName>,
    /// Inverse memory time of the OU bath
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Noise strength of the OU bath
    #[arg(long = "Gamma")]
    #[serde(rename = "Gamma")]
    pub big_gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Noise seed (master seed for ensembles)
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "n-paths")]
    #[serde(rename = "n-paths")]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub method: Option<MethodArg>,
    /// Initial state, e.g. '[[1,0],[0,0]]'
    #[arg(long)]
    pub psi0: Option<ComplexVec>,
    /// Initial density matrix as rows of [re, im] pairs
    #[arg(long)]
    pub rho0: Option<ComplexRows>,
    /// Pure target state for fidelity columns
    #[arg(long)]
    pub target: Option<ComplexVec>,
    #[arg(long)]
    pub sampler: Option<SamplerArg>,
    /// Number of modes of the mode-sum sampler
    #[arg(long)]
    pub modes: Option<usize>,
    /// Half width of the mode-sum frequency window, in units of gamma
    #[arg(long)]
    pub window: Option<f64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Also write an SVG plot next to the CSV
    #[arg(long)]
    #[serde(default)]
    pub plot: bool,
}

impl Params {
    fn or(self, lower: Params) -> Params {
        Params {
            config: self.config.or(lower.config),
            model: self.model.or(lower.model),
            gamma: self.gamma.or(lower.gamma),
            big_gamma: self.big_gamma.or(lower.big_gamma),
            lambda: self.lambda.or(lower.lambda),
            omega: self.omega.or(lower.omega),
            tmax: self.tmax.or(lower.tmax),
            dt: self.dt.or(lower.dt),
            seed: self.seed.or(lower.seed),
            n_paths: self.n_paths.or(lower.n_paths),
            method: self.method.or(lower.method),
            psi0: self.psi0.or(lower.psi0),
            rho0: self.rho0.or(lower.rho0),
            target: self.target.or(lower.target),
            sampler: self.sampler.or(lower.sampler),
            modes: self.modes.or(lower.modes),
            window: self.window.or(lower.window),
            output: self.output.or(lower.output),
            plot: self.plot || lower.plot,
        }
    }

    /// Baseline values shared by every command.
    pub fn base_defaults() -> Params {
        Params {
            model: Some(ModelName::RwaQubit),
            gamma: Some(1.0),
            big_gamma: Some(1.0),
            lambda: Some(1.0),
            omega: Some(1.0),
            tmax: Some(5.0),
            dt: Some(1e-3),
            seed: Some(42),
            n_paths: Some(1000),
            method: Some(MethodArg::Numeric),
            sampler: Some(SamplerArg::Ou),
            modes: Some(512),
            window: Some(20.0),
            output: Some(PathBuf::from(".")),
            ..Params::default()
        }
    }
}

fn load_file(path: &Path) -> Result<Params, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Fully resolved and validated parameters of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelName,
    pub gamma: f64,
    pub big_gamma: f64,
    pub lambda: f64,
    pub omega: f64,
    pub tmax: f64,
    pub dt: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub method: MethodArg,
    pub psi0: Option<Vec<C64>>,
    pub rho0: Option<ComplexMatrix>,
    pub target: Option<Vec<C64>>,
    pub sampler: SamplerArg,
    pub modes: usize,
    pub window: f64,
    pub output: PathBuf,
    pub plot: bool,
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    /// Layers `flags` over the config file named in `flags` (if any) and
    /// over `defaults`, then validates.
    pub fn resolve(flags: Params, defaults: Params) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => load_file(p)?,
            None => Params::default(),
        };
        let p = flags.or(file).or(defaults).or(Params::base_defaults());
        let model = p.model.expect("defaulted");
        let gamma = positive("gamma", p.gamma.unwrap())?;
        let big_gamma = positive("Gamma", p.big_gamma.unwrap())?;
        let lambda = p.lambda.unwrap();
        let omega = p.omega.unwrap();
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(CliError::Usage(format!("lambda must be >= 0, got {lambda}")));
        }
        if !omega.is_finite() {
            return Err(CliError::Usage(format!("omega must be finite, got {omega}")));
        }
        if model == ModelName::ReverseEngineered {
            positive("lambda", lambda)?;
            positive("omega", omega)?;
        }
        let tmax = positive("tmax", p.tmax.unwrap())?;
        let dt = positive("dt", p.dt.unwrap())?;
        if dt > tmax {
            return Err(CliError::Usage(format!("dt = {dt} exceeds tmax = {tmax}")));
        }
        let window = positive("window", p.window.unwrap())?;
        let modes = p.modes.unwrap();
        if modes == 0 {
            return Err(CliError::Usage("modes must be at least 1".into()));
        }
        let rho0 = match &p.rho0 {
            Some(rows) => {
                let d = rows.0.len();
                if d == 0 || rows.0.iter().any(|r| r.len() != d) {
                    return Err(CliError::Usage("rho0 must be a square matrix".into()));
                }
                let data = rows.0.iter().flatten().map(|[re, im]| C64::new(*re, *im)).collect();
                Some(ComplexMatrix::from_vec(d, data)?)
            }
            None => None,
        };
        let psi0 = p.psi0.as_ref().map(ComplexVec::values);
        if let Some(v) = &psi0 {
            if v.iter().all(|z| z.norm() == 0.0) {
                return Err(CliError::Usage("psi0 must be nonzero".into()));
            }
        }
        let target = match p.target.as_ref().map(ComplexVec::values) {
            Some(v) => {
                let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if n == 0.0 {
                    return Err(CliError::Usage("target must be nonzero".into()));
                }
                Some(v.iter().map(|z| z / n).collect())
            }
            None => None,
        };
        let cfg = RunConfig {
            model,
            gamma,
            big_gamma,
            lambda,
            omega,
            tmax,
            dt,
            seed: p.seed.unwrap(),
            n_paths: p.n_paths.unwrap(),
            method: p.method.unwrap(),
            psi0,
            rho0,
            target,
            sampler: p.sampler.unwrap(),
            modes,
            window,
            output: p.output.unwrap(),
            plot: p.plot,
        };
        let dim = cfg.dim();
        for (name, len) in [
            ("psi0", cfg.psi0.as_ref().map(Vec::len)),
            ("rho0", cfg.rho0.as_ref().map(ComplexMatrix::dim)),
            ("target", cfg.target.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != dim {
                    return Err(CliError::Usage(format!(
                        "{name} has dimension {len} but model {} has dimension {dim}",
                        model.as_str()
                    )));
                }
            }
        }
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        match self.model {
            ModelName::ThreeLevel => 3,
            _ => 2,
        }
    }

    pub fn correlation(&self) -> Result<CorrelationSpec, CliError> {
        Ok(CorrelationSpec::ornstein_uhlenbeck(self.gamma, self.big_gamma)?)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let c = self.correlation()?;
        Ok(match self.model {
            ModelName::RwaQubit => ModelSpec::make_rwa_qubit(self.lambda, c)?,
            ModelName::ThreeLevel => ModelSpec::make_three_level(self.omega, c)?,
            ModelName::ReverseEngineered => ModelSpec::make_reverse_engineered(self.omega, self.lambda, c)?,
        })
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::span(self.tmax, self.dt)?)
    }

    /// Normalised `psi0`, or the uniform superposition.
    pub fn initial_state(&self) -> Vec<C64> {
        let d = self.dim();
        let v = self.psi0.clone().unwrap_or_else(|| vec![C64::from(1.0); d]);
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter().map(|z| z / n).collect()
    }

    /// Lines `key = value` describing every resolved parameter, in a fixed
    /// order.
    pub fn echo(&self, command: &str) -> Vec<String> {
        let cvec = |v: &Option<Vec<C64>>| match v {
            Some(v) => format!(
                "[{}]",
                v.iter().map(|z| format!("[{:?}, {:?}]", z.re, z.im)).collect::<Vec<_>>().join(", ")
            ),
            None => "default".into(),
        };
        let rho = match &self.rho0 {
            Some(m) => {
                let d = m.dim();
                let rows: Vec<String> = (0..d)
                    .map(|r| {
                        let cells: Vec<String> =
                            (0..d).map(|c| format!("[{:?}, {:?}]", m[(r, c)].re, m[(r, c)].im)).collect();
                        format!("[{}]", cells.join(", "))
                    })
                    .collect();
                format!("[{}]", rows.join(", "))
            }
            None => "default".into(),
        };
        vec![
            format!("qsdlab {} {command}", env!("CARGO_PKG_VERSION")),
            format!("model = {}", self.model.as_str()),
            format!("gamma = {:?}", self.gamma),
            format!("Gamma = {:?}", self.big_gamma),
            format!("lambda = {:?}", self.lambda),
            format!("omega = {:?}", self.omega),
            format!("tmax = {:?}", self.tmax),
            format!("dt = {:?}", self.dt),
            format!("seed = {}", self.seed),
            format!("n-paths = {}", self.n_paths),
            format!("method = {}", self.method.as_str()),
            format!("psi0 = {}", cvec(&self.psi0)),
            format!("rho0 = {rho}"),
            format!("target = {}", cvec(&self.target)),
            format!("sampler = {}", self.sampler.as_str()),
            format!("modes = {}", self.modes),
            format!("window = {:?}", self.window),
        ]
    }
}
