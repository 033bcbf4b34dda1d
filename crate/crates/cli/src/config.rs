//! Flag/config-file merging into a fully resolved, serialisable [`Settings`].

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use kerr_coupler::sde::{InitialState, NoiseBranch, Scheme, SdeConfig};
use kerr_coupler::{CouplerParams, FrequencyGrid};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Parses `3`, `-2.5e3`, `4i`, `3+4i`, `1e3-2e-1i`, `-i` (also `j` for `i`).
pub fn parse_complex(text: &str) -> Result<Complex64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || format!("not a complex number: {text:?} (expected e.g. 3, 2i, 3+4i)");
    if s.is_empty() {
        return Err(bad());
    }
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return f64::from_str(&s)
            .map(|re| Complex64::new(re, 0.0))
            .map_err(|_| bad());
    };
    // Split before the last sign that is not the leading one or an exponent sign.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| matches!(bytes[k], b'+' | b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let imag = |t: &str| match t {
        "" | "+" => Ok(1.0),
        "-" => Ok(-1.0),
        _ => f64::from_str(t).map_err(|_| bad()),
    };
    match split {
        Some(k) => {
            let re = f64::from_str(&body[..k]).map_err(|_| bad())?;
            Ok(Complex64::new(re, imag(&body[k..])?))
        }
        None => Ok(Complex64::new(0.0, imag(body)?)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || format!("expected START:END:POINTS, got {s:?}");
        if parts.len() != 3 {
            return Err(bad());
        }
        let sweep = Sweep {
            start: parts[0].parse().map_err(|_| bad())?,
            end: parts[1].parse().map_err(|_| bad())?,
            points: parts[2].parse().map_err(|_| bad())?,
        };
        if sweep.points < 2
            || !sweep.end.is_finite()
            || !sweep.start.is_finite()
            || sweep.end <= sweep.start
            || sweep.start < 0.0
        {
            return Err(format!(
                "sweep needs 0 <= START < END and POINTS >= 2, got {s:?}"
            ));
        }
        Ok(sweep)
    }
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        let step = (self.end - self.start) / (self.points - 1) as f64;
        (0..self.points)
            .map(|k| self.start + step * k as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Duan,
    Epr,
    Logneg,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SchemeArg {
    SemiImplicit,
    Euler,
}

/// A number written either as a TOML number or as a string literal such as "3+4i".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Number {
    Real(f64),
    Int(i64),
    Text(String),
}

impl Number {
    fn complex(&self, key: &str) -> Result<Complex64, CliError> {
        match self {
            Number::Real(x) => Ok(Complex64::new(*x, 0.0)),
            Number::Int(x) => Ok(Complex64::new(*x as f64, 0.0)),
            Number::Text(t) => {
                parse_complex(t).map_err(|e| CliError::Invalid(format!("{key}: {e}")))
            }
        }
    }
}

/// Flat keys accepted in a `--config` TOML file. Flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    eps: Option<Number>,
    eps1: Option<Number>,
    eps2: Option<Number>,
    gamma: Option<f64>,
    gamma1: Option<f64>,
    gamma2: Option<f64>,
    delta: Option<f64>,
    delta1: Option<f64>,
    delta2: Option<f64>,
    chi: Option<f64>,
    chi1: Option<f64>,
    chi2: Option<f64>,
    #[serde(rename = "J")]
    j: Option<f64>,
    omega_max: Option<f64>,
    omega_points: Option<usize>,
    theta: Option<f64>,
    optimize_theta: Option<bool>,
    b: Option<f64>,
    seed: Option<u64>,
    ntraj: Option<usize>,
    dt: Option<f64>,
    t_end: Option<f64>,
    burn_in: Option<f64>,
    partitions: Option<usize>,
    scheme: Option<SchemeArg>,
    sample_interval: Option<f64>,
    root_index: Option<usize>,
    max_divergence: Option<f64>,
}

fn load_file(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// TOML file with flat keys (eps, gamma, delta, chi, J, per-mode eps1…chi2,
    /// omega_max, theta, seed, ntraj, dt, …); flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pump amplitude for both modes (complex, e.g. 1000 or 3+4i)
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    pub eps: Option<Complex64>,
    /// Mode-1 pump (overrides --eps)
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    pub eps1: Option<Complex64>,
    /// Mode-2 pump (overrides --eps)
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    pub eps2: Option<Complex64>,
    /// Cavity damping for both modes
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Mode-1 damping (overrides --gamma)
    #[arg(long, allow_hyphen_values = true)]
    pub gamma1: Option<f64>,
    /// Mode-2 damping (overrides --gamma)
    #[arg(long, allow_hyphen_values = true)]
    pub gamma2: Option<f64>,
    /// Pump–cavity detuning for both modes
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Mode-1 detuning (overrides --delta)
    #[arg(long, allow_hyphen_values = true)]
    pub delta1: Option<f64>,
    /// Mode-2 detuning (overrides --delta)
    #[arg(long, allow_hyphen_values = true)]
    pub delta2: Option<f64>,
    /// Kerr nonlinearity for both modes
    #[arg(long, allow_hyphen_values = true)]
    pub chi: Option<f64>,
    /// Mode-1 nonlinearity (overrides --chi)
    #[arg(long, allow_hyphen_values = true)]
    pub chi1: Option<f64>,
    /// Mode-2 nonlinearity (overrides --chi)
    #[arg(long, allow_hyphen_values = true)]
    pub chi2: Option<f64>,
    /// Evanescent coupling between the modes
    #[arg(long = "J", allow_hyphen_values = true)]
    pub j: Option<f64>,
    /// Which classical root to linearise about / start from (ascending intensity)
    #[arg(long)]
    pub root_index: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Largest analysis frequency (units of gamma)
    #[arg(long)]
    pub omega_max: Option<f64>,
    /// Number of frequencies from 0 to omega-max
    #[arg(long)]
    pub omega_points: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write machine-readable results here (plus <out>.manifest.json)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format [default: from the --out extension]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct SdeArgs {
    /// Base seed; trajectory k draws from stream k [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of trajectories [default: 10000]
    #[arg(long)]
    pub ntraj: Option<usize>,
    /// Time step [default: 1e-3]
    #[arg(long)]
    pub dt: Option<f64>,
    /// End time [default: 60]
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Transient discarded before sampling [default: 20]
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Trajectory batches (fixes reduction order and spectrum error bars)
    #[arg(long)]
    pub partitions: Option<usize>,
    /// Integrator [default: semi-implicit]
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Spacing of recorded samples (multiple of dt)
    #[arg(long)]
    pub sample_interval: Option<f64>,
    /// Fail (exit 5) when more than this fraction of trajectories diverge
    #[arg(long)]
    pub max_divergence: Option<f64>,
}

/// Everything a run depends on, after merging defaults, file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub params: CouplerParams,
    pub root_index: usize,
    pub omega_max: f64,
    pub omega_points: usize,
    /// Explicit frequencies; overrides the grid when present.
    pub omega: Option<Vec<f64>>,
    /// Degrees.
    pub theta: Option<f64>,
    pub optimize_theta: bool,
    pub b: f64,
    pub measure: Measure,
    pub sweep_eps2: Option<Sweep>,
    pub sde: SdeConfig,
    pub max_divergence: f64,
    pub format: Format,
    /// Not part of the run identity; the manifest lists outputs separately.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn grid(&self) -> Result<FrequencyGrid, CliError> {
        let grid = match &self.omega {
            Some(values) => FrequencyGrid::new(values.clone()),
            None => FrequencyGrid::linspace(0.0, self.omega_max, self.omega_points),
        };
        grid.map_err(|e| CliError::Invalid(e.to_string()))
    }
}

/// Optional per-command inputs beyond the shared parameter flags.
#[derive(Default)]
pub struct Extra<'a> {
    pub grid: Option<&'a GridArgs>,
    pub output: Option<&'a OutputArgs>,
    pub sde: Option<&'a SdeArgs>,
    pub theta: Option<f64>,
    pub optimize_theta: bool,
    pub b: Option<f64>,
    pub measure: Option<Measure>,
    pub sweep_eps2: Option<Sweep>,
    pub omega: Option<Vec<f64>>,
    pub default_format: Option<Format>,
}

pub fn resolve(p: &ParamArgs, extra: Extra) -> Result<Settings, CliError> {
    let file = load_file(p.config.as_deref())?;
    let file_complex =
        |n: &Option<Number>, key: &str| n.as_ref().map(|n| n.complex(key)).transpose();

    let canonical = CouplerParams::canonical(1e-6);
    let eps = p
        .eps
        .or(file_complex(&file.eps, "eps")?)
        .unwrap_or(canonical.eps1);
    let gamma = p.gamma.or(file.gamma).unwrap_or(canonical.gamma1);
    let delta = p.delta.or(file.delta).unwrap_or(canonical.delta1);
    let chi = p.chi.or(file.chi).unwrap_or(canonical.chi1);
    let params = CouplerParams {
        eps1: p.eps1.or(file_complex(&file.eps1, "eps1")?).unwrap_or(eps),
        eps2: p.eps2.or(file_complex(&file.eps2, "eps2")?).unwrap_or(eps),
        gamma1: p.gamma1.or(file.gamma1).unwrap_or(gamma),
        gamma2: p.gamma2.or(file.gamma2).unwrap_or(gamma),
        delta1: p.delta1.or(file.delta1).unwrap_or(delta),
        delta2: p.delta2.or(file.delta2).unwrap_or(delta),
        chi1: p.chi1.or(file.chi1).unwrap_or(chi),
        chi2: p.chi2.or(file.chi2).unwrap_or(chi),
        j: p.j.or(file.j).unwrap_or(canonical.j),
    }
    .validate()
    .map_err(|e| CliError::Invalid(e.to_string()))?;

    let grid = extra.grid;
    let sde_args = extra.sde;
    let pick = |flag: Option<f64>, key: Option<f64>, default: f64| flag.or(key).unwrap_or(default);
    let defaults = SdeConfig::default();
    let scheme = sde_args
        .and_then(|a| a.scheme)
        .or(file.scheme)
        .map(|s| match s {
            SchemeArg::SemiImplicit => Scheme::SemiImplicit,
            SchemeArg::Euler => Scheme::Euler,
        })
        .unwrap_or(defaults.scheme);
    let root_index = p.root_index.or(file.root_index).unwrap_or(0);
    let sde = SdeConfig {
        dt: pick(sde_args.and_then(|a| a.dt), file.dt, defaults.dt),
        t_end: pick(sde_args.and_then(|a| a.t_end), file.t_end, defaults.t_end),
        n_traj: sde_args
            .and_then(|a| a.ntraj)
            .or(file.ntraj)
            .unwrap_or(defaults.n_traj),
        seed: sde_args
            .and_then(|a| a.seed)
            .or(file.seed)
            .unwrap_or(defaults.seed),
        burn_in: pick(
            sde_args.and_then(|a| a.burn_in),
            file.burn_in,
            defaults.burn_in,
        ),
        scheme,
        partitions: sde_args
            .and_then(|a| a.partitions)
            .or(file.partitions)
            .unwrap_or(defaults.partitions),
        sample_interval: pick(
            sde_args.and_then(|a| a.sample_interval),
            file.sample_interval,
            defaults.sample_interval,
        ),
        divergence_bound: None,
        noise_branch: NoiseBranch::Principal,
        noise_substeps: 1,
        initial: InitialState::Classical,
        root_index,
    };
    let output = extra.output;
    let out = output.and_then(|o| o.out.clone());
    let inferred = out
        .as_ref()
        .and_then(|path| match path.extension()?.to_str()? {
            "json" => Some(Format::Json),
            "csv" => Some(Format::Csv),
            _ => None,
        });
    let settings = Settings {
        params,
        root_index,
        omega_max: pick(
            grid.and_then(|g| g.omega_max),
            file.omega_max,
            FrequencyGrid::DEFAULT_MAX,
        ),
        omega_points: grid
            .and_then(|g| g.omega_points)
            .or(file.omega_points)
            .unwrap_or(FrequencyGrid::DEFAULT_POINTS),
        omega: extra.omega,
        theta: extra.theta.or(file.theta),
        optimize_theta: extra.optimize_theta || file.optimize_theta.unwrap_or(false),
        b: pick(extra.b, file.b, 1.0),
        measure: extra.measure.unwrap_or(Measure::All),
        sweep_eps2: extra.sweep_eps2,
        sde,
        max_divergence: pick(
            sde_args.and_then(|a| a.max_divergence),
            file.max_divergence,
            0.01,
        ),
        format: output
            .and_then(|o| o.format)
            .or(inferred)
            .or(extra.default_format)
            .unwrap_or(Format::Csv),
        out,
    };
    if settings.b == 0.0 || !settings.b.is_finite() {
        return Err(CliError::Invalid("--b must be non-zero and finite".into()));
    }
    if !(0.0..=1.0).contains(&settings.max_divergence) {
        return Err(CliError::Invalid(
            "--max-divergence must lie in [0, 1]".into(),
        ));
    }
    Ok(settings)
}
