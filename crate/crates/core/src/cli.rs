//! Configuration-driven command line for `anyon-sim`.
//!
//! A run starts from a preset, merges an optional JSON config file on top,
//! applies `--set key.path=value` overrides and then validates the result
//! against [`RunConfig`]. Every command writes `<command>.json` (and for
//! tabular output `<command>.csv`) into the output directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::algebra::{self, HilbertSpace, Link, Operator, StatisticalAngle};
use crate::lindblad::{self, CollectiveLossModel, EpOptions, LossSweep, TwoLinkDephasingModel};
use crate::linalg::{self, c};
use crate::noise::{self, BathSpectrum, CorrelationMatrix, NoiseSpec};
use crate::protection::{self, BlochVector, TwoLinkSweepModel};
use crate::stochastic::{self, DensityMatrix, PositivityGuard, Scheme, SimulationGrid, StochasticModel};
use crate::{CMatrix, Error, C64};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Single-excitation manifold of two hardcore sites.
    #[default]
    TwoMode,
    /// Full truncated Fock space of `n_sites` sites.
    Lattice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub n_sites: usize,
    pub cutoff: usize,
    pub theta: f64,
    /// On-site energies `ε_i`; missing entries are zero.
    pub site_energies: Vec<f64>,
    pub links: Vec<Link>,
    /// Adds `−Σ_a J_a (T_a + T_a†)` to `H₀`.
    pub coherent_hopping: bool,
    /// Phenomenological residual relaxation rate.
    pub gamma_res: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            kind: SystemKind::TwoMode,
            n_sites: 2,
            cutoff: 1,
            theta: 0.0,
            site_energies: vec![0.05, -0.05],
            links: vec![Link::two_mode(0.1)],
            coherent_hopping: false,
            gamma_res: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Wiener,
    OrnsteinUhlenbeck,
    QuantumBath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub d_phi: f64,
    pub sigma: f64,
    pub tau_c: f64,
    pub bath: BathSpectrum,
    /// Link correlation coefficient for exactly two links.
    pub xi: Option<f64>,
    /// Full correlation matrix `D_ab`; identity when absent.
    pub correlation: Option<Vec<Vec<f64>>>,
    /// Adds the bath-induced coherent correction to `H₀`.
    pub lamb_shift: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Wiener,
            d_phi: 1.0,
            sigma: 1.0,
            tau_c: 0.1,
            bath: BathSpectrum {
                family: Default::default(),
                coupling: 0.01,
                temperature: 1.0,
                cutoff: 10.0,
            },
            xi: None,
            correlation: None,
            lamb_shift: true,
        }
    }
}

impl NoiseConfig {
    pub fn spec(&self) -> NoiseSpec {
        match self.kind {
            NoiseKind::Wiener => NoiseSpec::Wiener { d_phi: self.d_phi },
            NoiseKind::OrnsteinUhlenbeck => NoiseSpec::OrnsteinUhlenbeck {
                sigma: self.sigma,
                tau_c: self.tau_c,
            },
            NoiseKind::QuantumBath => NoiseSpec::QuantumBath { spectrum: self.bath },
        }
    }

    pub fn correlation_matrix(&self, n_links: usize) -> Result<CorrelationMatrix, Error> {
        match (&self.xi, &self.correlation) {
            (Some(_), Some(_)) => Err(Error::Parameter("give either noise.xi or noise.correlation, not both".into())),
            (Some(xi), None) => {
                if n_links != 2 {
                    return Err(Error::Parameter(format!("noise.xi needs exactly 2 links, found {n_links}")));
                }
                CorrelationMatrix::two_link(*xi)
            }
            (None, Some(rows)) => {
                let d = CorrelationMatrix::from_rows(rows)?;
                if d.dim() != n_links {
                    return Err(Error::Shape(format!("noise.correlation is {0}x{0} but there are {n_links} links", d.dim())));
                }
                Ok(d)
            }
            (None, None) => Ok(CorrelationMatrix::identity(n_links)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Two-mode state `½(I + r·σ)`.
    Bloch { r: [f64; 3] },
    /// Site-basis Fock state with the given occupations.
    Ket { occupations: Vec<usize> },
    /// Explicit amplitudes in the system basis (normalized on load).
    Vector { re: Vec<f64>, im: Vec<f64> },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Bloch { r: [0.0, 1.0, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub t_final: f64,
    pub dt: f64,
    pub record_stride: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t_final: 250.0,
            dt: 0.05,
            record_stride: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub master_seed: u64,
    pub schemes: Vec<Scheme>,
    /// Pass threshold on the max trace distance; scaled from 0.02 at 10⁴
    /// trajectories when absent.
    pub threshold: Option<f64>,
    pub guard: PositivityGuard,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_traj: 10_000,
            master_seed: 0,
            schemes: vec![Scheme::Stratonovich, Scheme::Ito],
            threshold: None,
            guard: PositivityGuard::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Xi,
    LossRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub range: Option<RangeSpec>,
}

impl SweepConfig {
    pub fn grid(&self) -> Result<Vec<f64>, Error> {
        match (&self.values, &self.range) {
            (Some(v), None) => Ok(v.clone()),
            (None, Some(r)) => Ok(protection::linspace(r.start, r.stop, r.points)),
            _ => Err(Error::Parameter("sweep needs exactly one of `values` or `range`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgebraConfig {
    /// Explicit θ values; otherwise `n_theta` points on `[0, 2π)`.
    pub theta_values: Option<Vec<f64>>,
    pub n_theta: usize,
    pub tolerance: f64,
}

impl Default for AlgebraConfig {
    fn default() -> Self {
        Self {
            theta_values: None,
            n_theta: 8,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumModel {
    /// The configured system with its correlated dephasing channels.
    #[default]
    System,
    /// Two links on the two-mode manifold, `H₀ = 0`.
    TwoLinkDephasing,
    /// Two hardcore sites with collective losses.
    CollectiveLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub model: SpectrumModel,
    /// Coherent coupling of the collective-loss model.
    pub coupling: f64,
    /// Loss rate `γ` of the collective-loss model.
    pub loss: f64,
    pub ep: EpOptions,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            model: SpectrumModel::System,
            coupling: 1.0,
            loss: 1.0,
            ep: EpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtectionConfig {
    /// Points of the θ grid on `[0, π]` used by `sweep`.
    pub theta_points: usize,
}

impl Default for ProtectionConfig {
    fn default() -> Self {
        Self { theta_points: 721 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub noise: NoiseConfig,
    pub initial_state: InitialState,
    pub grid: GridConfig,
    pub ensemble: EnsembleConfig,
    pub sweep: Option<SweepConfig>,
    pub algebra: AlgebraConfig,
    pub spectrum: SpectrumConfig,
    pub protection: ProtectionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Single-link two-mode Wiener model used by `converge`.
    Default,
    /// θ sweep of two correlated links.
    Fig2,
    /// Two links at perfect correlation.
    TwoLinkDfs,
    /// Collective-loss exceptional-point sweep.
    EpSweep,
}

impl Preset {
    pub fn config(self) -> RunConfig {
        let base = RunConfig::default();
        match self {
            Preset::Default => base,
            Preset::Fig2 => RunConfig {
                system: SystemConfig {
                    site_energies: vec![],
                    links: vec![Link::two_mode(0.1), Link::two_mode(0.1)],
                    ..SystemConfig::default()
                },
                initial_state: InitialState::Bloch { r: [1.0, 0.0, 0.0] },
                sweep: Some(SweepConfig {
                    parameter: SweepParameter::Xi,
                    values: Some(vec![0.0, 0.5, 0.9]),
                    range: None,
                }),
                ..base
            },
            Preset::TwoLinkDfs => RunConfig {
                system: SystemConfig {
                    site_energies: vec![],
                    links: vec![
                        Link::two_mode(0.1),
                        Link::two_mode(0.1).with_offset(std::f64::consts::FRAC_PI_2),
                    ],
                    ..SystemConfig::default()
                },
                noise: NoiseConfig {
                    xi: Some(1.0),
                    ..NoiseConfig::default()
                },
                ..base
            },
            Preset::EpSweep => RunConfig {
                spectrum: SpectrumConfig {
                    model: SpectrumModel::CollectiveLoss,
                    coupling: 1.0,
                    loss: 1.0,
                    ep: EpOptions::default(),
                },
                noise: NoiseConfig {
                    xi: Some(0.0),
                    ..NoiseConfig::default()
                },
                system: SystemConfig {
                    site_energies: vec![],
                    links: vec![Link::two_mode(1.0), Link::two_mode(1.0)],
                    ..SystemConfig::default()
                },
                sweep: Some(SweepConfig {
                    parameter: SweepParameter::Xi,
                    values: None,
                    range: Some(RangeSpec {
                        start: -1.0,
                        stop: 1.0,
                        points: 41,
                    }),
                }),
                ..base
            },
        }
    }
}

// ---------------------------------------------------------------- resolved system

/// Operators built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedSystem {
    pub h0: Operator,
    pub currents: Vec<Operator>,
    pub amplitudes: Vec<f64>,
    pub correlation: CorrelationMatrix,
    pub noise: NoiseSpec,
    pub dim: usize,
}

impl ResolvedSystem {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, Error> {
        let sys = &cfg.system;
        if sys.links.is_empty() {
            return Err(Error::Parameter("system.links must not be empty".into()));
        }
        let theta = StatisticalAngle::new(sys.theta)?;
        let (n_sites, cutoff) = match sys.kind {
            SystemKind::TwoMode => {
                if sys.n_sites != 2 || sys.cutoff != 1 {
                    return Err(Error::Parameter("two_mode systems have n_sites = 2 and cutoff = 1".into()));
                }
                (2, 1)
            }
            SystemKind::Lattice => (sys.n_sites, sys.cutoff),
        };
        let space = HilbertSpace::new(n_sites, cutoff)?;
        if sys.site_energies.len() > n_sites {
            return Err(Error::Parameter(format!("{} site energies for {n_sites} sites", sys.site_energies.len())));
        }
        for l in &sys.links {
            l.validate(n_sites)?;
            if !(l.amplitude.is_finite() && l.amplitude >= 0.0) {
                return Err(Error::Parameter(format!("link amplitude must be finite and ≥ 0, got {}", l.amplitude)));
            }
        }
        let ops = algebra::build_jw_anyon_ops(&space, theta)?;
        let mut h0 = CMatrix::zeros(space.dim(), space.dim());
        for (site, &eps) in sys.site_energies.iter().enumerate() {
            h0 += algebra::number_operator(&space, site)?.matrix() * c(eps, 0.0);
        }
        if sys.coherent_hopping {
            for l in &sys.links {
                let t = algebra::hopping_operator(&ops, l, theta)?;
                h0 -= (t.matrix() + t.matrix().adjoint()) * c(l.amplitude, 0.0);
            }
        }
        let mut h0 = Operator::new(h0)?;
        let mut currents = sys
            .links
            .iter()
            .map(|l| algebra::exchange_current(&ops, l, theta))
            .collect::<Result<Vec<_>, _>>()?;
        if sys.kind == SystemKind::TwoMode {
            h0 = h0.single_excitation_block(&space)?;
            currents = currents
                .iter()
                .map(|k| k.single_excitation_block(&space))
                .collect::<Result<Vec<_>, _>>()?;
        }
        let amplitudes: Vec<f64> = sys.links.iter().map(|l| l.amplitude).collect();
        let correlation = cfg.noise.correlation_matrix(sys.links.len())?;
        let noise = cfg.noise.spec();
        noise.validate()?;
        if cfg.noise.kind == NoiseKind::QuantumBath && cfg.noise.lamb_shift {
            // ½ Ξ Σ_ab J_a J_b D_ab {K_a, K_b}
            let xi = noise::lamb_shift_coefficient(&cfg.noise.bath)?;
            let mut shift = h0.matrix().clone();
            for a in 0..currents.len() {
                for b in 0..currents.len() {
                    let w = correlation.entries()[(a, b)] * (0.5 * xi * amplitudes[a] * amplitudes[b]);
                    shift += linalg::anticommutator(currents[a].matrix(), currents[b].matrix()) * w;
                }
            }
            h0 = Operator::new(linalg::hermitian_part(&shift))?;
        }
        let dim = h0.dim();
        Ok(Self {
            h0,
            currents,
            amplitudes,
            correlation,
            noise,
            dim,
        })
    }

    /// `Γ_ab = 2 J_a J_b D D_ab` with `D` the noise diffusion constant.
    pub fn rate_matrix(&self) -> Result<CorrelationMatrix, Error> {
        let scaled = CorrelationMatrix::from_complex(self.correlation.entries() * c(self.noise.diffusion_constant(), 0.0))?;
        noise::rate_matrix(&self.amplitudes, &scaled)
    }

    pub fn dephasing_channels(&self) -> Result<Vec<lindblad::LindbladChannel>, Error> {
        lindblad::correlated_dephasing_channels(&self.currents, &self.rate_matrix()?)
    }

    pub fn initial_state(&self, state: &InitialState, cfg: &SystemConfig) -> Result<DensityMatrix, Error> {
        match state {
            InitialState::Bloch { r } => {
                if self.dim != 2 {
                    return Err(Error::Parameter("Bloch initial states need the two_mode system".into()));
                }
                DensityMatrix::from_bloch(*r)
            }
            InitialState::Ket { occupations } => {
                let space = HilbertSpace::new(cfg.n_sites, cfg.cutoff)?;
                let idx = space.index_of(occupations)?;
                let index = match cfg.kind {
                    SystemKind::Lattice => idx,
                    SystemKind::TwoMode => space
                        .single_excitation_indices()
                        .iter()
                        .position(|&k| k == idx)
                        .ok_or_else(|| Error::Parameter("two_mode kets must hold exactly one excitation".into()))?,
                };
                let mut v = DVector::<C64>::zeros(self.dim);
                v[index] = c(1.0, 0.0);
                DensityMatrix::pure(&v)
            }
            InitialState::Vector { re, im } => {
                if re.len() != self.dim || im.len() != self.dim {
                    return Err(Error::Shape(format!("initial vector needs {} real and imaginary parts", self.dim)));
                }
                let v = DVector::from_iterator(self.dim, re.iter().zip(im).map(|(&a, &b)| c(a, b)));
                DensityMatrix::pure(&v)
            }
        }
    }
}

// ---------------------------------------------------------------- loading

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    /// Maps a library error raised while building inputs.
    pub fn from_setup(e: Error) -> Self {
        match e {
            Error::Size { .. } => Self {
                code: EXIT_RESOURCE,
                message: e.to_string(),
            },
            other => Self::config(other.to_string()),
        }
    }

    /// Maps a library error raised while computing.
    pub fn from_runtime(e: Error) -> Self {
        let code = match e {
            Error::Size { .. } => EXIT_RESOURCE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies `key.path=value`; the value is parsed as JSON when possible and
/// taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(format!("--set: malformed key path `{path}`")));
    }
    let mut node = root;
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                let slot = map.entry(key.to_string()).or_insert_with(|| json!({}));
                if slot.is_null() {
                    *slot = json!({});
                }
                slot
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| CliError::config(format!("--set: `{key}` in `{path}` must index an array")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::config(format!("--set: index {idx} out of range ({len}) in `{path}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::config(format!("--set: `{path}` descends into a scalar"))),
        };
    }
    Ok(())
}

/// Deserializes with the failing field path in the error message.
pub fn parse_config(value: Value) -> Result<RunConfig, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("config error at `{path}`: {}", e.into_inner()))
    })
}

pub fn load_config(
    preset: Preset,
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let overlay = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("config {} is not valid JSON: {e}", path.display())))?;
            Some(v)
        }
        None => None,
    };
    resolve_config(preset, overlay, overrides, seed)
}

/// Preset, then a deep merge of `overlay`, then dotted overrides.
pub fn resolve_config(
    preset: Preset,
    overlay: Option<Value>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut root = serde_json::to_value(preset.config()).expect("configs serialize");
    if let Some(overlay) = overlay {
        if !overlay.is_object() {
            return Err(CliError::config("config must be a JSON object"));
        }
        merge(&mut root, overlay);
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let mut cfg = parse_config(root)?;
    if let Some(s) = seed {
        cfg.ensemble.master_seed = s;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------- commands

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the deformed commutation relations over a θ grid.
    AlgebraCheck,
    /// Sweep the protected-mode rate over θ for several ξ.
    Sweep,
    /// Compare trajectory ensembles with the master equation.
    Converge,
    /// Liouvillian spectrum, optionally swept for exceptional points.
    Spectrum,
    /// Optimal angle and lifetime of the configured state.
    Lifetime,
    /// Noiseless collective modes of the correlation matrix.
    Dfs,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::AlgebraCheck => "algebra-check",
            Command::Sweep => "sweep",
            Command::Converge => "converge",
            Command::Spectrum => "spectrum",
            Command::Lifetime => "lifetime",
            Command::Dfs => "dfs",
        }
    }

    /// Preset used when neither `--preset` nor `--config` is given.
    pub fn natural_preset(self) -> Preset {
        match self {
            Command::Sweep => Preset::Fig2,
            Command::Dfs => Preset::TwoLinkDfs,
            Command::Spectrum => Preset::EpSweep,
            _ => Preset::Default,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "anyon-sim", version, about = "Anyon exchange-phase noise simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config merged over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `noise.d_phi=2.0`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Worker threads for trajectories and sweeps.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Master seed (overrides `ensemble.master_seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
}

/// Result of one command before it is written to disk.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub payload: Value,
    pub csv: Option<String>,
    /// `false` makes the process exit with [`EXIT_ASSERTION`].
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub tool_version: String,
    pub command: String,
    pub config_echo: RunConfig,
    pub wall_time: f64,
    pub payload: Value,
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// CSV with LF endings and 17 significant digits.
pub fn to_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&x| fmt_num(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn execute(command: Command, cfg: &RunConfig, workers: usize) -> Result<CommandOutput, CliError> {
    match command {
        Command::AlgebraCheck => cmd_algebra_check(cfg),
        Command::Sweep => cmd_sweep(cfg),
        Command::Converge => cmd_converge(cfg, workers),
        Command::Spectrum => cmd_spectrum(cfg),
        Command::Lifetime => cmd_lifetime(cfg),
        Command::Dfs => cmd_dfs(cfg),
    }
}

pub fn cmd_algebra_check(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let a = &cfg.algebra;
    let thetas = match &a.theta_values {
        Some(v) if v.is_empty() => return Err(CliError::config("algebra.theta_values is empty")),
        Some(v) => v.clone(),
        None if a.n_theta == 0 => return Err(CliError::config("algebra.n_theta must be positive")),
        None => (0..a.n_theta)
            .map(|k| std::f64::consts::TAU * k as f64 / a.n_theta as f64)
            .collect(),
    };
    let space = HilbertSpace::new(cfg.system.n_sites, cfg.system.cutoff).map_err(CliError::from_setup)?;
    let mut rows = Vec::with_capacity(thetas.len());
    let mut worst = 0.0_f64;
    for &t in &thetas {
        let theta = StatisticalAngle::new(t).map_err(CliError::from_setup)?;
        let ops = algebra::build_jw_anyon_ops(&space, theta).map_err(CliError::from_runtime)?;
        let r = algebra::verify_distorted_algebra(&ops, theta).map_err(CliError::from_runtime)?;
        worst = worst.max(r);
        rows.push(json!({ "theta": t, "residual": r }));
    }
    let soft_core = !space.is_hardcore();
    let within = worst < a.tolerance;
    let passed = within || soft_core;
    if !within {
        eprintln!("max algebra residual {worst:e} exceeds tolerance {:e}", a.tolerance);
    }
    Ok(CommandOutput {
        payload: json!({
            "n_sites": space.n_sites(),
            "cutoff": space.cutoff(),
            "dim": space.dim(),
            "max_residual": worst,
            "tolerance": a.tolerance,
            "within_tolerance": within,
            "soft_core_warning": soft_core,
            "per_theta": rows,
        }),
        csv: None,
        passed,
    })
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let xi_values = match &cfg.sweep {
        Some(s) if s.parameter == SweepParameter::Xi => s.grid().map_err(CliError::from_setup)?,
        Some(_) => return Err(CliError::config("sweep.parameter must be `xi` for the sweep command")),
        None => vec![cfg.noise.xi.unwrap_or(0.0)],
    };
    if xi_values.is_empty() {
        return Err(CliError::config("sweep grid over ξ is empty"));
    }
    let n_theta = cfg.protection.theta_points;
    if n_theta == 0 {
        return Err(CliError::config("protection.theta_points must be positive"));
    }
    let links = &cfg.system.links;
    if cfg.system.kind != SystemKind::TwoMode || links.len() != 2 {
        return Err(CliError::config("sweep needs the two_mode system with exactly two links"));
    }
    if links[0].amplitude != links[1].amplitude {
        return Err(CliError::config("sweep needs equal link amplitudes"));
    }
    let state = match cfg.initial_state {
        InitialState::Bloch { r } => BlochVector::new(r).map_err(CliError::from_setup)?,
        _ => return Err(CliError::config("sweep needs a Bloch initial state")),
    };
    let model = TwoLinkSweepModel {
        coupling: links[0].amplitude,
        d_phi: cfg.noise.spec().diffusion_constant(),
        offsets: [links[0].phase_offset, links[1].phase_offset],
        state,
    };
    let thetas = protection::linspace(0.0, std::f64::consts::PI, n_theta);
    let table = protection::sweep_theta(&xi_values, &thetas, &model).map_err(CliError::from_setup)?;
    let step = if n_theta > 1 { std::f64::consts::PI / (n_theta - 1) as f64 } else { 0.0 };
    let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| vec![r.xi, r.theta, r.gamma_over_j]).collect();
    Ok(CommandOutput {
        payload: json!({
            "theta_step": step,
            "curves": table.curves,
        }),
        csv: Some(to_csv(&["xi", "theta", "gamma_over_J"], &rows)),
        passed: true,
    })
}

/// Default converge threshold: 0.02 at 10⁴ trajectories, scaled as
/// `1/√n` for smaller ensembles.
pub fn default_threshold(n_traj: usize) -> f64 {
    if n_traj >= 10_000 {
        0.02
    } else {
        0.02 * (10_000.0 / n_traj as f64).sqrt()
    }
}

pub fn cmd_converge(cfg: &RunConfig, workers: usize) -> Result<CommandOutput, CliError> {
    let sys = ResolvedSystem::from_config(cfg).map_err(CliError::from_setup)?;
    let rho0 = sys.initial_state(&cfg.initial_state, &cfg.system).map_err(CliError::from_setup)?;
    let grid = SimulationGrid::new(cfg.grid.t_final, cfg.grid.dt, cfg.grid.record_stride).map_err(CliError::from_setup)?;
    if cfg.ensemble.schemes.is_empty() {
        return Err(CliError::config("ensemble.schemes is empty"));
    }
    let model = StochasticModel::new(
        &sys.h0,
        &sys.currents,
        &sys.amplitudes,
        sys.noise,
        sys.correlation.clone(),
        rho0.clone(),
        grid,
    )
    .map_err(CliError::from_setup)?
    .with_guard(cfg.ensemble.guard);
    let channels = sys.dephasing_channels().map_err(CliError::from_setup)?;
    let reference = lindblad::propagate_master(&sys.h0, &channels, &rho0, &grid).map_err(CliError::from_runtime)?;
    let threshold = cfg.ensemble.threshold.unwrap_or_else(|| default_threshold(cfg.ensemble.n_traj));
    let names = stochastic::observable_names(sys.dim);
    let times = grid.times();
    let mut passed = true;
    let mut reports = Vec::new();
    let mut csv_rows = Vec::new();
    for (si, &scheme) in cfg.ensemble.schemes.iter().enumerate() {
        let ens = stochastic::ensemble_average_with_workers(&model, cfg.ensemble.n_traj, cfg.ensemble.master_seed, scheme, workers)
            .map_err(CliError::from_runtime)?;
        let mut max_dist = 0.0_f64;
        let mut max_z = 0.0_f64;
        let mut worst = (0usize, 0usize);
        for (k, (mean, exact)) in ens.mean_states.iter().zip(&reference).enumerate() {
            let d = linalg::trace_distance(mean.matrix(), exact.matrix());
            max_dist = max_dist.max(d);
            let exact_obs = observables_of(exact.matrix());
            for (o, &x) in exact_obs.iter().enumerate() {
                let se = ens.stderr_observables[k][o];
                let diff = ens.observable_means[k][o] - x;
                let z = if se > 0.0 { diff.abs() / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
                if z > max_z {
                    max_z = z;
                    worst = (k, o);
                }
            }
            csv_rows.push(vec![si as f64, times[k], d]);
        }
        let ok = max_dist < threshold;
        passed &= ok;
        reports.push(json!({
            "scheme": scheme,
            "n_traj": ens.n_traj,
            "max_trace_distance": max_dist,
            "max_abs_z_score": finite_or_null(max_z),
            "max_z_observable": names[worst.1],
            "max_z_time": times[worst.0],
            "passed": ok,
        }));
    }
    Ok(CommandOutput {
        payload: json!({
            "threshold": threshold,
            "observables": names,
            "rate_matrix": complex_rows(sys.rate_matrix().map_err(CliError::from_setup)?.entries()),
            "schemes": reports,
            "csv_scheme_index": cfg.ensemble.schemes,
        }),
        csv: Some(to_csv(&["scheme_index", "t", "trace_distance"], &csv_rows)),
        passed,
    })
}

fn observables_of(rho: &CMatrix) -> Vec<f64> {
    let n = rho.nrows();
    let mut out: Vec<f64> = (0..n).map(|i| rho[(i, i)].re).collect();
    for i in 0..n {
        for j in i + 1..n {
            out.push(rho[(i, j)].re);
            out.push(rho[(i, j)].im);
        }
    }
    out
}

fn complex_rows(m: &CMatrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!([m[(i, j)].re, m[(i, j)].im])).collect()))
            .collect(),
    )
}

type LiouvillianFamily<'a> = Box<dyn Fn(Option<f64>) -> Result<lindblad::Liouvillian, Error> + 'a>;

fn spectrum_family(cfg: &RunConfig) -> Result<LiouvillianFamily<'_>, CliError> {
    let sweep = cfg.sweep.as_ref().map(|s| s.parameter);
    match cfg.spectrum.model {
        SpectrumModel::CollectiveLoss => {
            let base = CollectiveLossModel {
                coupling: cfg.spectrum.coupling,
                loss: cfg.spectrum.loss,
                xi: cfg.noise.xi.unwrap_or(0.0),
                theta: cfg.system.theta,
            };
            let which = match sweep {
                Some(SweepParameter::LossRatio) => LossSweep::LossRatio,
                _ => LossSweep::Xi,
            };
            Ok(Box::new(move |p| match p {
                Some(p) => base.at(which, p).liouvillian(),
                None => base.liouvillian(),
            }))
        }
        SpectrumModel::TwoLinkDephasing => {
            if sweep == Some(SweepParameter::LossRatio) {
                return Err(CliError::config("two_link_dephasing can only be swept over xi"));
            }
            let links = &cfg.system.links;
            if links.len() != 2 {
                return Err(CliError::config("two_link_dephasing needs exactly two links"));
            }
            let base = TwoLinkDephasingModel {
                coupling: links[0].amplitude,
                d_phi: cfg.noise.spec().diffusion_constant(),
                theta: cfg.system.theta,
                offsets: [links[0].phase_offset, links[1].phase_offset],
                xi: cfg.noise.xi.unwrap_or(0.0),
            };
            Ok(Box::new(move |p| match p {
                Some(xi) => TwoLinkDephasingModel { xi, ..base }.liouvillian(),
                None => base.liouvillian(),
            }))
        }
        SpectrumModel::System => {
            if sweep == Some(SweepParameter::LossRatio) {
                return Err(CliError::config("the system model can only be swept over xi"));
            }
            Ok(Box::new(move |p| {
                let mut c = cfg.clone();
                if let Some(xi) = p {
                    c.noise.xi = Some(xi);
                    c.noise.correlation = None;
                }
                let sys = ResolvedSystem::from_config(&c)?;
                lindblad::build_liouvillian(&sys.h0, &sys.dephasing_channels()?)
            }))
        }
    }
}

pub fn cmd_spectrum(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let family = spectrum_family(cfg)?;
    let base = family(None).map_err(CliError::from_setup)?;
    let report = lindblad::spectral_report(&base).map_err(CliError::from_runtime)?;
    let mut payload = json!({
        "model": cfg.spectrum.model,
        "report": report.summary(),
    });
    let mut csv = None;
    if let Some(sweep) = &cfg.sweep {
        let grid = sweep.grid().map_err(CliError::from_setup)?;
        if grid.is_empty() {
            return Err(CliError::config("sweep grid is empty"));
        }
        let scan = lindblad::detect_ep(|p| family(Some(p)), &grid, cfg.spectrum.ep).map_err(|e| match e {
            Error::Parameter(_) | Error::Validity(_) => CliError::from_setup(e),
            other => CliError::from_runtime(other),
        })?;
        let rows: Vec<Vec<f64>> = scan
            .points
            .iter()
            .map(|p| {
                vec![
                    p.parameter,
                    p.min_pair_gap,
                    p.max_condition_number,
                    p.normality_defect,
                    p.frobenius_norm,
                    if p.flagged { 1.0 } else { 0.0 },
                ]
            })
            .collect();
        csv = Some(to_csv(
            &["parameter", "min_pair_gap", "max_condition_number", "normality_defect", "frobenius_norm", "flagged"],
            &rows,
        ));
        let max_defect = scan.points.iter().map(|p| p.normality_defect).fold(0.0, f64::max);
        payload["sweep"] = json!({
            "parameter": sweep.parameter,
            "points": scan.points.len(),
            "max_normality_defect": max_defect,
            "candidates": scan.candidates,
        });
    }
    Ok(CommandOutput {
        payload,
        csv,
        passed: true,
    })
}

pub fn cmd_lifetime(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let r = match cfg.initial_state {
        InitialState::Bloch { r } => BlochVector::new(r).map_err(CliError::from_setup)?,
        _ => return Err(CliError::config("lifetime needs a Bloch initial state")),
    };
    let link = cfg
        .system
        .links
        .first()
        .ok_or_else(|| CliError::config("system.links must not be empty"))?;
    cfg.noise.spec().validate().map_err(CliError::from_setup)?;
    let gamma = noise::effective_rate(&cfg.noise.spec(), link.amplitude);
    let report = protection::protection_report(&r, gamma, cfg.system.gamma_res).map_err(CliError::from_setup)?;
    let theta = StatisticalAngle::new(cfg.system.theta + link.phase_offset).map_err(CliError::from_setup)?;
    let at_configured = protection::effective_lifetime(theta, gamma, cfg.system.gamma_res, &r);
    let rate_at_configured = protection::dephasing_rate_bloch(theta, gamma, &r);
    Ok(CommandOutput {
        payload: json!({
            "gamma_theta": gamma,
            "gamma_res": cfg.system.gamma_res,
            "theta_star": report.theta_star,
            "theta_star_undefined": report.theta_star_undefined,
            "gamma_min": report.gamma_min,
            "lifetime_at_theta_star": report.lifetime,
            "grid_argmin": report.grid_argmin,
            "grid_step": report.grid_step,
            "grid_check_passed": report.grid_check_passed,
            "configured_theta": theta.radians(),
            "rate_at_configured_theta": rate_at_configured,
            "lifetime_at_configured_theta": at_configured,
        }),
        csv: Some(to_csv(
            &["theta", "gamma"],
            &report
                .theta_grid
                .iter()
                .zip(&report.gamma_of_theta)
                .map(|(&t, &g)| vec![t, g])
                .collect::<Vec<_>>(),
        )),
        passed: report.grid_check_passed,
    })
}

pub fn cmd_dfs(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let sys = ResolvedSystem::from_config(cfg).map_err(CliError::from_setup)?;
    let kernel = lindblad::dfs_kernel(&sys.correlation, &sys.currents).map_err(CliError::from_setup)?;
    let all = algebra::collective_currents(&sys.currents, &sys.correlation, 1.0).map_err(CliError::from_setup)?;
    let modes: Vec<Value> = kernel
        .iter()
        .map(|m| {
            json!({
                "coefficients": m.coefficients.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
                "rate": 0.0,
            })
        })
        .collect();
    let active: Vec<_> = all.iter().filter(|cc| cc.eigenvalue >= 1e-10).collect();
    let mut protected = Value::Null;
    if !kernel.is_empty() && active.len() == 1 {
        // eigenstate of the only noisy collective current
        let (_, vecs) = linalg::hermitian_eigen(active[0].operator.matrix());
        let v = vecs.column(sys.dim - 1).into_owned();
        let rho0 = DensityMatrix::pure(&v).map_err(CliError::from_runtime)?;
        let j = sys.amplitudes.iter().copied().fold(0.0, f64::max);
        let t_final = if j > 0.0 { 10.0 / j } else { 10.0 };
        let grid = SimulationGrid::new(t_final, t_final / 2000.0, Some(20)).map_err(CliError::from_setup)?;
        let channels = sys.dephasing_channels().map_err(CliError::from_setup)?;
        let states = lindblad::propagate_master(&sys.h0, &channels, &rho0, &grid).map_err(CliError::from_runtime)?;
        let drift = states
            .iter()
            .map(|s| linalg::max_abs_diff(s.matrix(), rho0.matrix()))
            .fold(0.0, f64::max);
        protected = json!({
            "state": v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "t_final": t_final,
            "max_state_change": drift,
        });
    }
    Ok(CommandOutput {
        payload: json!({
            "correlation_eigenvalues": sys.correlation.eigenvalues(),
            "kernel_dimension": kernel.len(),
            "kernel_modes": modes,
            "protected_state": protected,
        }),
        csv: None,
        passed: true,
    })
}

// ---------------------------------------------------------------- entry point

fn write_output(dir: &Path, name: &str, envelope: &ResultEnvelope, csv: Option<&str>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError {
        code: EXIT_RUNTIME,
        message: format!("cannot write output to {}: {e}", dir.display()),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let text = serde_json::to_string_pretty(envelope).expect("envelope serializes");
    std::fs::write(dir.join(format!("{name}.json")), text + "\n").map_err(io)?;
    if let Some(csv) = csv {
        std::fs::write(dir.join(format!("{name}.csv")), csv).map_err(io)?;
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match run_inner(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn run_inner(cli: &Cli) -> Result<i32, CliError> {
    let preset = cli.preset.unwrap_or_else(|| {
        if cli.config.is_some() {
            Preset::Default
        } else {
            cli.command.natural_preset()
        }
    });
    let cfg = load_config(preset, cli.config.as_deref(), &cli.set, cli.seed)?;
    let workers = match cli.workers {
        Some(0) => return Err(CliError::config("--workers must be positive")),
        Some(w) => w,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let start = Instant::now();
    let out = execute(cli.command, &cfg, workers)?;
    let envelope = ResultEnvelope {
        tool_version: TOOL_VERSION.to_string(),
        command: cli.command.name().to_string(),
        config_echo: cfg,
        wall_time: start.elapsed().as_secs_f64(),
        payload: out.payload,
    };
    write_output(&cli.output_dir, cli.command.name(), &envelope, out.csv.as_deref())?;
    let mut summary = String::new();
    let _ = write!(summary, "{}: {}", envelope.command, if out.passed { "pass" } else { "FAIL" });
    println!("{summary}");
    Ok(if out.passed { EXIT_OK } else { EXIT_ASSERTION })
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
