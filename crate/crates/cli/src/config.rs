//! Run configuration. A config file only needs the fields it changes: it is
//! merged over the preset for its mode, and the merged result is the
//! canonical form written to every manifest.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use qpath::dump::DumpFormat;
use qpath::optimizer::{FinalCondition, ShootingConfig};
use qpath::conditioned::Postselection;
use qpath::{BlochState, FeedbackSpec, ModelParams, UpdateScheme};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Postselect,
    Correlate,
    Diagrams,
    Mlp,
    Portrait,
    FeedbackKz,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Postselect => "postselect",
            Mode::Correlate => "correlate",
            Mode::Diagrams => "diagrams",
            Mode::Mlp => "mlp",
            Mode::Portrait => "portrait",
            Mode::FeedbackKz => "feedback-kz",
        }
    }

    /// Modes that draw trajectories.
    pub fn samples(self) -> bool {
        matches!(self, Mode::Simulate | Mode::Postselect | Mode::Correlate | Mode::FeedbackKz)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub tau_m: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl ParamsConfig {
    pub fn model(&self) -> ModelParams {
        ModelParams::new(self.tau_m, self.dt, self.n_steps)
            .with_gamma(self.gamma)
            .with_epsilon(self.epsilon)
            .with_delta(self.delta)
    }

    fn from_model(p: &ModelParams) -> Self {
        ParamsConfig {
            tau_m: p.tau_m,
            dt: p.dt,
            n_steps: p.n_steps,
            gamma: p.gamma,
            epsilon: p.epsilon,
            delta: p.delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub master_seed: u64,
    pub scheme: UpdateScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub z_final: f64,
    pub tolerance: f64,
    /// Truncation order of the conditioned moment series.
    pub series_order: usize,
}

impl SelectionConfig {
    pub fn postselection(&self) -> Postselection {
        Postselection {
            z_final: self.z_final,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Trajectory dump formats; tables are always CSV.
    pub formats: Vec<DumpFormat>,
    /// Number of checkpoints for ensemble statistics.
    pub checkpoints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelateConfig {
    pub reference_times: Vec<f64>,
    pub max_lag: f64,
    pub lag_step: f64,
    pub monte_carlo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramsConfig {
    /// Flavors u, v, w or xi.
    pub endings: Vec<String>,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub theta_initial: f64,
    pub final_condition: FinalCondition,
    pub total_time: f64,
    pub shooting: ShootingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitConfig {
    pub energies: Vec<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KzConfig {
    pub max_tau: f64,
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    pub jackknife_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub params: ParamsConfig,
    pub initial: BlochState,
    pub fb: FeedbackSpec,
    pub ensemble: EnsembleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionConfig>,
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlate: Option<CorrelateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagrams: Option<DiagramsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portrait: Option<PortraitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kz: Option<KzConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    Parse(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "cannot parse config: {m}"),
        }
    }
}

fn output(dir: &str) -> OutputConfig {
    OutputConfig {
        directory: PathBuf::from(dir),
        formats: vec![DumpFormat::Csv],
        checkpoints: 21,
    }
}

fn ensemble(n_traj: usize, scheme: UpdateScheme) -> EnsembleConfig {
    EnsembleConfig {
        n_traj,
        master_seed: 1,
        scheme,
    }
}

fn rabi_params() -> ParamsConfig {
    ParamsConfig::from_model(
        &ModelParams::new(1.0, 0.001, 500)
            .with_efficiency(0.02)
            .with_delta(20.0 * PI),
    )
}

fn feedback_params() -> ParamsConfig {
    ParamsConfig::from_model(&ModelParams::new(1.0, 0.001, 10_000))
}

impl RunConfig {
    /// Built-in defaults for a mode. Bare postselection runs 5×10⁵ pure
    /// measurement trajectories from z = 0, selected on z(0.6 τ_m) = cos π/4 ± 0.02.
    pub fn preset(mode: Mode) -> RunConfig {
        let base = RunConfig {
            mode,
            params: ParamsConfig::from_model(&ModelParams::new(1.0, 0.006, 100)),
            initial: BlochState { x: 1.0, y: 0.0, z: 0.0 },
            fb: FeedbackSpec::None,
            ensemble: ensemble(500_000, UpdateScheme::ExactOperator),
            selection: None,
            output: output("out"),
            correlate: None,
            diagrams: None,
            mlp: None,
            portrait: None,
            kz: None,
        };
        let linear = FeedbackSpec::DirectLinear { delta0: 0.0, delta1: 0.8 };
        match mode {
            Mode::Simulate => RunConfig {
                ensemble: ensemble(1000, UpdateScheme::ExactOperator),
                ..base
            },
            Mode::Postselect => RunConfig {
                selection: Some(SelectionConfig {
                    z_final: (PI / 4.0).cos(),
                    tolerance: 0.02,
                    series_order: qpath::conditioned::DEFAULT_SERIES_ORDER,
                }),
                ..base
            },
            Mode::Correlate => RunConfig {
                params: rabi_params(),
                initial: BlochState { x: 0.0, y: 1.0, z: 0.0 },
                ensemble: ensemble(100_000, UpdateScheme::ExactOperator),
                correlate: Some(CorrelateConfig {
                    reference_times: vec![0.113, 0.339],
                    max_lag: 0.16,
                    lag_step: 0.005,
                    monte_carlo: true,
                }),
                ..base
            },
            Mode::Diagrams => RunConfig {
                params: rabi_params(),
                initial: BlochState { x: 0.0, y: 1.0, z: 0.0 },
                ensemble: ensemble(1, UpdateScheme::ExactOperator),
                diagrams: Some(DiagramsConfig {
                    endings: vec!["v".into(), "v".into()],
                    times: vec![0.4, 0.2],
                }),
                ..base
            },
            Mode::Mlp => RunConfig {
                params: feedback_params(),
                initial: BlochState::from_theta(1.2 * PI),
                fb: linear,
                ensemble: ensemble(1000, UpdateScheme::split_default()),
                mlp: Some(MlpConfig {
                    theta_initial: 1.2 * PI,
                    final_condition: FinalCondition::FreeEnd,
                    total_time: 10.0,
                    shooting: ShootingConfig::default(),
                }),
                ..base
            },
            Mode::Portrait => RunConfig {
                params: feedback_params(),
                initial: BlochState::from_theta(0.5 * PI),
                fb: linear,
                ensemble: ensemble(1000, UpdateScheme::split_default()),
                portrait: Some(PortraitConfig {
                    energies: vec![0.0, -0.5, -0.25, 0.25],
                    theta_min: 0.0,
                    theta_max: 2.0 * PI,
                    samples: 2001,
                }),
                ..base
            },
            Mode::FeedbackKz => RunConfig {
                params: ParamsConfig::from_model(&ModelParams::new(1.0, 0.0025, 1600)),
                initial: BlochState { x: 0.0, y: 0.0, z: 1.0 },
                fb: FeedbackSpec::PhaseLock { delta_d: 20.0, factor: 0.3 },
                ensemble: ensemble(1000, UpdateScheme::Stratonovich),
                kz: Some(KzConfig {
                    max_tau: 1.0,
                    points: 81,
                    burn_in: None,
                    jackknife_blocks: 50,
                }),
                ..base
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

/// A config resolved against its preset, with the dotted paths that were
/// filled in from the preset rather than the user's input.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub defaulted: Vec<String>,
}

fn kind_of(t: &toml::Table) -> Option<&toml::Value> {
    t.get("kind")
}

/// Overlays `user` on `base`. Tagged tables whose `kind` differs are replaced
/// whole. Records every base leaf the user did not supply.
fn merge(base: &mut toml::Table, user: &toml::Table, prefix: &str, defaulted: &mut Vec<String>) {
    let keys: Vec<String> = base.keys().cloned().collect();
    for key in keys {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), user.get(&key)) {
            (Some(toml::Value::Table(b)), Some(toml::Value::Table(u))) => {
                if kind_of(u).is_some() && kind_of(b) != kind_of(u) {
                    *b = u.clone();
                } else {
                    merge(b, u, &path, defaulted);
                }
            }
            (Some(slot), Some(u)) => *slot = u.clone(),
            (Some(toml::Value::Table(b)), None) => {
                let mut inner = Vec::new();
                merge(b, &toml::Table::new(), &path, &mut inner);
                defaulted.extend(inner);
            }
            (Some(_), None) => defaulted.push(path),
            (None, _) => {}
        }
    }
    for (key, value) in user {
        if !base.contains_key(key) {
            base.insert(key.clone(), value.clone());
        }
    }
}

/// Resolves user TOML text against the preset for its mode. `mode_override`
/// wins over the file; with neither, the mode is postselect.
pub fn resolve(text: &str, mode_override: Option<Mode>) -> Result<Resolved, ConfigError> {
    let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let file_mode = match user.get("mode") {
        Some(v) => Some(
            Mode::deserialize(v.clone()).map_err(|e| ConfigError::Parse(format!("mode: {e}")))?,
        ),
        None => None,
    };
    let mode = mode_override.or(file_mode).unwrap_or(Mode::Postselect);
    let preset = RunConfig::preset(mode);
    let mut base: toml::Table = toml::Table::try_from(&preset).expect("preset serializes");
    let mut defaulted = Vec::new();
    merge(&mut base, &user, "", &mut defaulted);
    base.insert("mode".into(), toml::Value::String(mode.name().into()));
    defaulted.retain(|p| p != "mode");
    let config = RunConfig::deserialize(toml::Value::Table(base)).map_err(|e| ConfigError::Parse(e.to_string()))?;
    Ok(Resolved { config, defaulted })
}

/// Reads a TOML config, or the `config` record of a manifest (`.json`).
pub fn load(path: &Path, mode_override: Option<Mode>) -> Result<Resolved, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let config = manifest
            .get("config")
            .ok_or_else(|| ConfigError::Parse("manifest has no `config` record".into()))?;
        let mut config: RunConfig =
            serde_json::from_value(config.clone()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(m) = mode_override {
            config.mode = m;
        }
        return Ok(Resolved { config, defaulted: Vec::new() });
    }
    resolve(&text, mode_override)
}
