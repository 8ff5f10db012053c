//! Run configuration: defaults, then a TOML file, then `--set` overrides.

use std::path::Path;

use gravdec::bounds::TimeRule;
use gravdec::decoherence::MassDensity;
use gravdec::master::Hamiltonian;
use gravdec::noise::{PowerFamilySpec, RadialMeasure};
use gravdec::UnitMode;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub units: UnitMode,
    pub bound_mc: BoundMcConfig,
    pub localize: LocalizeConfig,
    pub correlation: CorrelationConfig,
    pub master: MasterConfig,
    pub family: FamilyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            master_seed: 7,
            units: UnitMode::Scaled,
            bound_mc: BoundMcConfig::default(),
            localize: LocalizeConfig::default(),
            correlation: CorrelationConfig::default(),
            master: MasterConfig::default(),
            family: FamilyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Colored,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmearKind {
    None,
    Fixed,
    SelfConsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundMcConfig {
    /// Path lengths s = cT, log-spaced.
    pub s_min: f64,
    pub s_max: f64,
    pub points: usize,
    pub n_realizations: usize,
    pub source: SourceKind,
    pub k_min: f64,
    pub k_max: f64,
    pub n_modes: usize,
    pub radial: RadialMeasure,
    pub white_steps: usize,
    pub smearing: SmearKind,
    pub radius: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub rule: TimeRule,
    pub max_phase_step: f64,
}

impl Default for BoundMcConfig {
    fn default() -> Self {
        Self {
            s_min: 1e3,
            s_max: 1e6,
            points: 7,
            n_realizations: 1000,
            source: SourceKind::Colored,
            k_min: 3e-7,
            k_max: 0.03,
            n_modes: 64,
            radial: RadialMeasure::Logarithmic,
            white_steps: 32,
            smearing: SmearKind::SelfConsistent,
            radius: 1.0,
            tol: 1e-3,
            max_iter: 40,
            rule: TimeRule::Simpson,
            max_phase_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    /// Phase-variance threshold in rad².
    pub threshold: f64,
    /// Search bracket for a_c in centimetres.
    pub a_min_cm: f64,
    pub a_max_cm: f64,
    /// Bodies are given in grams and centimetres whatever `units` says.
    pub proton_mass: f64,
    pub proton_radius: f64,
    pub ball_radius: f64,
    pub ball_density: f64,
    pub transition_density: f64,
    pub solve_transition: bool,
    pub surveys: bool,
    pub survey_points: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            a_min_cm: 1e-40,
            a_max_cm: 1e40,
            proton_mass: 1.6726e-24,
            proton_radius: 1e-13,
            ball_radius: 1.0,
            ball_density: 1.0,
            transition_density: 1.0,
            solve_transition: true,
            surveys: true,
            survey_points: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub r_values: Vec<f64>,
    pub tau_values: Vec<f64>,
    pub k_min: f64,
    pub k_max: f64,
    pub n_modes: usize,
    pub n_realizations: usize,
    pub points_per_realization: usize,
    pub region: f64,
    pub band_factor: f64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            r_values: vec![0.3, 1.0, 3.0, 10.0, 30.0],
            tau_values: vec![0.0, 0.5, 2.0, 20.0],
            k_min: 0.01,
            k_max: 100.0,
            n_modes: 64,
            n_realizations: 2000,
            points_per_realization: 4,
            region: 100.0,
            band_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasterConfig {
    pub densities: Vec<MassDensity>,
    pub grid_points: usize,
    pub spacing: f64,
    pub hamiltonian: Hamiltonian,
    /// Markovian step as a fraction of 1/max(Λ).
    pub markov_step_fraction: f64,
    pub markov_steps: usize,
    pub t_final: f64,
    pub dt: f64,
    pub snapshots: usize,
    /// Relative tolerance of the ln ρ = −½ Var check.
    pub conjecture_tolerance: f64,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            densities: vec![
                MassDensity::Gaussian { mass: 10.0, sigma: 0.5 },
                MassDensity::UniformBall { mass: 10.0, radius: 0.5 },
            ],
            grid_points: 16,
            spacing: 0.1,
            hamiltonian: Hamiltonian::None,
            markov_step_fraction: 0.01,
            markov_steps: 200,
            t_final: 3.0,
            dt: 0.005,
            snapshots: 10,
            conjecture_tolerance: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub specs: Vec<PowerFamilySpec>,
    pub s_min: f64,
    pub s_max: f64,
    pub points: usize,
    pub mc_samples: usize,
    pub tolerance: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        let spec = |j, m| PowerFamilySpec { j, m, n1: 0.0, n2: 0.0, k_const: 1.0 };
        Self {
            specs: vec![spec(-0.5, -1.0), spec(0.0, -4.0 / 3.0), spec(0.0, 0.0)],
            s_min: 1e2,
            s_max: 1e5,
            points: 7,
            mc_samples: 20_000,
            tolerance: 0.02,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

/// Writes `value` at a dotted path, creating tables on the way.
fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), Failure> {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("bad override key '{path}'")));
    }
    for k in &keys[..keys.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| config_err(format!("'{path}' does not name a table entry")))?;
        cur = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur.as_table_mut().ok_or_else(|| config_err(format!("'{path}' does not name a table entry")))?;
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `key=value`; the value is read as TOML and falls back to a bare
/// string.
fn parse_override(s: &str) -> Result<(String, toml::Value), Failure> {
    let (k, v) = s.split_once('=').ok_or_else(|| config_err(format!("override '{s}' is not key=value")))?;
    let v = v.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((k.trim().to_string(), value))
}

pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let mut tree = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
    if let Some(p) = file {
        let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
        let parsed: toml::Table = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
        merge(&mut tree, toml::Value::Table(parsed));
    }
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set_path(&mut tree, &k, v)?;
    }
    let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(config_err(format!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}
