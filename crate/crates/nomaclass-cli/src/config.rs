//! Config file and flag resolution.
//!
//! Precedence is flags over file over defaults. The resolved experiment is a
//! plain serializable record, so the manifest written next to the results can
//! reproduce the run exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use nomaclass::modes::{case1, case2, case3, ModeTable, ModulationMode};
use nomaclass::sim::{ClassifierKind, PlanKind, Scheme, SimConfig, TruthModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// One modulation mode as it appears in config files and the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub id: usize,
    pub far_order: u32,
    #[serde(default)]
    pub near_order: Option<u32>,
    pub power_far: f64,
    #[serde(default)]
    pub power_near: f64,
    #[serde(default)]
    pub data_rotation: f64,
    /// Omitted entries fall back to the uniform pilot plan, but only when
    /// every entry omits it.
    #[serde(default)]
    pub pilot_rotation: Option<f64>,
}

/// The JSON config file. Every field is optional; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub modes: Option<Vec<ModeConfig>>,
    pub snrs_db: Option<Vec<f64>>,
    pub snr_min: Option<f64>,
    pub snr_max: Option<f64>,
    pub snr_step: Option<f64>,
    pub trials: Option<u64>,
    pub frame_symbols: Option<usize>,
    pub seed: Option<u64>,
    pub classifiers: Option<Vec<String>>,
    pub truth: Option<String>,
    pub prm_rotation: Option<f64>,
    pub phase_rule: Option<String>,
    pub classifier_kind: Option<String>,
    pub mc_samples: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Flag-level overrides shared by the subcommands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<String>,
    pub snrs_db: Option<Vec<f64>>,
    pub snr_min: Option<f64>,
    pub snr_max: Option<f64>,
    pub snr_step: Option<f64>,
    pub trials: Option<u64>,
    pub frame_symbols: Option<usize>,
    pub seed: Option<u64>,
    pub classifiers: Option<String>,
    pub truth: Option<String>,
    pub prm_rotation: Option<f64>,
    pub phase_rule: Option<String>,
    pub classifier_kind: Option<String>,
}

/// A fully resolved experiment. Serialized as-is into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    pub preset: String,
    pub modes: Vec<ModeConfig>,
    pub snrs_db: Vec<f64>,
    pub trials: u64,
    pub frame_symbols: usize,
    pub seed: u64,
    pub classifiers: Vec<String>,
    pub truth: String,
    pub prm_rotation: f64,
    pub phase_rule: String,
    pub classifier_kind: String,
    /// Channel draws behind the model-based capacity column.
    pub mc_samples: usize,
    /// Grid resolution of a rotation search run; absent for sweeps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_grid_step: Option<f64>,
}

fn mode_to_config(m: &ModulationMode) -> ModeConfig {
    ModeConfig {
        id: m.id,
        far_order: m.far_order,
        near_order: m.near_order,
        power_far: m.power_far,
        power_near: m.power_near,
        data_rotation: m.data_rotation,
        pilot_rotation: Some(m.pilot_rotation),
    }
}

fn preset_table(name: &str) -> Result<ModeTable, ConfigError> {
    match name {
        "case1" => Ok(case1()),
        "case2" => Ok(case2()),
        "case3" => Ok(case3()),
        other => Err(invalid(format!("unknown preset '{other}' (expected case1, case2, case3)"))),
    }
}

fn custom_table(modes: &[ModeConfig]) -> Result<ModeTable, ConfigError> {
    let with_pilot = modes.iter().filter(|m| m.pilot_rotation.is_some()).count();
    if with_pilot != 0 && with_pilot != modes.len() {
        return Err(invalid("pilot_rotation must be set on all modes or none"));
    }
    let uniform = |i: usize| i as f64 * std::f64::consts::TAU / modes.len() as f64;
    let converted: Vec<ModulationMode> = modes
        .iter()
        .enumerate()
        .map(|(i, m)| ModulationMode {
            id: m.id,
            far_order: m.far_order,
            near_order: m.near_order,
            power_far: m.power_far,
            power_near: m.power_near,
            data_rotation: m.data_rotation,
            pilot_rotation: m.pilot_rotation.unwrap_or_else(|| uniform(i)),
        })
        .collect();
    ModeTable::new(converted).map_err(|e| invalid(e.to_string()))
}

fn parse_truth(s: &str) -> Result<TruthModel, ConfigError> {
    match s {
        "near-user" => Ok(TruthModel::NearUser),
        "mixed-roles" => Ok(TruthModel::MixedRoles),
        "noma-near" => Ok(TruthModel::NomaNear),
        other => Err(invalid(format!(
            "unknown truth model '{other}' (expected near-user, mixed-roles, noma-near)"
        ))),
    }
}

fn parse_phase_rule(s: &str) -> Result<PlanKind, ConfigError> {
    match s {
        "uniform" => Ok(PlanKind::Uniform),
        "nonuniform" => Ok(PlanKind::Grouped),
        other => Err(invalid(format!("unknown phase rule '{other}' (expected uniform, nonuniform)"))),
    }
}

fn parse_classifier_kind(s: &str) -> Result<ClassifierKind, ConfigError> {
    match s {
        "three-step" => Ok(ClassifierKind::ThreeStep),
        "joint" => Ok(ClassifierKind::Joint),
        other => Err(invalid(format!("unknown classifier kind '{other}' (expected three-step, joint)"))),
    }
}

fn parse_schemes(names: &[String]) -> Result<Vec<Scheme>, ConfigError> {
    if names.is_empty() {
        return Err(invalid("classifier list is empty"));
    }
    names.iter().map(|n| n.parse::<Scheme>().map_err(ConfigError::Invalid)).collect()
}

fn snr_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, ConfigError> {
    if step <= 0.0 {
        return Err(invalid(format!("snr step must be positive (got {step})")));
    }
    if max < min {
        return Err(invalid(format!("snr range is empty ({min} > {max})")));
    }
    let mut grid = Vec::new();
    let mut i = 0u32;
    loop {
        let snr = min + f64::from(i) * step;
        if snr > max + 1e-9 {
            break;
        }
        grid.push(snr);
        i += 1;
    }
    Ok(grid)
}

/// Resolves file + flags + defaults into a runnable experiment.
pub fn resolve(file: &FileConfig, flags: &Overrides) -> Result<(ExperimentSpec, SimConfig), ConfigError> {
    if flags.preset.is_some() && file.modes.is_some() {
        return Err(invalid("a preset flag cannot override a custom mode table"));
    }
    let (preset, table) = match (&flags.preset, &file.modes, &file.preset) {
        (Some(name), _, _) => (name.clone(), preset_table(name)?),
        (None, Some(modes), None) => ("custom".to_string(), custom_table(modes)?),
        (None, Some(_), Some(_)) => {
            return Err(invalid("config sets both a preset and a custom mode table"));
        }
        (None, None, Some(name)) => (name.clone(), preset_table(name)?),
        (None, None, None) => ("case1".to_string(), case1()),
    };

    let snrs_db = if let Some(list) = flags.snrs_db.clone().or_else(|| file.snrs_db.clone()) {
        if list.is_empty() {
            return Err(invalid("snr list is empty"));
        }
        list
    } else {
        // The figures' axis range: 0-30 dB at 1 dB.
        let min = flags.snr_min.or(file.snr_min).unwrap_or(0.0);
        let max = flags.snr_max.or(file.snr_max).unwrap_or(30.0);
        let step = flags.snr_step.or(file.snr_step).unwrap_or(1.0);
        snr_grid(min, max, step)?
    };

    let classifier_names: Vec<String> = if let Some(list) = &flags.classifiers {
        list.split(',').map(|s| s.trim().to_string()).collect()
    } else if let Some(list) = &file.classifiers {
        list.clone()
    } else {
        Scheme::ALL.iter().map(|s| s.name().to_string()).collect()
    };
    let schemes = parse_schemes(&classifier_names)?;

    let truth_name = flags.truth.clone().or_else(|| file.truth.clone()).unwrap_or_else(|| "near-user".into());
    let phase_rule = flags.phase_rule.clone().or_else(|| file.phase_rule.clone()).unwrap_or_else(|| "uniform".into());
    let kind_name = flags
        .classifier_kind
        .clone()
        .or_else(|| file.classifier_kind.clone())
        .unwrap_or_else(|| "three-step".into());

    let mut sim = SimConfig::new(table);
    sim.snrs_db = snrs_db.clone();
    sim.trials = flags.trials.or(file.trials).unwrap_or(100_000);
    sim.frame_symbols = flags.frame_symbols.or(file.frame_symbols).unwrap_or(nomaclass::sim::DEFAULT_FRAME_SYMBOLS);
    sim.seed = flags.seed.or(file.seed).unwrap_or(1);
    sim.schemes = schemes;
    sim.truth = parse_truth(&truth_name)?;
    sim.prm_rotation = flags.prm_rotation.or(file.prm_rotation).unwrap_or(nomaclass::sim::DEFAULT_PRM_ROTATION);
    sim.plan = parse_phase_rule(&phase_rule)?;
    sim.classifier = parse_classifier_kind(&kind_name)?;
    sim.validate().map_err(|e| invalid(e.to_string()))?;

    let spec = ExperimentSpec {
        preset,
        modes: (0..sim.table.len()).map(|l| mode_to_config(sim.table.mode(l))).collect(),
        snrs_db,
        trials: sim.trials,
        frame_symbols: sim.frame_symbols,
        seed: sim.seed,
        classifiers: sim.schemes.iter().map(|s| s.name().to_string()).collect(),
        truth: truth_name,
        prm_rotation: sim.prm_rotation,
        phase_rule,
        classifier_kind: kind_name,
        mc_samples: file.mc_samples.unwrap_or(10_000),
        theta_grid_step: None,
    };
    Ok((spec, sim))
}
