use std::fs;
use std::path::{Path, PathBuf};

use coop_privacy::environments::{build_navigation, build_sysadmin, GridMap, SysAdminParams};
use coop_privacy::game_model::{MarkovGame, ModelFile, ReachAvoidSpec};
use coop_privacy::privacy::PrivacyParams;
use coop_privacy::synthesis::SynthesisConfig;
use coop_privacy::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Sysadmin {
        initial_config: Vec<usize>,
        #[serde(default = "default_p_r")]
        p_r: f64,
        #[serde(default = "default_p_fail")]
        p_onb: f64,
        #[serde(default = "default_p_fail")]
        p_off: f64,
        #[serde(default = "default_limit")]
        max_offline: usize,
        #[serde(default = "default_limit")]
        max_in_repair: usize,
    },
    Navigation {
        /// ASCII map file; the built-in canonical map when absent.
        #[serde(default)]
        map: Option<PathBuf>,
        #[serde(default = "default_slip")]
        slip_prob: f64,
    },
    Model {
        path: PathBuf,
    },
}

fn default_p_r() -> f64 {
    0.9
}
fn default_p_fail() -> f64 {
    0.1
}
fn default_limit() -> usize {
    2
}
fn default_slip() -> f64 {
    0.05
}

impl EnvironmentSpec {
    pub fn sysadmin(initial_config: Vec<usize>) -> Self {
        Self::Sysadmin {
            initial_config,
            p_r: default_p_r(),
            p_onb: default_p_fail(),
            p_off: default_p_fail(),
            max_offline: default_limit(),
            max_in_repair: default_limit(),
        }
    }

    pub fn canonical_navigation() -> Self {
        Self::Navigation {
            map: None,
            slip_prob: default_slip(),
        }
    }

    /// Builds the game; relative paths are resolved against `base`.
    pub fn build(&self, base: &Path) -> Result<(MarkovGame, ReachAvoidSpec)> {
        match self {
            Self::Sysadmin {
                initial_config,
                p_r,
                p_onb,
                p_off,
                max_offline,
                max_in_repair,
            } => build_sysadmin(&SysAdminParams {
                n_agents: initial_config.len(),
                p_r: *p_r,
                p_onb: *p_onb,
                p_off: *p_off,
                max_offline: *max_offline,
                max_in_repair: *max_in_repair,
                initial_config: initial_config.clone(),
            }),
            Self::Navigation { map, slip_prob } => {
                let map = match map {
                    Some(path) => GridMap::parse(&read_file(&base.join(path))?, *slip_prob)?,
                    None => GridMap::canonical(*slip_prob)?,
                };
                build_navigation(&map)
            }
            Self::Model { path } => ModelFile::from_json(&read_file(&base.join(path))?)?.build(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySettings {
    pub epsilons: Vec<f64>,
    pub k: u32,
    /// Also evaluate without the mechanism.
    pub truthful: bool,
}

impl Default for PrivacySettings {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 1.0, 10.0],
            k: 1,
            truthful: true,
        }
    }
}

impl PrivacySettings {
    pub fn params(&self) -> Result<Vec<PrivacyParams>> {
        self.epsilons.iter().map(|&e| PrivacyParams::new(e, self.k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub rollouts: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            rollouts: 1000,
            horizon: coop_privacy::execution::DEFAULT_HORIZON,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSettings {
    pub horizon: usize,
}

impl Default for DpSettings {
    fn default() -> Self {
        Self { horizon: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub privacy: PrivacySettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub dp: DpSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(environment: EnvironmentSpec) -> Self {
        Self {
            environment,
            synthesis: SynthesisConfig::default(),
            privacy: PrivacySettings::default(),
            evaluation: EvaluationSettings::default(),
            dp: DpSettings::default(),
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesis.validate()?;
        self.privacy.params()?;
        if self.evaluation.rollouts == 0 || self.evaluation.horizon == 0 {
            return Err(Error::Validation("rollouts and horizon must be positive".into()));
        }
        if self.dp.horizon == 0 {
            return Err(Error::Validation("dp.horizon must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialisation, leaving out the output
    /// directory so that moving outputs does not change the hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        hash_json(&canonical)
    }
}

/// Reads a file named by the user; a missing file is a validation error
/// that names the path.
pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("value serialises");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}
