//! Run configuration shared by every command, read from and written to TOML.

use std::path::{Path, PathBuf};

use cnma::bayes::Priors;
use cnma::effects::Direction;
use cnma::freq::EffectsModel;
use cnma::mcmc::McmcConfig;
use cnma::network::ZeroCellPolicy;
use cnma::sim::SimModel;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    AnchoredArm,
    FreqContrast,
    BayesContrast,
    #[default]
    BayesArm,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        self.sim_model().name()
    }

    pub fn sim_model(self) -> SimModel {
        match self {
            ModelChoice::AnchoredArm => SimModel::AnchoredArm,
            ModelChoice::FreqContrast => SimModel::FreqContrast,
            ModelChoice::BayesContrast => SimModel::BayesContrast,
            ModelChoice::BayesArm => SimModel::BayesArm,
        }
    }

    pub fn is_contrast_level(self) -> bool {
        matches!(self, ModelChoice::FreqContrast | ModelChoice::BayesContrast)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub network: u8,
    pub data_anchor: String,
    pub analysis_anchor: String,
    pub n_per_arm: u64,
    pub replicates: usize,
    /// 0 means one worker per available core.
    pub workers: usize,
    /// Also write every replicate's raw record.
    pub raw_records: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            network: 1,
            data_anchor: "E".into(),
            analysis_anchor: "E".into(),
            n_per_arm: 500,
            replicates: 200,
            workers: 0,
            raw_records: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub anchor: Option<String>,
    /// Treatment the reported effects are relative to; defaults to the
    /// anchor, then to the first arm of the first study.
    pub comparator: Option<String>,
    /// Treatment used as the common baseline when arm data are turned into
    /// contrasts; the first arm is used when absent or not in the study.
    pub baseline: Option<String>,
    pub effects: EffectsModel,
    pub separator: String,
    pub level: f64,
    pub direction: Direction,
    pub zero_cell: ZeroCellPolicy,
    pub seed: u64,
    pub out: PathBuf,
    pub dic: bool,
    pub priors: Priors,
    pub mcmc: McmcConfig,
    pub simulation: SimSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::default(),
            anchor: None,
            comparator: None,
            baseline: None,
            effects: EffectsModel::Random,
            separator: "+".into(),
            level: 0.95,
            direction: Direction::HigherBetter,
            zero_cell: ZeroCellPolicy::Error,
            seed: 1,
            out: PathBuf::from("out"),
            dic: true,
            priors: Priors::default(),
            mcmc: McmcConfig::default(),
            simulation: SimSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// MCMC settings with the run seed applied.
    pub fn mcmc(&self) -> McmcConfig {
        McmcConfig {
            seed: self.seed,
            ..self.mcmc.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level {} outside (0, 1)", self.level)));
        }
        if self.separator.is_empty() {
            return Err(CliError::Config("separator must not be empty".into()));
        }
        match (self.model, &self.anchor) {
            (ModelChoice::AnchoredArm, None) => Err(CliError::Config("the anchored model needs --anchor".into())),
            (m, Some(_)) if m != ModelChoice::AnchoredArm => {
                Err(CliError::Config(format!("--anchor only applies to anchored-arm, not {}", m.name())))
            }
            _ => Ok(self.mcmc.validate()?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_settings() {
        let c = RunConfig::from_toml("model = \"anchored-arm\"\nanchor = \"Usual\"\n[mcmc]\nkeep = 100\n", Path::new("x")).unwrap();
        assert_eq!(c.model, ModelChoice::AnchoredArm);
        assert_eq!(c.mcmc.keep, 100);
        assert_eq!(c.mcmc.burn_in, McmcConfig::default().burn_in);
        assert_eq!(c.level, 0.95);
        assert_eq!(c.zero_cell, ZeroCellPolicy::Error);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn round_trip_through_toml() {
        let c = RunConfig {
            model: ModelChoice::FreqContrast,
            comparator: Some("Usual".into()),
            effects: EffectsModel::Fixed,
            level: 0.9,
            direction: Direction::LowerBetter,
            zero_cell: ZeroCellPolicy::Continuity05,
            seed: 99,
            priors: Priors {
                sigma_upper: 5.0,
                ..Priors::default()
            },
            simulation: SimSettings {
                network: 2,
                raw_records: true,
                ..SimSettings::default()
            },
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&c.to_toml().unwrap(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::from_toml("", Path::new("x")).unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(RunConfig::from_toml("modle = \"bayes-arm\"", Path::new("x")).is_err());
        let anchored = RunConfig {
            model: ModelChoice::AnchoredArm,
            ..RunConfig::default()
        };
        assert!(anchored.validate().is_err());
        let stray = RunConfig {
            anchor: Some("A".into()),
            ..RunConfig::default()
        };
        assert!(stray.validate().is_err());
        let level = RunConfig {
            level: 1.0,
            ..RunConfig::default()
        };
        assert!(level.validate().is_err());
    }
}
