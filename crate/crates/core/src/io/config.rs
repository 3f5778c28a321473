//! TOML configuration.
//!
//! Every section is optional and falls back to the built-in defaults:
//!
//! ```toml
//! seed = 0
//!
//! [geometry]        # road box and lanes, see RoadGeometry
//! [driving]         # zeta, softplus_beta, ridge, order_gap, dt, horizon_steps
//! [model]           # variant, past_window, k_tilde, net sizes, dropout, ...
//! [solve]           # barrier-Newton tolerances
//! [train.refinement]
//! [train.full]
//! [import]          # track filtering and column mappings
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tracks::ImportConfig;
use crate::error::{GameError, Result};
use crate::pipeline::{ModelConfig, TrainConfig};
use crate::scenarios::{DrivingConfig, RoadGeometry};
use crate::solver::SolveOptions;

/// Environment variable naming a config file used when none is given.
pub const CONFIG_ENV: &str = "TRAJGAME_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub geometry: RoadGeometry,
    pub driving: DrivingConfig,
    pub model: ModelConfig,
    pub solve: SolveOptions,
    pub train: TrainConfig,
    pub import: ImportConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.driving.validate()?;
        self.model.validate()?;
        self.import.validate()?;
        if self.model.past_window != self.import.past_window {
            return Err(GameError::Config(format!(
                "model past window {} differs from import past window {}",
                self.model.past_window, self.import.past_window
            )));
        }
        if (self.import.dt - self.driving.dt).abs() > 1e-12 {
            return Err(GameError::Config("import step differs from driving step".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| GameError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| GameError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GameError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The file at `path`, else the one named by `TRAJGAME_CONFIG`, else
    /// the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match Self::resolve_path(path) {
            Some(p) => Self::read(&p),
            None => Ok(Config::default()),
        }
    }

    pub fn resolve_path(path: Option<&Path>) -> Option<PathBuf> {
        path.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Variant;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn defaults_carry_published_values() {
        let c = Config::default();
        assert_eq!(c.model.pref_hidden, vec![16, 24]);
        assert_eq!(c.model.order_hidden, vec![16, 4]);
        assert_eq!(c.model.time_hidden, vec![64, 32]);
        assert_eq!(c.model.dropout, 0.6);
        assert_eq!(c.model.big_change, 1.2);
        assert_eq!(c.model.small_change, 1.04);
        assert_eq!(c.driving.dt, 0.2);
        let horizon = (c.driving.horizon_steps + 1) as f64 * c.driving.dt;
        assert!((horizon - 7.0).abs() < 1e-12);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = Config::from_toml("seed = 9\n[model]\nvariant = \"tgl\"\nk_tilde = 3\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.variant, Variant::Tgl);
        assert_eq!(c.model.k_tilde, 3);
        assert_eq!(c.driving, DrivingConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_toml("[model]\ndropout = 1.5\n").is_err());
        assert!(Config::from_toml("[driving]\nzeta = -1.0\n").is_err());
        assert!(Config::from_toml("seed = \"x\"\n").is_err());
    }
}
