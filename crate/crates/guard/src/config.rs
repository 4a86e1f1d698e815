//! Scenario config files (TOML, or JSON by `.json` extension).

use std::fs;
use std::path::Path;

use guard_core::sim::ScenarioConfig;

use crate::error::{GuardError, Result};

fn config_err(path: &Path, reason: impl ToString) -> GuardError {
    GuardError::Config {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Parses config text. Missing fields take their defaults; unknown fields
/// are errors.
pub fn parse_config(text: &str, json: bool) -> Result<ScenarioConfig, String> {
    if json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

pub fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Loads and validates a config file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
    let cfg = parse_config(&text, is_json(path)).map_err(|e| config_err(path, e))?;
    cfg.validate().map_err(|e| config_err(path, e))?;
    Ok(cfg)
}

/// The config at `path`, or the defaults when no path is given.
pub fn load_or_default(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(ScenarioConfig::default()),
    }
}

pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(parse_config("", false).unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(parse_config("nodes = 3", false).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ScenarioConfig {
            horizon_s: Some(3600.0),
            ..ScenarioConfig::default()
        };
        cfg.background.rate_per_node_h = 0.01;
        assert_eq!(parse_config(&to_toml(&cfg), false).unwrap(), cfg);
    }

    #[test]
    fn json_sections() {
        let cfg = parse_config(r#"{"seed": 7, "detector": {"k_windows": 4}}"#, true).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.detector.k_windows, 4);
    }
}
