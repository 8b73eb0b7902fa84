use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hyperrisk::data::SyntheticSpec;
use hyperrisk::train::TrainConfig;

use crate::CliError;

/// Settings file for every command. Each field is optional; command-line
/// flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(AppConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c: AppConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, AppConfig::default());
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.train.model.hidden_size, 59);
    }

    #[test]
    fn nested_overrides_and_unknown_keys() {
        let c: AppConfig = serde_json::from_str(r#"{"train": {"epochs": 3, "model": {"ensemble_size": 2}}}"#).unwrap();
        assert_eq!((c.train.epochs, c.train.model.ensemble_size), (3, 2));
        assert_eq!(c.train.learning_rate, 0.00039);
        assert!(serde_json::from_str::<AppConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<AppConfig>(r#"{"train": {"model": {"depth": 2}}}"#).is_err());
    }
}
