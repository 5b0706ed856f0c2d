use std::path::Path;

use anchorkit::assignment::MatchConfig;
use anchorkit::augmentation::{CalibrationConfig, DasConfig, SseConfig};
use anchorkit::eval::EvalConfig;
use anchorkit::hcam::HcamLossConfig;
use serde::Deserialize;

use crate::error::CliError;

/// Settings read from `--config`. Every section is optional and falls back
/// to the library defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub sse: SseConfig,
    pub das: DasConfig,
    pub hcam: HcamLossConfig,
    pub calibration: CalibrationConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.matching.validate()?;
        self.sse.validate()?;
        self.das.validate()?;
        self.hcam.validate()?;
        self.eval.validate()?;
        Ok(())
    }
}
