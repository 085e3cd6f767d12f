//! Run configuration shared by the harness and the command line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dbst::{make_alpha_schedule, AlphaSchedule, DbstPreset};
use crate::error::{Error, Result};
use crate::ivos::{MockTrackerConfig, TrackerKind};
use crate::ttga::{AugmentConfig, PromptConfig, Strategy, TtgaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Generated transition sequence with test-time adapted prompts.
    Cav,
    Concat,
    Mixup,
    Affine,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cav" => Ok(Method::Cav),
            "concat" => Ok(Method::Concat),
            "mixup" => Ok(Method::Mixup),
            "affine" => Ok(Method::Affine),
            other => Err(Error::Config(format!("unknown method {other:?} (cav|concat|mixup|affine)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Synthetic,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtgaSettings {
    pub enabled: bool,
    pub strategy: Strategy,
    pub steps: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub extractor_stride: usize,
    pub extractor_seed: u64,
    pub augment: AugmentConfig,
    pub prompts: PromptConfig,
}

impl Default for TtgaSettings {
    fn default() -> Self {
        let t = TtgaConfig::default();
        Self {
            enabled: true,
            strategy: t.strategy,
            steps: t.steps,
            learning_rate: t.learning_rate,
            temperature: t.temperature,
            extractor_stride: 4,
            extractor_seed: 0,
            augment: t.augment,
            prompts: PromptConfig::default(),
        }
    }
}

impl TtgaSettings {
    pub fn finetune_config(&self, seed: u64) -> TtgaConfig {
        TtgaConfig {
            strategy: self.strategy,
            steps: if self.enabled { self.steps } else { 0 },
            learning_rate: self.learning_rate,
            temperature: self.temperature,
            augment: self.augment,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub shots: usize,
    pub tracker: TrackerKind,
    /// Bridge program and arguments for external trackers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracker_command: Option<Vec<String>>,
    /// Mock tracker parameters; scaled from the working resolution when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_tracker: Option<MockTrackerConfig>,
    pub backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend_command: Option<Vec<String>>,
    pub preset: String,
    /// Number of generated intermediate frames.
    pub n_frames: usize,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub ttga: TtgaSettings,
    /// Also prompt intermediate frames of the mixup and affine baselines.
    pub prompt_intermediate: bool,
    pub seed: u64,
    /// Square working resolution in pixels.
    pub resolution: usize,
    pub episodes: usize,
    /// Directory of the generated-frame cache; no caching when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Failure rate above which an evaluation is reported as failed.
    pub max_failure_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Cav,
            shots: 1,
            tracker: TrackerKind::Mock,
            tracker_command: None,
            mock_tracker: None,
            backend: BackendKind::Synthetic,
            backend_command: None,
            preset: "standard".into(),
            n_frames: 9,
            alpha_lo: 0.2,
            alpha_hi: 0.8,
            ttga: TtgaSettings::default(),
            prompt_intermediate: false,
            seed: 0,
            resolution: 512,
            episodes: 1200,
            cache_dir: None,
            max_failure_rate: 0.05,
        }
    }
}

impl RunConfig {
    /// Parses a JSON document; unknown keys are rejected by name.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        if self.resolution < 16 {
            return Err(Error::Config("resolution must be at least 16".into()));
        }
        if matches!(self.method, Method::Mixup | Method::Affine | Method::Cav) && self.n_frames == 0 {
            return Err(Error::Config("n_frames must be at least 1 for this method".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::Config("max_failure_rate must lie in [0, 1]".into()));
        }
        if self.ttga.extractor_stride == 0 {
            return Err(Error::Config("ttga.extractor_stride must be positive".into()));
        }
        if self.tracker != TrackerKind::Mock && self.tracker_command.as_ref().is_none_or(|c| c.is_empty()) {
            return Err(Error::Config(format!("tracker {:?} requires tracker_command", self.tracker)));
        }
        if self.backend == BackendKind::External && self.backend_command.as_ref().is_none_or(|c| c.is_empty()) {
            return Err(Error::Config("backend external requires backend_command".into()));
        }
        DbstPreset::by_name(&self.preset)?;
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<AlphaSchedule> {
        if self.n_frames == 0 {
            return Ok(AlphaSchedule::empty());
        }
        make_alpha_schedule(self.n_frames, self.alpha_lo, self.alpha_hi)
    }

    pub fn tracker_config(&self) -> MockTrackerConfig {
        self.mock_tracker.unwrap_or_else(|| MockTrackerConfig::for_resolution(self.resolution))
    }

    /// Hex SHA-256 of the canonical JSON form. Identical configs hash identically.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(serde_json::to_vec(&value).expect("value serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(c.fingerprint(), RunConfig::from_json(&text).unwrap().fingerprint());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_json(r#"{"methd": "cav"}"#).unwrap_err().to_string();
        assert!(err.contains("methd"), "{err}");
        let err = RunConfig::from_json(r#"{"ttga": {"stpes": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("stpes"), "{err}");
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn external_tracker_needs_command() {
        assert!(RunConfig::from_json(r#"{"tracker": "sam2-tiny"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"tracker": "deva", "tracker_command": ["bridge"]}"#).is_ok());
    }

    #[test]
    fn partial_document_keeps_defaults() {
        let c = RunConfig::from_json(r#"{"method": "concat", "ttga": {"strategy": "abc"}}"#).unwrap();
        assert_eq!(c.method, Method::Concat);
        assert_eq!(c.ttga.strategy, Strategy::Abc);
        assert_eq!(c.ttga.steps, 100);
        assert_eq!(c.n_frames, 9);
    }
}
