//! Effective run configuration, loaded from an optional TOML file and
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use aeg_core::affordance::FailurePolicy;
use aeg_core::eval::{BenchmarkConfig, DEFAULT_MAX_K, DEFAULT_MESSY_HALF_EXTENT};
use aeg_core::hierarchy::DEFAULT_TAU;
use aeg_core::scenegraph::FootprintOverlap;
use aeg_core::tidy::{CalibrationVariant, TidyConfig, DEFAULT_K, DEFAULT_TASK, DEFAULT_THRESHOLD};
use aeg_core::{EnhanceConfig, KeyframeStrategy, Prompter, RelationConfig};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::AegError;

pub const MAX_K: usize = 8;
pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapKind {
    #[default]
    Iou,
    IntersectionOverMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KeyframeKind {
    #[default]
    NeighborSum,
    Random,
    Centering,
    MaxSelf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationKind {
    #[default]
    FixedStandard,
    FixedExample,
    RandomExample,
    SelfGeneratedExample,
    NoCalibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    SkipAndReport,
    FailFast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationSettings {
    pub xy_iou_threshold: f64,
    pub overlap: OverlapKind,
    pub support_gap: f64,
    pub containment_threshold: f64,
    pub near_threshold: f64,
    pub containment_resolution: usize,
}

impl Default for RelationSettings {
    fn default() -> Self {
        let d = RelationConfig::default();
        Self {
            xy_iou_threshold: d.xy_iou_threshold,
            overlap: OverlapKind::Iou,
            support_gap: d.support_gap,
            containment_threshold: d.containment_threshold,
            near_threshold: d.near_threshold,
            containment_resolution: d.containment_resolution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeSettings {
    pub strategy: KeyframeKind,
    /// Pixel coordinates used by the centering strategy.
    pub image_center: [f64; 2],
}

impl Default for KeyframeSettings {
    fn default() -> Self {
        Self { strategy: KeyframeKind::NeighborSum, image_center: [320.0, 240.0] }
    }
}

/// Settings that only affect how HTTP calls are made, never what they
/// return, so they are left out of output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// First retry delay; later ones double.
    pub retry_base_ms: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self { timeout_secs: 120, max_retries: 3, retry_base_ms: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MessySettings {
    pub scenes: usize,
    pub n_place: usize,
    pub half_extent: f64,
}

impl Default for MessySettings {
    fn default() -> Self {
        Self { scenes: 1, n_place: 10, half_extent: DEFAULT_MESSY_HALF_EXTENT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub model_id: String,
    pub temperature: f64,
    pub endpoint: String,
    /// Mock rules file, as written in the config or on the command line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_rules: Option<String>,
    #[serde(skip_serializing)]
    pub cache_dir: Option<String>,
    #[serde(skip_serializing)]
    pub concurrency: usize,
    #[serde(skip_serializing)]
    pub http: HttpSettings,
    pub token_budget: usize,
    pub relation: RelationSettings,
    pub tau: f64,
    pub keyframe: KeyframeSettings,
    pub failure_policy: PolicyKind,
    pub task: String,
    pub threshold: u8,
    pub k: usize,
    pub calibration: CalibrationKind,
    pub allow_local_fallback: bool,
    pub seed: u64,
    pub messy: MessySettings,
    pub max_k: usize,
    /// Directory a relative `mock_rules` resolves against; unset means the
    /// working directory.
    #[serde(skip)]
    pub rules_base: Option<PathBuf>,
    #[serde(skip)]
    pub cache_base: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            model_id: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            mock_rules: None,
            cache_dir: None,
            concurrency: DEFAULT_CONCURRENCY,
            http: HttpSettings::default(),
            token_budget: aeg_core::llm::DEFAULT_TOKEN_BUDGET,
            relation: RelationSettings::default(),
            tau: DEFAULT_TAU,
            keyframe: KeyframeSettings::default(),
            failure_policy: PolicyKind::SkipAndReport,
            task: DEFAULT_TASK.to_string(),
            threshold: DEFAULT_THRESHOLD,
            k: DEFAULT_K,
            calibration: CalibrationKind::FixedStandard,
            allow_local_fallback: false,
            seed: 0,
            messy: MessySettings::default(),
            max_k: DEFAULT_MAX_K,
            rules_base: None,
            cache_base: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, file: &str) -> Result<Self, AegError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            AegError::schema(file, field, e.into_inner().message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, AegError> {
        let text = crate::io::read_text(path)?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().map(Path::to_path_buf);
        cfg.rules_base.clone_from(&base);
        cfg.cache_base = base;
        Ok(cfg)
    }

    pub fn mock_rules_path(&self) -> Option<PathBuf> {
        self.mock_rules.as_deref().map(|p| resolve(self.rules_base.as_deref(), p))
    }

    pub fn cache_path(&self) -> Option<PathBuf> {
        self.cache_dir.as_deref().map(|p| resolve(self.cache_base.as_deref(), p))
    }

    pub fn validate(&self) -> Result<(), AegError> {
        let bad = |m: &str| Err(AegError::Config(m.to_string()));
        self.relation_config().validate().map_err(|e| AegError::Config(e.to_string()))?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be non-negative");
        }
        if !(1..=MAX_K).contains(&self.k) {
            return bad("k must be between 1 and 8");
        }
        if self.threshold > 100 {
            return bad("threshold must be between 0 and 100");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        if self.max_k == 0 {
            return bad("max_k must be at least 1");
        }
        if self.token_budget == 0 {
            return bad("token_budget must be positive");
        }
        if self.model_id.trim().is_empty() {
            return bad("model_id must not be empty");
        }
        if self.task.trim().is_empty() {
            return bad("task must not be empty");
        }
        if !(self.messy.half_extent.is_finite() && self.messy.half_extent > 0.0) {
            return bad("messy.half_extent must be positive");
        }
        if self.messy.scenes == 0 || self.messy.n_place == 0 {
            return bad("messy.scenes and messy.n_place must be at least 1");
        }
        if !self.keyframe.image_center.iter().all(|v| v.is_finite()) {
            return bad("keyframe.image_center must be finite");
        }
        Ok(())
    }

    /// JSON echo written into every output file.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn relation_config(&self) -> RelationConfig {
        let r = &self.relation;
        RelationConfig {
            xy_iou_threshold: r.xy_iou_threshold,
            overlap: match r.overlap {
                OverlapKind::Iou => FootprintOverlap::Iou,
                OverlapKind::IntersectionOverMin => FootprintOverlap::IntersectionOverMin,
            },
            support_gap: r.support_gap,
            containment_threshold: r.containment_threshold,
            near_threshold: r.near_threshold,
            containment_resolution: r.containment_resolution,
        }
    }

    pub fn keyframe_strategy(&self) -> KeyframeStrategy {
        match self.keyframe.strategy {
            KeyframeKind::NeighborSum => KeyframeStrategy::NeighborSum,
            KeyframeKind::MaxSelf => KeyframeStrategy::MaxSelf,
            KeyframeKind::Random => KeyframeStrategy::Random { seed: self.seed },
            KeyframeKind::Centering => KeyframeStrategy::Centering { image_center: self.keyframe.image_center },
        }
    }

    pub fn prompter(&self) -> Prompter {
        Prompter { model_id: self.model_id.clone(), temperature: self.temperature, token_budget: self.token_budget }
    }

    pub fn variant(&self) -> CalibrationVariant {
        match self.calibration {
            CalibrationKind::FixedStandard => CalibrationVariant::FixedStandard,
            CalibrationKind::FixedExample => CalibrationVariant::FixedExample,
            CalibrationKind::RandomExample => CalibrationVariant::RandomExample { seed: self.seed },
            CalibrationKind::SelfGeneratedExample => CalibrationVariant::SelfGeneratedExample,
            CalibrationKind::NoCalibration => CalibrationVariant::NoCalibration,
        }
    }

    pub fn enhance_config(&self) -> EnhanceConfig {
        EnhanceConfig {
            prompter: self.prompter(),
            failure_policy: match self.failure_policy {
                PolicyKind::SkipAndReport => FailurePolicy::SkipAndReport,
                PolicyKind::FailFast => FailurePolicy::FailFast,
            },
        }
    }

    pub fn tidy_config(&self) -> TidyConfig {
        TidyConfig {
            prompter: self.prompter(),
            task: self.task.clone(),
            threshold: self.threshold,
            k: self.k,
            variant: self.variant(),
            allow_local_fallback: self.allow_local_fallback,
        }
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        BenchmarkConfig { tidy: self.tidy_config(), enhance: self.enhance_config(), tau: self.tau, max_k: self.max_k }
    }
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = Path::new(p);
    match base {
        Some(base) if p.is_relative() => base.join(p),
        _ => p.to_path_buf(),
    }
}
