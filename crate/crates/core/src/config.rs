//! Run configuration: TOML-backed descriptions of a training run.
//!
//! A [`TrainConfig`] names the model family, the optimizer constants, and a
//! model-specific block. Validation is all-at-once: [`TrainConfig::validate`]
//! collects every problem it can find instead of stopping at the first, so a
//! bad config is fixable in one edit round.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dann::StepKind;
use crate::lspin::{KernelSpec, LspinHyper};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("could not parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config:\n{0}")]
    Invalid(String),
}

/// Which model family a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dann,
    Lspin,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dann => "dann",
            ModelKind::Lspin => "lspin",
        }
    }
}

/// Metric used to pick the best checkpoint across epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    #[default]
    Accuracy,
    MacroF1,
}

/// LSPIN block: network widths plus the loss weights.
///
/// The defaults are the shipped reference configuration: a 41-feature
/// problem, prediction network 41-40-20-5, gating network 41-50-50-50-41,
/// lambda1 = 0.01047, sigma = 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LspinConfig {
    pub predictor_widths: Vec<usize>,
    pub gating_widths: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma: f64,
    #[serde(default)]
    pub kernel: KernelSpec,
}

impl Default for LspinConfig {
    fn default() -> Self {
        Self {
            predictor_widths: vec![41, 40, 20, 5],
            gating_widths: vec![41, 50, 50, 50, 41],
            lambda1: 0.01047,
            lambda2: 0.0,
            sigma: 0.5,
            kernel: KernelSpec::Zero,
        }
    }
}

impl LspinConfig {
    pub fn hyper(&self) -> LspinHyper {
        LspinHyper {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            sigma: self.sigma,
            kernel: self.kernel,
        }
    }
}

/// DANN block: extractor widths (the representation is the last entry)
/// and the adversarial weight. Both heads are linear on top of the
/// representation, so their widths are implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DannConfig {
    pub extractor_widths: Vec<usize>,
    pub lambda_adv: f64,
    #[serde(default)]
    pub step: StepKind,
}

impl Default for DannConfig {
    fn default() -> Self {
        Self {
            extractor_widths: vec![41, 64, 32],
            lambda_adv: 1.0,
            step: StepKind::GradientReversal,
        }
    }
}

/// One training run, as read from a TOML file.
///
/// `batch_size` absent (or 0 in a file is rejected; omit the key) means
/// full-batch. Exactly one of the `lspin` / `dann` blocks must be present
/// and it must match `model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub validation_metric: ValidationMetric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lspin: Option<LspinConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dann: Option<DannConfig>,
}

impl TrainConfig {
    /// The shipped LSPIN reference run: 1000 full-batch epochs of plain SGD
    /// at learning rate 0.0599.
    pub fn default_lspin(seed: u64) -> Self {
        Self {
            model: ModelKind::Lspin,
            seed,
            learning_rate: 0.0599,
            epochs: 1000,
            batch_size: None,
            validation_metric: ValidationMetric::Accuracy,
            lspin: Some(LspinConfig::default()),
            dann: None,
        }
    }

    /// The shipped DANN run: 300 epochs, minibatches of 64, learning rate
    /// 0.05, adversarial weight 1.0.
    pub fn default_dann(seed: u64) -> Self {
        Self {
            model: ModelKind::Dann,
            seed,
            learning_rate: 0.05,
            epochs: 300,
            batch_size: Some(64),
            validation_metric: ValidationMetric::Accuracy,
            lspin: None,
            dann: Some(DannConfig::default()),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: TrainConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();

        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            problems.push("batch_size 0 is meaningless; omit the key for full-batch".into());
        }

        match self.model {
            ModelKind::Lspin => {
                if self.dann.is_some() {
                    problems.push("model = \"lspin\" but a [dann] block is present".into());
                }
                match &self.lspin {
                    None => problems.push("model = \"lspin\" needs an [lspin] block".into()),
                    Some(l) => validate_lspin(l, &mut problems),
                }
            }
            ModelKind::Dann => {
                if self.lspin.is_some() {
                    problems.push("model = \"dann\" but an [lspin] block is present".into());
                }
                match &self.dann {
                    None => problems.push("model = \"dann\" needs a [dann] block".into()),
                    Some(d) => validate_dann(d, &mut problems),
                }
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            let mut text = String::new();
            for p in &problems {
                let _ = writeln!(text, "  - {p}");
            }
            Err(ConfigError::Invalid(text.trim_end().into()))
        }
    }

    /// The LSPIN block, after `validate` has established it exists.
    pub fn lspin_block(&self) -> &LspinConfig {
        self.lspin.as_ref().expect("validated lspin config")
    }

    pub fn dann_block(&self) -> &DannConfig {
        self.dann.as_ref().expect("validated dann config")
    }
}

fn validate_lspin(l: &LspinConfig, problems: &mut Vec<String>) {
    if l.predictor_widths.len() < 2 || l.gating_widths.len() < 2 {
        problems.push("lspin widths need at least an input and an output entry".into());
    } else {
        let d = l.gating_widths[0];
        if *l.gating_widths.last().expect("nonempty") != d {
            problems.push(format!(
                "gating network must map features to per-feature gates, got widths {:?}",
                l.gating_widths
            ));
        }
        if l.predictor_widths[0] != d {
            problems.push(format!(
                "predictor input width {} does not match gating feature width {d}",
                l.predictor_widths[0]
            ));
        }
        if *l.predictor_widths.last().expect("nonempty") < 2 {
            problems.push("predictor needs at least 2 output classes".into());
        }
    }
    if l.predictor_widths.contains(&0) || l.gating_widths.contains(&0) {
        problems.push("zero-width layers are not allowed".into());
    }
    if l.lambda1 < 0.0 || l.lambda2 < 0.0 || l.sigma < 0.0 {
        problems.push(format!(
            "lambda1, lambda2, sigma must be nonnegative, got {} / {} / {}",
            l.lambda1, l.lambda2, l.sigma
        ));
    }
    if l.lambda1 > 0.0 && l.sigma == 0.0 {
        problems.push("lambda1 > 0 requires sigma > 0 (the gate-count surrogate needs noise)".into());
    }
    if let KernelSpec::Rbf { gamma } = l.kernel {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            problems.push(format!("rbf kernel gamma must be finite and nonnegative, got {gamma}"));
        }
    }
}

fn validate_dann(d: &DannConfig, problems: &mut Vec<String>) {
    if d.extractor_widths.len() < 2 {
        problems.push("dann extractor needs at least input and representation widths".into());
    }
    if d.extractor_widths.contains(&0) {
        problems.push("zero-width layers are not allowed".into());
    }
    if !(d.lambda_adv >= 0.0 && d.lambda_adv.is_finite()) {
        problems.push(format!(
            "lambda_adv must be finite and nonnegative, got {}",
            d.lambda_adv
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lspin_carries_the_reference_constants() {
        let c = TrainConfig::default_lspin(7);
        assert_eq!(c.learning_rate, 0.0599);
        assert_eq!(c.epochs, 1000);
        assert_eq!(c.batch_size, None);
        let l = c.lspin_block();
        assert_eq!(l.lambda1, 0.01047);
        assert_eq!(l.lambda2, 0.0);
        assert_eq!(l.sigma, 0.5);
        assert_eq!(l.predictor_widths, vec![41, 40, 20, 5]);
        assert_eq!(l.gating_widths, vec![41, 50, 50, 50, 41]);
        c.validate().expect("default config is valid");
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        for config in [TrainConfig::default_lspin(3), TrainConfig::default_dann(4)] {
            let text = config.to_toml_string();
            let back = TrainConfig::from_toml_str(&text).expect("round-trips");
            assert_eq!(back, config);
        }
    }

    #[test]
    fn parses_a_handwritten_lspin_config() {
        let text = r#"
            model = "lspin"
            seed = 11
            learning_rate = 0.05
            epochs = 20
            batch_size = 32

            [lspin]
            predictor_widths = [6, 8, 3]
            gating_widths = [6, 10, 6]
            lambda1 = 0.1
            lambda2 = 0.01
            sigma = 0.5

            [lspin.kernel]
            type = "rbf"
            gamma = 0.25
        "#;
        let c = TrainConfig::from_toml_str(text).expect("parses");
        assert_eq!(c.batch_size, Some(32));
        assert_eq!(c.lspin_block().kernel, KernelSpec::Rbf { gamma: 0.25 });
    }

    #[test]
    fn rejects_zero_epochs_and_bad_rate_with_both_listed() {
        let mut c = TrainConfig::default_lspin(0);
        c.epochs = 0;
        c.learning_rate = -1.0;
        let err = c.validate().expect_err("invalid");
        let text = err.to_string();
        assert!(text.contains("epochs"), "missing epochs complaint: {text}");
        assert!(text.contains("learning_rate"), "missing rate complaint: {text}");
    }

    #[test]
    fn rejects_model_block_mismatches() {
        let mut c = TrainConfig::default_lspin(0);
        c.dann = Some(DannConfig::default());
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default_dann(0);
        c.dann = None;
        let err = c.validate().expect_err("missing block");
        assert!(err.to_string().contains("[dann]"));
    }

    #[test]
    fn rejects_gating_width_disagreement() {
        let mut c = TrainConfig::default_lspin(0);
        c.lspin.as_mut().unwrap().gating_widths = vec![41, 50, 40];
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_sigma_zero_with_open_gate_weight() {
        let mut c = TrainConfig::default_lspin(0);
        c.lspin.as_mut().unwrap().sigma = 0.0;
        let err = c.validate().expect_err("needs noise");
        assert!(err.to_string().contains("sigma"));
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"
            model = "lspin"
            seed = 1
            learning_rate = 0.1
            epochs = 5
            momentum = 0.9

            [lspin]
            predictor_widths = [4, 3]
            gating_widths = [4, 4]
            lambda1 = 0.0
            lambda2 = 0.0
            sigma = 0.5
        "#;
        let err = TrainConfig::from_toml_str(text).expect_err("unknown key");
        assert!(err.to_string().contains("momentum"), "got: {err}");
    }

    #[test]
    fn batch_size_zero_is_rejected() {
        let mut c = TrainConfig::default_dann(0);
        c.batch_size = Some(0);
        assert!(c.validate().is_err());
    }
}
