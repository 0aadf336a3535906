//! The fixed 41-column electrophysiology feature schema.

pub const FEATURE_COUNT: usize = 41;

/// Canonical column names: lowercase, spaces replaced by underscores,
/// hyphens kept. Noise-stimulus features first, then the long-square /
/// ramp / short-square sweep features and the passive properties.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "threshold_v_noise",
    "threshold_i_noise",
    "peak_v_noise",
    "peak_i_noise",
    "trough_v_noise",
    "trough_i_noise",
    "upstroke_ratio_noise",
    "upstroke_v_noise",
    "downstroke_ratio_noise",
    "downstroke_v_noise",
    "fast_trough_v_noise",
    "fast_trough_i_noise",
    "width_noise",
    "up-down_ratio_noise",
    "f-i_curve_slope_noise",
    "fast_trough_v_long_square",
    "fast_trough_v_ramp",
    "fast_trough_v_short_square",
    "input_resistance_mohm",
    "latency",
    "peak_v_long_square",
    "peak_v_ramp",
    "peak_v_short_square",
    "ri",
    "sag",
    "seal_gohm",
    "tau",
    "threshold_i_long_square",
    "threshold_i_ramp",
    "threshold_i_short_square",
    "threshold_v_long_square",
    "threshold_v_ramp",
    "threshold_v_short_square",
    "trough_v_long_square",
    "trough_v_ramp",
    "trough_v_short_square",
    "up-down_ratio_long_square",
    "up-down_ratio_ramp",
    "up-down_ratio_short_square",
    "vm_for_sag",
    "vrest",
];

/// Ordered feature-name list; the standard schema is the 41 canonical
/// columns, but reduced schemas (synthetic data, tests) are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    /// The canonical 41-feature schema.
    pub fn standard() -> Self {
        Self {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// A custom schema; names must be unique.
    pub fn custom(names: Vec<String>) -> Result<Self, super::DataError> {
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(super::DataError::Config(format!(
                    "duplicate feature name {n:?} in schema"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Stable digest of the ordered names; embedded in checkpoints so a
    /// model is never silently applied to differently-ordered columns.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for n in &self.names {
            hasher.update(n.as_bytes());
            hasher.update([0u8]);
        }
        // Hex-encode the 32-byte digest.
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
