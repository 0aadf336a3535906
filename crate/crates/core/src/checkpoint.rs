//! Versioned model checkpoints.
//!
//! A checkpoint is self-contained JSON: the parameters, the normalization
//! statistics they expect, a digest of the feature schema they were trained
//! against, and a TOML snapshot of the run config for provenance. Loading
//! re-validates structure — shapes, chaining, finiteness — because the file
//! may not have come through this library's constructors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelKind;
use crate::data::NormStats;
use crate::train::TrainedModel;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("could not access checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("could not decode checkpoint {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint format v{found} is not supported (this build reads v{expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is structurally invalid: {0}")]
    Corrupt(String),
    #[error(
        "feature schema mismatch: checkpoint was trained on {checkpoint} but the data uses {data}"
    )]
    SchemaMismatch { checkpoint: String, data: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: TrainedModel,
    /// Digest of the ordered feature names the model consumes.
    pub schema_digest: String,
    /// Statistics for mapping raw features into model space.
    pub norm_stats: NormStats,
    /// The run config that produced this model, verbatim TOML.
    pub config_toml: String,
    /// 1-based epoch the parameters were taken from.
    pub epoch: usize,
    pub validation_metric: f64,
}

impl Checkpoint {
    pub fn new(
        model: TrainedModel,
        schema_digest: String,
        norm_stats: NormStats,
        config_toml: String,
        epoch: usize,
        validation_metric: f64,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model,
            schema_digest,
            norm_stats,
            config_toml,
            epoch,
            validation_metric,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let text = serde_json::to_string_pretty(self).map_err(|source| CheckpointError::Json {
            path: path.display().to_string(),
            source,
        })?;
        fs::write(path, text).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
                path: path.display().to_string(),
                source,
            })?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: checkpoint.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        checkpoint.validate()?;
        Ok(checkpoint)
    }

    /// Fails unless the data's schema digest matches the checkpoint's.
    pub fn require_schema(&self, data_digest: &str) -> Result<(), CheckpointError> {
        if self.schema_digest != data_digest {
            return Err(CheckpointError::SchemaMismatch {
                checkpoint: self.schema_digest.clone(),
                data: data_digest.to_string(),
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CheckpointError> {
        let corrupt = |m: String| CheckpointError::Corrupt(m);
        match &self.model {
            TrainedModel::Lspin(m) => {
                m.gating.check_consistent().map_err(|e| corrupt(e.to_string()))?;
                m.predictor
                    .check_consistent()
                    .map_err(|e| corrupt(e.to_string()))?;
                let d = m.gating.in_dim();
                if m.gating.out_dim() != d || m.predictor.in_dim() != d {
                    return Err(corrupt(format!(
                        "gating maps {d} -> {} features while the predictor reads {}",
                        m.gating.out_dim(),
                        m.predictor.in_dim()
                    )));
                }
                self.check_norm_width(d)?;
            }
            TrainedModel::Dann(m) => {
                for (name, mlp) in [
                    ("extractor", &m.extractor),
                    ("label head", &m.label_head),
                    ("domain head", &m.domain_head),
                ] {
                    mlp.check_consistent()
                        .map_err(|e| corrupt(format!("{name}: {e}")))?;
                }
                let repr = m.extractor.out_dim();
                for (name, mlp) in [("label", &m.label_head), ("domain", &m.domain_head)] {
                    if mlp.in_dim() != repr {
                        return Err(corrupt(format!(
                            "{name} head reads {} values but the representation has {repr}",
                            mlp.in_dim()
                        )));
                    }
                    if mlp.out_dim() != 2 {
                        return Err(corrupt(format!(
                            "{name} head is {}-way, expected 2",
                            mlp.out_dim()
                        )));
                    }
                }
                if !(m.lambda_adv.is_finite() && m.lambda_adv >= 0.0) {
                    return Err(corrupt(format!(
                        "adversarial weight {} is not a finite nonnegative number",
                        m.lambda_adv
                    )));
                }
                self.check_norm_width(m.feature_width())?;
            }
        }
        Ok(())
    }

    fn check_norm_width(&self, features: usize) -> Result<(), CheckpointError> {
        if self.norm_stats.width() != features {
            return Err(CheckpointError::Corrupt(format!(
                "normalization covers {} features but the model reads {features}",
                self.norm_stats.width()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::data::synth::{synth_blobs, BlobsSpec};
    use crate::data::{fit_normalize, DendriteMap, FeatureSchema};
    use crate::train::train;

    fn trained_fixture() -> (Checkpoint, crate::data::Dataset, Vec<usize>) {
        let spec = BlobsSpec {
            n: 45,
            classes: 3,
            d_informative: 3,
            d_noise: 4,
            separation: 4.0,
            seed: 8,
        };
        let (data, _) = synth_blobs(&spec).unwrap();
        let mut config = TrainConfig::default_lspin(5);
        config.epochs = 15;
        config.learning_rate = 0.1;
        let block = config.lspin.as_mut().unwrap();
        block.predictor_widths = vec![7, 8, 3];
        block.gating_widths = vec![7, 9, 7];

        let out = train(&config, &data, None, &DendriteMap::default()).unwrap();
        let stats = fit_normalize(&data).unwrap();
        let schema = FeatureSchema::standard();
        let checkpoint = Checkpoint::new(
            out.best_model,
            schema.digest(),
            stats,
            config.to_toml_string(),
            out.best_epoch,
            out.best_metric,
        );
        let labels = data.subclass_indices().unwrap();
        (checkpoint, data, labels)
    }

    #[test]
    fn save_load_round_trip_reproduces_predictions_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let (checkpoint, data, _) = trained_fixture();
        let path = dir.path().join("model.json");
        checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, checkpoint);

        let features = data.feature_matrix();
        let (TrainedModel::Lspin(a), TrainedModel::Lspin(b)) = (&checkpoint.model, &loaded.model)
        else {
            panic!("expected lspin models");
        };
        assert_eq!(a.predict(&features), b.predict(&features));
        assert_eq!(a.export_gate_matrix(&features), b.export_gate_matrix(&features));
    }

    #[test]
    fn round_trip_reproduces_the_validation_metric_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let (checkpoint, data, labels) = trained_fixture();
        let path = dir.path().join("model.json");
        checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        let TrainedModel::Lspin(model) = &loaded.model else {
            panic!("expected lspin");
        };
        let predictions = model.predict(&data.feature_matrix());
        let hits = predictions.iter().zip(&labels).filter(|(p, t)| p == t).count();
        let metric = hits as f64 / labels.len() as f64;
        assert_eq!(metric, loaded.validation_metric);
    }

    #[test]
    fn rejects_unknown_versions() {
        let dir = tempfile::tempdir().unwrap();
        let (checkpoint, _, _) = trained_fixture();
        let path = dir.path().join("model.json");
        checkpoint.save(&path).unwrap();
        let doctored = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("\"version\": 1", "\"version\": 99", 1);
        std::fs::write(&path, doctored).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Version {
                found: 99,
                expected: 1
            })
        ));
    }

    #[test]
    fn rejects_truncated_files_and_bad_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let (checkpoint, _, _) = trained_fixture();
        let path = dir.path().join("model.json");
        checkpoint.save(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Json { .. })
        ));

        // A shape edit that no longer matches the stored values.
        let doctored = text.replacen("7,", "6,", 1);
        assert_ne!(doctored, text, "fixture should contain a width of 7");
        std::fs::write(&path, doctored).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn schema_gate_names_both_digests() {
        let (checkpoint, _, _) = trained_fixture();
        checkpoint
            .require_schema(&FeatureSchema::standard().digest())
            .unwrap();
        let err = checkpoint.require_schema("deadbeef").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("deadbeef"));
        assert!(text.contains(&checkpoint.schema_digest));
    }

    #[test]
    fn dann_checkpoints_round_trip() {
        use crate::data::synth::{synth_shifted_domains, ShiftSpec};
        let dir = tempfile::tempdir().unwrap();
        let spec = ShiftSpec {
            n_source: 30,
            n_target: 30,
            d: 6,
            separation: 4.0,
            shift: 0.3,
            seed: 2,
        };
        let (data, _) = synth_shifted_domains(&spec).unwrap();
        let mut config = TrainConfig::default_dann(1);
        config.epochs = 10;
        config.batch_size = Some(20);
        config.dann.as_mut().unwrap().extractor_widths = vec![6, 8, 4];
        let out = train(&config, &data, None, &DendriteMap::default()).unwrap();
        let stats = fit_normalize(&data).unwrap();

        let checkpoint = Checkpoint::new(
            out.final_model.clone(),
            FeatureSchema::standard().digest(),
            stats,
            config.to_toml_string(),
            config.epochs,
            out.best_metric,
        );
        let path = dir.path().join("dann.json");
        checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.model, out.final_model);
        assert_eq!(loaded.kind(), ModelKind::Dann);
    }
}
