//! The optimization loop: plain SGD over epochs with a single seeded RNG.
//!
//! Draw order is fixed and documented: model initialization first, then per
//! epoch one shuffle of the training indices, then (LSPIN) one gate-noise
//! draw per batch. Everything stochastic flows from the one seed in the
//! config, which is what makes repeated runs bitwise-comparable.
//!
//! The best-validation model is retained alongside the final one; ties keep
//! the earliest epoch. When no validation split is supplied the metric is
//! computed on the training split instead — fine for smoke runs, but real
//! runs should hold data out.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ModelKind, TrainConfig, ValidationMetric};
use crate::dann::{DannBatch, DannModel};
use crate::data::{DataError, Dataset, DendriteMap};
use crate::eval::{macro_scores, ConfusionMatrix};
use crate::lspin::LspinModel;
use crate::nn::ModelError;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("could not write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
    /// Loss or gradients stopped being finite. The history covers every
    /// epoch that completed before the failure.
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: TrainHistory },
}

/// One completed epoch. Fields that only apply to one model family are
/// optional and left empty in the CSV for the other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_metric: f64,
    /// LSPIN: expected fraction of open gates per sample under the current
    /// gate distribution.
    pub open_gate_fraction: Option<f64>,
    /// DANN: mean per-batch domain cross-entropy.
    pub domain_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// First epoch achieving the maximum validation metric.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if best.is_none_or(|b| r.validation_metric > b.validation_metric) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }

    pub fn to_csv_string(&self) -> String {
        let mut text = String::from("epoch,train_loss,validation_metric,open_gate_fraction,domain_loss\n");
        for r in &self.records {
            let _ = write!(text, "{},{},{}", r.epoch, r.train_loss, r.validation_metric);
            match r.open_gate_fraction {
                Some(v) => {
                    let _ = write!(text, ",{v}");
                }
                None => text.push(','),
            }
            match r.domain_loss {
                Some(v) => {
                    let _ = writeln!(text, ",{v}");
                }
                None => text.push_str(",\n"),
            }
        }
        text
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_csv_string()).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// A model plus its family tag, the unit that checkpoints serialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Dann(DannModel),
    Lspin(LspinModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Dann(_) => ModelKind::Dann,
            TrainedModel::Lspin(_) => ModelKind::Lspin,
        }
    }

    pub fn feature_width(&self) -> usize {
        match self {
            TrainedModel::Dann(m) => m.feature_width(),
            TrainedModel::Lspin(m) => m.feature_width(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub final_model: TrainedModel,
    pub best_model: TrainedModel,
    /// 1-based epoch of `best_model`; earliest among ties.
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: TrainHistory,
}

/// `p <- p - lr * g` for every tensor pair.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<(), TrainError> {
    if params.len() != grads.len() {
        return Err(TrainError::Invalid(format!(
            "{} parameter tensors but {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TrainError::Invalid(format!(
                "parameter shape {:?} does not match gradient shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.all_finite() {
            return Err(TrainError::Invalid(
                "non-finite gradient in sgd_step".into(),
            ));
        }
        p.add_scaled(-lr, g).expect("shapes checked");
    }
    Ok(())
}

/// Runs the configured model on `train_set`, scoring each epoch on
/// `validation` (or on the training split when absent). The dendrite map is
/// only consulted for DANN broad-type labels.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    dendrites: &DendriteMap,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Invalid("training split is empty".into()));
    }
    let validation = validation.filter(|v| !v.is_empty());
    match config.model {
        ModelKind::Lspin => train_lspin(config, train_set, validation),
        ModelKind::Dann => train_dann(config, train_set, validation, dendrites),
    }
}

fn train_lspin(
    config: &TrainConfig,
    train_set: &Dataset,
    validation: Option<&Dataset>,
) -> Result<TrainOutput, TrainError> {
    let block = config.lspin_block();
    let features = train_set.feature_matrix();
    let labels = train_set.subclass_indices()?;
    check_feature_width(block.predictor_widths[0], features.cols())?;
    let classes = *block.predictor_widths.last().expect("validated");
    check_labels_in_range(&labels, classes)?;

    let (val_features, val_labels) = match validation {
        Some(v) => (v.feature_matrix(), v.subclass_indices()?),
        None => (features.clone(), labels.clone()),
    };
    check_labels_in_range(&val_labels, classes)?;

    let hyper = block.hyper();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = LspinModel::init(&block.gating_widths, &block.predictor_widths, &mut rng)?;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, LspinModel)> = None;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let width = features.cols() as f64;

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let batches = chunk(&indices, config.batch_size);

        let mut loss_sum = 0.0;
        let mut open_sum = 0.0;
        for batch in &batches {
            let bf = gather_rows(&features, batch);
            let bl: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let stats = match model.train_step(&bf, &bl, &hyper, config.learning_rate, &mut rng) {
                Ok(stats) => stats,
                Err(
                    ModelError::NonFiniteGrad { .. }
                    | ModelError::Graph(crate::graph::GraphError::NonFinite { .. }),
                ) => return Err(TrainError::Diverged { epoch, history }),
                Err(e) => return Err(e.into()),
            };
            loss_sum += stats.total;
            open_sum += stats.open_gates / width;
        }
        let train_loss = loss_sum / batches.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, history });
        }

        let predictions = model.predict(&val_features);
        let metric = compute_metric(config.validation_metric, &val_labels, &predictions, classes);
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            validation_metric: metric,
            open_gate_fraction: Some(open_sum / batches.len() as f64),
            domain_loss: None,
        });
        if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, model.clone()));
        }
    }

    let (best_metric, best_epoch, best_model) = best.expect("epochs >= 1");
    Ok(TrainOutput {
        final_model: TrainedModel::Lspin(model),
        best_model: TrainedModel::Lspin(best_model),
        best_epoch,
        best_metric,
        history,
    })
}

fn train_dann(
    config: &TrainConfig,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    dendrites: &DendriteMap,
) -> Result<TrainOutput, TrainError> {
    let block = config.dann_block();
    let features = train_set.feature_matrix();
    check_feature_width(block.extractor_widths[0], features.cols())?;
    let labels: Vec<Option<usize>> = train_set
        .samples
        .iter()
        .map(|s| s.broad_label(dendrites).map(usize::from))
        .collect();
    let domains = train_set.domain_indices()?;
    if labels.iter().all(Option::is_none) {
        return Err(TrainError::Invalid(
            "no training row has a broad-type label".into(),
        ));
    }

    // Validation scores the labeled rows only.
    let (val_features, val_labels) = {
        let source = validation.unwrap_or(train_set);
        let labeled: Vec<usize> = source
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.broad_label(dendrites).is_some())
            .map(|(i, _)| i)
            .collect();
        if labeled.is_empty() {
            return Err(TrainError::Invalid(
                "validation split has no broad-type labels".into(),
            ));
        }
        let subset = source.subset(&labeled);
        let y = subset.broad_labels(dendrites)?;
        (subset.feature_matrix(), y)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DannModel::init(&block.extractor_widths, block.lambda_adv, &mut rng)?;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, DannModel)> = None;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let mut batches = chunk(&indices, config.batch_size);
        ensure_labeled_batches(&mut batches, &labels)?;

        let mut label_sum = 0.0;
        let mut domain_sum = 0.0;
        for batch in &batches {
            let dann_batch = DannBatch {
                features: gather_rows(&features, batch),
                labels: batch.iter().map(|&i| labels[i]).collect(),
                domains: batch.iter().map(|&i| domains[i]).collect(),
            };
            let stats = match model.train_step(&dann_batch, config.learning_rate, block.step) {
                Ok(stats) => stats,
                Err(
                    ModelError::NonFiniteGrad { .. }
                    | ModelError::Graph(crate::graph::GraphError::NonFinite { .. }),
                ) => return Err(TrainError::Diverged { epoch, history }),
                Err(e) => return Err(e.into()),
            };
            label_sum += stats.label_loss;
            domain_sum += stats.domain_loss;
        }
        let train_loss = label_sum / batches.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, history });
        }

        let predictions = model.predict_broad(&val_features);
        let metric = compute_metric(config.validation_metric, &val_labels, &predictions, 2);
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            validation_metric: metric,
            open_gate_fraction: None,
            domain_loss: Some(domain_sum / batches.len() as f64),
        });
        if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, model.clone()));
        }
    }

    let (best_metric, best_epoch, best_model) = best.expect("epochs >= 1");
    Ok(TrainOutput {
        final_model: TrainedModel::Dann(model),
        best_model: TrainedModel::Dann(best_model),
        best_epoch,
        best_metric,
        history,
    })
}

fn check_feature_width(configured: usize, actual: usize) -> Result<(), TrainError> {
    if configured != actual {
        return Err(TrainError::Invalid(format!(
            "model expects {configured} input features but the data has {actual}"
        )));
    }
    Ok(())
}

fn check_labels_in_range(labels: &[usize], classes: usize) -> Result<(), TrainError> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(TrainError::Invalid(format!(
            "label {bad} is out of range for a {classes}-class predictor"
        )));
    }
    Ok(())
}

fn chunk(indices: &[usize], batch_size: Option<usize>) -> Vec<Vec<usize>> {
    let size = batch_size.unwrap_or(indices.len()).max(1);
    indices.chunks(size).map(<[usize]>::to_vec).collect()
}

fn gather_rows(matrix: &Tensor, indices: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| matrix.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).expect("uniform row widths")
}

/// The masked label loss needs at least one labeled row per batch; after a
/// shuffle this can fail when unlabeled target-domain rows dominate. Swap
/// labeled rows in from richer batches, deterministically, or reject the
/// schedule when there are fewer labeled rows than batches.
fn ensure_labeled_batches(
    batches: &mut [Vec<usize>],
    labels: &[Option<usize>],
) -> Result<(), TrainError> {
    let labeled_rows = labels.iter().flatten().count();
    if labeled_rows < batches.len() {
        return Err(TrainError::Invalid(format!(
            "{labeled_rows} labeled rows cannot cover {} batches; use a larger batch size",
            batches.len()
        )));
    }
    loop {
        let Some(bare) = batches
            .iter()
            .position(|b| b.iter().all(|&i| labels[i].is_none()))
        else {
            return Ok(());
        };
        let donor = batches
            .iter()
            .position(|b| b.iter().filter(|&&i| labels[i].is_some()).count() >= 2)
            .expect("labeled rows >= batches guarantees a donor");
        let from = batches[donor]
            .iter()
            .position(|&i| labels[i].is_some())
            .expect("donor has a labeled row");
        let to = batches[bare]
            .iter()
            .position(|&i| labels[i].is_none())
            .expect("bare batch is all unlabeled");
        let tmp = batches[donor][from];
        batches[donor][from] = batches[bare][to];
        batches[bare][to] = tmp;
    }
}

fn compute_metric(
    metric: ValidationMetric,
    y_true: &[usize],
    y_pred: &[usize],
    classes: usize,
) -> f64 {
    match metric {
        ValidationMetric::Accuracy => {
            let hits = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
            hits as f64 / y_true.len() as f64
        }
        ValidationMetric::MacroF1 => {
            let cm = ConfusionMatrix::from_labels(y_true, y_pred, classes)
                .expect("labels validated before training");
            macro_scores(&cm).expect("nonempty").macro_f1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LspinConfig;
    use crate::data::synth::{synth_blobs, synth_shifted_domains, BlobsSpec, ShiftSpec};
    use crate::data::SplitSpec;
    use crate::graph::Tape;
    use crate::nn::Mlp;
    use approx::assert_abs_diff_eq;

    fn tiny_lspin_config(seed: u64, epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::default_lspin(seed);
        c.epochs = epochs;
        c.learning_rate = 0.1;
        c.lspin = Some(LspinConfig {
            predictor_widths: vec![8, 10, 3],
            gating_widths: vec![8, 12, 8],
            lambda1: 0.05,
            lambda2: 0.0,
            sigma: 0.5,
            kernel: Default::default(),
        });
        c
    }

    fn tiny_blobs(n: usize, seed: u64) -> Dataset {
        let spec = BlobsSpec {
            n,
            classes: 3,
            d_informative: 3,
            d_noise: 5,
            separation: 4.0,
            seed,
        };
        synth_blobs(&spec).unwrap().0
    }

    #[test]
    fn sgd_step_examples() {
        let mut params = vec![Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()];
        let grads = vec![Tensor::new(vec![2], vec![2.0, 0.5]).unwrap()];

        let frozen = params.clone();
        sgd_step(&mut params, &grads, 0.0).unwrap();
        assert_eq!(params, frozen);

        sgd_step(&mut params, &grads, 0.1).unwrap();
        assert_abs_diff_eq!(params[0].data()[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(params[0].data()[1], -2.05, epsilon = 1e-15);

        // Two half-steps on a fixed gradient equal one full step.
        let mut once = vec![Tensor::new(vec![1], vec![3.0]).unwrap()];
        let mut twice = once.clone();
        let g = vec![Tensor::new(vec![1], vec![0.7]).unwrap()];
        sgd_step(&mut once, &g, 0.2).unwrap();
        sgd_step(&mut twice, &g, 0.1).unwrap();
        sgd_step(&mut twice, &g, 0.1).unwrap();
        assert_abs_diff_eq!(once[0].data()[0], twice[0].data()[0], epsilon = 1e-12);
    }

    #[test]
    fn sgd_step_rejects_non_finite_and_mismatched_grads() {
        let mut params = vec![Tensor::zeros(&[2])];
        let bad = vec![Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap()];
        assert!(sgd_step(&mut params, &bad, 0.1).is_err());
        let wrong = vec![Tensor::zeros(&[3])];
        assert!(sgd_step(&mut params, &wrong, 0.1).is_err());
    }

    #[test]
    fn convex_probe_loss_is_nonincreasing_under_small_steps() {
        // Single linear layer + cross-entropy is convex in the parameters;
        // with a small rate full-batch descent cannot go uphill.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mlp = Mlp::init(&[4, 3], false, &mut rng);
        let x = crate::lspin::draw_noise(&[12, 4], 1.0, &mut rng);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();

        let mut losses = Vec::new();
        for _ in 0..10 {
            let mut tape = Tape::new();
            let bound = mlp.bind(&mut tape);
            let xid = tape.leaf(x.clone());
            let logits = bound.forward(&mut tape, xid).unwrap();
            let loss = tape.softmax_cross_entropy(logits, &labels).unwrap();
            tape.backward(loss).unwrap();
            losses.push(tape.value(loss).item());
            let grads = bound.grads(&tape);
            mlp.apply_update(&grads, -0.05);
        }
        for pair in losses.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "loss increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn rejects_zero_epochs() {
        let mut config = tiny_lspin_config(0, 1);
        config.epochs = 0;
        let data = tiny_blobs(30, 1);
        assert!(matches!(
            train(&config, &data, None, &DendriteMap::default()),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn rejects_feature_width_mismatch() {
        let mut config = tiny_lspin_config(0, 2);
        config.lspin.as_mut().unwrap().predictor_widths[0] = 9;
        config.lspin.as_mut().unwrap().gating_widths = vec![9, 12, 9];
        let data = tiny_blobs(30, 1);
        let err = train(&config, &data, None, &DendriteMap::default()).unwrap_err();
        assert!(matches!(err, TrainError::Invalid(_)), "got {err:?}");
    }

    #[test]
    fn same_seed_reproduces_history_and_parameters_bitwise() {
        let config = tiny_lspin_config(9, 25);
        let data = tiny_blobs(48, 2);
        let a = train(&config, &data, None, &DendriteMap::default()).unwrap();
        let b = train(&config, &data, None, &DendriteMap::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.history.to_csv_string(), b.history.to_csv_string());

        let mut other = config.clone();
        other.seed = 10;
        let c = train(&other, &data, None, &DendriteMap::default()).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn best_checkpoint_is_the_earliest_argmax() {
        let config = tiny_lspin_config(3, 30);
        let data = tiny_blobs(48, 4);
        let out = train(&config, &data, None, &DendriteMap::default()).unwrap();
        let metrics: Vec<f64> = out
            .history
            .records
            .iter()
            .map(|r| r.validation_metric)
            .collect();
        let max = metrics.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_metric, max);
        let first = metrics.iter().position(|&m| m == max).unwrap() + 1;
        assert_eq!(out.best_epoch, first);
        assert_eq!(out.history.best_epoch(), Some(first));
    }

    #[test]
    fn divergent_rate_reports_the_failing_epoch_with_history() {
        let mut config = tiny_lspin_config(1, 50);
        config.learning_rate = 1e30;
        let data = tiny_blobs(30, 3);
        match train(&config, &data, None, &DendriteMap::default()) {
            Err(TrainError::Diverged { epoch, history }) => {
                assert!(epoch <= 50);
                assert_eq!(history.records.len(), epoch - 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn lspin_reaches_high_accuracy_on_separable_blobs_at_reference_defaults() {
        // 600 samples, 5 classes, 5 informative of 41 features, full
        // reference configuration. Held-out fifth as validation.
        let (data, _) = synth_blobs(&BlobsSpec::default()).unwrap();
        let strata = vec![String::from("all"); data.len()];
        let split = crate::data::stratified_split(
            &strata,
            &SplitSpec::Fractions {
                train_frac: 0.8,
                validation_frac: 0.0,
                test_frac: 0.2,
            },
            11,
        )
        .unwrap();
        let train_set = data.subset(&split.train);
        let test_set = data.subset(&split.test);
        let stats = crate::data::fit_normalize(&train_set).unwrap();
        let train_set = crate::data::apply_normalize(&train_set, &stats);
        let test_set = crate::data::apply_normalize(&test_set, &stats);

        let config = TrainConfig::default_lspin(0);
        let out = train(&config, &train_set, Some(&test_set), &DendriteMap::default()).unwrap();
        assert!(
            out.best_metric >= 0.95,
            "validation accuracy {} below 0.95",
            out.best_metric
        );
    }

    #[test]
    fn dann_trainer_runs_and_is_deterministic() {
        let spec = ShiftSpec {
            n_source: 40,
            n_target: 40,
            d: 8,
            separation: 4.0,
            shift: 0.5,
            seed: 6,
        };
        let (data, _) = synth_shifted_domains(&spec).unwrap();
        let mut config = TrainConfig::default_dann(2);
        config.epochs = 20;
        config.batch_size = Some(16);
        config.dann.as_mut().unwrap().extractor_widths = vec![8, 12, 6];

        let map = DendriteMap::default();
        let a = train(&config, &data, None, &map).unwrap();
        let b = train(&config, &data, None, &map).unwrap();
        assert_eq!(a.history, b.history);
        assert!(a.history.records.iter().all(|r| r.domain_loss.is_some()));
        assert!(a.best_metric > 0.5, "metric {}", a.best_metric);
    }

    #[test]
    fn scarce_labels_are_spread_across_batches() {
        // 5 labeled rows, 40 total, batches of 8: a shuffle will routinely
        // strand a batch without labels unless the trainer redistributes.
        let spec = ShiftSpec {
            n_source: 20,
            n_target: 20,
            d: 6,
            separation: 4.0,
            shift: 0.0,
            seed: 1,
        };
        let (mut data, _) = synth_shifted_domains(&spec).unwrap();
        for (i, sample) in data.samples.iter_mut().enumerate() {
            if i % 8 != 0 {
                sample.dendrite_type = None;
            }
        }
        let labeled = data
            .samples
            .iter()
            .filter(|s| s.dendrite_type.is_some())
            .count();
        assert_eq!(labeled, 5);

        let mut config = TrainConfig::default_dann(0);
        config.epochs = 3;
        config.batch_size = Some(8);
        config.dann.as_mut().unwrap().extractor_widths = vec![6, 8, 4];
        train(&config, &data, None, &DendriteMap::default()).unwrap();

        // With fewer labeled rows than batches the schedule is impossible.
        for sample in data.samples.iter_mut().skip(1) {
            sample.dendrite_type = None;
        }
        let err = train(&config, &data, None, &DendriteMap::default()).unwrap_err();
        assert!(matches!(err, TrainError::Invalid(_)), "got {err:?}");
    }

    #[test]
    fn history_csv_shape_and_empty_cells() {
        let mut history = TrainHistory::default();
        history.records.push(EpochRecord {
            epoch: 1,
            train_loss: 1.5,
            validation_metric: 0.5,
            open_gate_fraction: Some(0.75),
            domain_loss: None,
        });
        history.records.push(EpochRecord {
            epoch: 2,
            train_loss: 1.25,
            validation_metric: 0.625,
            open_gate_fraction: Some(0.5),
            domain_loss: None,
        });
        let text = history.to_csv_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "epoch,train_loss,validation_metric,open_gate_fraction,domain_loss"
        );
        assert_eq!(lines[1], "1,1.5,0.5,0.75,");
        assert_eq!(lines[2], "2,1.25,0.625,0.5,");
    }
}
