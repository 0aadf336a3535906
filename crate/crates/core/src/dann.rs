//! Domain-adversarial broad-type classifier.
//!
//! A shared feature extractor feeds two heads: a label classifier
//! (excitatory = 0 vs inhibitory = 1) and a domain classifier
//! (mouse = 0 vs human = 1). Training follows the saddle-point updates
//!
//! ```text
//! theta_f <- theta_f - lr * (dL_y/dtheta_f - lambda * dL_d/dtheta_f)
//! theta_y <- theta_y - lr * dL_y/dtheta_y
//! theta_d <- theta_d - lr * lambda * dL_d/dtheta_d
//! ```
//!
//! so the extractor is pushed to predict labels while *un*-predicting the
//! domain. Two interchangeable step implementations are provided: the
//! explicit three-rule form above, and a single backward pass through a
//! gradient-reversal node. They produce identical parameters and the test
//! suite holds them to that.

use crate::graph::Tape;
use crate::nn::{argmax, BoundMlp, Mlp, ModelError};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A training batch: normalized features, broad-type labels (optional per
/// sample — unlabeled rows still train the domain head), and a domain tag
/// for every sample.
#[derive(Debug, Clone)]
pub struct DannBatch {
    pub features: Tensor,
    pub labels: Vec<Option<usize>>,
    pub domains: Vec<usize>,
}

impl DannBatch {
    pub fn labeled(features: Tensor, labels: &[usize], domains: Vec<usize>) -> Self {
        Self {
            features,
            labels: labels.iter().map(|&l| Some(l)).collect(),
            domains,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let n = self.features.rows();
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if self.labels.len() != n || self.domains.len() != n {
            return Err(ModelError::BatchMismatch {
                what: format!(
                    "{n} feature rows, {} labels, {} domains",
                    self.labels.len(),
                    self.domains.len()
                ),
            });
        }
        Ok(())
    }
}

/// Which realization of the update rules a step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Two backward passes; each block updated by its own rule.
    ExplicitThreeRule,
    /// One backward pass through a reversal node on the domain branch.
    #[default]
    GradientReversal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub label_loss: f64,
    pub domain_loss: f64,
    /// The adversarial objective `label_loss - lambda * domain_loss`.
    pub objective: f64,
}

/// The three parameter blocks plus the adversarial weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DannModel {
    pub extractor: Mlp,
    pub label_head: Mlp,
    pub domain_head: Mlp,
    pub lambda_adv: f64,
}

/// Per-block gradients of the two losses at the current parameters,
/// flattened in bind order.
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub label_wrt_extractor: Vec<f64>,
    pub label_wrt_label_head: Vec<f64>,
    pub domain_wrt_extractor: Vec<f64>,
    pub domain_wrt_domain_head: Vec<f64>,
    pub label_loss: f64,
    pub domain_loss: f64,
}

impl DannModel {
    /// `widths` describes the extractor (first entry = feature width); both
    /// heads are linear maps from the representation to 2 logits.
    pub fn init(widths: &[usize], lambda_adv: f64, rng: &mut impl Rng) -> Result<Self, ModelError> {
        if lambda_adv < 0.0 {
            return Err(ModelError::NegativeLambda(lambda_adv));
        }
        if widths.len() < 2 {
            return Err(ModelError::Config(
                "extractor needs at least input and output widths".into(),
            ));
        }
        let repr = *widths.last().expect("nonempty");
        Ok(Self {
            extractor: Mlp::init(widths, true, rng),
            label_head: Mlp::init(&[repr, 2], false, rng),
            domain_head: Mlp::init(&[repr, 2], false, rng),
            lambda_adv,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.extractor.in_dim()
    }

    /// Frozen-parameter forward pass: label logits, domain logits, and the
    /// shared representation.
    pub fn forward_infer(&self, features: &Tensor) -> (Tensor, Tensor, Tensor) {
        let repr = self.extractor.forward_infer(features);
        let label_logits = self.label_head.forward_infer(&repr);
        let domain_logits = self.domain_head.forward_infer(&repr);
        (label_logits, domain_logits, repr)
    }

    /// Broad-type predictions; logit ties resolve to excitatory (0).
    pub fn predict_broad(&self, features: &Tensor) -> Vec<usize> {
        let (label_logits, _, _) = self.forward_infer(features);
        (0..label_logits.rows())
            .map(|i| argmax(label_logits.row(i)))
            .collect()
    }

    pub fn predict_domain(&self, features: &Tensor) -> Vec<usize> {
        let (_, domain_logits, _) = self.forward_infer(features);
        (0..domain_logits.rows())
            .map(|i| argmax(domain_logits.row(i)))
            .collect()
    }

    /// The adversarial objective `E = L_y - lambda * L_d` on a batch,
    /// without touching any gradient state.
    pub fn objective(&self, batch: &DannBatch) -> Result<StepStats, ModelError> {
        batch.validate()?;
        let (label_logits, domain_logits, _) = self.forward_infer(&batch.features);
        let mut tape = Tape::new();
        let ll = tape.leaf(label_logits);
        let ly = tape.softmax_cross_entropy_masked(ll, &batch.labels)?;
        let dl = tape.leaf(domain_logits);
        let ld = tape.softmax_cross_entropy(dl, &batch.domains)?;
        let (label_loss, domain_loss) = (tape.value(ly).item(), tape.value(ld).item());
        Ok(StepStats {
            label_loss,
            domain_loss,
            objective: label_loss - self.lambda_adv * domain_loss,
        })
    }

    /// Raw per-loss, per-block gradients (no lambda applied), plus both
    /// loss values. Used by the explicit step and by the saddle-direction
    /// diagnostics.
    pub fn block_grads(&self, batch: &DannBatch) -> Result<BlockGrads, ModelError> {
        let (grads, stats) = self.raw_grads(batch)?;
        Ok(BlockGrads {
            label_wrt_extractor: flatten(&grads.label_extractor),
            label_wrt_label_head: flatten(&grads.label_head),
            domain_wrt_extractor: flatten(&grads.domain_extractor),
            domain_wrt_domain_head: flatten(&grads.domain_head),
            label_loss: stats.label_loss,
            domain_loss: stats.domain_loss,
        })
    }

    /// One SGD step; both kinds realize the same update rules.
    pub fn train_step(
        &mut self,
        batch: &DannBatch,
        lr: f64,
        kind: StepKind,
    ) -> Result<StepStats, ModelError> {
        match kind {
            StepKind::ExplicitThreeRule => self.step_explicit(batch, lr),
            StepKind::GradientReversal => self.step_grl(batch, lr),
        }
    }

    fn step_explicit(&mut self, batch: &DannBatch, lr: f64) -> Result<StepStats, ModelError> {
        let (grads, stats) = self.raw_grads(batch)?;
        let lambda = self.lambda_adv;
        // theta_f: descend the label loss, ascend the domain loss.
        self.extractor.apply_update(&grads.label_extractor, -lr);
        self.extractor.apply_update(&grads.domain_extractor, lr * lambda);
        self.label_head.apply_update(&grads.label_head, -lr);
        self.domain_head.apply_update(&grads.domain_head, -lr * lambda);
        Ok(stats)
    }

    fn step_grl(&mut self, batch: &DannBatch, lr: f64) -> Result<StepStats, ModelError> {
        batch.validate()?;
        let lambda = self.lambda_adv;
        let mut tape = Tape::new();
        let (ext, lab, dom) = self.bind_all(&mut tape);
        let x = tape.leaf(batch.features.clone());
        let feat = ext.forward(&mut tape, x)?;

        let label_logits = lab.forward(&mut tape, feat)?;
        let ly = tape.softmax_cross_entropy_masked(label_logits, &batch.labels)?;

        // Reversal strength 1 with the domain loss scaled by lambda: one
        // backward pass then lands `-lambda * dL_d` on the extractor and
        // `+lambda * dL_d` on the domain head, exactly the per-rule lambda
        // factors under a uniform learning rate.
        let reversed = tape.grl(feat, 1.0);
        let domain_logits = dom.forward(&mut tape, reversed)?;
        let ld = tape.softmax_cross_entropy(domain_logits, &batch.domains)?;
        let ld_scaled = tape.scale(ld, lambda);
        let total = tape.add(ly, ld_scaled)?;

        tape.backward(total)?;
        let (ge, gl, gd) = (ext.grads(&tape), lab.grads(&tape), dom.grads(&tape));
        check_finite(&ge, "extractor")?;
        check_finite(&gl, "label head")?;
        check_finite(&gd, "domain head")?;
        self.extractor.apply_update(&ge, -lr);
        self.label_head.apply_update(&gl, -lr);
        self.domain_head.apply_update(&gd, -lr);

        let (label_loss, domain_loss) = (tape.value(ly).item(), tape.value(ld).item());
        Ok(StepStats {
            label_loss,
            domain_loss,
            objective: label_loss - lambda * domain_loss,
        })
    }

    fn bind_all(&self, tape: &mut Tape) -> (BoundMlp, BoundMlp, BoundMlp) {
        (
            self.extractor.bind(tape),
            self.label_head.bind(tape),
            self.domain_head.bind(tape),
        )
    }

    fn raw_grads(&self, batch: &DannBatch) -> Result<(RawGrads, StepStats), ModelError> {
        batch.validate()?;
        let mut tape = Tape::new();
        let (ext, lab, dom) = self.bind_all(&mut tape);
        let x = tape.leaf(batch.features.clone());
        let feat = ext.forward(&mut tape, x)?;
        let label_logits = lab.forward(&mut tape, feat)?;
        let ly = tape.softmax_cross_entropy_masked(label_logits, &batch.labels)?;
        let domain_logits = dom.forward(&mut tape, feat)?;
        let ld = tape.softmax_cross_entropy(domain_logits, &batch.domains)?;

        tape.backward(ly)?;
        let label_extractor = ext.grads(&tape);
        let label_head = lab.grads(&tape);

        tape.zero_grads();
        tape.backward(ld)?;
        let domain_extractor = ext.grads(&tape);
        let domain_head = dom.grads(&tape);

        let grads = RawGrads {
            label_extractor,
            label_head,
            domain_extractor,
            domain_head,
        };
        check_finite(&grads.label_extractor, "extractor (label loss)")?;
        check_finite(&grads.label_head, "label head")?;
        check_finite(&grads.domain_extractor, "extractor (domain loss)")?;
        check_finite(&grads.domain_head, "domain head")?;

        let (label_loss, domain_loss) = (tape.value(ly).item(), tape.value(ld).item());
        let stats = StepStats {
            label_loss,
            domain_loss,
            objective: label_loss - self.lambda_adv * domain_loss,
        };
        Ok((grads, stats))
    }
}

struct RawGrads {
    label_extractor: Vec<Tensor>,
    label_head: Vec<Tensor>,
    domain_extractor: Vec<Tensor>,
    domain_head: Vec<Tensor>,
}

fn flatten(tensors: &[Tensor]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn check_finite(tensors: &[Tensor], context: &str) -> Result<(), ModelError> {
    if tensors.iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(ModelError::NonFiniteGrad {
            context: context.to_string(),
        })
    }
}

/// Trains a fresh linear softmax probe on frozen representations and
/// returns its accuracy on the same rows — a separability measure for
/// checking how much domain information survives in the features.
pub fn domain_probe_accuracy(
    representations: &Tensor,
    domains: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<f64, ModelError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut probe = Mlp::init(&[representations.cols(), 2], false, &mut rng);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let bound = probe.bind(&mut tape);
        let x = tape.leaf(representations.clone());
        let logits = bound.forward(&mut tape, x)?;
        let loss = tape.softmax_cross_entropy(logits, domains)?;
        tape.backward(loss)?;
        let grads = bound.grads(&tape);
        check_finite(&grads, "domain probe")?;
        probe.apply_update(&grads, -lr);
    }
    let logits = probe.forward_infer(representations);
    let hits = (0..logits.rows())
        .filter(|&i| argmax(logits.row(i)) == domains[i])
        .count();
    Ok(hits as f64 / domains.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DannBatch {
        let features = Tensor::new(
            vec![n, d],
            (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let domains: Vec<usize> = (0..n).map(|i| (i / 2) % 2).collect();
        DannBatch::labeled(features, &labels, domains)
    }

    fn zeroed(widths: &[usize]) -> DannModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = DannModel::init(widths, 1.0, &mut rng).unwrap();
        for mlp in [&mut m.extractor, &mut m.label_head, &mut m.domain_head] {
            for layer in &mut mlp.layers {
                layer.w.fill(0.0);
                layer.b.fill(0.0);
            }
        }
        m
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let m = zeroed(&[3, 4, 2]);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let (label_logits, domain_logits, _) = m.forward_infer(&x);
        assert!(label_logits.all_zero());
        assert!(domain_logits.all_zero());
    }

    #[test]
    fn single_sample_hand_computed_forward() {
        let mut m = zeroed(&[2, 1]);
        m.extractor.layers[0].w = Tensor::new(vec![2, 1], vec![0.3, -0.2]).unwrap();
        m.extractor.layers[0].b = Tensor::new(vec![1], vec![0.1]).unwrap();
        m.label_head.layers[0].w = Tensor::new(vec![1, 2], vec![0.7, -0.4]).unwrap();
        m.label_head.layers[0].b = Tensor::new(vec![2], vec![0.05, -0.02]).unwrap();

        let x = Tensor::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let (label_logits, _, repr) = m.forward_infer(&x);

        let feat = (0.5 * 0.3 + -1.0 * -0.2 + 0.1_f64).tanh();
        assert!((repr.item() - feat).abs() < 1e-12);
        assert!((label_logits.data()[0] - (feat * 0.7 + 0.05)).abs() < 1e-12);
        assert!((label_logits.data()[1] - (feat * -0.4 - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn domain_head_cannot_touch_label_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = DannModel::init(&[3, 4, 2], 1.0, &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.2, 0.4, -0.1]]).unwrap();
        let (before, _, _) = m.forward_infer(&x);
        m.domain_head.layers[0].w.data_mut()[0] += 10.0;
        let (after, _, _) = m.forward_infer(&x);
        assert_eq!(before, after);
    }

    #[test]
    fn objective_composes_head_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = tiny_batch(&mut rng, 6, 3);
        let mut m = DannModel::init(&[3, 5, 4], 0.7, &mut rng).unwrap();
        let stats = m.objective(&batch).unwrap();

        // Componentwise oracle: each head's cross-entropy on its own.
        let (ll, dl, _) = m.forward_infer(&batch.features);
        let mut tape = Tape::new();
        let a = tape.leaf(ll);
        let ly = tape
            .softmax_cross_entropy(a, &[0, 1, 0, 1, 0, 1])
            .unwrap();
        let b = tape.leaf(dl);
        let ld = tape
            .softmax_cross_entropy(b, &batch.domains)
            .unwrap();
        let expect = tape.value(ly).item() - 0.7 * tape.value(ld).item();
        assert!((stats.objective - expect).abs() < 1e-12);

        // Uniform logits from a zeroed model: E = ln2 - lambda * ln2.
        let z = zeroed(&[3, 4, 2]);
        let stats = z.objective(&batch).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((stats.label_loss - ln2).abs() < 1e-12);
        assert!((stats.objective - (ln2 - 1.0 * ln2)).abs() < 1e-12);

        // lambda = 0 reduces the objective to the plain label loss.
        m.lambda_adv = 0.0;
        let stats = m.objective(&batch).unwrap();
        assert_eq!(stats.objective, stats.label_loss);
    }

    #[test]
    fn lambda_zero_freezes_domain_head_and_lr_zero_freezes_all() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = tiny_batch(&mut rng, 8, 3);
        for kind in [StepKind::ExplicitThreeRule, StepKind::GradientReversal] {
            let mut m = DannModel::init(&[3, 6, 4], 0.0, &mut rng).unwrap();
            let before = m.clone();
            m.train_step(&batch, 0.1, kind).unwrap();
            assert_eq!(
                m.domain_head, before.domain_head,
                "lambda=0 must freeze the domain head ({kind:?})"
            );
            assert_ne!(m.extractor, before.extractor);

            let mut m2 = before.clone();
            m2.train_step(&batch, 0.0, kind).unwrap();
            assert_eq!(m2, before, "lr=0 must be an exact no-op ({kind:?})");
        }
    }

    #[test]
    fn explicit_and_reversal_steps_agree_parameterwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let batch = tiny_batch(&mut rng, 6, 4);
        for lambda in [0.0, 0.5, 1.0] {
            let mut seed_rng = ChaCha8Rng::seed_from_u64(77);
            let m0 = DannModel::init(&[4, 5, 3], lambda, &mut seed_rng).unwrap();
            let mut a = m0.clone();
            let mut b = m0;
            let sa = a.train_step(&batch, 0.05, StepKind::ExplicitThreeRule).unwrap();
            let sb = b.train_step(&batch, 0.05, StepKind::GradientReversal).unwrap();
            assert!((sa.label_loss - sb.label_loss).abs() < 1e-15);
            assert!((sa.domain_loss - sb.domain_loss).abs() < 1e-15);
            for (x, y) in a.extractor.flatten().iter().zip(b.extractor.flatten().iter())
                .chain(a.label_head.flatten().iter().zip(b.label_head.flatten().iter()))
                .chain(a.domain_head.flatten().iter().zip(b.domain_head.flatten().iter()))
            {
                assert!(
                    (x - y).abs() < 1e-12,
                    "lambda {lambda}: parameter drift {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn label_head_update_is_independent_of_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let batch = tiny_batch(&mut rng, 6, 3);
        let mut init_rng = ChaCha8Rng::seed_from_u64(5);
        let m0 = DannModel::init(&[3, 4, 2], 0.0, &mut init_rng).unwrap();
        let mut a = m0.clone();
        let mut b = m0;
        b.lambda_adv = 1.0;
        a.train_step(&batch, 0.1, StepKind::ExplicitThreeRule).unwrap();
        b.train_step(&batch, 0.1, StepKind::ExplicitThreeRule).unwrap();
        assert_eq!(a.label_head, b.label_head);
    }

    #[test]
    fn predictions_follow_argmax_with_tie_toward_excitatory() {
        let mut m = zeroed(&[2, 2]);
        m.label_head.layers[0].w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // Representation is tanh(0) = 0 for zero extractor, so logits equal
        // the bias; steer with biases directly.
        m.label_head.layers[0].b = Tensor::new(vec![2], vec![2.0, 1.0]).unwrap();
        let x = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(m.predict_broad(&x), vec![0]);
        m.label_head.layers[0].b = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        assert_eq!(m.predict_broad(&x), vec![1]);
        m.label_head.layers[0].b = Tensor::new(vec![2], vec![1.5, 1.5]).unwrap();
        assert_eq!(m.predict_broad(&x), vec![0]);
    }

    #[test]
    fn probe_separates_shifted_representations() {
        // Two linearly separable clusters -> probe accuracy near 1;
        // identical clusters -> near chance.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        let mut domains = Vec::new();
        for i in 0..40 {
            let base = if i % 2 == 0 { 2.0 } else { -2.0 };
            rows.push(vec![
                base + rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ]);
            domains.push(i % 2);
        }
        let repr = Tensor::from_rows(&rows).unwrap();
        let acc = domain_probe_accuracy(&repr, &domains, 200, 0.5, 7).unwrap();
        assert!(acc > 0.95, "separable case: {acc}");

        let flat = Tensor::zeros(&[40, 2]);
        let acc = domain_probe_accuracy(&flat, &domains, 200, 0.5, 7).unwrap();
        assert!((acc - 0.5).abs() < 0.1, "degenerate case: {acc}");
    }
}
