//! Locally sparse subclass classifier.
//!
//! A gating network maps each sample to 41 gate means; stochastic
//! hard-sigmoid gates `z = clamp(0.5 + mu + eps)` (with `eps ~ N(0,
//! sigma^2)` during training, none at inference) mask the features before
//! a small prediction network classifies the 5 subclasses. The loss adds
//! two regularizers to the cross-entropy: `lambda1` times the expected
//! number of open gates — the differentiable stand-in for a gate count,
//! taken as `sum_d Phi((mu_d + 0.5)/sigma)` per sample — and `lambda2`
//! times a kernel-weighted sum of squared gate-row distances that pulls
//! similar samples toward similar feature selections.

use crate::graph::{normal_cdf, NodeId, Tape};
use crate::nn::{argmax, Mlp, ModelError};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Sample-pair weights for the similarity regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// No similarity coupling (the shipped default).
    #[default]
    Zero,
    /// Every ordered pair weighted 1.
    AllOnes,
    /// `K_ij = exp(-gamma * ||x_i - x_j||^2)` over the input features.
    Rbf { gamma: f64 },
}

impl KernelSpec {
    /// Materializes the N x N kernel for a batch; always symmetric and
    /// nonnegative by construction.
    pub fn build(&self, features: &Tensor) -> Tensor {
        let n = features.rows();
        match *self {
            KernelSpec::Zero => Tensor::zeros(&[n, n]),
            KernelSpec::AllOnes => Tensor::filled(&[n, n], 1.0),
            KernelSpec::Rbf { gamma } => {
                let mut data = vec![0.0; n * n];
                for i in 0..n {
                    data[i * n + i] = 1.0;
                    for j in i + 1..n {
                        let d2: f64 = features
                            .row(i)
                            .iter()
                            .zip(features.row(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        let k = (-gamma * d2).exp();
                        data[i * n + j] = k;
                        data[j * n + i] = k;
                    }
                }
                Tensor::new(vec![n, n], data).expect("sized")
            }
        }
    }
}

/// Loss weights and the gate noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LspinHyper {
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma: f64,
    #[serde(default)]
    pub kernel: KernelSpec,
}

impl LspinHyper {
    fn validate(&self) -> Result<(), ModelError> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.sigma < 0.0 {
            return Err(ModelError::Config(format!(
                "lambda1, lambda2, sigma must be nonnegative, got {self:?}"
            )));
        }
        if self.lambda1 > 0.0 && self.sigma == 0.0 {
            return Err(ModelError::Config(
                "the open-gate regularizer needs sigma > 0; with sigma = 0 the gate count has no usable gradient".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    Train,
    Infer,
}

/// Realizes gates from their means: `clamp(0.5 + mu + eps)`, with `eps`
/// drawn per element in train mode and zero in infer mode (or when
/// `sigma == 0`).
pub fn sample_gates_with(
    mu: &Tensor,
    sigma: f64,
    mode: GateMode,
    rng: &mut impl Rng,
) -> Tensor {
    let data = mu
        .data()
        .iter()
        .map(|&m| {
            let eps = match mode {
                GateMode::Train if sigma > 0.0 => sigma * rng.sample::<f64, _>(StandardNormal),
                _ => 0.0,
            };
            (0.5 + m + eps).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(mu.shape().to_vec(), data).expect("same shape")
}

/// Seeded convenience wrapper over [`sample_gates_with`].
pub fn sample_gates(mu: &Tensor, sigma: f64, mode: GateMode, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_gates_with(mu, sigma, mode, &mut rng)
}

/// Open-gate estimate (per sample, averaged over rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenGates {
    pub value: f64,
    /// False when `sigma == 0`: the value is then the exact count of
    /// `mu > -0.5` and carries no usable gradient.
    pub differentiable: bool,
}

/// Expected number of nonzero gates under the noisy threshold; the
/// differentiable surrogate the loss uses for the gate count. At
/// `sigma == 0` it degrades to the exact open count.
pub fn expected_open_gates(mu: &Tensor, sigma: f64) -> OpenGates {
    let rows = mu.rows() as f64;
    if sigma == 0.0 {
        let count = mu.data().iter().filter(|&&m| m > -0.5).count() as f64;
        OpenGates {
            value: count / rows,
            differentiable: false,
        }
    } else {
        let total: f64 = mu
            .data()
            .iter()
            .map(|&m| normal_cdf((m + 0.5) / sigma))
            .sum();
        OpenGates {
            value: total / rows,
            differentiable: true,
        }
    }
}

/// Fraction of strictly open gates in a realized gate matrix.
pub fn open_fraction(gates: &Tensor) -> f64 {
    gates.data().iter().filter(|&&z| z > 0.0).count() as f64 / gates.len() as f64
}

/// Loss components of one step, before and after weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LspinStepStats {
    pub cross_entropy: f64,
    /// Expected open gates per sample (unweighted surrogate value).
    pub open_gates: f64,
    /// Kernel similarity penalty (unweighted).
    pub similarity: f64,
    pub total: f64,
}

/// Gating network plus prediction network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LspinModel {
    /// psi: features -> gate means, tanh output so means sit in (-1, 1).
    pub gating: Mlp,
    /// f_theta: masked features -> subclass logits.
    pub predictor: Mlp,
}

impl LspinModel {
    pub fn init(
        gating_widths: &[usize],
        predictor_widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if gating_widths.len() < 2 || predictor_widths.len() < 2 {
            return Err(ModelError::Config(
                "gating and predictor each need at least input and output widths".into(),
            ));
        }
        let d = gating_widths[0];
        if *gating_widths.last().expect("nonempty") != d || predictor_widths[0] != d {
            return Err(ModelError::Config(format!(
                "widths must agree on the feature dimension: gating {gating_widths:?}, predictor {predictor_widths:?}"
            )));
        }
        Ok(Self {
            gating: Mlp::init(gating_widths, true, rng),
            predictor: Mlp::init(predictor_widths, false, rng),
        })
    }

    pub fn feature_width(&self) -> usize {
        self.gating.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.predictor.out_dim()
    }

    /// Gate means for a batch (frozen parameters).
    pub fn gate_mu(&self, features: &Tensor) -> Tensor {
        self.gating.forward_infer(features)
    }

    /// Inference-mode gate matrix: `clamp(0.5 + mu)`, deterministic.
    pub fn export_gate_matrix(&self, features: &Tensor) -> Tensor {
        let mu = self.gate_mu(features);
        let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in infer mode
        sample_gates_with(&mu, 0.0, GateMode::Infer, &mut rng)
    }

    /// Subclass logits for given features and realized gates.
    pub fn logits_with_gates(&self, features: &Tensor, gates: &Tensor) -> Tensor {
        let masked: Vec<f64> = features
            .data()
            .iter()
            .zip(gates.data())
            .map(|(x, z)| x * z)
            .collect();
        let masked = Tensor::new(features.shape().to_vec(), masked).expect("same shape");
        self.predictor.forward_infer(&masked)
    }

    /// Deterministic predictions (inference gates); ties toward the lower
    /// class index.
    pub fn predict(&self, features: &Tensor) -> Vec<usize> {
        let gates = self.export_gate_matrix(features);
        let logits = self.logits_with_gates(features, &gates);
        (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
    }

    /// Builds the full training loss on `tape` with the noise realization
    /// `eps` frozen by the caller (reparameterization: gradients flow
    /// through `mu`, not the draw). Returns the loss node and the bound
    /// parameter handles for gradient readback.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        labels: &[usize],
        hyper: &LspinHyper,
        eps: &Tensor,
    ) -> Result<LossGraph, ModelError> {
        hyper.validate()?;
        let n = features.rows();
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if labels.len() != n || eps.shape() != features.shape() {
            return Err(ModelError::BatchMismatch {
                what: format!(
                    "{n} feature rows, {} labels, noise shape {:?}",
                    labels.len(),
                    eps.shape()
                ),
            });
        }

        let gating = self.gating.bind(tape);
        let predictor = self.predictor.bind(tape);
        let x = tape.leaf(features.clone());
        let mu = gating.forward(tape, x)?;

        // Pre-activation 0.5 + mu + eps; the 0.5 offset and the frozen
        // draw enter as one constant tensor.
        let shifted_eps = {
            let data = eps.data().iter().map(|e| 0.5 + e).collect();
            Tensor::new(eps.shape().to_vec(), data).expect("same shape")
        };
        let offset = tape.leaf(shifted_eps);
        let pre = tape.add(mu, offset)?;
        let z = tape.clamp01(pre);

        let masked = tape.mul(x, z)?;
        let logits = predictor.forward(tape, masked)?;
        let ce = tape.softmax_cross_entropy(logits, labels)?;

        let mut total = ce;
        let mut open_value = expected_open_gates(tape.value(mu), hyper.sigma).value;
        if hyper.lambda1 > 0.0 {
            let open = tape.expected_open_gates(mu, hyper.sigma)?;
            open_value = tape.value(open).item();
            let weighted = tape.scale(open, hyper.lambda1);
            total = tape.add(total, weighted)?;
        }

        let mut similarity_value = 0.0;
        if hyper.lambda2 > 0.0 {
            let kernel = hyper.kernel.build(features);
            let sim = tape.similarity_penalty(z, &kernel)?;
            similarity_value = tape.value(sim).item();
            let weighted = tape.scale(sim, hyper.lambda2);
            total = tape.add(total, weighted)?;
        }

        Ok(LossGraph {
            total,
            gating,
            predictor,
            stats: LspinStepStats {
                cross_entropy: tape.value(ce).item(),
                open_gates: open_value,
                similarity: similarity_value,
                total: tape.value(total).item(),
            },
        })
    }

    /// One full-batch SGD step; draws one noise realization from `rng`.
    pub fn train_step(
        &mut self,
        features: &Tensor,
        labels: &[usize],
        hyper: &LspinHyper,
        lr: f64,
        rng: &mut impl Rng,
    ) -> Result<LspinStepStats, ModelError> {
        let eps = draw_noise(features.shape(), hyper.sigma, rng);
        let mut tape = Tape::new();
        let graph = self.loss_on_tape(&mut tape, features, labels, hyper, &eps)?;
        tape.backward(graph.total)?;

        let g_gating = graph.gating.grads(&tape);
        let g_pred = graph.predictor.grads(&tape);
        for (tensors, what) in [(&g_gating, "gating"), (&g_pred, "predictor")] {
            if !tensors.iter().all(Tensor::all_finite) {
                return Err(ModelError::NonFiniteGrad {
                    context: what.to_string(),
                });
            }
        }
        self.gating.apply_update(&g_gating, -lr);
        self.predictor.apply_update(&g_pred, -lr);
        Ok(graph.stats)
    }
}

/// Handles out of [`LspinModel::loss_on_tape`].
pub struct LossGraph {
    pub total: NodeId,
    pub gating: crate::nn::BoundMlp,
    pub predictor: crate::nn::BoundMlp,
    pub stats: LspinStepStats,
}

/// One Gaussian noise realization, `eps ~ N(0, sigma^2)` elementwise.
pub fn draw_noise(shape: &[usize], sigma: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}
