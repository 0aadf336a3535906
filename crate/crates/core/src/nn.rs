//! Layers and parameter plumbing shared by both models.
//!
//! Parameters live outside any tape as owned [`Tensor`]s. Each training
//! step binds them onto a fresh [`Tape`] as leaves, runs the forward and
//! backward passes there, then reads the leaf gradients back and applies
//! the update to the owned tensors. The tape is dropped afterwards, so no
//! graph state survives across steps.

use crate::graph::{GraphError, NodeId, Tape};
use crate::tensor::{matmul, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures surfaced by model construction, forward passes, and steps.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch size mismatch: {what}")]
    BatchMismatch { what: String },
    #[error("non-finite gradient; step aborted ({context})")]
    NonFiniteGrad { context: String },
    #[error("lambda_adv must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("{0}")]
    Config(String),
}

/// Fully connected layer; `w` is `[fan_in, fan_out]`, `b` is `[fan_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    /// Seeded fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// applied to weights and biases alike. Draw order is fixed: the full
    /// weight matrix row-major, then the bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            w: Tensor::new(vec![fan_in, fan_out], w).expect("sized"),
            b: Tensor::new(vec![fan_out], b).expect("sized"),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Multi-layer perceptron with tanh between layers. `activate_output`
/// decides whether the last layer gets tanh too (feature extractors and
/// gating networks) or stays linear (logit heads).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activate_output: bool,
}

impl Mlp {
    pub fn init(widths: &[usize], activate_output: bool, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|pair| Dense::init(pair[0], pair[1], rng))
            .collect();
        Self {
            layers,
            activate_output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("nonempty").fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Clones every parameter onto the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundDense {
                w: tape.leaf(l.w.clone()),
                b: tape.leaf(l.b.clone()),
            })
            .collect();
        BoundMlp {
            layers,
            activate_output: self.activate_output,
        }
    }

    /// Tape-free forward pass over frozen parameters (inference).
    pub fn forward_infer(&self, x: &Tensor) -> Tensor {
        let mut n = x.rows();
        let mut cur = x.data().to_vec();
        let mut width = x.cols();
        if x.shape().len() == 1 {
            n = 1;
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let h = layer.fan_out();
            let mut out = matmul(&cur, layer.w.data(), n, width, h);
            for row in out.chunks_exact_mut(h) {
                for (o, bias) in row.iter_mut().zip(layer.b.data()) {
                    *o += bias;
                }
            }
            if li + 1 < self.layers.len() || self.activate_output {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            cur = out;
            width = h;
        }
        Tensor::new(vec![n, width], cur).expect("sized")
    }

    /// `param += scale * delta` across all layers; `deltas` must follow the
    /// bind order (w then b per layer).
    pub fn apply_update(&mut self, deltas: &[Tensor], scale: f64) {
        assert_eq!(deltas.len(), self.layers.len() * 2, "delta count");
        for (layer, pair) in self.layers.iter_mut().zip(deltas.chunks_exact(2)) {
            layer.w.add_scaled(scale, &pair[0]).expect("w shape");
            layer.b.add_scaled(scale, &pair[1]).expect("b shape");
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(l.b.data());
        }
        out
    }

    /// Layer widths including the input: `[in, hidden.., out]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut widths = vec![self.in_dim()];
        widths.extend(self.layers.iter().map(Dense::fan_out));
        widths
    }

    /// Structural validation for parameters that did not come through
    /// [`Mlp::init`] — e.g. a deserialized checkpoint: every weight is a
    /// finite 2-d tensor with a matching bias, shapes agree with their
    /// stated sizes, and consecutive layers chain.
    pub fn check_consistent(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::Config("network has no layers".into()));
        }
        let mut expected_in: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            for (what, t, dims) in [("weight", &layer.w, 2), ("bias", &layer.b, 1)] {
                if t.shape().len() != dims {
                    return Err(ModelError::Config(format!(
                        "layer {i} {what} has shape {:?}, expected {dims}-d",
                        t.shape()
                    )));
                }
                if t.shape().iter().product::<usize>() != t.data().len() {
                    return Err(ModelError::Config(format!(
                        "layer {i} {what} shape {:?} does not match its {} values",
                        t.shape(),
                        t.data().len()
                    )));
                }
                if !t.all_finite() {
                    return Err(ModelError::Config(format!(
                        "layer {i} {what} contains non-finite values"
                    )));
                }
            }
            if layer.b.shape()[0] != layer.fan_out() {
                return Err(ModelError::Config(format!(
                    "layer {i} bias width {} does not match fan-out {}",
                    layer.b.shape()[0],
                    layer.fan_out()
                )));
            }
            if let Some(prev_out) = expected_in {
                if layer.fan_in() != prev_out {
                    return Err(ModelError::Config(format!(
                        "layer {i} fan-in {} does not chain with previous fan-out {prev_out}",
                        layer.fan_in()
                    )));
                }
            }
            expected_in = Some(layer.fan_out());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub w: NodeId,
    pub b: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundDense>,
    activate_output: bool,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, GraphError> {
        let mut cur = x;
        for (li, layer) in self.layers.iter().enumerate() {
            cur = tape.affine(cur, layer.w, layer.b)?;
            if li + 1 < self.layers.len() || self.activate_output {
                cur = tape.tanh(cur);
            }
        }
        Ok(cur)
    }

    /// Gradients accumulated on the bound leaves, in bind order.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(tape.grad(l.w).clone());
            out.push(tape.grad(l.b).clone());
        }
        out
    }

    pub fn flat_grads(&self, tape: &Tape) -> Vec<f64> {
        self.grads(tape)
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Row-wise softmax over logits (no graph involvement).
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, k) = (logits.rows(), logits.cols());
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out[i * k + j] = e;
            denom += e;
        }
        for o in &mut out[i * k..(i + 1) * k] {
            *o /= denom;
        }
    }
    Tensor::new(vec![n, k], out).expect("sized")
}

/// Index of the row maximum; ties resolve to the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
