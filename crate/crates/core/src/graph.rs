//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a [`Node`] holding the forward
//! value, a gradient slot of the same shape, and enough context to replay
//! the local vector-Jacobian product. Nodes are appended in creation
//! order, so walking the tape backwards from the loss index is already a
//! reverse topological order and visits each node exactly once.
//!
//! Gradients accumulate: [`Tape::backward`] adds into each node's `grad`,
//! and [`Tape::zero_grads`] must be called between steps.

use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        row: usize,
    },
    #[error("cross-entropy over a batch with no labeled rows")]
    NoLabeledRows,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("similarity kernel rejected: {reason}")]
    BadKernel { reason: String },
    #[error("gate-open surrogate needs sigma > 0, got {sigma}; at sigma = 0 use the exact count (non-differentiable)")]
    NonPositiveSigma { sigma: f64 },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Reversal-layer backward rule: identity forward, `-lambda * g` backward.
pub fn grl_backward(upstream: &Tensor, lambda_adv: f64) -> Tensor {
    let data = upstream.data().iter().map(|g| -lambda_adv * g).collect();
    Tensor::new(upstream.shape().to_vec(), data).expect("same shape")
}

/// Handle into a [`Tape`]; cheap to copy, valid only for the tape that
/// issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// x[N,D] . W[D,H] + b[H]
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Tanh { x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Elementwise (Hadamard) product.
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    /// max(0, min(1, x)); subgradient 1 on the closed interval [0,1] of
    /// the pre-activation, 0 outside.
    Clamp01 { x: NodeId },
    SumAll { x: NodeId },
    /// Mean over labeled rows of -log softmax(logits)[label]; `None`
    /// labels contribute nothing (semi-supervised batches).
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<Option<usize>>,
        /// Cached row-softmax of the logits, reused by the backward rule.
        probs: Tensor,
    },
    /// Gradient reversal: forward identity, backward -lambda.
    Grl { x: NodeId, lambda: f64 },
    /// Mean over rows of sum_d Phi((mu_d + 0.5) / sigma): per-sample
    /// expected count of open stochastic gates.
    GateOpenProb { mu: NodeId, sigma: f64 },
    /// sum over ordered pairs (i,j) of K[i,j] * ||z_i - z_j||^2.
    PairSim { z: NodeId, kernel: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

/// Records a forward computation and replays it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// `x[N,D] . W[D,H] + b[H]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, d) = (xv.rows(), xv.cols());
        if wv.shape().len() != 2 || wv.shape()[0] != d {
            return Err(GraphError::ShapeMismatch {
                op: "affine(x.W)",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let h = wv.shape()[1];
        if bv.len() != h {
            return Err(GraphError::ShapeMismatch {
                op: "affine(+b)",
                lhs: wv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = matmul(xv.data(), wv.data(), n, d, h);
        for row in out.chunks_exact_mut(h) {
            for (o, bias) in row.iter_mut().zip(bv.data()) {
                *o += bias;
            }
        }
        let value = Tensor::new(vec![n, h], out).expect("sized above");
        Ok(self.push(value, Op::Affine { x, w, b }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.map_unary(x, f64::tanh);
        self.push(value, Op::Tanh { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip_binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    /// Elementwise product (the Hadamard mask in the gated forward pass).
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip_binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.map_unary(x, |v| factor * v);
        self.push(value, Op::Scale { x, factor })
    }

    /// Hard-sigmoid clamp `max(0, min(1, x))`.
    pub fn clamp01(&mut self, x: NodeId) -> NodeId {
        let value = self.map_unary(x, |v| v.clamp(0.0, 1.0));
        self.push(value, Op::Clamp01 { x })
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    /// Identity forward; backward multiplies the upstream gradient by
    /// `-lambda` on its way to the parent (see [`grl_backward`]).
    pub fn grl(&mut self, x: NodeId, lambda: f64) -> NodeId {
        let value = self.value(x).clone();
        self.push(value, Op::Grl { x, lambda })
    }

    /// Mean over labeled rows of the softmax cross-entropy.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, GraphError> {
        let wrapped: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
        self.softmax_cross_entropy_masked(logits, &wrapped)
    }

    /// Cross-entropy where `None` rows are excluded from the mean (their
    /// logit gradients are exactly zero).
    pub fn softmax_cross_entropy_masked(
        &mut self,
        logits: NodeId,
        labels: &[Option<usize>],
    ) -> Result<NodeId, GraphError> {
        let lv = self.value(logits);
        let (n, k) = (lv.rows(), lv.cols());
        if labels.len() != n {
            return Err(GraphError::ShapeMismatch {
                op: "softmax_cross_entropy(labels)",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let labeled = labels.iter().flatten().count();
        if labeled == 0 {
            return Err(GraphError::NoLabeledRows);
        }
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (row, label) in labels.iter().enumerate() {
            let logit_row = lv.row(row);
            // Max-shifted softmax for overflow safety.
            let m = logit_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &v) in logit_row.iter().enumerate() {
                let e = (v - m).exp();
                probs[row * k + j] = e;
                denom += e;
            }
            for p in &mut probs[row * k..(row + 1) * k] {
                *p /= denom;
            }
            if let Some(label) = *label {
                if label >= k {
                    return Err(GraphError::LabelOutOfRange {
                        label,
                        classes: k,
                        row,
                    });
                }
                loss -= probs[row * k + label].ln();
            }
        }
        loss /= labeled as f64;
        if !loss.is_finite() {
            return Err(GraphError::NonFinite {
                op: "softmax_cross_entropy",
            });
        }
        let probs = Tensor::new(vec![n, k], probs).expect("sized above");
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Differentiable surrogate for the open-gate count: per sample,
    /// `sum_d Phi((mu_d + 0.5) / sigma)` — the expected number of gates the
    /// noisy threshold leaves nonzero — averaged over the batch rows.
    pub fn expected_open_gates(&mut self, mu: NodeId, sigma: f64) -> Result<NodeId, GraphError> {
        if sigma <= 0.0 {
            return Err(GraphError::NonPositiveSigma { sigma });
        }
        let mv = self.value(mu);
        let rows = mv.rows() as f64;
        let total: f64 = mv
            .data()
            .iter()
            .map(|&m| normal_cdf((m + 0.5) / sigma))
            .sum();
        let value = total / rows;
        if !value.is_finite() {
            return Err(GraphError::NonFinite {
                op: "expected_open_gates",
            });
        }
        Ok(self.push(Tensor::scalar(value), Op::GateOpenProb { mu, sigma }))
    }

    /// `sum_{i,j} K[i,j] * ||z_i - z_j||^2` over ordered pairs. The kernel
    /// must be square (N x N), symmetric, and nonnegative — the symmetric
    /// double-count is part of the fixed convention.
    pub fn similarity_penalty(&mut self, z: NodeId, kernel: &Tensor) -> Result<NodeId, GraphError> {
        let zv = self.value(z);
        let n = zv.rows();
        validate_kernel(kernel, n)?;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let kij = kernel.data()[i * n + j];
                if kij == 0.0 {
                    continue;
                }
                let dist2: f64 = zv
                    .row(i)
                    .iter()
                    .zip(zv.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                total += kij * dist2;
            }
        }
        if !total.is_finite() {
            return Err(GraphError::NonFinite {
                op: "similarity_penalty",
            });
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::PairSim {
                z,
                kernel: kernel.clone(),
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Adds `dloss/dnode` into every
    /// reachable node's `grad`; unreached nodes are untouched. Repeated
    /// calls accumulate.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), GraphError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(GraphError::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        // Adjoints live outside the nodes so a sweep never mixes with
        // gradients accumulated by earlier backward calls.
        let mut adjoints: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adjoints[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(upstream) = adjoints[i].take() else {
                continue;
            };
            if !upstream.all_zero() {
                self.propagate(i, &upstream, &mut adjoints);
            }
            self.nodes[i]
                .grad
                .add_scaled(1.0, &upstream)
                .expect("grad shape tracks value shape");
        }
        Ok(())
    }

    /// Applies node `i`'s vector-Jacobian product, adding each parent
    /// contribution into `adjoints`.
    fn propagate(&self, i: usize, up: &Tensor, adjoints: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let (n, d) = (xv.rows(), xv.cols());
                let h = wv.shape()[1];
                let dx = matmul_nt(up.data(), wv.data(), n, h, d);
                let dw = matmul_tn(xv.data(), up.data(), n, d, h);
                let mut db = vec![0.0; h];
                for row in up.data().chunks_exact(h) {
                    for (acc, &g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                add_into(adjoints, x.0, Tensor::new(vec![n, d], dx).expect("sized"));
                add_into(adjoints, w.0, Tensor::new(vec![d, h], dw).expect("sized"));
                add_into(adjoints, b.0, Tensor::new(vec![h], db).expect("sized"));
            }
            Op::Tanh { x } => {
                let y = &self.nodes[i].value;
                let data = up
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, t)| g * (1.0 - t * t))
                    .collect();
                add_into(adjoints, x.0, same_shape(y, data));
            }
            Op::Add { a, b } => {
                add_into(adjoints, a.0, up.clone());
                add_into(adjoints, b.0, up.clone());
            }
            Op::Mul { a, b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let da = up.data().iter().zip(bv.data()).map(|(g, v)| g * v).collect();
                let db = up.data().iter().zip(av.data()).map(|(g, v)| g * v).collect();
                add_into(adjoints, a.0, same_shape(av, da));
                add_into(adjoints, b.0, same_shape(bv, db));
            }
            Op::Scale { x, factor } => {
                let data = up.data().iter().map(|g| factor * g).collect();
                add_into(adjoints, x.0, same_shape(up, data));
            }
            Op::Clamp01 { x } => {
                let pre = &self.nodes[x.0].value;
                // Pass-through on the closed interval: the boundary points
                // take the interior subgradient 1.
                let data = up
                    .data()
                    .iter()
                    .zip(pre.data())
                    .map(|(g, &p)| if (0.0..=1.0).contains(&p) { *g } else { 0.0 })
                    .collect();
                add_into(adjoints, x.0, same_shape(pre, data));
            }
            Op::SumAll { x } => {
                let xv = &self.nodes[x.0].value;
                add_into(adjoints, x.0, Tensor::filled(xv.shape(), up.item()));
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let g = up.item();
                let k = probs.cols();
                let labeled = labels.iter().flatten().count() as f64;
                let mut data = vec![0.0; probs.len()];
                for (row, label) in labels.iter().enumerate() {
                    let Some(label) = *label else { continue };
                    for j in 0..k {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        data[row * k + j] = g * (probs.data()[row * k + j] - onehot) / labeled;
                    }
                }
                add_into(adjoints, logits.0, same_shape(probs, data));
            }
            Op::Grl { x, lambda } => {
                add_into(adjoints, x.0, grl_backward(up, *lambda));
            }
            Op::GateOpenProb { mu, sigma } => {
                let mv = &self.nodes[mu.0].value;
                let g = up.item() / (mv.rows() as f64 * sigma);
                let data = mv
                    .data()
                    .iter()
                    .map(|&m| g * normal_pdf((m + 0.5) / sigma))
                    .collect();
                add_into(adjoints, mu.0, same_shape(mv, data));
            }
            Op::PairSim { z, kernel } => {
                let zv = &self.nodes[z.0].value;
                let (n, d) = (zv.rows(), zv.cols());
                let g = up.item();
                let mut data = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..n {
                        let w = kernel.data()[i * n + j] + kernel.data()[j * n + i];
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            let diff = zv.data()[i * d + c] - zv.data()[j * d + c];
                            data[i * d + c] += g * 2.0 * w * diff;
                        }
                    }
                }
                add_into(adjoints, z.0, same_shape(zv, data));
            }
        }
    }

    fn map_unary(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        same_shape(xv, data)
    }

    fn zip_binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(GraphError::ShapeMismatch {
                op: name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = same_shape(av, data);
        Ok(self.push(value, op(a, b)))
    }
}

fn validate_kernel(kernel: &Tensor, n: usize) -> Result<(), GraphError> {
    if kernel.shape() != [n, n] {
        return Err(GraphError::BadKernel {
            reason: format!("expected shape [{n}, {n}], got {:?}", kernel.shape()),
        });
    }
    for i in 0..n {
        for j in 0..n {
            let kij = kernel.data()[i * n + j];
            if kij < 0.0 {
                return Err(GraphError::BadKernel {
                    reason: format!("negative entry K[{i},{j}] = {kij}"),
                });
            }
            if kij != kernel.data()[j * n + i] {
                return Err(GraphError::BadKernel {
                    reason: format!("asymmetric at ({i},{j})"),
                });
            }
        }
    }
    Ok(())
}

fn same_shape(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("data produced elementwise")
}

fn add_into(adjoints: &mut [Option<Tensor>], idx: usize, delta: Tensor) {
    match &mut adjoints[idx] {
        Some(t) => t.add_scaled(1.0, &delta).expect("matching adjoint shapes"),
        slot @ None => *slot = Some(delta),
    }
}
