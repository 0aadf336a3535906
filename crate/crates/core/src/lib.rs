//! Electrophysiology-based neuron typing: a small differentiable-computation
//! core plus two classifiers built on it.
//!
//! The library has three layers:
//!
//! * [`tensor`] and [`graph`] — dense `f64` tensors and a tape-based
//!   reverse-mode autodiff engine with exactly the operations the models
//!   need (affine maps, tanh, elementwise arithmetic, the hard-sigmoid
//!   gate clamp, softmax cross-entropy, gradient reversal, a Gaussian
//!   gate-open-probability regularizer, and a pairwise similarity
//!   penalty).
//! * [`data`] — the 41-feature electrophysiology table schema, CSV
//!   ingestion, label mappings, deterministic stratified splitting,
//!   z-score normalization, and synthetic dataset generators.
//! * [`dann`], [`lspin`], [`train`], [`eval`] — the domain-adversarial
//!   excitatory/inhibitory classifier, the locally sparse subclass
//!   classifier with per-sample feature gates, the SGD training loop with
//!   checkpointing, and evaluation/reporting (confusion matrices, macro
//!   metrics, gate-pattern clustering).
//!
//! Everything is seeded explicitly and runs on plain `f64`; a run with a
//! fixed seed is bitwise reproducible.

pub mod checkpoint;
pub mod config;
pub mod dann;
pub mod data;
pub mod eval;
pub mod graph;
pub mod lspin;
pub mod nn;
pub mod tensor;
pub mod train;
