//! Evaluation: confusion matrices, macro-averaged scores, and the
//! interpretability artifacts (clustered gate matrices, heat maps).
//!
//! Everything here is a pure function of its inputs; file writers are kept
//! separate from score computation so the numeric paths stay trivially
//! testable. Output files carry a `# neurotype-report v1` first line so
//! downstream tooling can detect format drift.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const REPORT_VERSION: &str = "neurotype-report v1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label vectors disagree: {true_len} true vs {pred_len} predicted")]
    LengthMismatch { true_len: usize, pred_len: usize },
    #[error("label {value} at position {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        value: usize,
        classes: usize,
    },
    #[error("confusion matrix needs at least one class")]
    EmptyMatrix,
    #[error("confusion matrix has no counts; nothing to score")]
    AllZero,
    #[error("{what} must be finite")]
    NonFinite { what: String },
    #[error("could not write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("could not parse metrics file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("could not encode image {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{0}")]
    BadInput(String),
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_labels(
        y_true: &[usize],
        y_pred: &[usize],
        classes: usize,
    ) -> Result<Self, EvalError> {
        if classes == 0 {
            return Err(EvalError::EmptyMatrix);
        }
        if y_true.len() != y_pred.len() {
            return Err(EvalError::LengthMismatch {
                true_len: y_true.len(),
                pred_len: y_pred.len(),
            });
        }
        let mut counts = vec![0usize; classes * classes];
        for (index, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            for value in [t, p] {
                if value >= classes {
                    return Err(EvalError::LabelOutOfRange {
                        index,
                        value,
                        classes,
                    });
                }
            }
            counts[t * classes + p] += 1;
        }
        Ok(Self { classes, counts })
    }

    /// Builds directly from row-major counts (row = true class).
    pub fn from_counts(classes: usize, counts: Vec<usize>) -> Result<Self, EvalError> {
        if classes == 0 {
            return Err(EvalError::EmptyMatrix);
        }
        if counts.len() != classes * classes {
            return Err(EvalError::BadInput(format!(
                "expected {} counts for {classes} classes, got {}",
                classes * classes,
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> usize {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    /// `trace / total`; NaN when the matrix is empty of counts.
    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn row_support(&self, true_class: usize) -> usize {
        (0..self.classes).map(|p| self.count(true_class, p)).sum()
    }

    /// Each row divided by its sum; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|t| {
                let support = self.row_support(t);
                (0..self.classes)
                    .map(|p| {
                        if support == 0 {
                            0.0
                        } else {
                            self.count(t, p) as f64 / support as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Diagonal of the row-normalized matrix: per-class recall.
    pub fn normalized_diagonal(&self) -> Vec<f64> {
        self.row_normalized()
            .iter()
            .enumerate()
            .map(|(c, row)| row[c])
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    /// Classes with no true samples; they contribute zeros to the macro
    /// means rather than being dropped, so macro scores stay comparable
    /// across runs.
    pub zero_support: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

/// Per-class precision/recall/F1 and their unweighted means.
///
/// A class with `TP = 0` scores 0 across the board — never NaN — and a
/// class that never occurs as a true label is additionally listed in
/// `zero_support`.
pub fn macro_scores(cm: &ConfusionMatrix) -> Result<EvalReport, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::AllZero);
    }
    let k = cm.classes();
    let mut per_class = Vec::with_capacity(k);
    let mut zero_support = Vec::new();
    for c in 0..k {
        let tp = cm.count(c, c);
        let support = cm.row_support(c);
        let predicted: usize = (0..k).map(|t| cm.count(t, c)).sum();
        let precision = ratio_or_zero(tp, predicted);
        let recall = ratio_or_zero(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if support == 0 {
            zero_support.push(c);
        }
        per_class.push(ClassScores {
            precision,
            recall,
            f1,
            support,
        });
    }
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(EvalReport {
        accuracy: cm.accuracy(),
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
        zero_support,
        confusion: cm.clone(),
    })
}

fn ratio_or_zero(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Scores of one designated positive class, for binary summaries.
pub fn binary_scores(cm: &ConfusionMatrix, positive: usize) -> Result<ClassScores, EvalError> {
    if positive >= cm.classes() {
        return Err(EvalError::LabelOutOfRange {
            index: 0,
            value: positive,
            classes: cm.classes(),
        });
    }
    Ok(macro_scores(cm)?.per_class[positive])
}

// ---------------------------------------------------------------------------
// Hierarchical clustering of gate rows
// ---------------------------------------------------------------------------

/// One agglomeration step. `left` and `right` are cluster ids: leaves are
/// `0..n`, and merge `t` creates id `n + t`. `left` is always the older
/// (smaller) id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
    /// Leaf ordering for heat-map rendering: a depth-first walk of the
    /// final tree that emits, at every split, the subtree containing the
    /// lowest original row index first.
    pub order: Vec<usize>,
}

/// Agglomerative clustering with Euclidean distance and average linkage
/// (cluster distance = mean pairwise row distance, maintained by the
/// Lance-Williams update). Deterministic: distance ties pick the pair of
/// earliest-created clusters, which at the leaf level means lower original
/// index first.
#[allow(clippy::needless_range_loop)] // triangular index scan over a matrix
pub fn cluster_gate_rows(rows: &Tensor) -> Dendrogram {
    let n = rows.rows();
    if n < 2 {
        return Dendrogram {
            leaves: n,
            merges: Vec::new(),
            order: (0..n).collect(),
        };
    }

    // Active clusters in creation order; dist[i][j] aligned with `active`.
    let mut active: Vec<(usize, usize)> = (0..n).map(|id| (id, 1)).collect(); // (id, size)
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| euclidean(rows.row(i), rows.row(j)))
                .collect()
        })
        .collect();
    let mut children: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut min_leaf: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    while active.len() > 1 {
        let (mut bi, mut bj, mut best) = (0, 1, f64::INFINITY);
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                if dist[i][j] < best {
                    best = dist[i][j];
                    bi = i;
                    bj = j;
                }
            }
        }

        let (left_id, left_size) = active[bi];
        let (right_id, right_size) = active[bj];
        let merged_size = left_size + right_size;
        let merged_id = n + merges.len();
        merges.push(Merge {
            left: left_id,
            right: right_id,
            distance: best,
            size: merged_size,
        });
        children.push(Some((left_id, right_id)));
        min_leaf.push(min_leaf[left_id].min(min_leaf[right_id]));

        // Average linkage: d(k, i∪j) = (|i|·d(k,i) + |j|·d(k,j)) / |i∪j|.
        let mut new_row = Vec::with_capacity(active.len() - 1);
        for k in 0..active.len() {
            if k == bi || k == bj {
                continue;
            }
            let (_, size_k) = active[k];
            let _ = size_k;
            let d = (left_size as f64 * dist[bi][k] + right_size as f64 * dist[bj][k])
                / merged_size as f64;
            new_row.push(d);
        }

        // Drop bj first so bi's position is still valid.
        active.remove(bj);
        active.remove(bi);
        for row in dist.iter_mut() {
            row.remove(bj);
            row.remove(bi);
        }
        dist.remove(bj);
        dist.remove(bi);

        active.push((merged_id, merged_size));
        for (row, &d) in dist.iter_mut().zip(&new_row) {
            row.push(d);
        }
        new_row.push(0.0);
        dist.push(new_row);
    }

    let root = active[0].0;
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        match children[id] {
            None => order.push(id),
            Some((left, right)) => {
                // The subtree holding the lowest original index is emitted
                // first; its sibling is pushed below it on the stack.
                let (first, second) = if min_leaf[left] <= min_leaf[right] {
                    (left, right)
                } else {
                    (right, left)
                };
                stack.push(second);
                stack.push(first);
            }
        }
    }

    Dendrogram {
        leaves: n,
        merges,
        order,
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Original leaf indices under a cluster id, in emission order.
pub fn cluster_members(dendrogram: &Dendrogram, id: usize) -> Vec<usize> {
    if id < dendrogram.leaves {
        return vec![id];
    }
    let merge = dendrogram.merges[id - dendrogram.leaves];
    let mut members = cluster_members(dendrogram, merge.left);
    members.extend(cluster_members(dendrogram, merge.right));
    members
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// On-disk form of an [`EvalReport`]; TOML with a version comment line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub zero_support: Vec<String>,
    pub class: Vec<NamedClassScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary: Option<BinarySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedClassScores {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Two-class convenience summary. The shipped convention for broad-type
/// reports is inhibitory = positive; the field records whichever class the
/// caller chose so the file is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySummary {
    pub positive: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsDoc {
    pub fn from_report(
        report: &EvalReport,
        class_names: &[String],
        binary: Option<BinarySummary>,
    ) -> Self {
        Self {
            accuracy: report.accuracy,
            macro_precision: report.macro_precision,
            macro_recall: report.macro_recall,
            macro_f1: report.macro_f1,
            zero_support: report
                .zero_support
                .iter()
                .map(|&c| class_names[c].clone())
                .collect(),
            class: report
                .per_class
                .iter()
                .zip(class_names)
                .map(|(s, name)| NamedClassScores {
                    name: name.clone(),
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                    support: s.support,
                })
                .collect(),
            binary,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_metrics_toml(path: &Path, doc: &MetricsDoc) -> Result<(), EvalError> {
    let body = toml::to_string_pretty(doc).expect("metrics serialize");
    write_text(path, &format!("# {REPORT_VERSION}\n{body}"))
}

pub fn read_metrics_toml(path: &Path) -> Result<MetricsDoc, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| EvalError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// Raw counts, one header row, row label in the first column.
pub fn write_confusion_csv(
    path: &Path,
    cm: &ConfusionMatrix,
    class_names: &[String],
) -> Result<(), EvalError> {
    let mut text = format!("# {REPORT_VERSION}\n");
    let _ = write!(text, "true_class");
    for name in class_names {
        let _ = write!(text, ",{name}");
    }
    let _ = writeln!(text);
    for (t, name) in class_names.iter().enumerate() {
        let _ = write!(text, "{name}");
        for p in 0..cm.classes() {
            let _ = write!(text, ",{}", cm.count(t, p));
        }
        let _ = writeln!(text);
    }
    write_text(path, &text)
}

/// Row-normalized counts; rows with support sum to 1.
pub fn write_confusion_normalized_csv(
    path: &Path,
    cm: &ConfusionMatrix,
    class_names: &[String],
) -> Result<(), EvalError> {
    let normalized = cm.row_normalized();
    let mut text = format!("# {REPORT_VERSION}\n");
    let _ = write!(text, "true_class");
    for name in class_names {
        let _ = write!(text, ",{name}");
    }
    let _ = writeln!(text);
    for (row, name) in normalized.iter().zip(class_names) {
        let _ = write!(text, "{name}");
        for v in row {
            let _ = write!(text, ",{v}");
        }
        let _ = writeln!(text);
    }
    write_text(path, &text)
}

/// Gate matrix in clustered row order, one row per sample.
pub fn write_gate_csv(
    path: &Path,
    gates: &Tensor,
    row_ids: &[String],
    feature_names: &[String],
    order: &[usize],
) -> Result<(), EvalError> {
    if row_ids.len() != gates.rows() || feature_names.len() != gates.cols() {
        return Err(EvalError::BadInput(format!(
            "gate matrix is {}x{}, got {} row ids and {} feature names",
            gates.rows(),
            gates.cols(),
            row_ids.len(),
            feature_names.len()
        )));
    }
    let mut text = format!("# {REPORT_VERSION}\n");
    let _ = write!(text, "sample_id");
    for name in feature_names {
        let _ = write!(text, ",{name}");
    }
    let _ = writeln!(text);
    for &i in order {
        let _ = write!(text, "{}", row_ids[i]);
        for v in gates.row(i) {
            let _ = write!(text, ",{v}");
        }
        let _ = writeln!(text);
    }
    write_text(path, &text)
}

/// The merge tree as CSV: `left,right,distance,size`, one row per merge.
pub fn write_merges_csv(path: &Path, dendrogram: &Dendrogram) -> Result<(), EvalError> {
    let mut text = format!("# {REPORT_VERSION}\nleft,right,distance,size\n");
    for m in &dendrogram.merges {
        let _ = writeln!(text, "{},{},{},{}", m.left, m.right, m.distance, m.size);
    }
    write_text(path, &text)
}

/// Grayscale heat map of the gate matrix in clustered order; open gates
/// render white. One cell is `cell_px` pixels square.
pub fn render_gate_heatmap(
    path: &Path,
    gates: &Tensor,
    order: &[usize],
    cell_px: u32,
) -> Result<(), EvalError> {
    if gates.rows() == 0 || gates.cols() == 0 || cell_px == 0 {
        return Err(EvalError::BadInput(
            "heat map needs a nonempty matrix and cell_px > 0".into(),
        ));
    }
    let (rows, cols) = (order.len() as u32, gates.cols() as u32);
    let mut img = image::GrayImage::new(cols * cell_px, rows * cell_px);
    for (r, &row_index) in order.iter().enumerate() {
        for (c, &v) in gates.row(row_index).iter().enumerate() {
            let shade = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            for dy in 0..cell_px {
                for dx in 0..cell_px {
                    img.put_pixel(
                        c as u32 * cell_px + dx,
                        r as u32 * cell_px + dy,
                        image::Luma([shade]),
                    );
                }
            }
        }
    }
    img.save(path).map_err(|source| EvalError::Image {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the standard report bundle into `dir` with the given file name
/// prefix and returns the created paths: counts CSV, normalized CSV, and
/// the metrics summary, plus clustered gate artifacts when a gate matrix
/// is supplied.
pub fn render_reports(
    dir: &Path,
    prefix: &str,
    report: &EvalReport,
    class_names: &[String],
    binary: Option<BinarySummary>,
    gates: Option<(&Tensor, &[String], &[String])>,
) -> Result<Vec<PathBuf>, EvalError> {
    let mut written = Vec::new();

    let confusion = dir.join(format!("{prefix}confusion.csv"));
    write_confusion_csv(&confusion, &report.confusion, class_names)?;
    written.push(confusion);

    let normalized = dir.join(format!("{prefix}confusion_normalized.csv"));
    write_confusion_normalized_csv(&normalized, &report.confusion, class_names)?;
    written.push(normalized);

    let metrics = dir.join(format!("{prefix}metrics.toml"));
    write_metrics_toml(&metrics, &MetricsDoc::from_report(report, class_names, binary))?;
    written.push(metrics);

    if let Some((gate_matrix, row_ids, feature_names)) = gates {
        let dendrogram = cluster_gate_rows(gate_matrix);
        let gates_csv = dir.join(format!("{prefix}gates.csv"));
        write_gate_csv(&gates_csv, gate_matrix, row_ids, feature_names, &dendrogram.order)?;
        written.push(gates_csv);

        let merges_csv = dir.join(format!("{prefix}gate_merges.csv"));
        write_merges_csv(&merges_csv, &dendrogram)?;
        written.push(merges_csv);

        let heatmap = dir.join(format!("{prefix}gates.png"));
        render_gate_heatmap(&heatmap, gate_matrix, &dendrogram.order, 4)?;
        written.push(heatmap);
    }

    Ok(written)
}
