//! Tabular electrophysiology data: schema, ingestion, label grouping,
//! splitting, normalization, and synthetic generators.

pub mod cre;
pub mod normalize;
pub mod schema;
pub mod split;
pub mod synth;
pub mod table;

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub use cre::{group_cre_lines, CreMapping};
pub use normalize::{apply_normalize, fit_normalize, NormStats};
pub use schema::{FeatureSchema, FEATURE_COUNT};
pub use split::{strata_keys, stratified_split, SplitIndices, SplitSpec, StratifyBy};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: header is missing required columns: {missing:?}")]
    MissingColumns { path: String, missing: Vec<String> },
    #[error("{path}: table has a header but no data rows")]
    EmptyTable { path: String },
    #[error("row {row}: unknown {field} value {value:?}")]
    BadLabel {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("cre-line mapping is empty")]
    EmptyMapping,
    #[error("unknown subclass name {0:?} in cre-line mapping")]
    UnknownSubclass(String),
    #[error("split of {requested} samples requested from {available}")]
    SplitInfeasible { requested: usize, available: usize },
    #[error("split fractions sum to {sum}, expected 1")]
    BadFractions { sum: f64 },
    #[error("normalization statistics need a nonempty training split")]
    EmptyTrainSplit,
    #[error("non-finite feature {feature:?} in row {row}; run the NaN exclusion first")]
    NonFiniteFeature { row: usize, feature: String },
    #[error("sample {row} is missing required label {field}")]
    MissingLabel { row: usize, field: &'static str },
    #[error("{0}")]
    Config(String),
}

/// The two recording domains. Mouse is the adaptation source (domain
/// index 0), human the target (index 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Organism {
    Mouse,
    Human,
}

impl Organism {
    pub fn domain_index(self) -> usize {
        match self {
            Organism::Mouse => 0,
            Organism::Human => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Organism::Mouse => "mouse",
            Organism::Human => "human",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "mouse" => Some(Organism::Mouse),
            "human" => Some(Organism::Human),
            _ => None,
        }
    }
}

/// Transcriptomic subclasses targeted by the Cre-line grouping. The index
/// order is fixed and is the class order of every 5-way confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subclass {
    Glutamatergic,
    Htr3a,
    Pvalb,
    Sst,
    Vip,
}

impl Subclass {
    pub const ALL: [Subclass; 5] = [
        Subclass::Glutamatergic,
        Subclass::Htr3a,
        Subclass::Pvalb,
        Subclass::Sst,
        Subclass::Vip,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Subclass::Glutamatergic => "Glutamatergic",
            Subclass::Htr3a => "Htr3a",
            Subclass::Pvalb => "Pvalb",
            Subclass::Sst => "Sst",
            Subclass::Vip => "Vip",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "glutamatergic" | "glut" => Some(Subclass::Glutamatergic),
            "htr3a" => Some(Subclass::Htr3a),
            "pvalb" => Some(Subclass::Pvalb),
            "sst" => Some(Subclass::Sst),
            "vip" => Some(Subclass::Vip),
            _ => None,
        }
    }
}

/// Broad-type encoding used by the adversarial classifier: 0 = excitatory,
/// 1 = inhibitory.
pub const EXCITATORY: u8 = 0;
pub const INHIBITORY: u8 = 1;

/// Maps raw dendrite-type strings onto the broad excitatory/inhibitory
/// code. The default sends spiny to excitatory and both aspiny and
/// sparsely spiny to inhibitory; ingest configs may override it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DendriteMap {
    pub pairs: BTreeMap<String, u8>,
}

impl Default for DendriteMap {
    fn default() -> Self {
        let mut pairs = BTreeMap::new();
        pairs.insert("spiny".to_string(), EXCITATORY);
        pairs.insert("aspiny".to_string(), INHIBITORY);
        pairs.insert("sparsely spiny".to_string(), INHIBITORY);
        Self { pairs }
    }
}

impl DendriteMap {
    pub fn label(&self, raw: &str) -> Option<u8> {
        self.pairs.get(raw.trim().to_ascii_lowercase().as_str()).copied()
    }
}

/// One recorded cell: 41 features (NaN permitted until exclusion) plus
/// whatever labels the source table carried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub organism: Option<Organism>,
    /// Raw dendrite-type string, normalized to lowercase; decoded on
    /// demand through a [`DendriteMap`].
    pub dendrite_type: Option<String>,
    pub cre_line: Option<String>,
    pub subclass: Option<Subclass>,
}

impl Sample {
    pub fn broad_label(&self, map: &DendriteMap) -> Option<u8> {
        self.dendrite_type.as_deref().and_then(|d| map.label(d))
    }

    pub fn all_finite(&self) -> bool {
        self.features.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Feature block as an `[N, 41]` tensor.
    pub fn feature_matrix(&self) -> Tensor {
        let d = self.samples.first().map_or(FEATURE_COUNT, |s| s.features.len());
        let mut data = Vec::with_capacity(self.len() * d);
        for s in &self.samples {
            data.extend_from_slice(&s.features);
        }
        Tensor::new(vec![self.len(), d], data).expect("uniform feature width")
    }

    /// Subclass indices for every sample; errors if any sample is missing
    /// one.
    pub fn subclass_indices(&self) -> Result<Vec<usize>, DataError> {
        self.samples
            .iter()
            .enumerate()
            .map(|(row, s)| {
                s.subclass
                    .map(|c| c.index())
                    .ok_or(DataError::MissingLabel {
                        row,
                        field: "subclass",
                    })
            })
            .collect()
    }

    /// Broad excitatory/inhibitory labels via the dendrite mapping.
    pub fn broad_labels(&self, map: &DendriteMap) -> Result<Vec<usize>, DataError> {
        self.samples
            .iter()
            .enumerate()
            .map(|(row, s)| {
                s.broad_label(map)
                    .map(usize::from)
                    .ok_or(DataError::MissingLabel {
                        row,
                        field: "dendrite_type",
                    })
            })
            .collect()
    }

    pub fn domain_indices(&self) -> Result<Vec<usize>, DataError> {
        self.samples
            .iter()
            .enumerate()
            .map(|(row, s)| {
                s.organism
                    .map(Organism::domain_index)
                    .ok_or(DataError::MissingLabel {
                        row,
                        field: "organism",
                    })
            })
            .collect()
    }

    /// Removes samples with any non-finite feature; returns the retained
    /// dataset and how many rows were dropped.
    pub fn exclude_nan(&self) -> (Dataset, usize) {
        let retained: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| s.all_finite())
            .cloned()
            .collect();
        let excluded = self.len() - retained.len();
        (Dataset { samples: retained }, excluded)
    }

    /// Per-subclass sample counts in [`Subclass::ALL`] order (samples
    /// without a subclass are not counted).
    pub fn subclass_histogram(&self) -> [usize; 5] {
        let mut counts = [0usize; 5];
        for s in &self.samples {
            if let Some(c) = s.subclass {
                counts[c.index()] += 1;
            }
        }
        counts
    }
}
