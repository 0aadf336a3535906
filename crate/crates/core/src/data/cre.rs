//! Grouping of transgenic Cre driver lines into the five subclasses.
//!
//! Which driver lines compose each subclass is survey data, not code: the
//! assignments ship as an editable TOML file (`cre_line = "Subclass"`
//! pairs) and anything the mapping does not cover is dropped and counted,
//! never guessed. The built-in default covers the common Allen Cell Types
//! driver lines; validate it against your export's class histogram before
//! trusting downstream numbers.

use super::{DataError, Dataset, Subclass};
use std::collections::BTreeMap;
use std::path::Path;

/// Default line-to-subclass assignments, also available via
/// [`CreMapping::default_mapping`].
pub const DEFAULT_MAPPING_TOML: &str = include_str!("../../../../configs/cre_map_default.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreMapping {
    map: BTreeMap<String, Subclass>,
}

impl CreMapping {
    pub fn new(map: BTreeMap<String, Subclass>) -> Self {
        Self { map }
    }

    /// Parses `"Cre-line" = "Subclass"` pairs from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let raw: BTreeMap<String, String> = toml::from_str(text)
            .map_err(|e| DataError::Config(format!("cre mapping parse error: {e}")))?;
        let mut map = BTreeMap::new();
        for (line, subclass) in raw {
            let parsed = Subclass::parse(&subclass)
                .ok_or_else(|| DataError::UnknownSubclass(subclass.clone()))?;
            map.insert(line, parsed);
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn default_mapping() -> Self {
        Self::from_toml_str(DEFAULT_MAPPING_TOML).expect("built-in mapping parses")
    }

    pub fn lookup(&self, cre_line: &str) -> Option<Subclass> {
        self.map.get(cre_line.trim()).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }
}

/// Populates `subclass` from each sample's Cre line. Samples whose line is
/// absent from the mapping (or that have no line at all) are dropped; the
/// second return value counts them.
pub fn group_cre_lines(
    dataset: &Dataset,
    mapping: &CreMapping,
) -> Result<(Dataset, usize), DataError> {
    if mapping.is_empty() {
        return Err(DataError::EmptyMapping);
    }
    let mut grouped = Vec::new();
    let mut dropped = 0usize;
    for s in &dataset.samples {
        match s.cre_line.as_deref().and_then(|l| mapping.lookup(l)) {
            Some(subclass) => {
                let mut s = s.clone();
                s.subclass = Some(subclass);
                grouped.push(s);
            }
            None => dropped += 1,
        }
    }
    Ok((Dataset { samples: grouped }, dropped))
}
