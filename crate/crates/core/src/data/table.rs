//! CSV ingestion and emission for feature tables.
//!
//! A table is UTF-8 CSV with a header row. The schema's feature columns
//! must all be present (any column order); `sample_id`, `organism`,
//! `dendrite_type`, `cre_line`, and `subclass` are recognized when
//! present. Empty or unparseable numeric cells become NaN and are left to
//! the exclusion step.

use super::schema::FeatureSchema;
use super::{DataError, Dataset, Organism, Sample, Subclass};
use std::collections::BTreeMap;
use std::path::Path;

const META_COLUMNS: [&str; 5] = ["sample_id", "organism", "dendrite_type", "cre_line", "subclass"];

pub fn load_table(path: &Path, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|source| DataError::Csv {
        path: display.clone(),
        source,
    })?;

    let headers = reader
        .headers()
        .map_err(|source| DataError::Csv {
            path: display.clone(),
            source,
        })?
        .clone();
    let position: BTreeMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, name)| (name.trim(), i))
        .collect();

    let missing: Vec<String> = schema
        .names()
        .iter()
        .filter(|n| !position.contains_key(n.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(DataError::MissingColumns {
            path: display,
            missing,
        });
    }

    let feature_cols: Vec<usize> = schema
        .names()
        .iter()
        .map(|n| position[n.as_str()])
        .collect();
    let meta_col = |name: &str| position.get(name).copied();
    let (id_col, organism_col, dendrite_col, cre_col, subclass_col) = (
        meta_col("sample_id"),
        meta_col("organism"),
        meta_col("dendrite_type"),
        meta_col("cre_line"),
        meta_col("subclass"),
    );

    let mut samples = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|source| DataError::Csv {
            path: display.clone(),
            source,
        })?;
        let cell = |col: Option<usize>| -> Option<&str> {
            col.and_then(|c| record.get(c)).map(str::trim).filter(|s| !s.is_empty())
        };

        let features = feature_cols
            .iter()
            .map(|&c| {
                record
                    .get(c)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .and_then(|s| s.parse::<f64>().ok())
                    .unwrap_or(f64::NAN)
            })
            .collect();

        let organism = match cell(organism_col) {
            None => None,
            Some(raw) => Some(Organism::parse(raw).ok_or_else(|| DataError::BadLabel {
                row: row_idx,
                field: "organism",
                value: raw.to_string(),
            })?),
        };
        let subclass = match cell(subclass_col) {
            None => None,
            Some(raw) => Some(Subclass::parse(raw).ok_or_else(|| DataError::BadLabel {
                row: row_idx,
                field: "subclass",
                value: raw.to_string(),
            })?),
        };

        samples.push(Sample {
            id: cell(id_col)
                .map(str::to_string)
                .unwrap_or_else(|| row_idx.to_string()),
            features,
            organism,
            dendrite_type: cell(dendrite_col).map(|s| s.to_ascii_lowercase()),
            cre_line: cell(cre_col).map(str::to_string),
            subclass,
        });
    }

    if samples.is_empty() {
        return Err(DataError::EmptyTable { path: display });
    }
    Ok(Dataset { samples })
}

/// Writes the dataset in the load format: the five metadata columns
/// followed by the schema features. Non-finite values are written as
/// `NaN`; finite values use the shortest round-tripping decimal form.
pub fn save_table(
    dataset: &Dataset,
    schema: &FeatureSchema,
    path: &Path,
) -> Result<(), DataError> {
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_path(path).map_err(|source| DataError::Csv {
        path: display.clone(),
        source,
    })?;

    let header: Vec<&str> = META_COLUMNS
        .iter()
        .copied()
        .chain(schema.names().iter().map(String::as_str))
        .collect();
    writer.write_record(&header).map_err(|source| DataError::Csv {
        path: display.clone(),
        source,
    })?;

    for s in &dataset.samples {
        let mut record: Vec<String> = vec![
            s.id.clone(),
            s.organism.map(|o| o.name().to_string()).unwrap_or_default(),
            s.dendrite_type.clone().unwrap_or_default(),
            s.cre_line.clone().unwrap_or_default(),
            s.subclass.map(|c| c.name().to_string()).unwrap_or_default(),
        ];
        record.extend(s.features.iter().map(|v| {
            if v.is_nan() {
                "NaN".to_string()
            } else {
                format!("{v}")
            }
        }));
        writer.write_record(&record).map_err(|source| DataError::Csv {
            path: display.clone(),
            source,
        })?;
    }
    writer.flush().map_err(|source| DataError::Io {
        path: display,
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tiny_schema() -> FeatureSchema {
        FeatureSchema::custom(vec!["f0".into(), "f1".into(), "f2".into()]).unwrap()
    }

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_rows_with_nan_for_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "t.csv",
            "sample_id,organism,f0,f1,f2,dendrite_type\n\
             a,mouse,1.5,,abc,Spiny\n\
             b,human,0,NaN,-2.25,aspiny\n",
        );
        let ds = load_table(&path, &tiny_schema()).unwrap();
        assert_eq!(ds.len(), 2);
        let s0 = &ds.samples[0];
        assert_eq!(s0.id, "a");
        assert_eq!(s0.organism, Some(Organism::Mouse));
        assert_eq!(s0.dendrite_type.as_deref(), Some("spiny"));
        assert_eq!(s0.features[0], 1.5);
        assert!(s0.features[1].is_nan()); // empty cell
        assert!(s0.features[2].is_nan()); // unparseable cell
        let s1 = &ds.samples[1];
        assert!(s1.features[1].is_nan()); // literal NaN
        assert_eq!(s1.features[2], -2.25);
    }

    #[test]
    fn missing_columns_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "f0,f2\n1,2\n");
        let err = load_table(&path, &tiny_schema()).unwrap_err();
        match err {
            DataError::MissingColumns { missing, .. } => assert_eq!(missing, vec!["f1"]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn header_only_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "f0,f1,f2\n");
        assert!(matches!(
            load_table(&path, &tiny_schema()),
            Err(DataError::EmptyTable { .. })
        ));
    }

    #[test]
    fn unknown_organism_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "organism,f0,f1,f2\nferret,1,2,3\n");
        assert!(matches!(
            load_table(&path, &tiny_schema()),
            Err(DataError::BadLabel { field: "organism", .. })
        ));
    }

    #[test]
    fn one_row_of_zeros_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "f0,f1,f2\n0,0,0\n");
        let ds = load_table(&path, &tiny_schema()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples[0].features, vec![0.0, 0.0, 0.0]);
        assert_eq!(ds.samples[0].id, "0"); // row index fallback
    }

    #[test]
    fn save_then_load_round_trips_numeric_content() {
        let schema = tiny_schema();
        let ds = Dataset {
            samples: vec![
                Sample {
                    id: "x1".into(),
                    features: vec![1.0 / 3.0, f64::NAN, -0.0625],
                    organism: Some(Organism::Human),
                    dendrite_type: Some("sparsely spiny".into()),
                    cre_line: Some("Pvalb-IRES-Cre".into()),
                    subclass: Some(Subclass::Pvalb),
                },
                Sample {
                    id: "x2".into(),
                    features: vec![2.5e-11, 7.0, 1e300],
                    organism: None,
                    dendrite_type: None,
                    cre_line: None,
                    subclass: None,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.csv");
        save_table(&ds, &schema, &path).unwrap();
        let back = load_table(&path, &schema).unwrap();
        assert_eq!(back.len(), 2);
        for (orig, got) in ds.samples.iter().zip(&back.samples) {
            for (a, b) in orig.features.iter().zip(&got.features) {
                assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
        assert_eq!(back.samples[0].subclass, Some(Subclass::Pvalb));
        assert_eq!(back.samples[0].cre_line.as_deref(), Some("Pvalb-IRES-Cre"));
    }
}
