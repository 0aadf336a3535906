//! Deterministic stratified train/validation/test splitting.
//!
//! Strata are processed in sorted key order; each stratum's indices are
//! shuffled with a ChaCha8 stream seeded once for the whole split, and
//! part sizes are apportioned by a sequential largest-remainder rule that
//! keeps every global part total exact while holding each stratum within
//! one sample of its proportional share.

use super::{DataError, Dataset, DendriteMap};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    Counts {
        train: usize,
        validation: usize,
        test: usize,
    },
    Fractions {
        train_frac: f64,
        validation_frac: f64,
        test_frac: f64,
    },
}

/// Which label field defines the strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyBy {
    #[default]
    None,
    Subclass,
    Broad,
    Organism,
    OrganismAndBroad,
    OrganismAndSubclass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// One stratum key per sample, in row order.
pub fn strata_keys(
    dataset: &Dataset,
    by: StratifyBy,
    dendrites: &DendriteMap,
) -> Result<Vec<String>, DataError> {
    dataset
        .samples
        .iter()
        .enumerate()
        .map(|(row, s)| {
            let broad = || {
                s.broad_label(dendrites)
                    .ok_or(DataError::MissingLabel {
                        row,
                        field: "dendrite_type",
                    })
            };
            let organism = || {
                s.organism.ok_or(DataError::MissingLabel {
                    row,
                    field: "organism",
                })
            };
            let subclass = || {
                s.subclass.ok_or(DataError::MissingLabel {
                    row,
                    field: "subclass",
                })
            };
            Ok(match by {
                StratifyBy::None => String::new(),
                StratifyBy::Subclass => subclass()?.name().to_string(),
                StratifyBy::Broad => broad()?.to_string(),
                StratifyBy::Organism => organism()?.name().to_string(),
                StratifyBy::OrganismAndBroad => {
                    format!("{}/{}", organism()?.name(), broad()?)
                }
                StratifyBy::OrganismAndSubclass => {
                    format!("{}/{}", organism()?.name(), subclass()?.name())
                }
            })
        })
        .collect()
}

/// Splits `0..strata.len()` into three disjoint, exhaustive index sets.
/// Same inputs and seed give identical output on every call.
pub fn stratified_split(
    strata: &[String],
    spec: &SplitSpec,
    seed: u64,
) -> Result<SplitIndices, DataError> {
    let n = strata.len();
    let mut remaining = resolve_totals(spec, n)?;

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, key) in strata.iter().enumerate() {
        groups.entry(key).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let mut remaining_n = n;
    for indices in groups.into_values() {
        let mut indices = indices;
        indices.shuffle(&mut rng);
        let size = indices.len();
        let ideals: Vec<f64> = remaining
            .iter()
            .map(|&r| size as f64 * r as f64 / remaining_n as f64)
            .collect();
        let alloc = largest_remainder(&ideals, size);
        let (a, rest) = indices.split_at(alloc[0]);
        let (b, c) = rest.split_at(alloc[1]);
        out.train.extend_from_slice(a);
        out.validation.extend_from_slice(b);
        out.test.extend_from_slice(c);
        for (r, &used) in remaining.iter_mut().zip(&alloc) {
            *r -= used;
        }
        remaining_n -= size;
    }
    debug_assert_eq!(remaining, [0, 0, 0]);

    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

fn resolve_totals(spec: &SplitSpec, n: usize) -> Result<[usize; 3], DataError> {
    match *spec {
        SplitSpec::Counts {
            train,
            validation,
            test,
        } => {
            let requested = train + validation + test;
            if requested != n {
                return Err(DataError::SplitInfeasible {
                    requested,
                    available: n,
                });
            }
            Ok([train, validation, test])
        }
        SplitSpec::Fractions {
            train_frac,
            validation_frac,
            test_frac,
        } => {
            let fracs = [train_frac, validation_frac, test_frac];
            if fracs.iter().any(|f| *f < 0.0) {
                return Err(DataError::BadFractions {
                    sum: fracs.iter().sum(),
                });
            }
            let sum: f64 = fracs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(DataError::BadFractions { sum });
            }
            let ideals: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
            let alloc = largest_remainder(&ideals, n);
            Ok([alloc[0], alloc[1], alloc[2]])
        }
    }
}

/// Integer apportionment: floors plus one extra for the largest
/// fractional parts (ties go to the lower index), summing exactly to
/// `total`.
fn largest_remainder(ideals: &[f64], total: usize) -> Vec<usize> {
    let mut alloc: Vec<usize> = ideals.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    debug_assert!(assigned <= total);
    let mut order: Vec<usize> = (0..ideals.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideals[a] - ideals[a].floor();
        let fb = ideals[b] - ideals[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total - assigned) {
        alloc[i] += 1;
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(groups: &[(&str, usize)]) -> Vec<String> {
        let mut out = Vec::new();
        for (name, count) in groups {
            out.extend(std::iter::repeat_n(name.to_string(), *count));
        }
        out
    }

    fn assert_partition(idx: &SplitIndices, n: usize) {
        let mut seen = vec![false; n];
        for part in [&idx.train, &idx.validation, &idx.test] {
            for &i in part {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "split is not exhaustive");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let strata = keys(&[("a", 6), ("b", 4)]);
        let spec = SplitSpec::Fractions {
            train_frac: 0.8,
            validation_frac: 0.0,
            test_frac: 0.2,
        };
        let s1 = stratified_split(&strata, &spec, 7).unwrap();
        let s2 = stratified_split(&strata, &spec, 7).unwrap();
        assert_eq!(s1, s2);
        assert_partition(&s1, 10);
        assert_eq!(s1.train.len(), 8);
        assert_eq!(s1.test.len(), 2);

        let s3 = stratified_split(&strata, &spec, 8).unwrap();
        assert_partition(&s3, 10);
        assert_ne!(s1, s3, "different seeds should shuffle differently here");
    }

    #[test]
    fn balanced_binary_50_50_gives_25_per_class() {
        let strata = keys(&[("pos", 50), ("neg", 50)]);
        let spec = SplitSpec::Fractions {
            train_frac: 0.5,
            validation_frac: 0.0,
            test_frac: 0.5,
        };
        let s = stratified_split(&strata, &spec, 3).unwrap();
        assert_partition(&s, 100);
        for part in [&s.train, &s.test] {
            assert_eq!(part.len(), 50);
            let pos = part.iter().filter(|&&i| i < 50).count();
            assert_eq!(pos, 25);
        }
    }

    #[test]
    fn exact_counts_and_per_stratum_proportionality() {
        // Five strata totaling 1382; a 1105/0/277 count split must honor
        // the totals exactly and each stratum within one sample of its
        // proportional share of the test part.
        let sizes = [700usize, 199, 231, 173, 79];
        let names = ["glut", "htr3a", "pvalb", "sst", "vip"];
        let strata = keys(&names.iter().copied().zip(sizes).collect::<Vec<_>>());
        let spec = SplitSpec::Counts {
            train: 1105,
            validation: 0,
            test: 277,
        };
        let s = stratified_split(&strata, &spec, 11).unwrap();
        assert_partition(&s, 1382);
        assert_eq!(s.train.len(), 1105);
        assert_eq!(s.test.len(), 277);

        let mut offset = 0;
        for &size in &sizes {
            let range = offset..offset + size;
            let in_test = s.test.iter().filter(|&&i| range.contains(&i)).count() as f64;
            let ideal = size as f64 * 277.0 / 1382.0;
            assert!(
                (in_test - ideal).abs() <= 1.0,
                "stratum of {size}: test share {in_test} vs ideal {ideal}"
            );
            offset += size;
        }
    }

    #[test]
    fn infeasible_counts_and_bad_fractions_error() {
        let strata = keys(&[("a", 5)]);
        assert!(matches!(
            stratified_split(
                &strata,
                &SplitSpec::Counts {
                    train: 4,
                    validation: 0,
                    test: 2
                },
                0
            ),
            Err(DataError::SplitInfeasible {
                requested: 6,
                available: 5
            })
        ));
        assert!(matches!(
            stratified_split(
                &strata,
                &SplitSpec::Fractions {
                    train_frac: 0.7,
                    validation_frac: 0.0,
                    test_frac: 0.2
                },
                0
            ),
            Err(DataError::BadFractions { .. })
        ));
    }

    #[test]
    fn unstratified_split_is_a_single_stratum() {
        let strata = vec![String::new(); 9];
        let spec = SplitSpec::Fractions {
            train_frac: 0.6,
            validation_frac: 0.2,
            test_frac: 0.2,
        };
        let s = stratified_split(&strata, &spec, 1).unwrap();
        assert_partition(&s, 9);
        // Largest-remainder on (5.4, 1.8, 1.8): 5/2/2 via the two largest
        // fractional parts.
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (5, 2, 2)
        );
    }
}
