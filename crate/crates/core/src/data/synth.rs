//! Synthetic datasets with recorded ground truth, used to verify the
//! models at desk scale: Gaussian class blobs with a known informative
//! subset, and a two-domain set whose target features are an affine
//! perturbation of the source generative process.

use super::{DataError, Dataset, Organism, Sample, Subclass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobsSpec {
    pub n: usize,
    /// Number of classes, at most 5 (each maps onto a subclass label).
    pub classes: usize,
    pub d_informative: usize,
    pub d_noise: usize,
    /// Mean offset applied on a class's informative coordinate; features
    /// carry unit Gaussian noise on top.
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            n: 600,
            classes: 5,
            d_informative: 5,
            d_noise: 36,
            separation: 4.0,
            seed: 0,
        }
    }
}

/// Ground truth recorded alongside generated blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsTruth {
    /// Sorted indices of the informative coordinates.
    pub informative: Vec<usize>,
    /// Full-width mean vector per class.
    pub class_means: Vec<Vec<f64>>,
}

/// Balanced Gaussian blobs: sample `i` belongs to class `i % classes`,
/// and class means differ only on the informative coordinates.
pub fn synth_blobs(spec: &BlobsSpec) -> Result<(Dataset, BlobsTruth), DataError> {
    if spec.classes == 0 || spec.classes > Subclass::ALL.len() {
        return Err(DataError::Config(format!(
            "blobs need 1..=5 classes, got {}",
            spec.classes
        )));
    }
    if spec.d_informative == 0 {
        return Err(DataError::Config("blobs need at least one informative feature".into()));
    }
    let d = spec.d_informative + spec.d_noise;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut informative = rand::seq::index::sample(&mut rng, d, spec.d_informative).into_vec();
    informative.sort_unstable();

    let class_means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            let mut mean = vec![0.0; d];
            mean[informative[c % spec.d_informative]] = spec.separation;
            mean
        })
        .collect();

    let samples = (0..spec.n)
        .map(|i| {
            let class = i % spec.classes;
            let features = class_means[class]
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Sample {
                id: format!("blob-{i}"),
                features,
                organism: Some(Organism::Mouse),
                dendrite_type: None,
                cre_line: None,
                subclass: Some(Subclass::ALL[class]),
            }
        })
        .collect();

    Ok((
        Dataset { samples },
        BlobsTruth {
            informative,
            class_means,
        },
    ))
}

/// Nearest-mean decision rule — for equal-prior unit-covariance Gaussian
/// classes this is the exact Bayes classifier, which makes it the
/// reference oracle for blob datasets. Ties go to the lower class.
pub fn nearest_mean_labels(dataset: &Dataset, class_means: &[Vec<f64>]) -> Vec<usize> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, mean) in class_means.iter().enumerate() {
                let d2: f64 = s
                    .features
                    .iter()
                    .zip(mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum();
                if d2 < best_d {
                    best_d = d2;
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub n_source: usize,
    pub n_target: usize,
    pub d: usize,
    /// Distance between the two class means in the source domain.
    pub separation: f64,
    /// Strength of the target domain's affine perturbation; 0 makes both
    /// domains identically distributed.
    pub shift: f64,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            n_source: 500,
            n_target: 500,
            d: 41,
            separation: 4.0,
            shift: 1.0,
            seed: 0,
        }
    }
}

/// Ground truth for the shifted-domain generator: the label direction and
/// the affine map applied to target samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTruth {
    pub direction: Vec<f64>,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Two balanced binary-labeled domains. Source (mouse) samples come from
/// class means `±separation/2` along a random unit direction with unit
/// noise; target (human) samples are drawn the same way and then pushed
/// through `x -> scale ⊙ x + offset`, where scale is `1 + shift·U(−0.3,0.3)`
/// and offset `shift·U(−1,1)` per coordinate. Class 0 carries the
/// dendrite string "spiny", class 1 "aspiny".
pub fn synth_shifted_domains(spec: &ShiftSpec) -> Result<(Dataset, ShiftTruth), DataError> {
    if spec.d == 0 {
        return Err(DataError::Config("shifted domains need d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut direction: Vec<f64> = (0..spec.d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let scale: Vec<f64> = (0..spec.d)
        .map(|_| 1.0 + spec.shift * rng.gen_range(-0.3..0.3))
        .collect();
    let offset: Vec<f64> = (0..spec.d)
        .map(|_| spec.shift * rng.gen_range(-1.0..1.0))
        .collect();

    let mut samples = Vec::with_capacity(spec.n_source + spec.n_target);
    for i in 0..spec.n_source {
        let class = i % 2;
        let features = class_point(&direction, spec.separation, class, &mut rng);
        samples.push(domain_sample(format!("src-{i}"), features, Organism::Mouse, class));
    }
    for i in 0..spec.n_target {
        let class = i % 2;
        let mut features = class_point(&direction, spec.separation, class, &mut rng);
        for ((x, a), b) in features.iter_mut().zip(&scale).zip(&offset) {
            *x = a * *x + b;
        }
        samples.push(domain_sample(format!("tgt-{i}"), features, Organism::Human, class));
    }

    Ok((
        Dataset { samples },
        ShiftTruth {
            direction,
            scale,
            offset,
        },
    ))
}

fn class_point(
    direction: &[f64],
    separation: f64,
    class: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let sign = if class == 0 { -0.5 } else { 0.5 };
    direction
        .iter()
        .map(|u| sign * separation * u + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn domain_sample(id: String, features: Vec<f64>, organism: Organism, class: usize) -> Sample {
    Sample {
        id,
        features,
        organism: Some(organism),
        dendrite_type: Some(if class == 0 { "spiny" } else { "aspiny" }.to_string()),
        cre_line: None,
        subclass: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DendriteMap;

    #[test]
    fn blobs_are_seed_deterministic_and_balanced() {
        let spec = BlobsSpec {
            n: 50,
            ..BlobsSpec::default()
        };
        let (a, ta) = synth_blobs(&spec).unwrap();
        let (b, tb) = synth_blobs(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.len(), 50);
        assert_eq!(a.subclass_histogram(), [10, 10, 10, 10, 10]);
        assert_eq!(ta.informative.len(), 5);
        let (c, _) = synth_blobs(&BlobsSpec {
            seed: 1,
            n: 50,
            ..BlobsSpec::default()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn blob_means_differ_only_on_informative_coordinates() {
        let (_, truth) = synth_blobs(&BlobsSpec::default()).unwrap();
        for mean in &truth.class_means {
            for (j, v) in mean.iter().enumerate() {
                if !truth.informative.contains(&j) {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_separation_bayes_rate_is_chance() {
        let spec = BlobsSpec {
            n: 1000,
            separation: 0.0,
            seed: 5,
            ..BlobsSpec::default()
        };
        let (ds, truth) = synth_blobs(&spec).unwrap();
        // All class means coincide, so the Bayes rule degenerates to a
        // constant prediction: accuracy is exactly the class prior.
        let pred = nearest_mean_labels(&ds, &truth.class_means);
        let truth_labels = ds.subclass_indices().unwrap();
        let acc = pred
            .iter()
            .zip(&truth_labels)
            .filter(|(p, t)| p == t)
            .count() as f64
            / ds.len() as f64;
        assert!((acc - 0.2).abs() < 1e-9, "got {acc}");
    }

    #[test]
    fn wide_separation_bayes_rate_clears_99_percent() {
        let spec = BlobsSpec {
            n: 1000,
            separation: 6.0,
            seed: 6,
            ..BlobsSpec::default()
        };
        let (ds, truth) = synth_blobs(&spec).unwrap();
        let pred = nearest_mean_labels(&ds, &truth.class_means);
        let truth_labels = ds.subclass_indices().unwrap();
        let acc = pred
            .iter()
            .zip(&truth_labels)
            .filter(|(p, t)| p == t)
            .count() as f64
            / ds.len() as f64;
        assert!(acc >= 0.99, "got {acc}");
    }

    #[test]
    fn shifted_domains_are_deterministic_with_usable_labels() {
        let spec = ShiftSpec {
            n_source: 40,
            n_target: 30,
            ..ShiftSpec::default()
        };
        let (a, ta) = synth_shifted_domains(&spec).unwrap();
        let (b, tb) = synth_shifted_domains(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.len(), 70);

        let map = DendriteMap::default();
        let labels = a.broad_labels(&map).unwrap();
        let domains = a.domain_indices().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 20 + 15);
        assert_eq!(domains.iter().filter(|&&d| d == 0).count(), 40);
    }

    #[test]
    fn zero_shift_leaves_target_generation_untouched() {
        let (_, truth) = synth_shifted_domains(&ShiftSpec {
            shift: 0.0,
            ..ShiftSpec::default()
        })
        .unwrap();
        assert!(truth.scale.iter().all(|&a| a == 1.0));
        assert!(truth.offset.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn source_rule_degrades_on_strongly_shifted_target() {
        let spec = ShiftSpec {
            n_source: 400,
            n_target: 400,
            shift: 6.0,
            seed: 9,
            ..ShiftSpec::default()
        };
        let (ds, truth) = synth_shifted_domains(&spec).unwrap();
        // Source-domain Bayes rule: nearest of the two source means.
        let means: Vec<Vec<f64>> = [0usize, 1]
            .iter()
            .map(|&c| {
                let sign = if c == 0 { -0.5 } else { 0.5 };
                truth
                    .direction
                    .iter()
                    .map(|u| sign * spec.separation * u)
                    .collect()
            })
            .collect();
        let map = DendriteMap::default();
        let labels = ds.broad_labels(&map).unwrap();
        let pred = nearest_mean_labels(&ds, &means);
        let acc_on = |organism: Organism| {
            let mut hit = 0;
            let mut total = 0;
            for ((s, p), t) in ds.samples.iter().zip(&pred).zip(&labels) {
                if s.organism == Some(organism) {
                    total += 1;
                    if p == t {
                        hit += 1;
                    }
                }
            }
            hit as f64 / total as f64
        };
        let src = acc_on(Organism::Mouse);
        let tgt = acc_on(Organism::Human);
        assert!(src > 0.95, "source accuracy {src}");
        assert!(
            src - tgt > 0.05,
            "expected degradation, got source {src} vs target {tgt}"
        );
    }
}
