//! Planted synthetic datasets with a known-optimal solution.
//!
//! Every class gets a distinct binary attribute signature with exactly
//! `ceil(L/4)` active attributes. A sample's feature map is Gaussian noise,
//! except that each active attribute of its class gets one random location
//! boosted to `1 + noise`. Feature channels therefore align one-to-one with
//! attributes: the identity projection under max pooling recovers the
//! signature, which is what a trained model should rediscover.
//!
//! The generator also reports the accuracy of a cheating nearest-prototype
//! classifier (cosine similarity between the max-pooled map and each class
//! signature) as an upper reference for learned models.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{
    write_attribute_matrix, write_manifest, write_split, write_tensor, ManifestEntry, SplitSpec,
};
use crate::model::AttributeMatrix;
use crate::tensor::{gmp, Matrix, Tensor};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub samples_per_class: usize,
    /// Number of attributes, which is also the feature channel count.
    pub attr_dim: usize,
    /// Spatial side length: feature maps are `grid x grid x attr_dim`.
    pub grid: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seen_classes: 20,
            unseen_classes: 5,
            samples_per_class: 50,
            attr_dim: 32,
            grid: 7,
            noise_sigma: 0.1,
            seed: 42,
        }
    }
}

/// Files written by [`synth_generate`], plus the reference accuracy.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub attributes_path: PathBuf,
    pub split_path: PathBuf,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub test_seen_manifest: PathBuf,
    pub test_unseen_manifest: PathBuf,
    pub oracle_path: PathBuf,
    /// Sample-level accuracy of the nearest-prototype classifier over every
    /// generated sample, seen and unseen alike.
    pub oracle_accuracy: f64,
    pub total_samples: usize,
}

const SIGNATURE_ATTEMPTS: usize = 1000;

/// Generates a dataset under `out_dir`: feature maps in `features/`, the
/// attribute table, the class split, train/test manifests and the oracle
/// reference. Identical configs produce byte-identical trees.
///
/// Each seen class keeps the leading 80% of its samples (at least one) for
/// the train manifest and the rest for `test_seen`; unseen classes go
/// entirely to `test_unseen`. `test.tsv` concatenates both test manifests,
/// seen entries first.
pub fn synth_generate(out_dir: &Path, config: &SynthConfig) -> Result<SynthOutput> {
    if config.seen_classes == 0 || config.unseen_classes == 0 {
        return Err(Error::Contract(
            "need at least one seen and one unseen class".into(),
        ));
    }
    if config.samples_per_class == 0 {
        return Err(Error::Contract("need at least one sample per class".into()));
    }
    if config.attr_dim == 0 || config.grid == 0 {
        return Err(Error::Contract(
            "attribute dimension and grid must be at least 1".into(),
        ));
    }
    if !(config.noise_sigma.is_finite() && config.noise_sigma >= 0.0) {
        return Err(Error::Contract(format!(
            "noise sigma must be non-negative, got {}",
            config.noise_sigma
        )));
    }

    let l = config.attr_dim;
    let active = l.div_ceil(4);
    let classes = config.seen_classes + config.unseen_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut class_ids = Vec::with_capacity(classes);
    for i in 0..config.seen_classes {
        class_ids.push(format!("s{i:03}"));
    }
    for i in 0..config.unseen_classes {
        class_ids.push(format!("u{i:03}"));
    }

    let mut signatures: Vec<Vec<usize>> = Vec::with_capacity(classes);
    let mut taken: HashSet<Vec<usize>> = HashSet::new();
    for _ in 0..classes {
        let mut found = false;
        for _ in 0..SIGNATURE_ATTEMPTS {
            let mut idxs = rand::seq::index::sample(&mut rng, l, active).into_vec();
            idxs.sort_unstable();
            if taken.insert(idxs.clone()) {
                signatures.push(idxs);
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Contract(format!(
                "could not draw {classes} distinct signatures with {active} of {l} attributes"
            )));
        }
    }

    std::fs::create_dir_all(out_dir.join("features"))
        .map_err(|e| Error::file(out_dir.join("features"), e))?;

    let mut attr_data = vec![0.0f32; classes * l];
    for (c, sig) in signatures.iter().enumerate() {
        for &a in sig {
            attr_data[c * l + a] = 1.0;
        }
    }
    let attrs = AttributeMatrix::new(class_ids.clone(), Matrix::new(classes, l, attr_data)?)?;
    let attributes_path = out_dir.join("attributes.csv");
    write_attribute_matrix(&attributes_path, &attrs)?;

    let split = SplitSpec::new(
        class_ids[..config.seen_classes].to_vec(),
        class_ids[config.seen_classes..].to_vec(),
    )?;
    let split_path = out_dir.join("split.txt");
    write_split(&split_path, &split)?;

    let spatial = config.grid * config.grid;
    let sigma = config.noise_sigma;
    let mut entries: Vec<ManifestEntry> = Vec::with_capacity(classes * config.samples_per_class);
    let mut pooled_signatures: Vec<(usize, Vec<f32>)> = Vec::with_capacity(entries.capacity());
    for (c, class_id) in class_ids.iter().enumerate() {
        for j in 0..config.samples_per_class {
            let sample_id = format!("{class_id}_{j:03}");
            let mut data = Vec::with_capacity(spatial * l);
            for _ in 0..spatial * l {
                let eps: f64 = rng.sample(StandardNormal);
                data.push((sigma * eps) as f32);
            }
            for &a in &signatures[c] {
                let loc = rng.random_range(0..spatial);
                let eps: f64 = rng.sample(StandardNormal);
                data[loc * l + a] = (1.0 + sigma * eps) as f32;
            }
            let featmap = Tensor::new(vec![config.grid, config.grid, l], data)?;
            let rel_path = format!("features/{sample_id}.slrt");
            write_tensor(&out_dir.join(&rel_path), &featmap)?;
            let (pooled, _) = gmp(&featmap)?;
            pooled_signatures.push((c, pooled));
            entries.push(ManifestEntry {
                sample_id,
                path: rel_path,
                class_id: class_id.clone(),
            });
        }
    }

    let mut correct = 0usize;
    for (c, pooled) in &pooled_signatures {
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for (k, sig) in signatures.iter().enumerate() {
            let dot: f64 = sig.iter().map(|&a| pooled[a] as f64).sum();
            let norm_x: f64 = pooled.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            let norm_p = (sig.len() as f64).sqrt();
            let cos = if norm_x == 0.0 { 0.0 } else { dot / (norm_x * norm_p) };
            if cos > best_cos {
                best_cos = cos;
                best = k;
            }
        }
        if best == *c {
            correct += 1;
        }
    }
    let oracle_accuracy = correct as f64 / pooled_signatures.len() as f64;

    let spc = config.samples_per_class;
    let train_per_class = (spc * 4 / 5).max(1);
    let mut train = Vec::new();
    let mut test_seen = Vec::new();
    let mut test_unseen = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let within_class = i % spc;
        if split.is_seen(&entry.class_id) {
            if within_class < train_per_class {
                train.push(entry.clone());
            } else {
                test_seen.push(entry.clone());
            }
        } else {
            test_unseen.push(entry.clone());
        }
    }
    let mut test = test_seen.clone();
    test.extend(test_unseen.iter().cloned());

    let train_manifest = out_dir.join("train.tsv");
    let test_seen_manifest = out_dir.join("test_seen.tsv");
    let test_unseen_manifest = out_dir.join("test_unseen.tsv");
    let test_manifest = out_dir.join("test.tsv");
    write_manifest(&train_manifest, &train)?;
    if !test_seen.is_empty() {
        write_manifest(&test_seen_manifest, &test_seen)?;
    }
    write_manifest(&test_unseen_manifest, &test_unseen)?;
    write_manifest(&test_manifest, &test)?;

    let oracle_path = out_dir.join("oracle.txt");
    std::fs::write(&oracle_path, format!("oracle_accuracy = {oracle_accuracy}\n"))
        .map_err(|e| Error::file(&oracle_path, e))?;

    Ok(SynthOutput {
        attributes_path,
        split_path,
        train_manifest,
        test_manifest,
        test_seen_manifest,
        test_unseen_manifest,
        oracle_path,
        oracle_accuracy,
        total_samples: entries.len(),
    })
}
