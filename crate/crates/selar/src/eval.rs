//! Zero-shot and generalized zero-shot evaluation.
//!
//! All accuracies are per-class: each class contributes its own top-1
//! accuracy and classes are averaged with equal weight, so skewed test sets
//! cannot inflate the score. The generalized protocol scores every sample
//! against the union of seen and unseen classes and summarizes the two
//! partitions with their harmonic mean.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{Sample, SplitSpec};
use crate::model::{forward, predict, AttributeMatrix, ProjectionModel};

/// Generalized zero-shot metrics. Accuracies are percentages.
#[derive(Debug, Clone)]
pub struct GzslReport {
    pub acc_unseen: f64,
    pub acc_seen: f64,
    pub harmonic_mean: f64,
    /// Seen over unseen accuracy; infinite when nothing unseen is correct.
    pub bias_ratio: f64,
    /// Top-1 accuracy of every evaluated class, as a fraction in [0, 1].
    pub per_class_accuracy: BTreeMap<String, f64>,
}

impl GzslReport {
    /// Human-readable block, one `key=value` per line, accuracies rounded to
    /// one decimal as usual for these benchmarks.
    pub fn key_value_block(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("acc_unseen={:.1}\n", self.acc_unseen));
        out.push_str(&format!("acc_seen={:.1}\n", self.acc_seen));
        out.push_str(&format!("harmonic_mean={:.1}\n", self.harmonic_mean));
        out.push_str(&format!("bias_ratio={:.2}\n", self.bias_ratio));
        for (id, acc) in &self.per_class_accuracy {
            out.push_str(&format!("per_class.{id}={acc:.4}\n"));
        }
        out
    }

    /// Machine-readable block: one `name value` pair per line, full
    /// precision, stable order.
    pub fn porcelain(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("acc_unseen {}\n", self.acc_unseen));
        out.push_str(&format!("acc_seen {}\n", self.acc_seen));
        out.push_str(&format!("harmonic_mean {}\n", self.harmonic_mean));
        out.push_str(&format!("bias_ratio {}\n", self.bias_ratio));
        for (id, acc) in &self.per_class_accuracy {
            out.push_str(&format!("per_class.{id} {acc}\n"));
        }
        out
    }
}

/// Mean over classes of each class's own top-1 accuracy, as a fraction.
///
/// `predictions` pairs `(predicted, actual)` class ids. Every class in
/// `class_set` must receive at least one sample and every actual label must
/// be in `class_set`; predicted ids outside the set simply count as wrong.
pub fn per_class_top1(predictions: &[(String, String)], class_set: &[String]) -> Result<f64> {
    if class_set.is_empty() {
        return Err(Error::Eval("empty evaluation class set".into()));
    }
    let mut tallies: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for id in class_set {
        if tallies.insert(id, (0, 0)).is_some() {
            return Err(Error::Eval(format!("duplicate class '{id}' in class set")));
        }
    }
    for (predicted, actual) in predictions {
        let Some((correct, total)) = tallies.get_mut(actual.as_str()) else {
            return Err(Error::Eval(format!(
                "sample labeled '{actual}' is outside the evaluation class set"
            )));
        };
        *total += 1;
        if predicted == actual {
            *correct += 1;
        }
    }
    let mut sum = 0.0f64;
    for (id, (correct, total)) in &tallies {
        if *total == 0 {
            return Err(Error::Eval(format!("class '{id}' has no test samples")));
        }
        sum += *correct as f64 / *total as f64;
    }
    Ok(sum / class_set.len() as f64)
}

/// Harmonic mean of two accuracies: `2*u*s / (u + s)`, defined as 0 when
/// either accuracy is 0.
pub fn harmonic_mean(acc_unseen: f64, acc_seen: f64) -> f64 {
    if acc_unseen == 0.0 || acc_seen == 0.0 {
        return 0.0;
    }
    2.0 * acc_unseen * acc_seen / (acc_unseen + acc_seen)
}

fn classify_all(
    model: &ProjectionModel,
    samples: &[Sample],
    attrs: &AttributeMatrix,
) -> Result<Vec<(String, String)>> {
    samples
        .par_iter()
        .map(|s| {
            let trace = forward(&s.featmap, model, attrs)?;
            let predicted = predict(&trace.logits, attrs)?;
            Ok((predicted.to_string(), s.class_id.clone()))
        })
        .collect()
}

/// Classic zero-shot accuracy: scores test samples against unseen-class
/// prototypes only and averages per class. Returns a fraction in [0, 1].
///
/// Every sample must be labeled with a class of `attrs_unseen`.
pub fn evaluate_zsl(
    model: &ProjectionModel,
    samples: &[Sample],
    attrs_unseen: &AttributeMatrix,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Eval("no test samples".into()));
    }
    for s in samples {
        if !attrs_unseen.contains(&s.class_id) {
            return Err(Error::Eval(format!(
                "sample '{}' labeled '{}' is not an unseen class",
                s.id, s.class_id
            )));
        }
    }
    let predictions = classify_all(model, samples, attrs_unseen)?;
    per_class_top1(&predictions, attrs_unseen.class_ids())
}

/// Generalized zero-shot evaluation: every sample is scored against the full
/// seen-plus-unseen class set, then the seen and unseen partitions are
/// summarized separately.
///
/// `attrs_joint` must cover every class in `split`, and every test label must
/// belong to the split. Both partitions must be represented in `samples`.
pub fn evaluate_gzsl(
    model: &ProjectionModel,
    samples: &[Sample],
    attrs_joint: &AttributeMatrix,
    split: &SplitSpec,
) -> Result<GzslReport> {
    if samples.is_empty() {
        return Err(Error::Eval("no test samples".into()));
    }
    for id in split.seen_classes().iter().chain(split.unseen_classes()) {
        if !attrs_joint.contains(id) {
            return Err(Error::Eval(format!(
                "split class '{id}' missing from the attribute matrix"
            )));
        }
    }
    for s in samples {
        if !split.is_seen(&s.class_id) && !split.is_unseen(&s.class_id) {
            return Err(Error::Eval(format!(
                "sample '{}' labeled '{}' is in neither split partition",
                s.id, s.class_id
            )));
        }
    }
    let predictions = classify_all(model, samples, attrs_joint)?;
    let (seen_preds, unseen_preds): (Vec<_>, Vec<_>) = predictions
        .into_iter()
        .partition(|(_, actual)| split.is_seen(actual));
    if seen_preds.is_empty() || unseen_preds.is_empty() {
        return Err(Error::Eval(
            "generalized evaluation needs samples from both partitions".into(),
        ));
    }

    let acc_seen = per_class_top1(&seen_preds, split.seen_classes())?;
    let acc_unseen = per_class_top1(&unseen_preds, split.unseen_classes())?;

    let mut per_class_accuracy = BTreeMap::new();
    for (preds, class_set) in [
        (&seen_preds, split.seen_classes()),
        (&unseen_preds, split.unseen_classes()),
    ] {
        for id in class_set {
            let (mut correct, mut total) = (0usize, 0usize);
            for (p, a) in preds.iter() {
                if a == id {
                    total += 1;
                    if p == a {
                        correct += 1;
                    }
                }
            }
            per_class_accuracy.insert(id.clone(), correct as f64 / total as f64);
        }
    }

    let u = acc_unseen * 100.0;
    let s = acc_seen * 100.0;
    Ok(GzslReport {
        acc_unseen: u,
        acc_seen: s,
        harmonic_mean: harmonic_mean(u, s),
        bias_ratio: if u > 0.0 { s / u } else { f64::INFINITY },
        per_class_accuracy,
    })
}
