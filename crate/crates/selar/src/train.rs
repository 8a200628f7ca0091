//! Cross-entropy training of the projection and a finite-difference checker
//! for the hand-written backward pass.
//!
//! The only trainable parameters are the projection weights `W` (and an
//! optional bias). The attribute matrix stays fixed, so the backward pass has
//! closed forms for every space and aggregation:
//!
//! * `da = Aᵀ (softmax(z) - onehot(y))` is the gradient at the attribute
//!   scores in every configuration, and `db = da`.
//! * Average pooling commutes with the projection, so all three spaces share
//!   `dW = outer(da, gap(x))`.
//! * Max pooling routes gradient only through winning locations: the pooled
//!   feature vector (visual), one location per attribute row (attribute), or
//!   one location per class, weighted by `dz` and `A` (class).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::Sample;
use crate::model::{forward, Aggregation, AttributeMatrix, ProjectionModel, Space};
use crate::tensor::{Matrix, Tensor};

/// Optimizer and schedule settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplier applied to the learning rate once `decay_epoch` epochs have
    /// completed.
    pub decay_factor: f64,
    pub decay_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weights initialize uniformly in `±scale/sqrt(D)`.
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_epoch: 15,
            epochs: 30,
            batch_size: 64,
            seed: 42,
            weight_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Contract(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Contract(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Contract(format!(
                "decay factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        if !(self.weight_init_scale.is_finite() && self.weight_init_scale > 0.0) {
            return Err(Error::Contract(format!(
                "weight init scale must be positive, got {}",
                self.weight_init_scale
            )));
        }
        Ok(())
    }
}

/// Gradients (or optimizer velocity) shaped like a model's parameters.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub d_weights: Matrix,
    pub d_bias: Option<Vec<f32>>,
}

impl GradientSet {
    pub fn zeros_like(model: &ProjectionModel) -> Result<GradientSet> {
        Ok(GradientSet {
            d_weights: Matrix::zeros(model.attr_dim(), model.feat_dim())?,
            d_bias: model.bias().map(|b| vec![0.0; b.len()]),
        })
    }
}

/// Numerically stable softmax. Computed in f64 with the maximum subtracted.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    softmax_f64(&widen(logits))
        .into_iter()
        .map(|p| p as f32)
        .collect()
}

fn widen(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of the softmax of `logits` against a hard label.
pub fn cross_entropy(logits: &[f32], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Contract(format!(
            "label index {label} out of range for {} classes",
            logits.len()
        )));
    }
    let z = widen(logits);
    Ok(log_sum_exp(&z) - z[label])
}

/// Gradient of the cross-entropy loss with respect to `W` and the bias, for
/// one sample. `trace` must come from [`forward`] on the same inputs.
pub fn backward(
    featmap: &Tensor,
    model: &ProjectionModel,
    attrs: &AttributeMatrix,
    trace: &crate::model::ForwardTrace,
    label: usize,
) -> Result<GradientSet> {
    let (h, w, d) = featmap.spatial3()?;
    let l = model.attr_dim();
    let classes = attrs.num_classes();
    if d != model.feat_dim() {
        return Err(Error::Shape(format!(
            "feature map has {d} channels but model expects {}",
            model.feat_dim()
        )));
    }
    if attrs.num_attributes() != l {
        return Err(Error::Shape(format!(
            "attribute matrix has {} attributes but model produces {l}",
            attrs.num_attributes()
        )));
    }
    if trace.logits.len() != classes {
        return Err(Error::Shape(format!(
            "trace carries {} logits but attribute matrix has {classes} classes",
            trace.logits.len()
        )));
    }
    if label >= classes {
        return Err(Error::Contract(format!(
            "label index {label} out of range for {classes} classes"
        )));
    }
    let arg_len = match model.space() {
        Space::Visual => d,
        Space::Attribute => l,
        Space::Class => classes,
    };
    let locations = match (model.aggregation(), &trace.arg_locations) {
        (Aggregation::Gap, None) => None,
        (Aggregation::Gmp, Some(locs)) => {
            if locs.len() != arg_len || locs.iter().any(|&loc| loc >= h * w) {
                return Err(Error::Contract(
                    "trace arg locations do not match the model configuration".into(),
                ));
            }
            Some(locs.as_slice())
        }
        _ => {
            return Err(Error::Contract(
                "trace aggregation does not match the model configuration".into(),
            ));
        }
    };

    let mut dz = softmax_f64(&widen(&trace.logits));
    dz[label] -= 1.0;
    let da = attrs.values().t_matvec_f64(&dz)?;

    let fm = featmap.data();
    let mut dw = vec![0.0f64; l * d];
    match (model.aggregation(), model.space()) {
        (Aggregation::Gap, _) => {
            let n = (h * w) as f64;
            let mut xbar = vec![0.0f64; d];
            for loc in 0..h * w {
                for k in 0..d {
                    xbar[k] += fm[loc * d + k] as f64;
                }
            }
            for v in &mut xbar {
                *v /= n;
            }
            for li in 0..l {
                for k in 0..d {
                    dw[li * d + k] = da[li] * xbar[k];
                }
            }
        }
        (Aggregation::Gmp, Space::Visual) => {
            if trace.aggregated.len() != d {
                return Err(Error::Contract(
                    "trace pooled vector does not match the model configuration".into(),
                ));
            }
            for li in 0..l {
                for k in 0..d {
                    dw[li * d + k] = da[li] * trace.aggregated[k] as f64;
                }
            }
        }
        (Aggregation::Gmp, Space::Attribute) => {
            let locs = locations.unwrap();
            for li in 0..l {
                let x = &fm[locs[li] * d..(locs[li] + 1) * d];
                for k in 0..d {
                    dw[li * d + k] = da[li] * x[k] as f64;
                }
            }
        }
        (Aggregation::Gmp, Space::Class) => {
            let locs = locations.unwrap();
            let a = attrs.values();
            for i in 0..classes {
                let x = &fm[locs[i] * d..(locs[i] + 1) * d];
                let dzi = dz[i];
                if dzi == 0.0 {
                    continue;
                }
                for li in 0..l {
                    let coef = dzi * a.get(i, li) as f64;
                    for k in 0..d {
                        dw[li * d + k] += coef * x[k] as f64;
                    }
                }
            }
        }
    }

    Ok(GradientSet {
        d_weights: Matrix::new(l, d, dw.into_iter().map(|v| v as f32).collect())?,
        d_bias: model
            .bias()
            .map(|_| da.iter().map(|&v| v as f32).collect()),
    })
}

/// One SGD step with classical momentum:
/// `v <- momentum * v + g; w <- w - lr * v`.
pub fn sgd_step(
    model: &mut ProjectionModel,
    grads: &GradientSet,
    velocity: &mut GradientSet,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    let (l, d) = (model.attr_dim(), model.feat_dim());
    for (name, set) in [("gradient", grads as &GradientSet), ("velocity", velocity)] {
        if set.d_weights.rows() != l || set.d_weights.cols() != d {
            return Err(Error::Shape(format!(
                "{name} weights are {}x{} but model is {l}x{d}",
                set.d_weights.rows(),
                set.d_weights.cols()
            )));
        }
        if set.d_bias.is_some() != model.bias().is_some() {
            return Err(Error::Shape(format!(
                "{name} bias presence does not match the model"
            )));
        }
    }
    let vw = velocity.d_weights.data_mut();
    let gw = grads.d_weights.data();
    let w = model.weights_mut().data_mut();
    for i in 0..w.len() {
        let v = momentum * vw[i] as f64 + gw[i] as f64;
        vw[i] = v as f32;
        w[i] = (w[i] as f64 - learning_rate * v) as f32;
    }
    if let (Some(b), Some(vb), Some(gb)) = (model.bias_mut(), &mut velocity.d_bias, &grads.d_bias) {
        for i in 0..b.len() {
            let v = momentum * vb[i] as f64 + gb[i] as f64;
            vb[i] = v as f32;
            b[i] = (b[i] as f64 - learning_rate * v) as f32;
        }
    }
    Ok(())
}

/// Trains a projection from scratch on labeled feature maps.
///
/// `attrs_seen` must be row-normalized and cover every training label.
/// Returns the trained model and the mean per-sample loss of each epoch.
/// Identical inputs and seed give bit-identical weights, independent of the
/// rayon thread count: batches are reduced in sample order.
pub fn train(
    samples: &[Sample],
    attrs_seen: &AttributeMatrix,
    aggregation: Aggregation,
    space: Space,
    with_bias: bool,
    config: &TrainConfig,
) -> Result<(ProjectionModel, Vec<f64>)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("no training samples".into()));
    }
    if !attrs_seen.is_normalized() {
        return Err(Error::Contract(
            "attribute matrix must be row-normalized before training".into(),
        ));
    }
    let shape = samples[0].featmap.shape().to_vec();
    let (_, _, d) = samples[0].featmap.spatial3()?;
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if s.featmap.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "sample '{}' has feature shape {:?}, expected {:?}",
                s.id,
                s.featmap.shape(),
                shape
            )));
        }
        labels.push(attrs_seen.class_index(&s.class_id).ok_or_else(|| {
            Error::Contract(format!(
                "sample '{}' labeled with unknown class '{}'",
                s.id, s.class_id
            ))
        })?);
    }

    let l = attrs_seen.num_attributes();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = (config.weight_init_scale / (d as f64).sqrt()) as f32;
    let wdata: Vec<f32> = (0..l * d).map(|_| rng.random_range(-scale..=scale)).collect();
    let bias = with_bias.then(|| vec![0.0f32; l]);
    let mut model = ProjectionModel::new(Matrix::new(l, d, wdata)?, bias, aggregation, space)?;
    let mut velocity = GradientSet::zeros_like(&model)?;

    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = if epoch >= config.decay_epoch {
            config.learning_rate * config.decay_factor
        } else {
            config.learning_rate
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let per_sample: Vec<(f64, GradientSet)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let trace = forward(&s.featmap, &model, attrs_seen)?;
                    let loss = cross_entropy(&trace.logits, labels[i])?;
                    let grads = backward(&s.featmap, &model, attrs_seen, &trace, labels[i])?;
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;

            let inv = 1.0f64 / batch.len() as f64;
            let mut wacc = vec![0.0f64; l * d];
            let mut bacc = model.bias().map(|b| vec![0.0f64; b.len()]);
            for (loss, g) in &per_sample {
                loss_sum += loss;
                for (acc, &v) in wacc.iter_mut().zip(g.d_weights.data()) {
                    *acc += v as f64;
                }
                if let (Some(bacc), Some(gb)) = (&mut bacc, &g.d_bias) {
                    for (acc, &v) in bacc.iter_mut().zip(gb) {
                        *acc += v as f64;
                    }
                }
            }
            let mean = GradientSet {
                d_weights: Matrix::new(l, d, wacc.into_iter().map(|v| (v * inv) as f32).collect())?,
                d_bias: bacc.map(|b| b.into_iter().map(|v| (v * inv) as f32).collect()),
            };
            sgd_step(&mut model, &mean, &mut velocity, lr, config.momentum)?;
        }
        history.push(loss_sum / n as f64);
    }
    Ok((model, history))
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Relative error of each checked parameter entry, in check order.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub entries_checked: usize,
    /// Entries excluded because the perturbation flipped a pooling argmax,
    /// putting the loss on a kink where the two-sided difference is invalid.
    pub flagged_kinks: usize,
}

/// When a model has more parameter entries than this, the checker probes an
/// evenly strided subset instead of every entry.
const GRAD_CHECK_FULL_LIMIT: usize = 1024;

/// Compares the analytic gradient against central differences of an
/// independent double-precision implementation of the loss.
///
/// Each checked entry is perturbed by `±h`; entries where the perturbation
/// changes a max-pooling argmax are counted in `flagged_kinks` and excluded
/// from the error statistics.
pub fn grad_check(
    model: &ProjectionModel,
    featmap: &Tensor,
    label: usize,
    attrs: &AttributeMatrix,
    h: f64,
) -> Result<GradCheckReport> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Contract(format!(
            "step size must be positive, got {h}"
        )));
    }
    let trace = forward(featmap, model, attrs)?;
    let grads = backward(featmap, model, attrs, &trace, label)?;

    let l = model.attr_dim();
    let d = model.feat_dim();
    let mut weights: Vec<f64> = model.weights().data().iter().map(|&v| v as f64).collect();
    let mut bias: Option<Vec<f64>> = model.bias().map(widen);
    let scene = F64Scene::new(featmap, attrs, model.aggregation(), model.space(), label)?;

    let total = l * d + bias.as_ref().map_or(0, |b| b.len());
    let stride = if total <= GRAD_CHECK_FULL_LIMIT {
        1
    } else {
        total.div_ceil(GRAD_CHECK_FULL_LIMIT)
    };

    let mut rel_errors = Vec::new();
    let mut flagged = 0usize;
    let mut idx = 0usize;
    while idx < total {
        let analytic = if idx < l * d {
            grads.d_weights.data()[idx] as f64
        } else {
            grads.d_bias.as_ref().unwrap()[idx - l * d] as f64
        };
        let entry = |weights: &mut Vec<f64>, bias: &mut Option<Vec<f64>>, delta: f64| {
            if idx < l * d {
                weights[idx] += delta;
            } else {
                bias.as_mut().unwrap()[idx - l * d] += delta;
            }
        };
        entry(&mut weights, &mut bias, h);
        let (loss_plus, locs_plus) = scene.loss(&weights, bias.as_deref())?;
        entry(&mut weights, &mut bias, -2.0 * h);
        let (loss_minus, locs_minus) = scene.loss(&weights, bias.as_deref())?;
        entry(&mut weights, &mut bias, h);

        if locs_plus != locs_minus {
            flagged += 1;
        } else {
            let numeric = (loss_plus - loss_minus) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            rel_errors.push((analytic - numeric).abs() / denom);
        }
        idx += stride;
    }

    let max_rel_error = rel_errors.iter().cloned().fold(0.0f64, f64::max);
    Ok(GradCheckReport {
        entries_checked: rel_errors.len(),
        max_rel_error,
        rel_errors,
        flagged_kinks: flagged,
    })
}

/// A double-precision re-implementation of the forward loss, independent of
/// the f32 pipeline, used as the finite-difference oracle.
struct F64Scene {
    fm: Vec<f64>,
    attrs: Vec<f64>,
    h: usize,
    w: usize,
    d: usize,
    l: usize,
    classes: usize,
    aggregation: Aggregation,
    space: Space,
    label: usize,
}

impl F64Scene {
    fn new(
        featmap: &Tensor,
        attrs: &AttributeMatrix,
        aggregation: Aggregation,
        space: Space,
        label: usize,
    ) -> Result<F64Scene> {
        let (h, w, d) = featmap.spatial3()?;
        if label >= attrs.num_classes() {
            return Err(Error::Contract(format!(
                "label index {label} out of range for {} classes",
                attrs.num_classes()
            )));
        }
        Ok(F64Scene {
            fm: widen(featmap.data()),
            attrs: widen(attrs.values().data()),
            h,
            w,
            d,
            l: attrs.num_attributes(),
            classes: attrs.num_classes(),
            aggregation,
            space,
            label,
        })
    }

    /// Loss plus the argmax locations the pooling chose (empty under GAP),
    /// so the caller can detect kink crossings.
    fn loss(&self, weights: &[f64], bias: Option<&[f64]>) -> Result<(f64, Vec<usize>)> {
        let locs_count = self.h * self.w;
        let project = |loc: usize, li: usize| -> f64 {
            let x = &self.fm[loc * self.d..(loc + 1) * self.d];
            let row = &weights[li * self.d..(li + 1) * self.d];
            let mut acc: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            if let Some(b) = bias {
                acc += b[li];
            }
            acc
        };
        let score = |attr_vec: &[f64], class: usize| -> f64 {
            self.attrs[class * self.l..(class + 1) * self.l]
                .iter()
                .zip(attr_vec)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (logits, locs) = match (self.space, self.aggregation) {
            (Space::Visual, agg) => {
                let mut pooled = vec![f64::NEG_INFINITY; self.d];
                let mut locs = vec![0usize; self.d];
                match agg {
                    Aggregation::Gap => {
                        pooled.fill(0.0);
                        for loc in 0..locs_count {
                            let row = &self.fm[loc * self.d..(loc + 1) * self.d];
                            for (slot, &v) in pooled.iter_mut().zip(row) {
                                *slot += v;
                            }
                        }
                        for v in &mut pooled {
                            *v /= locs_count as f64;
                        }
                        locs.clear();
                    }
                    Aggregation::Gmp => {
                        for loc in 0..locs_count {
                            for k in 0..self.d {
                                let v = self.fm[loc * self.d + k];
                                if v > pooled[k] {
                                    pooled[k] = v;
                                    locs[k] = loc;
                                }
                            }
                        }
                    }
                }
                let a: Vec<f64> = (0..self.l)
                    .map(|li| {
                        let row = &weights[li * self.d..(li + 1) * self.d];
                        let mut acc: f64 = row.iter().zip(&pooled).map(|(x, y)| x * y).sum();
                        if let Some(b) = bias {
                            acc += b[li];
                        }
                        acc
                    })
                    .collect();
                let logits = (0..self.classes).map(|c| score(&a, c)).collect();
                (logits, locs)
            }
            (Space::Attribute, agg) => {
                let mut pooled = vec![f64::NEG_INFINITY; self.l];
                let mut locs = vec![0usize; self.l];
                match agg {
                    Aggregation::Gap => {
                        pooled.fill(0.0);
                        for loc in 0..locs_count {
                            for (li, slot) in pooled.iter_mut().enumerate() {
                                *slot += project(loc, li);
                            }
                        }
                        for v in &mut pooled {
                            *v /= locs_count as f64;
                        }
                        locs.clear();
                    }
                    Aggregation::Gmp => {
                        for loc in 0..locs_count {
                            for li in 0..self.l {
                                let v = project(loc, li);
                                if v > pooled[li] {
                                    pooled[li] = v;
                                    locs[li] = loc;
                                }
                            }
                        }
                    }
                }
                let logits = (0..self.classes).map(|c| score(&pooled, c)).collect();
                (logits, locs)
            }
            (Space::Class, agg) => {
                let mut pooled = vec![f64::NEG_INFINITY; self.classes];
                let mut locs = vec![0usize; self.classes];
                let mut attr_vec = vec![0.0f64; self.l];
                match agg {
                    Aggregation::Gap => {
                        pooled.fill(0.0);
                        for loc in 0..locs_count {
                            for (li, slot) in attr_vec.iter_mut().enumerate() {
                                *slot = project(loc, li);
                            }
                            for (c, slot) in pooled.iter_mut().enumerate() {
                                *slot += score(&attr_vec, c);
                            }
                        }
                        for v in &mut pooled {
                            *v /= locs_count as f64;
                        }
                        locs.clear();
                    }
                    Aggregation::Gmp => {
                        for loc in 0..locs_count {
                            for (li, slot) in attr_vec.iter_mut().enumerate() {
                                *slot = project(loc, li);
                            }
                            for c in 0..self.classes {
                                let v = score(&attr_vec, c);
                                if v > pooled[c] {
                                    pooled[c] = v;
                                    locs[c] = loc;
                                }
                            }
                        }
                    }
                }
                (pooled, locs)
            }
        };
        Ok((log_sum_exp(&logits) - logits[self.label], locs))
    }
}
