//! Helpers shared by the integration tests.

#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use selar::model::{Aggregation, AttributeMatrix, ProjectionModel, Space};
use selar::tensor::{Matrix, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_featmap(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Tensor {
    let data = (0..m * m * d)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    Tensor::new(vec![m, m, d], data).unwrap()
}

/// Strictly positive rows so normalization never hits a zero vector.
pub fn random_attrs(rng: &mut ChaCha8Rng, classes: usize, l: usize) -> AttributeMatrix {
    let data = (0..classes * l)
        .map(|_| rng.random_range(0.05f32..1.0))
        .collect();
    let ids = (0..classes).map(|i| format!("c{i:03}")).collect();
    AttributeMatrix::new(ids, Matrix::new(classes, l, data).unwrap())
        .unwrap()
        .normalize_rows()
        .unwrap()
}

pub fn random_model(
    rng: &mut ChaCha8Rng,
    l: usize,
    d: usize,
    aggregation: Aggregation,
    space: Space,
    with_bias: bool,
) -> ProjectionModel {
    let weights: Vec<f32> = (0..l * d).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    let bias = with_bias.then(|| (0..l).map(|_| rng.random_range(-0.2f32..0.2)).collect());
    ProjectionModel::new(Matrix::new(l, d, weights).unwrap(), bias, aggregation, space).unwrap()
}
