//! Dense tensors and the spatial primitives the model is built from.
//!
//! Feature maps are stored row-major with channels last: a map of shape
//! `[H, W, D]` keeps the `D` channel values of one spatial location
//! contiguous. Values are `f32`; reductions and dot products accumulate in
//! `f64` before rounding back.

use crate::error::{Error, Result};

/// A dense row-major tensor of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor from a shape and a flat row-major buffer.
    ///
    /// Every dimension must be at least 1 and the buffer length must equal
    /// the product of the dimensions.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Shape("tensor must have at least one dimension".into()));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in shape {shape:?}")));
        }
        let count = element_count(&shape)?;
        if data.len() != count {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {count} values but buffer has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// An all-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let count = element_count(&shape)?;
        Tensor::new(shape, vec![0.0; count])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of stored values.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as a spatial map and returns `(h, w, c)`.
    pub fn spatial3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Shape(format!(
                "expected a rank-3 [H, W, C] map, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Value at `(row, col, channel)` of a rank-3 map.
    pub fn at3(&self, row: usize, col: usize, channel: usize) -> f32 {
        let (_, w, c) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(row * w + col) * c + channel]
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("invalid shape {shape:?}")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimensionOverflow)
}

/// A dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix dimensions {rows}x{cols} must be positive")));
        }
        let count = rows
            .checked_mul(cols)
            .ok_or(Error::DimensionOverflow)?;
        if data.len() != count {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix holds {count} values but buffer has {}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        let count = rows.checked_mul(cols).ok_or(Error::DimensionOverflow)?;
        Matrix::new(rows, cols, vec![0.0; count])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// `self * x`, accumulated in f64.
    pub fn matvec(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec: {}x{} matrix against vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut acc = 0.0f64;
                for k in 0..self.cols {
                    acc += row[k] as f64 * x[k] as f64;
                }
                acc as f32
            })
            .collect())
    }

    /// `selfᵀ * y` in f64, used by the backward pass.
    pub(crate) fn t_matvec_f64(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "transposed matvec: {}x{} matrix against vector of length {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        let mut out = vec![0.0f64; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            let row = self.row(r);
            for (slot, &v) in out.iter_mut().zip(row) {
                *slot += v as f64 * yr;
            }
        }
        Ok(out)
    }
}

/// Applies a linear map independently at every spatial location.
///
/// For a feature map of shape `[H, W, D]` and weights of shape `[L, D]`,
/// produces a map of shape `[H, W, L]` where the vector at each location is
/// `weights * x + bias`. This is exactly a 1x1 convolution.
pub fn project_1x1(featmap: &Tensor, weights: &Matrix, bias: Option<&[f32]>) -> Result<Tensor> {
    let (h, w, d) = featmap.spatial3()?;
    if weights.cols() != d {
        return Err(Error::Shape(format!(
            "project_1x1: feature map {:?} has {d} channels but weights are {}x{}",
            featmap.shape(),
            weights.rows(),
            weights.cols()
        )));
    }
    let l = weights.rows();
    if let Some(b) = bias {
        if b.len() != l {
            return Err(Error::Shape(format!(
                "project_1x1: bias has length {} but weights have {l} rows",
                b.len()
            )));
        }
    }
    let mut out = vec![0.0f32; h * w * l];
    for loc in 0..h * w {
        let x = &featmap.data()[loc * d..(loc + 1) * d];
        for li in 0..l {
            let row = weights.row(li);
            let mut acc = 0.0f64;
            for k in 0..d {
                acc += row[k] as f64 * x[k] as f64;
            }
            if let Some(b) = bias {
                acc += b[li] as f64;
            }
            out[loc * l + li] = acc as f32;
        }
    }
    Tensor::new(vec![h, w, l], out)
}

/// Global average pooling: the per-channel mean over all spatial locations.
pub fn gap(map: &Tensor) -> Result<Vec<f32>> {
    let (h, w, c) = map.spatial3()?;
    let n = (h * w) as f64;
    let mut acc = vec![0.0f64; c];
    for loc in 0..h * w {
        let x = &map.data()[loc * c..(loc + 1) * c];
        for ch in 0..c {
            acc[ch] += x[ch] as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Global max pooling: the per-channel maximum and where it was attained.
///
/// Returns `(values, locations)` where `locations[ch]` is the flat row-major
/// spatial index `row * w + col` of the chosen maximum. Ties resolve to the
/// lowest flat index.
pub fn gmp(map: &Tensor) -> Result<(Vec<f32>, Vec<usize>)> {
    let (h, w, c) = map.spatial3()?;
    let mut vals = map.data()[..c].to_vec();
    let mut locs = vec![0usize; c];
    for loc in 1..h * w {
        let x = &map.data()[loc * c..(loc + 1) * c];
        for ch in 0..c {
            if x[ch] > vals[ch] {
                vals[ch] = x[ch];
                locs[ch] = loc;
            }
        }
    }
    Ok((vals, locs))
}
