//! The projection model and the forward pass.
//!
//! A model is a single linear map `W` of shape `[L, D]` (optionally with a
//! bias) that turns `D`-dimensional backbone features into `L` attribute
//! scores. Class logits come from comparing attribute scores against a
//! row-normalized class-attribute matrix `A` of shape `[classes, L]`.
//!
//! Spatial feature maps leave a choice of where to collapse the `H x W` grid:
//!
//! * `Visual` space pools the feature map first, then projects: `z = A W agg(x)`.
//! * `Attribute` space projects every location, pools the resulting attribute
//!   maps, then scores: `z = A agg(W x)`.
//! * `Class` space projects and scores every location, then pools the
//!   per-location logit maps: `z = agg(A W x)`.
//!
//! Under average pooling all three orders give the same logits, since pooling
//! and the linear maps commute. Under max pooling they genuinely differ: the
//! max is taken over different quantities, at possibly different locations.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{gap, gmp, project_1x1, Matrix, Tensor};

/// How a spatial map is collapsed to a single vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    /// Global average pooling.
    Gap,
    /// Global max pooling.
    Gmp,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Gap => "gap",
            Aggregation::Gmp => "gmp",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gap" => Ok(Aggregation::Gap),
            "gmp" => Ok(Aggregation::Gmp),
            other => Err(Error::Parse(format!(
                "unknown aggregation '{other}' (expected 'gap' or 'gmp')"
            ))),
        }
    }
}

/// In which representation the spatial aggregation happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Visual,
    Attribute,
    Class,
}

impl Space {
    pub const ALL: [Space; 3] = [Space::Visual, Space::Attribute, Space::Class];
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Visual => "visual",
            Space::Attribute => "attribute",
            Space::Class => "class",
        })
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Space::Visual),
            "attribute" => Ok(Space::Attribute),
            "class" => Ok(Space::Class),
            other => Err(Error::Parse(format!(
                "unknown space '{other}' (expected 'visual', 'attribute' or 'class')"
            ))),
        }
    }
}

/// Per-class attribute signatures: one row of `L` attribute values per class.
#[derive(Debug, Clone)]
pub struct AttributeMatrix {
    class_ids: Vec<String>,
    index: HashMap<String, usize>,
    values: Matrix,
    normalized: bool,
}

impl AttributeMatrix {
    /// Builds an unnormalized matrix. Class ids must be unique and one row
    /// must exist per id.
    pub fn new(class_ids: Vec<String>, values: Matrix) -> Result<Self> {
        if class_ids.len() != values.rows() {
            return Err(Error::Shape(format!(
                "{} class ids against {} attribute rows",
                class_ids.len(),
                values.rows()
            )));
        }
        let mut index = HashMap::with_capacity(class_ids.len());
        for (i, id) in class_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate class id '{id}'")));
            }
        }
        Ok(AttributeMatrix {
            class_ids,
            index,
            values,
            normalized: false,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.values.rows()
    }

    pub fn num_attributes(&self) -> usize {
        self.values.cols()
    }

    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// The attribute signature of one class.
    pub fn prototype(&self, class: usize) -> &[f32] {
        self.values.row(class)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Returns a copy whose rows have unit L2 norm. A zero row cannot be
    /// normalized and is reported with its class id.
    pub fn normalize_rows(&self) -> Result<AttributeMatrix> {
        let l = self.num_attributes();
        let mut data = Vec::with_capacity(self.values.data().len());
        for (i, id) in self.class_ids.iter().enumerate() {
            let row = self.values.row(i);
            let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Contract(format!(
                    "zero attribute vector for class '{id}'"
                )));
            }
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
        Ok(AttributeMatrix {
            class_ids: self.class_ids.clone(),
            index: self.index.clone(),
            values: Matrix::new(self.num_classes(), l, data)?,
            normalized: true,
        })
    }

    /// Extracts the rows for `ids`, preserving the given order.
    pub fn select(&self, ids: &[String]) -> Result<AttributeMatrix> {
        let l = self.num_attributes();
        let mut data = Vec::with_capacity(ids.len() * l);
        for id in ids {
            let Some(i) = self.class_index(id) else {
                return Err(Error::Contract(format!(
                    "class '{id}' not present in attribute matrix"
                )));
            };
            data.extend_from_slice(self.values.row(i));
        }
        let mut out = AttributeMatrix::new(ids.to_vec(), Matrix::new(ids.len(), l, data)?)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Stacks two matrices, keeping `first` rows before `second` rows.
    pub fn concat(first: &AttributeMatrix, second: &AttributeMatrix) -> Result<AttributeMatrix> {
        if first.num_attributes() != second.num_attributes() {
            return Err(Error::Shape(format!(
                "cannot stack attribute matrices with {} and {} attributes",
                first.num_attributes(),
                second.num_attributes()
            )));
        }
        let mut ids = first.class_ids.clone();
        ids.extend(second.class_ids.iter().cloned());
        let mut data = first.values.data().to_vec();
        data.extend_from_slice(second.values.data());
        let rows = ids.len();
        let mut out = AttributeMatrix::new(ids, Matrix::new(rows, first.num_attributes(), data)?)?;
        out.normalized = first.normalized && second.normalized;
        Ok(out)
    }
}

/// The learned visual-to-attribute projection plus its inference settings.
#[derive(Debug, Clone)]
pub struct ProjectionModel {
    weights: Matrix,
    bias: Option<Vec<f32>>,
    aggregation: Aggregation,
    space: Space,
}

impl ProjectionModel {
    pub fn new(
        weights: Matrix,
        bias: Option<Vec<f32>>,
        aggregation: Aggregation,
        space: Space,
    ) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weights.rows() {
                return Err(Error::Shape(format!(
                    "bias has length {} but weights have {} rows",
                    b.len(),
                    weights.rows()
                )));
            }
        }
        Ok(ProjectionModel {
            weights,
            bias,
            aggregation,
            space,
        })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub(crate) fn bias_mut(&mut self) -> Option<&mut Vec<f32>> {
        self.bias.as_mut()
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// Number of attributes `L`.
    pub fn attr_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Backbone feature dimension `D`.
    pub fn feat_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Everything the forward pass computed, kept for the backward pass and for
/// inspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// One score per class, in attribute-matrix row order.
    pub logits: Vec<f32>,
    /// The pooled vector: features (visual), attribute scores (attribute) or
    /// logits (class), depending on the space.
    pub aggregated: Vec<f32>,
    /// Flat spatial index of each pooled maximum; present exactly when the
    /// aggregation is max pooling.
    pub arg_locations: Option<Vec<usize>>,
    /// Per-location attribute scores `[H, W, L]`, kept when the forward pass
    /// computed them (attribute and class spaces).
    pub attribute_maps: Option<Tensor>,
}

/// Per-location attribute scores for a feature map: `[H, W, D] -> [H, W, L]`.
pub fn attribute_maps(featmap: &Tensor, model: &ProjectionModel) -> Result<Tensor> {
    project_1x1(featmap, model.weights(), model.bias())
}

/// Runs the forward pass of `model` on one feature map against `attrs`.
///
/// `attrs` must be row-normalized. The logits come out in the row order of
/// `attrs`, so `logits[i]` scores class `attrs.class_ids()[i]`.
pub fn forward(
    featmap: &Tensor,
    model: &ProjectionModel,
    attrs: &AttributeMatrix,
) -> Result<ForwardTrace> {
    let (_, _, d) = featmap.spatial3()?;
    if d != model.feat_dim() {
        return Err(Error::Shape(format!(
            "feature map has {d} channels but model expects {}",
            model.feat_dim()
        )));
    }
    if attrs.num_attributes() != model.attr_dim() {
        return Err(Error::Shape(format!(
            "attribute matrix has {} attributes but model produces {}",
            attrs.num_attributes(),
            model.attr_dim()
        )));
    }
    if !attrs.is_normalized() {
        return Err(Error::Contract(
            "attribute matrix must be row-normalized before scoring".into(),
        ));
    }

    match model.space() {
        Space::Visual => {
            let (pooled, arg_locations) = match model.aggregation() {
                Aggregation::Gap => (gap(featmap)?, None),
                Aggregation::Gmp => {
                    let (v, locs) = gmp(featmap)?;
                    (v, Some(locs))
                }
            };
            let mut scores = model.weights().matvec(&pooled)?;
            if let Some(b) = model.bias() {
                for (s, &bv) in scores.iter_mut().zip(b) {
                    *s += bv;
                }
            }
            let logits = attrs.values().matvec(&scores)?;
            Ok(ForwardTrace {
                logits,
                aggregated: pooled,
                arg_locations,
                attribute_maps: None,
            })
        }
        Space::Attribute => {
            let amap = attribute_maps(featmap, model)?;
            let (scores, arg_locations) = match model.aggregation() {
                Aggregation::Gap => (gap(&amap)?, None),
                Aggregation::Gmp => {
                    let (a, locs) = gmp(&amap)?;
                    (a, Some(locs))
                }
            };
            let logits = attrs.values().matvec(&scores)?;
            Ok(ForwardTrace {
                logits,
                aggregated: scores,
                arg_locations,
                attribute_maps: Some(amap),
            })
        }
        Space::Class => {
            let amap = attribute_maps(featmap, model)?;
            let zmap = project_1x1(&amap, attrs.values(), None)?;
            let (logits, arg_locations) = match model.aggregation() {
                Aggregation::Gap => (gap(&zmap)?, None),
                Aggregation::Gmp => {
                    let (z, locs) = gmp(&zmap)?;
                    (z, Some(locs))
                }
            };
            Ok(ForwardTrace {
                logits: logits.clone(),
                aggregated: logits,
                arg_locations,
                attribute_maps: Some(amap),
            })
        }
    }
}

/// Picks the highest-scoring class id. Ties resolve to the earliest row.
pub fn predict<'a>(logits: &[f32], attrs: &'a AttributeMatrix) -> Result<&'a str> {
    if logits.len() != attrs.num_classes() {
        return Err(Error::Shape(format!(
            "{} logits against {} classes",
            logits.len(),
            attrs.num_classes()
        )));
    }
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(&attrs.class_ids()[best])
}
