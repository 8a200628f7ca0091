//! Zero-shot learning over precomputed feature maps with per-location
//! attribute scoring.
//!
//! The model is deliberately small: a single linear projection from backbone
//! features to attribute scores, scored against class attribute signatures.
//! What it adds over the classic pipeline is the choice of *where* to
//! collapse the spatial grid of a feature map: in visual space, in attribute
//! space or in class space, with average or max pooling. Keeping the
//! projection local (a 1x1 convolution) means every attribute retains a
//! spatial response map that can be rendered and inspected.
//!
//! Modules:
//!
//! * [`tensor`]: dense tensors, the 1x1 projection, average and max pooling
//! * [`model`]: attribute matrices, the projection model, the forward pass
//! * [`train`]: cross-entropy training with SGD and a gradient checker
//! * [`eval`]: zero-shot and generalized zero-shot protocols
//! * [`io`]: the SLRT tensor format, manifests, attribute and split files,
//!   model checkpoints
//! * [`synth`]: planted synthetic datasets with a known solution
//! * [`viz`]: attribute heatmap export as PGM images

pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use eval::{evaluate_gzsl, evaluate_zsl, harmonic_mean, per_class_top1, GzslReport};
pub use io::{LoadedDataset, LoadedModel, ManifestEntry, Sample, SplitSpec};
pub use model::{
    attribute_maps, forward, predict, Aggregation, AttributeMatrix, ForwardTrace, ProjectionModel,
    Space,
};
pub use synth::{synth_generate, SynthConfig, SynthOutput};
pub use tensor::{gap, gmp, project_1x1, Matrix, Tensor};
pub use train::{
    backward, cross_entropy, grad_check, sgd_step, softmax, train, GradCheckReport, GradientSet,
    TrainConfig,
};
pub use viz::{export_heatmaps, AttributeSelection, HeatmapExportConfig, Interpolation};
