//! File formats: SLRT tensors, dataset manifests, attribute tables, class
//! splits and model checkpoints.
//!
//! SLRT is a minimal binary tensor container. All integers are little-endian
//! 32-bit unsigned, payload values are little-endian `f32`, row-major:
//!
//! ```text
//! "SLRT"  version=1  ndim  dim[0] .. dim[ndim-1]  value[0] .. value[n-1]
//! ```
//!
//! The text formats are line-oriented; blank lines and lines starting with
//! `#` are ignored everywhere.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Aggregation, AttributeMatrix, ProjectionModel, Space};
use crate::tensor::{Matrix, Tensor};

pub const SLRT_MAGIC: [u8; 4] = *b"SLRT";
pub const SLRT_VERSION: u32 = 1;
const SLRT_MAX_RANK: usize = 8;

/// Writes one SLRT record to a stream.
pub fn write_tensor_to<W: Write>(writer: &mut W, tensor: &Tensor) -> Result<()> {
    writer.write_all(&SLRT_MAGIC)?;
    writer.write_all(&SLRT_VERSION.to_le_bytes())?;
    writer.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &dim in tensor.shape() {
        let dim: u32 = dim.try_into().map_err(|_| Error::DimensionOverflow)?;
        writer.write_all(&dim.to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(tensor.len() * 4);
    for &v in tensor.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&payload)?;
    Ok(())
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads one SLRT record from a stream, leaving the stream positioned right
/// after the record so multiple records can be concatenated.
pub fn read_tensor_from<R: Read>(reader: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != SLRT_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = read_u32(reader)?;
    if version != SLRT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let ndim = read_u32(reader)? as usize;
    if ndim == 0 || ndim > SLRT_MAX_RANK {
        return Err(Error::Shape(format!(
            "tensor rank {ndim} outside the supported range 1..={SLRT_MAX_RANK}"
        )));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(reader)? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimensionOverflow)?;
    let byte_count = count.checked_mul(4).ok_or(Error::DimensionOverflow)?;
    let mut bytes = vec![0u8; byte_count];
    let mut filled = 0usize;
    while filled < byte_count {
        match reader.read(&mut bytes[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    if filled < byte_count {
        return Err(Error::TruncatedPayload {
            expected: count,
            actual: filled / 4,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io(source) => Error::file(path, source),
        other => other,
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut writer = BufWriter::new(file);
    write_tensor_to(&mut writer, tensor).map_err(|e| with_path(e, path))?;
    writer.flush().map_err(|e| Error::file(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = BufReader::new(file);
    read_tensor_from(&mut reader).map_err(|e| with_path(e, path))
}

/// Yields `(line_number, trimmed_content)` for every line that is neither
/// blank nor a `#` comment.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, raw)| (i + 1, raw.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

/// Parses a `key = value` file into a map. Keys must be unique.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ln, line) in content_lines(text) {
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse(format!("line {ln}: expected 'key = value', got '{line}'")));
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse(format!("line {ln}: empty key")));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("line {ln}: duplicate key '{key}'")));
        }
    }
    Ok(map)
}

pub fn load_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_key_values(&text)
}

/// Parses a class-attribute table: one `class_id,v1,v2,...` row per class.
/// The result is unnormalized.
pub fn parse_attribute_matrix(text: &str) -> Result<AttributeMatrix> {
    let mut ids: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    for (ln, line) in content_lines(text) {
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("").trim();
        if id.is_empty() {
            return Err(Error::Parse(format!("line {ln}: empty class id")));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::Parse(format!("line {ln}: duplicate class id '{id}'")));
        }
        let mut row = Vec::new();
        for field in fields {
            let field = field.trim();
            row.push(field.parse::<f32>().map_err(|_| {
                Error::Parse(format!("line {ln}: non-numeric attribute value '{field}'"))
            })?);
        }
        if row.is_empty() {
            return Err(Error::Parse(format!(
                "line {ln}: class '{id}' has no attribute values"
            )));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse(format!(
                    "line {ln}: row has {} values, expected {w}",
                    row.len()
                )));
            }
            _ => {}
        }
        ids.push(id.to_string());
        data.extend_from_slice(&row);
    }
    let width = width.ok_or_else(|| Error::Parse("no attribute rows".into()))?;
    let rows = ids.len();
    AttributeMatrix::new(ids, Matrix::new(rows, width, data)?)
}

pub fn load_attribute_matrix(path: &Path) -> Result<AttributeMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_attribute_matrix(&text)
}

pub fn write_attribute_matrix(path: &Path, attrs: &AttributeMatrix) -> Result<()> {
    let mut out = String::new();
    for (i, id) in attrs.class_ids().iter().enumerate() {
        out.push_str(id);
        for &v in attrs.prototype(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))
}

/// The seen/unseen class partition.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    seen: Vec<String>,
    unseen: Vec<String>,
    seen_set: HashSet<String>,
    unseen_set: HashSet<String>,
}

impl SplitSpec {
    /// Both lists must be non-empty, duplicate-free and disjoint.
    pub fn new(seen: Vec<String>, unseen: Vec<String>) -> Result<Self> {
        if seen.is_empty() {
            return Err(Error::Contract("split has an empty seen section".into()));
        }
        if unseen.is_empty() {
            return Err(Error::Contract("split has an empty unseen section".into()));
        }
        let mut seen_set = HashSet::new();
        for id in &seen {
            if !seen_set.insert(id.clone()) {
                return Err(Error::Contract(format!("duplicate class '{id}' in seen section")));
            }
        }
        let mut unseen_set = HashSet::new();
        for id in &unseen {
            if !unseen_set.insert(id.clone()) {
                return Err(Error::Contract(format!(
                    "duplicate class '{id}' in unseen section"
                )));
            }
            if seen_set.contains(id) {
                return Err(Error::Contract(format!(
                    "class '{id}' listed as both seen and unseen"
                )));
            }
        }
        Ok(SplitSpec {
            seen,
            unseen,
            seen_set,
            unseen_set,
        })
    }

    pub fn seen_classes(&self) -> &[String] {
        &self.seen
    }

    pub fn unseen_classes(&self) -> &[String] {
        &self.unseen
    }

    pub fn is_seen(&self, id: &str) -> bool {
        self.seen_set.contains(id)
    }

    pub fn is_unseen(&self, id: &str) -> bool {
        self.unseen_set.contains(id)
    }

    /// All classes, seen first, in file order.
    pub fn all_classes(&self) -> Vec<String> {
        let mut out = self.seen.clone();
        out.extend(self.unseen.iter().cloned());
        out
    }
}

/// Parses a split file with `[seen]` and `[unseen]` sections, one class id
/// per line.
pub fn parse_split(text: &str) -> Result<SplitSpec> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Seen,
        Unseen,
    }
    let mut section = Section::None;
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    for (ln, line) in content_lines(text) {
        match line {
            "[seen]" => section = Section::Seen,
            "[unseen]" => section = Section::Unseen,
            other if other.starts_with('[') => {
                return Err(Error::Parse(format!(
                    "line {ln}: unknown section header '{other}'"
                )));
            }
            id => match section {
                Section::None => {
                    return Err(Error::Parse(format!(
                        "line {ln}: class id before any section header"
                    )));
                }
                Section::Seen => seen.push(id.to_string()),
                Section::Unseen => unseen.push(id.to_string()),
            },
        }
    }
    SplitSpec::new(seen, unseen)
}

pub fn load_split(path: &Path) -> Result<SplitSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_split(&text)
}

pub fn write_split(path: &Path, split: &SplitSpec) -> Result<()> {
    let mut out = String::from("[seen]\n");
    for id in split.seen_classes() {
        out.push_str(id);
        out.push('\n');
    }
    out.push_str("[unseen]\n");
    for id in split.unseen_classes() {
        out.push_str(id);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))
}

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    /// Feature file location, relative to the manifest's directory.
    pub path: String,
    pub class_id: String,
}

/// Parses a manifest: one `sample_id<TAB>path<TAB>class_id` row per sample.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for (ln, line) in content_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [sample_id, path, class_id] = fields[..] else {
            return Err(Error::Parse(format!(
                "line {ln}: expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        };
        let (sample_id, path, class_id) = (sample_id.trim(), path.trim(), class_id.trim());
        if sample_id.is_empty() || path.is_empty() || class_id.is_empty() {
            return Err(Error::Parse(format!("line {ln}: empty field")));
        }
        if !ids.insert(sample_id.to_string()) {
            return Err(Error::Parse(format!(
                "line {ln}: duplicate sample id '{sample_id}'"
            )));
        }
        entries.push(ManifestEntry {
            sample_id: sample_id.to_string(),
            path: path.to_string(),
            class_id: class_id.to_string(),
        });
    }
    if entries.is_empty() {
        return Err(Error::Parse("manifest lists no samples".into()));
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.sample_id, e.path, e.class_id));
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))
}

/// One labeled feature map.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub featmap: Tensor,
    pub class_id: String,
}

/// Samples loaded from a manifest, all sharing one feature shape.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub feature_shape: [usize; 3],
}

/// Loads every feature map a manifest lists. Paths resolve relative to
/// `root` and all maps must agree on their `[H, W, D]` shape.
pub fn load_samples(entries: &[ManifestEntry], root: &Path) -> Result<LoadedDataset> {
    if entries.is_empty() {
        return Err(Error::Contract("manifest lists no samples".into()));
    }
    let mut samples = Vec::with_capacity(entries.len());
    let mut shape: Option<[usize; 3]> = None;
    for entry in entries {
        let featmap = read_tensor(&root.join(&entry.path))?;
        let (h, w, d) = featmap.spatial3().map_err(|_| {
            Error::Shape(format!(
                "sample '{}' has shape {:?}, expected a rank-3 [H, W, D] map",
                entry.sample_id,
                featmap.shape()
            ))
        })?;
        match shape {
            None => shape = Some([h, w, d]),
            Some(expected) if expected != [h, w, d] => {
                return Err(Error::Shape(format!(
                    "sample '{}' has feature shape {:?}, expected {:?}",
                    entry.sample_id,
                    [h, w, d],
                    expected
                )));
            }
            _ => {}
        }
        samples.push(Sample {
            id: entry.sample_id.clone(),
            featmap,
            class_id: entry.class_id.clone(),
        });
    }
    Ok(LoadedDataset {
        samples,
        feature_shape: shape.unwrap(),
    })
}

/// A model checkpoint read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: ProjectionModel,
    /// Seed recorded by the training run that produced the checkpoint.
    pub seed: u64,
}

fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("meta")
}

/// Saves a model as SLRT records (weights, then bias when present) plus a
/// `.meta` sidecar holding the aggregation, space and training seed.
pub fn save_model(path: &Path, model: &ProjectionModel, seed: u64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut writer = BufWriter::new(file);
    let w = model.weights();
    let weights = Tensor::new(vec![w.rows(), w.cols()], w.data().to_vec())?;
    write_tensor_to(&mut writer, &weights).map_err(|e| with_path(e, path))?;
    if let Some(b) = model.bias() {
        let bias = Tensor::new(vec![b.len()], b.to_vec())?;
        write_tensor_to(&mut writer, &bias).map_err(|e| with_path(e, path))?;
    }
    writer.flush().map_err(|e| Error::file(path, e))?;

    let meta = format!(
        "aggregation = {}\nspace = {}\nseed = {}\nbias = {}\n",
        model.aggregation(),
        model.space(),
        seed,
        model.bias().is_some()
    );
    let meta_path = sidecar_path(path);
    fs::write(&meta_path, meta).map_err(|e| Error::file(&meta_path, e))
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let mut cursor = Cursor::new(&bytes[..]);
    let weights = read_tensor_from(&mut cursor).map_err(|e| with_path(e, path))?;
    let &[l, d] = weights.shape() else {
        return Err(Error::Shape(format!(
            "model weights record must be rank 2, got shape {:?}",
            weights.shape()
        )));
    };
    let bias = if (cursor.position() as usize) < bytes.len() {
        let record = read_tensor_from(&mut cursor).map_err(|e| with_path(e, path))?;
        if record.shape() != [l] {
            return Err(Error::Shape(format!(
                "model bias record has shape {:?}, expected [{l}]",
                record.shape()
            )));
        }
        Some(record.data().to_vec())
    } else {
        None
    };
    if (cursor.position() as usize) < bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after model records",
            bytes.len() - cursor.position() as usize
        )));
    }

    let meta_path = sidecar_path(path);
    let meta = load_key_values(&meta_path)?;
    let field = |key: &str| -> Result<&String> {
        meta.get(key)
            .ok_or_else(|| Error::Parse(format!("model metadata missing '{key}'")))
    };
    let aggregation: Aggregation = field("aggregation")?.parse()?;
    let space: Space = field("space")?.parse()?;
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|_| Error::Parse("model metadata 'seed' is not an integer".into()))?;
    let bias_flag: bool = field("bias")?
        .parse()
        .map_err(|_| Error::Parse("model metadata 'bias' is not a boolean".into()))?;
    if bias_flag != bias.is_some() {
        return Err(Error::Parse(
            "model metadata bias flag disagrees with the model file".into(),
        ));
    }
    let model = ProjectionModel::new(
        Matrix::new(l, d, weights.data().to_vec())?,
        bias,
        aggregation,
        space,
    )?;
    Ok(LoadedModel { model, seed })
}
