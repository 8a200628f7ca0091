//! Attribute heatmap export.
//!
//! Each selected attribute's spatial score map is normalized to [0, 1] by
//! its own min and max, optionally upsampled, quantized to 8 bits and
//! written as a binary PGM (P5) image. A constant map has no contrast and
//! renders mid-gray (128).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{attribute_maps, ProjectionModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Each source cell becomes a solid block.
    Nearest,
    /// Half-pixel-centered bilinear interpolation, clamped at the border.
    Bilinear,
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Bilinear => "bilinear",
        })
    }
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            other => Err(Error::Parse(format!(
                "unknown interpolation '{other}' (expected 'nearest' or 'bilinear')"
            ))),
        }
    }
}

/// Which attribute channels to render.
#[derive(Debug, Clone)]
pub enum AttributeSelection {
    All,
    /// The `k` attributes with the highest prototype values. Ties resolve
    /// toward the lower attribute index.
    TopK { k: usize, prototype: Vec<f32> },
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct HeatmapExportConfig {
    /// Integer scale factor for the output resolution, at least 1.
    pub upsample: usize,
    pub interpolation: Interpolation,
    pub selection: AttributeSelection,
    /// Optional attribute names for the index file, one per attribute.
    pub attribute_names: Option<Vec<String>>,
}

impl Default for HeatmapExportConfig {
    fn default() -> Self {
        HeatmapExportConfig {
            upsample: 1,
            interpolation: Interpolation::Nearest,
            selection: AttributeSelection::All,
            attribute_names: None,
        }
    }
}

fn selected_indices(selection: &AttributeSelection, l: usize) -> Result<Vec<usize>> {
    match selection {
        AttributeSelection::All => Ok((0..l).collect()),
        AttributeSelection::TopK { k, prototype } => {
            if *k == 0 {
                return Err(Error::Contract("top-k selection needs k >= 1".into()));
            }
            if prototype.len() != l {
                return Err(Error::Shape(format!(
                    "prototype has {} values but the model produces {l} attributes",
                    prototype.len()
                )));
            }
            let mut order: Vec<usize> = (0..l).collect();
            order.sort_by(|&a, &b| {
                prototype[b]
                    .partial_cmp(&prototype[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            order.truncate((*k).min(l));
            Ok(order)
        }
        AttributeSelection::Explicit(indices) => {
            if indices.is_empty() {
                return Err(Error::Contract("no attribute indices selected".into()));
            }
            for &i in indices {
                if i >= l {
                    return Err(Error::Contract(format!(
                        "attribute index {i} out of range for {l} attributes"
                    )));
                }
            }
            Ok(indices.clone())
        }
    }
}

/// Renders one channel to 8-bit pixels of size `(h * f) x (w * f)`.
fn render_channel(
    values: &[f32],
    h: usize,
    w: usize,
    factor: usize,
    interpolation: Interpolation,
) -> Vec<u8> {
    let (out_h, out_w) = (h * factor, w * factor);
    let min = values.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if max == min {
        return vec![128u8; out_h * out_w];
    }
    let range = (max - min) as f64;
    let norm: Vec<f64> = values.iter().map(|&v| (v - min) as f64 / range).collect();
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        for j in 0..out_w {
            let v = match interpolation {
                Interpolation::Nearest => norm[(i / factor) * w + j / factor],
                Interpolation::Bilinear => {
                    let sy = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                    let sx = ((j as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                    let y0 = sy.floor() as usize;
                    let x0 = sx.floor() as usize;
                    let y1 = (y0 + 1).min(h - 1);
                    let x1 = (x0 + 1).min(w - 1);
                    let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
                    let top = norm[y0 * w + x0] * (1.0 - tx) + norm[y0 * w + x1] * tx;
                    let bottom = norm[y1 * w + x0] * (1.0 - tx) + norm[y1 * w + x1] * tx;
                    top * (1.0 - ty) + bottom * ty
                }
            };
            pixels.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    pixels
}

fn pgm_bytes(pixels: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Computes the attribute maps of one sample and writes the selected
/// channels as PGM heatmaps named `{sample_id}_attr{index}.pgm`, plus a
/// `{sample_id}.index.tsv` mapping attribute indices (and names, when given)
/// to image files. Returns every written path, index file last.
///
/// Re-exporting the same inputs overwrites the same files byte-identically.
pub fn export_heatmaps(
    featmap: &Tensor,
    model: &ProjectionModel,
    sample_id: &str,
    config: &HeatmapExportConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if config.upsample == 0 {
        return Err(Error::Contract("upsample factor must be at least 1".into()));
    }
    if sample_id.is_empty() {
        return Err(Error::Contract("empty sample id".into()));
    }
    let l = model.attr_dim();
    if let Some(names) = &config.attribute_names {
        if names.len() != l {
            return Err(Error::Shape(format!(
                "{} attribute names for {l} attributes",
                names.len()
            )));
        }
    }
    let maps = attribute_maps(featmap, model)?;
    let (h, w, _) = maps.spatial3()?;
    let indices = selected_indices(&config.selection, l)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut written = Vec::with_capacity(indices.len() + 1);
    let mut index_lines = String::new();
    for &attr in &indices {
        let values: Vec<f32> = (0..h * w).map(|loc| maps.data()[loc * l + attr]).collect();
        let pixels = render_channel(&values, h, w, config.upsample, config.interpolation);
        let bytes = pgm_bytes(&pixels, w * config.upsample, h * config.upsample);
        let file_name = format!("{sample_id}_attr{attr:03}.pgm");
        let path = out_dir.join(&file_name);
        std::fs::write(&path, bytes).map_err(|e| Error::file(&path, e))?;
        match &config.attribute_names {
            Some(names) => {
                index_lines.push_str(&format!("{attr}\t{}\t{file_name}\n", names[attr]))
            }
            None => index_lines.push_str(&format!("{attr}\t{file_name}\n")),
        }
        written.push(path);
    }
    let index_path = out_dir.join(format!("{sample_id}.index.tsv"));
    std::fs::write(&index_path, index_lines).map_err(|e| Error::file(&index_path, e))?;
    written.push(index_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregation, Space};
    use crate::tensor::Matrix;
    use std::fs;

    fn identity_model(l: usize) -> ProjectionModel {
        let mut eye = vec![0.0f32; l * l];
        for i in 0..l {
            eye[i * l + i] = 1.0;
        }
        ProjectionModel::new(
            Matrix::new(l, l, eye).unwrap(),
            None,
            Aggregation::Gmp,
            Space::Attribute,
        )
        .unwrap()
    }

    fn parse_pgm(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
        let header_end = bytes
            .windows(1)
            .enumerate()
            .filter(|(_, w)| w[0] == b'\n')
            .map(|(i, _)| i)
            .nth(2)
            .unwrap();
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        let mut lines = header.lines();
        assert_eq!(lines.next().unwrap(), "P5");
        let mut dims = lines.next().unwrap().split_whitespace();
        let w: usize = dims.next().unwrap().parse().unwrap();
        let h: usize = dims.next().unwrap().parse().unwrap();
        assert_eq!(lines.next().unwrap(), "255");
        (w, h, bytes[header_end + 1..].to_vec())
    }

    #[test]
    fn quantization_is_exact_on_a_known_ramp() {
        let dir = tempfile::tempdir().unwrap();
        // single channel, 2x2 map holding 0,1,2,3
        let fm = Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let model = identity_model(1);
        let paths = export_heatmaps(&fm, &model, "ramp", &HeatmapExportConfig::default(), dir.path())
            .unwrap();
        assert_eq!(paths.len(), 2);
        let (w, h, pixels) = parse_pgm(&fs::read(&paths[0]).unwrap());
        assert_eq!((w, h), (2, 2));
        assert_eq!(pixels, vec![0, 85, 170, 255]);
    }

    #[test]
    fn constant_maps_render_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let fm = Tensor::new(vec![2, 2, 1], vec![7.5; 4]).unwrap();
        let config = HeatmapExportConfig {
            upsample: 2,
            interpolation: Interpolation::Bilinear,
            ..Default::default()
        };
        let paths = export_heatmaps(&fm, &identity_model(1), "flat", &config, dir.path()).unwrap();
        let (w, h, pixels) = parse_pgm(&fs::read(&paths[0]).unwrap());
        assert_eq!((w, h), (4, 4));
        assert!(pixels.iter().all(|&p| p == 128));
    }

    #[test]
    fn nearest_upsampling_makes_solid_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let fm = Tensor::new(vec![1, 2, 1], vec![0.0, 1.0]).unwrap();
        let config = HeatmapExportConfig {
            upsample: 3,
            ..Default::default()
        };
        let paths = export_heatmaps(&fm, &identity_model(1), "blocks", &config, dir.path()).unwrap();
        let (w, h, pixels) = parse_pgm(&fs::read(&paths[0]).unwrap());
        assert_eq!((w, h), (6, 3));
        for row in 0..3 {
            assert_eq!(&pixels[row * 6..row * 6 + 3], &[0, 0, 0]);
            assert_eq!(&pixels[row * 6 + 3..row * 6 + 6], &[255, 255, 255]);
        }
    }

    #[test]
    fn bilinear_upsampling_matches_hand_computed_values() {
        let dir = tempfile::tempdir().unwrap();
        let fm = Tensor::new(vec![1, 2, 1], vec![0.0, 1.0]).unwrap();
        let config = HeatmapExportConfig {
            upsample: 2,
            interpolation: Interpolation::Bilinear,
            ..Default::default()
        };
        let paths = export_heatmaps(&fm, &identity_model(1), "lerp", &config, dir.path()).unwrap();
        let (w, h, pixels) = parse_pgm(&fs::read(&paths[0]).unwrap());
        assert_eq!((w, h), (4, 2));
        // sample points fall at x = -0.25, 0.25, 0.75, 1.25, clamped to [0, 1]
        assert_eq!(&pixels[..4], &[0, 64, 191, 255]);
        assert_eq!(&pixels[4..], &pixels[..4]);
    }

    #[test]
    fn extremes_map_to_full_range() {
        let dir = tempfile::tempdir().unwrap();
        let fm = Tensor::new(vec![3, 3, 1], (0..9).map(|i| (i as f32).sin()).collect()).unwrap();
        let paths =
            export_heatmaps(&fm, &identity_model(1), "range", &HeatmapExportConfig::default(), dir.path())
                .unwrap();
        let (_, _, pixels) = parse_pgm(&fs::read(&paths[0]).unwrap());
        assert!(pixels.contains(&0));
        assert!(pixels.contains(&255));
    }

    #[test]
    fn selection_modes_pick_the_right_channels() {
        let dir = tempfile::tempdir().unwrap();
        let fm = Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let model = identity_model(4);

        let all = export_heatmaps(&fm, &model, "s", &HeatmapExportConfig::default(), dir.path())
            .unwrap();
        assert_eq!(all.len(), 5);

        let top = HeatmapExportConfig {
            selection: AttributeSelection::TopK {
                k: 2,
                prototype: vec![0.1, 0.9, 0.9, 0.2],
            },
            ..Default::default()
        };
        let paths = export_heatmaps(&fm, &model, "t", &top, dir.path()).unwrap();
        // ties between attributes 1 and 2 resolve to the lower index first
        assert!(paths[0].ends_with("t_attr001.pgm"));
        assert!(paths[1].ends_with("t_attr002.pgm"));

        let explicit = HeatmapExportConfig {
            selection: AttributeSelection::Explicit(vec![3, 0]),
            attribute_names: Some(vec!["a".into(), "b".into(), "c".into(), "d".into()]),
            ..Default::default()
        };
        let paths = export_heatmaps(&fm, &model, "e", &explicit, dir.path()).unwrap();
        let index = fs::read_to_string(paths.last().unwrap()).unwrap();
        assert_eq!(index, "3\td\te_attr003.pgm\n0\ta\te_attr000.pgm\n");

        let bad = HeatmapExportConfig {
            selection: AttributeSelection::Explicit(vec![9]),
            ..Default::default()
        };
        assert!(export_heatmaps(&fm, &model, "x", &bad, dir.path()).is_err());
        let zero = HeatmapExportConfig {
            upsample: 0,
            ..Default::default()
        };
        assert!(export_heatmaps(&fm, &model, "x", &zero, dir.path()).is_err());
    }

    #[test]
    fn re_export_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let fm = Tensor::new(vec![2, 3, 2], (0..12).map(|i| (i as f32 * 0.7).cos()).collect())
            .unwrap();
        let model = identity_model(2);
        let config = HeatmapExportConfig {
            upsample: 4,
            interpolation: Interpolation::Bilinear,
            ..Default::default()
        };
        let first = export_heatmaps(&fm, &model, "twice", &config, dir.path()).unwrap();
        let snapshots: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
        let second = export_heatmaps(&fm, &model, "twice", &config, dir.path()).unwrap();
        assert_eq!(first, second);
        for (path, snapshot) in second.iter().zip(&snapshots) {
            assert_eq!(&fs::read(path).unwrap(), snapshot);
        }
    }
}
