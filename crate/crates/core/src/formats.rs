//! On-disk formats: normalized ground-truth JSON, detections JSON and the
//! map container (a directory holding `manifest.json` plus raw f32 tensors).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decoder::Detection;
use crate::encoder::{TargetMaps, REG_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::{BranchId, OrientedBox};
use crate::ingest::AnnotatedImage;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub class: String,
    pub corners: [f64; 8],
    #[serde(default)]
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GtObject>,
}

fn class_index(vocabulary: &[String], name: &str, unknown: &mut Vec<String>) -> Option<usize> {
    let idx = vocabulary.iter().position(|c| c == name);
    if idx.is_none() && !unknown.iter().any(|u| u == name) {
        unknown.push(name.to_string());
    }
    idx
}

impl GtImage {
    pub fn from_annotated(img: &AnnotatedImage) -> Self {
        Self {
            image_id: img.image_id.clone(),
            width: img.width,
            height: img.height,
            objects: img
                .objects
                .iter()
                .map(|b| GtObject {
                    class: img.class_names[b.class_id].clone(),
                    corners: b.to_flat(),
                    difficult: b.difficult,
                })
                .collect(),
        }
    }

    /// Boxes with class ids resolved against `vocabulary`; every unknown name
    /// is listed in the error.
    pub fn to_boxes(&self, vocabulary: &[String]) -> Result<Vec<OrientedBox>> {
        let mut unknown = Vec::new();
        let mut out = Vec::with_capacity(self.objects.len());
        for o in &self.objects {
            if let Some(c) = class_index(vocabulary, &o.class, &mut unknown) {
                let b = OrientedBox::from_flat(o.corners, c)
                    .map_err(|e| Error::InvalidBox(format!("{}: {e}", self.image_id)))?;
                out.push(b.with_difficult(o.difficult));
            }
        }
        if unknown.is_empty() {
            Ok(out)
        } else {
            Err(Error::UnknownClassNames(unknown))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub class: String,
    pub score: f64,
    pub corners: [f64; 8],
    pub branch: u8,
}

pub fn detections_to_records(
    dets: &[Detection],
    class_names: &[String],
    image_id: Option<&str>,
) -> Result<Vec<DetectionRecord>> {
    dets.iter()
        .map(|d| {
            let class = class_names
                .get(d.class_id())
                .ok_or(Error::UnknownClass(d.class_id()))?;
            Ok(DetectionRecord {
                image_id: image_id.map(str::to_string),
                class: class.clone(),
                score: d.score(),
                corners: d.bbox.to_flat(),
                branch: d.branch.number(),
            })
        })
        .collect()
}

pub fn records_to_boxes(
    records: &[DetectionRecord],
    vocabulary: &[String],
) -> Result<Vec<OrientedBox>> {
    let mut unknown = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if BranchId::from_number(r.branch).is_none() {
            return Err(Error::invalid(format!(
                "branch must be 1 or 2, got {}",
                r.branch
            )));
        }
        if let Some(c) = class_index(vocabulary, &r.class, &mut unknown) {
            out.push(OrientedBox::from_flat(r.corners, c)?.with_score(r.score));
        }
    }
    if unknown.is_empty() {
        Ok(out)
    } else {
        Err(Error::UnknownClassNames(unknown))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stride: u32,
    pub num_classes: usize,
    pub width: usize,
    pub height: usize,
    pub image_w: u32,
    pub image_h: u32,
    pub class_names: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub n_objects: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    /// Settings the maps were produced with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub maps: TargetMaps,
}

fn tensor_name(kind: &str, branch: BranchId) -> String {
    format!("{kind}_b{}", branch.number())
}

fn write_tensor(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `maps` as `hm_b*`, `reg_b*` and `mask_b*` little-endian f32
/// tensors in `[channel][row][col]` order.
pub fn write_container(
    dir: &Path,
    maps: &TargetMaps,
    class_names: &[String],
    image_id: Option<&str>,
    params: Option<serde_json::Value>,
) -> Result<Manifest> {
    maps.check_shapes()?;
    if class_names.len() != maps.num_classes {
        return Err(Error::invalid(format!(
            "{} class names for {} heatmap channels",
            class_names.len(),
            maps.num_classes
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (maps.height, maps.width);
    let mut tensors = Vec::new();
    for branch in BranchId::ALL {
        let entries = [("hm", maps.num_classes), ("reg", REG_CHANNELS), ("mask", 1)];
        for (kind, channels) in entries {
            let name = tensor_name(kind, branch);
            let file = format!("{name}.f32");
            let path = dir.join(&file);
            match kind {
                "hm" => write_tensor(&path, maps.heatmap_branch(branch).iter().copied())?,
                "reg" => write_tensor(&path, maps.regression_branch(branch).iter().copied())?,
                _ => write_tensor(
                    &path,
                    maps.mask_branch(branch)
                        .iter()
                        .map(|&m| f64::from(u8::from(m))),
                )?,
            }
            tensors.push(TensorEntry {
                name,
                file,
                shape: vec![channels, h, w],
            });
        }
    }
    let manifest = Manifest {
        stride: maps.stride,
        num_classes: maps.num_classes,
        width: w,
        height: h,
        image_w: maps.image_w,
        image_h: maps.image_h,
        class_names: class_names.to_vec(),
        tensors,
        n_objects: maps.n_objects,
        image_id: image_id.map(str::to_string),
        params,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn container_err(dir: &Path, message: impl Into<String>) -> Error {
    Error::Container {
        path: dir.to_path_buf(),
        message: message.into(),
    }
}

fn read_tensor(dir: &Path, entry: &TensorEntry, want: [usize; 3]) -> Result<Array3<f64>> {
    if entry.shape != want {
        return Err(Error::ShapeMismatch {
            expected: want.to_vec(),
            actual: entry.shape.clone(),
        });
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let n = want.iter().product::<usize>();
    if bytes.len() != 4 * n {
        return Err(container_err(
            &path,
            format!(
                "expected {} bytes for shape {want:?}, found {}",
                4 * n,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Array3::from_shape_vec(want, values).map_err(|e| container_err(&path, e.to_string()))
}

/// Reads a container. Heatmap and regression tensors are required; masks
/// default to all-false when absent from the manifest.
pub fn read_container(dir: &Path) -> Result<Container> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.class_names.len() != manifest.num_classes {
        return Err(container_err(
            dir,
            format!(
                "num_classes {} but {} class names",
                manifest.num_classes,
                manifest.class_names.len()
            ),
        ));
    }
    let (h, w) = (manifest.height, manifest.width);
    let expect_w = manifest.image_w.div_ceil(manifest.stride.max(1)) as usize;
    let expect_h = manifest.image_h.div_ceil(manifest.stride.max(1)) as usize;
    if manifest.stride == 0 || (expect_h, expect_w) != (h, w) {
        return Err(container_err(
            dir,
            format!(
                "map size {w}x{h} inconsistent with image {}x{} at stride {}",
                manifest.image_w, manifest.image_h, manifest.stride
            ),
        ));
    }
    let mut maps = TargetMaps::zeros(
        manifest.image_w,
        manifest.image_h,
        manifest.stride,
        manifest.num_classes,
    )?;
    maps.n_objects = manifest.n_objects;
    let find = |name: &str| manifest.tensors.iter().find(|t| t.name == name);
    for branch in BranchId::ALL {
        let b = branch.index();
        for (kind, channels) in [("hm", manifest.num_classes), ("reg", REG_CHANNELS)] {
            let name = tensor_name(kind, branch);
            let entry =
                find(&name).ok_or_else(|| container_err(dir, format!("missing tensor {name}")))?;
            let t = read_tensor(dir, entry, [channels, h, w])?;
            let target: &mut Array4<f64> = if kind == "hm" {
                &mut maps.heatmap
            } else {
                &mut maps.regression
            };
            target.slice_mut(ndarray::s![b, .., .., ..]).assign(&t);
        }
        if let Some(entry) = find(&tensor_name("mask", branch)) {
            let t = read_tensor(dir, entry, [1, h, w])?;
            maps.reg_mask
                .slice_mut(ndarray::s![b, .., ..])
                .assign(&t.index_axis(ndarray::Axis(0), 0).mapv(|v| v != 0.0));
        }
    }
    Ok(Container { manifest, maps })
}

/// Containers are directories holding a manifest; `path` is either one
/// container or a directory of them (sorted by name).
pub fn container_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join(MANIFEST_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    out.sort();
    Ok(out)
}

/// JSON files directly inside `path`, or `path` itself when it is a file.
pub fn json_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_image, EncoderConfig};
    use crate::geometry::Point2;

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn container_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let b = OrientedBox::rectangle(Point2::new(40., 30.), 30., 12., 20., 1).unwrap();
        let enc = encode_image(&[b], 90, 70, 2, &EncoderConfig::default()).unwrap();
        let m = write_container(dir.path(), &enc.maps, &names(), Some("img"), None).unwrap();
        assert_eq!(m.tensors.len(), 6);
        let back = read_container(dir.path()).unwrap();
        assert_eq!(back.manifest, m);
        assert_eq!(back.maps.reg_mask, enc.maps.reg_mask);
        assert_eq!(back.maps.heatmap, enc.maps.heatmap);
        let err = back
            .maps
            .regression
            .iter()
            .zip(enc.maps.regression.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4);
    }

    #[test]
    fn missing_tensor_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let maps = TargetMaps::zeros(16, 16, 4, 2).unwrap();
        write_container(dir.path(), &maps, &names(), None, None).unwrap();
        fs::remove_file(dir.path().join("reg_b2.f32")).unwrap();
        assert!(matches!(read_container(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let maps = TargetMaps::zeros(16, 16, 4, 2).unwrap();
        write_container(dir.path(), &maps, &names(), None, None).unwrap();
        fs::write(dir.path().join("hm_b1.f32"), [0u8; 12]).unwrap();
        assert!(matches!(
            read_container(dir.path()),
            Err(Error::Container { .. })
        ));
    }

    #[test]
    fn gt_unknown_classes_listed() {
        let img = GtImage {
            image_id: "x".into(),
            width: 10,
            height: 10,
            objects: vec![
                GtObject {
                    class: "zebra".into(),
                    corners: [0., 0., 4., 0., 4., 4., 0., 4.],
                    difficult: false,
                },
                GtObject {
                    class: "a".into(),
                    corners: [0., 0., 4., 0., 4., 4., 0., 4.],
                    difficult: true,
                },
                GtObject {
                    class: "yak".into(),
                    corners: [0., 0., 4., 0., 4., 4., 0., 4.],
                    difficult: false,
                },
            ],
        };
        match img.to_boxes(&names()) {
            Err(Error::UnknownClassNames(v)) => assert_eq!(v, vec!["zebra", "yak"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detection_records_roundtrip() {
        let b = OrientedBox::rectangle(Point2::new(40., 30.), 30., 12., 20., 1)
            .unwrap()
            .with_score(0.75);
        let det = Detection {
            bbox: b.clone(),
            branch: BranchId::Oriented,
        };
        let recs = detections_to_records(&[det], &names(), None).unwrap();
        let json = serde_json::to_string(&recs).unwrap();
        assert!(!json.contains("image_id"));
        let back: Vec<DetectionRecord> = serde_json::from_str(&json).unwrap();
        let boxes = records_to_boxes(&back, &names()).unwrap();
        assert_eq!(boxes[0].to_flat(), b.to_flat());
        assert_eq!(boxes[0].score(), 0.75);
    }
}
