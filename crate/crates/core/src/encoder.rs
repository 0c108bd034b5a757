//! Training-target generation.
//!
//! Every object owns a circular drift region of feature cells around its
//! intersection point. All cells of the region are heatmap-positive for the
//! object's class and carry regression targets measured from the cell's own
//! input-space position, so any cell of the region decodes to the same box.
//!
//! Cell `(row, col)` sits at input position `(col·stride, row·stride)`;
//! feature-space coordinates are input coordinates divided by the stride.

use ndarray::{s, Array3, Array4, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::geometry::{box_to_midlines, AngleRange, BranchId, MidlinePair, OrientedBox, Point2};

/// Number of regression channels: `Δx1, Δy1, …, Δx4, Δy4`.
pub const REG_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub stride: u32,
    /// Upper bound `r` on the drift radius, in input pixels.
    pub drift_r: f64,
    pub branch_range: AngleRange,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            drift_r: 16.0,
            branch_range: AngleRange::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        if !(self.drift_r > 0.0 && self.drift_r.is_finite()) {
            return Err(Error::invalid("drift radius r must be > 0"));
        }
        Ok(())
    }
}

/// Per-branch heatmaps and regression maps at output stride `d`.
///
/// Also used for predictions, in which case heatmap values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub stride: u32,
    pub num_classes: usize,
    pub width: usize,
    pub height: usize,
    pub image_w: u32,
    pub image_h: u32,
    /// `[branch][class][row][col]`
    pub heatmap: Array4<f64>,
    /// `[branch][channel][row][col]`, input-pixel offsets.
    pub regression: Array4<f64>,
    /// `[branch][row][col]`
    pub reg_mask: Array3<bool>,
    /// Objects that produced targets; the loss normalizer.
    pub n_objects: usize,
}

impl TargetMaps {
    pub fn zeros(image_w: u32, image_h: u32, stride: u32, num_classes: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        let width = image_w.div_ceil(stride) as usize;
        let height = image_h.div_ceil(stride) as usize;
        Ok(Self {
            stride,
            num_classes,
            width,
            height,
            image_w,
            image_h,
            heatmap: Array4::zeros((2, num_classes, height, width)),
            regression: Array4::zeros((2, REG_CHANNELS, height, width)),
            reg_mask: Array3::from_elem((2, height, width), false),
            n_objects: 0,
        })
    }

    /// Input-space position of a cell.
    pub fn cell_position(&self, row: usize, col: usize) -> Point2 {
        cell_position(row, col, self.stride)
    }

    pub fn heatmap_branch(&self, branch: BranchId) -> ArrayView3<'_, f64> {
        self.heatmap.slice(s![branch.index(), .., .., ..])
    }

    pub fn regression_branch(&self, branch: BranchId) -> ArrayView3<'_, f64> {
        self.regression.slice(s![branch.index(), .., .., ..])
    }

    pub fn mask_branch(&self, branch: BranchId) -> ArrayView2<'_, bool> {
        self.reg_mask.slice(s![branch.index(), .., ..])
    }

    /// `N` in the loss normalizations, clamped to at least 1.
    pub fn normalizer(&self) -> usize {
        self.n_objects.max(1)
    }

    /// Checks that all grids agree with the scalar header fields.
    pub fn check_shapes(&self) -> Result<()> {
        let want_hm = [2, self.num_classes, self.height, self.width];
        let want_reg = [2, REG_CHANNELS, self.height, self.width];
        let want_mask = [2, self.height, self.width];
        for (expected, actual) in [
            (&want_hm[..], self.heatmap.shape()),
            (&want_reg[..], self.regression.shape()),
            (&want_mask[..], self.reg_mask.shape()),
        ] {
            if expected != actual {
                return Err(Error::ShapeMismatch {
                    expected: expected.to_vec(),
                    actual: actual.to_vec(),
                });
            }
        }
        Ok(())
    }
}

pub fn cell_position(row: usize, col: usize, stride: u32) -> Point2 {
    let d = f64::from(stride);
    Point2::new(col as f64 * d, row as f64 * d)
}

/// Circular set of feature cells owned by one object.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRegion {
    /// Intersection point in feature-map coordinates.
    pub center: Point2,
    /// Radius in feature cells.
    pub radius: f64,
    pub object_index: usize,
    pub branch: BranchId,
}

impl DriftRegion {
    /// The half-up rounded center cell `(row, col)`, clamped into the map.
    pub fn anchor(&self, width: usize, height: usize) -> (usize, usize) {
        let round = |v: f64, n: usize| ((v + 0.5).floor().max(0.0) as usize).min(n - 1);
        (round(self.center.y, height), round(self.center.x, width))
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let d = Point2::new(col as f64, row as f64).distance(self.center);
        d < self.radius
    }

    /// All in-map cells of the disc plus the anchor cell, in row-major order.
    pub fn cells(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        if width == 0 || height == 0 {
            return Vec::new();
        }
        let r = self.radius;
        // half-open index range of the disc's bounding square, clipped to the map
        let range = |v: f64, n: usize| {
            let lo = (v - r).ceil().max(0.0).min(n as f64) as usize;
            let hi = ((v + r).floor() + 1.0).clamp(0.0, n as f64) as usize;
            lo..hi.max(lo)
        };
        let anchor = self.anchor(width, height);
        let mut out = Vec::new();
        let mut has_anchor = false;
        for row in range(self.center.y, height) {
            for col in range(self.center.x, width) {
                if self.contains(row, col) {
                    has_anchor |= (row, col) == anchor;
                    out.push((row, col));
                }
            }
        }
        if !has_anchor {
            let pos = out.partition_point(|&c| c < anchor);
            out.insert(pos, anchor);
        }
        out
    }
}

/// Drift radius in feature cells: `min(r/stride, min(|L1|, |L2|)/(2·stride))`,
/// raised just enough that the rounded center cell lies inside the disc.
pub fn drift_radius(pair: &MidlinePair, stride: u32, r: f64) -> f64 {
    let d = f64::from(stride);
    let base = (r / d).min(pair.l1.length().min(pair.l2.length()) / (2.0 * d));
    let center = pair.intersection() * (1.0 / d);
    let anchor = Point2::new((center.x + 0.5).floor(), (center.y + 0.5).floor());
    base.max(anchor.distance(center) + 1e-9)
}

/// Picks the owner of a cell claimed by several objects: smallest polygon area,
/// then smallest index.
pub fn resolve_overlap(candidates: &[usize], annotations: &[OrientedBox]) -> Option<usize> {
    candidates.iter().copied().min_by(|&a, &b| {
        annotations[a]
            .area()
            .total_cmp(&annotations[b].area())
            .then(a.cmp(&b))
    })
}

/// Maps plus the drift regions that produced them.
#[derive(Debug, Clone)]
pub struct EncodedImage {
    pub maps: TargetMaps,
    pub regions: Vec<DriftRegion>,
    /// Annotations without a valid middle-line pair, with the reason.
    pub skipped: Vec<(usize, String)>,
}

pub fn encode_image(
    annotations: &[OrientedBox],
    image_w: u32,
    image_h: u32,
    num_classes: usize,
    config: &EncoderConfig,
) -> Result<EncodedImage> {
    config.validate()?;
    let mut maps = TargetMaps::zeros(image_w, image_h, config.stride, num_classes)?;
    let stride = f64::from(config.stride);

    let mut pairs = Vec::with_capacity(annotations.len());
    let mut regions = Vec::with_capacity(annotations.len());
    let mut skipped = Vec::new();
    for (index, ann) in annotations.iter().enumerate() {
        if ann.class_id >= num_classes {
            return Err(Error::ClassOutOfRange {
                class_id: ann.class_id,
                num_classes,
            });
        }
        let pair = match box_to_midlines(ann, config.branch_range) {
            Ok(p) => p,
            Err(e) => {
                skipped.push((index, e.to_string()));
                continue;
            }
        };
        let ip = pair.intersection();
        if !(0.0..=f64::from(image_w)).contains(&ip.x)
            || !(0.0..=f64::from(image_h)).contains(&ip.y)
        {
            return Err(Error::OutOfBounds {
                x: ip.x,
                y: ip.y,
                width: image_w,
                height: image_h,
            });
        }
        regions.push(DriftRegion {
            center: ip * (1.0 / stride),
            radius: drift_radius(&pair, config.stride, config.drift_r),
            object_index: index,
            branch: pair.branch,
        });
        pairs.push(pair);
    }

    let (w, h) = (maps.width, maps.height);
    let mut owner: Array3<Option<usize>> = Array3::from_elem((2, h, w), None);
    for (k, region) in regions.iter().enumerate() {
        let b = region.branch.index();
        for (row, col) in region.cells(w, h) {
            let slot = &mut owner[[b, row, col]];
            *slot = match *slot {
                None => Some(k),
                Some(prev) => {
                    let pick = resolve_overlap(
                        &[region.object_index, regions[prev].object_index],
                        annotations,
                    );
                    if pick == Some(region.object_index) {
                        Some(k)
                    } else {
                        Some(prev)
                    }
                }
            };
        }
    }

    for ((b, row, col), slot) in owner.indexed_iter() {
        let Some(k) = *slot else { continue };
        let class = annotations[regions[k].object_index].class_id;
        maps.heatmap[[b, class, row, col]] = 1.0;
        maps.reg_mask[[b, row, col]] = true;
        let q = cell_position(row, col, config.stride);
        for (i, ep) in pairs[k].endpoints().iter().enumerate() {
            maps.regression[[b, 2 * i, row, col]] = ep.x - q.x;
            maps.regression[[b, 2 * i + 1, row, col]] = ep.y - q.y;
        }
    }
    maps.n_objects = regions.len();

    Ok(EncodedImage {
        maps,
        regions,
        skipped,
    })
}
