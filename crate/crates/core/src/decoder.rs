//! Predicted maps → oriented detections.
//!
//! Each heatmap channel is binarized (`value > threshold`), split into
//! 8-connected domains, and every domain yields exactly one detection read
//! from the regression maps at its rounded centroid. There is no NMS and no
//! top-K cap; the only suppression is between the two branches.

use ndarray::{Array2, ArrayView2, ArrayView3};

use crate::encoder::{cell_position, TargetMaps};
use crate::error::{Error, Result};
use crate::eval::rotated_iou;
use crate::geometry::{midlines_to_box, BranchId, MidlinePair, OrientedBox, Point2};

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Member cells `(row, col)` in row-major order.
    pub cells: Vec<(usize, usize)>,
    /// Maximum heatmap value over the cells.
    pub score: f64,
    pub class_id: usize,
    pub branch: BranchId,
}

impl Component {
    /// Unweighted mean of the cell indices as `(row, col)`.
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.cells.len() as f64;
        let (sr, sc) = self.cells.iter().fold((0.0, 0.0), |(r, c), &(row, col)| {
            (r + row as f64, c + col as f64)
        });
        (sr / n, sc / n)
    }

    /// Centroid rounded half-up per axis.
    pub fn lookup_cell(&self) -> (usize, usize) {
        let (r, c) = self.centroid();
        ((r + 0.5).floor() as usize, (c + 0.5).floor() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Box with class and score (the component score) set.
    pub bbox: OrientedBox,
    pub branch: BranchId,
}

impl Detection {
    pub fn score(&self) -> f64 {
        self.bbox.score()
    }

    pub fn class_id(&self) -> usize {
        self.bbox.class_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Heatmap binarization threshold, strict.
    pub threshold: f64,
    /// Cross-branch duplicate IoU threshold, strict.
    pub merge_iou: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            merge_iou: 0.7,
        }
    }
}

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::invalid(format!(
            "{name} must lie in (0, 1), got {v}"
        )));
    }
    Ok(())
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit_open("threshold", self.threshold)?;
        check_unit_open("merge IoU threshold", self.merge_iou)
    }
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// 8-connected domains of `channel > threshold`, ordered by their first cell
/// in scan order.
pub fn extract_components(
    channel: ArrayView2<f64>,
    threshold: f64,
    class_id: usize,
    branch: BranchId,
) -> Result<Vec<Component>> {
    check_unit_open("threshold", threshold)?;
    let (h, w) = channel.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for ((row, col), &v) in channel.indexed_iter() {
        if seen[[row, col]] || v.is_nan() || v <= threshold {
            continue;
        }
        seen[[row, col]] = true;
        stack.push((row, col));
        let mut cells = Vec::new();
        let mut score = f64::NEG_INFINITY;
        while let Some((r, c)) = stack.pop() {
            cells.push((r, c));
            score = score.max(channel[[r, c]]);
            for (dr, dc) in NEIGHBORS {
                let (Some(nr), Some(nc)) = (r.checked_add_signed(dr), c.checked_add_signed(dc))
                else {
                    continue;
                };
                if nr < h && nc < w && !seen[[nr, nc]] && channel[[nr, nc]] > threshold {
                    seen[[nr, nc]] = true;
                    stack.push((nr, nc));
                }
            }
        }
        cells.sort_unstable();
        out.push(Component {
            cells,
            score,
            class_id,
            branch,
        });
    }
    Ok(out)
}

/// Reads the eight regression values at one cell and rebuilds the box.
pub fn detection_at_cell(
    cell: (usize, usize),
    regression: ArrayView3<f64>,
    stride: u32,
    branch: BranchId,
    class_id: usize,
    score: f64,
) -> Result<Detection> {
    let (row, col) = cell;
    let q = cell_position(row, col, stride);
    let ep = |i: usize| {
        q + Point2::new(
            regression[[2 * i, row, col]],
            regression[[2 * i + 1, row, col]],
        )
    };
    let pair = MidlinePair::from_endpoints((ep(0), ep(1)), (ep(2), ep(3)), branch)?;
    let bbox = midlines_to_box(&pair)?
        .with_class(class_id)
        .with_score(score);
    Ok(Detection { bbox, branch })
}

pub fn component_to_detection(
    comp: &Component,
    regression: ArrayView3<f64>,
    stride: u32,
) -> Result<Detection> {
    let (_, h, w) = regression.dim();
    if h == 0 || w == 0 || comp.cells.is_empty() {
        return Err(Error::invalid("empty component or regression map"));
    }
    let (row, col) = comp.lookup_cell();
    let cell = (row.min(h - 1), col.min(w - 1));
    detection_at_cell(
        cell,
        regression,
        stride,
        comp.branch,
        comp.class_id,
        comp.score,
    )
}

/// Drops, for each same-class cross-branch pair with IoU above the threshold,
/// the lower-scoring detection (equal scores keep the horizontal branch).
pub fn merge_branches(dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let bounds: Vec<_> = dets.iter().map(|d| d.bbox.bounds()).collect();
    let mut dropped = vec![false; dets.len()];
    let (horiz, orient): (Vec<usize>, Vec<usize>) =
        (0..dets.len()).partition(|&i| dets[i].branch == BranchId::Horizontal);
    for &i in &horiz {
        for &j in &orient {
            if dets[i].class_id() != dets[j].class_id() {
                continue;
            }
            let ((alo, ahi), (blo, bhi)) = (bounds[i], bounds[j]);
            if alo.x > bhi.x || blo.x > ahi.x || alo.y > bhi.y || blo.y > ahi.y {
                continue;
            }
            // decoded boxes are parallelograms, hence convex
            let iou = rotated_iou(&dets[i].bbox, &dets[j].bbox).unwrap_or(0.0);
            if iou > iou_threshold {
                if dets[j].score() > dets[i].score() {
                    dropped[i] = true;
                } else {
                    dropped[j] = true;
                }
            }
        }
    }
    dets.into_iter()
        .zip(dropped)
        .filter_map(|(d, drop)| (!drop).then_some(d))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub detections: Vec<Detection>,
    /// Components whose regressed middle lines could not form a box.
    pub dropped: usize,
}

/// Branch-major, class-minor, components in scan order, then branch merging.
pub fn decode(maps: &TargetMaps, config: &DecoderConfig) -> Result<DecodeOutput> {
    config.validate()?;
    maps.check_shapes()?;
    let mut detections = Vec::new();
    let mut dropped = 0;
    for branch in BranchId::ALL {
        let hm = maps.heatmap_branch(branch);
        let reg = maps.regression_branch(branch);
        for class_id in 0..maps.num_classes {
            let channel = hm.index_axis(ndarray::Axis(0), class_id);
            for comp in extract_components(channel, config.threshold, class_id, branch)? {
                match component_to_detection(&comp, reg, maps.stride) {
                    Ok(d) => detections.push(d),
                    Err(Error::DegenerateBox(_)) | Err(Error::InvalidBox(_)) => dropped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(DecodeOutput {
        detections: merge_branches(detections, config.merge_iou),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_image, EncoderConfig};
    use crate::geometry::{box_to_midlines, AngleRange};

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn empty_grid_has_no_components() {
        let g = Array2::<f64>::zeros((5, 5));
        assert!(extract_components(g.view(), 0.3, 0, BranchId::Horizontal)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn two_blocks_separated_by_zero_row() {
        let mut g = Array2::<f64>::zeros((7, 4));
        g.slice_mut(ndarray::s![0..3, 0..3]).fill(0.9);
        g.slice_mut(ndarray::s![4..7, 1..4]).fill(0.9);
        let comps = extract_components(g.view(), 0.3, 0, BranchId::Oriented).unwrap();
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.score == 0.9 && c.cells.len() == 9));
        assert_eq!(comps[0].cells[0], (0, 0));
        assert_eq!(comps[1].cells[0], (4, 1));
    }

    #[test]
    fn diagonal_cells_connect() {
        let mut g = Array2::<f64>::zeros((3, 3));
        g[[0, 0]] = 0.8;
        g[[1, 1]] = 0.8;
        let comps = extract_components(g.view(), 0.3, 0, BranchId::Horizontal).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].cells, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn binarization_is_strict() {
        let g = Array2::from_elem((2, 2), 0.3);
        assert!(extract_components(g.view(), 0.3, 0, BranchId::Horizontal)
            .unwrap()
            .is_empty());
        assert!(extract_components(g.view(), 0.0, 0, BranchId::Horizontal).is_err());
    }

    #[test]
    fn square_component_rounds_half_up() {
        let comp = Component {
            cells: vec![(10, 10), (10, 11), (11, 10), (11, 11)],
            score: 1.0,
            class_id: 0,
            branch: BranchId::Horizontal,
        };
        assert_eq!(comp.lookup_cell(), (11, 11));
    }

    #[test]
    fn single_cell_recovers_endpoints_exactly() {
        let b = OrientedBox::rectangle(p(101.3, 77.9), 64.2, 30.7, 37.0, 0).unwrap();
        let enc = encode_image(
            std::slice::from_ref(&b),
            200,
            160,
            1,
            &EncoderConfig::default(),
        )
        .unwrap();
        let region = &enc.regions[0];
        let cell = region.anchor(enc.maps.width, enc.maps.height);
        let comp = Component {
            cells: vec![cell],
            score: 1.0,
            class_id: 0,
            branch: region.branch,
        };
        let det =
            component_to_detection(&comp, enc.maps.regression_branch(region.branch), 4).unwrap();
        let truth = box_to_midlines(&b, AngleRange::default()).unwrap();
        let q = enc.maps.cell_position(cell.0, cell.1);
        let reg = enc.maps.regression_branch(region.branch);
        for (i, ep) in truth.endpoints().iter().enumerate() {
            let got = q + p(
                reg[[2 * i, cell.0, cell.1]],
                reg[[2 * i + 1, cell.0, cell.1]],
            );
            assert!(got.distance(*ep) < 1e-6);
        }
        assert!(rotated_iou(&det.bbox, &b).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn encoded_objects_decode_once_with_classes() {
        let boxes = vec![
            OrientedBox::rectangle(p(60., 60.), 60., 30., 0., 0).unwrap(),
            OrientedBox::rectangle(p(200., 60.), 70., 24., 30., 1).unwrap(),
            OrientedBox::rectangle(p(130., 160.), 40., 40., 60., 2).unwrap(),
        ];
        let enc = encode_image(&boxes, 260, 220, 3, &EncoderConfig::default()).unwrap();
        let out = decode(&enc.maps, &DecoderConfig::default()).unwrap();
        assert_eq!(out.detections.len(), 3);
        assert_eq!(out.dropped, 0);
        for b in &boxes {
            let best = out
                .detections
                .iter()
                .filter(|d| d.class_id() == b.class_id)
                .map(|d| rotated_iou(&d.bbox, b).unwrap())
                .fold(0.0, f64::max);
            assert!(best >= 0.99, "{best}");
        }
    }

    #[test]
    fn near_vertical_object_stays_in_horizontal_branch() {
        let b = OrientedBox::rectangle(p(80., 80.), 60., 30., -1.0, 0).unwrap(); // 89° midline
        let enc = encode_image(&[b], 160, 160, 1, &EncoderConfig::default()).unwrap();
        assert!(enc
            .maps
            .heatmap_branch(BranchId::Oriented)
            .iter()
            .all(|&v| v == 0.0));
        let out = decode(&enc.maps, &DecoderConfig::default()).unwrap();
        assert_eq!(out.detections.len(), 1);
        assert_eq!(out.detections[0].branch, BranchId::Horizontal);
    }

    #[test]
    fn empty_maps_decode_to_nothing() {
        let maps = TargetMaps::zeros(64, 64, 4, 2).unwrap();
        assert!(decode(&maps, &DecoderConfig::default())
            .unwrap()
            .detections
            .is_empty());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut maps = TargetMaps::zeros(64, 64, 4, 2).unwrap();
        maps.regression = ndarray::Array4::zeros((2, 8, 3, 3));
        assert!(matches!(
            decode(&maps, &DecoderConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_regression_is_dropped() {
        let mut maps = TargetMaps::zeros(16, 16, 4, 1).unwrap();
        maps.heatmap[[0, 0, 1, 1]] = 0.9;
        let out = decode(&maps, &DecoderConfig::default()).unwrap();
        assert_eq!((out.detections.len(), out.dropped), (0, 1));
    }

    fn det(b: &OrientedBox, score: f64, branch: BranchId) -> Detection {
        Detection {
            bbox: b.clone().with_score(score),
            branch,
        }
    }

    #[test]
    fn merge_keeps_higher_cross_branch_score() {
        let b = OrientedBox::rectangle(p(50., 50.), 40., 20., 10., 0).unwrap();
        let out = merge_branches(
            vec![
                det(&b, 0.6, BranchId::Horizontal),
                det(&b, 0.8, BranchId::Oriented),
            ],
            0.7,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score(), 0.8);
        let tie = merge_branches(
            vec![
                det(&b, 0.7, BranchId::Oriented),
                det(&b, 0.7, BranchId::Horizontal),
            ],
            0.7,
        );
        assert_eq!(tie.len(), 1);
        assert_eq!(tie[0].branch, BranchId::Horizontal);
    }

    #[test]
    fn merge_leaves_same_branch_and_low_iou_pairs() {
        let a = OrientedBox::rectangle(p(50., 50.), 40., 20., 0., 0).unwrap();
        let shifted = a.translated(p(2., 0.));
        let same = merge_branches(
            vec![
                det(&a, 0.9, BranchId::Oriented),
                det(&shifted, 0.5, BranchId::Oriented),
            ],
            0.7,
        );
        assert_eq!(same.len(), 2);
        // IoU 0.3 across branches
        let far = a.translated(p(21.538461538461537, 0.));
        let iou = rotated_iou(&a, &far).unwrap();
        assert!((iou - 0.3).abs() < 1e-9, "{iou}");
        let cross = merge_branches(
            vec![
                det(&a, 0.9, BranchId::Horizontal),
                det(&far, 0.5, BranchId::Oriented),
            ],
            0.7,
        );
        assert_eq!(cross.len(), 2);
        // different classes never merge
        let other = det(&a.clone().with_class(1), 0.5, BranchId::Oriented);
        assert_eq!(
            merge_branches(vec![det(&a, 0.9, BranchId::Horizontal), other], 0.7).len(),
            2
        );
    }

    #[test]
    fn ridge_splits_when_threshold_rises() {
        let g = ndarray::arr2(&[[0.9, 0.5, 0.9]]);
        let n = |t| {
            extract_components(g.view(), t, 0, BranchId::Horizontal)
                .unwrap()
                .len()
        };
        assert_eq!((n(0.3), n(0.6)), (1, 2));
    }

    fn grid() -> impl proptest::strategy::Strategy<Value = Array2<f64>> {
        use proptest::prelude::*;
        (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
            prop::collection::vec(0.0..1.0f64, h * w)
                .prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
        })
    }

    proptest::proptest! {
        #[test]
        fn higher_threshold_components_nest(g in grid(), lo in 0.01..0.98f64, gap in 0.0..0.5f64) {
            let hi = (lo + gap).min(0.99);
            let low = extract_components(g.view(), lo, 0, BranchId::Horizontal).unwrap();
            let high = extract_components(g.view(), hi, 0, BranchId::Horizontal).unwrap();
            for c in &high {
                let owners = low.iter().filter(|l| c.cells.iter().all(|x| l.cells.contains(x))).count();
                proptest::prop_assert_eq!(owners, 1);
            }
            let cells = |v: &[Component]| v.iter().map(|c| c.cells.len()).sum::<usize>();
            proptest::prop_assert!(cells(&high) <= cells(&low));
        }

        #[test]
        fn binary_maps_are_threshold_independent(g in grid(), t1 in 0.01..0.99f64, t2 in 0.01..0.99f64) {
            let b = g.mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
            let a = extract_components(b.view(), t1.min(t2), 0, BranchId::Horizontal).unwrap();
            let c = extract_components(b.view(), t1.max(t2), 0, BranchId::Horizontal).unwrap();
            proptest::prop_assert_eq!(a, c);
        }
    }
}
