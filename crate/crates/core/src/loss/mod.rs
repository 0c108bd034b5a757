//! Intersection-point focal loss and the three-part Line Loss.
//!
//! All losses return their value together with the analytic gradient with
//! respect to the prediction grid. Per-branch shapes are `[C][H][W]` for
//! heatmaps, `[8][H][W]` for regression maps and `[H][W]` for masks.
//!
//! The collinearity and perpendicularity terms measure endpoint offsets from
//! the predicted intersection point, i.e. the mean of the four predicted
//! endpoints. At the true intersection cell of a target that mean offset is
//! zero and the terms act on the raw regressed offsets.

pub mod gradcheck;

use ndarray::{Array3, Array4, ArrayView2, ArrayView3, Zip};

use crate::encoder::{TargetMaps, REG_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::{BranchId, Point2};

/// Heatmap predictions are clamped to `(PROB_EPS, 1 - PROB_EPS)` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    /// Focal exponent of the intersection-point loss.
    pub alpha_focal: f64,
    /// Weight of the collinearity term.
    pub alpha: f64,
    /// Weight of the perpendicularity term.
    pub beta: f64,
    /// Weight of the Line Loss in the total.
    pub gamma: f64,
    /// Drops the perpendicularity term (quadrilateral text annotations).
    pub text_mode: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_focal: 2.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
            text_mode: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_focal, self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(format!(
                "loss weights must be finite and >= 0: {all:?}"
            )));
        }
        Ok(())
    }

    /// Effective weight of the perpendicularity term.
    pub fn beta_effective(&self) -> f64 {
        if self.text_mode {
            0.0
        } else {
            self.beta
        }
    }
}

/// Smooth-L1 with transition at 1; returns the value and `d value / d pred`.
pub fn smooth_l1(pred: f64, target: f64) -> (f64, f64) {
    let d = pred - target;
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

fn check_shape(expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}

fn check_reg_shapes(pred: &ArrayView3<f64>, mask: &ArrayView2<bool>) -> Result<()> {
    let (h, w) = mask.dim();
    check_shape(&[REG_CHANNELS, h, w], pred.shape())
}

fn normalizer(n_objects: usize) -> f64 {
    n_objects.max(1) as f64
}

pub fn focal_ip_loss(
    pred: ArrayView3<f64>,
    gt: ArrayView3<f64>,
    n_objects: usize,
    alpha_focal: f64,
) -> Result<(f64, Array3<f64>)> {
    check_shape(gt.shape(), pred.shape())?;
    if let Some(&bad) = gt.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::NonBinaryGroundTruth(bad));
    }
    let n = normalizer(n_objects);
    let a = alpha_focal;
    let mut grad = Array3::zeros(pred.raw_dim());
    let mut sum = 0.0;
    Zip::from(&mut grad)
        .and(&pred)
        .and(&gt)
        .for_each(|g, &p, &y| {
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let pass = if p > PROB_EPS && p < 1.0 - PROB_EPS {
                1.0
            } else {
                0.0
            };
            let (term, dterm) = if y == 1.0 {
                let q = 1.0 - pc;
                let term = q.powf(a) * pc.ln();
                let dterm = -a * q.powf(a - 1.0) * pc.ln() + q.powf(a) / pc;
                (term, dterm)
            } else {
                let q = 1.0 - pc;
                let term = pc.powf(a) * q.ln();
                let dterm = a * pc.powf(a - 1.0) * q.ln() - pc.powf(a) / q;
                (term, dterm)
            };
            sum += term;
            *g = -dterm * pass / n;
        });
    Ok((-sum / n, grad))
}

pub fn endpoint_loss(
    pred: ArrayView3<f64>,
    target: ArrayView3<f64>,
    mask: ArrayView2<bool>,
    n_objects: usize,
) -> Result<(f64, Array3<f64>)> {
    check_reg_shapes(&pred, &mask)?;
    check_shape(pred.shape(), target.shape())?;
    let n = normalizer(n_objects);
    let mut grad = Array3::zeros(pred.raw_dim());
    let mut sum = 0.0;
    for ((row, col), _) in mask.indexed_iter().filter(|(_, &m)| m) {
        for c in 0..REG_CHANNELS {
            let (v, d) = smooth_l1(pred[[c, row, col]], target[[c, row, col]]);
            sum += v;
            grad[[c, row, col]] = d / n;
        }
    }
    Ok((sum / n, grad))
}

/// Collinearity of two endpoint offsets with the origin:
/// `smooth_l1(a.x·b.y, b.x·a.y)`. Gradient order is `[a.x, a.y, b.x, b.y]`.
pub fn collinear_term(a: Point2, b: Point2) -> (f64, [f64; 4]) {
    let (v, s) = smooth_l1(a.x * b.y, b.x * a.y);
    (v, [s * b.y, -s * b.x, -s * a.y, s * a.x])
}

/// Perpendicularity of two offsets: `smooth_l1(a·b, 0)`.
/// Gradient order is `[a.x, a.y, b.x, b.y]`.
pub fn perpendicular_term(a: Point2, b: Point2) -> (f64, [f64; 4]) {
    let (v, s) = smooth_l1(a.dot(b), 0.0);
    (v, [s * b.x, s * b.y, s * a.x, s * a.y])
}

pub(crate) fn cell_deltas(reg: &ArrayView3<f64>, row: usize, col: usize) -> [f64; 8] {
    std::array::from_fn(|c| reg[[c, row, col]])
}

/// Offsets re-expressed relative to the mean of the four endpoints.
pub fn center_offsets(delta: [f64; 8]) -> [f64; 8] {
    let mx = 0.25 * (delta[0] + delta[2] + delta[4] + delta[6]);
    let my = 0.25 * (delta[1] + delta[3] + delta[5] + delta[7]);
    std::array::from_fn(|i| delta[i] - if i % 2 == 0 { mx } else { my })
}

/// Pulls a gradient w.r.t. centered offsets back to the raw offsets.
pub fn uncenter_gradient(g: [f64; 8]) -> [f64; 8] {
    // centering is a symmetric projection, so its adjoint is itself
    center_offsets(g)
}

fn point(d: &[f64; 8], i: usize) -> Point2 {
    Point2::new(d[2 * i], d[2 * i + 1])
}

/// Per-cell collinearity sum over both lines, with gradient w.r.t. raw offsets.
pub(crate) fn collinear_cell(delta: [f64; 8]) -> (f64, [f64; 8]) {
    let d = center_offsets(delta);
    let mut g = [0.0; 8];
    let mut v = 0.0;
    for line in 0..2 {
        let (val, gl) = collinear_term(point(&d, 2 * line), point(&d, 2 * line + 1));
        v += val;
        g[4 * line..4 * line + 4].copy_from_slice(&gl);
    }
    (v, uncenter_gradient(g))
}

/// Per-cell perpendicularity of the two endpoint-1 offsets.
pub(crate) fn vertical_cell(delta: [f64; 8]) -> (f64, [f64; 8]) {
    let d = center_offsets(delta);
    let (v, gp) = perpendicular_term(point(&d, 0), point(&d, 2));
    let mut g = [0.0; 8];
    g[0] = gp[0];
    g[1] = gp[1];
    g[4] = gp[2];
    g[5] = gp[3];
    (v, uncenter_gradient(g))
}

fn masked_cell_loss(
    pred: ArrayView3<f64>,
    mask: ArrayView2<bool>,
    n_objects: usize,
    cell: fn([f64; 8]) -> (f64, [f64; 8]),
) -> Result<(f64, Array3<f64>)> {
    check_reg_shapes(&pred, &mask)?;
    let n = normalizer(n_objects);
    let mut grad = Array3::zeros(pred.raw_dim());
    let mut sum = 0.0;
    for ((row, col), _) in mask.indexed_iter().filter(|(_, &m)| m) {
        let (v, g) = cell(cell_deltas(&pred, row, col));
        sum += v;
        for (c, gc) in g.iter().enumerate() {
            grad[[c, row, col]] = gc / n;
        }
    }
    Ok((sum / n, grad))
}

pub fn collinear_loss(
    pred: ArrayView3<f64>,
    mask: ArrayView2<bool>,
    n_objects: usize,
) -> Result<(f64, Array3<f64>)> {
    masked_cell_loss(pred, mask, n_objects, collinear_cell)
}

pub fn vertical_loss(
    pred: ArrayView3<f64>,
    mask: ArrayView2<bool>,
    n_objects: usize,
) -> Result<(f64, Array3<f64>)> {
    masked_cell_loss(pred, mask, n_objects, vertical_cell)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineLossValue {
    /// `l1 + alpha·l2 + beta·l3`, the last term dropped in text mode.
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub grad: Array3<f64>,
}

pub fn combine_line(l1: f64, l2: f64, l3: f64, weights: &LossWeights) -> f64 {
    l1 + weights.alpha * l2 + weights.beta_effective() * l3
}

pub fn line_loss(
    pred: ArrayView3<f64>,
    target: ArrayView3<f64>,
    mask: ArrayView2<bool>,
    n_objects: usize,
    weights: &LossWeights,
) -> Result<LineLossValue> {
    let (l1, g1) = endpoint_loss(pred, target, mask, n_objects)?;
    let (l2, g2) = collinear_loss(pred, mask, n_objects)?;
    let (l3, g3) = vertical_loss(pred, mask, n_objects)?;
    let beta = weights.beta_effective();
    let grad = g1 + &(g2 * weights.alpha) + &(g3 * beta);
    Ok(LineLossValue {
        total: combine_line(l1, l2, l3, weights),
        l1,
        l2,
        l3,
        grad,
    })
}

/// Gradients of the total loss w.r.t. every prediction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    /// `[branch][class][row][col]`
    pub heatmap: Array4<f64>,
    /// `[branch][channel][row][col]`
    pub regression: Array4<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub ip: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub gradients: Option<LossGradients>,
}

/// `ip + gamma·(l1 + alpha·l2 + beta·l3)`, with `l3` dropped in text mode.
pub fn combine_total(ip: f64, l1: f64, l2: f64, l3: f64, weights: &LossWeights) -> f64 {
    ip + weights.gamma * combine_line(l1, l2, l3, weights)
}

/// Sum over both branches of the focal loss plus `gamma` times the Line Loss.
///
/// Masks and the object count come from `target`.
pub fn total_loss(
    pred: &TargetMaps,
    target: &TargetMaps,
    weights: &LossWeights,
    with_gradients: bool,
) -> Result<LossValue> {
    weights.validate()?;
    target.check_shapes()?;
    check_shape(target.heatmap.shape(), pred.heatmap.shape())?;
    check_shape(target.regression.shape(), pred.regression.shape())?;
    let n = target.n_objects;
    let mut grads = with_gradients.then(|| LossGradients {
        heatmap: Array4::zeros(pred.heatmap.raw_dim()),
        regression: Array4::zeros(pred.regression.raw_dim()),
    });
    let (mut ip, mut l1, mut l2, mut l3) = (0.0, 0.0, 0.0, 0.0);
    for branch in BranchId::ALL {
        let b = branch.index();
        let (v, g_hm) = focal_ip_loss(
            pred.heatmap_branch(branch),
            target.heatmap_branch(branch),
            n,
            weights.alpha_focal,
        )?;
        ip += v;
        let line = line_loss(
            pred.regression_branch(branch),
            target.regression_branch(branch),
            target.mask_branch(branch),
            n,
            weights,
        )?;
        l1 += line.l1;
        l2 += line.l2;
        l3 += line.l3;
        if let Some(g) = grads.as_mut() {
            g.heatmap.index_axis_mut(ndarray::Axis(0), b).assign(&g_hm);
            g.regression
                .index_axis_mut(ndarray::Axis(0), b)
                .assign(&(line.grad * weights.gamma));
        }
    }
    Ok(LossValue {
        total: combine_total(ip, l1, l2, l3, weights),
        ip,
        l1,
        l2,
        l3,
        gradients: grads,
    })
}
