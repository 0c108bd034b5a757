//! Central finite differences against the analytic loss gradients.
//!
//! Each loss is wrapped as a [`Differentiable`] function of one flat parameter
//! vector. Evaluation points must keep every Smooth-L1 argument away from the
//! `|x| = 1` kink and every heatmap value away from the clamp bounds, else the
//! check reports [`Error::KinkProximity`].

use ndarray::{Array2, Array3, ArrayView3};
use rand::Rng;

use super::{
    center_offsets, collinear_loss, endpoint_loss, focal_ip_loss, line_loss, total_loss,
    uncenter_gradient, vertical_loss, LossWeights, PROB_EPS,
};
use crate::encoder::{TargetMaps, REG_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::{BranchId, Point2};

/// Gradients below this magnitude are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

pub trait Differentiable {
    fn name(&self) -> &'static str;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Fails when a central difference of width `step` may cross a kink.
    fn check_smooth(&self, x: &[f64], step: f64) -> Result<()>;
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

pub fn grad_check(
    loss: &dyn Differentiable,
    point: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be > 0"));
    }
    loss.check_smooth(point, step)?;
    let analytic = loss.gradient(point);
    let numeric = central_difference(|x| loss.value(x), point, step);
    let mut report = GradCheckReport {
        name: loss.name(),
        n_params: point.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        passed: true,
    };
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = relative_error(a, n);
        report.max_abs_error = report.max_abs_error.max((a - n).abs());
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}

fn kink_error(what: &str, arg: f64, reach: f64) -> Error {
    Error::KinkProximity(format!(
        "{what} argument {arg:.6} within {reach:.2e} of the |x|=1 kink"
    ))
}

/// `reach` is how far the argument can move under a probe of width `step`.
fn check_arg(what: &str, arg: f64, sensitivity: f64, step: f64) -> Result<()> {
    let reach = 10.0 * step * sensitivity.max(1.0);
    if (arg.abs() - 1.0).abs() <= reach {
        return Err(kink_error(what, arg, reach));
    }
    Ok(())
}

fn check_probabilities(pred: &[f64], step: f64) -> Result<()> {
    let lo = PROB_EPS + 10.0 * step;
    let hi = 1.0 - PROB_EPS - 10.0 * step;
    if let Some(p) = pred.iter().find(|&&p| !(lo..=hi).contains(&p)) {
        return Err(Error::KinkProximity(format!(
            "heatmap value {p} outside [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn max_abs(g: [f64; 8]) -> f64 {
    g.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn check_line_args(
    reg: ArrayView3<f64>,
    target: Option<ArrayView3<f64>>,
    mask: &Array2<bool>,
    collinear: bool,
    vertical: bool,
    step: f64,
) -> Result<()> {
    for ((row, col), _) in mask.indexed_iter().filter(|(_, &m)| m) {
        let delta: [f64; 8] = std::array::from_fn(|c| reg[[c, row, col]]);
        if let Some(t) = target {
            for (c, d) in delta.iter().enumerate() {
                check_arg("endpoint", d - t[[c, row, col]], 1.0, step)?;
            }
        }
        let d = center_offsets(delta);
        let p = |i: usize| Point2::new(d[2 * i], d[2 * i + 1]);
        if collinear {
            for line in 0..2 {
                let (a, b) = (p(2 * line), p(2 * line + 1));
                let mut g = [0.0; 8];
                g[4 * line..4 * line + 4].copy_from_slice(&[b.y, -b.x, -a.y, a.x]);
                check_arg("collinear", a.cross(b), max_abs(uncenter_gradient(g)), step)?;
            }
        }
        if vertical {
            let (a, b) = (p(0), p(2));
            let mut g = [0.0; 8];
            g[0] = b.x;
            g[1] = b.y;
            g[4] = a.x;
            g[5] = a.y;
            check_arg("vertical", a.dot(b), max_abs(uncenter_gradient(g)), step)?;
        }
    }
    Ok(())
}

fn grid(shape: (usize, usize, usize), x: &[f64]) -> Array3<f64> {
    Array3::from_shape_vec(shape, x.to_vec()).expect("parameter vector matches grid shape")
}

fn flat(a: Array3<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

#[derive(Debug, Clone)]
pub struct FocalCase {
    pub gt: Array3<f64>,
    pub n_objects: usize,
    pub alpha_focal: f64,
}

impl Differentiable for FocalCase {
    fn name(&self) -> &'static str {
        "focal_ip"
    }
    fn value(&self, x: &[f64]) -> f64 {
        let p = grid(self.gt.dim(), x);
        focal_ip_loss(p.view(), self.gt.view(), self.n_objects, self.alpha_focal)
            .unwrap()
            .0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = grid(self.gt.dim(), x);
        flat(
            focal_ip_loss(p.view(), self.gt.view(), self.n_objects, self.alpha_focal)
                .unwrap()
                .1,
        )
    }
    fn check_smooth(&self, x: &[f64], step: f64) -> Result<()> {
        check_probabilities(x, step)
    }
}

#[derive(Debug, Clone)]
pub struct EndpointCase {
    pub target: Array3<f64>,
    pub mask: Array2<bool>,
    pub n_objects: usize,
}

impl Differentiable for EndpointCase {
    fn name(&self) -> &'static str {
        "endpoint"
    }
    fn value(&self, x: &[f64]) -> f64 {
        let p = grid(self.target.dim(), x);
        endpoint_loss(
            p.view(),
            self.target.view(),
            self.mask.view(),
            self.n_objects,
        )
        .unwrap()
        .0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = grid(self.target.dim(), x);
        flat(
            endpoint_loss(
                p.view(),
                self.target.view(),
                self.mask.view(),
                self.n_objects,
            )
            .unwrap()
            .1,
        )
    }
    fn check_smooth(&self, x: &[f64], step: f64) -> Result<()> {
        let p = grid(self.target.dim(), x);
        check_line_args(
            p.view(),
            Some(self.target.view()),
            &self.mask,
            false,
            false,
            step,
        )
    }
}

fn reg_shape(mask: &Array2<bool>) -> (usize, usize, usize) {
    let (h, w) = mask.dim();
    (REG_CHANNELS, h, w)
}

#[derive(Debug, Clone)]
pub struct CollinearCase {
    pub mask: Array2<bool>,
    pub n_objects: usize,
}

impl Differentiable for CollinearCase {
    fn name(&self) -> &'static str {
        "collinear"
    }
    fn value(&self, x: &[f64]) -> f64 {
        let p = grid(reg_shape(&self.mask), x);
        collinear_loss(p.view(), self.mask.view(), self.n_objects)
            .unwrap()
            .0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = grid(reg_shape(&self.mask), x);
        flat(
            collinear_loss(p.view(), self.mask.view(), self.n_objects)
                .unwrap()
                .1,
        )
    }
    fn check_smooth(&self, x: &[f64], step: f64) -> Result<()> {
        let p = grid(reg_shape(&self.mask), x);
        check_line_args(p.view(), None, &self.mask, true, false, step)
    }
}

#[derive(Debug, Clone)]
pub struct VerticalCase {
    pub mask: Array2<bool>,
    pub n_objects: usize,
}

impl Differentiable for VerticalCase {
    fn name(&self) -> &'static str {
        "vertical"
    }
    fn value(&self, x: &[f64]) -> f64 {
        let p = grid(reg_shape(&self.mask), x);
        vertical_loss(p.view(), self.mask.view(), self.n_objects)
            .unwrap()
            .0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = grid(reg_shape(&self.mask), x);
        flat(
            vertical_loss(p.view(), self.mask.view(), self.n_objects)
                .unwrap()
                .1,
        )
    }
    fn check_smooth(&self, x: &[f64], step: f64) -> Result<()> {
        let p = grid(reg_shape(&self.mask), x);
        check_line_args(p.view(), None, &self.mask, false, true, step)
    }
}

#[derive(Debug, Clone)]
pub struct LineCase {
    pub target: Array3<f64>,
    pub mask: Array2<bool>,
    pub n_objects: usize,
    pub weights: LossWeights,
}

impl Differentiable for LineCase {
    fn name(&self) -> &'static str {
        "line"
    }
    fn value(&self, x: &[f64]) -> f64 {
        let p = grid(self.target.dim(), x);
        line_loss(
            p.view(),
            self.target.view(),
            self.mask.view(),
            self.n_objects,
            &self.weights,
        )
        .unwrap()
        .total
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = grid(self.target.dim(), x);
        flat(
            line_loss(
                p.view(),
                self.target.view(),
                self.mask.view(),
                self.n_objects,
                &self.weights,
            )
            .unwrap()
            .grad,
        )
    }
    fn check_smooth(&self, x: &[f64], step: f64) -> Result<()> {
        let p = grid(self.target.dim(), x);
        let vertical = self.weights.beta_effective() > 0.0;
        check_line_args(
            p.view(),
            Some(self.target.view()),
            &self.mask,
            true,
            vertical,
            step,
        )
    }
}

/// Total loss over both branches; parameters are the flattened heatmap grid
/// followed by the flattened regression grid.
#[derive(Debug, Clone)]
pub struct TotalCase {
    pub target: TargetMaps,
    pub weights: LossWeights,
}

impl TotalCase {
    fn unpack(&self, x: &[f64]) -> TargetMaps {
        let mut pred = self.target.clone();
        let n_hm = pred.heatmap.len();
        pred.heatmap
            .iter_mut()
            .zip(&x[..n_hm])
            .for_each(|(d, &s)| *d = s);
        pred.regression
            .iter_mut()
            .zip(&x[n_hm..])
            .for_each(|(d, &s)| *d = s);
        pred
    }

    pub fn pack(pred: &TargetMaps) -> Vec<f64> {
        pred.heatmap
            .iter()
            .chain(pred.regression.iter())
            .copied()
            .collect()
    }
}

impl Differentiable for TotalCase {
    fn name(&self) -> &'static str {
        "total"
    }
    fn value(&self, x: &[f64]) -> f64 {
        total_loss(&self.unpack(x), &self.target, &self.weights, false)
            .unwrap()
            .total
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let v = total_loss(&self.unpack(x), &self.target, &self.weights, true).unwrap();
        let g = v.gradients.expect("gradients requested");
        g.heatmap
            .iter()
            .chain(g.regression.iter())
            .copied()
            .collect()
    }
    fn check_smooth(&self, x: &[f64], step: f64) -> Result<()> {
        let pred = self.unpack(x);
        check_probabilities(&x[..pred.heatmap.len()], step)?;
        let vertical = self.weights.beta_effective() > 0.0;
        for branch in BranchId::ALL {
            let mask = self.target.mask_branch(branch).to_owned();
            check_line_args(
                pred.regression_branch(branch),
                Some(self.target.regression_branch(branch)),
                &mask,
                true,
                vertical,
                step,
            )?;
        }
        Ok(())
    }
}

/// Negative control: corrupts the analytic gradient of the wrapped loss.
pub struct Perturbed<'a> {
    pub inner: &'a dyn Differentiable,
    pub bias: f64,
}

impl Differentiable for Perturbed<'_> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.inner
            .gradient(x)
            .into_iter()
            .map(|g| g * (1.0 + self.bias) + self.bias)
            .collect()
    }
    fn check_smooth(&self, x: &[f64], step: f64) -> Result<()> {
        self.inner.check_smooth(x, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Focal,
    Endpoint,
    Collinear,
    Vertical,
    Line,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Focal,
        LossKind::Endpoint,
        LossKind::Collinear,
        LossKind::Vertical,
        LossKind::Line,
        LossKind::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Focal => "focal_ip",
            LossKind::Endpoint => "endpoint",
            LossKind::Collinear => "collinear",
            LossKind::Vertical => "vertical",
            LossKind::Line => "line",
            LossKind::Total => "total",
        }
    }
}

const GRID_H: usize = 4;
const GRID_W: usize = 4;
const GRID_C: usize = 2;

/// Offsets of a slightly perturbed rectangle seen from a nearby cell.
fn near_rectangle<R: Rng>(rng: &mut R, noise: f64) -> [f64; 8] {
    let c = Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let t = rng.random_range(0.0..std::f64::consts::PI);
    let u = Point2::new(t.cos(), t.sin()) * rng.random_range(5.0..30.0);
    let v = Point2::new(-t.sin(), t.cos()) * rng.random_range(5.0..30.0);
    let pts = [c + u, c - u, c + v, c - v];
    std::array::from_fn(|i| {
        let p = pts[i / 2];
        let base = if i % 2 == 0 { p.x } else { p.y };
        base + rng.random_range(-noise..noise)
    })
}

fn random_cell<R: Rng>(rng: &mut R) -> [f64; 8] {
    match rng.random_range(0..3) {
        0 => std::array::from_fn(|_| rng.random_range(-30.0..30.0)),
        1 => near_rectangle(rng, 0.01),
        _ => near_rectangle(rng, 0.5),
    }
}

fn random_mask<R: Rng>(rng: &mut R) -> Array2<bool> {
    let mut mask = Array2::from_shape_fn((GRID_H, GRID_W), |_| rng.random_bool(0.6));
    mask[[rng.random_range(0..GRID_H), rng.random_range(0..GRID_W)]] = true;
    mask
}

fn random_reg<R: Rng>(rng: &mut R) -> Array3<f64> {
    let mut reg = Array3::zeros((REG_CHANNELS, GRID_H, GRID_W));
    for row in 0..GRID_H {
        for col in 0..GRID_W {
            for (c, v) in random_cell(rng).into_iter().enumerate() {
                reg[[c, row, col]] = v;
            }
        }
    }
    reg
}

/// Prediction near a target, off by up to two pixels per channel.
fn jitter<R: Rng>(rng: &mut R, target: &Array3<f64>) -> Array3<f64> {
    target.mapv(|t| t + rng.random_range(-2.0..2.0))
}

fn random_probabilities<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.02..0.98)).collect()
}

fn random_gt<R: Rng>(rng: &mut R, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| if rng.random_bool(0.2) { 1.0 } else { 0.0 })
}

fn draw_case<R: Rng>(
    kind: LossKind,
    rng: &mut R,
    weights: &LossWeights,
) -> (Box<dyn Differentiable>, Vec<f64>) {
    let n_objects = rng.random_range(1..4);
    match kind {
        LossKind::Focal => {
            let gt = random_gt(rng, (GRID_C, GRID_H, GRID_W));
            let x = random_probabilities(rng, gt.len());
            let alpha_focal = weights.alpha_focal;
            (
                Box::new(FocalCase {
                    gt,
                    n_objects,
                    alpha_focal,
                }),
                x,
            )
        }
        LossKind::Endpoint => {
            let target = random_reg(rng);
            let x = flat(jitter(rng, &target));
            let mask = random_mask(rng);
            (
                Box::new(EndpointCase {
                    target,
                    mask,
                    n_objects,
                }),
                x,
            )
        }
        LossKind::Collinear => {
            let x = flat(random_reg(rng));
            (
                Box::new(CollinearCase {
                    mask: random_mask(rng),
                    n_objects,
                }),
                x,
            )
        }
        LossKind::Vertical => {
            let x = flat(random_reg(rng));
            (
                Box::new(VerticalCase {
                    mask: random_mask(rng),
                    n_objects,
                }),
                x,
            )
        }
        LossKind::Line => {
            let target = random_reg(rng);
            let x = if rng.random_bool(0.5) {
                flat(jitter(rng, &target))
            } else {
                flat(random_reg(rng))
            };
            let mask = random_mask(rng);
            (
                Box::new(LineCase {
                    target,
                    mask,
                    n_objects,
                    weights: *weights,
                }),
                x,
            )
        }
        LossKind::Total => {
            let mut target =
                TargetMaps::zeros(GRID_W as u32, GRID_H as u32, 1, GRID_C).expect("stride 1");
            target.heatmap = ndarray::Array4::from_shape_fn(target.heatmap.raw_dim(), |_| {
                if rng.random_bool(0.2) {
                    1.0
                } else {
                    0.0
                }
            });
            for b in 0..2 {
                let reg = random_reg(rng);
                target
                    .regression
                    .index_axis_mut(ndarray::Axis(0), b)
                    .assign(&reg);
                let mask = random_mask(rng);
                target
                    .reg_mask
                    .index_axis_mut(ndarray::Axis(0), b)
                    .assign(&mask);
            }
            target.n_objects = n_objects;
            let mut pred = target.clone();
            pred.heatmap = ndarray::Array4::from_shape_fn(pred.heatmap.raw_dim(), |_| {
                rng.random_range(0.02..0.98)
            });
            pred.regression
                .mapv_inplace(|t| t + rng.random_range(-2.0..2.0));
            let x = TotalCase::pack(&pred);
            (
                Box::new(TotalCase {
                    target,
                    weights: *weights,
                }),
                x,
            )
        }
    }
}

/// Draws a random evaluation point that passes the kink precondition.
pub fn sample_case<R: Rng>(
    kind: LossKind,
    rng: &mut R,
    weights: &LossWeights,
    step: f64,
) -> Result<(Box<dyn Differentiable>, Vec<f64>)> {
    let mut last = None;
    for _ in 0..1000 {
        let (case, x) = draw_case(kind, rng, weights);
        match case.check_smooth(&x, step) {
            Ok(()) => return Ok((case, x)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::invalid("no smooth evaluation point found")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub kind: LossKind,
    pub samples: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Runs `samples` random checks per loss. `perturb` corrupts every analytic
/// gradient by the given bias.
pub fn run_suite<R: Rng>(
    rng: &mut R,
    samples: usize,
    step: f64,
    tolerance: f64,
    weights: &LossWeights,
    perturb: Option<f64>,
) -> Result<Vec<SuiteResult>> {
    if samples == 0 {
        return Err(Error::invalid("samples must be >= 1"));
    }
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let mut worst = 0.0_f64;
            for _ in 0..samples {
                let (case, x) = sample_case(kind, rng, weights, step)?;
                let report = match perturb {
                    Some(bias) => grad_check(
                        &Perturbed {
                            inner: case.as_ref(),
                            bias,
                        },
                        &x,
                        step,
                        tolerance,
                    )?,
                    None => grad_check(case.as_ref(), &x, step, tolerance)?,
                };
                worst = worst.max(report.max_rel_error);
                if report.max_rel_error.is_nan() {
                    worst = f64::NAN;
                }
            }
            Ok(SuiteResult {
                kind,
                samples,
                max_rel_error: worst,
                passed: worst < tolerance,
            })
        })
        .collect()
}
