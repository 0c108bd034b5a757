//! Box ⇄ middle-line conversion.
//!
//! Coordinates are image pixels with `y` growing downward. A box's two middle
//! lines join the midpoints of opposite edges. Candidate A joins the midpoints
//! of edges `p0p1` and `p2p3`, candidate B those of `p1p2` and `p3p0`.
//!
//! Endpoint order: endpoint 1 of `L1` is the right one (larger `x`), endpoint 1
//! of `L2` is the top one (smaller `y`).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2-D cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn midpoint(self, other: Self) -> Self {
        Self::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl Add for Point2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Which output head an object belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BranchId {
    /// Branch 1: objects whose more-vertical middle line is (nearly) at 90°.
    Horizontal,
    /// Branch 2: every other orientation.
    Oriented,
}

impl BranchId {
    pub const ALL: [BranchId; 2] = [BranchId::Horizontal, BranchId::Oriented];

    /// Zero-based index into per-branch storage.
    pub fn index(self) -> usize {
        match self {
            BranchId::Horizontal => 0,
            BranchId::Oriented => 1,
        }
    }

    /// One-based branch number as used in file formats.
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(BranchId::Horizontal),
            2 => Some(BranchId::Oriented),
            _ => None,
        }
    }
}

/// Open angle interval (degrees) that routes an object to [`BranchId::Horizontal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub low_deg: f64,
    pub high_deg: f64,
}

impl Default for AngleRange {
    fn default() -> Self {
        Self {
            low_deg: 88.0,
            high_deg: 92.0,
        }
    }
}

impl AngleRange {
    pub fn new(low_deg: f64, high_deg: f64) -> Result<Self> {
        if !(low_deg.is_finite() && high_deg.is_finite()) || low_deg >= high_deg {
            return Err(Error::invalid(format!(
                "branch angle range ({low_deg}, {high_deg}) must satisfy low < high"
            )));
        }
        Ok(Self { low_deg, high_deg })
    }

    pub fn contains(&self, theta_deg: f64) -> bool {
        theta_deg > self.low_deg && theta_deg < self.high_deg
    }
}

/// Angle of the segment `a → b` against +x, folded into `[0°, 180°)`.
pub fn line_angle_deg(a: Point2, b: Point2) -> f64 {
    let d = b - a;
    let theta = d.y.atan2(d.x).to_degrees().rem_euclid(180.0);
    if theta >= 180.0 {
        0.0
    } else {
        theta
    }
}

/// Shoelace area; positive for the winding [`OrientedBox`] normalizes to.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * acc
}

/// True when every turn has the same orientation (collinear turns allowed).
pub fn is_convex(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0_f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let turn = (b - a).cross(c - b);
        if turn != 0.0 {
            if sign != 0.0 && turn.signum() != sign {
                return false;
            }
            sign = turn.signum();
        }
    }
    sign != 0.0
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including touching and collinear overlap.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// A quadrilateral annotation or detection.
///
/// Corners are finite, form a simple polygon of positive area, and are stored
/// with positive [`signed_area`]. Reversing the winding keeps `p0` in place.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    corners: [Point2; 4],
    pub class_id: usize,
    score: f64,
    pub difficult: bool,
}

impl OrientedBox {
    pub fn new(corners: [Point2; 4], class_id: usize) -> Result<Self> {
        if corners.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidBox("non-finite corner".into()));
        }
        let [p0, p1, p2, p3] = corners;
        if segments_intersect(p0, p1, p2, p3) || segments_intersect(p1, p2, p3, p0) {
            return Err(Error::InvalidBox("self-intersecting quadrilateral".into()));
        }
        let area = signed_area(&corners);
        if area == 0.0 {
            return Err(Error::InvalidBox("zero area".into()));
        }
        let corners = if area < 0.0 {
            [p0, p3, p2, p1]
        } else {
            corners
        };
        Ok(Self {
            corners,
            class_id,
            score: 1.0,
            difficult: false,
        })
    }

    /// Builds from `[x0, y0, …, x3, y3]`.
    pub fn from_flat(coords: [f64; 8], class_id: usize) -> Result<Self> {
        let c = coords;
        Self::new(
            [
                Point2::new(c[0], c[1]),
                Point2::new(c[2], c[3]),
                Point2::new(c[4], c[5]),
                Point2::new(c[6], c[7]),
            ],
            class_id,
        )
    }

    /// Rectangle of size `width × height` centered at `center`, rotated by
    /// `angle_deg` (the direction of the `width` side against +x).
    pub fn rectangle(
        center: Point2,
        width: f64,
        height: f64,
        angle_deg: f64,
        class_id: usize,
    ) -> Result<Self> {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let u = Point2::new(c, s) * (0.5 * width);
        let v = Point2::new(-s, c) * (0.5 * height);
        Self::new(
            [
                center - u - v,
                center + u - v,
                center + u + v,
                center - u + v,
            ],
            class_id,
        )
    }

    pub fn corners(&self) -> &[Point2; 4] {
        &self.corners
    }

    pub fn to_flat(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, p) in self.corners.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score.clamp(0.0, 1.0);
        self
    }

    pub fn with_class(mut self, class_id: usize) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn with_difficult(mut self, difficult: bool) -> Self {
        self.difficult = difficult;
        self
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners)
    }

    /// Mean of the four corners.
    pub fn centroid(&self) -> Point2 {
        let s = self
            .corners
            .iter()
            .fold(Point2::default(), |acc, &p| acc + p);
        s * 0.25
    }

    pub fn min_side(&self) -> f64 {
        (0..4)
            .map(|i| self.corners[i].distance(self.corners[(i + 1) % 4]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_convex(&self) -> bool {
        is_convex(&self.corners)
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.corners {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Same box moved by `offset`.
    pub fn translated(&self, offset: Point2) -> Self {
        let mut out = self.clone();
        for p in &mut out.corners {
            *p = *p + offset;
        }
        out
    }

    /// The two middle-line candidates `(A, B)`.
    pub fn midline_candidates(&self) -> ((Point2, Point2), (Point2, Point2)) {
        let [p0, p1, p2, p3] = self.corners;
        (
            (p0.midpoint(p1), p2.midpoint(p3)),
            (p1.midpoint(p2), p3.midpoint(p0)),
        )
    }
}

/// A middle line with ordered endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub ep1: Point2,
    pub ep2: Point2,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.ep1.distance(self.ep2)
    }
}

/// Two ordered middle lines of one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidlinePair {
    pub l1: Segment,
    pub l2: Segment,
    pub branch: BranchId,
}

fn order_l1(a: Point2, b: Point2) -> Segment {
    let a_first = a.x > b.x || (a.x == b.x && a.y <= b.y);
    if a_first {
        Segment { ep1: a, ep2: b }
    } else {
        Segment { ep1: b, ep2: a }
    }
}

fn order_l2(a: Point2, b: Point2) -> Segment {
    let a_first = a.y < b.y || (a.y == b.y && a.x >= b.x);
    if a_first {
        Segment { ep1: a, ep2: b }
    } else {
        Segment { ep1: b, ep2: a }
    }
}

impl MidlinePair {
    /// Orders raw endpoints into a pair (right-first for `L1`, top-first for `L2`).
    ///
    /// Which line is `L1` is taken as given; predicted endpoints need not
    /// satisfy the branch's length or orientation rule.
    pub fn from_endpoints(
        l1: (Point2, Point2),
        l2: (Point2, Point2),
        branch: BranchId,
    ) -> Result<Self> {
        for p in [l1.0, l1.1, l2.0, l2.1] {
            if !p.is_finite() {
                return Err(Error::InvalidBox("non-finite middle-line endpoint".into()));
            }
        }
        let pair = Self {
            l1: order_l1(l1.0, l1.1),
            l2: order_l2(l2.0, l2.1),
            branch,
        };
        if pair.l1.length() == 0.0 || pair.l2.length() == 0.0 {
            return Err(Error::DegenerateBox("zero-length middle line"));
        }
        Ok(pair)
    }

    /// Endpoints in regression-channel order: `L1.ep1, L1.ep2, L2.ep1, L2.ep2`.
    pub fn endpoints(&self) -> [Point2; 4] {
        [self.l1.ep1, self.l1.ep2, self.l2.ep1, self.l2.ep2]
    }

    pub fn intersection(&self) -> Point2 {
        intersection_point(self)
    }
}

/// The more-vertical candidate, then the other one. Ties keep candidate A first.
fn split_by_verticality(
    a: (Point2, Point2),
    b: (Point2, Point2),
) -> Result<((Point2, Point2), (Point2, Point2))> {
    let la = a.0.distance(a.1);
    let lb = b.0.distance(b.1);
    if la == 0.0 || lb == 0.0 {
        return Err(Error::DegenerateBox("zero-length middle line"));
    }
    let va = (a.1.y - a.0.y).abs() / la;
    let vb = (b.1.y - b.0.y).abs() / lb;
    Ok(if vb > va { (b, a) } else { (a, b) })
}

pub fn classify_branch(b: &OrientedBox, range: AngleRange) -> Result<BranchId> {
    let (cand_a, cand_b) = b.midline_candidates();
    let (vertical, _) = split_by_verticality(cand_a, cand_b)?;
    let theta = line_angle_deg(vertical.0, vertical.1);
    Ok(if range.contains(theta) {
        BranchId::Horizontal
    } else {
        BranchId::Oriented
    })
}

pub fn box_to_midlines(b: &OrientedBox, range: AngleRange) -> Result<MidlinePair> {
    let (cand_a, cand_b) = b.midline_candidates();
    let (vertical, horizontal) = split_by_verticality(cand_a, cand_b)?;
    let theta = line_angle_deg(vertical.0, vertical.1);
    if range.contains(theta) {
        MidlinePair::from_endpoints(horizontal, vertical, BranchId::Horizontal)
    } else {
        let la = cand_a.0.distance(cand_a.1);
        let lb = cand_b.0.distance(cand_b.1);
        let (long, short) = if lb > la {
            (cand_b, cand_a)
        } else {
            (cand_a, cand_b)
        };
        MidlinePair::from_endpoints(long, short, BranchId::Oriented)
    }
}

/// Mean of the four endpoints.
pub fn intersection_point(pair: &MidlinePair) -> Point2 {
    let s = pair.l1.ep1 + pair.l1.ep2 + pair.l2.ep1 + pair.l2.ep2;
    s * 0.25
}

/// Parallelogram spanned by the two half-lines, centered at the endpoint mean.
///
/// The returned box carries class 0 and score 1.
pub fn midlines_to_box(pair: &MidlinePair) -> Result<OrientedBox> {
    let c = intersection_point(pair);
    let u = (pair.l1.ep1 - pair.l1.ep2) * 0.5;
    let v = (pair.l2.ep1 - pair.l2.ep2) * 0.5;
    if u.norm() == 0.0 || v.norm() == 0.0 {
        return Err(Error::DegenerateBox("zero-length middle line"));
    }
    OrientedBox::new([c + u + v, c + u - v, c - u - v, c - u + v], 0)
        .map_err(|_| Error::DegenerateBox("parallel middle lines"))
}
