use crate::error::{Error, Result};
use crate::geometry::{signed_area, OrientedBox, Point2};

/// Intersection areas below this are treated as empty.
pub const MIN_INTERSECTION_AREA: f64 = 1e-9;

fn side(a: Point2, b: Point2, p: Point2) -> f64 {
    (b - a).cross(p - a)
}

fn edge_hit(a: Point2, b: Point2, p: Point2, q: Point2) -> Point2 {
    let (sp, sq) = (side(a, b, p), side(a, b, q));
    let t = sp / (sp - sq);
    p + (q - p) * t
}

/// Sutherland-Hodgman clipping of `subject` by the convex, positively
/// oriented polygon `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let (p_in, q_in) = (side(a, b, p) >= 0.0, side(a, b, q) >= 0.0);
            match (p_in, q_in) {
                (true, true) => out.push(q),
                (true, false) => out.push(edge_hit(a, b, p, q)),
                (false, true) => {
                    out.push(edge_hit(a, b, p, q));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
    }
    out
}

pub fn intersection_area(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    if !a.is_convex() || !b.is_convex() {
        return Err(Error::NonConvexInput);
    }
    let ((alo, ahi), (blo, bhi)) = (a.bounds(), b.bounds());
    if alo.x >= bhi.x || blo.x >= ahi.x || alo.y >= bhi.y || blo.y >= ahi.y {
        return Ok(0.0);
    }
    let poly = clip_convex(a.corners(), b.corners());
    if poly.len() < 3 {
        return Ok(0.0);
    }
    let area = signed_area(&poly).abs();
    Ok(if area < MIN_INTERSECTION_AREA {
        0.0
    } else {
        area
    })
}

/// Intersection over union of two convex quadrilaterals.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    let inter = intersection_area(a, b)?;
    if inter == 0.0 {
        return Ok(0.0);
    }
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn square(x0: f64, y0: f64, s: f64) -> OrientedBox {
        OrientedBox::new(
            [p(x0, y0), p(x0 + s, y0), p(x0 + s, y0 + s), p(x0, y0 + s)],
            0,
        )
        .unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = OrientedBox::rectangle(p(10., 10.), 8., 4., 33., 0).unwrap();
        assert!((rotated_iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = a.translated(p(50., 0.));
        assert_eq!(rotated_iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn offset_squares() {
        let iou = rotated_iou(&square(0., 0., 2.), &square(1., 0., 2.)).unwrap();
        assert!((iou - 2.0 / 6.0).abs() < 1e-15, "{iou}");
    }

    #[test]
    fn touching_edges_have_zero_iou() {
        assert_eq!(
            rotated_iou(&square(0., 0., 2.), &square(2., 0., 2.)).unwrap(),
            0.0
        );
    }

    #[test]
    fn contained_box() {
        let iou = rotated_iou(&square(0., 0., 4.), &square(1., 1., 2.)).unwrap();
        assert!((iou - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_in_square() {
        // diamond inscribed in a 2x2 square covers half of it
        let d = OrientedBox::new([p(1., 0.), p(2., 1.), p(1., 2.), p(0., 1.)], 0).unwrap();
        let iou = rotated_iou(&d, &square(0., 0., 2.)).unwrap();
        assert!((iou - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_convex_rejected() {
        let dart = OrientedBox::new([p(0., 0.), p(4., 0.), p(1., 1.), p(0., 4.)], 0).unwrap();
        assert!(matches!(
            rotated_iou(&dart, &square(0., 0., 1.)),
            Err(Error::NonConvexInput)
        ));
    }

    fn rect() -> impl Strategy<Value = OrientedBox> {
        (
            0.0..40.0f64,
            0.0..40.0f64,
            1.0..20.0f64,
            1.0..20.0f64,
            0.0..180.0f64,
        )
            .prop_map(|(x, y, w, h, a)| OrientedBox::rectangle(p(x, y), w, h, a, 0).unwrap())
    }

    fn rotate(b: &OrientedBox, deg: f64, shift: Point2) -> OrientedBox {
        let (s, c) = deg.to_radians().sin_cos();
        let r = |q: Point2| p(c * q.x - s * q.y, s * q.x + c * q.y) + shift;
        let k = b.corners();
        OrientedBox::new([r(k[0]), r(k[1]), r(k[2]), r(k[3])], 0).unwrap()
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in rect(), b in rect()) {
            let ab = rotated_iou(&a, &b).unwrap();
            let ba = rotated_iou(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn rigid_invariance(a in rect(), b in rect(), deg in 0.0..360.0f64,
                            dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
            let before = rotated_iou(&a, &b).unwrap();
            let shift = p(dx, dy);
            let after = rotated_iou(&rotate(&a, deg, shift), &rotate(&b, deg, shift)).unwrap();
            prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
        }
    }
}
