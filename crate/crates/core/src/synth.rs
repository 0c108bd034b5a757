//! Random synthetic annotations for self-tests and benchmarks.

use rand::Rng;

use crate::geometry::{OrientedBox, Point2};
use crate::ingest::AnnotatedImage;

/// Rotated rectangle fully inside `[0,w]×[0,h]`, sides drawn from
/// `[side_lo, side_hi)`, angle from `[0,180)`.
pub fn random_rectangle<R: Rng + ?Sized>(
    rng: &mut R,
    image_w: f64,
    image_h: f64,
    side_lo: f64,
    side_hi: f64,
    class_id: usize,
) -> OrientedBox {
    loop {
        let w = rng.random_range(side_lo..side_hi);
        let h = rng.random_range(side_lo..side_hi);
        let angle = rng.random_range(0.0..180.0);
        let (s, c) = f64::to_radians(angle).sin_cos();
        let ex = (w * c.abs() + h * s.abs()) / 2.0;
        let ey = (w * s.abs() + h * c.abs()) / 2.0;
        if 2.0 * ex >= image_w || 2.0 * ey >= image_h {
            continue;
        }
        let cx = rng.random_range(ex..image_w - ex);
        let cy = rng.random_range(ey..image_h - ey);
        if let Ok(b) = OrientedBox::rectangle(Point2::new(cx, cy), w, h, angle, class_id) {
            return b;
        }
    }
}

/// `n` images of one random object each.
pub fn single_object_images<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    image_size: u32,
    side_range: (f64, f64),
    class_names: &[String],
) -> Vec<AnnotatedImage> {
    let s = f64::from(image_size);
    (0..n)
        .map(|i| {
            let class = rng.random_range(0..class_names.len());
            AnnotatedImage {
                image_id: format!("synth_{i:05}"),
                width: image_size,
                height: image_size,
                objects: vec![random_rectangle(
                    rng,
                    s,
                    s,
                    side_range.0,
                    side_range.1,
                    class,
                )],
                class_names: class_names.to_vec(),
            }
        })
        .collect()
}

/// `n` objects on a square grid of `spacing`-pixel cells, one centered per
/// cell with a random size and angle. Returns the objects and the image
/// side length. With `spacing` a multiple of the stride and sides well below
/// it, no two drift regions touch.
pub fn grid_scene<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    spacing: u32,
    side_range: (f64, f64),
    num_classes: usize,
) -> (Vec<OrientedBox>, u32) {
    let per_row = (n as f64).sqrt().ceil().max(1.0) as u32;
    let size = per_row * spacing;
    let half = f64::from(spacing) / 2.0;
    let objects = (0..n as u32)
        .map(|k| {
            let center = Point2::new(
                f64::from(k % per_row * spacing) + half,
                f64::from(k / per_row * spacing) + half,
            );
            let w = rng.random_range(side_range.0..side_range.1);
            let h = rng.random_range(side_range.0..side_range.1);
            let angle = rng.random_range(0.0..180.0);
            let class = rng.random_range(0..num_classes);
            OrientedBox::rectangle(center, w, h, angle, class).expect("positive sides")
        })
        .collect();
    (objects, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rectangles_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let b = random_rectangle(&mut rng, 128.0, 96.0, 16.0, 80.0, 0);
            let (lo, hi) = b.bounds();
            assert!(lo.x >= 0.0 && lo.y >= 0.0 && hi.x <= 128.0 && hi.y <= 96.0);
            assert!(b.min_side() >= 16.0 - 1e-9);
        }
    }

    #[test]
    fn grid_scene_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (objs, size) = grid_scene(&mut rng, 2000, 40, (16.0, 26.0), 3);
        assert_eq!((objs.len(), size), (2000, 1800));
        assert_eq!(objs[45].centroid(), Point2::new(20.0, 60.0));
    }
}
