//! Shared fixtures for the benchmarks.

use midline_core::encoder::{encode_image, EncoderConfig};
use midline_core::geometry::OrientedBox;
use midline_core::synth::{grid_scene, random_rectangle};
use midline_core::TargetMaps;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CLASSES: usize = 15;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rectangles(n: usize, seed: u64) -> Vec<OrientedBox> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| random_rectangle(&mut r, 1024.0, 1024.0, 8.0, 300.0, 0))
        .collect()
}

/// `n` disjoint objects and the image side length.
pub fn crowded_scene(n: usize, seed: u64) -> (Vec<OrientedBox>, u32) {
    grid_scene(&mut rng(seed), n, 40, (16.0, 26.0), CLASSES)
}

pub fn encoded_scene(n: usize, seed: u64) -> TargetMaps {
    let (objects, size) = crowded_scene(n, seed);
    encode_image(&objects, size, size, CLASSES, &EncoderConfig::default())
        .expect("synthetic scene encodes")
        .maps
}
