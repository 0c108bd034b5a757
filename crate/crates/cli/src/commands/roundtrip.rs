use std::path::PathBuf;

use midline_core::decoder::decode;
use midline_core::encoder::encode_image;
use midline_core::eval::rotated_iou;
use midline_core::geometry::OrientedBox;
use midline_core::synth::single_object_images;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{decoder_config, encoder_config, load_ground_truth, vocabulary};
use crate::error::{CliError, CliResult};
use crate::{info, DecodeArgs, EncodeArgs, VocabArgs};

/// IoU at or above which an object counts as recovered.
const RECOVERED_IOU: f64 = 0.99;
/// Objects with a side shorter than this many strides are sub-resolution.
const RESOLVED_STRIDES: f64 = 4.0;

pub struct Options {
    pub gt: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub image_size: u32,
    pub side_range: (f64, f64),
    pub min_fraction: f64,
    pub vocab: VocabArgs,
    pub encode: EncodeArgs,
    pub decode: DecodeArgs,
    pub seed: u64,
}

struct Image {
    id: String,
    width: u32,
    height: u32,
    objects: Vec<OrientedBox>,
}

#[derive(Default)]
struct Stats {
    ious: Vec<f64>,
}

impl Stats {
    fn report(&self, group: &str) {
        let n = self.ious.len();
        if n == 0 {
            println!("group={group} objects=0");
            return;
        }
        let min = self.ious.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = self.ious.iter().sum::<f64>() / n as f64;
        println!(
            "group={group} objects={n} min_iou={min:.6} mean_iou={mean:.6} fraction_recovered={:.6}",
            self.fraction()
        );
    }

    fn fraction(&self) -> f64 {
        let ok = self.ious.iter().filter(|&&v| v >= RECOVERED_IOU).count();
        ok as f64 / self.ious.len().max(1) as f64
    }
}

pub fn run(opts: Options) -> CliResult<()> {
    let enc_cfg = encoder_config(&opts.encode)?;
    let dec_cfg = decoder_config(&opts.decode)?;
    let class_names = vocabulary(&opts.vocab)?;
    if !(0.0..=1.0).contains(&opts.min_fraction) {
        return Err(CliError::validation("--min-fraction must lie in [0, 1]"));
    }
    let images: Vec<Image> = match (&opts.gt, opts.synthetic) {
        (_, Some(n)) => {
            let (lo, hi) = opts.side_range;
            if !(lo > 0.0 && lo < hi && hi < f64::from(opts.image_size)) {
                return Err(CliError::validation(format!(
                    "synthetic sides need 0 < side-min < side-max < image-size, got {lo}, {hi}, {}",
                    opts.image_size
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            single_object_images(&mut rng, n, opts.image_size, opts.side_range, &class_names)
                .into_iter()
                .map(|a| Image {
                    id: a.image_id,
                    width: a.width,
                    height: a.height,
                    objects: a.objects,
                })
                .collect()
        }
        (Some(path), None) => load_ground_truth(path)?
            .iter()
            .map(|g| {
                Ok(Image {
                    id: g.image_id.clone(),
                    width: g.width,
                    height: g.height,
                    objects: g.to_boxes(&class_names)?,
                })
            })
            .collect::<CliResult<_>>()?,
        (None, None) => {
            return Err(CliError::validation(
                "either --gt or --synthetic is required",
            ))
        }
    };
    let min_side = RESOLVED_STRIDES * f64::from(enc_cfg.stride);
    let per_image: Vec<CliResult<Vec<(bool, f64)>>> = images
        .par_iter()
        .map(|img| {
            let enc = encode_image(
                &img.objects,
                img.width,
                img.height,
                class_names.len(),
                &enc_cfg,
            )
            .map_err(|e| CliError::validation(format!("{}: {e}", img.id)))?;
            let dets = decode(&enc.maps, &dec_cfg)?.detections;
            Ok(img
                .objects
                .iter()
                .map(|b| {
                    let best = dets
                        .iter()
                        .filter(|d| d.class_id() == b.class_id)
                        .filter_map(|d| rotated_iou(&d.bbox, b).ok())
                        .fold(0.0, f64::max);
                    (b.min_side() >= min_side, best)
                })
                .collect())
        })
        .collect();
    let (mut resolved, mut sub) = (Stats::default(), Stats::default());
    for r in per_image {
        for (is_resolved, iou) in r? {
            if is_resolved {
                resolved.ious.push(iou);
            } else {
                sub.ious.push(iou);
            }
        }
    }
    resolved.report("resolved");
    sub.report("sub_resolution");
    if resolved.ious.is_empty() {
        info!("roundtrip", images = images.len(), result = "vacuous_pass");
        return Ok(());
    }
    let frac = resolved.fraction();
    info!(
        "roundtrip",
        images = images.len(),
        resolved = resolved.ious.len(),
        sub_resolution = sub.ious.len(),
        fraction_recovered = frac,
        required = opts.min_fraction,
    );
    if frac < opts.min_fraction {
        return Err(CliError::validation(format!(
            "only {frac:.4} of resolved objects recovered with IoU >= {RECOVERED_IOU}, need {}",
            opts.min_fraction
        )));
    }
    Ok(())
}
