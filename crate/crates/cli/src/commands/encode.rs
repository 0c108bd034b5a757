use std::path::Path;

use midline_core::encoder::encode_image;
use midline_core::formats::write_container;
use rayon::prelude::*;

use super::{encode_params, encoder_config, load_ground_truth, vocabulary};
use crate::error::{CliError, CliResult};
use crate::{info, warn, EncodeArgs, VocabArgs};

/// Container directory names must stay inside the output directory.
fn safe_name(id: &str) -> CliResult<&str> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(CliError::validation(format!(
            "image_id {id:?} is not usable as a directory name"
        )));
    }
    Ok(id)
}

pub fn run(
    gt: &Path,
    output: &Path,
    vocab: &VocabArgs,
    args: &EncodeArgs,
    seed: u64,
) -> CliResult<()> {
    let cfg = encoder_config(args)?;
    let class_names = vocabulary(vocab)?;
    let images = load_ground_truth(gt)?;
    let params = encode_params(args, seed);
    let results: Vec<CliResult<(usize, usize)>> = images
        .par_iter()
        .map(|img| {
            let boxes = img.to_boxes(&class_names)?;
            let enc = encode_image(&boxes, img.width, img.height, class_names.len(), &cfg)
                .map_err(|e| CliError::validation(format!("{}: {e}", img.image_id)))?;
            for (i, reason) in &enc.skipped {
                warn!("skipped", image = img.image_id, object = i, reason = reason);
            }
            let dir = output.join(safe_name(&img.image_id)?);
            write_container(
                &dir,
                &enc.maps,
                &class_names,
                Some(&img.image_id),
                Some(params.clone()),
            )?;
            Ok((enc.maps.n_objects, enc.skipped.len()))
        })
        .collect();
    let (mut objects, mut skipped) = (0, 0);
    for r in results {
        let (o, s) = r?;
        objects += o;
        skipped += s;
    }
    info!(
        "encode",
        images = images.len(),
        objects = objects,
        skipped = skipped,
        stride = cfg.stride,
        drift_r = cfg.drift_r,
    );
    Ok(())
}
