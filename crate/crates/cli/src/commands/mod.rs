mod decode;
mod encode;
mod eval;
mod gradcheck;
mod roundtrip;
mod tile;

use std::path::Path;

use midline_core::decoder::DecoderConfig;
use midline_core::encoder::EncoderConfig;
use midline_core::formats::{json_files, read_json, GtImage};
use midline_core::geometry::AngleRange;
use midline_core::ingest::{dota_vocabulary, text_vocabulary};
use midline_core::loss::LossWeights;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::{Command, DecodeArgs, EncodeArgs, VocabArgs, WeightArgs};

pub fn dispatch(command: Command, seed: u64) -> CliResult<()> {
    match command {
        Command::Tile {
            input,
            output,
            format,
            window,
            overlap,
            images,
            strict,
        } => tile::run(
            &input,
            &output,
            format,
            window,
            overlap,
            images.as_deref(),
            strict,
        ),
        Command::Encode {
            gt,
            output,
            vocab,
            encode,
        } => encode::run(&gt, &output, &vocab, &encode, seed),
        Command::Decode {
            maps,
            output,
            decode,
        } => decode::run(&maps, &output, &decode),
        Command::Roundtrip {
            gt,
            synthetic,
            image_size,
            side_min,
            side_max,
            min_fraction,
            vocab,
            encode,
            decode,
        } => roundtrip::run(roundtrip::Options {
            gt,
            synthetic,
            image_size,
            side_range: (side_min, side_max),
            min_fraction,
            vocab,
            encode,
            decode,
            seed,
        }),
        Command::Gradcheck {
            samples,
            step,
            tolerance,
            weights,
            perturb_gradient,
        } => gradcheck::run(samples, step, tolerance, &weights, perturb_gradient, seed),
        Command::Eval {
            gt,
            detections,
            mode,
            iou,
            ap_mode,
            output,
            vocab,
        } => eval::run(
            &gt,
            &detections,
            mode.into(),
            iou,
            ap_mode.into(),
            output.as_deref(),
            &vocab,
        ),
    }
}

pub fn vocabulary(args: &VocabArgs) -> CliResult<Vec<String>> {
    let names: Vec<String> = match args.classes.as_str() {
        "dota" => dota_vocabulary(),
        "text" => text_vocabulary(),
        list => list.split(',').map(|s| s.trim().to_string()).collect(),
    };
    if names.iter().any(String::is_empty) {
        return Err(CliError::validation(format!(
            "empty class name in --classes {:?}",
            args.classes
        )));
    }
    Ok(names)
}

pub fn encoder_config(args: &EncodeArgs) -> CliResult<EncoderConfig> {
    let cfg = EncoderConfig {
        stride: args.stride,
        drift_r: args.drift_r,
        branch_range: AngleRange::new(args.branch_low, args.branch_high)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn decoder_config(args: &DecodeArgs) -> CliResult<DecoderConfig> {
    let cfg = DecoderConfig {
        threshold: args.threshold,
        merge_iou: args.merge_iou,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn loss_weights(args: &WeightArgs) -> CliResult<LossWeights> {
    let w = LossWeights {
        alpha_focal: args.focal_alpha,
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        text_mode: args.text_mode,
    };
    w.validate()?;
    Ok(w)
}

/// Encoder settings recorded in container manifests.
pub fn encode_params(args: &EncodeArgs, seed: u64) -> serde_json::Value {
    json!({
        "stride": args.stride,
        "drift_r": args.drift_r,
        "branch_low": args.branch_low,
        "branch_high": args.branch_high,
        "seed": seed,
    })
}

/// Ground-truth images from one JSON file or every `.json` file in a
/// directory, in file-name order.
pub fn load_ground_truth(path: &Path) -> CliResult<Vec<GtImage>> {
    let mut out = Vec::new();
    for file in json_files(path)? {
        out.extend(read_json::<Vec<GtImage>>(&file)?);
    }
    Ok(out)
}
