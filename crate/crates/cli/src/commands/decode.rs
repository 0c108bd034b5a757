use std::path::Path;

use midline_core::decoder::decode;
use midline_core::formats::{
    container_dirs, detections_to_records, read_container, write_json, DetectionRecord,
};
use rayon::prelude::*;

use super::decoder_config;
use crate::error::CliResult;
use crate::{info, DecodeArgs};

pub fn run(maps: &Path, output: &Path, args: &DecodeArgs) -> CliResult<()> {
    let cfg = decoder_config(args)?;
    let dirs = container_dirs(maps)?;
    let results: Vec<CliResult<(Vec<DetectionRecord>, usize)>> = dirs
        .par_iter()
        .map(|dir| {
            let c = read_container(dir)?;
            let out = decode(&c.maps, &cfg)?;
            let records = detections_to_records(
                &out.detections,
                &c.manifest.class_names,
                c.manifest.image_id.as_deref(),
            )?;
            Ok((records, out.dropped))
        })
        .collect();
    let mut all = Vec::new();
    let mut dropped = 0;
    for r in results {
        let (records, d) = r?;
        all.extend(records);
        dropped += d;
    }
    write_json(output, &all)?;
    info!(
        "decode",
        containers = dirs.len(),
        detections = all.len(),
        dropped = dropped,
        threshold = cfg.threshold,
        merge_iou = cfg.merge_iou,
    );
    Ok(())
}
