use std::collections::HashMap;
use std::path::Path;

use midline_core::eval::{evaluate, ApMode, EvalConfig, EvalImage, EvalMode};
use midline_core::formats::{json_files, read_json, records_to_boxes, write_json, DetectionRecord};
use midline_core::Error;

use super::{load_ground_truth, vocabulary};
use crate::error::{CliError, CliResult};
use crate::{info, warn, VocabArgs};

fn load_detections(path: &Path) -> CliResult<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for file in json_files(path)? {
        out.extend(read_json::<Vec<DetectionRecord>>(&file)?);
    }
    Ok(out)
}

pub fn run(
    gt: &Path,
    detections: &Path,
    mode: EvalMode,
    iou: f64,
    ap_mode: ApMode,
    output: Option<&Path>,
    vocab: &VocabArgs,
) -> CliResult<()> {
    let class_names = vocabulary(vocab)?;
    let gt_images = load_ground_truth(gt)?;
    let records = load_detections(detections)?;

    let mut unknown: Vec<String> = Vec::new();
    let names = gt_images
        .iter()
        .flat_map(|g| g.objects.iter().map(|o| &o.class))
        .chain(records.iter().map(|r| &r.class));
    for name in names {
        if !class_names.contains(name) && !unknown.contains(name) {
            unknown.push(name.clone());
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownClassNames(unknown).into());
    }

    let mut images: Vec<EvalImage> = Vec::with_capacity(gt_images.len());
    let mut index: HashMap<String, usize> = HashMap::new();
    for g in &gt_images {
        if index.insert(g.image_id.clone(), images.len()).is_some() {
            return Err(CliError::validation(format!(
                "duplicate image_id {:?} in ground truth",
                g.image_id
            )));
        }
        images.push(EvalImage {
            ground_truth: g.to_boxes(&class_names)?,
            detections: Vec::new(),
        });
    }
    let mut unmatched = 0;
    for r in &records {
        let slot = match &r.image_id {
            Some(id) => match index.get(id) {
                Some(&i) => i,
                None => {
                    unmatched += 1;
                    index.insert(id.clone(), images.len());
                    images.push(EvalImage::default());
                    images.len() - 1
                }
            },
            None if gt_images.len() == 1 => 0,
            None => {
                return Err(CliError::validation(
                    "detections without image_id need exactly one ground-truth image",
                ))
            }
        };
        let b = records_to_boxes(std::slice::from_ref(r), &class_names)?;
        images[slot].detections.extend(b);
    }
    if unmatched > 0 {
        warn!("unknown_image_ids", images = unmatched);
    }

    let cfg = EvalConfig {
        mode,
        iou_threshold: iou,
        ap_mode,
    };
    let report = evaluate(&images, &class_names, &cfg)?;
    print!("{}", report.to_table());
    if let Some(path) = output {
        write_json(path, &report)?;
    }
    info!(
        "eval",
        images = images.len(),
        detections = records.len(),
        map = report.map_score,
        iou = iou,
    );
    Ok(())
}
