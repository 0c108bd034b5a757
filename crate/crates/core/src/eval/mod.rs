//! Detection metrics: greedy matching, AP/mAP and micro precision/recall/F1.

mod iou;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;

pub use iou::{clip_convex, intersection_area, rotated_iou, MIN_INTERSECTION_AREA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    #[default]
    AllPoint,
    #[serde(rename = "11-point")]
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Map,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
    /// Matched a difficult ground truth; counts as neither.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(score, flag)` in descending score order.
    pub flags: Vec<(f64, MatchFlag)>,
    /// Non-difficult ground truths.
    pub n_gt: usize,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn count(&self, flag: MatchFlag) -> usize {
        self.flags.iter().filter(|(_, f)| *f == flag).count()
    }
}

/// Greedy matching of one class slice. Detections are visited by descending
/// score (stable for ties) and each takes the unmatched ground truth of
/// highest IoU.
pub fn match_detections(
    dets: &[OrientedBox],
    gts: &[OrientedBox],
    iou_threshold: f64,
) -> Result<MatchResult> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()));
    let mut taken = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(dets.len());
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = rotated_iou(d, gt)?;
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let flag = match best {
            Some((g, iou)) if iou >= iou_threshold => {
                if gts[g].difficult {
                    MatchFlag::Ignored
                } else {
                    taken[g] = true;
                    MatchFlag::TruePositive
                }
            }
            _ => MatchFlag::FalsePositive,
        };
        flags.push((d.score(), flag));
    }
    let n_gt = gts.iter().filter(|g| !g.difficult).count();
    let matched = taken.iter().filter(|&&t| t).count();
    Ok(MatchResult {
        flags,
        n_gt,
        false_negatives: n_gt - matched,
    })
}

/// Area under the interpolated precision-recall curve. `flags` must already
/// be in descending score order; ignored entries are skipped. `None` when the
/// class has neither ground truth nor counted detections.
pub fn average_precision(flags: &[MatchFlag], n_gt: usize, mode: ApMode) -> Option<f64> {
    let counted: Vec<bool> = flags
        .iter()
        .filter_map(|f| match f {
            MatchFlag::TruePositive => Some(true),
            MatchFlag::FalsePositive => Some(false),
            MatchFlag::Ignored => None,
        })
        .collect();
    if n_gt == 0 {
        return if counted.is_empty() { None } else { Some(0.0) };
    }
    let mut recall = Vec::with_capacity(counted.len());
    let mut precision = Vec::with_capacity(counted.len());
    let mut tp = 0usize;
    for (k, &is_tp) in counted.iter().enumerate() {
        tp += usize::from(is_tp);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // precision envelope, non-increasing in recall
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let ap = match mode {
        ApMode::AllPoint => {
            let mut prev_r = 0.0;
            let mut area = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                area += (r - prev_r) * p;
                prev_r = *r;
            }
            area
        }
        ApMode::ElevenPoint => {
            let sum: f64 = (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    recall
                        .iter()
                        .position(|&r| r >= t - 1e-12)
                        .map_or(0.0, |k| precision[k])
                })
                .sum();
            sum / 11.0
        }
    };
    Some(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub iou_threshold: f64,
    pub ap_mode: ApMode,
    /// Classes with ground truth or detections, in vocabulary order.
    pub per_class_ap: IndexMap<String, f64>,
    pub map_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    pub counts: IndexMap<String, ClassCounts>,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let width = self
            .counts
            .keys()
            .map(|k| k.len())
            .chain(["class".len(), "mAP".len()])
            .max()
            .unwrap_or(5);
        let mut s = format!(
            "{:<width$}  {:>8}  {:>6}  {:>6}  {:>6}  {:>6}\n",
            "class", "AP", "TP", "FP", "FN", "GT"
        );
        for (name, c) in &self.counts {
            let ap = self
                .per_class_ap
                .get(name)
                .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            s += &format!(
                "{name:<width$}  {ap:>8}  {:>6}  {:>6}  {:>6}  {:>6}\n",
                c.tp, c.fp, c.fn_, c.n_gt
            );
        }
        s += &format!("{:<width$}  {:>8.4}\n", "mAP", self.map_score);
        if let (Some(p), Some(r), Some(f)) = (self.precision, self.recall, self.f1) {
            s += &format!("precision={p:.4} recall={r:.4} f1={f:.4}\n");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub iou_threshold: f64,
    pub ap_mode: ApMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Map,
            iou_threshold: 0.5,
            ap_mode: ApMode::AllPoint,
        }
    }
}

/// Ground truth and detections of one image. Detection scores live on the
/// boxes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalImage {
    pub ground_truth: Vec<OrientedBox>,
    pub detections: Vec<OrientedBox>,
}

pub fn evaluate(
    images: &[EvalImage],
    class_names: &[String],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if !(config.iou_threshold > 0.0 && config.iou_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "IoU threshold must lie in (0, 1], got {}",
            config.iou_threshold
        )));
    }
    let nc = class_names.len();
    for img in images {
        for b in img.ground_truth.iter().chain(&img.detections) {
            if b.class_id >= nc {
                return Err(Error::UnknownClass(b.class_id));
            }
        }
    }
    let mut per_class_ap = IndexMap::new();
    let mut counts = IndexMap::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (class_id, name) in class_names.iter().enumerate() {
        let mut flags: Vec<(f64, MatchFlag)> = Vec::new();
        let mut c = ClassCounts::default();
        for img in images {
            let slice = |v: &[OrientedBox]| -> Vec<OrientedBox> {
                v.iter()
                    .filter(|b| b.class_id == class_id)
                    .cloned()
                    .collect()
            };
            let m = match_detections(
                &slice(&img.detections),
                &slice(&img.ground_truth),
                config.iou_threshold,
            )?;
            c.tp += m.count(MatchFlag::TruePositive);
            c.fp += m.count(MatchFlag::FalsePositive);
            c.fn_ += m.false_negatives;
            c.n_gt += m.n_gt;
            flags.extend(m.flags);
        }
        // stable: equal scores keep image order
        flags.sort_by(|a, b| b.0.total_cmp(&a.0));
        let only: Vec<MatchFlag> = flags.into_iter().map(|(_, f)| f).collect();
        if let Some(ap) = average_precision(&only, c.n_gt, config.ap_mode) {
            per_class_ap.insert(name.clone(), ap);
        }
        if c.n_gt > 0 || c.tp + c.fp > 0 {
            counts.insert(name.clone(), c);
        }
        tp += c.tp;
        fp += c.fp;
        fn_ += c.fn_;
    }
    let map_score = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };
    let (precision, recall, f1) = match config.mode {
        EvalMode::Map => (None, None, None),
        EvalMode::Text => {
            let p = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let r = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            (Some(p), Some(r), Some(f1_score(p, r)))
        }
    };
    Ok(EvalReport {
        mode: config.mode,
        iou_threshold: config.iou_threshold,
        ap_mode: config.ap_mode,
        per_class_ap,
        map_score,
        precision,
        recall,
        f1,
        counts,
    })
}
