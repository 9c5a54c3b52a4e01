//! KITTI-style evaluation: rotated-box IoU, greedy matching, interpolated
//! AP per difficulty regime, and centroid error against distance.

mod ap;
mod iou;
mod matching;
mod mce;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

pub use ap::average_precision;
pub use iou::{bev_intersection_area, clip_convex, iou_3d, iou_bev};
pub use matching::{
    filter_by_difficulty, match_and_score, ApMode, Difficulty, DifficultyRegime, EvalConfig,
    FrameMatch, Metric, Outcome, DONT_CARE_COVERAGE,
};
pub use mce::{mce_curve, MceBin, MceCurve, DEFAULT_BIN_WIDTH, DEFAULT_MAX_DISTANCE};

use crate::kitti_io::{DetectionRecord, FrameId, GroundTruthObject, ObjectClass};

/// Ground-truth frames with their detections; frames missing from
/// `dets` count as frames without detections.
pub fn evaluate(
    gts: &BTreeMap<FrameId, Vec<GroundTruthObject>>,
    dets: &BTreeMap<FrameId, Vec<DetectionRecord>>,
    cfg: &EvalConfig,
    regime: &DifficultyRegime,
) -> Option<f64> {
    let frames: Vec<FrameMatch> = gts
        .par_iter()
        .map(|(id, g)| {
            let d = dets.get(id).map(Vec::as_slice).unwrap_or(&[]);
            match_and_score(d, g, cfg, regime)
        })
        .collect();
    let gt_count = frames.iter().map(|f| f.gt_count).sum();
    let all: Vec<(f64, Outcome)> = frames.into_iter().flat_map(|f| f.detections).collect();
    average_precision(&all, gt_count, cfg.ap_mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub class: ObjectClass,
    pub regime: Difficulty,
    pub metric: Metric,
    pub iou_threshold: f64,
    pub ap: Option<f64>,
}

pub fn report_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("class,regime,metric,iou_threshold,ap\n");
    for r in rows {
        let ap = r.ap.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.class, r.regime, r.metric, r.iou_threshold, ap
        );
    }
    out
}

pub fn report_table(rows: &[EvalRow]) -> String {
    let mut out = format!(
        "{:<12} {:<9} {:<6} {:>5} {:>9}\n",
        "class", "regime", "metric", "iou", "AP"
    );
    for r in rows {
        let ap =
            r.ap.map(|v| format!("{:.4}", v))
                .unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            out,
            "{:<12} {:<9} {:<6} {:>5.2} {:>9}",
            r.class.as_str(),
            r.regime.to_string(),
            r.metric.to_string(),
            r.iou_threshold,
            ap
        );
    }
    out
}
