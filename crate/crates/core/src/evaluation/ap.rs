use super::matching::{ApMode, Outcome};

/// Interpolated average precision over `(score, outcome)` pairs. Neutral
/// detections are dropped. Returns `None` when there is no ground truth to
/// recall.
pub fn average_precision(
    detections: &[(f64, Outcome)],
    gt_count: usize,
    mode: ApMode,
) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut ranked: Vec<(f64, bool)> = detections
        .iter()
        .filter_map(|&(s, o)| match o {
            Outcome::TruePositive => Some((s, true)),
            Outcome::FalsePositive => Some((s, false)),
            Outcome::Neutral => None,
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, &(_, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Interpolated precision: best precision at this recall or beyond.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let points = mode.recall_points();
    let total: f64 = points
        .iter()
        .map(|&r| {
            // recall is nondecreasing along the ranking
            let first = recall.partition_point(|&x| x < r);
            precision.get(first).copied().unwrap_or(0.0)
        })
        .sum();
    Some(total / points.len() as f64)
}
