use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::kitti_io::{DetectionRecord, GroundTruthObject, ObjectClass};

use super::iou::{iou_3d, iou_bev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

/// KITTI ground-truth filter for one difficulty level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyRegime {
    pub name: Difficulty,
    pub min_box_height_px: f64,
    pub max_occlusion: i32,
    pub max_truncation: f64,
}

impl DifficultyRegime {
    pub const EASY: DifficultyRegime = DifficultyRegime {
        name: Difficulty::Easy,
        min_box_height_px: 40.0,
        max_occlusion: 0,
        max_truncation: 0.15,
    };
    pub const MODERATE: DifficultyRegime = DifficultyRegime {
        name: Difficulty::Moderate,
        min_box_height_px: 25.0,
        max_occlusion: 1,
        max_truncation: 0.30,
    };
    pub const HARD: DifficultyRegime = DifficultyRegime {
        name: Difficulty::Hard,
        min_box_height_px: 25.0,
        max_occlusion: 2,
        max_truncation: 0.50,
    };

    pub fn all() -> [DifficultyRegime; 3] {
        [Self::EASY, Self::MODERATE, Self::HARD]
    }

    pub fn admits(&self, gt: &GroundTruthObject) -> bool {
        gt.box2d.height() >= self.min_box_height_px
            && gt.occlusion <= self.max_occlusion
            && gt.truncation <= self.max_truncation
    }
}

impl From<Difficulty> for DifficultyRegime {
    fn from(d: Difficulty) -> Self {
        match d {
            Difficulty::Easy => DifficultyRegime::EASY,
            Difficulty::Moderate => DifficultyRegime::MODERATE,
            Difficulty::Hard => DifficultyRegime::HARD,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "moderate" => Ok(Difficulty::Moderate),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Validation(format!("unknown difficulty {other:?}"))),
        }
    }
}

/// Ground truths admitted by `regime` (DontCare rows never are).
pub fn filter_by_difficulty<'a>(
    gts: &'a [GroundTruthObject],
    regime: &DifficultyRegime,
) -> Vec<&'a GroundTruthObject> {
    gts.iter()
        .filter(|g| !g.is_dont_care() && regime.admits(g))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Bev,
    ThreeD,
}

impl Metric {
    pub fn iou(&self, a: &crate::geometry::Box3D, b: &crate::geometry::Box3D) -> f64 {
        match self {
            Metric::Bev => iou_bev(a, b),
            Metric::ThreeD => iou_3d(a, b),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Bev => "bev",
            Metric::ThreeD => "3d",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(Metric::Bev),
            "3d" => Ok(Metric::ThreeD),
            other => Err(Error::Validation(format!("unknown metric {other:?}"))),
        }
    }
}

/// Recall sampling used for interpolated AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ApMode {
    /// Recall 0, 0.1, ..., 1.
    #[default]
    Eleven,
    /// Recall 1/40, 2/40, ..., 1.
    Forty,
}

impl ApMode {
    pub fn recall_points(&self) -> Vec<f64> {
        match self {
            ApMode::Eleven => (0..=10).map(|i| i as f64 / 10.0).collect(),
            ApMode::Forty => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

impl fmt::Display for ApMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApMode::Eleven => "11",
            ApMode::Forty => "40",
        })
    }
}

impl FromStr for ApMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "11" => Ok(ApMode::Eleven),
            "40" => Ok(ApMode::Forty),
            other => Err(Error::Validation(format!(
                "AP mode must be 11 or 40, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub metric: Metric,
    pub ap_mode: ApMode,
    pub class: ObjectClass,
}

impl EvalConfig {
    pub fn new(
        class: ObjectClass,
        metric: Metric,
        iou_threshold: f64,
        ap_mode: ApMode,
    ) -> crate::Result<Self> {
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "IoU threshold must lie in (0, 1], got {iou_threshold}"
            )));
        }
        if class.is_other() || class == ObjectClass::DontCare {
            return Err(Error::Validation(format!("cannot evaluate class {class}")));
        }
        Ok(EvalConfig {
            iou_threshold,
            metric,
            ap_mode,
            class,
        })
    }
}

/// Outcome of one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    /// Matched something that neither rewards nor penalizes.
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// `(score, outcome)` for each detection of the evaluated class.
    pub detections: Vec<(f64, Outcome)>,
    /// Ground truths that count toward recall.
    pub gt_count: usize,
    /// Of those, how many were matched.
    pub gt_matched: usize,
}

/// Classes whose ground truths are neutral for the evaluated class.
fn is_neighbor(eval: &ObjectClass, other: &ObjectClass) -> bool {
    matches!(
        (eval, other),
        (ObjectClass::Car, ObjectClass::Van)
            | (ObjectClass::Pedestrian, ObjectClass::PersonSitting)
    )
}

/// Minimum fraction of a detection's 2D area covered by a DontCare region
/// for the detection to be absorbed by it.
pub const DONT_CARE_COVERAGE: f64 = 0.5;

/// Greedy one-to-one matching for one frame: detections in descending
/// score order each take the unmatched ground truth of highest IoU at or
/// above the threshold. Ground truths of the class that fall outside the
/// regime, and neighbor-class ground truths, are neutral; an unmatched
/// detection mostly covered by a DontCare region is neutral too.
pub fn match_and_score(
    dets: &[DetectionRecord],
    gts: &[GroundTruthObject],
    cfg: &EvalConfig,
    regime: &DifficultyRegime,
) -> FrameMatch {
    #[derive(Clone, Copy, PartialEq)]
    enum Role {
        Care,
        Neutral,
    }
    let candidates: Vec<(&GroundTruthObject, Role)> = gts
        .iter()
        .filter(|g| !g.is_dont_care())
        .filter_map(|g| {
            if g.class == cfg.class {
                Some((
                    g,
                    if regime.admits(g) {
                        Role::Care
                    } else {
                        Role::Neutral
                    },
                ))
            } else if is_neighbor(&cfg.class, &g.class) {
                Some((g, Role::Neutral))
            } else {
                None
            }
        })
        .collect();
    let dont_care: Vec<&GroundTruthObject> = gts.iter().filter(|g| g.is_dont_care()).collect();

    let mut order: Vec<&DetectionRecord> = dets.iter().filter(|d| d.class == cfg.class).collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut taken = vec![false; candidates.len()];
    let mut out = FrameMatch {
        detections: Vec::with_capacity(order.len()),
        gt_count: candidates.iter().filter(|(_, r)| *r == Role::Care).count(),
        gt_matched: 0,
    };
    for det in order {
        let mut best: Option<(usize, f64)> = None;
        for (i, (g, _)) in candidates.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let iou = cfg.metric.iou(&det.box3d, &g.box3d);
            if iou >= cfg.iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        let outcome = match best {
            Some((i, _)) => {
                taken[i] = true;
                match candidates[i].1 {
                    Role::Care => {
                        out.gt_matched += 1;
                        Outcome::TruePositive
                    }
                    Role::Neutral => Outcome::Neutral,
                }
            }
            None => {
                let area = det.box2d.area();
                let absorbed = area > 0.0
                    && dont_care.iter().any(|g| {
                        g.box2d.intersection_area(&det.box2d) / area >= DONT_CARE_COVERAGE
                    });
                if absorbed {
                    Outcome::Neutral
                } else {
                    Outcome::FalsePositive
                }
            }
        };
        out.detections.push((det.score, outcome));
    }
    out
}
