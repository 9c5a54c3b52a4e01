//! End-to-end localization of 2D regions: prior depth, proposal grid,
//! object-aware voting, late fusion.

use nalgebra::{Point3, Vector3};

use crate::centroid::{centroid_proposals, HeightPrior, ProposalGrid, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Box2D, CameraIntrinsics};
use crate::kitti_io::{DetectionRecord, GroundTruthObject, ObjectClass, RoiRecord};
use crate::voting::{
    fuse_late, geometric_confidence, normalize_votes, vote_location, weighted_proposals,
    AttentionMap, GaussianOffsetModel, OffsetUnits, VoteWeights, VotingHead,
};

/// Attention assumed for every cell when no map is supplied.
pub const DEFAULT_ATTENTION: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub grid: usize,
    pub units: OffsetUnits,
    pub head: VotingHead,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            grid: DEFAULT_GRID,
            units: OffsetUnits::default(),
            head: VotingHead::Mean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Located {
    pub grid: ProposalGrid,
    pub weights: VoteWeights,
    pub location: Point3<f64>,
}

impl Located {
    /// Flattened weighted proposals, the linear head's input.
    pub fn features(&self) -> Vec<f64> {
        weighted_proposals(&self.grid, &self.weights).expect("grid and weights share a shape")
    }
}

/// Vote weights for one region; a missing attention map means uniform
/// [`DEFAULT_ATTENTION`].
pub fn region_weights(
    roi: &Box2D,
    gpd: &GaussianOffsetModel,
    attention: Option<&AttentionMap>,
    grid: usize,
    units: OffsetUnits,
) -> Result<VoteWeights> {
    let fallback;
    let app = match attention {
        Some(a) => a,
        None => {
            fallback = AttentionMap::uniform(grid, DEFAULT_ATTENTION)?;
            &fallback
        }
    };
    let geo = geometric_confidence(gpd, roi, grid, units)?;
    normalize_votes(app, &geo)
}

pub fn locate(
    cam: &CameraIntrinsics,
    roi: &Box2D,
    prior_height: f64,
    gpd: &GaussianOffsetModel,
    attention: Option<&AttentionMap>,
    cfg: &InferenceConfig,
) -> Result<Located> {
    let grid = centroid_proposals(cam, roi, prior_height, cfg.grid)?;
    let weights = region_weights(roi, gpd, attention, cfg.grid, cfg.units)?;
    let geometric = vote_location(&grid, &weights, &cfg.head)?;
    // The appearance-branch residual needs learned RoI features; zero here.
    let location = fuse_late(&geometric, &Vector3::zeros());
    Ok(Located {
        grid,
        weights,
        location,
    })
}

/// Detections for one frame. Regions of classes missing from the prior
/// (and DontCare rows) are skipped. `attention`, when given, holds one map
/// per input row in order.
pub fn infer_frame(
    cam: &CameraIntrinsics,
    rois: &[RoiRecord],
    attention: Option<&[AttentionMap]>,
    prior: &HeightPrior,
    gpd: &GaussianOffsetModel,
    cfg: &InferenceConfig,
) -> Result<Vec<DetectionRecord>> {
    if let Some(maps) = attention {
        if maps.len() != rois.len() {
            return Err(Error::Shape {
                expected: rois.len(),
                actual: maps.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(rois.len());
    for (i, roi) in rois.iter().enumerate() {
        if roi.class == ObjectClass::DontCare {
            continue;
        }
        let Ok(class_prior) = prior.get(&roi.class) else {
            log::warn!("no prior for class {}, skipping region", roi.class);
            continue;
        };
        let located = locate(
            cam,
            &roi.box2d,
            class_prior.height,
            gpd,
            attention.map(|m| &m[i]),
            cfg,
        )?;
        let dims = match roi.dims {
            Some(d) => d,
            None => prior.mean_dims(&roi.class)?,
        };
        let yaw = roi.yaw.unwrap_or(0.0);
        let c = located.location;
        out.push(DetectionRecord {
            class: roi.class.clone(),
            alpha: wrap_angle(yaw - c.x.atan2(c.z)),
            box2d: roi.box2d,
            box3d: crate::geometry::Box3D::new(c, dims, yaw)?,
            score: roi.score,
        });
    }
    Ok(out)
}

/// Offset between an object's projected centroid and its 2D box center.
pub fn projection_offset(
    cam: &CameraIntrinsics,
    gt: &GroundTruthObject,
    units: OffsetUnits,
) -> Result<[f64; 2]> {
    let p = cam.project(&gt.box3d.center)?;
    let c = gt.box2d.center();
    let (su, sv) = units.scale(&gt.box2d);
    Ok([(p.x - c.x) / su, (p.y - c.y) / sv])
}
