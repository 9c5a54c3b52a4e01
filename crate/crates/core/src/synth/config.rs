use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal distribution, clamped to stay positive when sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDistribution {
    /// Relative frequency.
    pub weight: f64,
    pub height: SizeDistribution,
    pub width: SizeDistribution,
    pub length: SizeDistribution,
}

impl ClassDistribution {
    /// KITTI Car statistics.
    pub fn car() -> Self {
        ClassDistribution {
            weight: 1.0,
            height: SizeDistribution {
                mean: 1.53,
                std: 0.1,
            },
            width: SizeDistribution {
                mean: 1.63,
                std: 0.1,
            },
            length: SizeDistribution {
                mean: 3.88,
                std: 0.4,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub focal: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub image_width: f64,
    pub image_height: f64,
    /// Camera height above the flat ground plane, meters.
    pub mount_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            focal: 721.5377,
            principal_x: 609.5593,
            principal_y: 172.854,
            image_width: 1242.0,
            image_height: 375.0,
            mount_height: 1.65,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub grid: usize,
    /// Width of the clean attention bump, in RoI-normalized units.
    pub spread: f64,
    /// Probability that an unoccluded object's map is corrupted anyway.
    pub corruption_rate: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            grid: crate::centroid::DEFAULT_GRID,
            spread: 0.35,
            corruption_rate: 0.0,
        }
    }
}

/// Synthetic corpus description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: u32,
    pub objects_min: usize,
    pub objects_max: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Yaw is drawn uniformly from `[yaw_min, yaw_max]`.
    pub yaw_min: f64,
    pub yaw_max: f64,
    /// Probability that an object is marked occluded (level 1 or 2); occluded
    /// objects always get a corrupted attention map.
    pub occlusion_rate: f64,
    /// Std of Gaussian noise added to each 2D box coordinate, pixels.
    pub jitter_std: f64,
    /// Placements whose visible fraction of the 2D box falls below
    /// `1 - max_truncation` are redrawn.
    pub max_truncation: f64,
    /// Fronto-parallel planar objects whose 2D box is the exact projection of
    /// a rectangle at the centroid depth.
    pub billboard: bool,
    pub camera: CameraConfig,
    pub attention: AttentionConfig,
    pub classes: BTreeMap<String, ClassDistribution>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 42,
            frames: 100,
            objects_min: 1,
            objects_max: 6,
            depth_min: 5.0,
            depth_max: 60.0,
            yaw_min: -std::f64::consts::PI,
            yaw_max: std::f64::consts::PI,
            occlusion_rate: 0.0,
            jitter_std: 0.0,
            max_truncation: 1.0,
            billboard: false,
            camera: CameraConfig::default(),
            attention: AttentionConfig::default(),
            classes: BTreeMap::from([("Car".to_string(), ClassDistribution::car())]),
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig =
            toml::from_str(text).map_err(|e| Error::format(0, format!("scene config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(format!("scene config: {m}")));
        if self.objects_min > self.objects_max {
            return fail("objects_min exceeds objects_max");
        }
        if !(self.depth_min > 0.0 && self.depth_min <= self.depth_max) {
            return fail("depth range must be nonempty with depth_min > 0");
        }
        if !(self.yaw_min <= self.yaw_max) {
            return fail("yaw range is empty");
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate)
            || !(0.0..=1.0).contains(&self.attention.corruption_rate)
            || !(0.0..=1.0).contains(&self.max_truncation)
        {
            return fail("rates must lie in [0, 1]");
        }
        if !(self.jitter_std >= 0.0) || !(self.attention.spread > 0.0) || self.attention.grid == 0 {
            return fail("jitter must be nonnegative, spread positive and grid at least 1");
        }
        if self.classes.is_empty() {
            return fail("at least one class is required");
        }
        for (name, c) in &self.classes {
            let sizes = [c.height, c.width, c.length];
            if !(c.weight > 0.0) || sizes.iter().any(|s| !(s.mean > 0.0 && s.std >= 0.0)) {
                return Err(Error::Validation(format!(
                    "scene config: class {name} needs positive weight and size means"
                )));
            }
        }
        let cam = &self.camera;
        crate::geometry::CameraIntrinsics::new(
            cam.focal,
            cam.principal_x,
            cam.principal_y,
            cam.image_width,
            cam.image_height,
        )?;
        Ok(())
    }
}
