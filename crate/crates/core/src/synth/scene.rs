use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::{ClassDistribution, SceneConfig, SizeDistribution};
use crate::error::{Error, Result};
use crate::fitting::{offsets_to_csv, OffsetSample};
use crate::geometry::{
    project_box3d_to_box2d, wrap_angle, Box2D, Box3D, CameraIntrinsics, Dimensions,
};
use crate::kitti_io::{
    write_calibration, write_label_file, FrameId, GroundTruthObject, ObjectClass,
};
use crate::pipeline::projection_offset;
use crate::voting::{AttentionMap, OffsetUnits};

/// Smallest sampled dimension, meters.
const MIN_DIMENSION: f64 = 0.05;
/// Depth extent of a billboard object.
pub const BILLBOARD_LENGTH: f64 = 0.01;
/// Placement attempts per object before it is dropped.
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame: FrameId,
    pub camera: CameraIntrinsics,
    pub objects: Vec<GroundTruthObject>,
    /// One map per object, in the same order.
    pub attention: Vec<AttentionMap>,
}

pub fn camera_of(cfg: &SceneConfig) -> CameraIntrinsics {
    let c = &cfg.camera;
    CameraIntrinsics {
        focal: c.focal,
        principal_x: c.principal_x,
        principal_y: c.principal_y,
        image_width: c.image_width,
        image_height: c.image_height,
    }
}

fn sample_size<R: Rng>(rng: &mut R, d: &SizeDistribution) -> f64 {
    let v = if d.std > 0.0 {
        Normal::new(d.mean, d.std)
            .expect("validated std")
            .sample(rng)
    } else {
        d.mean
    };
    v.max(MIN_DIMENSION)
}

fn pick_class<'a, R: Rng>(rng: &mut R, cfg: &'a SceneConfig) -> (&'a str, &'a ClassDistribution) {
    let total: f64 = cfg.classes.values().map(|c| c.weight).sum();
    let mut t = rng.random::<f64>() * total;
    for (name, c) in &cfg.classes {
        if t < c.weight {
            return (name, c);
        }
        t -= c.weight;
    }
    let (name, c) = cfg.classes.iter().next_back().expect("validated nonempty");
    (name, c)
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Image rectangle of an upright `width x height` plane facing the camera.
pub fn billboard_box(
    cam: &CameraIntrinsics,
    center: &Point3<f64>,
    dims: &Dimensions,
) -> Result<Box2D> {
    let a = cam.project(&Point3::new(
        center.x - 0.5 * dims.width,
        center.y - 0.5 * dims.height,
        center.z,
    ))?;
    let b = cam.project(&Point3::new(
        center.x + 0.5 * dims.width,
        center.y + 0.5 * dims.height,
        center.z,
    ))?;
    Box2D::new(a.x, a.y, b.x, b.y)
}

struct Placed {
    object: GroundTruthObject,
    /// Unjittered, unclipped 2D extent.
    exact: Box2D,
}

fn place_object<R: Rng>(
    rng: &mut R,
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
) -> Result<Option<Placed>> {
    let (name, dist) = pick_class(rng, cfg);
    let class = ObjectClass::from(name);
    let dims = Dimensions::new(
        sample_size(rng, &dist.height),
        sample_size(rng, &dist.width),
        if cfg.billboard {
            BILLBOARD_LENGTH
        } else {
            sample_size(rng, &dist.length)
        },
    )?;
    // Flat ground: one centroid height per class.
    let y = cfg.camera.mount_height - 0.5 * dist.height.mean;
    for _ in 0..MAX_ATTEMPTS {
        let z = uniform(rng, cfg.depth_min, cfg.depth_max);
        let u = uniform(rng, 0.0, cam.image_width);
        let yaw = if cfg.billboard {
            std::f64::consts::FRAC_PI_2
        } else {
            uniform(rng, cfg.yaw_min, cfg.yaw_max)
        };
        let center = Point3::new((u - cam.principal_x) * z / cam.focal, y, z);
        let box3d = Box3D::new(center, dims, wrap_angle(yaw))?;
        if box3d.corners().iter().any(|p| p.z <= 0.0) {
            continue;
        }
        let exact = if cfg.billboard {
            billboard_box(cam, &center, &dims)?
        } else {
            project_box3d_to_box2d(cam, &box3d)?
        };
        let Some(visible) = exact.clipped(cam.image_width, cam.image_height) else {
            continue;
        };
        let truncation = (1.0 - visible.area() / exact.area()).clamp(0.0, 1.0);
        if truncation > cfg.max_truncation {
            continue;
        }
        let object = GroundTruthObject {
            class: class.clone(),
            truncation,
            occlusion: 0,
            alpha: wrap_angle(box3d.yaw - center.x.atan2(center.z)),
            box2d: visible,
            box3d,
            source_location_y: center.y + 0.5 * dims.height,
        };
        return Ok(Some(Placed { object, exact }));
    }
    Ok(None)
}

fn jitter<R: Rng>(rng: &mut R, b: &Box2D, std: f64, cam: &CameraIntrinsics) -> Box2D {
    if std == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, std).expect("validated jitter");
    let mut v = [b.x1, b.y1, b.x2, b.y2].map(|c| c + n.sample(rng));
    v[0] = v[0].clamp(0.0, cam.image_width - 1.0);
    v[2] = v[2].clamp(v[0] + 1.0, cam.image_width);
    v[1] = v[1].clamp(0.0, cam.image_height - 1.0);
    v[3] = v[3].clamp(v[1] + 1.0, cam.image_height);
    Box2D {
        x1: v[0],
        y1: v[1],
        x2: v[2],
        y2: v[3],
    }
}

/// Attention map over the object's RoI: a bump at the projected centroid,
/// or (when `corrupt`) that bump overlaid by a block of spurious high
/// confidence standing in for an occluder.
fn attention_map<R: Rng>(
    rng: &mut R,
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
    o: &GroundTruthObject,
    corrupt: bool,
) -> Result<AttentionMap> {
    let s = cfg.attention.grid;
    let off = projection_offset(cam, o, OffsetUnits::RoiNormalized)?;
    let spread2 = 2.0 * cfg.attention.spread * cfg.attention.spread;
    let mut values = Vec::with_capacity(s * s);
    for r in 0..s {
        for c in 0..s {
            let du = (c as f64 + 0.5) / s as f64 - 0.5 - off[0];
            let dv = (r as f64 + 0.5) / s as f64 - 0.5 - off[1];
            values.push((-(du * du + dv * dv) / spread2).exp());
        }
    }
    if corrupt {
        let h = rng.random_range(1..=s.div_ceil(2));
        let w = rng.random_range(1..=s.div_ceil(2));
        let r0 = rng.random_range(0..=s - h);
        let c0 = rng.random_range(0..=s - w);
        let fade = uniform(rng, 0.2, 0.6);
        for v in values.iter_mut() {
            *v *= fade;
        }
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                values[r * s + c] = uniform(rng, 0.8, 1.0);
            }
        }
    }
    AttentionMap::new(s, values)
}

/// One frame, deterministic in `(cfg.seed, frame)`.
pub fn generate_scene(cfg: &SceneConfig, frame: u32) -> Result<Scene> {
    cfg.validate()?;
    let cam = camera_of(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ frame as u64);
    let mut attn_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ frame as u64);
    attn_rng.set_stream(1);

    let n = rng.random_range(cfg.objects_min..=cfg.objects_max);
    let mut objects = Vec::with_capacity(n);
    let mut attention = Vec::with_capacity(n);
    for _ in 0..n {
        let Some(Placed { mut object, exact }) = place_object(&mut rng, cfg, &cam)? else {
            log::debug!("frame {frame}: dropped an object after {MAX_ATTEMPTS} placements");
            continue;
        };
        if rng.random::<f64>() < cfg.occlusion_rate {
            object.occlusion = rng.random_range(1..=2);
        }
        if cfg.jitter_std > 0.0 {
            let base = exact
                .clipped(cam.image_width, cam.image_height)
                .unwrap_or(object.box2d);
            object.box2d = jitter(&mut rng, &base, cfg.jitter_std, &cam);
        }
        let corrupt =
            object.occlusion > 0 || attn_rng.random::<f64>() < cfg.attention.corruption_rate;
        attention.push(attention_map(&mut attn_rng, cfg, &cam, &object, corrupt)?);
        objects.push(object);
    }
    Ok(Scene {
        frame: FrameId(frame),
        camera: cam,
        objects,
        attention,
    })
}

/// Frames `0..cfg.frames`, generated in parallel.
pub fn generate_corpus(cfg: &SceneConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    (0..cfg.frames)
        .into_par_iter()
        .map(|f| generate_scene(cfg, f))
        .collect()
}

/// 2D regions as KITTI label lines with every 3D field set to its sentinel.
pub fn write_roi_file(objects: &[GroundTruthObject]) -> String {
    objects
        .iter()
        .map(|o| {
            let b = &o.box2d;
            format!(
                "{} {:.2} {} -10 {:.6} {:.6} {:.6} {:.6} -1 -1 -1 -1000 -1000 -1000 -10\n",
                o.class, o.truncation, o.occlusion, b.x1, b.y1, b.x2, b.y2
            )
        })
        .collect()
}

pub fn write_attention_file(maps: &[AttentionMap]) -> String {
    maps.iter().map(|m| m.to_csv_row() + "\n").collect()
}

/// Write `contents` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Offsets of every object's projected centroid from its 2D box center.
pub fn corpus_offsets(scenes: &[Scene], units: OffsetUnits) -> Result<Vec<OffsetSample>> {
    let mut out = Vec::new();
    for s in scenes {
        for (i, o) in s.objects.iter().enumerate() {
            out.push(OffsetSample {
                frame: s.frame,
                object: i,
                offset: projection_offset(&s.camera, o, units)?,
            });
        }
    }
    Ok(out)
}

/// KITTI-style layout under `root`: `calib/`, `label_2/`, `boxes2d/`
/// (2D regions only), `aam/` (one attention row per region) and
/// `offsets.csv`.
pub fn write_corpus(root: &Path, scenes: &[Scene]) -> Result<()> {
    let dirs = ["calib", "label_2", "boxes2d", "aam"];
    for d in dirs {
        let p = root.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    scenes.par_iter().try_for_each(|s| {
        let stem = s.frame.to_string();
        write_atomic(
            &root.join("calib").join(format!("{stem}.txt")),
            write_calibration(&s.camera).as_bytes(),
        )?;
        write_atomic(
            &root.join("label_2").join(format!("{stem}.txt")),
            write_label_file(&s.objects).as_bytes(),
        )?;
        write_atomic(
            &root.join("boxes2d").join(format!("{stem}.txt")),
            write_roi_file(&s.objects).as_bytes(),
        )?;
        write_atomic(
            &root.join("aam").join(format!("{stem}.csv")),
            write_attention_file(&s.attention).as_bytes(),
        )
    })?;
    let offsets = corpus_offsets(scenes, OffsetUnits::RoiNormalized)?;
    write_atomic(
        &root.join("offsets.csv"),
        offsets_to_csv(&offsets).as_bytes(),
    )
}
