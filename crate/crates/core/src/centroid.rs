//! 3D centroid proposals from a 2D region via the pinhole height prior.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Point2, Point3};

use crate::error::{Error, Result};
use crate::geometry::{Box2D, CameraIntrinsics, Dimensions};
use crate::kitti_io::{GroundTruthObject, ObjectClass};

pub const DEFAULT_GRID: usize = 7;

/// Per-class mean object size. Only the height enters depth reasoning; the
/// mean width and length, when known, give inferred boxes a plausible size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeightPrior {
    table: BTreeMap<String, ClassPrior>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPrior {
    pub height: f64,
    pub width: Option<f64>,
    pub length: Option<f64>,
}

impl HeightPrior {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: &ObjectClass, height: f64) -> Result<()> {
        self.insert_full(
            class,
            ClassPrior {
                height,
                width: None,
                length: None,
            },
        )
    }

    pub fn insert_full(&mut self, class: &ObjectClass, prior: ClassPrior) -> Result<()> {
        let sizes = [Some(prior.height), prior.width, prior.length];
        if sizes.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation(format!(
                "prior sizes for {class} must be positive"
            )));
        }
        self.table.insert(class.as_str().to_string(), prior);
        Ok(())
    }

    pub fn height(&self, class: &ObjectClass) -> Result<f64> {
        self.get(class).map(|p| p.height)
    }

    pub fn get(&self, class: &ObjectClass) -> Result<ClassPrior> {
        self.table
            .get(class.as_str())
            .copied()
            .ok_or_else(|| Error::MissingClass(class.to_string()))
    }

    /// Mean box size, falling back to a cube of the prior height.
    pub fn mean_dims(&self, class: &ObjectClass) -> Result<Dimensions> {
        let p = self.get(class)?;
        Dimensions::new(
            p.height,
            p.width.unwrap_or(p.height),
            p.length.unwrap_or(p.height),
        )
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    /// `class height [width length]` per line; `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# class mean_height [mean_width mean_length]\n");
        for (name, p) in &self.table {
            let _ = write!(out, "{name} {:.6}", p.height);
            if let (Some(w), Some(l)) = (p.width, p.length) {
                let _ = write!(out, " {w:.6} {l:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut prior = HeightPrior::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 && fields.len() != 4 {
                return Err(Error::format(
                    lineno,
                    "expected `class height` or `class height width length`",
                ));
            }
            let vals = fields[1..]
                .iter()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::format(lineno, format!("cannot read {t:?} as a number"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            prior.insert_full(
                &ObjectClass::from(fields[0]),
                ClassPrior {
                    height: vals[0],
                    width: vals.get(1).copied(),
                    length: vals.get(2).copied(),
                },
            )?;
        }
        Ok(prior)
    }
}

/// Per-class mean dimensions over every non-DontCare object. Fails when a
/// requested class has no examples.
pub fn fit_height_prior<'a>(
    objects: impl IntoIterator<Item = &'a GroundTruthObject>,
    required: &[ObjectClass],
) -> Result<HeightPrior> {
    let mut sums: BTreeMap<ObjectClass, ([f64; 3], usize)> = BTreeMap::new();
    for o in objects.into_iter().filter(|o| !o.is_dont_care()) {
        let e = sums.entry(o.class.clone()).or_insert(([0.0; 3], 0));
        let d = &o.box3d.dims;
        e.0[0] += d.height;
        e.0[1] += d.width;
        e.0[2] += d.length;
        e.1 += 1;
    }
    for class in required {
        if !sums.contains_key(class) {
            return Err(Error::MissingClass(class.to_string()));
        }
    }
    let mut prior = HeightPrior::new();
    for (class, (s, n)) in sums {
        let n = n as f64;
        prior.insert_full(
            &class,
            ClassPrior {
                height: s[0] / n,
                width: Some(s[1] / n),
                length: Some(s[2] / n),
            },
        )?;
    }
    Ok(prior)
}

/// Depth from apparent height: `Z = f * H / h`.
pub fn estimate_depth(apparent_height: f64, prior_height: f64, focal: f64) -> Result<f64> {
    if !(apparent_height > 0.0) {
        return Err(Error::DegenerateBox {
            height: apparent_height,
        });
    }
    if !(prior_height > 0.0 && focal > 0.0) {
        return Err(Error::Domain(format!(
            "prior height ({prior_height}) and focal length ({focal}) must be positive"
        )));
    }
    Ok(focal * prior_height / apparent_height)
}

/// Cell centers of an `s x s` division of `roi`, row-major (v outer, u inner).
pub fn grid_coordinates(roi: &Box2D, s: usize) -> Result<Vec<Point2<f64>>> {
    if s == 0 {
        return Err(Error::Domain("grid side must be at least 1".into()));
    }
    let step_u = roi.width() / s as f64;
    let step_v = roi.height() / s as f64;
    let mut out = Vec::with_capacity(s * s);
    for row in 0..s {
        let v = roi.y1 + (row as f64 + 0.5) * step_v;
        for col in 0..s {
            out.push(Point2::new(roi.x1 + (col as f64 + 0.5) * step_u, v));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalGrid {
    pub side: usize,
    pub points2d: Vec<Point2<f64>>,
    pub points3d: Vec<Point3<f64>>,
    pub depth: f64,
}

impl ProposalGrid {
    pub fn len(&self) -> usize {
        self.points3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points3d.is_empty()
    }
}

/// Back-project every grid point of `roi` at the shared prior depth.
pub fn centroid_proposals(
    cam: &CameraIntrinsics,
    roi: &Box2D,
    prior_height: f64,
    s: usize,
) -> Result<ProposalGrid> {
    roi.validate()?;
    let depth = estimate_depth(roi.height(), prior_height, cam.focal)?;
    let points2d = grid_coordinates(roi, s)?;
    let points3d = points2d
        .iter()
        .map(|p| cam.backproject(p.x, p.y, depth))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalGrid {
        side: s,
        points2d,
        points3d,
        depth,
    })
}

pub const HIST_LOW: f64 = -15.0;
pub const HIST_HIGH: f64 = 15.0;
pub const HIST_BIN: f64 = 0.5;
const HIST_BINS: usize = 60;

/// Running depth-error statistics. `merge` is associative, so per-frame
/// accumulators can be combined in any grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthErrorAccumulator {
    n: usize,
    mean: f64,
    m2: f64,
    underflow: usize,
    overflow: usize,
    bins: Vec<usize>,
}

impl Default for DepthErrorAccumulator {
    fn default() -> Self {
        DepthErrorAccumulator {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            underflow: 0,
            overflow: 0,
            bins: vec![0; HIST_BINS],
        }
    }
}

impl DepthErrorAccumulator {
    pub fn push(&mut self, dz: f64) {
        self.n += 1;
        let delta = dz - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (dz - self.mean);
        if dz < HIST_LOW {
            self.underflow += 1;
        } else if dz >= HIST_HIGH {
            self.overflow += 1;
        } else {
            let idx = ((dz - HIST_LOW) / HIST_BIN) as usize;
            self.bins[idx.min(HIST_BINS - 1)] += 1;
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        for (a, b) in self.bins.iter_mut().zip(other.bins) {
            *a += b;
        }
        self
    }

    pub fn finish(self) -> Result<DepthErrorStats> {
        if self.n == 0 {
            return Err(Error::EmptyStats);
        }
        let mut histogram = Vec::with_capacity(HIST_BINS + 2);
        histogram.push(HistogramBin {
            low: f64::NEG_INFINITY,
            high: HIST_LOW,
            count: self.underflow,
        });
        for (i, &count) in self.bins.iter().enumerate() {
            let low = HIST_LOW + i as f64 * HIST_BIN;
            histogram.push(HistogramBin {
                low,
                high: low + HIST_BIN,
                count,
            });
        }
        histogram.push(HistogramBin {
            low: HIST_HIGH,
            high: f64::INFINITY,
            count: self.overflow,
        });
        Ok(DepthErrorStats {
            mean: self.mean,
            std: (self.m2 / self.n as f64).max(0.0).sqrt(),
            histogram,
            n: self.n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Depth error `estimated - true` over a corpus; `std` is the population
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthErrorStats {
    pub mean: f64,
    pub std: f64,
    pub histogram: Vec<HistogramBin>,
    pub n: usize,
}

impl DepthErrorStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for b in &self.histogram {
            let _ = writeln!(out, "{},{},{}", b.low, b.high, b.count);
        }
        out
    }
}

/// Depth errors for one frame's objects of `class`, using each object's
/// own 2D box (or the box supplied by `box_of`).
pub fn accumulate_depth_errors<'a>(
    acc: &mut DepthErrorAccumulator,
    cam: &CameraIntrinsics,
    objects: impl IntoIterator<Item = &'a GroundTruthObject>,
    prior: &HeightPrior,
    class: &ObjectClass,
    box_of: impl Fn(&GroundTruthObject) -> Option<Box2D>,
) -> Result<()> {
    let prior_height = prior.height(class)?;
    for o in objects {
        if o.is_dont_care() || &o.class != class {
            continue;
        }
        let Some(b) = box_of(o) else { continue };
        let z = estimate_depth(b.height(), prior_height, cam.focal)?;
        acc.push(z - o.box3d.center.z);
    }
    Ok(())
}

/// Depth-error statistics over frames of `(camera, objects)`, using the
/// objects' own 2D boxes.
pub fn depth_error_stats<'a, I>(
    frames: I,
    prior: &HeightPrior,
    class: &ObjectClass,
) -> Result<DepthErrorStats>
where
    I: IntoIterator<Item = (&'a CameraIntrinsics, &'a [GroundTruthObject])>,
{
    let mut acc = DepthErrorAccumulator::default();
    for (cam, objects) in frames {
        accumulate_depth_errors(&mut acc, cam, objects, prior, class, |o| Some(o.box2d))?;
    }
    acc.finish()
}
