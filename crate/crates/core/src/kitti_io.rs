//! KITTI calibration, label and result files.
//!
//! KITTI stores the bottom-face center of each box as its location; the
//! rest of the crate works with geometric centroids. Conversion happens only
//! here: `centroid_y = location_y - H / 2`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Point3;

use crate::error::{Error, Position, Result};
pub use crate::geometry::CameraIntrinsics;
use crate::geometry::{Box2D, Box3D, Dimensions};

pub const LABEL_FIELDS: usize = 15;
pub const RESULT_FIELDS: usize = 16;

/// Object category. Unknown strings map to `Other`, keeping the raw name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectClass {
    Car,
    Van,
    Truck,
    Pedestrian,
    PersonSitting,
    Cyclist,
    Tram,
    Misc,
    DontCare,
    Other(String),
}

impl ObjectClass {
    pub fn as_str(&self) -> &str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Van => "Van",
            ObjectClass::Truck => "Truck",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::PersonSitting => "Person_sitting",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::Tram => "Tram",
            ObjectClass::Misc => "Misc",
            ObjectClass::DontCare => "DontCare",
            ObjectClass::Other(name) => name,
        }
    }

    pub fn is_other(&self) -> bool {
        matches!(self, ObjectClass::Other(_))
    }
}

impl From<&str> for ObjectClass {
    fn from(s: &str) -> Self {
        match s {
            "Car" => ObjectClass::Car,
            "Van" => ObjectClass::Van,
            "Truck" => ObjectClass::Truck,
            "Pedestrian" => ObjectClass::Pedestrian,
            "Person_sitting" => ObjectClass::PersonSitting,
            "Cyclist" => ObjectClass::Cyclist,
            "Tram" => ObjectClass::Tram,
            "Misc" => ObjectClass::Misc,
            "DontCare" => ObjectClass::DontCare,
            other => ObjectClass::Other(other.to_string()),
        }
    }
}

impl FromStr for ObjectClass {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(ObjectClass::from(s))
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Frame index; rendered as the zero-padded 6-digit file stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId(pub u32);

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06}", self.0)
    }
}

impl FrameId {
    /// Parse a 6-digit file stem such as `000123`.
    pub fn from_stem(stem: &str) -> Option<FrameId> {
        if stem.len() == 6 && stem.bytes().all(|b| b.is_ascii_digit()) {
            stem.parse().ok().map(FrameId)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub class: ObjectClass,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub box2d: Box2D,
    /// Centroid convention.
    pub box3d: Box3D,
    /// Raw KITTI bottom-center Y as read from the file.
    pub source_location_y: f64,
}

impl GroundTruthObject {
    pub fn is_dont_care(&self) -> bool {
        self.class == ObjectClass::DontCare
    }

    /// KITTI location (bottom-face center).
    pub fn kitti_location(&self) -> Point3<f64> {
        Point3::new(
            self.box3d.center.x,
            self.source_location_y,
            self.box3d.center.z,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub class: ObjectClass,
    pub alpha: f64,
    pub box2d: Box2D,
    /// Centroid convention.
    pub box3d: Box3D,
    pub score: f64,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!(
                "score must lie in [0, 1], got {}",
                self.score
            )));
        }
        self.box2d.validate()?;
        self.box3d.dims.validate()
    }

    /// A perfect detection of `gt`.
    pub fn from_ground_truth(gt: &GroundTruthObject, score: f64) -> Self {
        DetectionRecord {
            class: gt.class.clone(),
            alpha: gt.alpha,
            box2d: gt.box2d,
            box3d: gt.box3d,
            score,
        }
    }
}

/// A 2D region of interest read from a label or result file; 3D fields are
/// kept only when they carry real values rather than KITTI's sentinels.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiRecord {
    pub class: ObjectClass,
    pub box2d: Box2D,
    pub score: f64,
    pub dims: Option<Dimensions>,
    pub yaw: Option<f64>,
}

/// Which projection matrix to read from a calibration file, and the image
/// size to attach to the intrinsics.
#[derive(Debug, Clone)]
pub struct CalibOptions {
    pub key: String,
    /// When `None` the principal point is assumed to sit at the image center.
    pub image_size: Option<(f64, f64)>,
}

impl Default for CalibOptions {
    fn default() -> Self {
        CalibOptions {
            key: "P2".into(),
            image_size: None,
        }
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (col, (idx, ch)) in line.char_indices().enumerate() {
        if ch.is_whitespace() {
            if let Some((s, c)) = start.take() {
                out.push(Token {
                    text: &line[s..idx],
                    column: c + 1,
                });
            }
        } else if start.is_none() {
            start = Some((idx, col));
        }
    }
    if let Some((s, c)) = start {
        out.push(Token {
            text: &line[s..],
            column: c + 1,
        });
    }
    out
}

fn number(tok: &Token<'_>, line: usize) -> Result<f64> {
    match tok.text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            position: Position {
                line,
                column: tok.column,
            },
            token: tok.text.to_string(),
        }),
    }
}

fn numbers(toks: &[Token<'_>], line: usize) -> Result<Vec<f64>> {
    toks.iter().map(|t| number(t, line)).collect()
}

pub fn parse_calibration(text: &str) -> Result<CameraIntrinsics> {
    parse_calibration_with(text, &CalibOptions::default())
}

pub fn parse_calibration_with(text: &str, opts: &CalibOptions) -> Result<CameraIntrinsics> {
    let wanted = format!("{}:", opts.key);
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let toks = tokenize(raw);
        let Some(first) = toks.first() else { continue };
        if first.text != wanted {
            continue;
        }
        if toks.len() != 13 {
            return Err(Error::format(
                lineno,
                format!("{} needs 12 values, found {}", opts.key, toks.len() - 1),
            ));
        }
        let m = numbers(&toks[1..], lineno)?;
        // Row-major 3x4; skew and the translation column are not used.
        let (focal, px, py) = (m[0], m[2], m[6]);
        if !(focal > 0.0) {
            return Err(Error::Validation(format!(
                "focal length must be positive, got {focal}"
            )));
        }
        let (w, h) = opts.image_size.unwrap_or((2.0 * px, 2.0 * py));
        return CameraIntrinsics::new(focal, px, py, w, h);
    }
    Err(Error::format(0, format!("missing {wanted} line")))
}

/// KITTI-style calibration text with identical, translation-free projection
/// matrices for all four cameras.
pub fn write_calibration(cam: &CameraIntrinsics) -> String {
    let p = [
        cam.focal,
        0.0,
        cam.principal_x,
        0.0,
        0.0,
        cam.focal,
        cam.principal_y,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
    ];
    let row = |vals: &[f64]| {
        vals.iter()
            .map(|v| format!("{v:.12e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    for key in ["P0", "P1", "P2", "P3"] {
        let _ = writeln!(out, "{key}: {}", row(&p));
    }
    let _ = writeln!(
        out,
        "R0_rect: {}",
        row(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    );
    out
}

fn at_line(lineno: usize, e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::Validation(format!("line {lineno}: {m}")),
        other => Error::Validation(format!("line {lineno}: {other}")),
    }
}

pub fn parse_label_line(line: &str) -> Result<GroundTruthObject> {
    parse_label_line_at(line, 1)
}

fn parse_label_line_at(line: &str, lineno: usize) -> Result<GroundTruthObject> {
    let toks = tokenize(line);
    if toks.len() < LABEL_FIELDS {
        return Err(Error::format(
            lineno,
            format!(
                "expected at least {LABEL_FIELDS} fields, found {}",
                toks.len()
            ),
        ));
    }
    let class = ObjectClass::from(toks[0].text);
    let v = numbers(&toks[1..LABEL_FIELDS], lineno)?;
    let truncation = v[0];
    let occlusion_raw = v[1];
    let alpha = v[2];
    let box2d = Box2D {
        x1: v[3],
        y1: v[4],
        x2: v[5],
        y2: v[6],
    };
    let dims = Dimensions {
        height: v[7],
        width: v[8],
        length: v[9],
    };
    let location = Point3::new(v[10], v[11], v[12]);
    let yaw = v[13];
    let box3d = Box3D {
        center: Point3::new(location.x, location.y - 0.5 * dims.height, location.z),
        dims,
        yaw,
    };
    let occlusion = occlusion_raw as i32;
    let gt = GroundTruthObject {
        class,
        truncation,
        occlusion,
        alpha,
        box2d,
        box3d,
        source_location_y: location.y,
    };
    if gt.is_dont_care() {
        return Ok(gt);
    }
    if occlusion_raw.fract() != 0.0 || !(0..=3).contains(&occlusion) {
        return Err(Error::Validation(format!(
            "line {lineno}: occlusion must be 0..=3, got {occlusion_raw}"
        )));
    }
    if !(0.0..=1.0).contains(&truncation) {
        return Err(Error::Validation(format!(
            "line {lineno}: truncation must lie in [0, 1], got {truncation}"
        )));
    }
    box2d
        .validate()
        .and_then(|_| dims.validate())
        .map_err(|e| at_line(lineno, e))?;
    Ok(gt)
}

fn non_empty_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_label_file(text: &str) -> Result<Vec<GroundTruthObject>> {
    non_empty_lines(text)
        .map(|(n, l)| parse_label_line_at(l, n))
        .collect()
}

/// Byte-level entry point: rejects invalid UTF-8 as a format error.
pub fn parse_label_bytes(bytes: &[u8]) -> Result<Vec<GroundTruthObject>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count();
        Error::format(line, "invalid UTF-8")
    })?;
    parse_label_file(text)
}

pub fn parse_detection_line(line: &str) -> Result<DetectionRecord> {
    parse_detection_line_at(line, 1)
}

fn parse_detection_line_at(line: &str, lineno: usize) -> Result<DetectionRecord> {
    let toks = tokenize(line);
    if toks.len() != RESULT_FIELDS {
        return Err(Error::format(
            lineno,
            format!("expected {RESULT_FIELDS} fields, found {}", toks.len()),
        ));
    }
    let v = numbers(&toks[1..], lineno)?;
    let dims = Dimensions {
        height: v[7],
        width: v[8],
        length: v[9],
    };
    let det = DetectionRecord {
        class: ObjectClass::from(toks[0].text),
        alpha: v[2],
        box2d: Box2D {
            x1: v[3],
            y1: v[4],
            x2: v[5],
            y2: v[6],
        },
        box3d: Box3D {
            center: Point3::new(v[10], v[11] - 0.5 * dims.height, v[12]),
            dims,
            yaw: v[13],
        },
        score: v[14],
    };
    det.validate().map_err(|e| at_line(lineno, e))?;
    Ok(det)
}

pub fn parse_detection_file(text: &str) -> Result<Vec<DetectionRecord>> {
    non_empty_lines(text)
        .map(|(n, l)| parse_detection_line_at(l, n))
        .collect()
}

/// Read class, 2D box, optional score and any non-sentinel 3D fields from a
/// label (15 fields) or result (16 fields) line.
pub fn parse_roi_line(line: &str) -> Result<RoiRecord> {
    parse_roi_line_at(line, 1)
}

fn parse_roi_line_at(line: &str, lineno: usize) -> Result<RoiRecord> {
    let toks = tokenize(line);
    if toks.len() != LABEL_FIELDS && toks.len() != RESULT_FIELDS {
        return Err(Error::format(
            lineno,
            format!(
                "expected {LABEL_FIELDS} or {RESULT_FIELDS} fields, found {}",
                toks.len()
            ),
        ));
    }
    let v = numbers(&toks[1..], lineno)?;
    let box2d = Box2D::new(v[3], v[4], v[5], v[6]).map_err(|e| at_line(lineno, e))?;
    let score = v.get(14).copied().unwrap_or(1.0);
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Validation(format!(
            "line {lineno}: score must lie in [0, 1], got {score}"
        )));
    }
    let dims = Dimensions::new(v[7], v[8], v[9]).ok();
    // KITTI marks unknown rotation with -10.
    let yaw = (v[13].abs() <= 2.0 * std::f64::consts::PI).then_some(v[13]);
    Ok(RoiRecord {
        class: ObjectClass::from(toks[0].text),
        box2d,
        score,
        dims,
        yaw,
    })
}

pub fn parse_roi_file(text: &str) -> Result<Vec<RoiRecord>> {
    non_empty_lines(text)
        .map(|(n, l)| parse_roi_line_at(l, n))
        .collect()
}

fn push_fields(out: &mut String, vals: &[f64]) {
    for v in vals {
        let _ = write!(out, " {v:.6}");
    }
}

/// One KITTI result line (16 fields). Truncation and occlusion are written
/// as `-1`, as the KITTI result format expects.
pub fn write_detection_line(d: &DetectionRecord) -> String {
    let b = &d.box3d;
    let mut out = format!("{} -1 -1", d.class);
    push_fields(
        &mut out,
        &[
            d.alpha,
            d.box2d.x1,
            d.box2d.y1,
            d.box2d.x2,
            d.box2d.y2,
            b.dims.height,
            b.dims.width,
            b.dims.length,
            b.center.x,
            b.center.y + 0.5 * b.dims.height,
            b.center.z,
            b.yaw,
            d.score,
        ],
    );
    out
}

/// One KITTI label line (15 fields), using the retained raw location Y.
pub fn write_label_line(gt: &GroundTruthObject) -> String {
    let b = &gt.box3d;
    let mut out = format!("{} {:.2} {}", gt.class, gt.truncation, gt.occlusion);
    push_fields(
        &mut out,
        &[
            gt.alpha,
            gt.box2d.x1,
            gt.box2d.y1,
            gt.box2d.x2,
            gt.box2d.y2,
            b.dims.height,
            b.dims.width,
            b.dims.length,
            b.center.x,
            gt.source_location_y,
            b.center.z,
            b.yaw,
        ],
    );
    out
}

pub fn write_detection_file(dets: &[DetectionRecord]) -> String {
    dets.iter()
        .map(|d| write_detection_line(d) + "\n")
        .collect()
}

pub fn write_label_file(objects: &[GroundTruthObject]) -> String {
    objects.iter().map(|o| write_label_line(o) + "\n").collect()
}

/// `*.txt` files of a KITTI-style directory keyed by frame, in frame order.
/// Files whose stem is not a 6-digit frame id are skipped.
pub fn frame_files(dir: &Path, extension: &str) -> Result<BTreeMap<FrameId, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(extension) {
            continue;
        }
        match path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(FrameId::from_stem)
        {
            Some(id) => {
                out.insert(id, path);
            }
            None => log::warn!("skipping {}: stem is not a frame id", path.display()),
        }
    }
    Ok(out)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_dir_with<T>(dir: &Path, parse: impl Fn(&str) -> Result<T>) -> Result<BTreeMap<FrameId, T>> {
    frame_files(dir, "txt")?
        .into_iter()
        .map(|(id, path)| {
            let text = read_text(&path)?;
            parse(&text).map(|v| (id, v)).map_err(|e| e.in_file(&path))
        })
        .collect()
}

pub fn read_label_dir(dir: &Path) -> Result<BTreeMap<FrameId, Vec<GroundTruthObject>>> {
    read_dir_with(dir, parse_label_file)
}

pub fn read_detection_dir(dir: &Path) -> Result<BTreeMap<FrameId, Vec<DetectionRecord>>> {
    read_dir_with(dir, parse_detection_file)
}

pub fn read_roi_dir(dir: &Path) -> Result<BTreeMap<FrameId, Vec<RoiRecord>>> {
    read_dir_with(dir, parse_roi_file)
}

pub fn read_calib_dir(
    dir: &Path,
    opts: &CalibOptions,
) -> Result<BTreeMap<FrameId, CameraIntrinsics>> {
    read_dir_with(dir, |t| parse_calibration_with(t, opts))
}
