//! Pinhole camera model and oriented 3D box geometry.
//!
//! Camera frame: X right, Y down, Z forward. Boxes are described by their
//! geometric centroid; yaw is KITTI's `rotation_y` (rotation about camera Y,
//! zero when the box length points along +X).

use nalgebra::{Point2, Point3};

use crate::error::{Error, Result};

/// Intrinsics of a rectified pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl CameraIntrinsics {
    pub fn new(
        focal: f64,
        principal_x: f64,
        principal_y: f64,
        image_width: f64,
        image_height: f64,
    ) -> Result<Self> {
        let cam = CameraIntrinsics {
            focal,
            principal_x,
            principal_y,
            image_width,
            image_height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(Error::Validation(format!(
                "focal length must be positive, got {}",
                self.focal
            )));
        }
        if !(0.0..=self.image_width).contains(&self.principal_x)
            || !(0.0..=self.image_height).contains(&self.principal_y)
        {
            return Err(Error::Validation(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.principal_x, self.principal_y, self.image_width, self.image_height
            )));
        }
        Ok(())
    }

    /// Image coordinates of a camera-frame point.
    pub fn project(&self, p: &Point3<f64>) -> Result<Point2<f64>> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok(Point2::new(
            self.focal * p.x / p.z + self.principal_x,
            self.focal * p.y / p.z + self.principal_y,
        ))
    }

    /// Camera-frame point at depth `z` whose projection is `(u, v)`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Result<Point3<f64>> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!(
                "back-projection depth must be positive, got {z}"
            )));
        }
        Ok(Point3::new(
            (u - self.principal_x) * z / self.focal,
            (v - self.principal_y) * z / self.focal,
            z,
        ))
    }
}

/// Axis-aligned image rectangle, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Box2D { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.x1 < self.x2) || !(self.y1 < self.y2) {
            return Err(Error::Validation(format!(
                "malformed 2D box ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn intersection_area(&self, other: &Box2D) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &Box2D) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Clip to `[0, width] x [0, height]`; `None` when nothing remains.
    pub fn clipped(&self, width: f64, height: f64) -> Option<Box2D> {
        let b = Box2D {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }
}

/// Box extents along its own axes, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensions {
    pub height: f64,
    pub width: f64,
    pub length: f64,
}

impl Dimensions {
    pub fn new(height: f64, width: f64, length: f64) -> Result<Self> {
        let d = Dimensions {
            height,
            width,
            length,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.height, self.width, self.length]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(Error::Validation(format!(
                "box dimensions must be positive, got H={} W={} L={}",
                self.height, self.width, self.length
            )));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.height * self.width * self.length
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    /// Geometric centroid in the camera frame.
    pub center: Point3<f64>,
    pub dims: Dimensions,
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: Point3<f64>, dims: Dimensions, yaw: f64) -> Result<Self> {
        dims.validate()?;
        if !(center.iter().all(|v| v.is_finite()) && yaw.is_finite()) {
            return Err(Error::Validation("non-finite box pose".into()));
        }
        Ok(Box3D { center, dims, yaw })
    }

    /// Rotate a box-local offset `(x, y, z)` into the camera frame.
    fn rotate(&self, x: f64, y: f64, z: f64) -> Point3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Point3::new(
            self.center.x + c * x + s * z,
            self.center.y + y,
            self.center.z - s * x + c * z,
        )
    }

    /// The eight corners. Indices 0..4 are the bottom face (`+H/2`, since Y
    /// points down) and 4..8 the top face; each face runs counterclockwise
    /// when viewed from above, starting at local `(+L/2, +W/2)`.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let hl = 0.5 * self.dims.length;
        let hw = 0.5 * self.dims.width;
        let hh = 0.5 * self.dims.height;
        let footprint = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        let mut out = [Point3::origin(); 8];
        for (i, &(x, z)) in footprint.iter().enumerate() {
            out[i] = self.rotate(x, hh, z);
            out[i + 4] = self.rotate(x, -hh, z);
        }
        out
    }

    /// Bird's-eye footprint as `(X, Z)` points, counterclockwise seen from above.
    pub fn bev_footprint(&self) -> [Point2<f64>; 4] {
        let c = self.corners();
        [
            Point2::new(c[0].x, c[0].z),
            Point2::new(c[1].x, c[1].z),
            Point2::new(c[2].x, c[2].z),
            Point2::new(c[3].x, c[3].z),
        ]
    }

    /// Vertical extent `[top, bottom]` in camera Y.
    pub fn y_extent(&self) -> (f64, f64) {
        let hh = 0.5 * self.dims.height;
        (self.center.y - hh, self.center.y + hh)
    }
}

/// Tightest image rectangle around the projected corners, unclipped.
pub fn project_box3d_to_box2d(cam: &CameraIntrinsics, b: &Box3D) -> Result<Box2D> {
    let mut x1 = f64::INFINITY;
    let mut y1 = f64::INFINITY;
    let mut x2 = f64::NEG_INFINITY;
    let mut y2 = f64::NEG_INFINITY;
    for corner in b.corners() {
        let p = cam.project(&corner)?;
        x1 = x1.min(p.x);
        y1 = y1.min(p.y);
        x2 = x2.max(p.x);
        y2 = y2.max(p.y);
    }
    Ok(Box2D { x1, y1, x2, y2 })
}

/// As [`project_box3d_to_box2d`], clipped to the image. `None` when the
/// projection falls entirely outside.
pub fn project_box3d_to_box2d_clipped(cam: &CameraIntrinsics, b: &Box3D) -> Result<Option<Box2D>> {
    Ok(project_box3d_to_box2d(cam, b)?.clipped(cam.image_width, cam.image_height))
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Shoelace area of a simple polygon (positive when counterclockwise).
pub fn signed_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(700.0, 600.0, 180.0, 1242.0, 375.0).unwrap()
    }

    fn boxed(c: [f64; 3], h: f64, w: f64, l: f64, yaw: f64) -> Box3D {
        Box3D::new(
            Point3::new(c[0], c[1], c[2]),
            Dimensions::new(h, w, l).unwrap(),
            yaw,
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let cam = cam();
        let p = cam.project(&Point3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!((p.x, p.y), (600.0, 180.0));
        let p = cam.project(&Point3::new(1.0, 0.0, 10.0)).unwrap();
        assert_eq!((p.x, p.y), (670.0, 180.0));
        assert!(matches!(
            cam.project(&Point3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn backprojection_examples() {
        let cam = cam();
        assert_eq!(
            cam.backproject(600.0, 180.0, 10.0).unwrap(),
            Point3::new(0.0, 0.0, 10.0)
        );
        assert_eq!(
            cam.backproject(670.0, 180.0, 10.0).unwrap(),
            Point3::new(1.0, 0.0, 10.0)
        );
        assert!(matches!(
            cam.backproject(1.0, 1.0, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn axis_aligned_cube_corners() {
        let b = boxed([0.0, 0.0, 10.0], 2.0, 2.0, 2.0, 0.0);
        for c in b.corners() {
            assert!((c.x.abs() - 1.0).abs() < 1e-12);
            assert!((c.y.abs() - 1.0).abs() < 1e-12);
            assert!(((c.z - 10.0).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_swaps_length_and_width() {
        let b = boxed([0.0, 0.0, 0.0], 1.0, 2.0, 4.0, FRAC_PI_2);
        let corners = b.corners();
        let max_x = corners.iter().map(|c| c.x.abs()).fold(0.0, f64::max);
        let max_z = corners.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
        assert!((max_x - 1.0).abs() < 1e-12);
        assert!((max_z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn half_turn_gives_same_corner_set() {
        let a = boxed([1.0, 0.5, 12.0], 1.5, 1.6, 3.9, 0.0).corners();
        let b = boxed([1.0, 0.5, 12.0], 1.5, 1.6, 3.9, PI).corners();
        for p in a {
            assert!(b.iter().any(|q| (p - q).norm() < 1e-12));
        }
    }

    #[test]
    fn cube_projects_to_near_face_extent() {
        let b = boxed([0.0, 0.0, 10.0], 2.0, 2.0, 2.0, 0.0);
        let r = project_box3d_to_box2d(&cam(), &b).unwrap();
        let half = 700.0 / 9.0;
        assert!((r.x1 - (600.0 - half)).abs() < 1e-9);
        assert!((r.x2 - (600.0 + half)).abs() < 1e-9);
        assert!((r.y1 - (180.0 - half)).abs() < 1e-9);
        assert!((r.y2 - (180.0 + half)).abs() < 1e-9);
    }

    #[test]
    fn tiny_box_projects_around_center() {
        let b = boxed([0.0, 0.0, 10.0], 1e-6, 1e-6, 1e-6, 0.3);
        let r = project_box3d_to_box2d(&cam(), &b).unwrap();
        r.validate().unwrap();
        assert!((r.center().x - 600.0).abs() < 1e-6);
        assert!((r.center().y - 180.0).abs() < 1e-6);
    }

    #[test]
    fn corner_behind_camera_is_rejected() {
        let b = boxed([0.0, 0.0, 0.9], 2.0, 2.0, 2.0, 0.0);
        assert!(matches!(
            project_box3d_to_box2d(&cam(), &b),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn footprint_examples() {
        let b = boxed([0.0, 0.0, 10.0], 1.5, 2.0, 4.0, 0.0);
        let fp = b.bev_footprint();
        for p in fp {
            assert!((p.x.abs() - 2.0).abs() < 1e-12);
            assert!(((p.y - 10.0).abs() - 1.0).abs() < 1e-12);
        }
        assert!((signed_area(&fp) - 8.0).abs() < 1e-12);
        let fp = boxed([0.0, 0.0, 10.0], 1.5, 2.0, 4.0, FRAC_PI_2).bev_footprint();
        for p in fp {
            assert!((p.x.abs() - 1.0).abs() < 1e-12);
            assert!(((p.y - 10.0).abs() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_is_opt_in() {
        let b = boxed([-8.0, 0.0, 10.0], 1.5, 1.6, 3.9, 0.0);
        let raw = project_box3d_to_box2d(&cam(), &b).unwrap();
        assert!(raw.x1 < 0.0);
        let clipped = project_box3d_to_box2d_clipped(&cam(), &b).unwrap().unwrap();
        assert_eq!(clipped.x1, 0.0);
        assert_eq!(clipped.x2, raw.x2);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }
}
