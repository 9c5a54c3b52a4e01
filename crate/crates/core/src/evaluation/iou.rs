//! Rotated-box overlap in bird's-eye view and in 3D.

use nalgebra::Point2;

use crate::geometry::{signed_area, Box3D};

const DEDUP_TOL: f64 = 1e-9;

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland–Hodgman clip of a convex `subject` against a convex,
/// counterclockwise `clip` polygon.
pub fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut output: Vec<Point2<f64>> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        let mut prev_d = cross(&a, &b, &prev);
        for &cur in &input {
            let cur_d = cross(&a, &b, &cur);
            if cur_d >= 0.0 {
                if prev_d < 0.0 {
                    output.push(prev + (cur - prev) * (prev_d / (prev_d - cur_d)));
                }
                output.push(cur);
            } else if prev_d >= 0.0 {
                output.push(prev + (cur - prev) * (prev_d / (prev_d - cur_d)));
            }
            prev = cur;
            prev_d = cur_d;
        }
        output.dedup_by(|p, q| (*p - *q).norm() < DEDUP_TOL);
        if output.len() > 1 && (output[0] - output[output.len() - 1]).norm() < DEDUP_TOL {
            output.pop();
        }
    }
    output
}

/// Area of the footprint intersection.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let poly = clip_convex(&a.bev_footprint(), &b.bev_footprint());
    if poly.len() < 3 {
        return 0.0;
    }
    signed_area(&poly).max(0.0)
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    let area_a = a.dims.length * a.dims.width;
    let area_b = b.dims.length * b.dims.width;
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Upright-box IoU: footprint intersection times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (top_a, bottom_a) = a.y_extent();
    let (top_b, bottom_b) = b.y_extent();
    let overlap_h = bottom_a.min(bottom_b) - top_a.max(top_b);
    if overlap_h <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * overlap_h;
    let union = a.dims.volume() + b.dims.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dimensions;
    use nalgebra::Point3;
    use std::f64::consts::FRAC_PI_4;

    fn unit(yaw: f64, center: [f64; 3]) -> Box3D {
        Box3D::new(
            Point3::new(center[0], center[1], center[2]),
            Dimensions::new(1.0, 1.0, 1.0).unwrap(),
            yaw,
        )
        .unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = unit(0.3, [1.0, 0.0, 10.0]);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let far = unit(0.3, [101.0, 0.0, 10.0]);
        assert_eq!(iou_bev(&a, &far), 0.0);
        assert_eq!(iou_3d(&a, &far), 0.0);
    }

    #[test]
    fn rotated_square() {
        let a = unit(0.0, [0.0, 0.0, 0.0]);
        let b = unit(FRAC_PI_4, [0.0, 0.0, 0.0]);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert!((iou_bev(&a, &b) - expected).abs() < 1e-12);
        assert!((expected - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn vertical_half_offset() {
        let a = unit(0.0, [0.0, 0.0, 10.0]);
        let b = unit(0.0, [0.0, 0.5, 10.0]);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_bev(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn touching_edges_give_zero() {
        let a = unit(0.0, [0.0, 0.0, 10.0]);
        let b = unit(0.0, [1.0, 0.0, 10.0]);
        assert!(iou_bev(&a, &b).abs() < 1e-12);
    }

    #[test]
    fn containment() {
        let big = Box3D::new(
            Point3::new(0.0, 0.0, 10.0),
            Dimensions::new(2.0, 2.0, 2.0).unwrap(),
            0.7,
        )
        .unwrap();
        let small = unit(0.7, [0.0, 0.0, 10.0]);
        assert!((iou_bev(&big, &small) - 0.25).abs() < 1e-12);
        assert!((iou_3d(&big, &small) - 0.125).abs() < 1e-12);
    }
}
