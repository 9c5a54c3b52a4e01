//! Brute-force reference implementations. Nothing here calls into the
//! geometry or evaluation code it is used to check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::evaluation::ApMode;
use crate::geometry::Box3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McMode {
    /// Overlap of the ground-plane footprints.
    Bev,
    /// Overlap of the full boxes.
    Volume,
}

const CHUNK: usize = 1 << 16;

fn inside(b: &Box3D, x: f64, y: f64, z: f64, mode: McMode) -> bool {
    let dx = x - b.center.x;
    let dz = z - b.center.z;
    // Undo the yaw: local length axis is (cos, -sin) in (X, Z).
    let (s, c) = b.yaw.sin_cos();
    let along = c * dx - s * dz;
    let across = s * dx + c * dz;
    let flat = along.abs() <= 0.5 * b.dims.length && across.abs() <= 0.5 * b.dims.width;
    match mode {
        McMode::Bev => flat,
        McMode::Volume => flat && (y - b.center.y).abs() <= 0.5 * b.dims.height,
    }
}

fn bounds(b: &Box3D) -> [(f64, f64); 3] {
    // Circumscribed circle is loose but sufficient for sampling.
    let r = 0.5 * b.dims.length.hypot(b.dims.width);
    [
        (b.center.x - r, b.center.x + r),
        (
            b.center.y - 0.5 * b.dims.height,
            b.center.y + 0.5 * b.dims.height,
        ),
        (b.center.z - r, b.center.z + r),
    ]
}

/// Monte-Carlo IoU of two boxes from `n_samples` uniform points in a region
/// enclosing both. Returns the estimate and its binomial standard error.
pub fn mc_iou(a: &Box3D, b: &Box3D, n_samples: usize, seed: u64, mode: McMode) -> (f64, f64) {
    let (ba, bb) = (bounds(a), bounds(b));
    let region: Vec<(f64, f64)> = (0..3)
        .map(|k| (ba[k].0.min(bb[k].0), ba[k].1.max(bb[k].1)))
        .collect();
    let chunks = n_samples.div_ceil(CHUNK);
    let (both, either) = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ci as u64);
            let n = CHUNK.min(n_samples - ci * CHUNK);
            let (mut both, mut either) = (0u64, 0u64);
            for _ in 0..n {
                let x = rng.random_range(region[0].0..=region[0].1);
                let y = rng.random_range(region[1].0..=region[1].1);
                let z = rng.random_range(region[2].0..=region[2].1);
                let ia = inside(a, x, y, z, mode);
                let ib = inside(b, x, y, z, mode);
                both += (ia && ib) as u64;
                either += (ia || ib) as u64;
            }
            (both, either)
        })
        .reduce(|| (0, 0), |p, q| (p.0 + q.0, p.1 + q.1));
    if either == 0 {
        return (0.0, 0.0);
    }
    let p = both as f64 / either as f64;
    (p, (p * (1.0 - p) / either as f64).sqrt())
}

/// Average precision by explicit enumeration: the precision/recall pair at
/// every rank cut, then for each sampled recall level the best precision
/// among cuts reaching it. Ties in score keep input order.
pub fn brute_force_ap(detections: &[(f64, bool)], gt_count: usize, mode: ApMode) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| detections[j].0.total_cmp(&detections[i].0));
    let mut cuts = Vec::with_capacity(order.len());
    for k in 1..=order.len() {
        let tp = order[..k].iter().filter(|&&i| detections[i].1).count();
        cuts.push((tp as f64 / gt_count as f64, tp as f64 / k as f64));
    }
    let levels: Vec<f64> = match mode {
        ApMode::Eleven => (0..11).map(|i| i as f64 / 10.0).collect(),
        ApMode::Forty => (1..41).map(|i| i as f64 / 40.0).collect(),
    };
    let mut sum = 0.0;
    for &r in &levels {
        let mut best = 0.0f64;
        for &(recall, precision) in &cuts {
            if recall >= r && precision > best {
                best = precision;
            }
        }
        sum += best;
    }
    Some(sum / levels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dimensions;
    use nalgebra::Point3;

    fn unit_square(yaw: f64) -> Box3D {
        Box3D::new(
            Point3::new(0.0, 0.0, 10.0),
            Dimensions::new(1.0, 1.0, 1.0).unwrap(),
            yaw,
        )
        .unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = unit_square(0.3);
        assert_eq!(mc_iou(&a, &a, 10_000, 1, McMode::Volume), (1.0, 0.0));
        let mut b = a;
        b.center.x += 5.0;
        assert_eq!(mc_iou(&a, &b, 10_000, 1, McMode::Bev).0, 0.0);
    }

    #[test]
    fn rotated_square() {
        let (est, se) = mc_iou(
            &unit_square(0.0),
            &unit_square(std::f64::consts::FRAC_PI_4),
            1_000_000,
            7,
            McMode::Bev,
        );
        assert!((est - 0.5f64.sqrt()).abs() < 5.0 * se + 1e-3, "{est} {se}");
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            brute_force_ap(&[(0.9, true), (0.8, true), (0.1, false)], 2, ApMode::Eleven),
            Some(1.0)
        );
        assert_eq!(brute_force_ap(&[], 3, ApMode::Forty), Some(0.0));
        assert_eq!(brute_force_ap(&[], 0, ApMode::Forty), None);
        let ap =
            brute_force_ap(&[(0.9, true), (0.8, false), (0.7, true)], 2, ApMode::Eleven).unwrap();
        assert!((ap - 0.848485).abs() < 1e-6);
    }
}
