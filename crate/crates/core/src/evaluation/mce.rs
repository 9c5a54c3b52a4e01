use std::fmt::Write as _;

use crate::kitti_io::{DetectionRecord, GroundTruthObject, ObjectClass};

pub const DEFAULT_BIN_WIDTH: f64 = 3.0;
pub const DEFAULT_MAX_DISTANCE: f64 = 81.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MceBin {
    pub low: f64,
    pub high: f64,
    /// `None` for empty bins.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

/// Mean centroid error binned by ground-truth distance from the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct MceCurve {
    pub bins: Vec<MceBin>,
    /// Frames with ground truth but no detections; they contribute nothing.
    pub skipped_frames: usize,
}

impl MceCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,mean,std,count\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.low,
                b.high,
                opt(b.mean),
                opt(b.std),
                b.count
            );
        }
        out
    }

    /// Whitespace-separated `center mean mean-std mean+std` rows for
    /// plotting, skipping empty bins.
    pub fn to_plot_data(&self) -> String {
        let mut out = String::from("# distance mean lower upper\n");
        for b in &self.bins {
            if let (Some(m), Some(s)) = (b.mean, b.std) {
                let _ = writeln!(
                    out,
                    "{} {m:.6} {:.6} {:.6}",
                    0.5 * (b.low + b.high),
                    m - s,
                    m + s
                );
            }
        }
        out
    }
}

/// For each ground-truth centroid within `max_distance` of the camera,
/// the distance to the nearest detected centroid in the same frame,
/// aggregated per `bin_width` distance interval. `class` filters both
/// sides when given.
pub fn mce_curve<'a, I>(
    frames: I,
    class: Option<&ObjectClass>,
    bin_width: f64,
    max_distance: f64,
) -> MceCurve
where
    I: IntoIterator<Item = (&'a [DetectionRecord], &'a [GroundTruthObject])>,
{
    assert!(
        bin_width > 0.0 && max_distance > 0.0,
        "bin width and range must be positive"
    );
    let n_bins = (max_distance / bin_width).ceil() as usize;
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); n_bins];
    let mut skipped = 0;
    for (dets, gts) in frames {
        let dets: Vec<&DetectionRecord> = dets
            .iter()
            .filter(|d| class.is_none_or(|c| &d.class == c))
            .collect();
        let gts: Vec<&GroundTruthObject> = gts
            .iter()
            .filter(|g| !g.is_dont_care() && class.is_none_or(|c| &g.class == c))
            .collect();
        if gts.is_empty() {
            continue;
        }
        if dets.is_empty() {
            skipped += 1;
            continue;
        }
        for g in gts {
            let c = g.box3d.center;
            let dist = c.coords.norm();
            if dist >= max_distance {
                continue;
            }
            let err = dets
                .iter()
                .map(|d| (d.box3d.center - c).norm())
                .fold(f64::INFINITY, f64::min);
            let idx = ((dist / bin_width) as usize).min(n_bins - 1);
            let s = &mut sums[idx];
            s.0 += 1;
            s.1 += err;
            s.2 += err * err;
        }
    }
    if skipped > 0 {
        log::info!("mce: {skipped} frames had ground truth but no detections");
    }
    let bins = sums
        .into_iter()
        .enumerate()
        .map(|(i, (n, s, s2))| {
            let (mean, std) = if n == 0 {
                (None, None)
            } else {
                let m = s / n as f64;
                (Some(m), Some((s2 / n as f64 - m * m).max(0.0).sqrt()))
            };
            MceBin {
                low: i as f64 * bin_width,
                high: (i + 1) as f64 * bin_width,
                mean,
                std,
                count: n,
            }
        })
        .collect();
    MceCurve {
        bins,
        skipped_frames: skipped,
    }
}
