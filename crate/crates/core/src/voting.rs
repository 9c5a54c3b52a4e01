//! Object-aware voting over centroid proposals.
//!
//! Each grid cell gets the vote `app + geo` where `app` is the appearance
//! attention and `geo` the density of the projection-offset Gaussian at the
//! cell. Votes are normalized jointly and used to weight the proposals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Point3, Vector3};

use crate::centroid::{grid_coordinates, ProposalGrid};
use crate::error::{Error, Result};
use crate::geometry::Box2D;
use crate::kitti_io::{frame_files, read_text, FrameId};

/// Square grid of reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    side: usize,
    values: Vec<f64>,
}

impl GridMap {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != side * side {
            return Err(Error::Shape {
                expected: side * side,
                actual: values.len(),
            });
        }
        Ok(GridMap { side, values })
    }

    pub fn filled(side: usize, value: f64) -> Self {
        GridMap {
            side,
            values: vec![value; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }
}

/// Appearance attention in `[0, 1]` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap(GridMap);

impl AttentionMap {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!(
                "attention values must lie in [0, 1], got {bad}"
            )));
        }
        GridMap::new(side, values).map(AttentionMap)
    }

    pub fn uniform(side: usize, value: f64) -> Result<Self> {
        Self::new(side, vec![value; side * side])
    }

    pub fn map(&self) -> &GridMap {
        &self.0
    }

    pub fn side(&self) -> usize {
        self.0.side
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn to_csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// One map per non-empty line, `s*s` comma-separated values, row-major.
pub fn parse_attention_csv(text: &str, side: usize) -> Result<Vec<AttentionMap>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| {
                    Error::format(idx + 1, format!("cannot read {:?} as a number", t.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let map = AttentionMap::new(side, vals).map_err(|e| match e {
            Error::Shape { expected, actual } => Error::format(
                idx + 1,
                format!("expected {expected} attention values, found {actual}"),
            ),
            other => other,
        })?;
        out.push(map);
    }
    Ok(out)
}

/// Concatenated little-endian `f32` maps of `s*s` values each.
pub fn parse_attention_f32(bytes: &[u8], side: usize) -> Result<Vec<AttentionMap>> {
    let cell = side * side * 4;
    if side == 0 || !bytes.len().is_multiple_of(cell) {
        return Err(Error::format(
            0,
            format!(
                "{} bytes is not a whole number of {side}x{side} f32 maps",
                bytes.len()
            ),
        ));
    }
    bytes
        .chunks_exact(cell)
        .map(|chunk| {
            let vals = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            AttentionMap::new(side, vals)
        })
        .collect()
}

/// Attention maps of a directory keyed by frame: `<frame>.csv` text maps
/// or `<frame>.bin` f32 maps, one map per region in region order.
pub fn read_attention_dir(dir: &Path, side: usize) -> Result<BTreeMap<FrameId, Vec<AttentionMap>>> {
    let mut out = BTreeMap::new();
    for (id, path) in frame_files(dir, "csv")? {
        let maps = parse_attention_csv(&read_text(&path)?, side).map_err(|e| e.in_file(&path))?;
        out.insert(id, maps);
    }
    for (id, path) in frame_files(dir, "bin")? {
        if out.contains_key(&id) {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let maps = parse_attention_f32(&bytes, side).map_err(|e| e.in_file(&path))?;
        out.insert(id, maps);
    }
    Ok(out)
}

/// Units in which projection offsets are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffsetUnits {
    /// Pixels divided by RoI width (u) and height (v).
    #[default]
    RoiNormalized,
    Pixels,
}

impl OffsetUnits {
    pub fn scale(&self, roi: &Box2D) -> (f64, f64) {
        match self {
            OffsetUnits::RoiNormalized => (roi.width(), roi.height()),
            OffsetUnits::Pixels => (1.0, 1.0),
        }
    }
}

/// Axis-aligned 2D Gaussian over projection offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianOffsetModel {
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

impl GaussianOffsetModel {
    pub fn new(mean: [f64; 2], var: [f64; 2]) -> Result<Self> {
        if !(var[0] > 0.0 && var[1] > 0.0 && var.iter().all(|v| v.is_finite())) {
            return Err(Error::Domain(format!(
                "offset variances must be positive, got {var:?}"
            )));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite offset mean".into()));
        }
        Ok(GaussianOffsetModel { mean, var })
    }

    pub fn pdf(&self, du: f64, dv: f64) -> f64 {
        let a = du - self.mean[0];
        let b = dv - self.mean[1];
        let norm = 2.0 * std::f64::consts::PI * (self.var[0] * self.var[1]).sqrt();
        (-0.5 * (a * a / self.var[0] + b * b / self.var[1])).exp() / norm
    }

    /// `mu_u mu_v var_u var_v` on one line.
    pub fn to_text(&self) -> String {
        format!(
            "{:.12e} {:.12e} {:.12e} {:.12e}\n",
            self.mean[0], self.mean[1], self.var[0], self.var[1]
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (lineno, line) = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| Error::format(0, "empty offset model"))?;
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::format(lineno, format!("cannot read {t:?} as a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 4 {
            return Err(Error::format(lineno, "expected mu_u mu_v var_u var_v"));
        }
        GaussianOffsetModel::new([vals[0], vals[1]], [vals[2], vals[3]])
            .map_err(|e| Error::Validation(e.to_string()))
    }
}

/// Gaussian density at each grid cell's offset from the RoI center.
pub fn geometric_confidence(
    model: &GaussianOffsetModel,
    roi: &Box2D,
    s: usize,
    units: OffsetUnits,
) -> Result<GridMap> {
    let center = roi.center();
    let (su, sv) = units.scale(roi);
    let values = grid_coordinates(roi, s)?
        .into_iter()
        .map(|p| model.pdf((p.x - center.x) / su, (p.y - center.y) / sv))
        .collect();
    GridMap::new(s, values)
}

/// Normalized vote weights; nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteWeights(GridMap);

impl VoteWeights {
    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn side(&self) -> usize {
        self.0.side
    }

    pub fn uniform(side: usize) -> Self {
        VoteWeights(GridMap::filled(side, 1.0 / (side * side) as f64))
    }
}

pub fn normalize_votes(app: &AttentionMap, geo: &GridMap) -> Result<VoteWeights> {
    if app.side() != geo.side() {
        return Err(Error::Shape {
            expected: app.values().len(),
            actual: geo.values().len(),
        });
    }
    if geo.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain(
            "geometric confidence must be finite and nonnegative".into(),
        ));
    }
    let summed: Vec<f64> = app
        .values()
        .iter()
        .zip(geo.values())
        .map(|(a, g)| a + g)
        .collect();
    let total: f64 = summed.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let values = summed.into_iter().map(|v| v / total).collect();
    Ok(VoteWeights(GridMap::new(geo.side(), values)?))
}

/// Weighted proposals `w_i * P_i` flattened as `[X0, Y0, Z0, X1, ...]`.
pub fn weighted_proposals(grid: &ProposalGrid, w: &VoteWeights) -> Result<Vec<f64>> {
    if grid.side != w.side() || grid.points3d.len() != w.values().len() {
        return Err(Error::Shape {
            expected: grid.points3d.len(),
            actual: w.values().len(),
        });
    }
    Ok(grid
        .points3d
        .iter()
        .zip(w.values())
        .flat_map(|(p, &wi)| [wi * p.x, wi * p.y, wi * p.z])
        .collect())
}

/// Affine map from flattened weighted proposals to a 3D location.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// 3 x 3s² matrix.
    pub weights: DMatrix<f64>,
    pub bias: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    side: usize,
    params: Option<LinearParams>,
}

impl LinearHead {
    /// A head with no parameters yet.
    pub fn unfitted(side: usize) -> Self {
        LinearHead { side, params: None }
    }

    /// Weights that sum each coordinate over the grid, zero bias. Equals the
    /// mean head on normalized weights.
    pub fn identity_sum(side: usize) -> Self {
        LinearHead {
            side,
            params: Some(LinearParams {
                weights: identity_sum_weights(side),
                bias: Vector3::zeros(),
            }),
        }
    }

    pub fn from_params(side: usize, params: LinearParams) -> Result<Self> {
        let n = 3 * side * side;
        if params.weights.nrows() != 3 || params.weights.ncols() != n {
            return Err(Error::Shape {
                expected: 3 * n,
                actual: params.weights.len(),
            });
        }
        Ok(LinearHead {
            side,
            params: Some(params),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn params(&self) -> Option<&LinearParams> {
        self.params.as_ref()
    }

    pub fn apply(&self, flattened: &[f64]) -> Result<Point3<f64>> {
        let params = self.params.as_ref().ok_or(Error::UninitializedHead)?;
        if flattened.len() != params.weights.ncols() {
            return Err(Error::Shape {
                expected: params.weights.ncols(),
                actual: flattened.len(),
            });
        }
        let x = DVector::from_column_slice(flattened);
        let y = &params.weights * x;
        Ok(Point3::new(
            y[0] + params.bias[0],
            y[1] + params.bias[1],
            y[2] + params.bias[2],
        ))
    }

    /// Header `linear_head <s>`, then one line per output coordinate with
    /// `3s²` weights followed by the bias.
    pub fn to_text(&self) -> Result<String> {
        let p = self.params.as_ref().ok_or(Error::UninitializedHead)?;
        let mut out = format!("linear_head {}\n", self.side);
        for r in 0..3 {
            let row: Vec<String> = (0..p.weights.ncols())
                .map(|c| format!("{:.17e}", p.weights[(r, c)]))
                .chain(std::iter::once(format!("{:.17e}", p.bias[r])))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::format(0, "empty linear head file"))?;
        let side = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["linear_head", s] => s
                .parse::<usize>()
                .ok()
                .filter(|s| *s > 0)
                .ok_or_else(|| Error::format(hline, "bad grid side"))?,
            _ => return Err(Error::format(hline, "expected `linear_head <s>` header")),
        };
        let n = 3 * side * side;
        let mut weights = DMatrix::zeros(3, n);
        let mut bias = Vector3::zeros();
        for r in 0..3 {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::format(hline, "missing coefficient rows"))?;
            let vals = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::format(lineno, format!("cannot read {t:?} as a number"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != n + 1 {
                return Err(Error::format(
                    lineno,
                    format!("expected {} values, found {}", n + 1, vals.len()),
                ));
            }
            for c in 0..n {
                weights[(r, c)] = vals[c];
            }
            bias[r] = vals[n];
        }
        LinearHead::from_params(side, LinearParams { weights, bias })
    }
}

pub(crate) fn identity_sum_weights(side: usize) -> DMatrix<f64> {
    let n = side * side;
    let mut w = DMatrix::zeros(3, 3 * n);
    for i in 0..n {
        for c in 0..3 {
            w[(c, 3 * i + c)] = 1.0;
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub enum VotingHead {
    /// Weighted average of the proposals.
    Mean,
    Linear(LinearHead),
}

pub fn vote_location(
    grid: &ProposalGrid,
    w: &VoteWeights,
    head: &VotingHead,
) -> Result<Point3<f64>> {
    let flat = weighted_proposals(grid, w)?;
    match head {
        VotingHead::Mean => {
            let mut acc = [0.0; 3];
            for chunk in flat.chunks_exact(3) {
                acc[0] += chunk[0];
                acc[1] += chunk[1];
                acc[2] += chunk[2];
            }
            Ok(Point3::new(acc[0], acc[1], acc[2]))
        }
        VotingHead::Linear(h) => {
            if h.side != grid.side {
                return Err(Error::Shape {
                    expected: 3 * h.side * h.side,
                    actual: flat.len(),
                });
            }
            h.apply(&flat)
        }
    }
}

/// Late fusion: element-wise sum of the geometric location and the
/// appearance-branch residual.
pub fn fuse_late(geometric: &Point3<f64>, appearance: &Vector3<f64>) -> Point3<f64> {
    geometric + appearance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centroid::centroid_proposals;
    use crate::geometry::CameraIntrinsics;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(700.0, 600.0, 180.0, 1242.0, 375.0).unwrap()
    }

    fn unit_model() -> GaussianOffsetModel {
        GaussianOffsetModel::new([0.0, 0.0], [1.0, 1.0]).unwrap()
    }

    #[test]
    fn gaussian_peak_at_roi_center() {
        let roi = Box2D::new(0.0, 0.0, 6.0, 6.0).unwrap();
        let m = geometric_confidence(&unit_model(), &roi, 1, OffsetUnits::Pixels).unwrap();
        assert!((m.values()[0] - 0.159155).abs() < 1e-6);
        assert!((m.values()[0] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_roi_gives_symmetric_map() {
        let roi = Box2D::new(10.0, 20.0, 50.0, 90.0).unwrap();
        for units in [OffsetUnits::Pixels, OffsetUnits::RoiNormalized] {
            let model = GaussianOffsetModel::new([0.0, 0.0], [0.04, 0.09]).unwrap();
            let m = geometric_confidence(&model, &roi, 7, units).unwrap();
            let v = m.values();
            for i in 0..v.len() {
                assert!((v[i] - v[v.len() - 1 - i]).abs() < 1e-12 * v[i].max(1e-300));
            }
        }
    }

    #[test]
    fn broad_gaussian_is_nearly_flat() {
        let roi = Box2D::new(0.0, 0.0, 100.0, 50.0).unwrap();
        let model = GaussianOffsetModel::new([0.0, 0.0], [1e10, 1e10]).unwrap();
        let m = geometric_confidence(&model, &roi, 7, OffsetUnits::Pixels).unwrap();
        let max = m.values().iter().cloned().fold(f64::MIN, f64::max);
        let min = m.values().iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.0 + 1e-5);
    }

    #[test]
    fn uniform_votes() {
        let app = AttentionMap::uniform(7, 0.5).unwrap();
        let geo = GridMap::filled(7, 0.3);
        let w = normalize_votes(&app, &geo).unwrap();
        for v in w.values() {
            assert!((v - 1.0 / 49.0).abs() < 1e-15);
        }
    }

    #[test]
    fn one_hot_votes() {
        let mut vals = vec![0.0; 9];
        vals[4] = 1.0;
        let app = AttentionMap::new(3, vals).unwrap();
        let w = normalize_votes(&app, &GridMap::filled(3, 0.0)).unwrap();
        assert_eq!(w.values()[4], 1.0);
        assert_eq!(w.values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn zero_mass_and_shape_errors() {
        let app = AttentionMap::uniform(3, 0.0).unwrap();
        assert!(matches!(
            normalize_votes(&app, &GridMap::filled(3, 0.0)),
            Err(Error::ZeroMass)
        ));
        assert!(matches!(
            normalize_votes(&app, &GridMap::filled(4, 1.0)),
            Err(Error::Shape { .. })
        ));
        assert!(AttentionMap::new(2, vec![0.0, 0.5, 1.5, 0.0]).is_err());
    }

    #[test]
    fn uniform_weights_vote_roi_center() {
        let cam = cam();
        let roi = Box2D::new(500.0, 150.0, 560.0, 200.0).unwrap();
        let grid = centroid_proposals(&cam, &roi, 1.5, 7).unwrap();
        let p = vote_location(&grid, &VoteWeights::uniform(7), &VotingHead::Mean).unwrap();
        let c = roi.center();
        let expected = cam.backproject(c.x, c.y, grid.depth).unwrap();
        assert!((p - expected).norm() < 1e-9);
    }

    #[test]
    fn one_hot_weight_selects_proposal() {
        let cam = cam();
        let roi = Box2D::new(500.0, 150.0, 560.0, 200.0).unwrap();
        let grid = centroid_proposals(&cam, &roi, 1.5, 3).unwrap();
        let mut vals = vec![0.0; 9];
        vals[7] = 1.0;
        let w = normalize_votes(
            &AttentionMap::new(3, vals).unwrap(),
            &GridMap::filled(3, 0.0),
        )
        .unwrap();
        let p = vote_location(&grid, &w, &VotingHead::Mean).unwrap();
        assert!((p - grid.points3d[7]).norm() < 1e-12);
    }

    #[test]
    fn identity_sum_head_matches_mean() {
        let cam = cam();
        let roi = Box2D::new(300.0, 120.0, 420.0, 210.0).unwrap();
        let grid = centroid_proposals(&cam, &roi, 1.5, 7).unwrap();
        let app = AttentionMap::new(7, (0..49).map(|i| (i % 5) as f64 / 4.0).collect()).unwrap();
        let geo = geometric_confidence(&unit_model(), &roi, 7, OffsetUnits::RoiNormalized).unwrap();
        let w = normalize_votes(&app, &geo).unwrap();
        let mean = vote_location(&grid, &w, &VotingHead::Mean).unwrap();
        let lin =
            vote_location(&grid, &w, &VotingHead::Linear(LinearHead::identity_sum(7))).unwrap();
        assert!((mean - lin).norm() < 1e-12);
    }

    #[test]
    fn unfitted_head_is_an_error() {
        let cam = cam();
        let roi = Box2D::new(300.0, 120.0, 420.0, 210.0).unwrap();
        let grid = centroid_proposals(&cam, &roi, 1.5, 2).unwrap();
        assert!(matches!(
            vote_location(
                &grid,
                &VoteWeights::uniform(2),
                &VotingHead::Linear(LinearHead::unfitted(2))
            ),
            Err(Error::UninitializedHead)
        ));
    }

    #[test]
    fn late_fusion_examples() {
        let g = Point3::new(1.0, 0.0, 14.0);
        assert_eq!(fuse_late(&g, &Vector3::zeros()), g);
        let f = fuse_late(&g, &Vector3::new(-0.2, 0.0, 0.9));
        assert!((f - Point3::new(0.8, 0.0, 14.9)).norm() < 1e-12);
        let a = Point3::new(-0.2, 0.0, 0.9);
        assert_eq!(fuse_late(&g, &a.coords), fuse_late(&a, &g.coords));
    }

    #[test]
    fn model_and_head_text_round_trip() {
        let m = GaussianOffsetModel::new([0.01, -0.03], [0.004, 0.002]).unwrap();
        assert_eq!(GaussianOffsetModel::from_text(&m.to_text()).unwrap(), m);
        assert!(GaussianOffsetModel::from_text("0 0 -1 1").is_err());
        assert!(GaussianOffsetModel::from_text("0 0 1").is_err());

        let mut h = LinearHead::identity_sum(2);
        if let Some(p) = h.params.as_mut() {
            p.weights[(1, 5)] = 0.123456789;
            p.bias = Vector3::new(0.1, -0.2, 0.3);
        }
        let back = LinearHead::from_text(&h.to_text().unwrap()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn attention_readers() {
        let maps = parse_attention_csv("0,0.5,1,0.25\n\n1,1,1,1\n", 2).unwrap();
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[0].values(), &[0.0, 0.5, 1.0, 0.25]);
        assert!(parse_attention_csv("0,0.5,1\n", 2).is_err());
        let bytes: Vec<u8> = [0.0f32, 0.5, 1.0, 0.25]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let maps = parse_attention_f32(&bytes, 2).unwrap();
        assert_eq!(maps[0].values(), &[0.0, 0.5, 1.0, 0.25]);
        assert!(parse_attention_f32(&bytes[..7], 2).is_err());
    }
}
