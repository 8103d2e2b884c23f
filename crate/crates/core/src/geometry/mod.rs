//! LiDAR-to-camera geometry: pinhole projection with a z-buffer, sparse
//! depth densification, and registration of depth onto the RGB frame.
//!
//! Camera frame convention: x right, y down, z forward (meters). Pixel
//! `(col, row)` covers the continuous square `[col, col+1) × [row, row+1)`.

mod image;
pub mod io;

pub use image::Image;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points with camera-frame depth at or below this are discarded.
pub const NEAR_PLANE: f64 = 1e-6;
/// Tolerance for rotation orthonormality and determinant checks.
pub const ROTATION_TOL: f64 = 1e-9;
/// Regularizer in the inverse-distance weight `1 / (d + IDW_EPS)`.
pub const IDW_EPS: f64 = 1e-6;
pub const DEFAULT_DENSIFY_RADIUS: usize = 6;
pub const DEFAULT_DENSIFY_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// The 32×32 camera used by the synthetic dataset (about 67° field of view).
    pub fn default_camera() -> Self {
        Self {
            fx: 24.0,
            fy: 24.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        }
    }

    /// Continuous image coordinates of a camera-frame point.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }

    /// Unnormalized camera-frame ray (z = 1) through continuous coordinates.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    fn bounds_ok(&self) -> bool {
        self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
    }

    fn focal_ok(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()
    }
}

/// Rigid transform from the sensor frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self::identity()
    }
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation about the camera y axis by `yaw` radians, then translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            translation,
        }
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Inverse transform, camera frame to sensor frame (assumes R orthonormal).
    pub fn to_sensor(&self, c: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let d = [
            c[0] - self.translation[0],
            c[1] - self.translation[1],
            c[2] - self.translation[2],
        ];
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Rotates a sensor-frame direction into the camera frame.
    pub fn rotate(&self, d: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if let Some((i, _)) = self
            .points
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Input(format!("point {i} has non-finite coordinates")));
        }
        if let Some(int) = &self.intensity {
            if int.len() != self.points.len() {
                return Err(Error::Input(format!(
                    "{} intensities for {} points",
                    int.len(),
                    self.points.len()
                )));
            }
            if int.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Input("intensity outside [0, 1]".into()));
            }
        }
        Ok(())
    }
}

fn valid(v: f64) -> bool {
    v.is_finite()
}

/// Per-pixel depth with `NaN` marking missing cells.
#[derive(Debug, Clone)]
pub struct SparseDepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid_count: usize,
}

impl SparseDepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::NAN; width * height],
            valid_count: 0,
        }
    }

    pub fn from_depth(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        check_grid(width, height, &depth)?;
        let valid_count = depth.iter().filter(|v| valid(**v)).count();
        Ok(Self {
            width,
            height,
            depth,
            valid_count,
        })
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.depth[row * self.width + col];
        valid(v).then_some(v)
    }
}

/// Densified depth; cells without a valid neighbor stay `NaN`.
#[derive(Debug, Clone)]
pub struct DenseDepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub fill_ratio: f64,
}

impl DenseDepthMap {
    pub fn from_depth(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        check_grid(width, height, &depth)?;
        let fill_ratio = depth.iter().filter(|v| valid(**v)).count() as f64 / depth.len() as f64;
        Ok(Self {
            width,
            height,
            depth,
            fill_ratio,
        })
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.depth[row * self.width + col];
        valid(v).then_some(v)
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|v| valid(**v)).count()
    }
}

/// Missing cells compare equal to each other.
fn same_depths(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x == y || (!valid(*x) && !valid(*y)))
}

impl PartialEq for SparseDepthMap {
    fn eq(&self, other: &Self) -> bool {
        (self.width, self.height, self.valid_count) == (other.width, other.height, other.valid_count)
            && same_depths(&self.depth, &other.depth)
    }
}

impl PartialEq for DenseDepthMap {
    fn eq(&self, other: &Self) -> bool {
        (self.width, self.height) == (other.width, other.height)
            && self.fill_ratio == other.fill_ratio
            && same_depths(&self.depth, &other.depth)
    }
}

fn check_grid(width: usize, height: usize, depth: &[f64]) -> Result<()> {
    if width == 0 || height == 0 || depth.len() != width * height {
        return Err(Error::Input(format!(
            "depth grid {width}x{height} with {} values",
            depth.len()
        )));
    }
    if depth.iter().any(|&v| valid(v) && v <= 0.0) {
        return Err(Error::Input("depth values must be positive".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredFrame {
    pub width: usize,
    pub height: usize,
    pub rgb: Image,
    pub depth: DenseDepthMap,
    pub alignment_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    /// Max absolute entry of `RᵀR − I`.
    pub orthonormality_residual: f64,
    pub determinant_deviation: f64,
    pub focal_ok: bool,
    pub principal_point_ok: bool,
    pub pass: bool,
}

pub fn validate_calibration(intr: &Intrinsics, extr: &Extrinsics) -> CalibrationDiagnostics {
    let r = &extr.rotation;
    let mut residual: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            residual = residual.max((dot - target).abs());
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    let det_dev = (det - 1.0).abs();
    let focal_ok = intr.focal_ok();
    let principal_point_ok = intr.bounds_ok();
    let finite_t = extr.translation.iter().all(|v| v.is_finite());
    // NaN residuals compare false, so the pass test fails closed.
    let pass = residual <= ROTATION_TOL
        && det_dev <= ROTATION_TOL
        && focal_ok
        && principal_point_ok
        && finite_t;
    CalibrationDiagnostics {
        orthonormality_residual: residual,
        determinant_deviation: det_dev,
        focal_ok,
        principal_point_ok,
        pass,
    }
}

/// Pinhole projection of a sensor-frame cloud into a z-buffered depth map.
pub fn project_point_cloud(
    cloud: &PointCloud,
    intr: &Intrinsics,
    extr: &Extrinsics,
) -> Result<SparseDepthMap> {
    cloud.check()?;
    let diag = validate_calibration(intr, extr);
    if !diag.pass {
        return Err(Error::Input(format!("invalid calibration: {diag:?}")));
    }
    let mut map = SparseDepthMap::empty(intr.width, intr.height);
    for &p in &cloud.points {
        let c = extr.to_camera(p);
        if c[2] <= NEAR_PLANE {
            continue;
        }
        let (u, v) = intr.project(c);
        let (col, row) = (u.floor(), v.floor());
        if col < 0.0 || row < 0.0 || col >= intr.width as f64 || row >= intr.height as f64 {
            continue;
        }
        let idx = row as usize * intr.width + col as usize;
        let cell = &mut map.depth[idx];
        if !valid(*cell) {
            *cell = c[2];
            map.valid_count += 1;
        } else if c[2] < *cell {
            *cell = c[2];
        }
    }
    Ok(map)
}

/// k-nearest inverse-distance-weighted hole filling within `radius_px`.
///
/// Ties in distance are broken by (row, col) order, so the result does not
/// depend on iteration order.
pub fn densify_depth(sparse: &SparseDepthMap, radius_px: usize, k: usize) -> Result<DenseDepthMap> {
    if radius_px < 1 || k < 1 {
        return Err(Error::Input(format!(
            "densify needs radius >= 1 and k >= 1, got radius {radius_px}, k {k}"
        )));
    }
    let (w, h) = (sparse.width, sparse.height);
    let r = radius_px as isize;
    let r2 = (radius_px * radius_px) as isize;
    let mut out = sparse.depth.clone();
    let mut candidates: Vec<(isize, usize, usize, f64)> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            if sparse.get(col, row).is_some() {
                continue;
            }
            candidates.clear();
            for dy in -r..=r {
                let ny = row as isize + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let nx = col as isize + dx;
                    let d2 = dx * dx + dy * dy;
                    if nx < 0 || nx >= w as isize || d2 > r2 {
                        continue;
                    }
                    if let Some(v) = sparse.get(nx as usize, ny as usize) {
                        candidates.push((d2, ny as usize, nx as usize, v));
                    }
                }
            }
            if candidates.is_empty() {
                continue;
            }
            candidates.sort_by_key(|&(d2, ny, nx, _)| (d2, ny, nx));
            let mut num = 0.0;
            let mut den = 0.0;
            for &(d2, _, _, v) in candidates.iter().take(k) {
                let wgt = 1.0 / ((d2 as f64).sqrt() + IDW_EPS);
                num += wgt * v;
                den += wgt;
            }
            out[row * w + col] = num / den;
        }
    }
    DenseDepthMap::from_depth(w, h, out)
}

/// Moves depth content by `(dx, dy)` pixels: `out(c, r) = in(c − dx, r − dy)`.
/// Cells uncovered by the move become missing.
pub fn translate_depth(dense: &DenseDepthMap, dx: i32, dy: i32) -> DenseDepthMap {
    let (w, h) = (dense.width as i64, dense.height as i64);
    let mut out = vec![f64::NAN; dense.depth.len()];
    for row in 0..h {
        for col in 0..w {
            let (sc, sr) = (col - i64::from(dx), row - i64::from(dy));
            if sc >= 0 && sc < w && sr >= 0 && sr < h {
                out[(row * w + col) as usize] = dense.depth[(sr * w + sc) as usize];
            }
        }
    }
    DenseDepthMap::from_depth(dense.width, dense.height, out).expect("same grid")
}

/// Undoes a declared misregistration of `shift` pixels and pairs the depth
/// with the RGB frame.
pub fn register_depth_to_rgb(
    dense: &DenseDepthMap,
    rgb: &Image,
    shift: (i32, i32),
) -> Result<RegisteredFrame> {
    if dense.width != rgb.width || dense.height != rgb.height {
        return Err(Error::Registration(format!(
            "rgb is {}x{} but depth is {}x{}",
            rgb.width, rgb.height, dense.width, dense.height
        )));
    }
    let depth = if shift == (0, 0) {
        dense.clone()
    } else {
        translate_depth(dense, -shift.0, -shift.1)
    };
    Ok(RegisteredFrame {
        width: rgb.width,
        height: rgb.height,
        rgb: rgb.clone(),
        depth,
        alignment_ok: true,
    })
}
