//! Rotation representations, pinhole projection, Fourier positional encoding
//! and bilinear sampling of feature grids.
//!
//! Pixel convention: the center of pixel (column `i`, row `j`) sits at the
//! integer coordinate `(i, j)`, origin at the top-left corner. Feature grids
//! follow the same convention in their own cell units.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::{Error, Result};

const DEGENERACY_TOL: f64 = 1e-8;

/// Continuous 6D rotation: the first two columns of a rotation matrix before
/// Gram–Schmidt orthonormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Rotation6D {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        Self { a, b }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::x(), Vector3::y())
    }

    /// Layout `[a.x, a.y, a.z, b.x, b.y, b.z]`.
    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 6, "6D rotation needs 6 values");
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z]
    }

    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        rot6d_to_matrix(self)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Gram–Schmidt construction: `c1 = a/|a|`, `c2 = normalize(b - (c1·b) c1)`,
/// `c3 = c1 × c2`.
pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<Matrix3<f64>> {
    if !r.is_finite() {
        return Err(Error::DegenerateRotation("non-finite entries".into()));
    }
    let na = r.a.norm();
    let nb = r.b.norm();
    if na < DEGENERACY_TOL || nb < DEGENERACY_TOL {
        return Err(Error::DegenerateRotation(format!(
            "column norms |a| = {na:e}, |b| = {nb:e}"
        )));
    }
    let c1 = r.a / na;
    if c1.cross(&(r.b / nb)).norm() < DEGENERACY_TOL {
        return Err(Error::DegenerateRotation("a and b are parallel".into()));
    }
    let b_perp = r.b - c1 * c1.dot(&r.b);
    let c2 = b_perp / b_perp.norm();
    let c3 = c1.cross(&c2);
    Ok(Matrix3::from_columns(&[c1, c2, c3]))
}

/// Vector–Jacobian product of [`rot6d_to_matrix`]: maps the gradient with
/// respect to the matrix onto the six input values.
pub fn rot6d_backward(r: &Rotation6D, grad: &Matrix3<f64>) -> Result<[f64; 6]> {
    let m = rot6d_to_matrix(r)?;
    let (c1, c2) = (m.column(0).into_owned(), m.column(1).into_owned());
    let (g1, g2, g3) = (
        grad.column(0).into_owned(),
        grad.column(1).into_owned(),
        grad.column(2).into_owned(),
    );

    // c3 = c1 × c2
    let mut gc1 = g1 + c2.cross(&g3);
    let gc2 = g2 + g3.cross(&c1);

    // c2 = b_perp / |b_perp|
    let b_perp = r.b - c1 * c1.dot(&r.b);
    let nbp = b_perp.norm();
    let gbp = (gc2 - c2 * c2.dot(&gc2)) / nbp;

    // b_perp = b - (c1·b) c1
    let gb = gbp - c1 * c1.dot(&gbp);
    gc1 -= gbp * c1.dot(&r.b) + r.b * c1.dot(&gbp);

    // c1 = a / |a|
    let na = r.a.norm();
    let ga = (gc1 - c1 * c1.dot(&gc1)) / na;

    Ok([ga.x, ga.y, ga.z, gb.x, gb.y, gb.z])
}

/// Reads off the first two columns of a rotation matrix.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Result<Rotation6D> {
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if !err.is_finite() || err > 1e-6 {
        return Err(Error::InvalidRotation(format!(
            "|MᵀM - I|∞ = {err:e} exceeds 1e-6"
        )));
    }
    if m.determinant() <= 0.0 {
        return Err(Error::InvalidRotation("determinant is not +1".into()));
    }
    Ok(Rotation6D::new(
        m.column(0).into_owned(),
        m.column(1).into_owned(),
    ))
}

/// Rotation about a unit axis by `angle` radians (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Rigid object pose in the camera frame: 6D rotation and translation
/// (meters, `translation.z > 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectPose {
    pub rotation: Rotation6D,
    pub translation: Vector3<f64>,
}

impl ObjectPose {
    /// Layout `[rotation (6) | translation (3)]`.
    pub fn to_array(&self) -> [f64; 9] {
        let r = self.rotation.to_array();
        [r[0], r[1], r[2], r[3], r[4], r[5], self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 9, "object pose needs 9 values");
        Self {
            rotation: Rotation6D::from_slice(&v[..6]),
            translation: Vector3::new(v[6], v[7], v[8]),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.rotation.to_matrix()? * p + self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidCamera(format!(
                "fx = {fx}, fy = {fy}, cx = {cx}, cy = {cy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }
}

/// Pinhole projection `u = fx·x/z + cx`, `v = fy·y/z + cy`.
pub fn project_point(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(Vector2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Jacobian of [`project_point`] with respect to `p` (2×3, row-major).
pub fn project_jacobian(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<[[f64; 3]; 2]> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    let iz = 1.0 / p.z;
    Ok([
        [k.fx * iz, 0.0, -k.fx * p.x * iz * iz],
        [0.0, k.fy * iz, -k.fy * p.y * iz * iz],
    ])
}

pub const DEFAULT_FOURIER_BANDS: usize = 6;

/// NeRF-style encoding. Layout: for each axis `x, y, z`, for each octave
/// `k in 0..bands`, the pair `sin(2^k π x), cos(2^k π x)`. Length `6·bands`.
pub fn fourier_encode(p: &Vector3<f64>, bands: usize) -> Vec<f64> {
    assert!(bands >= 1, "fourier encoding needs at least one band");
    let mut out = Vec::with_capacity(6 * bands);
    for axis in 0..3 {
        let x = p[axis];
        let mut freq = std::f64::consts::PI;
        for _ in 0..bands {
            let (s, c) = (freq * x).sin_cos();
            out.push(s);
            out.push(c);
            freq *= 2.0;
        }
    }
    out
}

/// Maps a camera-frame point into the scene-centered unit cube.
pub fn normalize_query(p: &Vector3<f64>, center: &Vector3<f64>, half_extent: f64) -> Vector3<f64> {
    (p - center) / half_extent
}

/// Converts an image pixel coordinate into the cell coordinate of a grid that
/// covers the same image at a coarser resolution.
pub fn pixel_to_grid(uv: &Vector2<f64>, image_size: (usize, usize), grid_size: (usize, usize)) -> Vector2<f64> {
    let (iw, ih) = image_size;
    let (gw, gh) = grid_size;
    Vector2::new(
        (uv.x + 0.5) * gw as f64 / iw as f64 - 0.5,
        (uv.y + 0.5) * gh as f64 / ih as f64 - 0.5,
    )
}

/// Channel-last activation grid: cell `(row, col)` holds `channels` values at
/// offset `(row * width + col) * channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidGrid(format!(
                "empty grid {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }
}

/// The four cells (flat index `row * width + col`) and weights used to
/// bilinearly interpolate at grid coordinate `uv = (x, y)`. Coordinates
/// outside the grid are clamped to the border. Weights sum to one.
pub fn bilinear_weights(height: usize, width: usize, uv: &Vector2<f64>) -> [(usize, f64); 4] {
    let x = clamp_coord(uv.x, width);
    let y = clamp_coord(uv.y, height);
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ]
}

fn clamp_coord(v: f64, extent: usize) -> f64 {
    if v.is_nan() {
        return 0.0;
    }
    v.clamp(0.0, (extent - 1) as f64)
}

pub fn bilinear_sample(grid: &FeatureMap, uv: &Vector2<f64>) -> Result<Vec<f64>> {
    if grid.height == 0 || grid.width == 0 || grid.channels == 0 || grid.data.is_empty() {
        return Err(Error::InvalidGrid("empty grid".into()));
    }
    let mut out = vec![0.0; grid.channels];
    for (cell, w) in bilinear_weights(grid.height, grid.width, uv) {
        let src = &grid.data[cell * grid.channels..(cell + 1) * grid.channels];
        for (o, s) in out.iter_mut().zip(src) {
            *o += w * s;
        }
    }
    Ok(out)
}
