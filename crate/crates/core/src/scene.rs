//! Procedural hand–object scenes, a z-buffer rasterizer, the binary scene
//! record format and the on-disk dataset layout.
//!
//! # Record format (version 1)
//!
//! All numbers little-endian, fields in this order:
//!
//! | field | encoding |
//! |---|---|
//! | magic | 8 bytes `MHOISCN\0` |
//! | version | u32 (= 1) |
//! | seed | u64 |
//! | width, height | u32, u32 |
//! | image | `width·height·3` bytes RGB, row-major |
//! | seg | `width·height` bytes (0 bg, 1 hand, 2 object) |
//! | keypoints | 21 × (f64 u, f64 v) |
//! | hand params | 109 × f64 (16×6 rotations, 10 shape, 3 translation) |
//! | object shape | u8 kind (0 box, 1 cylinder, 2 sphere) + 3 × f64 dims |
//! | object pose | 9 × f64 (6D rotation, translation) |
//! | camera | 4 × f64 (fx, fy, cx, cy) |
//! | query box | 3 × f64 center, 3 × f64 half extents |
//! | sdf samples | u32 count, then per sample 5 × f64 (x, y, z, d_hand, d_obj) + u8 kind |
//!
//! # Dataset layout
//!
//! One directory per split holding `meta.json` and, per sample,
//! `scene_NNNNN.bin`, a PPM dump `scene_NNNNN.ppm` and the posed meshes as
//! `scene_NNNNN_hand.mesh` / `scene_NNNNN_object.mesh`. The dataset root also holds the hand
//! template as `hand_template.txt`. Manifest keys: `format_version`, `split`,
//! `count`, `image_size`, `patch_size`, `seed_base`, `sdf_samples_per_scene`.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{axis_angle, matrix_to_rot6d, project_point, CameraIntrinsics, ObjectPose};
use crate::hand::{keypoints_2d, HandParams, HandSkeleton, NUM_BETAS, NUM_FINGERS, NUM_JOINTS, PARAM_LEN};
use crate::image::RgbImage;
use crate::mesh::{cuboid, cylinder, icosphere, TriangleMesh};
use crate::sdf::{sample_queries, QueryBox, QueryKind, SdfSample, BOX_INFLATION};
use crate::{Error, Result};

pub const RECORD_MAGIC: &[u8; 8] = b"MHOISCN\0";
pub const RECORD_VERSION: u32 = 1;
pub const SEG_BACKGROUND: u8 = 0;
pub const SEG_HAND: u8 = 1;
pub const SEG_OBJECT: u8 = 2;

const HAND_COLOR: [f64; 3] = [224.0, 172.0, 140.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectShape {
    Box { half_extents: Vector3<f64> },
    Cylinder { radius: f64, half_height: f64 },
    Sphere { radius: f64 },
}

impl ObjectShape {
    pub fn kind(&self) -> u8 {
        match self {
            Self::Box { .. } => 0,
            Self::Cylinder { .. } => 1,
            Self::Sphere { .. } => 2,
        }
    }

    pub fn dims(&self) -> [f64; 3] {
        match *self {
            Self::Box { half_extents: h } => [h.x, h.y, h.z],
            Self::Cylinder { radius, half_height } => [radius, half_height, 0.0],
            Self::Sphere { radius } => [radius, 0.0, 0.0],
        }
    }

    pub fn from_parts(kind: u8, d: [f64; 3]) -> Result<Self> {
        match kind {
            0 => Ok(Self::Box { half_extents: Vector3::new(d[0], d[1], d[2]) }),
            1 => Ok(Self::Cylinder { radius: d[0], half_height: d[1] }),
            2 => Ok(Self::Sphere { radius: d[0] }),
            k => Err(Error::Format(format!("unknown object shape kind {k}"))),
        }
    }

    /// Model mesh in the object frame.
    pub fn mesh(&self) -> TriangleMesh {
        match *self {
            Self::Box { half_extents } => cuboid(&half_extents),
            Self::Cylinder { radius, half_height } => cylinder(radius, half_height, 16),
            Self::Sphere { radius } => icosphere(radius, 2),
        }
    }

    pub fn color(&self) -> [f64; 3] {
        match self {
            Self::Box { .. } => [70.0, 110.0, 210.0],
            Self::Cylinder { .. } => [80.0, 190.0, 90.0],
            Self::Sphere { .. } => [220.0, 200.0, 60.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub image_size: usize,
    /// Focal length in pixels per pixel of image width.
    pub focal_per_pixel: f64,
    pub sdf_samples: usize,
    pub max_flexion_deg: f64,
    pub max_abduction_deg: f64,
    pub articulate: bool,
    pub max_beta: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            focal_per_pixel: 1.72,
            sdf_samples: 256,
            max_flexion_deg: 60.0,
            max_abduction_deg: 15.0,
            articulate: true,
            max_beta: 0.03,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || !(self.focal_per_pixel > 0.0) || self.sdf_samples == 0 {
            return Err(Error::InvalidConfig(format!("scene config {self:?}")));
        }
        if !(0.0..=180.0).contains(&self.max_flexion_deg)
            || !(0.0..=90.0).contains(&self.max_abduction_deg)
            || !(0.0..0.3).contains(&self.max_beta)
        {
            return Err(Error::InvalidConfig("articulation ranges out of bounds".into()));
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraIntrinsics {
        let f = self.focal_per_pixel * self.image_size as f64;
        let c = (self.image_size as f64 - 1.0) / 2.0;
        CameraIntrinsics { fx: f, fy: f, cx: c, cy: c }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub seed: u64,
    pub image: RgbImage,
    pub seg: Vec<u8>,
    pub keypoints2d: Vec<Vector2<f64>>,
    pub hand_params: HandParams,
    pub object_shape: ObjectShape,
    pub object_pose: ObjectPose,
    pub camera: CameraIntrinsics,
    pub query_box: QueryBox,
    pub sdf_samples: Vec<SdfSample>,
}

/// Posed hand and object meshes from stored parameters.
pub fn scene_meshes(
    skel: &HandSkeleton,
    hand: &HandParams,
    shape: &ObjectShape,
    pose: &ObjectPose,
) -> Result<(TriangleMesh, TriangleMesh)> {
    let geom = skel.forward_kinematics(hand)?;
    let hand_mesh = TriangleMesh::new(geom.verts, skel.mesh.triangles.clone());
    let obj_mesh = shape.mesh().transformed(&pose.rotation.to_matrix()?, &pose.translation);
    Ok((hand_mesh, obj_mesh))
}

/// Largest object tilt away from its canonical orientation.
pub const MAX_OBJECT_TILT_DEG: f64 = 45.0;

/// Object orientation, canonical under the shape's symmetry: spheres keep
/// the identity and cylinders never twist about their own axis, so the
/// label is a function of the rendered shape.
fn object_rotation(rng: &mut impl Rng, shape: &ObjectShape) -> Matrix3<f64> {
    let angle = rng.random_range(0.0..MAX_OBJECT_TILT_DEG.to_radians());
    match shape {
        ObjectShape::Sphere { .. } => Matrix3::identity(),
        ObjectShape::Cylinder { .. } => {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            axis_angle(&Vector3::new(phi.cos(), phi.sin(), 0.0), angle)
        }
        ObjectShape::Box { .. } => {
            let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let axis = Vector3::from(v);
            if axis.norm() < 1e-9 {
                Matrix3::identity()
            } else {
                axis_angle(&axis.normalize(), angle)
            }
        }
    }
}

fn sample_hand(rng: &mut impl Rng, cfg: &SceneConfig) -> Result<HandParams> {
    let mut params = HandParams::default();
    let global = axis_angle(&Vector3::z(), rng.random_range(-1.0..1.0))
        * axis_angle(&Vector3::y(), rng.random_range(-0.5..0.5))
        * axis_angle(&Vector3::x(), rng.random_range(-0.5..0.5));
    params.rotations[0] = matrix_to_rot6d(&global)?;
    let flex = cfg.max_flexion_deg.to_radians();
    let abd = cfg.max_abduction_deg.to_radians();
    for f in 0..NUM_FINGERS {
        for k in 0..3 {
            let slot = 1 + 3 * f + k;
            let m = if cfg.articulate {
                let bend = axis_angle(&Vector3::x(), rng.random_range(-flex..=flex));
                if k == 0 {
                    axis_angle(&Vector3::z(), rng.random_range(-abd..=abd)) * bend
                } else {
                    bend
                }
            } else {
                Matrix3::identity()
            };
            params.rotations[slot] = matrix_to_rot6d(&m)?;
        }
    }
    for b in params.beta.iter_mut().take(NUM_BETAS) {
        *b = if cfg.articulate { rng.random_range(-cfg.max_beta..=cfg.max_beta) } else { 0.0 };
    }
    let palm_center = Vector3::new(0.0, -0.06, 0.0);
    let target = Vector3::new(
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
        rng.random_range(0.45..0.6),
    );
    params.root_translation = target - global * palm_center;
    Ok(params)
}

fn sample_object(rng: &mut impl Rng, hand: &HandParams) -> Result<(ObjectShape, ObjectPose)> {
    let shape = match rng.random_range(0..3) {
        0 => ObjectShape::Box {
            half_extents: Vector3::from_fn(|_, _| rng.random_range(0.015..0.035)),
        },
        1 => ObjectShape::Cylinder {
            radius: rng.random_range(0.015..0.03),
            half_height: rng.random_range(0.02..0.045),
        },
        _ => ObjectShape::Sphere { radius: rng.random_range(0.02..0.035) },
    };
    let global = hand.rotations[0].to_matrix()?;
    let palm = hand.root_translation + global * Vector3::new(0.0, -0.045, 0.0);
    // mostly on the camera-facing side of the palm so the object is visible
    let facing = if (global * Vector3::z()).z < 0.0 { 1.0 } else { -1.0 };
    let side = if rng.random::<f64>() < 0.8 { facing } else { -facing };
    let normal = global * Vector3::new(0.0, 0.0, side);
    let extent = shape.dims().iter().copied().fold(0.0, f64::max);
    let lateral = global * Vector3::new(rng.random_range(-0.025..0.025), rng.random_range(-0.03..0.03), 0.0);
    let mut t = palm + normal * (0.015 + extent) + lateral;
    t.z = t.z.clamp(0.3, 0.8);
    let rotation = matrix_to_rot6d(&object_rotation(rng, &shape))?;
    Ok((shape, ObjectPose { rotation, translation: t }))
}

/// Generates one scene; deterministic per seed.
pub fn sample_scene(seed: u64, cfg: &SceneConfig, skel: &HandSkeleton) -> Result<SceneRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hand_params = sample_hand(&mut rng, cfg)?;
    let (object_shape, object_pose) = sample_object(&mut rng, &hand_params)?;
    let camera = cfg.camera();
    let (hand_mesh, obj_mesh) = scene_meshes(skel, &hand_params, &object_shape, &object_pose)?;
    let raster = rasterize(
        &[
            RasterMesh { mesh: &hand_mesh, label: SEG_HAND, color: HAND_COLOR },
            RasterMesh { mesh: &obj_mesh, label: SEG_OBJECT, color: object_shape.color() },
        ],
        &camera,
        cfg.image_size,
        cfg.image_size,
    )?;
    let geom = skel.forward_kinematics(&hand_params)?;
    let keypoints2d = keypoints_2d(&geom, &camera)?;
    let sdf_seed = seed ^ 0x5DF5_A3C1_0000_0000;
    let sdf_samples = sample_queries(&hand_mesh, &obj_mesh, cfg.sdf_samples, sdf_seed)?;
    Ok(SceneRecord {
        seed,
        image: raster.image,
        seg: raster.seg,
        keypoints2d,
        hand_params,
        object_shape,
        object_pose,
        camera,
        query_box: QueryBox::around(&hand_mesh, &obj_mesh, BOX_INFLATION),
        sdf_samples,
    })
}

pub struct RasterMesh<'a> {
    pub mesh: &'a TriangleMesh,
    pub label: u8,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub image: RgbImage,
    pub seg: Vec<u8>,
    /// Camera-frame z of the visible surface, `inf` for background.
    pub depth: Vec<f64>,
}

pub fn background_color(y: usize, height: usize) -> [u8; 3] {
    let t = y as f64 / height.max(1) as f64;
    [(48.0 + 40.0 * t) as u8, (56.0 + 24.0 * t) as u8, 72]
}

/// Signed doubled area of `(a, b, p)`; positive when `p` is left of `a → b`
/// in image coordinates with y down.
pub fn edge_function(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Z-buffer rasterization sampled at pixel centers with flat Lambert shading.
/// A pixel is covered when all three edge functions share the triangle's
/// orientation sign (edges inclusive). Nearer surfaces win per pixel; ties
/// keep the earlier draw.
pub fn rasterize(meshes: &[RasterMesh<'_>], k: &CameraIntrinsics, width: usize, height: usize) -> Result<Raster> {
    let mut image = RgbImage::new(width, height);
    for y in 0..height {
        let bg = background_color(y, height);
        for x in 0..width {
            image.set(x, y, bg);
        }
    }
    let mut seg = vec![SEG_BACKGROUND; width * height];
    let mut depth = vec![f64::INFINITY; width * height];
    let light = Vector3::new(0.3, -0.5, -1.0).normalize();

    for rm in meshes {
        for t in 0..rm.mesh.triangles.len() {
            let tri = rm.mesh.triangle(t);
            if tri.iter().any(|v| v.z <= 1e-6) {
                continue;
            }
            let s: Vec<Vector2<f64>> = tri.iter().map(|v| project_point(v, k)).collect::<Result<_>>()?;
            let area = edge_function(&s[0], &s[1], &s[2]);
            if area.abs() < 1e-12 {
                continue;
            }
            let normal = rm.mesh.face_normal(t);
            let shade = 0.35 + 0.65 * normal.dot(&light).abs();
            let rgb = rm.color.map(|c| (c * shade).round().clamp(0.0, 255.0) as u8);

            let x0 = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
            let y0 = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
            let x1 = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor();
            let y1 = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor();
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            let x1 = (x1 as usize).min(width.saturating_sub(1));
            let y1 = (y1 as usize).min(height.saturating_sub(1));
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let p = Vector2::new(px as f64, py as f64);
                    let w0 = edge_function(&s[1], &s[2], &p) / area;
                    let w1 = edge_function(&s[2], &s[0], &p) / area;
                    let w2 = edge_function(&s[0], &s[1], &p) / area;
                    if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                        continue;
                    }
                    // perspective-correct depth
                    let z = 1.0 / (w0 / tri[0].z + w1 / tri[1].z + w2 / tri[2].z);
                    let i = py * width + px;
                    if z < depth[i] {
                        depth[i] = z;
                        seg[i] = rm.label;
                        image.set(px, py, rgb);
                    }
                }
            }
        }
    }
    Ok(Raster { image, seg, depth })
}

/// Recomputes seg, keypoints and every SDF value from the stored parameters
/// and checks exact equality.
pub fn verify_record(rec: &SceneRecord, skel: &HandSkeleton) -> Result<()> {
    let (hand_mesh, obj_mesh) = scene_meshes(skel, &rec.hand_params, &rec.object_shape, &rec.object_pose)?;
    let raster = rasterize(
        &[
            RasterMesh { mesh: &hand_mesh, label: SEG_HAND, color: HAND_COLOR },
            RasterMesh { mesh: &obj_mesh, label: SEG_OBJECT, color: rec.object_shape.color() },
        ],
        &rec.camera,
        rec.image.width,
        rec.image.height,
    )?;
    if raster.seg != rec.seg {
        return Err(Error::Format("segmentation does not match re-rasterization".into()));
    }
    let geom = skel.forward_kinematics(&rec.hand_params)?;
    if keypoints_2d(&geom, &rec.camera)? != rec.keypoints2d {
        return Err(Error::Format("keypoints do not match projected kinematics".into()));
    }
    for s in &rec.sdf_samples {
        if crate::sdf::signed_distance(&s.p, &hand_mesh)? != s.d_hand || crate::sdf::signed_distance(&s.p, &obj_mesh)? != s.d_obj {
            return Err(Error::Format("sdf sample does not match the oracle".into()));
        }
    }
    Ok(())
}

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("record truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f64()?;
        }
        Ok(out)
    }
}

pub fn encode_record(rec: &SceneRecord) -> Vec<u8> {
    let mut w = ByteWriter(Vec::new());
    w.0.extend_from_slice(RECORD_MAGIC);
    w.u32(RECORD_VERSION);
    w.u64(rec.seed);
    w.u32(rec.image.width as u32);
    w.u32(rec.image.height as u32);
    w.0.extend_from_slice(&rec.image.data);
    w.0.extend_from_slice(&rec.seg);
    for kp in &rec.keypoints2d {
        w.f64s(&[kp.x, kp.y]);
    }
    w.f64s(&rec.hand_params.to_vec());
    w.u8(rec.object_shape.kind());
    w.f64s(&rec.object_shape.dims());
    w.f64s(&rec.object_pose.to_array());
    w.f64s(&[rec.camera.fx, rec.camera.fy, rec.camera.cx, rec.camera.cy]);
    w.f64s(rec.query_box.center.as_slice());
    w.f64s(rec.query_box.half_extents.as_slice());
    w.u32(rec.sdf_samples.len() as u32);
    for s in &rec.sdf_samples {
        w.f64s(&[s.p.x, s.p.y, s.p.z, s.d_hand, s.d_obj]);
        w.u8(s.kind as u8);
    }
    w.0
}

pub fn decode_record(bytes: &[u8]) -> Result<SceneRecord> {
    let mut r = ByteReader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(RECORD_MAGIC.as_slice()) {
        return Err(Error::Format("not a scene record (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != RECORD_VERSION {
        return Err(Error::Format(format!(
            "unsupported scene record version {version}; this build reads version {RECORD_VERSION}"
        )));
    }
    let seed = r.u64()?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let npx = width.checked_mul(height).ok_or_else(|| Error::Format("image size overflow".into()))?;
    let image = RgbImage { width, height, data: r.take(npx * 3)?.to_vec() };
    let seg = r.take(npx)?.to_vec();
    if seg.iter().any(|&s| s > SEG_OBJECT) {
        return Err(Error::Format("segmentation label out of range".into()));
    }
    let keypoints2d = (0..NUM_JOINTS)
        .map(|_| Ok(Vector2::new(r.f64()?, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    let hand_params = HandParams::from_slice(&r.f64s::<PARAM_LEN>()?)?;
    let kind = r.u8()?;
    let object_shape = ObjectShape::from_parts(kind, r.f64s::<3>()?)?;
    let object_pose = ObjectPose::from_slice(&r.f64s::<9>()?);
    let [fx, fy, cx, cy] = r.f64s::<4>()?;
    let camera = CameraIntrinsics::new(fx, fy, cx, cy)?;
    let c = r.f64s::<3>()?;
    let h = r.f64s::<3>()?;
    let query_box = QueryBox { center: Vector3::from(c), half_extents: Vector3::from(h) };
    let n = r.u32()? as usize;
    let mut sdf_samples = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let [x, y, z, d_hand, d_obj] = r.f64s::<5>()?;
        let kind = QueryKind::from_u8(r.u8()?).ok_or_else(|| Error::Format("unknown query kind".into()))?;
        sdf_samples.push(SdfSample { p: Vector3::new(x, y, z), d_hand, d_obj, kind });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after record", bytes.len() - r.pos)));
    }
    Ok(SceneRecord {
        seed,
        image,
        seg,
        keypoints2d,
        hand_params,
        object_shape,
        object_pose,
        camera,
        query_box,
        sdf_samples,
    })
}

pub fn write_record(path: &Path, rec: &SceneRecord) -> Result<()> {
    std::fs::write(path, encode_record(rec))?;
    Ok(())
}

pub fn read_record(path: &Path) -> Result<SceneRecord> {
    decode_record(&std::fs::read(path)?)
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub split: String,
    pub count: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub seed_base: u64,
    pub sdf_samples_per_scene: usize,
}

pub fn record_file_name(index: usize) -> String {
    format!("scene_{index:05}.bin")
}

/// Seeds of a split: `seed_base + index`.
pub fn split_seeds(seed_base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| seed_base.wrapping_add(i)).collect()
}

/// Writes records, PPM dumps, ASCII meshes and the manifest for one split.
pub fn write_split(dir: &Path, manifest: &Manifest, records: &[SceneRecord], skel: &HandSkeleton) -> Result<()> {
    if records.len() != manifest.count {
        return Err(Error::InvalidConfig("manifest count does not match records".into()));
    }
    std::fs::create_dir_all(dir)?;
    for (i, rec) in records.iter().enumerate() {
        write_record(&dir.join(record_file_name(i)), rec)?;
        std::fs::write(dir.join(format!("scene_{i:05}.ppm")), rec.image.to_ppm())?;
        let (hand, obj) = scene_meshes(skel, &rec.hand_params, &rec.object_shape, &rec.object_pose)?;
        std::fs::write(dir.join(format!("scene_{i:05}_hand.mesh")), hand.to_text())?;
        std::fs::write(dir.join(format!("scene_{i:05}_object.mesh")), obj.to_text())?;
    }
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), json + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("meta.json: {e}")))?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}; this build reads version {DATASET_FORMAT_VERSION}",
            m.format_version
        )));
    }
    Ok(m)
}

pub fn read_split(dir: &Path) -> Result<(Manifest, Vec<SceneRecord>)> {
    let m = read_manifest(dir)?;
    let records = (0..m.count)
        .map(|i| read_record(&dir.join(record_file_name(i))))
        .collect::<Result<Vec<_>>>()?;
    for r in &records {
        if r.image.width != m.image_size || r.image.height != m.image_size {
            return Err(Error::Format("record image size disagrees with manifest".into()));
        }
    }
    Ok((m, records))
}

/// Keypoints of the unarticulated template under a record's global pose,
/// used to check flat-hand layouts.
pub fn flat_hand_keypoints(skel: &HandSkeleton, global: &HandParams, k: &CameraIntrinsics) -> Result<Vec<Vector2<f64>>> {
    let mut p = HandParams::default();
    p.rotations[0] = global.rotations[0];
    p.root_translation = global.root_translation;
    keypoints_2d(&skel.forward_kinematics(&p)?, k)
}
