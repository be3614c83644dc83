//! Kinematic hand: a 21-joint tree, forward kinematics from 16 local 6D
//! rotations plus a 10-value shape vector, rigid linear-blend skinning of a
//! capsule-per-bone template mesh, and the exact reverse-mode gradient of all
//! of it with respect to the parameters.
//!
//! Joint order: wrist, then thumb, index, middle, ring, pinky, each listed
//! proximal to distal (root, two interior joints, tip):
//!
//! ```text
//!  0 wrist
//!  1- 4 thumb    5- 8 index    9-12 middle    13-16 ring    17-20 pinky
//! ```
//!
//! Rotation slots: slot 0 is the global (wrist) rotation; finger `f` joint at
//! chain position `k < 3` uses slot `1 + 3f + k`. Tips carry no rotation.
//!
//! Shape: `β₀` scales every bone, `β₁..β₅` the bones of one finger (thumb
//! first), `β₆` the wrist→finger-root bones, `β₇..β₉` the first, second and
//! third finger segments. The scale of a bone is `1 + Σ` of its coefficients.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::geometry::{project_point, rot6d_backward, CameraIntrinsics, Rotation6D};
use crate::mesh::{capsule_between, ellipsoid, TriangleMesh};
use crate::{Error, Result};

pub const NUM_JOINTS: usize = 21;
pub const NUM_ROTATIONS: usize = 16;
pub const NUM_BETAS: usize = 10;
pub const NUM_FINGERS: usize = 5;
/// Flat parameter length: 16·6 rotation values, 10 shape values, 3 translation.
pub const PARAM_LEN: usize = NUM_ROTATIONS * 6 + NUM_BETAS + 3;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "wrist",
    "thumb1", "thumb2", "thumb3", "thumb4",
    "index1", "index2", "index3", "index4",
    "middle1", "middle2", "middle3", "middle4",
    "ring1", "ring2", "ring3", "ring4",
    "pinky1", "pinky2", "pinky3", "pinky4",
];

pub const FINGERTIPS: [usize; NUM_FINGERS] = [4, 8, 12, 16, 20];

pub const TEMPLATE_HEADER: &str = "# maskhoi-hand-template 1";
const SHIPPED_TEMPLATE: &str = include_str!("../data/hand_template_v1.txt");

/// Parent of each joint; `None` for the wrist.
pub fn parent(joint: usize) -> Option<usize> {
    match joint {
        0 => None,
        j if (j - 1) % 4 == 0 => Some(0),
        j => Some(j - 1),
    }
}

/// Joints of finger `f` (0 = thumb), root to tip.
pub fn finger_chain(f: usize) -> [usize; 4] {
    let root = 1 + 4 * f;
    [root, root + 1, root + 2, root + 3]
}

/// Finger and chain position of a non-wrist joint.
pub fn finger_of(joint: usize) -> Option<(usize, usize)> {
    (joint > 0).then(|| ((joint - 1) / 4, (joint - 1) % 4))
}

pub fn children(joint: usize) -> Vec<usize> {
    (0..NUM_JOINTS).filter(|&c| parent(c) == Some(joint)).collect()
}

pub fn rotation_slot(joint: usize) -> Option<usize> {
    match finger_of(joint) {
        None => Some(0),
        Some((f, k)) if k < 3 => Some(1 + 3 * f + k),
        _ => None,
    }
}

/// Shape coefficients feeding the bone that ends at `joint`.
fn scale_groups(joint: usize) -> Vec<usize> {
    match finger_of(joint) {
        None => vec![],
        Some((_, 0)) => vec![0, 6],
        Some((f, k)) => vec![0, 1 + f, 6 + k],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexSkin {
    /// `(joint, weight)` pairs, weights nonnegative and summing to one.
    pub weights: Vec<(usize, f64)>,
    /// Bone (named by its child joint) whose shape scale stretches this
    /// vertex along the bone's rest direction.
    pub stretch_bone: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandSkeleton {
    pub rest_joints: Vec<Vector3<f64>>,
    pub mesh: TriangleMesh,
    pub skin: Vec<VertexSkin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandParams {
    pub rotations: [Rotation6D; NUM_ROTATIONS],
    pub beta: [f64; NUM_BETAS],
    pub root_translation: Vector3<f64>,
}

impl Default for HandParams {
    fn default() -> Self {
        Self {
            rotations: [Rotation6D::identity(); NUM_ROTATIONS],
            beta: [0.0; NUM_BETAS],
            root_translation: Vector3::zeros(),
        }
    }
}

impl HandParams {
    /// Layout `[rotations (16×6) | beta (10) | root translation (3)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PARAM_LEN);
        for r in &self.rotations {
            v.extend_from_slice(&r.to_array());
        }
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(self.root_translation.as_slice());
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != PARAM_LEN {
            return Err(Error::InvalidGeometry(format!(
                "hand parameter vector has {} values, expected {PARAM_LEN}",
                v.len()
            )));
        }
        let rotations = std::array::from_fn(|i| Rotation6D::from_slice(&v[6 * i..6 * i + 6]));
        let b0 = NUM_ROTATIONS * 6;
        let beta = std::array::from_fn(|i| v[b0 + i]);
        let t0 = b0 + NUM_BETAS;
        Ok(Self {
            rotations,
            beta,
            root_translation: Vector3::new(v[t0], v[t0 + 1], v[t0 + 2]),
        })
    }

    pub fn is_valid(&self) -> bool {
        self.rotations.iter().all(|r| r.to_matrix().is_ok())
            && self.beta.iter().all(|b| b.is_finite())
            && self.root_translation.iter().all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandGeometry {
    pub joints: Vec<Vector3<f64>>,
    pub verts: Vec<Vector3<f64>>,
}

/// Gradient with respect to [`HandParams`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct HandParamsGrad {
    pub rotations: [[f64; 6]; NUM_ROTATIONS],
    pub beta: [f64; NUM_BETAS],
    pub root_translation: Vector3<f64>,
}

impl HandParamsGrad {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PARAM_LEN);
        for r in &self.rotations {
            v.extend_from_slice(r);
        }
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(self.root_translation.as_slice());
        v
    }
}

struct FkState {
    local: [Matrix3<f64>; NUM_JOINTS],
    world: [Matrix3<f64>; NUM_JOINTS],
    scale: [f64; NUM_JOINTS],
}

/// Quantizes to a 1/1024 m lattice so rest offsets add back exactly.
fn q(v: f64) -> f64 {
    (v * 1024.0).round() / 1024.0
}

impl HandSkeleton {
    /// The shipped template (data/hand_template_v1.txt).
    pub fn template() -> Self {
        Self::from_text(SHIPPED_TEMPLATE).expect("shipped hand template parses")
    }

    /// Procedural construction of the template: a flattened ellipsoid palm on
    /// the wrist and one capsule per finger bone, each rigidly bound to the
    /// bone's proximal joint. Fingers point along -y, palm normal is +z.
    pub fn build_template() -> Self {
        let mut rest = vec![Vector3::zeros(); NUM_JOINTS];
        let roots = [
            (0.020, -0.025),
            (0.024, -0.085),
            (0.004, -0.090),
            (-0.015, -0.086),
            (-0.032, -0.077),
        ];
        let dirs = [
            Vector3::new(0.70, -0.71, 0.0),
            Vector3::new(0.08, -1.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(-0.07, -1.0, 0.0),
            Vector3::new(-0.16, -1.0, 0.0),
        ];
        let lengths = [
            [0.036, 0.031, 0.026],
            [0.040, 0.025, 0.020],
            [0.045, 0.028, 0.022],
            [0.042, 0.026, 0.020],
            [0.032, 0.020, 0.018],
        ];
        let radii = [
            [0.0100, 0.0090, 0.0080],
            [0.0085, 0.0076, 0.0068],
            [0.0088, 0.0078, 0.0070],
            [0.0083, 0.0074, 0.0066],
            [0.0075, 0.0066, 0.0060],
        ];
        for f in 0..NUM_FINGERS {
            let chain = finger_chain(f);
            let d = dirs[f].normalize();
            let mut p = Vector3::new(q(roots[f].0), q(roots[f].1), 0.0);
            rest[chain[0]] = p;
            for k in 0..3 {
                let next = p + d * lengths[f][k];
                p = Vector3::new(q(next.x), q(next.y), q(next.z));
                rest[chain[k + 1]] = p;
            }
        }

        let mut mesh = TriangleMesh::new(vec![], vec![]);
        let mut skin = Vec::new();
        let palm = ellipsoid(&Vector3::new(0.045, 0.05, 0.013), 8, 5)
            .transformed(&Matrix3::identity(), &Vector3::new(0.0, -0.045, 0.0));
        skin.extend(palm.vertices.iter().map(|_| VertexSkin { weights: vec![(0, 1.0)], stretch_bone: None }));
        mesh.append(&palm);
        for f in 0..NUM_FINGERS {
            let chain = finger_chain(f);
            for k in 0..3 {
                let (j, c) = (chain[k], chain[k + 1]);
                let cap = capsule_between(&rest[j], &rest[c], radii[f][k], 6, 2);
                skin.extend(
                    cap.vertices
                        .iter()
                        .map(|_| VertexSkin { weights: vec![(j, 1.0)], stretch_bone: Some(c) }),
                );
                mesh.append(&cap);
            }
        }
        Self { rest_joints: rest, mesh, skin }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rest_joints.len() != NUM_JOINTS {
            return Err(Error::InvalidGeometry("template needs 21 joints".into()));
        }
        if self.skin.len() != self.mesh.vertices.len() {
            return Err(Error::InvalidGeometry("one skin entry per vertex required".into()));
        }
        for (i, s) in self.skin.iter().enumerate() {
            let total: f64 = s.weights.iter().map(|w| w.1).sum();
            if s.weights.iter().any(|&(j, w)| j >= NUM_JOINTS || w < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidGeometry(format!("vertex {i} has invalid skin weights")));
            }
            if matches!(s.stretch_bone, Some(c) if c == 0 || c >= NUM_JOINTS) {
                return Err(Error::InvalidGeometry(format!("vertex {i} stretches a non-bone")));
            }
        }
        self.mesh.validate()
    }

    /// Rest offset of the bone ending at `joint` (from its parent).
    pub fn rest_offset(&self, joint: usize) -> Vector3<f64> {
        match parent(joint) {
            Some(p) => self.rest_joints[joint] - self.rest_joints[p],
            None => self.rest_joints[0],
        }
    }

    pub fn bone_scale(joint: usize, beta: &[f64; NUM_BETAS]) -> f64 {
        scale_groups(joint).iter().fold(1.0, |s, &k| s + beta[k])
    }

    /// Rest bone length scaled by the shape coefficients.
    pub fn bone_length(&self, joint: usize, beta: &[f64; NUM_BETAS]) -> f64 {
        self.rest_offset(joint).norm() * Self::bone_scale(joint, beta)
    }

    fn local_offset(&self, vertex: usize, joint: usize, scale: &[f64; NUM_JOINTS]) -> Vector3<f64> {
        let base = self.mesh.vertices[vertex] - self.rest_joints[joint];
        match self.skin[vertex].stretch_bone {
            Some(c) => {
                let u = self.rest_offset(c).normalize();
                base + u * ((scale[c] - 1.0) * base.dot(&u))
            }
            None => base,
        }
    }

    fn run_fk(&self, params: &HandParams) -> Result<(HandGeometry, FkState)> {
        let mut local = [Matrix3::identity(); NUM_JOINTS];
        for (j, m) in local.iter_mut().enumerate() {
            if let Some(slot) = rotation_slot(j) {
                *m = params.rotations[slot].to_matrix()?;
            }
        }
        let mut scale = [1.0; NUM_JOINTS];
        for (j, s) in scale.iter_mut().enumerate().skip(1) {
            *s = Self::bone_scale(j, &params.beta);
        }
        let mut world = [Matrix3::identity(); NUM_JOINTS];
        let mut joints = vec![Vector3::zeros(); NUM_JOINTS];
        world[0] = local[0];
        joints[0] = params.root_translation + local[0] * self.rest_joints[0];
        for j in 1..NUM_JOINTS {
            let p = parent(j).expect("non-root joint");
            joints[j] = joints[p] + world[p] * (self.rest_offset(j) * scale[j]);
            world[j] = world[p] * local[j];
        }
        let verts = (0..self.mesh.vertices.len())
            .map(|v| {
                self.skin[v].weights.iter().fold(Vector3::zeros(), |acc, &(j, w)| {
                    acc + (joints[j] + world[j] * self.local_offset(v, j, &scale)) * w
                })
            })
            .collect();
        Ok((HandGeometry { joints, verts }, FkState { local, world, scale }))
    }

    pub fn forward_kinematics(&self, params: &HandParams) -> Result<HandGeometry> {
        Ok(self.run_fk(params)?.0)
    }

    /// Pulls a cotangent on joints and vertices back onto the parameters.
    pub fn fk_gradients(
        &self,
        params: &HandParams,
        grad_joints: &[Vector3<f64>],
        grad_verts: &[Vector3<f64>],
    ) -> Result<HandParamsGrad> {
        if grad_joints.len() != NUM_JOINTS || grad_verts.len() != self.mesh.vertices.len() {
            return Err(Error::InvalidGeometry("cotangent shape mismatch".into()));
        }
        let (_, st) = self.run_fk(params)?;
        let mut gp: Vec<Vector3<f64>> = grad_joints.to_vec();
        let mut gw = [Matrix3::zeros(); NUM_JOINTS];
        let mut gl = [Matrix3::zeros(); NUM_JOINTS];
        let mut gs = [0.0; NUM_JOINTS];

        for (v, gv) in grad_verts.iter().enumerate() {
            if *gv == Vector3::zeros() {
                continue;
            }
            for &(j, w) in &self.skin[v].weights {
                let ell = self.local_offset(v, j, &st.scale);
                gp[j] += gv * w;
                gw[j] += gv * ell.transpose() * w;
                if let Some(c) = self.skin[v].stretch_bone {
                    let g_ell = st.world[j].transpose() * gv * w;
                    let base = self.mesh.vertices[v] - self.rest_joints[j];
                    let u = self.rest_offset(c).normalize();
                    gs[c] += g_ell.dot(&u) * base.dot(&u);
                }
            }
        }
        for j in (1..NUM_JOINTS).rev() {
            let p = parent(j).expect("non-root joint");
            let off = self.rest_offset(j);
            let gpj = gp[j];
            gp[p] += gpj;
            gw[p] += gpj * (off * st.scale[j]).transpose();
            gs[j] += gpj.dot(&(st.world[p] * off));
            let gwj = gw[j];
            gw[p] += gwj * st.local[j].transpose();
            gl[j] += st.world[p].transpose() * gwj;
        }
        gl[0] += gw[0] + gp[0] * self.rest_joints[0].transpose();

        let mut rotations = [[0.0; 6]; NUM_ROTATIONS];
        for j in 0..NUM_JOINTS {
            if let Some(slot) = rotation_slot(j) {
                rotations[slot] = rot6d_backward(&params.rotations[slot], &gl[j])?;
            }
        }
        let mut beta = [0.0; NUM_BETAS];
        for j in 1..NUM_JOINTS {
            for k in scale_groups(j) {
                beta[k] += gs[j];
            }
        }
        Ok(HandParamsGrad { rotations, beta, root_translation: gp[0] })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{TEMPLATE_HEADER}").unwrap();
        for (j, p) in self.rest_joints.iter().enumerate() {
            let par = parent(j).map_or(-1, |p| p as i64);
            writeln!(s, "joint {j} {} {par} {:?} {:?} {:?}", JOINT_NAMES[j], p.x, p.y, p.z).unwrap();
        }
        for v in &self.mesh.vertices {
            writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.mesh.triangles {
            writeln!(s, "f {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        for (i, sk) in self.skin.iter().enumerate() {
            let stretch = sk.stretch_bone.map_or(-1, |c| c as i64);
            write!(s, "skin {i} {stretch}").unwrap();
            for (j, w) in &sk.weights {
                write!(s, " {j} {w:?}").unwrap();
            }
            writeln!(s).unwrap();
        }
        s
    }

    /// Parses the template format: `joint`, `v`, `f` and `skin` records after
    /// the versioned header line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TEMPLATE_HEADER => {}
            Some(h) if h.starts_with("# maskhoi-hand-template") => {
                return Err(Error::Format(format!("unsupported hand template version: `{h}`")))
            }
            _ => return Err(Error::Format("missing hand template header".into())),
        }
        let mut rest = vec![Vector3::zeros(); NUM_JOINTS];
        let mut seen = [false; NUM_JOINTS];
        let mut mesh_text = String::new();
        let mut skin: Vec<Option<VertexSkin>> = Vec::new();
        for line in lines {
            let t = line.trim();
            let bad = || Error::Format(format!("hand template line `{t}`"));
            let parts: Vec<&str> = t.split_whitespace().collect();
            match parts.first().copied() {
                None | Some("#") => {}
                Some("v") | Some("f") => {
                    mesh_text.push_str(t);
                    mesh_text.push('\n');
                }
                Some("joint") => {
                    if parts.len() != 7 {
                        return Err(bad());
                    }
                    let j: usize = parts[1].parse().map_err(|_| bad())?;
                    let par: i64 = parts[3].parse().map_err(|_| bad())?;
                    if j >= NUM_JOINTS || parts[2] != JOINT_NAMES[j] || par != parent(j).map_or(-1, |p| p as i64) {
                        return Err(bad());
                    }
                    let xyz: Vec<f64> = parts[4..].iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                    rest[j] = Vector3::new(xyz[0], xyz[1], xyz[2]);
                    seen[j] = true;
                }
                Some("skin") => {
                    if parts.len() < 5 || parts.len() % 2 == 0 {
                        return Err(bad());
                    }
                    let i: usize = parts[1].parse().map_err(|_| bad())?;
                    let stretch: i64 = parts[2].parse().map_err(|_| bad())?;
                    let weights = parts[3..]
                        .chunks(2)
                        .map(|c| Ok((c[0].parse().map_err(|_| bad())?, c[1].parse().map_err(|_| bad())?)))
                        .collect::<Result<Vec<(usize, f64)>>>()?;
                    if skin.len() <= i {
                        skin.resize(i + 1, None);
                    }
                    skin[i] = Some(VertexSkin {
                        weights,
                        stretch_bone: (stretch >= 0).then_some(stretch as usize),
                    });
                }
                Some(_) => return Err(bad()),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("hand template is missing joints".into()));
        }
        let mesh = TriangleMesh::from_text(&mesh_text)?;
        let skin = skin
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Format("hand template is missing skin records".into()))?;
        let skel = Self { rest_joints: rest, mesh, skin };
        skel.validate()?;
        Ok(skel)
    }
}

/// Per-joint pinhole projection.
pub fn keypoints_2d(geom: &HandGeometry, k: &CameraIntrinsics) -> Result<Vec<Vector2<f64>>> {
    geom.joints.iter().map(|p| project_point(p, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, matrix_to_rot6d};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut impl Rng) -> HandParams {
        let mut p = HandParams::default();
        for r in &mut p.rotations {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let m = axis_angle(&axis, rng.random_range(-1.5..1.5));
            // non-orthonormal but valid 6D inputs exercise the Gram–Schmidt path
            let mut six = matrix_to_rot6d(&m).unwrap();
            six.a *= rng.random_range(0.5..2.0);
            six.b += six.a * rng.random_range(-0.3..0.3);
            *r = six;
        }
        for b in &mut p.beta {
            *b = rng.random_range(-0.1..0.1);
        }
        p.root_translation = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.3..0.8));
        p
    }

    #[test]
    fn tree_structure() {
        assert_eq!(parent(0), None);
        assert_eq!((1..NUM_JOINTS).filter(|&j| parent(j) == Some(0)).count(), 5);
        for j in 1..NUM_JOINTS {
            assert!(parent(j).unwrap() < j);
        }
        for f in 0..NUM_FINGERS {
            assert_eq!(finger_chain(f)[3], FINGERTIPS[f]);
        }
        let slots: Vec<usize> = (0..NUM_JOINTS).filter_map(rotation_slot).collect();
        assert_eq!(slots, (0..NUM_ROTATIONS).collect::<Vec<_>>());
    }

    #[test]
    fn shipped_template_matches_generator() {
        let built = HandSkeleton::build_template();
        built.validate().unwrap();
        assert_eq!(HandSkeleton::template(), built);
        assert_eq!(SHIPPED_TEMPLATE, built.to_text());
        let tris = built.mesh.triangles.len();
        assert!((700..=900).contains(&tris), "{tris} triangles");
    }

    #[test]
    #[ignore = "regenerates data/hand_template_v1.txt"]
    fn write_template_file() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/hand_template_v1.txt");
        std::fs::write(path, HandSkeleton::build_template().to_text()).unwrap();
    }

    #[test]
    fn template_version_is_checked() {
        let text = SHIPPED_TEMPLATE.replacen("template 1", "template 2", 1);
        let err = HandSkeleton::from_text(&text).unwrap_err().to_string();
        assert!(err.contains("unsupported hand template version"), "{err}");
    }

    #[test]
    fn zero_pose_reproduces_rest_exactly() {
        let skel = HandSkeleton::template();
        let g = skel.forward_kinematics(&HandParams::default()).unwrap();
        assert_eq!(g.joints, skel.rest_joints);
        for (v, r) in g.verts.iter().zip(&skel.mesh.vertices) {
            assert!((v - r).norm() < 1e-15);
        }
    }

    #[test]
    fn global_rotation_is_rigid() {
        let skel = HandSkeleton::template();
        let rz = axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let mut p = HandParams::default();
        p.rotations[0] = matrix_to_rot6d(&rz).unwrap();
        let g = skel.forward_kinematics(&p).unwrap();
        for (j, r) in g.joints.iter().zip(&skel.rest_joints) {
            assert!((j - rz * r).norm() < 1e-15);
        }
    }

    #[test]
    fn bone_lengths_preserved() {
        let skel = HandSkeleton::template();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = random_params(&mut rng);
            let g = skel.forward_kinematics(&p).unwrap();
            for j in 1..NUM_JOINTS {
                let len = (g.joints[j] - g.joints[parent(j).unwrap()]).norm();
                assert!((len - skel.bone_length(j, &p.beta)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fk_equivariance() {
        let skel = HandSkeleton::template();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let mut p = random_params(&mut rng);
            let r = p.rotations[0].to_matrix().unwrap();
            let t = p.root_translation;
            p.rotations[0] = Rotation6D::identity();
            p.root_translation = Vector3::zeros();
            let base = skel.forward_kinematics(&p).unwrap();
            p.rotations[0] = matrix_to_rot6d(&r).unwrap();
            p.root_translation = t;
            let full = skel.forward_kinematics(&p).unwrap();
            for (a, b) in full.joints.iter().zip(&base.joints) {
                assert!((a - (r * b + t)).norm() < 1e-10);
            }
            for (a, b) in full.verts.iter().zip(&base.verts) {
                assert!((a - (r * b + t)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn one_hot_vertices_move_rigidly() {
        let skel = HandSkeleton::template();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut p = random_params(&mut rng);
        p.beta = [0.0; NUM_BETAS];
        let g = skel.forward_kinematics(&p).unwrap();
        // pairwise distances between vertices bound to the same joint are preserved
        for j in [0usize, 5, 14] {
            let vs: Vec<usize> = (0..skel.skin.len()).filter(|&v| skel.skin[v].weights == vec![(j, 1.0)]).take(12).collect();
            assert!(vs.len() >= 2);
            for &a in &vs {
                for &b in &vs {
                    let rest = (skel.mesh.vertices[a] - skel.mesh.vertices[b]).norm();
                    let posed = (g.verts[a] - g.verts[b]).norm();
                    assert!((rest - posed).abs() < 1e-12);
                }
            }
        }
    }

    fn objective(skel: &HandSkeleton, p: &HandParams, gj: &[Vector3<f64>], gv: &[Vector3<f64>]) -> f64 {
        let g = skel.forward_kinematics(p).unwrap();
        g.joints.iter().zip(gj).map(|(a, b)| a.dot(b)).sum::<f64>()
            + g.verts.iter().zip(gv).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    #[test]
    fn fk_gradients_zero_cotangent() {
        let skel = HandSkeleton::template();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = random_params(&mut rng);
        let g = skel
            .fk_gradients(&p, &vec![Vector3::zeros(); NUM_JOINTS], &vec![Vector3::zeros(); skel.mesh.vertices.len()])
            .unwrap();
        assert!(g.to_vec().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fk_gradients_respect_chain_sparsity() {
        let skel = HandSkeleton::template();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = random_params(&mut rng);
        let mut gj = vec![Vector3::zeros(); NUM_JOINTS];
        for &j in &finger_chain(0) {
            gj[j] = Vector3::new(rng.random(), rng.random(), rng.random());
        }
        let g = skel.fk_gradients(&p, &gj, &vec![Vector3::zeros(); skel.mesh.vertices.len()]).unwrap();
        // pinky slots 13..16 cannot influence thumb joints
        for slot in 13..16 {
            assert!(g.rotations[slot].iter().all(|&x| x == 0.0));
        }
        assert!(g.rotations[1].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn fk_gradients_match_finite_differences() {
        let skel = HandSkeleton::template();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let nv = skel.mesh.vertices.len();
        for _ in 0..20 {
            let p = random_params(&mut rng);
            let gj: Vec<Vector3<f64>> = (0..NUM_JOINTS).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
            let gv: Vec<Vector3<f64>> = (0..nv).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
            let analytic = skel.fk_gradients(&p, &gj, &gv).unwrap().to_vec();
            let base = p.to_vec();
            let h = 1e-5;
            for i in 0..PARAM_LEN {
                let mut plus = base.clone();
                plus[i] += h;
                let mut minus = base.clone();
                minus[i] -= h;
                let fd = (objective(&skel, &HandParams::from_slice(&plus).unwrap(), &gj, &gv)
                    - objective(&skel, &HandParams::from_slice(&minus).unwrap(), &gj, &gv))
                    / (2.0 * h);
                let scale = analytic[i].abs().max(fd.abs()).max(1e-3);
                assert!((analytic[i] - fd).abs() / scale < 1e-4, "param {i}: {} vs {fd}", analytic[i]);
            }
        }
    }

    #[test]
    fn keypoints_project_each_joint() {
        let skel = HandSkeleton::template();
        let mut p = HandParams::default();
        p.root_translation = Vector3::new(0.0, 0.0, 0.5);
        let g = skel.forward_kinematics(&p).unwrap();
        let k = CameraIntrinsics::new(100.0, 100.0, 31.5, 31.5).unwrap();
        let kp = keypoints_2d(&g, &k).unwrap();
        for (uv, j) in kp.iter().zip(&g.joints) {
            let h = k.matrix() * j;
            assert!((uv.x - h.x / h.z).abs() < 1e-12 && (uv.y - h.y / h.z).abs() < 1e-12);
        }
        p.root_translation = Vector3::new(0.0, 0.0, -0.5);
        let g = skel.forward_kinematics(&p).unwrap();
        assert!(matches!(keypoints_2d(&g, &k), Err(Error::BehindCamera(_))));
    }
}
