//! Indexed triangle meshes, closed primitives and the ASCII mesh format.
//!
//! Text format (one record per line, `#` starts a comment):
//!
//! ```text
//! # maskhoi-mesh 1
//! v <x> <y> <z>
//! f <i> <j> <k>
//! ```
//!
//! Face indices are zero-based; faces are wound counter-clockwise when seen
//! from outside the solid.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::{Error, Result};

pub const MESH_FORMAT_HEADER: &str = "# maskhoi-mesh 1";

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Self {
        Self { vertices, triangles }
    }

    pub fn triangle(&self, t: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_normal(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Divergence-theorem volume; positive for outward-wound closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    /// Checks the watertightness invariants: every directed edge appears once
    /// and its reverse appears once, and no triangle is degenerate.
    pub fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {t} indexes out of range")));
            }
            if self.triangle_area(t) <= 1e-12 {
                return Err(Error::InvalidMesh(format!("triangle {t} is degenerate")));
            }
            for k in 0..3 {
                *edges.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &edges {
            if count != 1 || edges.get(&(b, a)) != Some(&1) {
                return Err(Error::InvalidMesh(format!(
                    "edge ({a}, {b}) is not shared by exactly two oppositely wound triangles"
                )));
            }
        }
        Ok(())
    }

    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| rotation * v + translation).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Appends another mesh as a separate closed component.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// The 8 corners of the axis-aligned bounding box, x-fastest.
    pub fn bbox_corners(&self) -> [Vector3<f64>; 8] {
        let (lo, hi) = self.bounding_box();
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }

    /// Area-weighted uniform surface samples, each with its face normal.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        (0..n)
            .map(|_| {
                let r = rng.random::<f64>() * total;
                let t = cumulative.partition_point(|&c| c <= r).min(self.triangles.len() - 1);
                let [a, b, c] = self.triangle(t);
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                (a + (b - a) * u + (c - a) * v, self.face_normal(t))
            })
            .collect()
    }

    fn orient_outward(mut self) -> Self {
        if self.signed_volume() < 0.0 {
            for t in &mut self.triangles {
                t.swap(1, 2);
            }
        }
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MESH_FORMAT_HEADER}").unwrap();
        for v in &self.vertices {
            writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "f {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let bad = || Error::Format(format!("mesh line {}: `{line}`", lineno + 1));
            match parts.next() {
                Some("v") => {
                    let xs: Vec<f64> = parts
                        .map(|p| p.parse::<f64>().map_err(|_| bad()))
                        .collect::<Result<_>>()?;
                    if xs.len() != 3 {
                        return Err(bad());
                    }
                    vertices.push(Vector3::new(xs[0], xs[1], xs[2]));
                }
                Some("f") => {
                    let is: Vec<usize> = parts
                        .map(|p| p.parse::<usize>().map_err(|_| bad()))
                        .collect::<Result<_>>()?;
                    if is.len() != 3 {
                        return Err(bad());
                    }
                    triangles.push([is[0], is[1], is[2]]);
                }
                _ => return Err(bad()),
            }
        }
        if triangles.iter().flatten().any(|&i| i >= vertices.len()) {
            return Err(Error::Format("face index out of range".into()));
        }
        Ok(Self { vertices, triangles })
    }
}

/// Solid of revolution about the local z axis from a profile of
/// `(z, radius)` pairs running from the top pole to the bottom pole.
fn revolve(profile: &[(f64, f64)], segments: usize) -> TriangleMesh {
    assert!(profile.len() >= 3 && segments >= 3);
    let rings = &profile[1..profile.len() - 1];
    let mut vertices = vec![Vector3::new(0.0, 0.0, profile[0].0)];
    for &(z, r) in rings {
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(Vector3::new(r * phi.cos(), r * phi.sin(), z));
        }
    }
    let bottom = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, profile[profile.len() - 1].0));

    let ring = |k: usize, s: usize| 1 + k * segments + s % segments;
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(0, s), ring(0, s + 1)]);
    }
    for k in 0..rings.len() - 1 {
        for s in 0..segments {
            let (a, b) = (ring(k, s), ring(k, s + 1));
            let (c, d) = (ring(k + 1, s), ring(k + 1, s + 1));
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    let last = rings.len() - 1;
    for s in 0..segments {
        triangles.push([bottom, ring(last, s + 1), ring(last, s)]);
    }
    TriangleMesh { vertices, triangles }.orient_outward()
}

/// Capsule along local +z from `z = 0` to `z = length`, hemispherical caps.
pub fn capsule(length: f64, radius: f64, segments: usize, cap_rings: usize) -> TriangleMesh {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut profile = vec![(length + radius, 0.0)];
    for i in 1..=cap_rings {
        let phi = half_pi * i as f64 / cap_rings as f64;
        profile.push((length + radius * phi.cos(), radius * phi.sin()));
    }
    for i in 0..cap_rings {
        let phi = half_pi * i as f64 / cap_rings as f64;
        profile.push((-radius * phi.sin(), radius * phi.cos()));
    }
    profile.push((-radius, 0.0));
    revolve(&profile, segments)
}

/// Capsule spanning the segment `start → end`.
pub fn capsule_between(start: &Vector3<f64>, end: &Vector3<f64>, radius: f64, segments: usize, cap_rings: usize) -> TriangleMesh {
    let axis = end - start;
    let length = axis.norm();
    let z = axis / length;
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    let frame = Matrix3::from_columns(&[x, y, z]);
    capsule(length, radius, segments, cap_rings).transformed(&frame, start)
}

/// Latitude–longitude sphere scaled into an ellipsoid.
pub fn ellipsoid(semi_axes: &Vector3<f64>, segments: usize, rings: usize) -> TriangleMesh {
    let mut profile = vec![(1.0, 0.0)];
    for i in 1..rings {
        let theta = std::f64::consts::PI * i as f64 / rings as f64;
        profile.push((theta.cos(), theta.sin()));
    }
    profile.push((-1.0, 0.0));
    let mut m = revolve(&profile, segments);
    for v in &mut m.vertices {
        *v = v.component_mul(semi_axes);
    }
    m
}

pub fn cuboid(half_extents: &Vector3<f64>) -> TriangleMesh {
    let h = half_extents;
    let vertices = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let triangles = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh { vertices, triangles }.orient_outward()
}

/// Closed cylinder along local z, centered at the origin.
pub fn cylinder(radius: f64, half_height: f64, segments: usize) -> TriangleMesh {
    revolve(
        &[
            (half_height, 0.0),
            (half_height, radius),
            (-half_height, radius),
            (-half_height, 0.0),
        ],
        segments,
    )
}

/// Icosahedron refined `subdivisions` times and projected onto the sphere.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vs: &mut Vec<Vector3<f64>>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vs.push(((vs[a] + vs[b]) * 0.5).normalize());
                vs.len() - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for &[a, b, c] in &triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriangleMesh { vertices, triangles }.orient_outward()
}
