//! Exact signed distance to watertight triangle meshes and the query sampler
//! that produces ground-truth `(p, d_hand, d_obj)` triples.
//!
//! Distances are a brute-force scan over all triangles; the inside test is
//! the generalized winding number, so overlapping closed components (the
//! capsule-per-bone hand) are classified correctly.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::mesh::TriangleMesh;
use crate::{Error, Result};

/// Targets are clamped to this magnitude before entering the loss.
pub const SDF_CLAMP: f64 = 0.1;
pub const NEAR_SURFACE_FRACTION: f64 = 0.7;
pub const NEAR_SURFACE_SIGMA: f64 = 0.02;
pub const BOX_INFLATION: f64 = 1.2;

/// Closest point on the closed triangle `abc` to `p` and its distance.
pub fn point_triangle_distance(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Result<(f64, Vector3<f64>)> {
    let [a, b, c] = tri;
    if (b - a).cross(&(c - a)).norm() * 0.5 <= 1e-12 {
        return Err(Error::DegenerateTriangle(format!("{a:?} {b:?} {c:?}")));
    }
    let q = closest_point_on_triangle(p, a, b, c);
    Ok(((p - q).norm(), q))
}

// Voronoi-region walk (vertex, edge, then face regions).
fn closest_point_on_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Generalized winding number: total signed solid angle over `4π`.
pub fn winding_number(p: &Vector3<f64>, mesh: &TriangleMesh) -> f64 {
    let mut total = 0.0;
    for &[i, j, k] in &mesh.triangles {
        let a = mesh.vertices[i] - p;
        let b = mesh.vertices[j] - p;
        let c = mesh.vertices[k] - p;
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

pub fn unsigned_distance(p: &Vector3<f64>, mesh: &TriangleMesh) -> Result<f64> {
    let mut best = f64::INFINITY;
    for t in 0..mesh.triangles.len() {
        let (d, _) = point_triangle_distance(p, &mesh.triangle(t))?;
        best = best.min(d);
    }
    Ok(best)
}

/// Negative strictly inside the mesh.
pub fn signed_distance(p: &Vector3<f64>, mesh: &TriangleMesh) -> Result<f64> {
    let d = unsigned_distance(p, mesh)?;
    Ok(if winding_number(p, mesh) > 0.5 { -d } else { d })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum QueryKind {
    NearHand = 0,
    NearObject = 1,
    Uniform = 2,
}

impl QueryKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::NearHand),
            1 => Some(Self::NearObject),
            2 => Some(Self::Uniform),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub p: Vector3<f64>,
    pub d_hand: f64,
    pub d_obj: f64,
    pub kind: QueryKind,
}

/// Axis-aligned query volume; also defines the normalization cube used by the
/// Fourier encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
}

impl QueryBox {
    /// Joint bounding box of both meshes, inflated about its center.
    pub fn around(hand: &TriangleMesh, obj: &TriangleMesh, inflation: f64) -> Self {
        let (hl, hh) = hand.bounding_box();
        let (ol, oh) = obj.bounding_box();
        let lo = hl.inf(&ol);
        let hi = hh.sup(&oh);
        Self {
            center: (lo + hi) * 0.5,
            half_extents: (hi - lo) * 0.5 * inflation,
        }
    }

    /// Half-size of the enclosing cube.
    pub fn cube_half_extent(&self) -> f64 {
        self.half_extents.max()
    }
}

/// Draws `n` queries: with probability 0.7 a surface point (hand or object
/// with equal odds) pushed along its normal by `N(0, 2 cm)`, otherwise a
/// uniform point in the inflated scene box. Deterministic per `(seed, n)`.
pub fn sample_queries(hand: &TriangleMesh, obj: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<SdfSample>> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample_queries needs n > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, NEAR_SURFACE_SIGMA).expect("valid sigma");
    let qbox = QueryBox::around(hand, obj, BOX_INFLATION);
    let points: Vec<(Vector3<f64>, QueryKind)> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < NEAR_SURFACE_FRACTION {
                let (mesh, kind) = if rng.random::<bool>() {
                    (hand, QueryKind::NearHand)
                } else {
                    (obj, QueryKind::NearObject)
                };
                let (s, nrm) = mesh.sample_surface(1, &mut rng)[0];
                (s + nrm * normal.sample(&mut rng), kind)
            } else {
                let u = Vector3::from_fn(|i, _| rng.random_range(-1.0..=1.0) * qbox.half_extents[i]);
                (qbox.center + u, QueryKind::Uniform)
            }
        })
        .collect();
    points
        .into_iter()
        .map(|(p, kind)| {
            Ok(SdfSample {
                p,
                d_hand: signed_distance(&p, hand)?,
                d_obj: signed_distance(&p, obj)?,
                kind,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cuboid, cylinder, icosphere};
    use nalgebra::Matrix3;

    #[test]
    fn point_triangle_examples() {
        let tri = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
        let (d, q) = point_triangle_distance(&(centroid + Vector3::new(0.0, 0.0, 0.7)), &tri).unwrap();
        assert!((d - 0.7).abs() < 1e-15);
        assert!((q - centroid).norm() < 1e-15);
        assert_eq!(point_triangle_distance(&tri[1], &tri).unwrap().0, 0.0);
        let degenerate = [tri[0], tri[1], tri[1] * 2.0];
        assert!(matches!(
            point_triangle_distance(&Vector3::zeros(), &degenerate),
            Err(Error::DegenerateTriangle(_))
        ));
    }

    #[test]
    fn cube_signed_distance() {
        let cube = cuboid(&Vector3::repeat(0.5));
        assert!((signed_distance(&Vector3::zeros(), &cube).unwrap() + 0.5).abs() < 1e-15);
        assert!((signed_distance(&Vector3::new(1.5, 0.0, 0.0), &cube).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn winding_number_examples() {
        let s = icosphere(1.0, 2);
        assert!((winding_number(&Vector3::zeros(), &s) - 1.0).abs() < 1e-6);
        assert!(winding_number(&Vector3::new(10.0, 0.0, 0.0), &s).abs() < 1e-6);
    }

    #[test]
    fn sign_flips_across_face() {
        let m = cylinder(0.03, 0.05, 16).transformed(&Matrix3::identity(), &Vector3::new(0.0, 0.0, 0.5));
        for t in [0usize, 7, 20, 40] {
            let [a, b, c] = m.triangle(t);
            let centroid = (a + b + c) / 3.0;
            let n = m.face_normal(t);
            let mut lo = -1e-3;
            let mut hi = 1e-3;
            assert!(signed_distance(&(centroid + n * lo), &m).unwrap() < 0.0);
            assert!(signed_distance(&(centroid + n * hi), &m).unwrap() > 0.0);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if signed_distance(&(centroid + n * mid), &m).unwrap() < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!(lo.abs() < 1e-9 && hi.abs() < 1e-9, "crossing at {lo}..{hi}");
        }
    }

    #[test]
    fn sample_queries_is_deterministic_and_exact() {
        let hand = icosphere(0.05, 1).transformed(&Matrix3::identity(), &Vector3::new(0.0, 0.0, 0.5));
        let obj = cuboid(&Vector3::new(0.03, 0.02, 0.04)).transformed(&Matrix3::identity(), &Vector3::new(0.06, 0.0, 0.5));
        assert!(matches!(sample_queries(&hand, &obj, 0, 1), Err(Error::InvalidConfig(_))));
        let a = sample_queries(&hand, &obj, 1, 9).unwrap();
        let b = sample_queries(&hand, &obj, 1, 9).unwrap();
        assert_eq!(a, b);
        let many = sample_queries(&hand, &obj, 200, 3).unwrap();
        for s in &many {
            assert_eq!(s.d_hand, signed_distance(&s.p, &hand).unwrap());
            assert_eq!(s.d_obj, signed_distance(&s.p, &obj).unwrap());
        }
    }
}
