use maskhoi_core::geometry::axis_angle;
use maskhoi_core::hand::{HandParams, HandSkeleton};
use maskhoi_core::mesh::{cuboid, cylinder, ellipsoid, icosphere, TriangleMesh};
use maskhoi_core::sdf::{point_triangle_distance, sample_queries, signed_distance, winding_number, QueryKind};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn random_meshes() -> Vec<TriangleMesh> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bases = vec![
        cuboid(&Vector3::new(0.3, 0.5, 0.2)),
        cylinder(0.25, 0.4, 12),
        icosphere(0.4, 1),
        ellipsoid(&Vector3::new(0.5, 0.2, 0.3), 10, 6),
        cuboid(&Vector3::new(0.1, 0.1, 0.6)),
        cylinder(0.5, 0.1, 7),
    ];
    bases
        .into_iter()
        .map(|m| {
            let r = axis_angle(&rand_vec(&mut rng, 1.0), rng.random_range(0.0..3.0));
            m.transformed(&r, &rand_vec(&mut rng, 0.2))
        })
        .collect()
}

// Möller–Trumbore; returns the ray parameter of a hit.
fn ray_hit(o: &Vector3<f64>, d: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let h = d.cross(&e2);
    let a = e1.dot(&h);
    if a.abs() < 1e-14 {
        return None;
    }
    let s = o - tri[0];
    let u = s.dot(&h) / a;
    let q = s.cross(&e1);
    let v = d.dot(&q) / a;
    let t = e2.dot(&q) / a;
    (u >= 0.0 && v >= 0.0 && u + v <= 1.0 && t > 0.0).then_some(t)
}

fn parity_inside(p: &Vector3<f64>, mesh: &TriangleMesh, rng: &mut ChaCha8Rng) -> bool {
    // irrational-looking directions avoid edge and vertex grazing
    let d = Vector3::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)).normalize();
    let hits = (0..mesh.triangles.len()).filter(|&t| ray_hit(p, &d, &mesh.triangle(t)).is_some()).count();
    hits % 2 == 1
}

// Projection onto the plane, falling back to the three edge segments.
fn brute_triangle_distance(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> f64 {
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).normalize();
    let q = p - n * n.dot(&(p - tri[0]));
    let inside = (0..3).all(|i| {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        (b - a).cross(&(q - a)).dot(&n) >= 0.0
    });
    if inside {
        return (p - q).norm();
    }
    (0..3)
        .map(|i| {
            let a = tri[i];
            let b = tri[(i + 1) % 3];
            let t = ((p - a).dot(&(b - a)) / (b - a).norm_squared()).clamp(0.0, 1.0);
            (p - (a + (b - a) * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

// Dense barycentric sampling, then repeated zoomed re-sampling around the
// best sample; the squared distance is convex so the zoom converges.
fn dense_sampling_distance(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> f64 {
    let eval = |u: f64, v: f64| (tri[0] + (tri[1] - tri[0]) * u + (tri[2] - tri[0]) * v - p).norm();
    let n = 60;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=n {
        for j in 0..=(n - i) {
            let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
            let d = eval(u, v);
            if d < best.0 {
                best = (d, u, v);
            }
        }
    }
    let mut win = 2.0 / n as f64;
    for _ in 0..30 {
        let (_, cu, cv) = best;
        for i in -10..=10 {
            for j in -10..=10 {
                let mut u = (cu + win * i as f64 / 10.0).max(0.0);
                let mut v = (cv + win * j as f64 / 10.0).max(0.0);
                if u + v > 1.0 {
                    let s = u + v;
                    u /= s;
                    v /= s;
                }
                let d = eval(u, v);
                if d < best.0 {
                    best = (d, u, v);
                }
            }
        }
        win *= 0.5;
    }
    best.0
}

#[test]
fn point_triangle_matches_dense_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 10_000 {
        let tri = [rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0)];
        if (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() < 1e-3 {
            continue;
        }
        let p = rand_vec(&mut rng, 1.5);
        let (d, q) = point_triangle_distance(&p, &tri).unwrap();
        let oracle = dense_sampling_distance(&p, &tri);
        assert!((d - oracle).abs() < 1e-6, "{d} vs {oracle}");
        assert!(((p - q).norm() - d).abs() < 1e-12);
        checked += 1;
    }
}

#[test]
fn degenerate_triangle_is_rejected() {
    let v = Vector3::new(1.0, 2.0, 3.0);
    let tri = [v, v * 2.0, v * 3.0];
    assert!(point_triangle_distance(&Vector3::zeros(), &tri).is_err());
}

#[test]
fn winding_matches_ray_parity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let meshes = random_meshes();
    for m in &meshes {
        m.validate().unwrap();
    }
    let mut inside_count = 0;
    for i in 0..1000 {
        let m = &meshes[i % meshes.len()];
        let p = rand_vec(&mut rng, 0.45);
        let w = winding_number(&p, m);
        let inside = w > 0.5;
        assert!((w - w.round()).abs() < 1e-6, "winding {w} is not integral");
        assert_eq!(inside, parity_inside(&p, m, &mut rng), "point {p:?}");
        inside_count += inside as usize;
    }
    assert!(inside_count > 100 && inside_count < 900, "{inside_count} inside");
}

#[test]
fn winding_number_examples() {
    let s = icosphere(1.0, 2);
    assert!((winding_number(&Vector3::zeros(), &s) - 1.0).abs() < 1e-6);
    assert!(winding_number(&Vector3::new(10.0, 0.0, 0.0), &s).abs() < 1e-6);
}

#[test]
fn signed_distance_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let meshes = random_meshes();
    for i in 0..1000 {
        let m = &meshes[i % meshes.len()];
        let p = rand_vec(&mut rng, 0.8);
        let unsigned = (0..m.triangles.len())
            .map(|t| brute_triangle_distance(&p, &m.triangle(t)))
            .fold(f64::INFINITY, f64::min);
        let oracle = if parity_inside(&p, m, &mut rng) { -unsigned } else { unsigned };
        let d = signed_distance(&p, m).unwrap();
        assert!((d - oracle).abs() < 1e-9, "{d} vs {oracle}");
    }
}

#[test]
fn unit_cube_examples() {
    let cube = cuboid(&Vector3::new(0.5, 0.5, 0.5));
    assert!((signed_distance(&Vector3::zeros(), &cube).unwrap() + 0.5).abs() < 1e-12);
    assert!((signed_distance(&Vector3::new(1.5, 0.0, 0.0), &cube).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn signed_distance_is_one_lipschitz_on_the_hand() {
    let skel = HandSkeleton::template();
    let mesh = TriangleMesh::new(
        skel.forward_kinematics(&HandParams::default()).unwrap().verts,
        skel.mesh.triangles.clone(),
    );
    let (lo, hi) = mesh.bounding_box();
    let c = (lo + hi) / 2.0;
    let ext = (hi - lo).max() * 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let p = c + rand_vec(&mut rng, ext);
        let q = p + rand_vec(&mut rng, 0.02);
        let dp = signed_distance(&p, &mesh).unwrap();
        let dq = signed_distance(&q, &mesh).unwrap();
        assert!((dp - dq).abs() <= (p - q).norm() + 1e-12);
    }
}

#[test]
fn gradient_has_unit_norm_off_the_medial_axis() {
    let h = Vector3::new(0.3, 0.2, 0.25);
    let cube = cuboid(&h);
    let sphere = icosphere(0.3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let eps = 1e-6;
    let grad = |m: &TriangleMesh, p: &Vector3<f64>| {
        Vector3::from_fn(|i, _| {
            let mut e = Vector3::zeros();
            e[i] = eps;
            (signed_distance(&(p + e), m).unwrap() - signed_distance(&(p - e), m).unwrap()) / (2.0 * eps)
        })
    };
    let mut accepted = 0;
    while accepted < 300 {
        let p = rand_vec(&mut rng, 0.5);
        let d = signed_distance(&p, &cube).unwrap();
        if d.abs() < 1e-3 {
            continue;
        }
        if d < 0.0 {
            // inside the box the medial axis is where two faces tie
            let mut gaps: Vec<f64> = (0..3).map(|i| h[i] - p[i].abs()).collect();
            gaps.sort_by(f64::total_cmp);
            if gaps[1] - gaps[0] < 1e-3 {
                continue;
            }
        }
        assert!((grad(&cube, &p).norm() - 1.0).abs() < 1e-3);
        accepted += 1;
    }
    for _ in 0..100 {
        let p = rand_vec(&mut rng, 0.6);
        if p.norm() < 0.31 {
            continue;
        }
        assert!((grad(&sphere, &p).norm() - 1.0).abs() < 1e-3);
    }
}

#[test]
fn near_surface_fraction_is_seventy_percent() {
    let hand = cuboid(&Vector3::new(0.04, 0.08, 0.02));
    let obj = icosphere(0.03, 1).transformed(&nalgebra::Matrix3::identity(), &Vector3::new(0.06, 0.0, 0.0));
    let samples = sample_queries(&hand, &obj, 10_000, 3).unwrap();
    let near = samples.iter().filter(|s| s.kind != QueryKind::Uniform).count() as f64 / 1e4;
    assert!((near - 0.7).abs() < 0.02, "near fraction {near}");
    let near_hand = samples.iter().filter(|s| s.kind == QueryKind::NearHand).count() as f64;
    let near_obj = samples.iter().filter(|s| s.kind == QueryKind::NearObject).count() as f64;
    assert!((near_hand / (near_hand + near_obj) - 0.5).abs() < 0.03);
    for s in samples.iter().step_by(97) {
        assert_eq!(s.d_hand, signed_distance(&s.p, &hand).unwrap());
        assert_eq!(s.d_obj, signed_distance(&s.p, &obj).unwrap());
    }
}
