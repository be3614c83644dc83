use maskhoi_core::geometry::CameraIntrinsics;
use maskhoi_core::hand::HandSkeleton;
use maskhoi_core::mesh::TriangleMesh;
use maskhoi_core::scene::{
    read_record, read_split, rasterize, sample_scene, verify_record, write_record, write_split, Manifest, RasterMesh,
    SceneConfig, DATASET_FORMAT_VERSION, SEG_BACKGROUND, SEG_HAND,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn invariants_hold_on_a_hundred_seeds() {
    let skel = HandSkeleton::template();
    let cfg = SceneConfig { sdf_samples: 64, ..Default::default() };
    let mut hand_pixels = 0;
    let mut obj_pixels = 0;
    for seed in 0..100 {
        let rec = sample_scene(seed, &cfg, &skel).unwrap();
        verify_record(&rec, &skel).unwrap();
        assert!((0.3..=0.8).contains(&rec.object_pose.translation.z));
        hand_pixels += rec.seg.iter().filter(|&&s| s == 1).count();
        obj_pixels += rec.seg.iter().filter(|&&s| s == 2).count();
        assert!(rec.keypoints2d.iter().all(|k| k.x.is_finite() && k.y.is_finite()));
    }
    // both parts are visible on average
    assert!(hand_pixels > 100 * 64 && obj_pixels > 100 * 32, "{hand_pixels} {obj_pixels}");
}

#[test]
fn invalid_config_is_rejected() {
    let skel = HandSkeleton::template();
    let cfg = SceneConfig { sdf_samples: 0, ..Default::default() };
    assert!(sample_scene(0, &cfg, &skel).is_err());
    let cfg = SceneConfig { max_flexion_deg: -5.0, ..Default::default() };
    assert!(sample_scene(0, &cfg, &skel).is_err());
}

fn orient(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

#[test]
fn single_triangle_covers_its_half_plane_pixel_set() {
    let k = CameraIntrinsics::new(40.0, 40.0, 15.5, 15.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let z = rng.random_range(0.5..2.0);
        let verts: Vec<Vector3<f64>> = (0..3)
            .map(|_| Vector3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.5..0.5) * z, z))
            .collect();
        let mesh = TriangleMesh::new(verts.clone(), vec![[0, 1, 2]]);
        let r = rasterize(&[RasterMesh { mesh: &mesh, label: SEG_HAND, color: [255.0; 3] }], &k, 32, 32).unwrap();
        // all three vertices share z, so the projection is a scaled copy
        let s: Vec<(f64, f64)> = verts.iter().map(|v| (k.fx * v.x / z + k.cx, k.fy * v.y / z + k.cy)).collect();
        let area = orient(s[0], s[1], s[2]);
        if area.abs() < 1e-9 {
            continue;
        }
        for y in 0..32 {
            for x in 0..32 {
                let p = (x as f64, y as f64);
                let e = [orient(s[1], s[2], p), orient(s[2], s[0], p), orient(s[0], s[1], p)];
                let inside = e.iter().all(|&v| v * area.signum() >= 0.0);
                let got = r.seg[y * 32 + x] == SEG_HAND;
                // pixel centers exactly on an edge may round either way
                let on_edge = e.iter().any(|v| v.abs() < 1e-9);
                if !on_edge {
                    assert_eq!(got, inside, "pixel ({x}, {y})");
                }
                if !got {
                    assert_eq!(r.seg[y * 32 + x], SEG_BACKGROUND);
                }
            }
        }
    }
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let skel = HandSkeleton::template();
    let cfg = SceneConfig { sdf_samples: 16, ..Default::default() };
    let records: Vec<_> = (100..104).map(|s| sample_scene(s, &cfg, &skel).unwrap()).collect();
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        split: "train".into(),
        count: records.len(),
        image_size: 64,
        patch_size: 8,
        seed_base: 100,
        sdf_samples_per_scene: 16,
    };
    let split = dir.path().join("train");
    write_split(&split, &manifest, &records, &skel).unwrap();
    let (m, back) = read_split(&split).unwrap();
    assert_eq!(m, manifest);
    assert_eq!(back, records);
    assert!(split.join("scene_00000.ppm").exists());
    let hand_mesh = std::fs::read_to_string(split.join("scene_00001_hand.mesh")).unwrap();
    TriangleMesh::from_text(&hand_mesh).unwrap().validate().unwrap();

    let single = dir.path().join("one.bin");
    write_record(&single, &records[0]).unwrap();
    assert_eq!(read_record(&single).unwrap(), records[0]);

    let meta = std::fs::read_to_string(split.join("meta.json")).unwrap();
    std::fs::write(split.join("meta.json"), meta.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
    let err = read_split(&split).unwrap_err().to_string();
    assert!(err.contains("unsupported dataset format version 9"), "{err}");
}
