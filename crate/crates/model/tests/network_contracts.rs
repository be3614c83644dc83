use maskhoi_model::gradcheck::{toy_config, ToyInstance};
use maskhoi_model::network::{MaskHoiNet, ModelConfig, Sample, NUM_HAND_QUERIES, NUM_HEATMAPS, POSE_DIM, SHAPE_DIM};
use maskhoi_model::optim::{lr_schedule, AdamState, AdamW};
use maskhoi_model::params::ParamStore;
use maskhoi_model::tape::Graph;
use maskhoi_model::tensor::Tensor;
use proptest::prelude::*;

fn outputs_bits(net: &MaskHoiNet, s: &Sample<'_>) -> Vec<Vec<u64>> {
    let mut g = Graph::new(&net.params);
    let o = net.forward(&mut g, s).unwrap();
    [o.encoded, o.y_hand, o.y_obj, o.f_hand[1], o.f_obj[0], o.seg, o.heatmap, o.sdf_hand, o.sdf_obj, o.pose, o.hand_rot, o.hand_shape]
        .iter()
        .map(|&n| g.value(n).data.iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn masked_pixels_do_not_reach_any_output() {
    let cfg = ModelConfig::desk();
    let net = MaskHoiNet::new(cfg.clone()).unwrap();
    let cfg_toy = toy_config();
    let toy = ToyInstance::new(&cfg_toy, 1).unwrap();
    let mut image = maskhoi_core::image::RgbImage::new(64, 64);
    for y in 0..64 {
        for x in 0..64 {
            image.set(x, y, [(x * 4) as u8, (y * 4) as u8, ((x + y) * 2) as u8]);
        }
    }
    let keep: Vec<bool> = (0..64).map(|i| (i * 7) % 4 == 0).collect();
    let f = 1.72 * 64.0;
    let cam = maskhoi_core::geometry::CameraIntrinsics::new(f, f, 31.5, 31.5).unwrap();
    let s = Sample { image: &image, keep: &keep, queries: &toy.queries, camera: &cam };
    let before = outputs_bits(&net, &s);
    let mut altered = image.clone();
    for p in (0..64).filter(|&p| !keep[p]) {
        for y in 0..8 {
            for x in 0..8 {
                altered.set((p % 8) * 8 + x, (p / 8) * 8 + y, [255, 0, (x * y) as u8]);
            }
        }
    }
    let s2 = Sample { image: &altered, ..s };
    assert_eq!(outputs_bits(&net, &s2), before);
}

#[test]
fn output_shapes() {
    let cfg = ModelConfig::desk();
    let net = MaskHoiNet::new(cfg.clone()).unwrap();
    let toy = ToyInstance::new(&toy_config(), 2).unwrap();
    let image = maskhoi_core::image::RgbImage::filled(64, 64, [90, 120, 200]);
    let f = 1.72 * 64.0;
    let cam = maskhoi_core::geometry::CameraIntrinsics::new(f, f, 31.5, 31.5).unwrap();
    for n_keep in [1, 5, 40, 64] {
        let keep: Vec<bool> = (0..64).map(|i| i < n_keep).collect();
        let mut g = Graph::new(&net.params);
        let o = net.forward(&mut g, &Sample { image: &image, keep: &keep, queries: &toy.queries, camera: &cam }).unwrap();
        assert_eq!(g.value(o.encoded).shape(), (n_keep, 64));
        assert_eq!(g.value(o.y_hand).shape(), (64, 64));
        assert_eq!(g.value(o.y_obj).shape(), (64, 64));
        assert_eq!(g.value(o.f_hand[0]).shape(), (64, 32));
        assert_eq!(g.value(o.f_obj[1]).shape(), (256, 32));
        assert_eq!(g.value(o.seg).shape(), (256, 3));
        assert_eq!(g.value(o.heatmap).shape(), (256, NUM_HEATMAPS));
        assert_eq!(g.value(o.sdf_hand).shape(), (toy.queries.len(), 1));
        assert_eq!(g.value(o.pose).shape(), (1, POSE_DIM));
        assert_eq!(g.value(o.hand_rot).shape(), (NUM_HAND_QUERIES - 1, 6));
        assert_eq!(g.value(o.hand_shape).shape(), (1, SHAPE_DIM));
    }
    let none = vec![false; 64];
    let mut g = Graph::new(&net.params);
    assert!(net.forward(&mut g, &Sample { image: &image, keep: &none, queries: &toy.queries, camera: &cam }).is_err());
    let short = vec![true; 10];
    assert!(net.forward(&mut g, &Sample { image: &image, keep: &short, queries: &toy.queries, camera: &cam }).is_err());
    let behind = [nalgebra::Vector3::new(0.0, 0.0, -0.2)];
    let keep = vec![true; 64];
    assert!(net.forward(&mut g, &Sample { image: &image, keep: &keep, queries: &behind, camera: &cam }).is_err());
}

#[test]
fn seg_softmax_rows_sum_to_one() {
    let net = MaskHoiNet::new(toy_config()).unwrap();
    let toy = ToyInstance::new(&net.cfg, 3).unwrap();
    let mut g = Graph::new(&net.params);
    let o = net.forward(&mut g, &toy.sample()).unwrap();
    let p = g.softmax_rows(o.seg);
    for r in 0..g.value(p).rows {
        let s: f64 = g.value(p).row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn cloned_decoders_agree() {
    let mut net = MaskHoiNet::new(toy_config()).unwrap();
    let toy = ToyInstance::new(&net.cfg, 4).unwrap();
    let names: Vec<String> = net.params.entries.iter().map(|p| p.name.clone()).collect();
    for n in names.iter().filter(|n| n.starts_with("dec_hand.")) {
        let src = net.params.find(n).unwrap();
        let dst = net.params.find(&n.replacen("dec_hand.", "dec_obj.", 1)).unwrap();
        *net.params.value_mut(dst) = net.params.value(src).clone();
    }
    let mut g = Graph::new(&net.params);
    let o = net.forward(&mut g, &toy.sample()).unwrap();
    assert_eq!(g.value(o.y_hand), g.value(o.y_obj));
}

fn zero(store: &mut ParamStore, prefix: &str, keep_bias: bool) {
    for p in store.entries.iter_mut().filter(|p| p.name.starts_with(prefix)) {
        if !(keep_bias && p.name.ends_with(".b")) {
            p.value.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn zero_weight_heads_return_their_bias() {
    let mut net = MaskHoiNet::new(toy_config()).unwrap();
    let toy = ToyInstance::new(&net.cfg, 5).unwrap();
    zero(&mut net.params, "pose.l2.w", false);
    zero(&mut net.params, "sdf_hand.l3.w", false);
    let b3 = net.params.find("sdf_hand.l3.b").unwrap();
    net.params.value_mut(b3).data[0] = 0.037;
    let mut g = Graph::new(&net.params);
    let o = net.forward(&mut g, &toy.sample()).unwrap();
    assert_eq!(g.value(o.pose).data, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5]);
    assert!(g.value(o.sdf_hand).data.iter().all(|&d| d == 0.037));
}

#[test]
fn identical_hand_queries_emit_identical_rotations() {
    let mut net = MaskHoiNet::new(toy_config()).unwrap();
    let toy = ToyInstance::new(&net.cfg, 6).unwrap();
    let q = net.params.find("hand.queries").unwrap();
    let first = net.params.value(q).row(0).to_vec();
    for r in 0..NUM_HAND_QUERIES {
        net.params.value_mut(q).row_mut(r).copy_from_slice(&first);
    }
    let mut g = Graph::new(&net.params);
    let o = net.forward(&mut g, &toy.sample()).unwrap();
    let rot = g.value(o.hand_rot);
    for r in 1..rot.rows {
        assert_eq!(rot.row(r), rot.row(0));
    }
}

#[test]
fn same_ray_same_encoding_same_sdf() {
    let net = MaskHoiNet::new(toy_config()).unwrap();
    let toy = ToyInstance::new(&net.cfg, 7).unwrap();
    let p = toy.queries[0];
    let mut g = Graph::new(&net.params);
    let o = net.forward(&mut g, &Sample { queries: &[p, p], ..toy.sample() }).unwrap();
    let d = &g.value(o.sdf_obj).data;
    assert_eq!(d[0], d[1]);
}

#[test]
fn forward_is_deterministic_and_init_is_seeded() {
    let a = MaskHoiNet::new(toy_config()).unwrap();
    let b = MaskHoiNet::new(toy_config()).unwrap();
    assert_eq!(a.params, b.params);
    let c = MaskHoiNet::new(ModelConfig { seed: 99, ..toy_config() }).unwrap();
    assert_ne!(a.params, c.params);
    let toy = ToyInstance::new(&a.cfg, 8).unwrap();
    assert_eq!(outputs_bits(&a, &toy.sample()), outputs_bits(&b, &toy.sample()));
}

/// Scalar AdamW written from the update rule.
fn reference_adamw(x0: f64, grads: &[f64], lrs: &[f64], wd: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0f64, 0.0f64);
    for (t, (&g, &lr)) in grads.iter().zip(lrs).enumerate() {
        m = (b1 * m + (1.0 - b1) * g) as f32 as f64;
        v = (b2 * v + (1.0 - b2) * g * g) as f32 as f64;
        let mh = m / (1.0 - b1.powi(t as i32 + 1));
        let vh = v / (1.0 - b2.powi(t as i32 + 1));
        x = (x - lr * (mh / (vh.sqrt() + eps) + wd * x)) as f32 as f64;
    }
    x
}

#[test]
fn adamw_matches_scalar_reference() {
    let grads = [0.3, -1.2, 0.05, 2.0, -0.7];
    let lrs = [1e-3, 2e-3, 5e-4, 1e-3, 0.0];
    for decay in [true, false] {
        let mut store = ParamStore::new();
        store.add("x", Tensor::from_vec(1, 1, vec![0.75]), decay);
        let mut st = AdamState::new(&store);
        let opt = AdamW { weight_decay: 0.05, ..AdamW::default() };
        for (g, lr) in grads.iter().zip(lrs) {
            opt.step(&mut store, &mut st, &[Tensor::from_vec(1, 1, vec![*g])], lr).unwrap();
        }
        let wd = if decay { 0.05 } else { 0.0 };
        assert_eq!(store.value(maskhoi_model::params::ParamId(0)).data[0], reference_adamw(0.75, &grads, &lrs, wd));
    }
}

#[test]
fn zero_lr_leaves_weights_unchanged() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::from_vec(1, 3, vec![0.5, -0.25, 0.125]), true);
    let before = store.clone();
    let mut st = AdamState::new(&store);
    AdamW::default().step(&mut store, &mut st, &[Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0])], 0.0).unwrap();
    assert_eq!(store, before);
}

proptest! {
    #[test]
    fn schedule_is_bounded_and_decays(total in 10u64..5000, warm_frac in 0.0f64..0.5, step in 0u64..6000) {
        let warmup = (warm_frac * total as f64) as u64;
        let lr = lr_schedule(step, total, 1e-3, warmup);
        prop_assert!((0.0..=1e-3).contains(&lr));
        if step >= warmup && step + 1 <= total {
            prop_assert!(lr_schedule(step + 1, total, 1e-3, warmup) <= lr + 1e-18);
        }
    }
}

#[test]
fn pose_head_ignores_token_order() {
    let net = MaskHoiNet::new(toy_config()).unwrap();
    let rows: Vec<f64> = (0..4 * 8).map(|i| ((i * 37) % 11) as f64 / 7.0 - 0.6).collect();
    let mut perm = Vec::new();
    for r in [2, 0, 3, 1] {
        perm.extend_from_slice(&rows[r * 8..(r + 1) * 8]);
    }
    let run = |data: Vec<f64>| {
        let mut g = Graph::new(&net.params);
        let y = g.constant(Tensor::from_vec(4, 8, data));
        let p = net.pose_head(&mut g, y);
        g.value(p).data.clone()
    };
    let (a, b) = (run(rows), run(perm));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-14);
    }
}
