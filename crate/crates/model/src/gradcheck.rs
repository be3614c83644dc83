//! Central finite-difference checks of the tape gradients on a toy-sized
//! model, covering every head and every supervision term.

use maskhoi_core::geometry::{axis_angle, matrix_to_rot6d, CameraIntrinsics, ObjectPose};
use maskhoi_core::hand::{HandParams, HandSkeleton};
use maskhoi_core::image::RgbImage;
use maskhoi_core::Result;
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{
    hand_loss, heatmap_targets, object_loss, sdf_loss, seg_heatmap_loss, supervise, Lambdas, SampleTargets,
    HEATMAP_SIGMA,
};
use crate::network::{MaskHoiNet, ModelConfig, Outputs, Sample, NUM_HEATMAPS, NUM_SEG_CLASSES};
use crate::params::ParamStore;
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor: central differences at this step carry about 1e-10
/// of round-off, so gradients below the floor are compared absolutely.
pub const REL_FLOOR: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(analytic, numeric)` at the worst entry.
    pub worst: (f64, f64),
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < MAX_REL_ERR
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Fourth-order central difference from evaluations at `±h` and `±2h`.
fn stencil(mut at: impl FnMut(f64) -> f64) -> f64 {
    let h = FD_STEP;
    let d1 = at(h) - at(-h);
    let d2 = at(2.0 * h) - at(-2.0 * h);
    (8.0 * d1 - d2) / (12.0 * h)
}

fn track(worst: &mut (f64, (f64, f64)), a: f64, n: f64) {
    let e = rel_err(a, n);
    if e > worst.0 {
        *worst = (e, (a, n));
    }
}

/// Compares `analytic` against finite differences of `f` around `x`.
pub fn check_vector(name: &str, x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> FdReport {
    let mut xs = x.to_vec();
    let mut worst = (0.0, (0.0, 0.0));
    for k in 0..x.len() {
        let n = stencil(|d| {
            xs[k] = x[k] + d;
            let v = f(&xs);
            xs[k] = x[k];
            v
        });
        track(&mut worst, analytic[k], n);
    }
    FdReport { name: name.to_string(), checked: x.len(), max_rel_err: worst.0, worst: worst.1 }
}

/// Compares parameter gradients (`None` meaning zero) against finite
/// differences of `f` with every parameter scalar perturbed in turn.
pub fn check_params(
    name: &str,
    store: &ParamStore,
    analytic: &[Option<Tensor>],
    f: impl Fn(&ParamStore) -> f64,
) -> FdReport {
    let mut s = store.clone();
    let mut worst = (0.0, (0.0, 0.0));
    let mut checked = 0;
    for (i, p) in store.entries.iter().enumerate() {
        for k in 0..p.value.len() {
            let x = p.value.data[k];
            let n = stencil(|d| {
                s.entries[i].value.data[k] = x + d;
                let v = f(&s);
                s.entries[i].value.data[k] = x;
                v
            });
            let a = analytic[i].as_ref().map_or(0.0, |t| t.data[k]);
            track(&mut worst, a, n);
            checked += 1;
        }
    }
    FdReport { name: name.to_string(), checked, max_rel_err: worst.0, worst: worst.1 }
}

/// Toy sizes: 16×16 input, 2×2 patch grid, width 8.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 8,
        dim: 8,
        enc_depth: 1,
        enc_heads: 2,
        dec_depth: 1,
        dec_heads: 2,
        mlp_ratio: 2,
        feat_channels: 4,
        sdf_hidden: 8,
        head_hidden: 8,
        fourier_bands: 2,
        query_center: [0.0, 0.0, 0.55],
        query_half_extent: 0.3,
        seed: 3,
    }
}

/// Random image, two kept patches out of four, and queries in front of
/// the camera.
pub struct ToyInstance {
    pub image: RgbImage,
    pub keep: Vec<bool>,
    pub queries: Vec<Vector3<f64>>,
    pub camera: CameraIntrinsics,
    pub targets: SampleTargets,
}

impl ToyInstance {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.image_size;
        let mut image = RgbImage::new(s, s);
        for y in 0..s {
            for x in 0..s {
                image.set(x, y, [rng.random(), rng.random(), rng.random()]);
            }
        }
        let keep = (0..cfg.num_patches()).map(|i| i % 2 == 0).collect();
        let queries = (0..6)
            .map(|_| {
                Vector3::new(rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06), rng.random_range(0.45..0.65))
            })
            .collect();
        let f = 1.72 * s as f64;
        let c = (s as f64 - 1.0) / 2.0;
        let camera = CameraIntrinsics::new(f, f, c, c)?;
        let fine = cfg.fine_grid();
        let labels = (0..fine * fine).map(|_| rng.random_range(0..NUM_SEG_CLASSES as u8)).collect();
        let kps: Vec<Vector2<f64>> =
            (0..NUM_HEATMAPS).map(|_| Vector2::new(rng.random_range(0.0..s as f64), rng.random_range(0.0..s as f64))).collect();
        let heatmaps = heatmap_targets(&kps, s, fine, HEATMAP_SIGMA)?;
        let sdf_hand = (0..6).map(|_| rng.random_range(-0.15..0.15)).collect();
        let sdf_obj = (0..6).map(|_| rng.random_range(-0.15..0.15)).collect();
        let mut hand = HandParams::default();
        for r in hand.rotations.iter_mut() {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            *r = matrix_to_rot6d(&axis_angle(&axis.normalize(), rng.random_range(-0.6..0.6)))?;
        }
        for b in hand.beta.iter_mut() {
            *b = rng.random_range(-0.03..0.03);
        }
        hand.root_translation = Vector3::new(0.02, -0.01, 0.55);
        let r = axis_angle(&Vector3::new(0.3, 1.0, -0.2).normalize(), 0.7);
        let pose = ObjectPose { rotation: matrix_to_rot6d(&r)?, translation: Vector3::new(0.03, 0.01, 0.52) };
        let targets = SampleTargets { labels, heatmaps, sdf_hand, sdf_obj, hand, pose };
        Ok(Self { image, keep, queries, camera, targets })
    }

    pub fn sample(&self) -> Sample<'_> {
        Sample { image: &self.image, keep: &self.keep, queries: &self.queries, camera: &self.camera }
    }
}

/// Fixed random weights `R` per picked output; objective `Σ R ⊙ out`.
fn projection(shapes: &[(usize, usize)], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|&(r, c)| Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

fn head_check(
    name: &str,
    net: &MaskHoiNet,
    toy: &ToyInstance,
    pick: fn(&Outputs) -> Vec<NodeId>,
) -> Result<FdReport> {
    let objective = |store: &ParamStore, weights: Option<&[Tensor]>| -> Result<(f64, Vec<(NodeId, Tensor)>, Vec<(usize, usize)>)> {
        let mut g = Graph::new(store);
        let out = net.forward(&mut g, &toy.sample())?;
        let nodes = pick(&out);
        let shapes: Vec<_> = nodes.iter().map(|&n| g.value(n).shape()).collect();
        let Some(w) = weights else { return Ok((0.0, Vec::new(), shapes)) };
        let mut total = 0.0;
        let mut seeds = Vec::new();
        for (&n, r) in nodes.iter().zip(w) {
            total += g.value(n).data.iter().zip(&r.data).map(|(a, b)| a * b).sum::<f64>();
            seeds.push((n, r.clone()));
        }
        Ok((total, seeds, shapes))
    };
    let (_, _, shapes) = objective(&net.params, None)?;
    let weights = projection(&shapes, 17);
    let mut g = Graph::new(&net.params);
    let out = net.forward(&mut g, &toy.sample())?;
    let seeds: Vec<_> = pick(&out).into_iter().zip(&weights).map(|(n, r)| (n, r.clone())).collect();
    let analytic = g.backward(&seeds).into_param_grads();
    Ok(check_params(name, &net.params, &analytic, |s| objective(s, Some(&weights)).expect("toy forward").0))
}

/// Every head and loss of the toy model.
pub fn run_suite() -> Result<Vec<FdReport>> {
    let cfg = toy_config();
    let net = MaskHoiNet::new(cfg.clone())?;
    let toy = ToyInstance::new(&cfg, 11)?;
    let skel = HandSkeleton::template();
    let mut reports = vec![
        head_check("encoder", &net, &toy, |o| vec![o.encoded])?,
        head_check("dual decoder", &net, &toy, |o| vec![o.y_hand, o.y_obj])?,
        head_check("feature head", &net, &toy, |o| vec![o.f_hand[0], o.f_hand[1], o.f_obj[0], o.f_obj[1]])?,
        head_check("sdf head", &net, &toy, |o| vec![o.sdf_hand, o.sdf_obj])?,
        head_check("seg head", &net, &toy, |o| vec![o.seg])?,
        head_check("heatmap head", &net, &toy, |o| vec![o.heatmap])?,
        head_check("pose head", &net, &toy, |o| vec![o.pose])?,
        head_check("hand head", &net, &toy, |o| vec![o.hand_rot, o.hand_shape])?,
    ];
    reports.push(sdf_feature_check(&net, &toy)?);
    reports.extend(loss_checks(&net, &toy, &skel)?);
    Ok(reports)
}

/// SDF head gradient with respect to the feature grids it samples.
fn sdf_feature_check(net: &MaskHoiNet, toy: &ToyInstance) -> Result<FdReport> {
    let cfg = &net.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = cfg.feat_channels;
    let n1 = cfg.num_patches();
    let n2 = cfg.fine_grid() * cfg.fine_grid();
    let x: Vec<f64> = (0..(n1 + n2) * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = |x: &[f64], grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new(&net.params);
        let f1 = g.variable(Tensor::from_vec(n1, c, x[..n1 * c].to_vec()));
        let f2 = g.variable(Tensor::from_vec(n2, c, x[n1 * c..].to_vec()));
        let d = net.sdf_head(&mut g, &net.sdf_hand, [f1, f2], &toy.queries, &toy.camera)?;
        let r: Vec<f64> = (0..toy.queries.len()).map(|i| 1.0 + i as f64 * 0.5).collect();
        let v = g.value(d).data.iter().zip(&r).map(|(a, b)| a * b).sum();
        if !grad {
            return Ok((v, Vec::new()));
        }
        let gr = g.backward(&[(d, Tensor::from_vec(r.len(), 1, r))]);
        let mut out = gr.node(f1).expect("feature gradient").data.clone();
        out.extend_from_slice(&gr.node(f2).expect("feature gradient").data);
        Ok((v, out))
    };
    let (_, analytic) = eval(&x, true)?;
    Ok(check_vector("sdf head wrt features", &x, &analytic, |x| eval(x, false).expect("toy sdf").0))
}

fn loss_checks(net: &MaskHoiNet, toy: &ToyInstance, skel: &HandSkeleton) -> Result<Vec<FdReport>> {
    let t = &toy.targets;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut out = Vec::new();

    let m = t.labels.len();
    let logits: Vec<f64> = (0..m * NUM_SEG_CLASSES).map(|_| rng.random_range(-2.0..2.0)).collect();
    let heat: Vec<f64> = (0..m * NUM_HEATMAPS).map(|_| rng.random_range(-0.5..1.0)).collect();
    let mut x = logits.clone();
    x.extend_from_slice(&heat);
    let split = |x: &[f64]| {
        (
            Tensor::from_vec(m, NUM_SEG_CLASSES, x[..m * NUM_SEG_CLASSES].to_vec()),
            Tensor::from_vec(m, NUM_HEATMAPS, x[m * NUM_SEG_CLASSES..].to_vec()),
        )
    };
    let (lg, hm) = split(&x);
    let (_, gl, gh) = seg_heatmap_loss(&lg, &t.labels, &hm, &t.heatmaps)?;
    let mut analytic = gl.data;
    analytic.extend_from_slice(&gh.data);
    out.push(check_vector("2D loss", &x, &analytic, |x| {
        let (lg, hm) = split(x);
        seg_heatmap_loss(&lg, &t.labels, &hm, &t.heatmaps).expect("2D loss").0
    }));

    let n = t.sdf_hand.len();
    let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.2..0.2)).collect();
    let (_, gh, go) = sdf_loss(&x[..n], &t.sdf_hand, &x[n..], &t.sdf_obj)?;
    let analytic: Vec<f64> = gh.into_iter().chain(go).collect();
    out.push(check_vector("3D loss", &x, &analytic, |x| {
        sdf_loss(&x[..n], &t.sdf_hand, &x[n..], &t.sdf_obj).expect("3D loss").0
    }));

    let mut pred = t.hand.to_vec();
    for v in pred.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let (_, g) = hand_loss(&HandParams::from_slice(&pred)?, &t.hand, skel)?;
    out.push(check_vector("hand loss", &pred, &g.to_vec(), |x| {
        hand_loss(&HandParams::from_slice(x).expect("hand layout"), &t.hand, skel).expect("hand loss").0
    }));

    let mut pose = t.pose.to_array().to_vec();
    for v in pose.iter_mut() {
        *v += rng.random_range(0.01..0.05) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let (_, g) = object_loss(&ObjectPose::from_slice(&pose), &t.pose);
    out.push(check_vector("object loss", &pose, &g, |x| object_loss(&ObjectPose::from_slice(x), &t.pose).0));

    // full objective back to every parameter
    let lambdas = Lambdas { l2d: 0.7, l3d: 1.3, lh: 0.9, lo: 1.1 };
    let total = |store: &ParamStore, grads: bool| -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut g = Graph::new(store);
        let o = net.forward(&mut g, &toy.sample())?;
        let (bundle, seeds) = supervise(&g, &o, t, lambdas, skel, 1.0)?;
        let pg = if grads { g.backward(&seeds).into_param_grads() } else { Vec::new() };
        Ok((bundle.total, pg))
    };
    let (_, analytic) = total(&net.params, true)?;
    out.push(check_params("weighted objective", &net.params, &analytic, |s| total(s, false).expect("objective").0));
    Ok(out)
}
