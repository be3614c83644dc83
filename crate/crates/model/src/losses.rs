//! Supervision terms and the weighted objective. Every term returns its value
//! together with the gradient with respect to the network output it reads.

use maskhoi_core::geometry::{pixel_to_grid, ObjectPose};
use maskhoi_core::hand::{HandParams, HandParamsGrad, HandSkeleton, NUM_BETAS, NUM_JOINTS, NUM_ROTATIONS};
use maskhoi_core::scene::{SceneRecord, SEG_BACKGROUND, SEG_HAND, SEG_OBJECT};
use maskhoi_core::sdf::SDF_CLAMP;
use maskhoi_core::{Error, Result};
use nalgebra::{Vector2, Vector3};

use crate::network::{hand_params_from, object_pose_from, Outputs, NUM_HEATMAPS, NUM_SEG_CLASSES, POSE_DIM, SHAPE_DIM};
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;

/// Heatmap Gaussian width in heatmap cells.
pub const HEATMAP_SIGMA: f64 = 2.0;

/// Weights of the 2D, 3D, hand and object terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    pub l2d: f64,
    pub l3d: f64,
    pub lh: f64,
    pub lo: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self { l2d: 1.0, l3d: 1.0, lh: 1.0, lo: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l2d: f64,
    pub l3d: f64,
    pub lh: f64,
    pub lo: f64,
    pub lambdas: Lambdas,
    pub total: f64,
}

impl LossBundle {
    pub fn zero(lambdas: Lambdas) -> Self {
        total_loss(0.0, 0.0, 0.0, 0.0, lambdas)
    }

    /// Termwise mean, with `total` recomputed from the averaged terms.
    pub fn mean(items: &[LossBundle], lambdas: Lambdas) -> Self {
        let n = items.len().max(1) as f64;
        let s = |f: fn(&LossBundle) -> f64| items.iter().map(f).sum::<f64>() / n;
        total_loss(s(|b| b.l2d), s(|b| b.l3d), s(|b| b.lh), s(|b| b.lo), lambdas)
    }
}

pub fn total_loss(l2d: f64, l3d: f64, lh: f64, lo: f64, lambdas: Lambdas) -> LossBundle {
    let total = lambdas.l2d * l2d + lambdas.l3d * l3d + lambdas.lh * lh + lambdas.lo * lo;
    LossBundle { l2d, l3d, lh, lo, lambdas, total }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error against targets clamped to `±SDF_CLAMP`; gradient
/// with respect to `pred`.
pub fn l1_clamped(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::InvalidShape(format!("{} predictions for {} SDF targets", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = p - t.clamp(-SDF_CLAMP, SDF_CLAMP);
            loss += r.abs();
            sign(r) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Hand term plus object term.
pub fn sdf_loss(
    pred_hand: &[f64],
    target_hand: &[f64],
    pred_obj: &[f64],
    target_obj: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (lh, gh) = l1_clamped(pred_hand, target_hand)?;
    let (lo, go) = l1_clamped(pred_obj, target_obj)?;
    Ok((lh + lo, gh, go))
}

/// Mean per-cell cross-entropy plus mean squared heatmap error.
/// Returns `(loss, d loss/d logits, d loss/d heatmaps)`.
pub fn seg_heatmap_loss(
    logits: &Tensor,
    labels: &[u8],
    heatmaps: &Tensor,
    target: &Tensor,
) -> Result<(f64, Tensor, Tensor)> {
    if logits.cols != NUM_SEG_CLASSES || logits.rows != labels.len() || logits.rows == 0 {
        return Err(Error::InvalidShape(format!("{:?} logits for {} labels", logits.shape(), labels.len())));
    }
    if heatmaps.shape() != target.shape() || heatmaps.is_empty() {
        return Err(Error::InvalidShape(format!("{:?} heatmaps vs {:?} targets", heatmaps.shape(), target.shape())));
    }
    let m = logits.rows as f64;
    let mut ce = 0.0;
    let mut g_logits = Tensor::zeros(logits.rows, logits.cols);
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= NUM_SEG_CLASSES {
            return Err(Error::InvalidShape(format!("segmentation label {y} out of range")));
        }
        let row = logits.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        ce += z.ln() + mx - row[y];
        for (c, g) in g_logits.row_mut(i).iter_mut().enumerate() {
            *g = ((row[c] - mx).exp() / z - if c == y { 1.0 } else { 0.0 }) / m;
        }
    }
    let k = heatmaps.len() as f64;
    let mut mse = 0.0;
    let mut g_heat = Tensor::zeros(heatmaps.rows, heatmaps.cols);
    for ((g, &h), &t) in g_heat.data.iter_mut().zip(&heatmaps.data).zip(&target.data) {
        mse += (h - t) * (h - t);
        *g = 2.0 * (h - t) / k;
    }
    Ok((ce / m + mse / k, g_logits, g_heat))
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (f64, Vec<Vector3<f64>>) {
    let n = a.len() as f64;
    let mut sum = 0.0;
    let grad = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let d = p - q;
            let len = d.norm();
            sum += len;
            if len > 0.0 {
                d / (len * n)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    (sum / n, grad)
}

/// MSE over 6D rotations and shape, plus mean joint and mean vertex
/// Euclidean distances after kinematics. Gradient in parameter layout.
pub fn hand_loss(pred: &HandParams, gt: &HandParams, skel: &HandSkeleton) -> Result<(f64, HandParamsGrad)> {
    let gp = skel.forward_kinematics(pred)?;
    let gg = skel.forward_kinematics(gt)?;
    let n = (NUM_ROTATIONS * 6 + NUM_BETAS) as f64;
    let mut mse = 0.0;
    let mut g_rot = [[0.0; 6]; NUM_ROTATIONS];
    for (i, g) in g_rot.iter_mut().enumerate() {
        let (a, b) = (pred.rotations[i].to_array(), gt.rotations[i].to_array());
        for c in 0..6 {
            mse += (a[c] - b[c]).powi(2);
            g[c] = 2.0 * (a[c] - b[c]) / n;
        }
    }
    let mut g_beta = [0.0; NUM_BETAS];
    for (k, g) in g_beta.iter_mut().enumerate() {
        mse += (pred.beta[k] - gt.beta[k]).powi(2);
        *g = 2.0 * (pred.beta[k] - gt.beta[k]) / n;
    }
    let (lj, gj) = mean_distance(&gp.joints, &gg.joints);
    let (lv, gv) = mean_distance(&gp.verts, &gg.verts);
    let mut grad = skel.fk_gradients(pred, &gj, &gv)?;
    for (acc, g) in grad.rotations.iter_mut().zip(&g_rot) {
        for c in 0..6 {
            acc[c] += g[c];
        }
    }
    for (acc, g) in grad.beta.iter_mut().zip(&g_beta) {
        *acc += g;
    }
    Ok((mse / n + lj + lv, grad))
}

/// Sum of absolute differences over the nine pose values.
pub fn object_loss(pred: &ObjectPose, gt: &ObjectPose) -> (f64, [f64; POSE_DIM]) {
    let (a, b) = (pred.to_array(), gt.to_array());
    let mut grad = [0.0; POSE_DIM];
    let mut loss = 0.0;
    for i in 0..POSE_DIM {
        loss += (a[i] - b[i]).abs();
        grad[i] = sign(a[i] - b[i]);
    }
    (loss, grad)
}

/// Block-majority downsampling of a square label image to `grid × grid`;
/// ties go to hand, then object, then background.
pub fn downsample_labels(seg: &[u8], size: usize, grid: usize) -> Result<Vec<u8>> {
    if grid == 0 || size % grid != 0 || seg.len() != size * size {
        return Err(Error::InvalidShape(format!("cannot pool a {size}x{size} label image to {grid}x{grid}")));
    }
    let b = size / grid;
    let mut out = Vec::with_capacity(grid * grid);
    for r in 0..grid {
        for c in 0..grid {
            let mut counts = [0usize; NUM_SEG_CLASSES];
            for y in r * b..(r + 1) * b {
                for x in c * b..(c + 1) * b {
                    counts[seg[y * size + x] as usize] += 1;
                }
            }
            let best = [SEG_HAND, SEG_OBJECT, SEG_BACKGROUND]
                .into_iter()
                .fold(SEG_HAND, |acc, l| if counts[l as usize] > counts[acc as usize] { l } else { acc });
            out.push(best);
        }
    }
    Ok(out)
}

/// Unit-peak Gaussians at each keypoint, `grid² × 21`, rows in row-major
/// cell order.
pub fn heatmap_targets(keypoints: &[Vector2<f64>], image_size: usize, grid: usize, sigma: f64) -> Result<Tensor> {
    if keypoints.len() != NUM_HEATMAPS {
        return Err(Error::InvalidShape(format!("{} keypoints, expected {NUM_HEATMAPS}", keypoints.len())));
    }
    let mut t = Tensor::zeros(grid * grid, NUM_HEATMAPS);
    for (j, kp) in keypoints.iter().enumerate() {
        let g = pixel_to_grid(kp, (image_size, image_size), (grid, grid));
        for r in 0..grid {
            for c in 0..grid {
                let d2 = (c as f64 - g.x).powi(2) + (r as f64 - g.y).powi(2);
                t.data[(r * grid + c) * NUM_HEATMAPS + j] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    Ok(t)
}

/// Ground truth for one training sample in the layout the heads emit.
#[derive(Debug, Clone)]
pub struct SampleTargets {
    pub labels: Vec<u8>,
    pub heatmaps: Tensor,
    pub sdf_hand: Vec<f64>,
    pub sdf_obj: Vec<f64>,
    pub hand: HandParams,
    pub pose: ObjectPose,
}

impl SampleTargets {
    pub fn from_record(rec: &SceneRecord, fine_grid: usize) -> Result<Self> {
        let size = rec.image.width;
        debug_assert_eq!(NUM_JOINTS, NUM_HEATMAPS);
        Ok(Self {
            labels: downsample_labels(&rec.seg, size, fine_grid)?,
            heatmaps: heatmap_targets(&rec.keypoints2d, size, fine_grid, HEATMAP_SIGMA)?,
            sdf_hand: rec.sdf_samples.iter().map(|s| s.d_hand).collect(),
            sdf_obj: rec.sdf_samples.iter().map(|s| s.d_obj).collect(),
            hand: rec.hand_params.clone(),
            pose: rec.object_pose,
        })
    }
}

/// Evaluates every term on a forward pass and returns the weighted bundle
/// with the seed gradients of `total` for [`Graph::backward`], each scaled
/// by `weight` (for example `1 / batch`).
pub fn supervise(
    g: &Graph<'_>,
    out: &Outputs,
    t: &SampleTargets,
    lambdas: Lambdas,
    skel: &HandSkeleton,
    weight: f64,
) -> Result<(LossBundle, Vec<(NodeId, Tensor)>)> {
    let (l2d, g_seg, g_heat) = seg_heatmap_loss(g.value(out.seg), &t.labels, g.value(out.heatmap), &t.heatmaps)?;
    let (l3d, g_sh, g_so) = sdf_loss(&g.value(out.sdf_hand).data, &t.sdf_hand, &g.value(out.sdf_obj).data, &t.sdf_obj)?;
    let pred_hand = hand_params_from(g.value(out.hand_rot), g.value(out.hand_shape));
    let (lh, g_hand) = hand_loss(&pred_hand, &t.hand, skel)?;
    let (lo, g_pose) = object_loss(&object_pose_from(g.value(out.pose)), &t.pose);
    let bundle = total_loss(l2d, l3d, lh, lo, lambdas);

    let scaled = |t: Tensor, lambda: f64| t.map(|v| v * lambda * weight);
    let g_hand = g_hand.to_vec();
    let n_rot = 6 * NUM_ROTATIONS;
    let seeds = vec![
        (out.seg, scaled(g_seg, lambdas.l2d)),
        (out.heatmap, scaled(g_heat, lambdas.l2d)),
        (out.sdf_hand, scaled(Tensor::from_vec(g_sh.len(), 1, g_sh), lambdas.l3d)),
        (out.sdf_obj, scaled(Tensor::from_vec(g_so.len(), 1, g_so), lambdas.l3d)),
        (out.hand_rot, scaled(Tensor::from_vec(NUM_ROTATIONS, 6, g_hand[..n_rot].to_vec()), lambdas.lh)),
        (out.hand_shape, scaled(Tensor::row_vector(g_hand[n_rot..n_rot + SHAPE_DIM].to_vec()), lambdas.lh)),
        (out.pose, scaled(Tensor::row_vector(g_pose.to_vec()), lambdas.lo)),
    ];
    Ok((bundle, seeds))
}
