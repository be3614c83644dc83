//! Hand and object pose metrics, with Procrustes and scale-translation
//! alignment. Inputs are in meters; reported distances are in millimeters.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::ObjectPose;
use crate::hand::HandGeometry;
use crate::mesh::TriangleMesh;
use crate::{Error, Result};

const MM: f64 = 1000.0;
pub const DEFAULT_ADDS_POINTS: usize = 512;

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_all(&self, pts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
}

fn centroid(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().sum::<Vector3<f64>>() / pts.len() as f64
}

fn check_pair(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<()> {
    if pred.len() != gt.len() || pred.len() < 3 {
        return Err(Error::DegenerateAlignment(format!(
            "need two clouds of equal size ≥ 3, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Least-squares similarity mapping `pred` onto `gt` (Umeyama), with the
/// rotation restricted to `det R = +1`.
pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    check_pair(pred, gt)?;
    let n = pred.len() as f64;
    let mp = centroid(pred);
    let mg = centroid(gt);
    let mut cov = Matrix3::zeros();
    let mut gt_scatter = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let x = p - mp;
        let y = g - mg;
        cov += y * x.transpose();
        gt_scatter += y * y.transpose();
        var_p += x.norm_squared();
    }
    cov /= n;
    var_p /= n;
    let gs = gt_scatter.symmetric_eigenvalues();
    let mut ev = [gs[0], gs[1], gs[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 1e-18) || ev[1] <= 1e-12 * ev[0] || !(var_p > 1e-18) {
        return Err(Error::DegenerateAlignment("collinear or coincident point cloud".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v");
    let d = if (u.determinant() * vt.determinant()) < 0.0 { -1.0 } else { 1.0 };
    // nalgebra does not sort singular values; flip the smallest one.
    let mut smallest = 0;
    for i in 1..3 {
        if svd.singular_values[i] < svd.singular_values[smallest] {
            smallest = i;
        }
    }
    let mut s = Matrix3::identity();
    s[(smallest, smallest)] = d;
    let rotation = u * s * vt;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
    let scale = trace / var_p;
    Ok(Similarity { scale, rotation, translation: mg - rotation * mp * scale })
}

/// Least-squares scale and translation only. The scale is restricted to
/// `s ≥ 0`; a negative scale would be a point reflection.
pub fn scale_translation_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    check_pair(pred, gt)?;
    let mp = centroid(pred);
    let mg = centroid(gt);
    let (mut num, mut den) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        num += (p - mp).dot(&(g - mg));
        den += (p - mp).norm_squared();
    }
    if !(den > 1e-18) {
        return Err(Error::DegenerateAlignment("coincident prediction".into()));
    }
    let scale = (num / den).max(0.0);
    Ok(Similarity { scale, rotation: Matrix3::identity(), translation: mg - mp * scale })
}

pub fn mean_error(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / pred.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandMetricConfig {
    pub vauc_max_mm: f64,
    pub vauc_samples: usize,
    pub f_thresholds_mm: [f64; 2],
}

impl Default for HandMetricConfig {
    fn default() -> Self {
        Self { vauc_max_mm: 20.0, vauc_samples: 101, f_thresholds_mm: [5.0, 15.0] }
    }
}

/// Distances in mm; VAUC and F-scores in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HandMetrics {
    pub mje: f64,
    pub pamje: f64,
    pub stmje: f64,
    pub mme: f64,
    pub pamme: f64,
    pub vauc: f64,
    pub pavauc: f64,
    pub f5: f64,
    pub f15: f64,
    pub pa_f5: f64,
    pub pa_f15: f64,
}

impl HandMetrics {
    pub const NAMES: [&'static str; 11] =
        ["mje", "pamje", "stmje", "mme", "pamme", "vauc", "pavauc", "f5", "f15", "pa_f5", "pa_f15"];

    pub fn values(&self) -> [f64; 11] {
        [
            self.mje, self.pamje, self.stmje, self.mme, self.pamme, self.vauc, self.pavauc, self.f5, self.f15,
            self.pa_f5, self.pa_f15,
        ]
    }

    pub fn from_values(v: [f64; 11]) -> Self {
        let [mje, pamje, stmje, mme, pamme, vauc, pavauc, f5, f15, pa_f5, pa_f15] = v;
        Self { mje, pamje, stmje, mme, pamme, vauc, pavauc, f5, f15, pa_f5, pa_f15 }
    }

    pub fn mean(all: &[Self]) -> Self {
        Self::from_values(mean_columns(all.iter().map(|m| m.values())))
    }
}

fn mean_columns<const N: usize>(rows: impl Iterator<Item = [f64; N]>) -> [f64; N] {
    let mut acc = [0.0; N];
    let mut n = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        n += 1;
    }
    acc.map(|a| if n == 0 { f64::NAN } else { a / n as f64 })
}

/// Area under the fraction-of-points-within-τ curve for τ on a uniform grid
/// over `[0, max_mm]`, trapezoid rule, normalized to `[0, 1]`. Errors below
/// `PCK_EPS_MM` count as exact so alignment round-off does not drop the τ = 0
/// sample.
pub fn auc_pck(errors_mm: &[f64], max_mm: f64, samples: usize) -> f64 {
    assert!(samples >= 2 && max_mm > 0.0);
    let pck = |tau: f64| errors_mm.iter().filter(|&&e| e <= tau + PCK_EPS_MM).count() as f64 / errors_mm.len() as f64;
    let step = max_mm / (samples - 1) as f64;
    let ys: Vec<f64> = (0..samples).map(|i| pck(i as f64 * step)).collect();
    let inner: f64 = ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[samples - 1]);
    inner / (samples - 1) as f64
}

pub const PCK_EPS_MM: f64 = 1e-9;

fn nearest_distance(p: &Vector3<f64>, set: &[Vector3<f64>]) -> f64 {
    set.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
}

/// Harmonic mean of precision (pred points near gt) and recall (gt points
/// near pred) at distance `tau` (same units as the points).
pub fn f_score(pred: &[Vector3<f64>], gt: &[Vector3<f64>], tau: f64) -> f64 {
    let precision = pred.iter().filter(|p| nearest_distance(p, gt) <= tau).count() as f64 / pred.len() as f64;
    let recall = gt.iter().filter(|g| nearest_distance(g, pred) <= tau).count() as f64 / gt.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn hand_metrics(pred: &HandGeometry, gt: &HandGeometry, cfg: &HandMetricConfig) -> Result<HandMetrics> {
    let jp = procrustes_align(&pred.joints, &gt.joints)?.apply_all(&pred.joints);
    let js = scale_translation_align(&pred.joints, &gt.joints)?.apply_all(&pred.joints);
    let vp = procrustes_align(&pred.verts, &gt.verts)?.apply_all(&pred.verts);
    let errs = |a: &[Vector3<f64>]| -> Vec<f64> { a.iter().zip(&gt.verts).map(|(p, g)| (p - g).norm() * MM).collect() };
    let [t5, t15] = cfg.f_thresholds_mm.map(|t| t / MM);
    Ok(HandMetrics {
        mje: mean_error(&pred.joints, &gt.joints) * MM,
        pamje: mean_error(&jp, &gt.joints) * MM,
        stmje: mean_error(&js, &gt.joints) * MM,
        mme: mean_error(&pred.verts, &gt.verts) * MM,
        pamme: mean_error(&vp, &gt.verts) * MM,
        vauc: auc_pck(&errs(&pred.verts), cfg.vauc_max_mm, cfg.vauc_samples),
        pavauc: auc_pck(&errs(&vp), cfg.vauc_max_mm, cfg.vauc_samples),
        f5: f_score(&pred.verts, &gt.verts, t5),
        f15: f_score(&pred.verts, &gt.verts, t15),
        pa_f5: f_score(&vp, &gt.verts, t5),
        pa_f15: f_score(&vp, &gt.verts, t15),
    })
}

/// Distances in mm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectMetrics {
    pub oce: f64,
    pub mce: f64,
    pub add_s: f64,
    pub ome: f64,
}

impl ObjectMetrics {
    pub const NAMES: [&'static str; 4] = ["oce", "mce", "add_s", "ome"];

    pub fn values(&self) -> [f64; 4] {
        [self.oce, self.mce, self.add_s, self.ome]
    }

    pub fn mean(all: &[Self]) -> Self {
        let [oce, mce, add_s, ome] = mean_columns(all.iter().map(|m| m.values()));
        Self { oce, mce, add_s, ome }
    }
}

/// Fixed surface samples of a model mesh used for ADD-S.
pub fn model_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mesh.sample_surface(n, &mut rng).into_iter().map(|(p, _)| p).collect()
}

fn posed(pose: &ObjectPose, pts: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let r = pose.rotation.to_matrix()?;
    Ok(pts.iter().map(|p| r * p + pose.translation).collect())
}

/// Mean over gt-posed points of the distance to the nearest pred-posed point.
pub fn add_s(pred: &ObjectPose, gt: &ObjectPose, points: &[Vector3<f64>]) -> Result<f64> {
    let p = posed(pred, points)?;
    let g = posed(gt, points)?;
    Ok(g.iter().map(|x| nearest_distance(x, &p)).sum::<f64>() / g.len() as f64)
}

/// `points` are the ADD-S samples in the model frame.
pub fn object_metrics(
    pred: &ObjectPose,
    gt: &ObjectPose,
    model: &TriangleMesh,
    points: &[Vector3<f64>],
) -> Result<ObjectMetrics> {
    let corners = model.bbox_corners();
    let mean_posed = |pts: &[Vector3<f64>]| -> Result<f64> { Ok(mean_error(&posed(pred, pts)?, &posed(gt, pts)?)) };
    Ok(ObjectMetrics {
        oce: (pred.translation - gt.translation).norm() * MM,
        mce: mean_posed(&corners)? * MM,
        add_s: add_s(pred, gt, points)? * MM,
        ome: mean_posed(&model.vertices)? * MM,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, matrix_to_rot6d};
    use crate::mesh::cuboid;

    fn cloud() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.1, 0.0, 0.02),
            Vector3::new(0.0, 0.07, -0.01),
            Vector3::new(0.03, 0.02, 0.09),
            Vector3::new(-0.05, 0.04, 0.01),
        ]
    }

    #[test]
    fn identical_clouds_align_to_identity() {
        let c = cloud();
        let s = procrustes_align(&c, &c).unwrap();
        assert!((s.scale - 1.0).abs() < 1e-12);
        assert!((s.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(s.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_exact_similarity() {
        let r0 = axis_angle(&Vector3::new(1.0, 2.0, -0.5), 2.3);
        let t0 = Vector3::new(0.3, -0.2, 0.5);
        let gt = cloud();
        // gt = 2 R0 pred + t0
        let pred: Vec<_> = gt.iter().map(|g| r0.transpose() * (g - t0) / 2.0).collect();
        let s = procrustes_align(&pred, &gt).unwrap();
        assert!((s.scale - 2.0).abs() < 1e-9);
        assert!((s.rotation - r0).norm() < 1e-9);
        assert!((s.translation - t0).norm() < 1e-9);
    }

    #[test]
    fn reflected_cloud_still_gets_a_rotation() {
        let gt = cloud();
        let pred: Vec<_> = gt.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let s = procrustes_align(&pred, &gt).unwrap();
        assert!((s.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_clouds_rejected() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(procrustes_align(&cloud(), &line), Err(Error::DegenerateAlignment(_))));
        let point = vec![Vector3::new(1.0, 1.0, 1.0); 5];
        assert!(procrustes_align(&point, &cloud()).is_err());
        assert!(procrustes_align(&cloud()[..2], &cloud()[..2]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_pck(&[0.0; 4], 20.0, 101), 1.0);
        assert_eq!(auc_pck(&[100.0], 20.0, 101), 0.0);
        // one point at 10 mm: samples 0..49 are 0, 50..100 are 1; the step
        // straddling 10 mm contributes half a trapezoid
        assert!((auc_pck(&[10.0], 20.0, 101) - 0.505).abs() < 1e-12);
    }

    #[test]
    fn identical_hands_are_perfect() {
        let skel = crate::hand::HandSkeleton::template();
        let g = skel.forward_kinematics(&crate::hand::HandParams::default()).unwrap();
        let m = hand_metrics(&g, &g, &HandMetricConfig::default()).unwrap();
        for (name, v) in HandMetrics::NAMES.iter().zip(m.values()) {
            let want = if ["vauc", "pavauc", "f5", "f15", "pa_f5", "pa_f15"].contains(name) { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-9, "{name} = {v}");
        }
    }

    #[test]
    fn translated_object() {
        let mesh = cuboid(&Vector3::new(0.02, 0.03, 0.04));
        let pts = model_points(&mesh, 64, 1);
        let rot = matrix_to_rot6d(&axis_angle(&Vector3::new(0.2, 1.0, 0.1), 0.8)).unwrap();
        let gt = ObjectPose { rotation: rot, translation: Vector3::new(0.0, 0.0, 0.5) };
        let same = object_metrics(&gt, &gt, &mesh, &pts).unwrap();
        assert_eq!(same.values(), [0.0; 4]);
        let shift = Vector3::new(0.003, -0.004, 0.0);
        let pred = ObjectPose { translation: gt.translation + shift, ..gt };
        let m = object_metrics(&pred, &gt, &mesh, &pts).unwrap();
        assert!((m.oce - 5.0).abs() < 1e-9);
        assert!((m.ome - 5.0).abs() < 1e-9);
        assert!((m.mce - 5.0).abs() < 1e-9);
        assert!(m.add_s <= m.ome + 1e-12);
    }
}
