//! Mask overlays and SDF slice images.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use maskhoi_core::hand::HandSkeleton;
use maskhoi_core::image::RgbImage;
use maskhoi_core::masking::{MaskConfig, MaskMode, PatchGrid};
use maskhoi_core::scene::{scene_meshes, SceneRecord};
use maskhoi_core::sdf::signed_distance;
use maskhoi_model::network::{MaskHoiNet, Sample};
use maskhoi_model::tape::Graph;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::pipeline::{mask_plan, mix, prepare};

/// Masked patches are dimmed and tinted; patch borders are drawn on both.
pub fn mask_overlay(image: &RgbImage, grid: &PatchGrid, keep: &[bool]) -> RgbImage {
    let mut out = image.clone();
    let p = grid.patch_size;
    for y in 0..image.height {
        for x in 0..image.width {
            let idx = (y / p) * grid.cols + x / p;
            let [r, g, b] = image.get(x, y);
            let px = if keep[idx] {
                [r, g, b]
            } else {
                [(r / 5).saturating_add(40), (g / 5).saturating_add(40), (b / 5).saturating_add(70)]
            };
            let border = x % p == 0 || y % p == 0;
            out.set(x, y, if border { [px[0] / 2, px[1] / 2, px[2] / 2] } else { px });
        }
    }
    out
}

/// Writes `scene_<i>_<mode>.ppm` overlays for the first `count` records
/// under every masking mode, plus `plans.rle` with one line per plan.
pub fn dump_masks(cfg: &RunConfig, net: &MaskHoiNet, records: Vec<SceneRecord>, count: usize, dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let grid = PatchGrid::new(cfg.model.image_size, cfg.model.image_size, cfg.model.patch_size)?;
    let data = prepare(records.into_iter().take(count).collect(), net, &grid)?;
    let modes: [(&str, MaskMode, f64); 3] = [
        ("global", MaskMode::GlobalRandom, 0.0),
        ("regional", MaskMode::Regional, 0.0),
        ("skeleton", MaskMode::Regional, 1.0),
    ];
    let mut rle = String::from("# scene mode kept/total run-length (k = kept, m = masked)\n");
    let mut written = 0;
    for (i, p) in data.iter().enumerate() {
        std::fs::write(dir.join(format!("scene_{i:03}_input.ppm")), p.record.image.to_ppm())?;
        for (name, mode, rho) in modes {
            let mut c = cfg.clone();
            c.mask = MaskConfig { mode, ..cfg.mask };
            let plan = mask_plan(&c, &grid, p, rho, mix(cfg.seed, i as u64))?;
            let img = mask_overlay(&p.record.image, &grid, &plan.keep);
            std::fs::write(dir.join(format!("scene_{i:03}_{name}.ppm")), img.to_ppm())?;
            writeln!(rle, "{i} {name} {}/{} {}", plan.n_keep(), grid.len(), plan.to_rle())?;
            written += 1;
        }
    }
    std::fs::write(dir.join("plans.rle"), rle)?;
    Ok(written)
}

/// Blue inside, red outside, black on the zero level set.
pub fn sdf_color(d: f64, scale: f64) -> [u8; 3] {
    let t = (d.abs() / scale).min(1.0);
    if d.abs() < 0.04 * scale {
        return [0, 0, 0];
    }
    let hi = (255.0 * (1.0 - 0.7 * t)) as u8;
    let band = if ((d.abs() / scale) * 10.0).fract() < 0.1 { 30 } else { 0 };
    if d < 0.0 {
        [hi / 3, hi / 2, 255 - band]
    } else {
        [255 - band, hi / 2, hi / 3]
    }
}

/// Grid points of a z-plane through the query box, row-major with image y
/// pointing down the camera y axis.
pub fn slice_points(center: &Vector3<f64>, half: f64, z: f64, res: usize) -> Vec<Vector3<f64>> {
    let mut pts = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            let u = (i as f64 + 0.5) / res as f64 * 2.0 - 1.0;
            let v = (j as f64 + 0.5) / res as f64 * 2.0 - 1.0;
            pts.push(Vector3::new(center.x + u * half, center.y + v * half, z));
        }
    }
    pts
}

/// For each record and z-plane writes one image with four panels:
/// predicted hand, true hand, predicted object, true object.
pub fn dump_sdf_slices(
    net: &MaskHoiNet,
    records: &[SceneRecord],
    planes: usize,
    res: usize,
    dir: &Path,
) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let skel = HandSkeleton::template();
    let keep = vec![true; net.cfg.num_patches()];
    let mut written = 0;
    for (r, rec) in records.iter().enumerate() {
        let (hand, obj) = scene_meshes(&skel, &rec.hand_params, &rec.object_shape, &rec.object_pose)?;
        let qb = &rec.query_box;
        let half = qb.cube_half_extent();
        for k in 0..planes {
            let z = qb.center.z - qb.half_extents.z + (k as f64 + 0.5) / planes as f64 * 2.0 * qb.half_extents.z;
            let pts = slice_points(&qb.center, half, z, res);
            let mut g = Graph::new(&net.params);
            let out = net
                .forward(&mut g, &Sample { image: &rec.image, keep: &keep, queries: &pts, camera: &rec.camera })
                .with_context(|| format!("scene {r} plane {k}"))?;
            let truth = pts
                .par_iter()
                .map(|p| Ok((signed_distance(p, &hand)?, signed_distance(p, &obj)?)))
                .collect::<maskhoi_core::Result<Vec<_>>>()?;
            let panels: [Vec<f64>; 4] = [
                g.value(out.sdf_hand).data.clone(),
                truth.iter().map(|t| t.0).collect(),
                g.value(out.sdf_obj).data.clone(),
                truth.iter().map(|t| t.1).collect(),
            ];
            let mut img = RgbImage::filled(4 * res + 3, res, [255, 255, 255]);
            for (pi, panel) in panels.iter().enumerate() {
                for (n, d) in panel.iter().enumerate() {
                    img.set(pi * (res + 1) + n % res, n / res, sdf_color(*d, 0.1));
                }
            }
            std::fs::write(dir.join(format!("scene_{r:03}_z{k:02}.ppm")), img.to_ppm())?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_keeps_visible_patches() {
        let grid = PatchGrid::new(16, 16, 8).unwrap();
        let img = RgbImage::filled(16, 16, [200, 100, 50]);
        let out = mask_overlay(&img, &grid, &[true, false, false, true]);
        assert_eq!(out.get(3, 3), [200, 100, 50]);
        assert_ne!(out.get(11, 3), [200, 100, 50]);
        assert_eq!(out.get(0, 3), [100, 50, 25]);
    }

    #[test]
    fn sdf_colors_by_sign() {
        assert_eq!(sdf_color(0.0, 0.1), [0, 0, 0]);
        let inside = sdf_color(-0.05, 0.1);
        let outside = sdf_color(0.05, 0.1);
        assert!(inside[2] > inside[0]);
        assert!(outside[0] > outside[2]);
    }

    #[test]
    fn slice_spans_box() {
        let pts = slice_points(&Vector3::new(0.0, 0.0, 0.5), 0.1, 0.45, 4);
        assert_eq!(pts.len(), 16);
        assert!((pts[0].x + 0.075).abs() < 1e-12 && (pts[15].y - 0.075).abs() < 1e-12);
        assert!(pts.iter().all(|p| p.z == 0.45));
    }
}
