//! Patchification, per-patch region labels, region-specific keep quotas and
//! skeleton-guided selection of hand patches.
//!
//! Patches are numbered row-major: patch `i` covers rows
//! `(i / cols) * p .. +p` and columns `(i % cols) * p .. +p`.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hand::{children, finger_chain, FINGERTIPS, NUM_FINGERS};
use crate::image::RgbImage;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub image_width: usize,
    pub image_height: usize,
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(image_width: usize, image_height: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0
            || image_width == 0
            || image_height == 0
            || image_width % patch_size != 0
            || image_height % patch_size != 0
        {
            return Err(Error::InvalidGeometry(format!(
                "{image_width}x{image_height} image is not divisible into {patch_size}px patches"
            )));
        }
        Ok(Self {
            image_width,
            image_height,
            patch_size,
            rows: image_height / patch_size,
            cols: image_width / patch_size,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Patch containing the pixel-space point `uv`, if inside the image.
    /// Pixel `i` spans `[i - 0.5, i + 0.5)`.
    pub fn patch_at(&self, uv: &Vector2<f64>) -> Option<usize> {
        let x = uv.x + 0.5;
        let y = uv.y + 0.5;
        if !(x >= 0.0 && y >= 0.0 && x < self.image_width as f64 && y < self.image_height as f64) {
            return None;
        }
        let c = x as usize / self.patch_size;
        let r = y as usize / self.patch_size;
        Some(r * self.cols + c)
    }

    /// Patches within Chebyshev distance `radius` of `patch`, excluding it.
    pub fn neighbors(&self, patch: usize, radius: usize) -> Vec<usize> {
        let (r, c) = ((patch / self.cols) as isize, (patch % self.cols) as isize);
        let rad = radius as isize;
        let mut out = Vec::new();
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                let (nr, nc) = (r + dr, c + dc);
                if (dr, dc) != (0, 0) && nr >= 0 && nc >= 0 && (nr as usize) < self.rows && (nc as usize) < self.cols {
                    out.push(nr as usize * self.cols + nc as usize);
                }
            }
        }
        out
    }
}

/// Pixel blocks per patch, channel-last within each block.
pub fn patchify(image: &RgbImage, patch_size: usize) -> Result<(PatchGrid, Vec<Vec<u8>>)> {
    let grid = PatchGrid::new(image.width, image.height, patch_size)?;
    let p = patch_size;
    let blocks = (0..grid.len())
        .map(|i| {
            let (r0, c0) = ((i / grid.cols) * p, (i % grid.cols) * p);
            let mut block = Vec::with_capacity(p * p * 3);
            for y in r0..r0 + p {
                let o = (y * image.width + c0) * 3;
                block.extend_from_slice(&image.data[o..o + p * 3]);
            }
            block
        })
        .collect();
    Ok((grid, blocks))
}

pub fn unpatchify(grid: &PatchGrid, blocks: &[Vec<u8>]) -> Result<RgbImage> {
    let p = grid.patch_size;
    if blocks.len() != grid.len() || blocks.iter().any(|b| b.len() != p * p * 3) {
        return Err(Error::InvalidGeometry("patch blocks do not match the grid".into()));
    }
    let mut img = RgbImage::new(grid.image_width, grid.image_height);
    for (i, block) in blocks.iter().enumerate() {
        let (r0, c0) = ((i / grid.cols) * p, (i % grid.cols) * p);
        for (dy, row) in block.chunks(p * 3).enumerate() {
            let o = ((r0 + dy) * grid.image_width + c0) * 3;
            img.data[o..o + p * 3].copy_from_slice(row);
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Region {
    Background = 0,
    Hand = 1,
    Object = 2,
}

impl Region {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Background),
            1 => Some(Self::Hand),
            2 => Some(Self::Object),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabels(pub Vec<Region>);

impl RegionLabels {
    pub fn count(&self, region: Region) -> usize {
        self.0.iter().filter(|&&r| r == region).count()
    }

    pub fn indices(&self, region: Region) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] == region).collect()
    }
}

/// A patch is `Hand` if it holds any hand pixel, else `Object` if it holds
/// any object pixel, else `Background`.
pub fn classify_patches(grid: &PatchGrid, hand_mask: &[bool], obj_mask: &[bool]) -> Result<RegionLabels> {
    let npx = grid.image_width * grid.image_height;
    if hand_mask.len() != npx || obj_mask.len() != npx {
        return Err(Error::InvalidGeometry(format!(
            "masks have {} / {} pixels, image has {npx}",
            hand_mask.len(),
            obj_mask.len()
        )));
    }
    let mut labels = vec![Region::Background; grid.len()];
    for y in 0..grid.image_height {
        for x in 0..grid.image_width {
            let i = (y / grid.patch_size) * grid.cols + x / grid.patch_size;
            let px = y * grid.image_width + x;
            if hand_mask[px] {
                labels[i] = Region::Hand;
            } else if obj_mask[px] && labels[i] == Region::Background {
                labels[i] = Region::Object;
            }
        }
    }
    Ok(RegionLabels(labels))
}

/// Convenience over a per-pixel segmentation map (0 bg, 1 hand, 2 object).
pub fn classify_from_seg(grid: &PatchGrid, seg: &[u8]) -> Result<RegionLabels> {
    let hand: Vec<bool> = seg.iter().map(|&s| s == Region::Hand as u8).collect();
    let obj: Vec<bool> = seg.iter().map(|&s| s == Region::Object as u8).collect();
    classify_patches(grid, &hand, &obj)
}

/// Per-region mask ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskRates {
    pub hand: f64,
    pub object: f64,
    pub background: f64,
}

impl Default for MaskRates {
    fn default() -> Self {
        Self { hand: 0.50, object: 0.80, background: 0.65 }
    }
}

impl MaskRates {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("hand", self.hand), ("object", self.object), ("background", self.background)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("{name} mask rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KeepQuotas {
    pub hand: usize,
    pub object: usize,
    pub background: usize,
}

impl KeepQuotas {
    pub fn total(&self) -> usize {
        self.hand + self.object + self.background
    }
}

fn round_half_up(x: f64) -> usize {
    // the epsilon absorbs representation error in products like 10·(1-0.85)
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// `quota_r = round_half_up(n_r · (1 - rate_r))`; the background quota then
/// absorbs the difference to `round_half_up(Σ n_r · (1 - rate_r))` so the
/// total keep count is reproducible from the real-valued budget.
pub fn allocate_keep_counts(labels: &RegionLabels, rates: &MaskRates) -> Result<KeepQuotas> {
    rates.validate()?;
    let nh = labels.count(Region::Hand);
    let no = labels.count(Region::Object);
    let nb = labels.count(Region::Background);
    let eh = nh as f64 * (1.0 - rates.hand);
    let eo = no as f64 * (1.0 - rates.object);
    let eb = nb as f64 * (1.0 - rates.background);
    let hand = round_half_up(eh).min(nh);
    let object = round_half_up(eo).min(no);
    let background = round_half_up(eb).min(nb);
    let target = round_half_up(eh + eo + eb) as isize;
    let corrected = (background as isize + target - (hand + object + background) as isize).clamp(0, nb as isize);
    Ok(KeepQuotas { hand, object, background: corrected as usize })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MaskPattern {
    Random = 0,
    SingleFinger = 1,
    AllFingertips = 2,
    SkeletonRandom = 3,
}

impl MaskPattern {
    pub const SKELETON: [MaskPattern; 3] = [Self::SingleFinger, Self::AllFingertips, Self::SkeletonRandom];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::SingleFinger => "single_finger",
            Self::AllFingertips => "all_fingertips",
            Self::SkeletonRandom => "skeleton_random",
        }
    }
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandSelection {
    /// Hand patches to mask, priority patches first.
    pub masked: Vec<usize>,
    /// The finger chosen by `SingleFinger`.
    pub finger: Option<usize>,
}

fn dfs_order(root: usize) -> Vec<usize> {
    let mut order = Vec::new();
    let mut stack = vec![root];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children(j).into_iter().rev());
    }
    order
}

fn bfs_order_shuffled(root: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order = Vec::new();
    let mut queue = VecDeque::from([root]);
    while let Some(j) = queue.pop_front() {
        order.push(j);
        let mut kids = children(j);
        kids.shuffle(rng);
        queue.extend(kids);
    }
    order
}

/// Chooses which hand patches to mask. `mask_budget` is the number of hand
/// patches to hide (`n_hand - keep quota`). Skeleton patterns first mask the
/// patches containing keypoints in traversal order, then their dilation
/// neighborhoods, then fill with uniformly random hand patches. Only patches
/// labeled `Hand` are ever selected.
pub fn skeleton_guided_select(
    grid: &PatchGrid,
    labels: &RegionLabels,
    mask_budget: usize,
    keypoints: &[Vector2<f64>],
    pattern: MaskPattern,
    dilation: usize,
    rng: &mut impl Rng,
) -> HandSelection {
    let hand = labels.indices(Region::Hand);
    let budget = mask_budget.min(hand.len());
    let mut finger = None;
    let joints: Vec<usize> = match pattern {
        MaskPattern::Random => vec![],
        MaskPattern::SingleFinger => {
            let f = rng.random_range(0..NUM_FINGERS);
            finger = Some(f);
            dfs_order(finger_chain(f)[0])
        }
        MaskPattern::AllFingertips => FINGERTIPS.to_vec(),
        MaskPattern::SkeletonRandom => bfs_order_shuffled(0, rng),
    };

    let mut chosen = vec![false; grid.len()];
    let mut masked = Vec::with_capacity(budget);
    let take = |p: usize, chosen: &mut Vec<bool>, masked: &mut Vec<usize>| {
        if masked.len() < budget && labels.0[p] == Region::Hand && !chosen[p] {
            chosen[p] = true;
            masked.push(p);
        }
    };
    let primary: Vec<usize> = joints
        .iter()
        .filter_map(|&j| keypoints.get(j).and_then(|kp| grid.patch_at(kp)))
        .collect();
    for &p in &primary {
        take(p, &mut chosen, &mut masked);
    }
    if dilation > 0 {
        for &p in &primary {
            for n in grid.neighbors(p, dilation) {
                take(n, &mut chosen, &mut masked);
            }
        }
    }
    let mut rest: Vec<usize> = hand.iter().copied().filter(|&p| !chosen[p]).collect();
    rest.shuffle(rng);
    for p in rest {
        take(p, &mut chosen, &mut masked);
    }
    HandSelection { masked, finger }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// One mask ratio over every patch.
    GlobalRandom,
    /// Region-specific rates, with skeleton guidance on the hand with
    /// probability `skeleton_proportion`.
    Regional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub mode: MaskMode,
    pub rates: MaskRates,
    pub global_rate: f64,
    pub skeleton_proportion: f64,
    pub dilation: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            mode: MaskMode::Regional,
            rates: MaskRates::default(),
            global_rate: 0.65,
            skeleton_proportion: 0.5,
            dilation: 1,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        if !(0.0..=1.0).contains(&self.global_rate) {
            return Err(Error::InvalidConfig(format!("global mask rate {} outside [0, 1]", self.global_rate)));
        }
        if !(0.0..=1.0).contains(&self.skeleton_proportion) {
            return Err(Error::InvalidConfig(format!(
                "skeleton proportion {} outside [0, 1]",
                self.skeleton_proportion
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub keep: Vec<bool>,
    pub pattern_used: MaskPattern,
    pub quotas: KeepQuotas,
    pub seed: u64,
}

impl MaskPlan {
    /// A plan keeping every patch.
    pub fn keep_all(n: usize) -> Self {
        Self {
            keep: vec![true; n],
            pattern_used: MaskPattern::Random,
            quotas: KeepQuotas::default(),
            seed: 0,
        }
    }

    pub fn n_keep(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Kept patch indices, strictly increasing.
    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&i| self.keep[i]).collect()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&i| !self.keep[i]).collect()
    }

    /// Run-length encoding over row-major patches: `K<n>` kept, `M<n>` masked.
    pub fn to_rle(&self) -> String {
        let mut out: Vec<String> = Vec::new();
        let mut i = 0;
        while i < self.keep.len() {
            let v = self.keep[i];
            let start = i;
            while i < self.keep.len() && self.keep[i] == v {
                i += 1;
            }
            out.push(format!("{}{}", if v { 'K' } else { 'M' }, i - start));
        }
        out.join(" ")
    }

    pub fn from_rle(rle: &str) -> Result<Vec<bool>> {
        let mut keep = Vec::new();
        for tok in rle.split_whitespace() {
            let (flag, n) = tok.split_at(1);
            let n: usize = n.parse().map_err(|_| Error::Format(format!("rle token `{tok}`")))?;
            let v = match flag {
                "K" => true,
                "M" => false,
                _ => return Err(Error::Format(format!("rle token `{tok}`"))),
            };
            keep.extend(std::iter::repeat_n(v, n));
        }
        Ok(keep)
    }
}

fn keep_random(indices: &[usize], quota: usize, keep: &mut [bool], rng: &mut impl Rng) {
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(rng);
    for &p in shuffled.iter().take(quota) {
        keep[p] = true;
    }
}

/// Builds the keep/mask partition for one image. Deterministic in `seed`.
pub fn build_mask_plan(
    grid: &PatchGrid,
    labels: &RegionLabels,
    keypoints: &[Vector2<f64>],
    config: &MaskConfig,
    seed: u64,
) -> Result<MaskPlan> {
    config.validate()?;
    if labels.0.len() != grid.len() {
        return Err(Error::InvalidGeometry("label count does not match the patch grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; grid.len()];

    if config.mode == MaskMode::GlobalRandom {
        let quota = round_half_up(grid.len() as f64 * (1.0 - config.global_rate)).min(grid.len());
        let all: Vec<usize> = (0..grid.len()).collect();
        keep_random(&all, quota, &mut keep, &mut rng);
        let count = |r| labels.indices(r).iter().filter(|&&i| keep[i]).count();
        let quotas = KeepQuotas {
            hand: count(Region::Hand),
            object: count(Region::Object),
            background: count(Region::Background),
        };
        return Ok(MaskPlan { keep, pattern_used: MaskPattern::Random, quotas, seed });
    }

    let quotas = allocate_keep_counts(labels, &config.rates)?;
    let use_skeleton = rng.random::<f64>() < config.skeleton_proportion;
    let pattern_pick = rng.random_range(0..MaskPattern::SKELETON.len());
    let pattern = if use_skeleton { MaskPattern::SKELETON[pattern_pick] } else { MaskPattern::Random };

    let hand = labels.indices(Region::Hand);
    let selection = skeleton_guided_select(
        grid,
        labels,
        hand.len() - quotas.hand,
        keypoints,
        pattern,
        config.dilation,
        &mut rng,
    );
    for &p in &hand {
        keep[p] = true;
    }
    for &p in &selection.masked {
        keep[p] = false;
    }
    keep_random(&labels.indices(Region::Object), quotas.object, &mut keep, &mut rng);
    keep_random(&labels.indices(Region::Background), quotas.background, &mut keep, &mut rng);
    Ok(MaskPlan { keep, pattern_used: pattern, quotas, seed })
}

/// Keep/mask overlay: masked patches are dimmed and tinted by region
/// (hand red, object blue, background gray); kept patches are untouched.
pub fn render_mask_overlay(image: &RgbImage, grid: &PatchGrid, labels: &RegionLabels, plan: &MaskPlan) -> RgbImage {
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            let i = (y / grid.patch_size) * grid.cols + x / grid.patch_size;
            if plan.keep[i] {
                continue;
            }
            let tint = match labels.0[i] {
                Region::Hand => [200u16, 40, 40],
                Region::Object => [40, 60, 200],
                Region::Background => [90, 90, 90],
            };
            let px = image.get(x, y);
            let mix = |c: usize| ((px[c] as u16 / 4) + tint[c] * 3 / 4) as u8;
            out.set(x, y, [mix(0), mix(1), mix(2)]);
        }
    }
    out
}
