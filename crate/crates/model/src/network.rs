//! Dual-decoder masked autoencoder with multi-scale feature, segmentation,
//! heatmap, SDF, object-pose and hand-parameter heads.
//!
//! Only kept patches are embedded: masked pixel content never enters the
//! graph. Each decoder projects the encoded tokens, scatters them back to
//! their grid positions, fills masked positions with its own learned mask
//! token, adds fixed 2D sin-cos positional embeddings and runs its blocks.
//!
//! Initialization (seeded ChaCha8): Glorot-uniform matrices with gain 1,
//! except the final layers of the SDF, pose and hand heads (gain 0.1) so
//! predictions start near their bias priors; biases zero; layer-norm gains
//! one; mask tokens and hand queries uniform in ±0.02.

use maskhoi_core::geometry::{
    bilinear_weights, fourier_encode, normalize_query, pixel_to_grid, project_point, CameraIntrinsics, ObjectPose,
    Rotation6D,
};
use maskhoi_core::hand::{HandParams, NUM_BETAS, NUM_ROTATIONS};
use maskhoi_core::image::RgbImage;
use maskhoi_core::{Error, Result};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{glorot, uniform, ParamId, ParamStore};
use crate::tape::{Graph, NodeId, RowMix};
use crate::tensor::Tensor;

pub const NUM_SEG_CLASSES: usize = 3;
pub const NUM_HEATMAPS: usize = 21;
pub const POSE_DIM: usize = 9;
/// 16 rotation queries and one shape query.
pub const NUM_HAND_QUERIES: usize = NUM_ROTATIONS + 1;
pub const SHAPE_DIM: usize = NUM_BETAS + 3;
pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
/// Camera-frame depth used as the translation prior of the pose and hand heads.
pub const DEPTH_PRIOR: f64 = 0.5;
const OUTPUT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub mlp_ratio: usize,
    pub feat_channels: usize,
    pub sdf_hidden: usize,
    pub head_hidden: usize,
    pub fourier_bands: usize,
    /// Fixed camera-frame cube used to normalize SDF query points.
    pub query_center: [f64; 3],
    pub query_half_extent: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            dim: 64,
            enc_depth: 4,
            enc_heads: 4,
            dec_depth: 2,
            dec_heads: 4,
            mlp_ratio: 2,
            feat_channels: 32,
            sdf_hidden: 64,
            head_hidden: 64,
            fourier_bands: 6,
            query_center: [0.0, 0.0, 0.55],
            query_half_extent: 0.3,
            seed: 0,
        }
    }

    /// ViT-base sized encoder at 224/16.
    pub fn paper() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            dim: 768,
            enc_depth: 12,
            enc_heads: 12,
            dec_depth: 2,
            dec_heads: 12,
            mlp_ratio: 4,
            feat_channels: 256,
            sdf_hidden: 256,
            head_hidden: 256,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!("image size {} not divisible by patch {}", self.image_size, self.patch_size));
        }
        if self.dim == 0 || self.dim % 4 != 0 {
            return bad(format!("model dim {} must be a positive multiple of 4", self.dim));
        }
        for (name, h) in [("encoder", self.enc_heads), ("decoder", self.dec_heads)] {
            if h == 0 || self.dim % h != 0 {
                return bad(format!("model dim {} not divisible by {name} heads {h}", self.dim));
            }
        }
        if self.enc_depth == 0 || self.mlp_ratio == 0 || self.feat_channels == 0 || self.sdf_hidden == 0 {
            return bad("depths and widths must be positive".into());
        }
        if self.head_hidden == 0 || self.fourier_bands == 0 || !(self.query_half_extent > 0.0) {
            return bad("head widths, Fourier bands and query extent must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Side length of the finest (2×) feature grid.
    pub fn fine_grid(&self) -> usize {
        2 * self.grid()
    }

    pub fn sdf_input_dim(&self) -> usize {
        6 * self.fourier_bands + 3 + 2 * self.feat_channels
    }
}

/// MAE-style fixed 2D sin-cos embedding, `n×n` positions by `dim` channels:
/// the first half encodes the column, the second half the row.
pub fn sincos_pos_embed(n: usize, dim: usize) -> Tensor {
    let quarter = dim / 4;
    let mut t = Tensor::zeros(n * n, dim);
    for r in 0..n {
        for c in 0..n {
            let row = t.row_mut(r * n + c);
            for (half, pos) in [(0, c as f64), (1, r as f64)] {
                for i in 0..quarter {
                    let omega = 1.0 / 10000f64.powf(i as f64 / quarter as f64);
                    row[half * dim / 2 + i] = (pos * omega).sin();
                    row[half * dim / 2 + quarter + i] = (pos * omega).cos();
                }
            }
        }
    }
    t
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub ln1: Norm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub embed: Linear,
    pub mask_token: ParamId,
    pub blocks: Vec<Block>,
    pub norm: Norm,
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureHead {
    /// Token → 1× grid.
    pub coarse: Linear,
    /// Token → 2×2 sub-cells of the 2× grid.
    pub fine: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct SdfMlp {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct HandHead {
    pub queries: ParamId,
    pub ln_q: Norm,
    pub ln_kv: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln_mlp: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub rot: Linear,
    pub shape: Linear,
}

#[derive(Debug, Clone)]
pub struct MaskHoiNet {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub pos_embed: Tensor,
    pub patch_embed: Linear,
    pub encoder: Vec<Block>,
    pub enc_norm: Norm,
    pub dec_hand: Decoder,
    pub dec_obj: Decoder,
    pub feat_hand: FeatureHead,
    pub feat_obj: FeatureHead,
    pub seg: Linear,
    pub heatmap: Linear,
    pub sdf_hand: SdfMlp,
    pub sdf_obj: SdfMlp,
    pub pose1: Linear,
    pub pose2: Linear,
    pub hand: HandHead,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64, bias: Option<&[f64]>) -> Linear {
        let w = self.store.add(format!("{name}.w"), glorot(fan_in, fan_out, gain, &mut self.rng), true);
        let b = match bias {
            Some(v) => Tensor::row_vector(v.to_vec()),
            None => Tensor::zeros(1, fan_out),
        };
        let b = self.store.add(format!("{name}.b"), b, false);
        Linear { w, b }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let g = self.store.add(format!("{name}.g"), Tensor::from_vec(1, dim, vec![1.0; dim]), false);
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(1, dim), false);
        Norm { g, b }
    }

    fn block(&mut self, name: &str, dim: usize, ratio: usize) -> Block {
        Block {
            ln1: self.norm(&format!("{name}.ln1"), dim),
            qkv: self.linear(&format!("{name}.qkv"), dim, 3 * dim, 1.0, None),
            proj: self.linear(&format!("{name}.proj"), dim, dim, 1.0, None),
            ln2: self.norm(&format!("{name}.ln2"), dim),
            fc1: self.linear(&format!("{name}.fc1"), dim, ratio * dim, 1.0, None),
            fc2: self.linear(&format!("{name}.fc2"), ratio * dim, dim, 1.0, None),
        }
    }

    fn token(&mut self, name: &str, rows: usize, dim: usize) -> ParamId {
        let t = uniform(rows, dim, 0.02, &mut self.rng);
        self.store.add(name.to_string(), t, false)
    }

    fn decoder(&mut self, name: &str, cfg: &ModelConfig) -> Decoder {
        Decoder {
            embed: self.linear(&format!("{name}.embed"), cfg.dim, cfg.dim, 1.0, None),
            mask_token: self.token(&format!("{name}.mask_token"), 1, cfg.dim),
            blocks: (0..cfg.dec_depth).map(|i| self.block(&format!("{name}.{i}"), cfg.dim, cfg.mlp_ratio)).collect(),
            norm: self.norm(&format!("{name}.norm"), cfg.dim),
        }
    }

    fn feature_head(&mut self, name: &str, cfg: &ModelConfig) -> FeatureHead {
        FeatureHead {
            coarse: self.linear(&format!("{name}.coarse"), cfg.dim, cfg.feat_channels, 1.0, None),
            fine: self.linear(&format!("{name}.fine"), cfg.dim, 4 * cfg.feat_channels, 1.0, None),
        }
    }

    fn sdf_mlp(&mut self, name: &str, cfg: &ModelConfig) -> SdfMlp {
        SdfMlp {
            l1: self.linear(&format!("{name}.l1"), cfg.sdf_input_dim(), cfg.sdf_hidden, 1.0, None),
            l2: self.linear(&format!("{name}.l2"), cfg.sdf_hidden, cfg.sdf_hidden, 1.0, None),
            l3: self.linear(&format!("{name}.l3"), cfg.sdf_hidden, 1, OUTPUT_GAIN, None),
        }
    }
}

/// Output nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub kept: Vec<usize>,
    pub encoded: NodeId,
    pub y_hand: NodeId,
    pub y_obj: NodeId,
    /// `[1×, 2×]` feature grids, one row per cell in row-major order.
    pub f_hand: [NodeId; 2],
    pub f_obj: [NodeId; 2],
    /// `(2g)² × 3` logits.
    pub seg: NodeId,
    /// `(2g)² × 21` heatmaps.
    pub heatmap: NodeId,
    /// `Q × 1` each.
    pub sdf_hand: NodeId,
    pub sdf_obj: NodeId,
    /// `1 × 9`: 6D rotation then translation.
    pub pose: NodeId,
    /// `16 × 6` local rotations.
    pub hand_rot: NodeId,
    /// `1 × 13`: shape then root translation.
    pub hand_shape: NodeId,
}

/// One input sample; `keep` has one flag per patch.
pub struct Sample<'a> {
    pub image: &'a RgbImage,
    pub keep: &'a [bool],
    pub queries: &'a [Vector3<f64>],
    pub camera: &'a CameraIntrinsics,
}

pub fn hand_params_from(rot: &Tensor, shape: &Tensor) -> HandParams {
    let mut p = HandParams::default();
    for (i, r) in p.rotations.iter_mut().enumerate() {
        *r = Rotation6D::from_slice(rot.row(i));
    }
    p.beta.copy_from_slice(&shape.data[..NUM_BETAS]);
    p.root_translation = Vector3::new(shape.data[NUM_BETAS], shape.data[NUM_BETAS + 1], shape.data[NUM_BETAS + 2]);
    p
}

pub fn object_pose_from(pose: &Tensor) -> ObjectPose {
    ObjectPose::from_slice(&pose.data)
}

impl MaskHoiNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder { store: &mut store, rng: ChaCha8Rng::seed_from_u64(cfg.seed) };
        let d = cfg.dim;
        let pp = cfg.patch_size * cfg.patch_size * 3;
        let patch_embed = b.linear("patch_embed", pp, d, 1.0, None);
        let encoder = (0..cfg.enc_depth).map(|i| b.block(&format!("enc.{i}"), d, cfg.mlp_ratio)).collect();
        let enc_norm = b.norm("enc.norm", d);
        let dec_hand = b.decoder("dec_hand", &cfg);
        let dec_obj = b.decoder("dec_obj", &cfg);
        let feat_hand = b.feature_head("feat_hand", &cfg);
        let feat_obj = b.feature_head("feat_obj", &cfg);
        let c = cfg.feat_channels;
        let seg = b.linear("seg", 2 * c, NUM_SEG_CLASSES, 1.0, None);
        let heatmap = b.linear("heatmap", c, NUM_HEATMAPS, 1.0, None);
        let sdf_hand = b.sdf_mlp("sdf_hand", &cfg);
        let sdf_obj = b.sdf_mlp("sdf_obj", &cfg);
        let h = cfg.head_hidden;
        let pose1 = b.linear("pose.l1", d, h, 1.0, None);
        let mut pose_bias = IDENTITY_6D.to_vec();
        pose_bias.extend([0.0, 0.0, DEPTH_PRIOR]);
        let pose2 = b.linear("pose.l2", h, POSE_DIM, OUTPUT_GAIN, Some(&pose_bias));
        let mut shape_bias = vec![0.0; SHAPE_DIM];
        shape_bias[SHAPE_DIM - 1] = DEPTH_PRIOR;
        let hand = HandHead {
            queries: b.token("hand.queries", NUM_HAND_QUERIES, d),
            ln_q: b.norm("hand.ln_q", d),
            ln_kv: b.norm("hand.ln_kv", d),
            q: b.linear("hand.q", d, d, 1.0, None),
            k: b.linear("hand.k", d, d, 1.0, None),
            v: b.linear("hand.v", d, d, 1.0, None),
            o: b.linear("hand.o", d, d, 1.0, None),
            ln_mlp: b.norm("hand.ln_mlp", d),
            fc1: b.linear("hand.fc1", d, cfg.mlp_ratio * d, 1.0, None),
            fc2: b.linear("hand.fc2", cfg.mlp_ratio * d, d, 1.0, None),
            rot: b.linear("hand.rot", d, 6, OUTPUT_GAIN, Some(&IDENTITY_6D)),
            shape: b.linear("hand.shape", d, SHAPE_DIM, OUTPUT_GAIN, Some(&shape_bias)),
        };
        let pos_embed = sincos_pos_embed(cfg.grid(), d);
        Ok(Self {
            cfg,
            params: store,
            pos_embed,
            patch_embed,
            encoder,
            enc_norm,
            dec_hand,
            dec_obj,
            feat_hand,
            feat_obj,
            seg,
            heatmap,
            sdf_hand,
            sdf_obj,
            pose1,
            pose2,
            hand,
        })
    }

    /// Flattened, normalized pixels of the kept patches (`N′ × p²·3`) and
    /// their indices. Masked patches are never read.
    pub fn kept_patches(&self, image: &RgbImage, keep: &[bool]) -> Result<(Tensor, Vec<usize>)> {
        let s = self.cfg.image_size;
        if image.width != s || image.height != s {
            return Err(Error::InvalidShape(format!("expected a {s}x{s} image, got {}x{}", image.width, image.height)));
        }
        if keep.len() != self.cfg.num_patches() {
            return Err(Error::InvalidShape(format!(
                "keep mask has {} entries for {} patches",
                keep.len(),
                self.cfg.num_patches()
            )));
        }
        let kept: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        if kept.is_empty() {
            return Err(Error::InvalidShape("no patch is kept".into()));
        }
        let p = self.cfg.patch_size;
        let g = self.cfg.grid();
        let mut t = Tensor::zeros(kept.len(), p * p * 3);
        for (row, &patch) in kept.iter().enumerate() {
            let (pr, pc) = (patch / g, patch % g);
            let dst = t.row_mut(row);
            for y in 0..p {
                for x in 0..p {
                    let px = image.get(pc * p + x, pr * p + y);
                    for ch in 0..3 {
                        dst[(y * p + x) * 3 + ch] = (px[ch] as f64 / 255.0 - 0.5) / 0.25;
                    }
                }
            }
        }
        Ok((t, kept))
    }

    /// Patch embedding plus positional embedding of the kept tokens.
    pub fn embed<'p>(&'p self, g: &mut Graph<'p>, patches: Tensor, kept: &[usize]) -> NodeId {
        let x = g.constant(patches);
        let x = g.linear(x, self.patch_embed.w, self.patch_embed.b);
        let pos = self.positions(kept);
        let pos = g.constant(pos);
        g.add(x, pos)
    }

    fn positions(&self, idx: &[usize]) -> Tensor {
        let d = self.cfg.dim;
        let mut t = Tensor::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            t.row_mut(r).copy_from_slice(self.pos_embed.row(i));
        }
        t
    }

    fn layer_norm<'p>(&'p self, g: &mut Graph<'p>, x: NodeId, n: Norm) -> NodeId {
        let (gm, bt) = (g.param(n.g), g.param(n.b));
        g.layer_norm(x, gm, bt)
    }

    /// Multi-head scaled dot-product attention of `q` rows over `k`/`v` rows.
    fn attend<'p>(&'p self, g: &mut Graph<'p>, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let d = g.value(q).cols;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<NodeId> = (0..heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let s = g.matmul_t(qh, kh, false, true);
                let s = g.scale(s, scale);
                let a = g.softmax_rows(s);
                g.matmul(a, vh)
            })
            .collect();
        if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        }
    }

    fn mlp<'p>(&'p self, g: &mut Graph<'p>, x: NodeId, fc1: Linear, fc2: Linear) -> NodeId {
        let h = g.linear(x, fc1.w, fc1.b);
        let h = g.gelu(h);
        g.linear(h, fc2.w, fc2.b)
    }

    /// Pre-norm transformer block.
    pub fn block<'p>(&'p self, g: &mut Graph<'p>, x: NodeId, b: &Block, heads: usize) -> NodeId {
        let d = self.cfg.dim;
        let h = self.layer_norm(g, x, b.ln1);
        let qkv = g.linear(h, b.qkv.w, b.qkv.b);
        let q = g.slice_cols(qkv, 0, d);
        let k = g.slice_cols(qkv, d, d);
        let v = g.slice_cols(qkv, 2 * d, d);
        let a = self.attend(g, q, k, v, heads);
        let a = g.linear(a, b.proj.w, b.proj.b);
        let x = g.add(x, a);
        let h = self.layer_norm(g, x, b.ln2);
        let m = self.mlp(g, h, b.fc1, b.fc2);
        g.add(x, m)
    }

    /// Shared encoder over the kept tokens (`N′ × D` in, `N′ × D` out).
    pub fn encode<'p>(&'p self, g: &mut Graph<'p>, tokens: NodeId) -> NodeId {
        let mut x = tokens;
        for b in &self.encoder {
            x = self.block(g, x, b, self.cfg.enc_heads);
        }
        self.layer_norm(g, x, self.enc_norm)
    }

    /// Restores the full `N × D` sequence with the decoder's mask token and
    /// runs its blocks.
    pub fn decode<'p>(&'p self, g: &mut Graph<'p>, dec: &Decoder, encoded: NodeId, kept: &[usize]) -> Result<NodeId> {
        let n = self.cfg.num_patches();
        let n_kept = g.value(encoded).rows;
        if n_kept != kept.len() || kept.windows(2).any(|w| w[0] >= w[1]) || kept.last().is_some_and(|&k| k >= n) {
            return Err(Error::InvalidShape("kept indices do not match the encoded tokens".into()));
        }
        let z = g.linear(encoded, dec.embed.w, dec.embed.b);
        let mt = g.param(dec.mask_token);
        let pool = g.concat_rows(&[z, mt]);
        let mut src = vec![n_kept; n];
        for (i, &k) in kept.iter().enumerate() {
            src[k] = i;
        }
        let full = g.gather_rows(pool, &src);
        let pos = g.constant(self.pos_embed.clone());
        let mut x = g.add(full, pos);
        for b in &dec.blocks {
            x = self.block(g, x, b, self.cfg.dec_heads);
        }
        Ok(self.layer_norm(g, x, dec.norm))
    }

    /// Reassembles tokens into the 1× grid and a learned pixel-shuffle 2×
    /// grid (plus the nearest-upsampled 1× grid). Rows are grid cells in
    /// row-major order.
    pub fn feature_head<'p>(&'p self, g: &mut Graph<'p>, head: &FeatureHead, y: NodeId) -> [NodeId; 2] {
        let n = self.cfg.grid();
        let c = self.cfg.feat_channels;
        let coarse = g.linear(y, head.coarse.w, head.coarse.b);
        let sub = g.linear(y, head.fine.w, head.fine.b);
        // token t, sub-cell s = 2·dy + dx sits at row 4t + s
        let sub = g.reshape(sub, 4 * n * n, c);
        let m = 2 * n;
        let mut shuffle = Vec::with_capacity(m * m);
        let mut up = Vec::with_capacity(m * m);
        for r in 0..m {
            for col in 0..m {
                let t = (r / 2) * n + col / 2;
                shuffle.push(4 * t + (r % 2) * 2 + col % 2);
                up.push(t);
            }
        }
        let fine = g.gather_rows(sub, &shuffle);
        let up = g.gather_rows(coarse, &up);
        let fine = g.add(fine, up);
        [coarse, fine]
    }

    /// Per-cell 3-class logits on the 2× grid from both branches.
    pub fn seg_head<'p>(&'p self, g: &mut Graph<'p>, f_hand: NodeId, f_obj: NodeId) -> NodeId {
        let x = g.concat_cols(&[f_hand, f_obj]);
        let x = g.gelu(x);
        g.linear(x, self.seg.w, self.seg.b)
    }

    /// Per-cell joint heatmaps on the 2× grid from the hand branch.
    pub fn heatmap_head<'p>(&'p self, g: &mut Graph<'p>, f_hand: NodeId) -> NodeId {
        let x = g.gelu(f_hand);
        g.linear(x, self.heatmap.w, self.heatmap.b)
    }

    /// Constant per-query part of the SDF input: Fourier encoding of the
    /// normalized point followed by the normalized point.
    pub fn query_encoding(&self, queries: &[Vector3<f64>]) -> Tensor {
        let c = Vector3::from(self.cfg.query_center);
        let width = 6 * self.cfg.fourier_bands + 3;
        let mut t = Tensor::zeros(queries.len(), width);
        for (i, p) in queries.iter().enumerate() {
            let q = normalize_query(p, &c, self.cfg.query_half_extent);
            let row = t.row_mut(i);
            row[..width - 3].copy_from_slice(&fourier_encode(&q, self.cfg.fourier_bands));
            row[width - 3..].copy_from_slice(q.as_slice());
        }
        t
    }

    /// Bilinear sampling weights of each query's projection on an `n×n` grid.
    pub fn sample_weights(&self, queries: &[Vector3<f64>], k: &CameraIntrinsics, n: usize) -> Result<RowMix> {
        let s = self.cfg.image_size;
        queries
            .iter()
            .map(|p| {
                let uv = project_point(p, k)?;
                let gxy = pixel_to_grid(&uv, (s, s), (n, n));
                Ok(bilinear_weights(n, n, &gxy).to_vec())
            })
            .collect()
    }

    /// `MLP(fourier(p) ⊕ p ⊕ f¹(π(p)) ⊕ f²(π(p)))`, one row per query.
    pub fn sdf_head<'p>(
        &'p self,
        g: &mut Graph<'p>,
        mlp: &SdfMlp,
        feats: [NodeId; 2],
        queries: &[Vector3<f64>],
        k: &CameraIntrinsics,
    ) -> Result<NodeId> {
        if queries.is_empty() {
            return Err(Error::InvalidShape("sdf head needs at least one query".into()));
        }
        let enc = g.constant(self.query_encoding(queries));
        let s1 = g.mix_rows(feats[0], self.sample_weights(queries, k, self.cfg.grid())?);
        let s2 = g.mix_rows(feats[1], self.sample_weights(queries, k, self.cfg.fine_grid())?);
        let x = g.concat_cols(&[enc, s1, s2]);
        Ok(self.sdf_mlp(g, mlp, x))
    }

    pub fn sdf_mlp<'p>(&'p self, g: &mut Graph<'p>, mlp: &SdfMlp, x: NodeId) -> NodeId {
        let h = g.linear(x, mlp.l1.w, mlp.l1.b);
        let h = g.gelu(h);
        let h = g.linear(h, mlp.l2.w, mlp.l2.b);
        let h = g.gelu(h);
        g.linear(h, mlp.l3.w, mlp.l3.b)
    }

    /// Mean-pool, MLP, 9 outputs.
    pub fn pose_head<'p>(&'p self, g: &mut Graph<'p>, y_obj: NodeId) -> NodeId {
        let x = g.mean_rows(y_obj);
        self.mlp(g, x, self.pose1, self.pose2)
    }

    /// Learned queries cross-attend to the hand tokens; rotation queries share
    /// a 6-output projection, the shape query emits shape and translation.
    pub fn hand_head<'p>(&'p self, g: &mut Graph<'p>, y_hand: NodeId) -> (NodeId, NodeId) {
        let h = &self.hand;
        let q0 = g.param(h.queries);
        let qn = self.layer_norm(g, q0, h.ln_q);
        let kv = self.layer_norm(g, y_hand, h.ln_kv);
        let q = g.linear(qn, h.q.w, h.q.b);
        let k = g.linear(kv, h.k.w, h.k.b);
        let v = g.linear(kv, h.v.w, h.v.b);
        let a = self.attend(g, q, k, v, self.cfg.dec_heads);
        let a = g.linear(a, h.o.w, h.o.b);
        let x = g.add(q0, a);
        let xn = self.layer_norm(g, x, h.ln_mlp);
        let m = self.mlp(g, xn, h.fc1, h.fc2);
        let x = g.add(x, m);
        let rot_rows: Vec<usize> = (0..NUM_ROTATIONS).collect();
        let rot_tokens = g.gather_rows(x, &rot_rows);
        let shape_token = g.gather_rows(x, &[NUM_ROTATIONS]);
        let rot = g.linear(rot_tokens, h.rot.w, h.rot.b);
        let shape = g.linear(shape_token, h.shape.w, h.shape.b);
        (rot, shape)
    }

    /// Full forward pass.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, s: &Sample<'_>) -> Result<Outputs> {
        let (patches, kept) = self.kept_patches(s.image, s.keep)?;
        let tokens = self.embed(g, patches, &kept);
        let encoded = self.encode(g, tokens);
        let y_hand = self.decode(g, &self.dec_hand, encoded, &kept)?;
        let y_obj = self.decode(g, &self.dec_obj, encoded, &kept)?;
        let f_hand = self.feature_head(g, &self.feat_hand, y_hand);
        let f_obj = self.feature_head(g, &self.feat_obj, y_obj);
        let seg = self.seg_head(g, f_hand[1], f_obj[1]);
        let heatmap = self.heatmap_head(g, f_hand[1]);
        let sdf_hand = self.sdf_head(g, &self.sdf_hand, f_hand, s.queries, s.camera)?;
        let sdf_obj = self.sdf_head(g, &self.sdf_obj, f_obj, s.queries, s.camera)?;
        let pose = self.pose_head(g, y_obj);
        let (hand_rot, hand_shape) = self.hand_head(g, y_hand);
        Ok(Outputs {
            kept,
            encoded,
            y_hand,
            y_obj,
            f_hand,
            f_obj,
            seg,
            heatmap,
            sdf_hand,
            sdf_obj,
            pose,
            hand_rot,
            hand_shape,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_shapes() {
        let cfg = ModelConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_patches(), 64);
        assert_eq!(cfg.sdf_input_dim(), 36 + 3 + 64);
        assert_eq!(ModelConfig::paper().num_patches(), 196);
        let bad = ModelConfig { enc_heads: 5, ..ModelConfig::desk() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pos_embed_rows_are_distinct() {
        let t = sincos_pos_embed(4, 16);
        for i in 0..16 {
            for j in 0..i {
                assert!(t.row(i).iter().zip(t.row(j)).any(|(a, b)| (a - b).abs() > 1e-6));
            }
        }
    }
}
