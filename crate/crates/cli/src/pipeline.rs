//! Dataset preparation, the training loop, evaluation and the masking
//! ablation.
//!
//! Every random choice is seeded from `(seed, step, sample)`, per-sample
//! gradients are reduced in batch order, and parameters and optimizer
//! moments are kept on the `f32` grid, so a run is reproducible bit for bit
//! and a resumed run continues exactly where the checkpoint left off.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maskhoi_core::eval::{
    hand_metrics, model_points, object_metrics, HandMetricConfig, HandMetrics, ObjectMetrics, DEFAULT_ADDS_POINTS,
};
use maskhoi_core::hand::HandSkeleton;
use maskhoi_core::masking::{build_mask_plan, classify_from_seg, MaskMode, MaskPlan, PatchGrid, RegionLabels};
use maskhoi_core::scene::{read_split, sample_scene, split_seeds, write_split, Manifest, SceneRecord, DATASET_FORMAT_VERSION};
use maskhoi_model::checkpoint::Checkpoint;
use maskhoi_model::losses::{supervise, LossBundle, SampleTargets};
use maskhoi_model::network::{hand_params_from, object_pose_from, MaskHoiNet, Sample, NUM_SEG_CLASSES};
use maskhoi_model::optim::{lr_schedule, AdamState, AdamW};
use maskhoi_model::tape::Graph;
use maskhoi_model::tensor::Tensor;
use nalgebra::Vector3;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{EvalMasking, RunConfig};

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_SAMPLE_FILE: &str = "per_sample.csv";
pub const LOG_HEADER: [&str; 7] = ["step", "lr", "l2d", "l3d", "lh", "lo", "total"];

const EVAL_SEED: u64 = 0xE7A1;

/// SplitMix64 finalizer; combines seeds into independent streams.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn manifest_for(cfg: &RunConfig, split: &str) -> Manifest {
    let (count, seed_base) =
        if split == "train" { (cfg.train_scenes, cfg.data_seed) } else { (cfg.val_scenes, cfg.val_seed_base()) };
    Manifest {
        format_version: DATASET_FORMAT_VERSION,
        split: split.to_string(),
        count,
        image_size: cfg.model.image_size,
        patch_size: cfg.model.patch_size,
        seed_base,
        sdf_samples_per_scene: cfg.sdf_samples,
    }
}

/// Generates a split in parallel; records come back in seed order.
pub fn generate_split(cfg: &RunConfig, manifest: &Manifest, skel: &HandSkeleton) -> Result<Vec<SceneRecord>> {
    let scene_cfg = cfg.scene_config();
    let seeds = split_seeds(manifest.seed_base, manifest.count);
    let records = seeds
        .par_iter()
        .map(|&s| sample_scene(s, &scene_cfg, skel))
        .collect::<maskhoi_core::Result<Vec<_>>>()?;
    Ok(records)
}

pub fn write_dataset(cfg: &RunConfig, root: &Path, skel: &HandSkeleton) -> Result<()> {
    for split in ["train", "val"] {
        let m = manifest_for(cfg, split);
        let records = generate_split(cfg, &m, skel)?;
        write_split(&root.join(split), &m, &records, skel).with_context(|| format!("writing split {split}"))?;
        std::fs::write(root.join("hand_template.txt"), skel.to_text())?;
    }
    Ok(())
}

/// Reads a split whose manifest matches the configuration, or generates
/// it (and writes it when `persist` is set).
pub fn load_split(cfg: &RunConfig, root: &Path, split: &str, skel: &HandSkeleton, persist: bool) -> Result<Vec<SceneRecord>> {
    let want = manifest_for(cfg, split);
    let dir = root.join(split);
    if dir.join("meta.json").exists() {
        let (m, records) = read_split(&dir).with_context(|| format!("reading {}", dir.display()))?;
        if m == want {
            return Ok(records);
        }
        if cfg.data_dir.is_some() {
            bail!("dataset at {} does not match the configuration (found {:?})", dir.display(), m);
        }
    }
    let records = generate_split(cfg, &want, skel)?;
    if persist {
        write_split(&dir, &want, &records, skel)?;
        std::fs::write(root.join("hand_template.txt"), skel.to_text())?;
    }
    Ok(records)
}

/// Per-scene data that does not change between steps.
pub struct Prepared {
    pub record: SceneRecord,
    pub regions: RegionLabels,
    pub targets: SampleTargets,
    pub queries: Vec<Vector3<f64>>,
}

pub fn prepare(records: Vec<SceneRecord>, net: &MaskHoiNet, grid: &PatchGrid) -> Result<Vec<Prepared>> {
    records
        .into_iter()
        .map(|record| {
            if record.image.width != net.cfg.image_size {
                bail!("scene image is {} pixels wide, model expects {}", record.image.width, net.cfg.image_size);
            }
            let regions = classify_from_seg(grid, &record.seg)?;
            let targets = SampleTargets::from_record(&record, net.cfg.fine_grid())?;
            let queries = record.sdf_samples.iter().map(|s| s.p).collect();
            Ok(Prepared { record, regions, targets, queries })
        })
        .collect()
}

/// One sample of a training batch.
pub struct BatchItem<'a> {
    pub prepared: &'a Prepared,
    pub keep: Vec<bool>,
    /// Indices into the scene's SDF samples.
    pub queries: Vec<usize>,
}

impl BatchItem<'_> {
    fn targets(&self) -> SampleTargets {
        let t = &self.prepared.targets;
        SampleTargets {
            sdf_hand: self.queries.iter().map(|&i| t.sdf_hand[i]).collect(),
            sdf_obj: self.queries.iter().map(|&i| t.sdf_obj[i]).collect(),
            ..t.clone()
        }
    }
}

/// Mean loss and summed gradients of `weight · loss` over the batch.
pub fn batch_gradients(
    net: &MaskHoiNet,
    batch: &[BatchItem<'_>],
    cfg: &RunConfig,
    skel: &HandSkeleton,
) -> Result<(LossBundle, Vec<Tensor>)> {
    let weight = 1.0 / batch.len() as f64;
    let per_sample = batch
        .par_iter()
        .map(|item| -> Result<(LossBundle, Vec<Option<Tensor>>)> {
            let rec = &item.prepared.record;
            let queries: Vec<Vector3<f64>> = item.queries.iter().map(|&i| item.prepared.queries[i]).collect();
            let mut g = Graph::new(&net.params);
            let sample = Sample { image: &rec.image, keep: &item.keep, queries: &queries, camera: &rec.camera };
            let out = net.forward(&mut g, &sample)?;
            let (bundle, seeds) = supervise(&g, &out, &item.targets(), cfg.lambdas, skel, weight)?;
            Ok((bundle, g.backward(&seeds).into_param_grads()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads: Vec<Tensor> = net.params.entries.iter().map(|p| Tensor::zeros(p.value.rows, p.value.cols)).collect();
    let mut bundles = Vec::with_capacity(per_sample.len());
    for (bundle, g) in per_sample {
        bundles.push(bundle);
        for (acc, gi) in grads.iter_mut().zip(g) {
            if let Some(gi) = gi {
                acc.add_assign(&gi);
            }
        }
    }
    Ok((LossBundle::mean(&bundles, cfg.lambdas), grads))
}

/// One forward/backward/update. Returns the batch loss before the update.
pub fn train_step(
    net: &mut MaskHoiNet,
    adam: &mut AdamState,
    opt: &AdamW,
    batch: &[BatchItem<'_>],
    cfg: &RunConfig,
    skel: &HandSkeleton,
    lr: f64,
) -> Result<LossBundle> {
    let (bundle, grads) = batch_gradients(net, batch, cfg, skel)?;
    if !bundle.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        bail!("non-finite loss or gradient");
    }
    opt.step(&mut net.params, adam, &grads, lr)?;
    Ok(bundle)
}

pub fn mask_plan(
    cfg: &RunConfig,
    grid: &PatchGrid,
    p: &Prepared,
    rho: f64,
    seed: u64,
) -> Result<MaskPlan> {
    let mut mc = cfg.mask;
    mc.skeleton_proportion = rho;
    let plan = build_mask_plan(grid, &p.regions, &p.record.keypoints2d, &mc, seed)?;
    if plan.n_keep() == 0 {
        bail!("mask plan keeps no patch (scene seed {})", p.record.seed);
    }
    Ok(plan)
}

/// Samples, masks and SDF queries of one step; depends only on
/// `(cfg.seed, step)`.
pub fn assemble_batch<'a>(cfg: &RunConfig, grid: &PatchGrid, data: &'a [Prepared], step: u64) -> Result<Vec<BatchItem<'a>>> {
    let step_seed = mix(cfg.seed, step);
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    let rho = cfg.skeleton_proportion_at(step, cfg.steps);
    (0..cfg.batch_size)
        .map(|b| {
            let prepared = &data[rng.random_range(0..data.len())];
            let sample_seed = mix(step_seed, b as u64 + 1);
            let keep = mask_plan(cfg, grid, prepared, rho, sample_seed)?.keep;
            let n = prepared.queries.len();
            let queries = if cfg.sdf_queries == 0 || cfg.sdf_queries >= n {
                (0..n).collect()
            } else {
                let mut q = sample_indices(&mut ChaCha8Rng::seed_from_u64(mix(sample_seed, 7)), n, cfg.sdf_queries).into_vec();
                q.sort_unstable();
                q
            };
            Ok(BatchItem { prepared, keep, queries })
        })
        .collect()
}

pub fn log_row(step: u64, lr: f64, b: &LossBundle) -> Vec<String> {
    let mut row = vec![step.to_string()];
    row.extend([lr, b.l2d, b.l3d, b.lh, b.lo, b.total].iter().map(f64::to_string));
    row
}

/// Parsed training log.
pub fn read_log(path: &Path) -> Result<Vec<(u64, [f64; 6])>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let step: u64 = rec[0].parse()?;
        let mut v = [0.0; 6];
        for (i, x) in v.iter_mut().enumerate() {
            *x = rec[i + 1].parse()?;
        }
        rows.push((step, v));
    }
    Ok(rows)
}

pub struct PretrainOutcome {
    pub net: MaskHoiNet,
    pub adam: AdamState,
    pub log: Vec<(u64, LossBundle)>,
    pub seconds: f64,
}

pub struct PretrainOptions<'a> {
    pub out_dir: &'a Path,
    pub resume: Option<&'a Path>,
    /// Stop after this many steps of this invocation (the schedule still
    /// spans `cfg.steps`).
    pub max_steps: Option<u64>,
    pub persist_data: bool,
    pub quiet: bool,
}

fn init_net(cfg: &RunConfig) -> Result<MaskHoiNet> {
    let mut net = MaskHoiNet::new(cfg.model.clone())?;
    net.params.round_to_f32();
    Ok(net)
}

pub fn load_train_data(cfg: &RunConfig, out_dir: &Path, skel: &HandSkeleton, persist: bool) -> Result<Vec<SceneRecord>> {
    load_split(cfg, &cfg.data_root(out_dir), "train", skel, persist)
}

/// Training loop writing `train_log.csv`, `checkpoint.bin` and `config.txt`.
pub fn run_pretrain(cfg: &RunConfig, opts: &PretrainOptions<'_>) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let skel = HandSkeleton::template();
    std::fs::create_dir_all(opts.out_dir)?;
    let mut net = init_net(cfg)?;
    let grid = PatchGrid::new(cfg.model.image_size, cfg.model.image_size, cfg.model.patch_size)?;
    let records = load_train_data(cfg, opts.out_dir, &skel, opts.persist_data)?;
    let data = prepare(records, &net, &grid)?;

    let mut adam = AdamState::new(&net.params);
    let mut log_rows: Vec<Vec<String>> = Vec::new();
    let log_path = opts.out_dir.join(LOG_FILE);
    if let Some(ck) = opts.resume {
        let ck = Checkpoint::load(ck).with_context(|| format!("loading checkpoint {}", ck.display()))?;
        adam = ck.restore(&mut net.params)?;
        if log_path.exists() {
            let mut r = csv::Reader::from_path(&log_path)?;
            for rec in r.records() {
                let rec = rec?;
                if rec[0].parse::<u64>()? < adam.step {
                    log_rows.push(rec.iter().map(str::to_string).collect());
                }
            }
        }
    }
    std::fs::write(opts.out_dir.join(CONFIG_FILE), cfg.to_text())?;
    let start = adam.step;
    let end = opts.max_steps.map_or(cfg.steps, |m| (start + m).min(cfg.steps));
    let t0 = std::time::Instant::now();
    let mut log = Vec::new();
    for step in start..end {
        let lr = lr_schedule(step, cfg.steps, cfg.lr, cfg.warmup_steps);
        let batch = assemble_batch(cfg, &grid, &data, step)?;
        let bundle = train_step(&mut net, &mut adam, &cfg.optimizer, &batch, cfg, &skel, lr)
            .with_context(|| format!("step {step}"))?;
        log_rows.push(log_row(step, lr, &bundle));
        log.push((step, bundle));
        if !opts.quiet && (step % 50 == 0 || step + 1 == end) {
            eprintln!(
                "step {step:>5}  lr {lr:.2e}  total {:.4}  2d {:.4}  3d {:.4}  hand {:.4}  obj {:.4}  ({:.0}s)",
                bundle.total,
                bundle.l2d,
                bundle.l3d,
                bundle.lh,
                bundle.lo,
                t0.elapsed().as_secs_f64()
            );
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            Checkpoint::capture(&net.params, &adam).save(&opts.out_dir.join(format!("ckpt_{:06}.bin", step + 1)))?;
        }
    }
    let mut w = csv::Writer::from_path(&log_path)?;
    w.write_record(LOG_HEADER)?;
    for r in &log_rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Checkpoint::capture(&net.params, &adam).save(&opts.out_dir.join(CHECKPOINT_FILE))?;
    Ok(PretrainOutcome { net, adam, log, seconds: t0.elapsed().as_secs_f64() })
}

/// Evaluation of one held-out scene.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub seed: u64,
    pub bundle: LossBundle,
    pub seg_correct: usize,
    pub seg_total: usize,
    /// Per-class `(correct, total)` over full-resolution pixels.
    pub seg_class: [(usize, usize); NUM_SEG_CLASSES],
    /// `(correct, total)` of the predicted SDF sign, hand then object.
    pub sdf_sign: [(usize, usize); 2],
    /// Inside-point `(correct, total)`, hand then object.
    pub sdf_inside: [(usize, usize); 2],
    pub sdf_l1: f64,
    pub hand: HandMetrics,
    pub object: ObjectMetrics,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub samples: Vec<SampleEval>,
    pub rows: Vec<(String, f64)>,
}

impl EvalSummary {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Evaluates on records with all their SDF samples; masks follow
/// `cfg.eval_masking`.
pub fn evaluate(net: &MaskHoiNet, cfg: &RunConfig, records: Vec<SceneRecord>) -> Result<EvalSummary> {
    let skel = HandSkeleton::template();
    let grid = PatchGrid::new(cfg.model.image_size, cfg.model.image_size, cfg.model.patch_size)?;
    let data = prepare(records, net, &grid)?;
    let hcfg = HandMetricConfig::default();
    let rho = cfg.skeleton_proportion_at(cfg.steps.saturating_sub(1), cfg.steps);
    let fine = cfg.model.fine_grid();
    let size = cfg.model.image_size;
    let samples = data
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<SampleEval> {
            let rec = &p.record;
            let keep = match cfg.eval_masking {
                EvalMasking::Train => mask_plan(cfg, &grid, p, rho, mix(EVAL_SEED, i as u64))?.keep,
                EvalMasking::None => vec![true; grid.len()],
            };
            let mut g = Graph::new(&net.params);
            let out = net.forward(&mut g, &Sample { image: &rec.image, keep: &keep, queries: &p.queries, camera: &rec.camera })?;
            let (bundle, _) = supervise(&g, &out, &p.targets, cfg.lambdas, &skel, 1.0)?;

            let logits = g.value(out.seg);
            let mut seg_class = [(0, 0); NUM_SEG_CLASSES];
            let scale = size / fine;
            for y in 0..size {
                for x in 0..size {
                    let row = logits.row((y / scale) * fine + x / scale);
                    let pred = (0..NUM_SEG_CLASSES).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                    let gt = rec.seg[y * size + x] as usize;
                    seg_class[gt].1 += 1;
                    if pred == gt {
                        seg_class[gt].0 += 1;
                    }
                }
            }
            let seg_correct = seg_class.iter().map(|c| c.0).sum();

            let mut sdf_sign = [(0, 0); 2];
            let mut sdf_inside = [(0, 0); 2];
            let mut l1 = 0.0;
            let preds = [&g.value(out.sdf_hand).data, &g.value(out.sdf_obj).data];
            let gts = [&p.targets.sdf_hand, &p.targets.sdf_obj];
            for k in 0..2 {
                for (pd, gd) in preds[k].iter().zip(gts[k].iter()) {
                    let ok = (*pd < 0.0) == (*gd < 0.0);
                    sdf_sign[k].1 += 1;
                    sdf_sign[k].0 += ok as usize;
                    if *gd < 0.0 {
                        sdf_inside[k].1 += 1;
                        sdf_inside[k].0 += ok as usize;
                    }
                    l1 += (pd - gd.clamp(-0.1, 0.1)).abs();
                }
            }
            let n_q = (preds[0].len() + preds[1].len()) as f64;

            let pred_hand = hand_params_from(g.value(out.hand_rot), g.value(out.hand_shape));
            let hand = hand_metrics(&skel.forward_kinematics(&pred_hand)?, &skel.forward_kinematics(&rec.hand_params)?, &hcfg)?;
            let model = rec.object_shape.mesh();
            let pts = model_points(&model, DEFAULT_ADDS_POINTS, rec.seed);
            let object = object_metrics(&object_pose_from(g.value(out.pose)), &rec.object_pose, &model, &pts)?;
            Ok(SampleEval {
                seed: rec.seed,
                bundle,
                seg_correct,
                seg_total: size * size,
                seg_class,
                sdf_sign,
                sdf_inside,
                sdf_l1: l1 / n_q,
                hand,
                object,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = summarize(&samples, cfg);
    Ok(EvalSummary { samples, rows })
}

fn ratio(c: usize, t: usize) -> f64 {
    if t == 0 {
        f64::NAN
    } else {
        c as f64 / t as f64
    }
}

fn summarize(samples: &[SampleEval], cfg: &RunConfig) -> Vec<(String, f64)> {
    let n = samples.len() as f64;
    let sum2 = |f: &dyn Fn(&SampleEval) -> (usize, usize)| {
        samples.iter().map(f).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
    };
    let mut rows: Vec<(String, f64)> = Vec::new();
    let seg = sum2(&|s| (s.seg_correct, s.seg_total));
    rows.push(("seg_pixel_acc".into(), ratio(seg.0, seg.1)));
    let recalls: Vec<f64> =
        (0..NUM_SEG_CLASSES).map(|c| sum2(&|s| s.seg_class[c])).filter(|r| r.1 > 0).map(|r| ratio(r.0, r.1)).collect();
    rows.push(("seg_balanced_acc".into(), recalls.iter().sum::<f64>() / recalls.len().max(1) as f64));
    let sh = sum2(&|s| s.sdf_sign[0]);
    let so = sum2(&|s| s.sdf_sign[1]);
    rows.push(("sdf_sign_acc".into(), ratio(sh.0 + so.0, sh.1 + so.1)));
    rows.push(("sdf_sign_acc_hand".into(), ratio(sh.0, sh.1)));
    rows.push(("sdf_sign_acc_object".into(), ratio(so.0, so.1)));
    let ih = sum2(&|s| s.sdf_inside[0]);
    let io = sum2(&|s| s.sdf_inside[1]);
    // accuracy of always answering "outside"
    rows.push(("sdf_sign_baseline".into(), 1.0 - ratio(ih.1 + io.1, sh.1 + so.1)));
    rows.push(("sdf_inside_recall_hand".into(), ratio(ih.0, ih.1)));
    rows.push(("sdf_inside_recall_object".into(), ratio(io.0, io.1)));
    rows.push(("sdf_l1".into(), samples.iter().map(|s| s.sdf_l1).sum::<f64>() / n));
    let hm = HandMetrics::mean(&samples.iter().map(|s| s.hand).collect::<Vec<_>>());
    for (name, v) in HandMetrics::NAMES.iter().zip(hm.values()) {
        rows.push(((*name).into(), v));
    }
    let om = ObjectMetrics::mean(&samples.iter().map(|s| s.object).collect::<Vec<_>>());
    for (name, v) in ObjectMetrics::NAMES.iter().zip(om.values()) {
        rows.push(((*name).into(), v));
    }
    let b = LossBundle::mean(&samples.iter().map(|s| s.bundle).collect::<Vec<_>>(), cfg.lambdas);
    for (name, v) in [("loss_2d", b.l2d), ("loss_3d", b.l3d), ("loss_hand", b.lh), ("loss_object", b.lo), ("loss_total", b.total)] {
        rows.push((name.into(), v));
    }
    rows.push(("scenes".into(), n));
    rows
}

pub fn write_metrics(dir: &Path, summary: &EvalSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(METRICS_FILE))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in &summary.rows {
        w.write_record([k.clone(), v.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(PER_SAMPLE_FILE))?;
    let mut header: Vec<String> = ["seed", "seg_acc", "sdf_sign_acc", "sdf_l1", "loss_total"].map(String::from).to_vec();
    header.extend(HandMetrics::NAMES.iter().map(|s| s.to_string()));
    header.extend(ObjectMetrics::NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for s in &summary.samples {
        let sign = ratio(s.sdf_sign[0].0 + s.sdf_sign[1].0, s.sdf_sign[0].1 + s.sdf_sign[1].1);
        let mut row = vec![
            s.seed.to_string(),
            ratio(s.seg_correct, s.seg_total).to_string(),
            sign.to_string(),
            s.sdf_l1.to_string(),
            s.bundle.total.to_string(),
        ];
        row.extend(s.hand.values().iter().map(|v| v.to_string()));
        row.extend(s.object.values().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<MaskHoiNet> {
    let mut net = MaskHoiNet::new(cfg.model.clone())?;
    Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?
        .restore_params(&mut net.params)?;
    Ok(net)
}

pub fn load_val(cfg: &RunConfig, out_dir: &Path, persist: bool) -> Result<Vec<SceneRecord>> {
    load_split(cfg, &cfg.data_root(out_dir), "val", &HandSkeleton::template(), persist)
}

pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path) -> Result<EvalSummary> {
    cfg.validate()?;
    let net = load_model(cfg, checkpoint)?;
    let summary = evaluate(&net, cfg, load_val(cfg, out_dir, true)?)?;
    write_metrics(out_dir, &summary)?;
    Ok(summary)
}

/// One configuration of the masking ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub group: &'static str,
    pub name: &'static str,
    pub mode: MaskMode,
    pub skeleton_proportion: f64,
    pub ramp: bool,
}

/// Global random vs. regional rates vs. regional rates with skeleton
/// guidance, then the skeleton proportion sweep (0 is the regional-only row).
pub fn ablation_rows() -> Vec<AblationRow> {
    let row = |group, name, mode, rho, ramp| AblationRow { group, name, mode, skeleton_proportion: rho, ramp };
    vec![
        row("masking", "global-random", MaskMode::GlobalRandom, 0.0, false),
        row("masking+proportion", "rmra (rho=0)", MaskMode::Regional, 0.0, false),
        row("masking+proportion", "rmra+skeleton (rho=0.5)", MaskMode::Regional, 0.5, false),
        row("proportion", "rmra+skeleton (rho=1.0)", MaskMode::Regional, 1.0, false),
        row("proportion", "rmra+skeleton (ramp 0->1)", MaskMode::Regional, 0.0, true),
    ]
}

pub const ABLATION_COLUMNS: [&str; 11] = [
    "group",
    "masking",
    "skeleton_proportion",
    "final_loss",
    "seg_pixel_acc",
    "sdf_sign_acc",
    "sdf_l1",
    "mje",
    "pamje",
    "mme",
    "add_s",
];

/// Trains every ablation row from the same initialization and batch seeds
/// and evaluates each on the validation split. Writes `ablation.csv` and
/// `ablation.md` and returns the table rows.
pub fn run_ablation(cfg: &RunConfig, out_dir: &Path, quiet: bool) -> Result<Vec<Vec<String>>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let skel = HandSkeleton::template();
    let root = cfg.data_root(out_dir);
    load_split(cfg, &root, "train", &skel, true)?;
    let val = load_val(cfg, out_dir, true)?;
    let mut table = Vec::new();
    for (i, row) in ablation_rows().iter().enumerate() {
        let mut c = cfg.clone();
        c.steps = cfg.ablation_steps;
        c.warmup_steps = cfg.warmup_steps.min(c.steps / 10);
        c.mask.mode = row.mode;
        c.mask.skeleton_proportion = row.skeleton_proportion;
        c.skeleton_ramp = row.ramp;
        c.data_dir = Some(root.clone());
        c.checkpoint_every = 0;
        let dir = out_dir.join(format!("ablation_{i}"));
        if !quiet {
            eprintln!("ablation row {i}: {}", row.name);
        }
        let run = run_pretrain(&c, &PretrainOptions { out_dir: &dir, resume: None, max_steps: None, persist_data: false, quiet })?;
        let summary = evaluate(&run.net, &c, val.clone())?;
        write_metrics(&dir, &summary)?;
        let tail: Vec<f64> = run.log.iter().rev().take(20).map(|(_, b)| b.total).collect();
        let final_loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
        let rho = if row.ramp { "ramp".to_string() } else { row.skeleton_proportion.to_string() };
        let rho = if row.mode == MaskMode::GlobalRandom { "-".to_string() } else { rho };
        let get = |k: &str| summary.get(k).map_or("nan".to_string(), |v| format!("{v:.4}"));
        table.push(vec![
            row.group.to_string(),
            row.name.to_string(),
            rho,
            format!("{final_loss:.4}"),
            get("seg_pixel_acc"),
            get("sdf_sign_acc"),
            get("sdf_l1"),
            get("mje"),
            get("pamje"),
            get("mme"),
            get("add_s"),
        ]);
    }
    let mut w = csv::Writer::from_path(out_dir.join("ablation.csv"))?;
    w.write_record(ABLATION_COLUMNS)?;
    for r in &table {
        w.write_record(r)?;
    }
    w.flush()?;
    let mut md = File::create(out_dir.join("ablation.md"))?;
    writeln!(md, "| {} |", ABLATION_COLUMNS.join(" | "))?;
    writeln!(md, "|{}", "---|".repeat(ABLATION_COLUMNS.len()))?;
    for r in &table {
        writeln!(md, "| {} |", r.join(" | "))?;
    }
    Ok(table)
}

pub fn checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join(CHECKPOINT_FILE)
}
