use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use maskhoi_cli::config::{Preset, RunConfig};
use maskhoi_cli::pipeline::{
    self, checkpoint_path, load_model, load_val, run_ablation, run_eval, run_pretrain, PretrainOptions,
};
use maskhoi_cli::vis;
use maskhoi_core::hand::HandSkeleton;
use maskhoi_model::network::MaskHoiNet;

#[derive(Parser)]
#[command(name = "maskhoi", about = "Masked hand-object pretraining on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Key = value file applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs/default")]
    out_dir: PathBuf,
    /// Tiny in-memory dataset and two optimization steps.
    #[arg(long, global = true)]
    dry_run: bool,
    #[arg(long, global = true, default_value = "desk")]
    preset: Preset,
}

#[derive(Subcommand)]
enum Command {
    /// Render and write the train and validation splits.
    GenerateData,
    /// Train from scratch or continue from a checkpoint.
    Pretrain {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Metrics on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Keep/mask overlays and run-length encoded plans.
    EvalMasks {
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// SDF slices along z-planes, predicted next to ground truth.
    EvalSdf {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        count: usize,
        #[arg(long, default_value_t = 5)]
        planes: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Masking strategy and skeleton proportion ablation.
    Ablate,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.preset, cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.dry_run {
        cfg.train_scenes = cfg.train_scenes.min(8);
        cfg.val_scenes = cfg.val_scenes.min(4);
        cfg.steps = 2;
        cfg.ablation_steps = 2;
        cfg.warmup_steps = 0;
        cfg.batch_size = cfg.batch_size.min(2);
    }
    cfg.validate()?;
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::GenerateData => {
            let root = cfg.data_root(out);
            pipeline::write_dataset(&cfg, &root, &HandSkeleton::template())?;
            println!("wrote {} train and {} val scenes to {}", cfg.train_scenes, cfg.val_scenes, root.display());
        }
        Command::Pretrain { resume } => {
            let opts = PretrainOptions {
                out_dir: out,
                resume: resume.as_deref(),
                max_steps: None,
                persist_data: !cli.dry_run,
                quiet: false,
            };
            let r = run_pretrain(&cfg, &opts)?;
            let last = r.log.last().map_or(f64::NAN, |(_, b)| b.total);
            println!("trained to step {} in {:.1}s, last loss {last:.4}, checkpoint {}", r.adam.step, r.seconds, checkpoint_path(out).display());
        }
        Command::Eval { checkpoint } => {
            let ck = checkpoint.unwrap_or_else(|| checkpoint_path(out));
            let s = run_eval(&cfg, &ck, out)?;
            for (k, v) in &s.rows {
                println!("{k:>24}  {v:.4}");
            }
        }
        Command::EvalMasks { count } => {
            let net = MaskHoiNet::new(cfg.model.clone())?;
            let n = vis::dump_masks(&cfg, &net, load_val(&cfg, out, !cli.dry_run)?, count, &out.join("masks"))?;
            println!("wrote {n} overlays to {}", out.join("masks").display());
        }
        Command::EvalSdf { checkpoint, count, planes, resolution } => {
            let ck = checkpoint.unwrap_or_else(|| checkpoint_path(out));
            let net = load_model(&cfg, &ck)?;
            let val: Vec<_> = load_val(&cfg, out, !cli.dry_run)?.into_iter().take(count).collect();
            let n = vis::dump_sdf_slices(&net, &val, planes, resolution, &out.join("sdf"))?;
            println!("wrote {n} slices to {}", out.join("sdf").display());
        }
        Command::Ablate => {
            let table = run_ablation(&cfg, out, false)?;
            for r in &table {
                println!("{}", r.join("  "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
