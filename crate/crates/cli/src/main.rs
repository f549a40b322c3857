//! Command-line driver: dataset generation, the four training stages, the
//! domain-discriminability study, and evaluation. One command is one
//! process; everything is seeded and single-threaded by default, so a rerun
//! with identical inputs writes byte-identical outputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or prerequisite error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use astseg_core::ast::AstModule;
use astseg_core::config::RunConfig;
use astseg_core::ddm;
use astseg_core::error::Error;
use astseg_core::pipeline::{
    adapt_stage, evaluate, init_models, load_checkpoint, preadapt_stage, save_checkpoint,
    train_ast_stage, train_erm, RunDir,
};
use astseg_core::segmentor::Segmentor;
use astseg_core::synthdata::{load_dataset, make_splits, write_dataset, Dataset};
use astseg_core::tensor::Tensor;

#[derive(Parser)]
#[command(name = "astseg", version, about = "Amplitude-spectrum feature stylization for open compound domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain benchmark.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Source-only training of the segmentor.
    TrainErm(StageArgs),
    /// Auto-encoder pretraining at both manipulation sites.
    TrainAst(StageArgs),
    /// Pre-adaptation finetuning (segmentor and auto-encoders alternate).
    Preadapt(StageArgs),
    /// Simulate-then-normalize adaptation.
    Adapt(StageArgs),
    /// Domain-discriminability study over the probe split.
    Ddm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// "pre" probes the source-only checkpoint, "post" the adapted one.
        #[arg(long)]
        phase: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify the latent-vs-spatial margin in an emitted study CSV.
    DdmCheck {
        #[arg(long)]
        run: PathBuf,
        /// Allowed slack below the spatial score.
        #[arg(long, default_value_t = 0.02)]
        slack: f64,
    },
    /// Per-class IoU and mIoU of a labeled split.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// "compound" or "open".
        #[arg(long)]
        split: String,
        /// Checkpoint to evaluate: "adapt" (default), "preadapt" or "erm"
        /// (source-only baseline, plain path).
        #[arg(long, default_value = "adapt")]
        checkpoint: String,
    },
}

#[derive(clap::Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Freeze the config into the run directory on first use; later stages must
/// present the identical configuration.
fn freeze_config(run: &RunDir, cfg: &RunConfig) -> Result<(), Error> {
    let json = cfg.to_json()?;
    let path = run.config_path();
    if path.exists() {
        let stored = std::fs::read_to_string(&path)?;
        if stored != json {
            return Err(Error::Config(format!(
                "{} differs from the provided config; runs are frozen to one configuration",
                path.display()
            )));
        }
    } else {
        std::fs::write(&path, json)?;
    }
    Ok(())
}

fn require(path: &Path, produced_by: &str) -> Result<(), Error> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing {}; run `{produced_by}` first",
            path.display()
        )));
    }
    Ok(())
}

fn load_data(dir: &Path) -> Result<Dataset, Error> {
    require(&dir.join("manifest.json"), "gen-data")?;
    load_dataset(dir)
}

fn final_epoch_ckpt(run: &RunDir) -> Result<PathBuf, Error> {
    let dir = run.root.join("checkpoints");
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(num) = name.strip_prefix("epoch_").and_then(|s| s.strip_suffix(".astc")) {
            if let Ok(n) = num.parse::<usize>() {
                if best.as_ref().is_none_or(|(b, _)| n > *b) {
                    best = Some((n, path.clone()));
                }
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Config("no adaptation checkpoint found; run `adapt` first".into()))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData { config, out, force, seed } => {
            let cfg = load_config(&config, seed)?;
            if out.exists() && std::fs::read_dir(&out)?.next().is_some() {
                if !force {
                    return Err(Error::Config(format!(
                        "{} exists and is not empty; pass --force to overwrite",
                        out.display()
                    )));
                }
                std::fs::remove_dir_all(&out)?;
            }
            let ds = make_splits(&cfg.data, cfg.seed)?;
            write_dataset(&out, &cfg.data, &ds)?;
            println!(
                "wrote {} source / {} compound / {} open / {} probe samples to {}",
                ds.source.len(),
                ds.compound.len(),
                ds.open.len(),
                ds.ddm.len(),
                out.display()
            );
            Ok(())
        }
        Command::TrainErm(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            let ds = load_data(&args.data)?;
            let run = RunDir::new(&args.out);
            run.create()?;
            freeze_config(&run, &cfg)?;
            let (mut seg, _, _) = init_models(&cfg)?;
            let history = train_erm(&cfg, &ds, &mut seg)?;
            save_checkpoint(&run.erm_ckpt(), Some(&seg), None, None, None)?;
            println!(
                "erm: {} steps, loss {:.4} -> {:.4}, checkpoint {}",
                history.len(),
                history.first().unwrap_or(&f64::NAN),
                history.last().unwrap_or(&f64::NAN),
                run.erm_ckpt().display()
            );
            Ok(())
        }
        Command::TrainAst(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            let ds = load_data(&args.data)?;
            let run = RunDir::new(&args.out);
            run.create()?;
            freeze_config(&run, &cfg)?;
            require(&run.erm_ckpt(), "train-erm")?;
            let (mut seg, mut cs, mut dn) = init_models(&cfg)?;
            load_checkpoint(&run.erm_ckpt(), Some(&mut seg), None, None, None)?;
            let (hist_cs, hist_dn) = train_ast_stage(&cfg, &ds, &seg, &mut cs, &mut dn)?;
            save_checkpoint(&run.ast_ckpt(), None, Some(&cs), Some(&dn), None)?;
            println!(
                "ast: early site loss {:.4} -> {:.4}, late site loss {:.4} -> {:.4}",
                hist_cs.first().unwrap_or(&f64::NAN),
                hist_cs.last().unwrap_or(&f64::NAN),
                hist_dn.first().unwrap_or(&f64::NAN),
                hist_dn.last().unwrap_or(&f64::NAN),
            );
            Ok(())
        }
        Command::Preadapt(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            let ds = load_data(&args.data)?;
            let run = RunDir::new(&args.out);
            run.create()?;
            freeze_config(&run, &cfg)?;
            require(&run.erm_ckpt(), "train-erm")?;
            require(&run.ast_ckpt(), "train-ast")?;
            let (mut seg, mut cs, mut dn) = init_models(&cfg)?;
            load_checkpoint(&run.erm_ckpt(), Some(&mut seg), None, None, None)?;
            load_checkpoint(&run.ast_ckpt(), None, Some(&mut cs), Some(&mut dn), None)?;
            preadapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn)?;
            save_checkpoint(&run.preadapt_ckpt(), Some(&seg), Some(&cs), Some(&dn), None)?;
            println!("preadapt: checkpoint {}", run.preadapt_ckpt().display());
            Ok(())
        }
        Command::Adapt(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            let ds = load_data(&args.data)?;
            let run = RunDir::new(&args.out);
            run.create()?;
            freeze_config(&run, &cfg)?;
            require(&run.preadapt_ckpt(), "preadapt")?;
            let (mut seg, mut cs, mut dn) = init_models(&cfg)?;
            load_checkpoint(&run.preadapt_ckpt(), Some(&mut seg), Some(&mut cs), Some(&mut dn), None)?;
            let stats = adapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn, Some(&run))?;
            for s in &stats {
                println!(
                    "epoch {}: compound mIoU {:.3}, open mIoU {:.3}, pgt coverage {:.2}",
                    s.epoch, s.miou_compound, s.miou_open, s.pgt_coverage
                );
            }
            Ok(())
        }
        Command::Ddm { config, data, run, phase, seed } => {
            let cfg = load_config(&config, seed)?;
            let ds = load_data(&data)?;
            let run = RunDir::new(&run);
            let (mut seg, _, _) = init_models(&cfg)?;
            let phase_name = match phase.as_str() {
                "pre" => {
                    require(&run.erm_ckpt(), "train-erm")?;
                    load_checkpoint(&run.erm_ckpt(), Some(&mut seg), None, None, None)?;
                    "pre_adaptation"
                }
                "post" => {
                    let ckpt = final_epoch_ckpt(&run)?;
                    let (_, mut cs, mut dn) = init_models(&cfg)?;
                    let mut proto = proto_slot(&cfg);
                    load_checkpoint(&ckpt, Some(&mut seg), Some(&mut cs), Some(&mut dn), Some(&mut proto))?;
                    "post_adaptation"
                }
                other => return Err(Error::Config(format!("unknown phase {other}; use pre|post"))),
            };
            let report = ddm::run_study(&seg, &ds.ddm, &cfg.ddm, phase_name, cfg.seed)?;
            let csv = ddm::to_csv(&[report])?;
            let path = run.ddm_csv(if phase == "pre" { "pre" } else { "post" });
            std::fs::write(&path, csv)?;
            println!("ddm: wrote {}", path.display());
            Ok(())
        }
        Command::DdmCheck { run, slack } => {
            let run = RunDir::new(&run);
            let path = run.ddm_csv("pre");
            require(&path, "ddm --phase pre")?;
            let reports = ddm::from_csv(&std::fs::read_to_string(&path)?)?;
            let mut ok = true;
            for r in &reports {
                for l in &r.layers {
                    let pass = l.latent >= l.spatial - slack;
                    println!(
                        "{} layer {}: spatial {:.3} latent {:.3} {}",
                        r.phase,
                        l.layer,
                        l.spatial,
                        l.latent,
                        if pass { "ok" } else { "VIOLATION" }
                    );
                    ok &= pass;
                }
            }
            if !ok {
                return Err(Error::Numeric(
                    "latent discriminability fell below the spatial score".into(),
                ));
            }
            Ok(())
        }
        Command::Eval { run, data, split, checkpoint } => {
            let run = RunDir::new(&run);
            require(&run.config_path(), "a training stage")?;
            let cfg = RunConfig::from_path(&run.config_path())?;
            let ds = load_data(&data)?;
            let samples = match split.as_str() {
                "compound" => &ds.compound,
                "open" => &ds.open,
                other => {
                    return Err(Error::Config(format!("unknown split {other}; use compound|open")))
                }
            };
            if samples.iter().any(|s| s.label.is_none()) {
                return Err(Error::Config(format!("split {split} is not labeled for evaluation")));
            }
            let (mut seg, mut cs, mut dn) = init_models(&cfg)?;
            let proto = match checkpoint.as_str() {
                "erm" => {
                    require(&run.erm_ckpt(), "train-erm")?;
                    load_checkpoint(&run.erm_ckpt(), Some(&mut seg), None, None, None)?;
                    None
                }
                "preadapt" => {
                    require(&run.preadapt_ckpt(), "preadapt")?;
                    load_checkpoint(&run.preadapt_ckpt(), Some(&mut seg), Some(&mut cs), Some(&mut dn), None)?;
                    None
                }
                "adapt" => {
                    let ckpt = final_epoch_ckpt(&run)?;
                    let mut proto = proto_slot(&cfg);
                    load_checkpoint(&ckpt, Some(&mut seg), Some(&mut cs), Some(&mut dn), Some(&mut proto))?;
                    if cfg.adapt.ast_norm {
                        Some(proto)
                    } else {
                        None
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown checkpoint {other}; use erm|preadapt|adapt"
                    )))
                }
            };
            let result = eval_with(&seg, &dn, proto.as_ref(), samples, &split)?;
            println!("split {split} ({checkpoint} checkpoint)");
            for (c, iou) in result.per_class_iou.iter().enumerate() {
                match iou {
                    Some(v) => println!("  class {c}: IoU {v:.4}"),
                    None => println!("  class {c}: absent"),
                }
            }
            for (family, miou) in &result.per_family {
                println!("  {family}: mIoU {miou:.4}");
            }
            println!("  mIoU {:.4}", result.miou);
            let json = serde_json::to_string_pretty(&result)
                .map_err(astseg_core::error::Error::from)?;
            std::fs::write(run.eval_json(&split), json)?;
            Ok(())
        }
    }
}

fn proto_slot(cfg: &RunConfig) -> Tensor {
    Tensor::zeros(&[cfg.segmentor.channels_at_l_prime(), cfg.ast_dn.d_latent])
}

fn eval_with(
    seg: &Segmentor,
    dn: &AstModule,
    proto: Option<&Tensor>,
    samples: &[astseg_core::synthdata::DomainSample],
    split: &str,
) -> Result<astseg_core::metrics::EvalResult, Error> {
    evaluate(seg, dn, proto, samples, split)
}
