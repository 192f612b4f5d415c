//! Command-line entry points: prepare-data, train, eval, detect, export,
//! summarize, plot-pr. Exit codes: 0 success, 1 runtime failure, 2 usage
//! or configuration error.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use superyolo::checkpoint::Checkpoint;
use superyolo::config::Config;
use superyolo::data::dataset::Dataset;
use superyolo::data::synthetic::{generate_synthetic_dataset, SyntheticConfig};
use superyolo::data::vedai;
use superyolo::error::Error;
use superyolo::head::serialize_detections;
use superyolo::model::{Batch, Model, ModelConfig};
use superyolo::plot::plot_pr_curves;
use superyolo::train::{evaluate, train, EvalReport};

#[derive(Parser)]
#[command(
    name = "superyolo",
    about = "Multimodal RGB/IR small-object detector toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory for artifacts.
    #[arg(long, env = "SUPERYOLO_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset directory (synthetic generator or VEDAI conversion).
    PrepareData {
        #[command(flatten)]
        out: OutDir,
        /// Generate the synthetic fixture dataset.
        #[arg(long, conflicts_with = "vedai")]
        synthetic: bool,
        /// Convert a VEDAI-style source directory
        /// (<id>.txt annotations, <id>_co.png RGB, <id>_ir.png IR).
        #[arg(long)]
        vedai: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n_images: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 3)]
        n_classes: usize,
    },
    /// Train a model on a prepared dataset.
    Train {
        #[command(flatten)]
        out: OutDir,
        /// Dataset directory containing manifest.toml.
        #[arg(long)]
        data: PathBuf,
        /// Configuration file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from a named preset instead of a file.
        #[arg(long, default_value = "superyolo")]
        preset: String,
        /// Dotted config overrides, e.g. -o train.lr0=0.02.
        #[arg(short = 'o', long = "override")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint: per-class AP, mAP50, PSNR/SSIM if SR present.
    Eval {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run detection and write boxes as text.
    Detect {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Score threshold (defaults to the config's detect threshold).
        #[arg(long)]
        conf: Option<f64>,
    },
    /// Strip the SR branch and optimizer state from a checkpoint.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        to: PathBuf,
    },
    /// Print the layer table with parameters and GFLOPs.
    Summarize {
        /// Model preset to describe.
        #[arg(long, default_value = "superyolo")]
        preset: String,
        /// Describe a checkpoint instead of a preset.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        n_classes: usize,
        /// Input side length the GFLOPs are reported at.
        #[arg(long, default_value_t = 512)]
        image_size: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render PR curves from an eval report.
    PlotPr {
        #[command(flatten)]
        out: OutDir,
        /// eval.json produced by the eval command.
        #[arg(long)]
        eval: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> superyolo::Result<()> {
    match cli.command {
        Command::PrepareData {
            out,
            synthetic,
            vedai,
            seed,
            n_images,
            image_size,
            n_classes,
        } => {
            if let Some(src) = vedai {
                prepare_vedai(&src, &out.out)
            } else if synthetic {
                let cfg = SyntheticConfig {
                    seed,
                    n_images,
                    image_size,
                    n_classes,
                    ..Default::default()
                };
                let manifest = generate_synthetic_dataset(&cfg, &out.out)?;
                println!(
                    "wrote {} synthetic image pairs to {}",
                    manifest.items.len(),
                    out.out.display()
                );
                Ok(())
            } else {
                Err(Error::config(
                    "prepare-data",
                    "pass --synthetic or --vedai <dir>",
                ))
            }
        }
        Command::Train {
            out,
            data,
            config,
            preset,
            overrides,
        } => {
            let dataset = Dataset::open(&data)?;
            let base = match config {
                Some(p) => Config::load(&p)?,
                None => Config::preset(&preset, dataset.n_classes())?,
            };
            let mut cfg = base.with_overrides(&overrides)?;
            cfg.model.n_classes = dataset.n_classes();
            cfg.model.head.n_classes = dataset.n_classes();
            if !dataset.is_empty() {
                // bias priors scale with the actual network input size
                let probe = dataset.load(0)?;
                cfg.model.image_size_hint = probe.pair.height / cfg.train.scale_n;
            }
            cfg.validate()?;
            std::fs::create_dir_all(&out.out).map_err(|e| Error::io(&out.out, e))?;
            cfg.save(&out.out.join("config.toml"))?;

            let mut model = Model::new(cfg.model.clone())?;
            let outcome = train(
                &mut model,
                &cfg.train,
                &cfg.loss,
                &cfg.augment,
                &dataset,
                Some(&out.out),
            )?;
            outcome.checkpoint.save(&out.out.join("final.ckpt"))?;
            let history = serde_json::to_string_pretty(&outcome.history)
                .map_err(|e| Error::Other(e.to_string()))?;
            std::fs::write(out.out.join("history.json"), history)
                .map_err(|e| Error::io(out.out.join("history.json"), e))?;
            if let Some(last) = outcome.history.last() {
                println!(
                    "trained {} epochs; final l_total {:.4} (l_o {:.4}, l_s {:.4})",
                    outcome.history.len(),
                    last.loss.l_total,
                    last.loss.l_o,
                    last.loss.l_s
                );
            }
            println!("checkpoint: {}", out.out.join("final.ckpt").display());
            Ok(())
        }
        Command::Eval {
            out,
            checkpoint,
            data,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model = ckpt.to_model()?;
            let dataset = Dataset::open(&data)?;
            let report = evaluate(&model, &dataset, model.cfg.head.conf_threshold_eval)?;
            std::fs::create_dir_all(&out.out).map_err(|e| Error::io(&out.out, e))?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Other(e.to_string()))?;
            std::fs::write(out.out.join("eval.json"), json)
                .map_err(|e| Error::io(out.out.join("eval.json"), e))?;
            std::fs::write(out.out.join("eval.txt"), report.to_table())
                .map_err(|e| Error::io(out.out.join("eval.txt"), e))?;
            print!("{}", report.to_table());
            println!("mAP50 {:.4} over {} images", report.map50, report.n_images);
            Ok(())
        }
        Command::Detect {
            out,
            checkpoint,
            data,
            conf,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model = ckpt.to_model()?;
            let dataset = Dataset::open(&data)?;
            let threshold = conf.unwrap_or(model.cfg.head.conf_threshold_detect);
            let strides = model.strides();
            std::fs::create_dir_all(&out.out).map_err(|e| Error::io(&out.out, e))?;
            let mut text = String::new();
            for i in 0..dataset.len() {
                let sample = dataset.load(i)?;
                let batch = Batch::from_pairs(&[(&sample.pair, &[])], 2, false)?;
                let pass = model.forward(&batch, false, false, false);
                let raw: Vec<superyolo::Tensor> = pass
                    .raw
                    .iter()
                    .map(|&r| pass.fx.graph.value(r).clone())
                    .collect();
                let (ih, iw) = batch.input_hw();
                let dets = model
                    .head
                    .decode_detections(&raw, 0, &strides, threshold, iw, ih);
                text.push_str(&serialize_detections(&sample.pair.id, &dets));
            }
            let path = out.out.join("detections.txt");
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Export { checkpoint, to } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let exported = ckpt.export_inference()?;
            exported.save(&to)?;
            println!(
                "exported inference checkpoint ({} weights, {} params) to {}",
                exported.tensors.len(),
                exported.total_weight_params(),
                to.display()
            );
            Ok(())
        }
        Command::Summarize {
            preset,
            checkpoint,
            n_classes,
            image_size,
            csv,
        } => {
            let model = match checkpoint {
                Some(p) => Checkpoint::load(&p)?.to_model()?,
                None => Model::new(ModelConfig::preset(&preset, n_classes)?)?,
            };
            let report = model.complexity(image_size);
            print!("{}", report.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
                println!("csv: {}", path.display());
            }
            Ok(())
        }
        Command::PlotPr { out, eval } => {
            let text = std::fs::read_to_string(&eval).map_err(|e| Error::io(&eval, e))?;
            let report: EvalReport = serde_json::from_str(&text)
                .map_err(|e| Error::config("eval.json", e.to_string()))?;
            let files = plot_pr_curves(&report, &out.out)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

/// Convert a directory of VEDAI-style sources into a dataset directory.
fn prepare_vedai(src: &Path, out: &Path) -> superyolo::Result<()> {
    if !src.exists() {
        return Err(Error::config(
            "prepare-data.vedai",
            format!("source path {} does not exist", src.display()),
        ));
    }
    let class_map = vedai::default_class_map();
    let images_dir = out.join("images");
    let labels_dir = out.join("labels");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    std::fs::create_dir_all(&labels_dir).map_err(|e| Error::io(&labels_dir, e))?;

    let mut entries: Vec<PathBuf> = std::fs::read_dir(src)
        .map_err(|e| Error::io(src, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::config(
            "prepare-data.vedai",
            format!("no annotation files under {}", src.display()),
        ));
    }

    let mut items = Vec::new();
    let mut total = vedai::ConversionStats::default();
    for ann in &entries {
        let id = ann.file_stem().unwrap().to_string_lossy().to_string();
        let rgb_src = src.join(format!("{id}_co.png"));
        let ir_src = src.join(format!("{id}_ir.png"));
        for p in [&rgb_src, &ir_src] {
            if !p.exists() {
                return Err(Error::config(
                    "prepare-data.vedai",
                    format!("missing image {}", p.display()),
                ));
            }
        }
        let rgb = superyolo::data::read_rgb(&rgb_src)?;
        let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
        let text = std::fs::read_to_string(ann).map_err(|e| Error::io(ann, e))?;
        let (labels, stats) = vedai::convert_vedai_file(&text, ann, &class_map, w, h)?;
        total.converted += stats.converted;
        total.skipped_unmapped += stats.skipped_unmapped;
        total.skipped_degenerate += stats.skipped_degenerate;

        let rgb_rel = format!("images/{id}_rgb.png");
        let ir_rel = format!("images/{id}_ir.png");
        let label_rel = format!("labels/{id}.txt");
        std::fs::copy(&rgb_src, out.join(&rgb_rel)).map_err(|e| Error::io(&rgb_src, e))?;
        std::fs::copy(&ir_src, out.join(&ir_rel)).map_err(|e| Error::io(&ir_src, e))?;
        std::fs::write(
            out.join(&label_rel),
            superyolo::data::labels::serialize_labels(&labels),
        )
        .map_err(|e| Error::io(out.join(&label_rel), e))?;
        items.push(superyolo::data::dataset::ManifestItem {
            id,
            rgb: rgb_rel,
            ir: ir_rel,
            label: label_rel,
            split: "train".to_string(),
        });
    }

    let manifest = superyolo::data::dataset::Manifest {
        version: 1,
        n_classes: vedai::VEDAI_CLASSES.len(),
        class_names: vedai::class_names(),
        ir_bit_depth: 8,
        items,
    };
    manifest.save(&out.join("manifest.toml"))?;
    println!(
        "converted {} boxes; skipped {} unmapped-class, {} degenerate",
        total.converted, total.skipped_unmapped, total.skipped_degenerate
    );
    Ok(())
}
