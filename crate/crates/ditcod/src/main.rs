//! Command-line surface: dataset generation, boundary extraction, training,
//! prediction, evaluation, the gradient-check suite, and variant ablations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ditcod::ablate::{ablation_csv, holdout_samples, run_ablation};
use ditcod::canny::canny_default;
use ditcod::config::TrainConfig;
use ditcod::error::Error;
use ditcod::gradsuite;
use ditcod::metrics::{aggregate, write_report};
use ditcod::model::Model;
use ditcod::pnm::{load_image, save_image};
use ditcod::synth::{gen_dataset, ShapeFamily, SynthConfig};
use ditcod::train::{load_dataset, train};
use ditcod::Result;

#[derive(Parser)]
#[command(name = "ditcod", version, about = "Dual-task camouflaged object detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON training config overlaying the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_json(&fs::read_to_string(path)?)?,
            None => TrainConfig::desk(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic camouflage dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Object contrast offset in (0, 0.2].
        #[arg(long, default_value_t = 0.15)]
        contrast_delta: f64,
        /// Shape family: ellipse, blob, or mixed.
        #[arg(long, default_value = "mixed")]
        shape: String,
    },
    /// Extract boundary edge maps from a directory of binary masks.
    GenBoundary {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per the configuration; writes loss.csv and a checkpoint.
    Train(ConfigArgs),
    /// Run a checkpoint on images and write {id}_obj.pgm / {id}_bnd.pgm.
    Predict {
        /// Checkpoint directory (out_dir/checkpoint of a training run).
        #[arg(long)]
        model: PathBuf,
        /// A single PPM/PGM image or a directory of them.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth masks (matched by file stem).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full finite-difference gradient suite.
    Gradcheck {
        /// Accepted for symmetry with the other subcommands; the suite's
        /// shapes are fixed and preset-independent.
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Train every decoder/boundary variant and emit a comparison CSV.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_shape(s: &str) -> Result<ShapeFamily> {
    match s {
        "ellipse" => Ok(ShapeFamily::Ellipse),
        "blob" => Ok(ShapeFamily::Blob),
        "mixed" => Ok(ShapeFamily::Mixed),
        other => Err(Error::invalid(format!("unknown shape family {other:?}"))),
    }
}

fn image_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if matches!(ext, "ppm" | "pgm") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::data(format!("bad filename {}", path.display())))?;
            out.push((stem.to_string(), path.clone()));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::data(format!("no PPM/PGM files under {}", dir.display())));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { out, n, image_size, seed, contrast_delta, shape } => {
            let cfg = SynthConfig {
                n_samples: n,
                image_size,
                seed,
                contrast_delta,
                shape: parse_shape(&shape)?,
                ..Default::default()
            };
            let ids = gen_dataset(&cfg, &out)?;
            println!("wrote {} samples to {}", ids.len(), out.display());
        }
        Cmd::GenBoundary { masks, out } => {
            fs::create_dir_all(&out)?;
            let mut n = 0;
            for (stem, path) in image_stems(&masks)? {
                let m = load_image(&path)?;
                let mask = m.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
                let edge = canny_default(&mask)?;
                save_image(&out.join(format!("{stem}.pgm")), &edge)?;
                n += 1;
            }
            println!("wrote {n} edge maps to {}", out.display());
        }
        Cmd::Train(args) => {
            let cfg = args.load()?;
            let outcome = train(&cfg)?;
            let last = outcome.reports.last().map(|r| r.total).unwrap_or(f64::NAN);
            println!(
                "trained {} steps; final loss {last:.4}; checkpoint at {}",
                outcome.steps,
                cfg.out_dir.join("checkpoint").display()
            );
        }
        Cmd::Predict { model, input, out } => {
            let m = Model::load(&model)?;
            fs::create_dir_all(&out)?;
            let inputs = if input.is_dir() {
                image_stems(&input)?
            } else {
                let stem = input
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::data(format!("bad filename {}", input.display())))?;
                vec![(stem.to_string(), input.clone())]
            };
            for (stem, path) in inputs {
                let img = load_image(&path)?;
                let (so, se) = m.predict(&img)?;
                save_image(&out.join(format!("{stem}_obj.pgm")), &so)?;
                save_image(&out.join(format!("{stem}_bnd.pgm")), &se)?;
            }
            println!("predictions written to {}", out.display());
        }
        Cmd::Eval { pred, gt, out } => {
            let preds = image_stems(&pred)?;
            let mut items = Vec::new();
            for (stem, path) in preds {
                // prediction stems may carry the _obj suffix from `predict`
                let gt_stem = stem.strip_suffix("_obj").unwrap_or(&stem);
                if stem.ends_with("_bnd") {
                    continue;
                }
                let gt_path = ["pgm", "ppm"]
                    .iter()
                    .map(|e| gt.join(format!("{gt_stem}.{e}")))
                    .find(|p| p.exists())
                    .ok_or_else(|| Error::data(format!("no ground truth for {stem}")))?;
                let s = load_image(&path)?;
                let g = load_image(&gt_path)?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
                items.push((gt_stem.to_string(), s, g));
            }
            let report = aggregate(&items)?;
            write_report(&report, &out)?;
            println!(
                "evaluated {} images: S={:.4} E={:.4} Fw={:.4} MAE={:.4}",
                report.per_image.len(),
                report.mean.s_alpha,
                report.mean.e_phi,
                report.mean.f_w,
                report.mean.mae
            );
        }
        Cmd::Gradcheck { preset: _ } => {
            let results = gradsuite::full_suite();
            let mut failures = 0;
            for (name, rep) in &results {
                if !rep.pass() {
                    failures += 1;
                    println!("FAIL {name}: max rel err {:.3e}", rep.max_rel_err);
                }
            }
            println!("{} checks, {failures} failures", results.len());
            if failures > 0 {
                return Err(Error::NonFinite("gradient checks failed".into()));
            }
        }
        Cmd::Ablate { cfg, out } => {
            let cfg = cfg.load()?;
            let train_set = load_dataset(&cfg.data_dir)?;
            let holdout = holdout_samples(cfg.image_size, cfg.seed)?;
            let rows = run_ablation(&cfg, &train_set, &holdout, true)?;
            fs::create_dir_all(&out)?;
            let csv = ablation_csv(&rows);
            fs::write(out.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) => 3,
        Error::Invalid(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors; the contract here is 1
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
