//! `protseg` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use protseg::evalmetrics::{evaluate_set, prediction_name};
use protseg::gradsuite::{network_reports, op_reports, NETWORK_TOL, OP_TOL};
use protseg::pipeline::{make_phantom_dataset, preprocess, preprocess_mask, DatasetManifest, PhantomConfig, PreprocessConfig, Split};
use protseg::synthgen::{generate_dataset, SynthConfig};
use protseg::training::{predict, run_step1, run_step2, run_step3, Models, SynthSource, TrainConfig, BASE_CKPT, PROT_CKPT};
use protseg::volume::pvol::{self, Pvol};
use serde_json::json;

#[derive(Parser)]
#[command(name = "protseg", version, about = "Protuberance-aware kidney tumor segmentation")]
struct Cli {
    /// Worker threads; 1 runs everything serially. Output does not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic kidney masks with inserted protuberances.
    GenSynth {
        /// Number of samples.
        #[arg(long)]
        n: usize,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Cubic grid edge; ignored when --config is given.
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Generator settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate labeled phantom images with isodense and contrasting tumors.
    MakePhantoms {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Cubic grid edge; ignored when --config is given.
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// Phantom settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Resample and normalize a raw image, or resample a mask.
    Preprocess {
        /// Input PVOL file (image in HU, or mask).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Preprocessing settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Step 1: train the base network.
    TrainStep1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Step 2: train the protuberance detection network on synthetic masks.
    TrainStep2 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Step 3: train base and fusion jointly with the protuberance network frozen.
    TrainStep3 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict kidney and tumor masks for one preprocessed image.
    Infer {
        /// Directory holding base.ckpt and optionally prot.ckpt + fusion.ckpt.
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output directory for <name>_kidney.pvol and <name>_tumor.pvol.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Intensity used outside the image when tiling.
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        background: f32,
    },
    /// Score predicted tumor masks against ground truth.
    Eval {
        /// Directory of <name>_tumor.pvol (and optional <name>_kidney.pvol) predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth directory, or a dataset manifest whose test split is scored.
        #[arg(long)]
        gt: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of every op, loss and a full network.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(protseg::Error::from).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes).map_err(protseg::Error::from).with_context(|| format!("parsing {}", path.display()))?)
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(protseg::Error::from)?;
    }
    let mut s = serde_json::to_string_pretty(v).map_err(protseg::Error::from)?;
    s.push('\n');
    std::fs::write(path, s).map_err(protseg::Error::from)?;
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| protseg::Error::InvalidArgument(format!("config data.{what} is not set")).into())
}

fn train_cases(cfg: &TrainConfig) -> Result<Vec<protseg::pipeline::Case>> {
    let path = required(&cfg.data.images, "images")?;
    let m = DatasetManifest::load(path)?;
    Ok(m.load_cases(path.parent().unwrap_or(Path::new(".")), Some(Split::Train))?)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenSynth { n, seed, out, grid, config } => {
            let cfg = match config {
                Some(p) => read_json(&p)?,
                None => SynthConfig::for_grid(grid),
            };
            let m = generate_dataset(n, seed, &cfg, &out)?;
            println!("{}", json!({"samples": m.samples.len(), "acceptance_rate": m.acceptance_rate()}));
        }
        Command::MakePhantoms { n, seed, out, grid, config } => {
            let cfg = match config {
                Some(p) => read_json(&p)?,
                None => PhantomConfig::for_grid(grid),
            };
            let m = make_phantom_dataset(n, seed, &cfg, &out)?;
            let iso = m.entries.iter().filter(|e| e.isodense == Some(true)).count();
            println!("{}", json!({"phantoms": m.entries.len(), "isodense": iso}));
        }
        Command::Preprocess { input, out, config } => {
            let cfg: PreprocessConfig = match config {
                Some(p) => read_json(&p)?,
                None => PreprocessConfig::default(),
            };
            cfg.validate()?;
            match pvol::read(&input)? {
                Pvol::Volume(v) => pvol::write_volume(&out, &preprocess(&v, &cfg)?)?,
                Pvol::Mask(m) => pvol::write_mask(&out, &preprocess_mask(&m, &cfg)?)?,
            }
        }
        Command::TrainStep1 { config, out } => {
            let cfg = TrainConfig::load(&config)?;
            let r = run_step1(&cfg, &train_cases(&cfg)?, &out)?;
            println!("{}", json!({"checkpoint": r.checkpoint, "final_loss": r.losses.last(), "digest": r.digest}));
        }
        Command::TrainStep2 { config, out } => {
            let cfg = TrainConfig::load(&config)?;
            let synth = SynthSource::open(required(&cfg.data.synth, "synth")?)?;
            let r = run_step2(&cfg, &synth, &out)?;
            println!("{}", json!({"checkpoint": r.checkpoint, "final_loss": r.losses.last(), "digest": r.digest}));
        }
        Command::TrainStep3 { config, out } => {
            let cfg = TrainConfig::load(&config)?;
            let base = cfg.data.base_ckpt.clone().unwrap_or_else(|| out.join(BASE_CKPT));
            let prot = cfg.data.prot_ckpt.clone().unwrap_or_else(|| out.join(PROT_CKPT));
            let r = run_step3(&cfg, &train_cases(&cfg)?, &base, &prot, &out)?;
            println!(
                "{}",
                json!({
                    "base": r.base.checkpoint,
                    "fusion": r.fusion.checkpoint,
                    "final_loss": r.base.losses.last(),
                    "prot_digest_unchanged": r.prot_digest.0 == r.prot_digest.1,
                })
            );
        }
        Command::Infer { ckpt_dir, image, out, threshold, background } => {
            let models = Models::load(&ckpt_dir)?;
            let img = pvol::read_volume(&image)?;
            let p = predict(&models, &img, threshold, background)?;
            std::fs::create_dir_all(&out).map_err(protseg::Error::from)?;
            let name = prediction_name(&image);
            pvol::write_mask(out.join(format!("{name}_kidney.pvol")), &p.kidney)?;
            pvol::write_mask(out.join(format!("{name}_tumor.pvol")), &p.tumor)?;
            println!("{}", json!({"name": name, "kidney_voxels": p.kidney.count(), "tumor_voxels": p.tumor.count()}));
        }
        Command::Eval { pred, gt, out } => {
            let r = evaluate_set(&pred, &gt)?;
            write_json(&out, &r)?;
            println!(
                "{}",
                json!({"images": r.per_image.len(), "mean_tumor_dice": r.mean_tumor_dice, "sensitivity": r.sensitivity, "fps_per_image": r.fps_per_image})
            );
        }
        Command::GradCheck { seed, out } => {
            let ops = op_reports(seed)?;
            let nets = network_reports(seed, 10, 5)?;
            let mut failed = 0;
            for (r, tol) in ops.iter().map(|r| (r, OP_TOL)).chain(nets.iter().map(|r| (r, NETWORK_TOL))) {
                let ok = r.passes(tol);
                failed += !ok as usize;
                println!("{} {} max_rel={:.3e} probes={}", if ok { "PASS" } else { "FAIL" }, r.label, r.max_rel_error, r.probes);
            }
            if let Some(p) = out {
                write_json(&p, &json!({"ops": ops, "network": nets}))?;
            }
            if failed > 0 {
                return Err(protseg::Error::NumericFault(format!("{failed} gradient checks failed")).into());
            }
        }
    }
    Ok(())
}

fn error_line(e: &anyhow::Error) -> String {
    let kind = e.chain().find_map(|c| c.downcast_ref::<protseg::Error>()).map_or("error", protseg::Error::kind);
    let mut parts = Vec::new();
    for c in e.chain() {
        parts.push(c.to_string());
        if c.downcast_ref::<protseg::Error>().is_some() {
            break;
        }
    }
    let msg = parts.join(": ").replace('\n', " ");
    json!({"error": kind, "message": msg}).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("{}", json!({"error": "threads", "message": e.to_string()}));
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
