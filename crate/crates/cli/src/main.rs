//! Command-line surface: dataset generation, training, rendering,
//! evaluation and the scripted analysis experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical divergence.

use clap::{Args, Parser, Subcommand};
use fewnerf::error::Error;
use fewnerf::eval::{evaluate_on_dataset, render_view};
use fewnerf::field::Checkpoint;
use fewnerf::scenes::{ring_camera, SceneConfig};
use fewnerf::supervision::{load_dataset, write_png};
use fewnerf::trainer::{
    generate_and_save_dataset, run_ablation, run_fig_low_freq, run_regularizer_comparison,
    train_resumed, LossMode, TrainConfig,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fewnerf", version, about = "Few-shot neural radiance field trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from an analytic scene.
    MakeScene(MakeSceneArgs),
    /// Train a radiance field on a dataset directory.
    Train(TrainArgs),
    /// Render a trained checkpoint at a ring pose or dataset view.
    Render(RenderArgs),
    /// Evaluate a trained run on the dataset's held-out views.
    Eval(EvalArgs),
    /// Low-frequency supervision study (frozen 10% frequency mask).
    Fig6(ExperimentArgs),
    /// Progressive ablation over the loss terms.
    Ablate(ExperimentArgs),
    /// Compare ray regularizers on top of the two-phase+adaptive model.
    CompareReg(CompareRegArgs),
}

#[derive(Args)]
struct MakeSceneArgs {
    /// Scene TOML; the built-in two-spheres-and-box scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Number of training views.
    #[arg(long, default_value_t = 3)]
    views: usize,
    /// Number of held-out test views.
    #[arg(long, default_value_t = 3)]
    n_test: usize,
    #[arg(long)]
    out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Train-config TOML; library defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Loss mode override (baseline | two-phase | adaptive |
    /// two-phase-adaptive | full | linear | adaptive-blur | entropy |
    /// emptiness-w).
    #[arg(long)]
    mode: Option<String>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration-count override.
    #[arg(long)]
    iters: Option<u64>,
    /// Resume from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Run directory containing checkpoint_final.ckpt (or a .ckpt path).
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Render this dataset view id instead of a custom pose.
    #[arg(long)]
    view: Option<u32>,
    /// Ring pose azimuth in degrees (used when --view is absent).
    #[arg(long, default_value_t = 30.0)]
    azimuth: f64,
    #[arg(long)]
    out: PathBuf,
    /// Samples per ray.
    #[arg(long, default_value_t = 64)]
    samples: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report path; defaults to <run>/eval_cli.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 0.1)]
    edge_threshold: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct CompareRegArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene TOML for the floater grid; defaults to <data>/scene.toml.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Floater-mass grid resolution.
    #[arg(long, default_value_t = 24)]
    floater_grid: usize,
    #[arg(long)]
    overwrite: bool,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } => 3,
        Error::Domain { .. } | Error::NonFinite(_) | Error::Divergence { .. } => 4,
    }
}

fn ensure_output_dir(path: &Path, overwrite: bool) -> fewnerf::Result<()> {
    if path.exists() {
        let occupied = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .next()
            .is_some();
        if occupied && !overwrite {
            return Err(Error::config(format!(
                "output directory {} is not empty (pass --overwrite to reuse it)",
                path.display()
            )));
        }
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load_scene_config(path: Option<&Path>) -> fewnerf::Result<SceneConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SceneConfig::from_toml(&text)
        }
        None => Ok(SceneConfig::builtin_default()),
    }
}

fn load_train_config(path: Option<&Path>) -> fewnerf::Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            TrainConfig::from_toml(&text)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn checkpoint_path(run: &Path) -> PathBuf {
    if run.extension().map(|e| e == "ckpt").unwrap_or(false) {
        run.to_path_buf()
    } else {
        run.join("checkpoint_final.ckpt")
    }
}

fn run(cli: Cli) -> fewnerf::Result<()> {
    match cli.command {
        Command::MakeScene(args) => {
            let scene_cfg = load_scene_config(args.scene.as_deref())?;
            ensure_output_dir(&args.out, args.overwrite)?;
            let ds = generate_and_save_dataset(&scene_cfg, args.views, args.n_test, &args.out)?;
            println!(
                "wrote {} train + {} test views to {}",
                ds.train.len(),
                ds.test.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Train(args) => {
            let mut cfg = load_train_config(args.config.as_deref())?;
            if let Some(mode) = &args.mode {
                cfg.mode = LossMode::parse(mode)?;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(iters) = args.iters {
                cfg.total_iters = iters;
            }
            cfg.validate()?;
            let dataset = load_dataset(&args.data)?;
            ensure_output_dir(&args.out, args.overwrite || args.resume.is_some())?;
            let artifacts = train_resumed(&cfg, &dataset, &args.out, args.resume.as_deref())?;
            println!(
                "trained {} iterations ({} mode); final loss {:.6}",
                cfg.total_iters,
                cfg.mode.label(),
                artifacts.final_loss.l_total
            );
            if let Some(eval) = &artifacts.eval {
                println!("held-out mean PSNR {:.3} dB, SSIM {:.4}", eval.mean_psnr.0, eval.mean_ssim);
            }
            Ok(())
        }
        Command::Render(args) => {
            let ckpt = Checkpoint::load(&checkpoint_path(&args.run))?;
            let dataset = load_dataset(&args.data)?;
            let cam = match args.view {
                Some(id) => dataset
                    .train
                    .iter()
                    .chain(&dataset.test)
                    .find(|v| v.view_id == id)
                    .map(|v| v.camera.clone())
                    .ok_or_else(|| Error::data(format!("view {id} not in dataset")))?,
                None => {
                    let scene_path = args.data.join("scene.toml");
                    let scene_cfg = load_scene_config(scene_path.exists().then_some(scene_path.as_path()))?;
                    ring_camera(&scene_cfg.render, args.azimuth)
                }
            };
            let img = render_view(
                &ckpt,
                &cam,
                dataset.near,
                dataset.far,
                &dataset.bounds,
                dataset.background,
                args.samples,
            )?;
            write_png(&args.out, &img)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let ckpt = Checkpoint::load(&checkpoint_path(&args.run))?;
            let dataset = load_dataset(&args.data)?;
            let (report, _) =
                evaluate_on_dataset(&ckpt, &dataset, args.samples, args.edge_threshold)?;
            let out = args
                .out
                .unwrap_or_else(|| checkpoint_path(&args.run).with_file_name("eval_cli.json"));
            report.save_json(&out)?;
            print!("{}", report.table());
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Fig6(args) => {
            let cfg = load_train_config(args.config.as_deref())?;
            let dataset = load_dataset(&args.data)?;
            ensure_output_dir(&args.out, args.overwrite)?;
            let outcome = run_fig_low_freq(&cfg, &dataset, &args.out)?;
            for row in &outcome.rows {
                println!(
                    "{:<22} low-freq PSNR {:.3} dB",
                    row.label,
                    row.low_freq_psnr.unwrap_or(f64::NAN)
                );
            }
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = load_train_config(args.config.as_deref())?;
            let dataset = load_dataset(&args.data)?;
            ensure_output_dir(&args.out, args.overwrite)?;
            let outcome = run_ablation(&cfg, &dataset, &args.out)?;
            for row in &outcome.rows {
                println!(
                    "{:<22} PSNR {:.3} dB  SSIM {:.4}  aggregate {:.6}",
                    row.label, row.psnr, row.ssim, row.aggregate
                );
            }
            Ok(())
        }
        Command::CompareReg(args) => {
            let cfg = load_train_config(args.config.as_deref())?;
            let dataset = load_dataset(&args.data)?;
            let scene_path = args
                .scene
                .clone()
                .unwrap_or_else(|| args.data.join("scene.toml"));
            if !scene_path.exists() {
                return Err(Error::data(format!(
                    "scene config {} not found; pass --scene",
                    scene_path.display()
                )));
            }
            let scene_cfg = load_scene_config(Some(&scene_path))?;
            ensure_output_dir(&args.out, args.overwrite)?;
            let outcome = run_regularizer_comparison(
                &cfg,
                &dataset,
                &scene_cfg.scene,
                &args.out,
                args.floater_grid,
            )?;
            for row in &outcome.rows {
                println!(
                    "{:<22} PSNR {:.3} dB  floater {:.3e}",
                    row.label,
                    row.psnr,
                    row.floater_mass.unwrap_or(f64::NAN)
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
