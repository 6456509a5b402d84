use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hsal::checkpoint;
use hsal::learning::Regime;
use hsal::{Error, Result};

#[derive(Parser)]
#[command(name = "hsal", version, about = "Hierarchical saliency attention on synthetic glyph scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the activation model and write a perception checkpoint.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the agent on top of a perception checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Perception checkpoint from `pretrain`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Run directory for the log, config and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// `rl` or `ce`; overrides the config.
        #[arg(long)]
        mode: Option<Regime>,
        /// Continue from a run checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json, per_class.csv and predictions.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write saliency, mask, priority and overlay images for one scene.
    Visualize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scene seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn echo_of(path: &Path) -> Result<(checkpoint::Checkpoint, String)> {
    let ck = checkpoint::load(path)?;
    let text = ck.config.clone();
    Ok((ck, text))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    hsal::parallel::init_from_env();
    match cli.command {
        Command::Pretrain { config, seed, out } => {
            let cfg = hsal_cli::resolve_config(config.as_deref(), None, seed)?;
            let report = hsal_cli::pretrain(&cfg, &out)?;
            println!("held-out accuracy {:.4}", report.accuracy);
            println!("wrote {}", out.display());
        }
        Command::Train {
            config,
            seed,
            ckpt,
            out,
            mode,
            resume,
        } => {
            let echo = match (&config, &resume) {
                (Some(_), _) => None,
                (None, Some(r)) => Some(echo_of(r)?.1),
                (None, None) => Some(echo_of(&ckpt)?.1),
            };
            let mut cfg = hsal_cli::resolve_config(config.as_deref(), echo.as_deref(), seed)?;
            if let Some(m) = mode {
                cfg.regime = m;
            }
            let rows = hsal_cli::train(&cfg, &ckpt, &out, resume.as_deref())?;
            if let Some(last) = rows.last() {
                println!("epoch {} macro_f1 {:.4}", last.epoch, last.f1);
            }
            println!("wrote {}", out.join(hsal_cli::FINAL_CHECKPOINT).display());
        }
        Command::Eval { ckpt, config, seed, out } => {
            let (ck, echo) = echo_of(&ckpt)?;
            let cfg = hsal_cli::resolve_config(config.as_deref(), Some(&echo), seed)?;
            let (ev, truths) = hsal_cli::eval(&cfg, &ck)?;
            print!("{}", hsal_cli::report_text(&ev.report));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write(&dir.join("report.json"), &ev.report.to_json())?;
                write(&dir.join("per_class.csv"), &ev.report.to_csv())?;
                write(&dir.join("predictions.tsv"), &hsal_cli::predictions_text(&ev, &truths))?;
            }
        }
        Command::Visualize { ckpt, config, seed, out } => {
            let (ck, echo) = echo_of(&ckpt)?;
            let cfg = hsal_cli::resolve_config(config.as_deref(), Some(&echo), None)?;
            let (traj, paths) = hsal_cli::visualize(&cfg, &ck, seed, &out)?;
            println!("prediction {}", traj.predicted());
            println!("wrote {} images to {}", paths.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
