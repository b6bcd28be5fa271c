use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use unpic_cli::commands::{eval_cmd, gen_dataset_cmd, sample_cmd, train_cmd, PredictionSource, TrainSettings};
use unpic_cli::config::KeyValues;
use unpic_cli::dataset::TrainTask;
use unpic_cli::eval::EvalMode;
use unpic_cli::{CliError, Result};
use unpic_diffusion::sample::{DEFAULT_GUIDANCE, DEFAULT_SAMPLER_STEPS};
use unpic_diffusion::SamplerConfig;

/// Single-image multiview generation with a CROCS prior and a pixel decoder.
#[derive(Parser)]
#[command(name = "unpic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a toy dataset described by a key = value config file.
    GenDataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a prior or decoder on a dataset.
    Train {
        /// prior, decoder or decoder_source_only
        #[arg(long)]
        role: TrainTask,
        /// Manifest file or dataset directory.
        #[arg(long)]
        manifest: PathBuf,
        /// key = value training config (lr, batch, steps, p_drop, seed, ema_decay, anneal, t_max, arch, log_every, save_every).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to write; the loss curve goes to `<out>.loss.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample pointmaps and views for one source image.
    Sample {
        /// Source image in the float image format.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Classifier-free guidance weight.
        #[arg(long, default_value_t = DEFAULT_GUIDANCE)]
        w: f64,
        /// Respaced denoising steps.
        #[arg(long, default_value_t = DEFAULT_SAMPLER_STEPS)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write PAM previews of both superimages.
        #[arg(long)]
        preview: bool,
    },
    /// Score predictions against a held-out dataset.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// full, prior_only or decoder_gt_crocs
        #[arg(long)]
        mode: EvalMode,
        /// Directory of `<id>/points_i.upic` and `<id>/view_i.upic` predictions.
        #[arg(long, conflicts_with_all = ["prior", "decoder"])]
        predictions: Option<PathBuf>,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        decoder: Option<PathBuf>,
        /// Seeds view selection and sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_GUIDANCE)]
        w: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLER_STEPS)]
        steps: usize,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write sampled predictions here.
        #[arg(long, conflicts_with = "predictions")]
        save_predictions: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset { config, out } => {
            let m = gen_dataset_cmd(&config, &out)?;
            eprintln!("wrote {} examples to {}", m.examples.len(), out.display());
        }
        Command::Train { role, manifest, config, out, resume } => {
            let kv = match &config {
                Some(p) => KeyValues::load(p)?,
                None => KeyValues::empty(),
            };
            let settings = TrainSettings::from_kv(kv)?;
            let curve = train_cmd(role, &manifest, &settings, &out, resume.as_deref())?;
            if let Some((step, loss)) = curve.last() {
                eprintln!("step {step} loss {loss:.5}; checkpoint {}", out.display());
            }
        }
        Command::Sample { source, prior, decoder, seed, w, steps, out, preview } => {
            let cfg = SamplerConfig { guidance: w, steps, seed, clip: true };
            sample_cmd(&source, &prior, &decoder, &cfg, &out, preview)?;
        }
        Command::Eval { manifest, mode, predictions, prior, decoder, seed, w, steps, out, save_predictions } => {
            let source = match &predictions {
                Some(dir) => PredictionSource::Dir(dir),
                None => PredictionSource::Models {
                    prior: prior.as_deref(),
                    decoder: decoder.as_deref(),
                    sampler: SamplerConfig { guidance: w, steps, seed, clip: true },
                    save: save_predictions.as_deref(),
                },
            };
            let report = eval_cmd(&manifest, mode, source, seed, &out)?;
            let s = report.summary();
            eprintln!(
                "{}: {} examples, {} failed, mse_all {:.5}, mse_novel {:.5}",
                mode.name(),
                s.examples,
                s.failed,
                s.mse_all,
                s.mse_novel
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
