use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relpu::harness::{self, EvalSource, ExperimentConfig, Overrides};
use relpu::model::VariantKind;
use relpu::{Error, Result};

#[derive(Parser)]
#[command(name = "relpu", version, about = "Point cloud upsampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<VariantKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into <out>/dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out split or on xyz files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Input cloud; repeat for several. Switches to file mode.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Reference cloud paired with the input at the same position.
        #[arg(long)]
        gt: Vec<PathBuf>,
    },
    /// CD and HD under input noise for every trained variant.
    Noise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train and evaluate baseline, relpu_minus and relpu.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Gradient saliency of a held-out sample for every trained variant.
    Saliency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        sample: Option<usize>,
    },
}

fn load(common: &Common, sample: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        epochs: common.epochs,
        seed: common.seed,
        variant: common.variant,
        out: common.out.clone(),
        sample,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn variants(common: &Common, cfg: &ExperimentConfig) -> Vec<VariantKind> {
    match common.variant {
        Some(v) => vec![v],
        None => harness::trained_variants(cfg),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = load(&common, None)?;
            let r = harness::cmd_gen_data(&cfg)?;
            println!("{} shapes, {} samples in {}", r.shapes, r.samples, r.dir.display());
            println!("manifest sha256 {}", r.manifest_hash);
        }
        Command::Train { common, dataset, resume } => {
            let cfg = load(&common, None)?;
            let r = harness::cmd_train(&cfg, dataset.as_deref(), resume.as_deref())?;
            if let Some(last) = r.log.last() {
                println!("epoch {} loss {} lr {}", last.epoch, last.mean_loss, last.lr);
            }
            println!("checkpoint {}", r.checkpoint.display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            input,
            gt,
        } => {
            let cfg = load(&common, None)?;
            let source = if input.is_empty() {
                if !gt.is_empty() {
                    return Err(Error::Config("--gt needs --input".into()));
                }
                EvalSource::Dataset(dataset.unwrap_or_else(|| harness::dataset_dir(&cfg)))
            } else {
                EvalSource::Files { inputs: input, gts: gt }
            };
            let r = harness::cmd_evaluate(&cfg, checkpoint.as_deref(), &source)?;
            for (id, msg) in &r.failures {
                eprintln!("{id}: {msg}");
            }
            println!("{}", r.csv.display());
        }
        Command::Noise { common, dataset } => {
            let cfg = load(&common, None)?;
            let (path, _) = harness::cmd_noise(&cfg, &variants(&common, &cfg), dataset.as_deref())?;
            println!("{}", path.display());
        }
        Command::Ablate { common, dataset } => {
            let cfg = load(&common, None)?;
            let (path, _) = harness::cmd_ablate(&cfg, dataset.as_deref())?;
            println!("{}", path.display());
        }
        Command::Saliency { common, dataset, sample } => {
            let cfg = load(&common, sample)?;
            let (path, _) = harness::cmd_saliency(&cfg, &variants(&common, &cfg), dataset.as_deref())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
