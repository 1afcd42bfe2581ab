use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scn::autodiff::Faults;
use scn::harness::config::RunConfig;
use scn::harness::{cmd_gridsearch, eval, gradcheck, plot, train};
use scn::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Siamese capsule networks for few-shot face verification.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting (`key=value`); wins over the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, checkpoints and an audit log.
    Train(ConfigArgs),
    /// Score a checkpoint on the configured test pairs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of every layer.
    Gradcheck {
        /// Scale the tanh derivative to demonstrate a failing report.
        #[arg(long)]
        corrupt_tanh: bool,
    },
    /// Sweep contrastive margins and distance metrics.
    Gridsearch(ConfigArgs),
    /// Render a metrics file as a loss-curve SVG.
    Plot {
        metrics: PathBuf,
        /// Defaults to the metrics path with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let out = train::cmd_train(&cfg)?;
            if let Some(last) = out.rows.last() {
                println!(
                    "epoch {}: train_loss {:.6} test_loss {:.6} test_accuracy {:.4} (best epoch {})",
                    last.epoch, last.train_loss, last.test_loss, last.test_accuracy, out.best_epoch
                );
            }
            println!("run directory: {}", out.run_dir.display());
        }
        Command::Eval { checkpoint, config } => {
            let cfg = config.load()?;
            let r = eval::cmd_eval(&checkpoint, &cfg)?;
            println!(
                "pairs {} loss {:.6} accuracy {:.4} at threshold {:.4}, overlap {:.4}",
                r.pairs,
                r.loss,
                r.accuracy,
                r.threshold,
                r.density.overlap()
            );
        }
        Command::Gradcheck { corrupt_tanh } => {
            let faults = Faults {
                corrupt_tanh_backward: corrupt_tanh,
            };
            let reports = gradcheck::run_suite(faults)?;
            print!("{}", gradcheck::format_report(&reports));
            if !reports.iter().all(|r| r.passed()) {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Command::Gridsearch(args) => {
            let cfg = args.load()?;
            for c in cmd_gridsearch(&cfg)? {
                println!("margin {:<4} {:<14} test_loss {:.6} accuracy {:.4}", c.margin, c.metric, c.test_loss, c.test_accuracy);
            }
        }
        Command::Plot { metrics, out } => {
            let text = std::fs::read_to_string(&metrics).map_err(|e| Error::Io {
                path: metrics.clone(),
                source: e,
            })?;
            let svg = plot::render_svg(&plot::read_metrics(&text)?)?;
            let out = out.unwrap_or_else(|| metrics.with_extension("svg"));
            std::fs::write(&out, svg).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            println!("wrote {}", out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config(_)) { EXIT_USAGE } else { EXIT_CHECK_FAILED })
        }
    }
}
