use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acta_cli::commands::{self, RunConfig};
use acta_cli::dataset::Split;
use acta_core::corpus::AnnotationStrategy;
use acta_core::metrics::{render_comparison, render_report, Averaging, ReportFormat};
use acta_core::model::{ModelError, Preset};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Field extraction from civil-registry certificate images.
#[derive(Debug, Parser)]
#[command(name = "acta", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    strategy: Option<AnnotationStrategy>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Args)]
struct EvalFlags {
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    /// Average per page instead of pooling counts.
    #[arg(long = "macro")]
    macro_average: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pages: Option<usize>,
        #[arg(long)]
        writers: Option<u32>,
        #[arg(long)]
        abbreviation_probability: Option<f64>,
        #[arg(long)]
        verbose_date_fraction: Option<f64>,
        #[arg(long)]
        right_margin_fraction: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the annotation file of one strategy.
    Annotate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes model.acta and train_log.csv.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint whose weights are adapted to the dataset's dictionary.
        #[arg(long)]
        donor: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Decode pages; writes one JSON line per page.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint, or saved predictions, against annotations.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        flags: EvalFlags,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate several checkpoints side by side.
    Compare {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        flags: EvalFlags,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// A command-line mistake that clap cannot catch.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = common.preset {
        cfg.preset = p;
    }
    if let Some(s) = common.strategy {
        cfg.strategy = s;
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| fallback.clone()) {
        Some(p) => Ok(p),
        None => usage(format!("--{name} is required (or set it in --config)")),
    }
}

fn averaging(flags: &EvalFlags) -> Averaging {
    if flags.macro_average {
        Averaging::Macro
    } else {
        Averaging::Micro
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            out,
            pages,
            writers,
            abbreviation_probability,
            verbose_date_fraction,
            right_margin_fraction,
            common,
        } => {
            let mut cfg = run_config(&common)?;
            let g = &mut cfg.generator;
            g.pages = pages.unwrap_or(g.pages);
            g.writers = writers.unwrap_or(g.writers);
            g.abbreviation_probability =
                abbreviation_probability.unwrap_or(g.abbreviation_probability);
            g.verbose_date_fraction = verbose_date_fraction.unwrap_or(g.verbose_date_fraction);
            g.right_margin_fraction = right_margin_fraction.unwrap_or(g.right_margin_fraction);
            let m = commands::cmd_generate(&out, &cfg, common.force)?;
            println!(
                "{}: {} train, {} valid, {} test",
                out.display(),
                m.train.len(),
                m.valid.len(),
                m.test.len()
            );
        }
        Command::Annotate { dataset, common } => {
            let cfg = run_config(&common)?;
            let dataset = required(dataset, &cfg.dataset, "dataset")?;
            let path = commands::cmd_annotate(&dataset, cfg.strategy)?;
            println!("{}", path.display());
        }
        Command::Train {
            dataset,
            donor,
            out,
            epochs,
            common,
        } => {
            let mut cfg = run_config(&common)?;
            let dataset = required(dataset, &cfg.dataset, "dataset")?;
            if let Some(e) = epochs {
                let mut t = cfg.train_config();
                t.max_epochs = e;
                cfg.train = Some(t);
            }
            let s = commands::cmd_train(&dataset, &cfg, donor.as_deref(), &out)?;
            println!(
                "{}: best epoch {} of {}, validation CER {:.2}%",
                s.checkpoint.display(),
                s.best_epoch,
                s.epochs,
                s.best_valid_cer
            );
        }
        Command::Infer {
            checkpoint,
            dataset,
            split,
            out,
            common,
        } => {
            let cfg = run_config(&common)?;
            let checkpoint = required(checkpoint, &cfg.checkpoint, "checkpoint")?;
            let dataset = required(dataset, &cfg.dataset, "dataset")?;
            let preds = commands::cmd_infer(&checkpoint, &dataset, split)?;
            match out {
                Some(p) => commands::write_predictions(&p, &preds)?,
                None => {
                    for p in &preds {
                        println!("{}", serde_json::to_string(p)?);
                    }
                }
            }
        }
        Command::Eval {
            checkpoint,
            predictions,
            dataset,
            flags,
            out,
            common,
        } => {
            let cfg = run_config(&common)?;
            let dataset = required(dataset, &cfg.dataset, "dataset")?;
            let report = match predictions {
                Some(p) => {
                    let preds = commands::read_predictions(&p)?;
                    let ds = acta_cli::dataset::Dataset::open(&dataset)?;
                    let strategy = common.strategy.unwrap_or(cfg.strategy);
                    commands::score(&ds, &preds, strategy, strategy.as_str(), averaging(&flags))?
                }
                None => {
                    let checkpoint = required(checkpoint, &cfg.checkpoint, "checkpoint")?;
                    commands::cmd_eval(
                        &checkpoint,
                        &dataset,
                        common.strategy,
                        flags.split,
                        averaging(&flags),
                    )?
                }
            };
            emit(out.as_deref(), &render_report(&report, flags.format))?;
        }
        Command::Compare {
            checkpoints,
            dataset,
            flags,
            out,
            common,
        } => {
            let cfg = run_config(&common)?;
            let dataset = required(dataset, &cfg.dataset, "dataset")?;
            let reports =
                commands::cmd_compare(&checkpoints, &dataset, flags.split, averaging(&flags))?;
            let text = match flags.format {
                ReportFormat::Text => render_comparison(&reports),
                f => reports
                    .iter()
                    .map(|r| render_report(r, f))
                    .collect::<Vec<_>>()
                    .join("\n"),
            };
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<Usage>()) {
        return 1;
    }
    if err.chain().any(|e| {
        matches!(
            e.downcast_ref::<ModelError>(),
            Some(ModelError::Diverged { .. })
        )
    }) {
        return 3;
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
