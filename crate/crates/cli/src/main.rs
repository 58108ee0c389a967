//! `wscd`: dataset building, morphology pretraining, cognate detection in
//! every regime, ablation and a numerical self-check.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! divergence or failed self-check.

mod commands;
mod logging;
mod selfcheck;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use settings::Settings;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] wscd_core::Error),
    #[error("self-check failed: {0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use wscd_core::Error as E;
        match self {
            Self::Config(_) | Self::Core(E::Input(_)) => 2,
            Self::Core(E::Divergence(_) | E::NonFinite(_)) | Self::Check(_) => 4,
            Self::Core(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "wscd",
    version,
    about = "Cognate detection with a morphology-pretrained character encoder"
)]
struct Cli {
    /// Also append JSON-lines logs to this file.
    #[arg(long, global = true, value_name = "FILE")]
    log: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info", value_parser = parse_level)]
    log_level: LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` config file; `wscd show-config` lists every key.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (build-dataset, train-morph) or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a labeled dataset and its manifest from a cognate list or the synthetic generator.
    BuildDataset {
        #[command(flatten)]
        common: Common,
        /// Cognate pairs, one `word1<TAB>word2` per line.
        #[arg(long, value_name = "TSV")]
        cognates: Option<PathBuf>,
        /// `default` or a JSON spec file.
        #[arg(long, value_name = "SPEC")]
        synthetic: Option<String>,
        /// Cognates:non-cognates, e.g. 60:40.
        #[arg(long)]
        neg_ratio: Option<String>,
    },
    /// Pretrain the character encoder on morphology pairs.
    TrainMorph {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "TSV")]
        unimorph: Option<PathBuf>,
        #[arg(long)]
        lang: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Shrink or grow the morphology set by this percentage.
        #[arg(long, allow_hyphen_values = true)]
        resample: Option<i32>,
        /// standardized or plain.
        #[arg(long)]
        objective: Option<String>,
        /// indian, celtic or south-african learning-rate preset.
        #[arg(long)]
        family: Option<String>,
    },
    /// Train and evaluate the cognate detector with cross-validation.
    TrainDetector {
        #[command(flatten)]
        common: Common,
        /// supervised, weakly, unsupervised or baseline.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, value_name = "TSV")]
        data: Option<PathBuf>,
        /// Morphology checkpoint (with `<ckpt>.vocab` next to it).
        #[arg(long, value_name = "CKPT")]
        init: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        /// repeated-cv or fixed-fold: collect ten scores for significance testing.
        #[arg(long)]
        protocol: Option<String>,
        /// scores.json of another run to compare against.
        #[arg(long, value_name = "FILE")]
        compare: Option<PathBuf>,
        #[arg(long)]
        family: Option<String>,
    },
    /// F-score against morphology data size.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "TSV")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "TSV")]
        unimorph: Option<PathBuf>,
        #[arg(long)]
        lang: Option<String>,
        /// start..end:step in percent, e.g. -30..30:15.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// weakly or supervised.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        family: Option<String>,
    },
    /// Gradient and distribution checks; prints version information.
    Selfcheck {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print the resolved configuration and its hash.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_level(s: &str) -> Result<LevelFilter, String> {
    s.parse().map_err(|_| format!("unknown log level {s:?}"))
}

fn text<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|x| x.to_string())
}

fn path(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<Settings, CliError> {
    let mut all = vec![("seed", text(&common.seed)), ("out", path(&common.out))];
    all.extend(flags.iter().cloned());
    Settings::resolve(common.config.as_deref(), &common.set, &all)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::BuildDataset {
            common,
            cognates,
            synthetic,
            neg_ratio,
        } => {
            let s = resolve(
                &common,
                &[
                    ("cognates", path(&cognates)),
                    ("synthetic", synthetic),
                    ("neg_ratio", neg_ratio),
                ],
            )?;
            commands::build_dataset(&s)
        }
        Command::TrainMorph {
            common,
            unimorph,
            lang,
            lr,
            epochs,
            resample,
            objective,
            family,
        } => {
            let s = resolve(
                &common,
                &[
                    ("unimorph", path(&unimorph)),
                    ("lang", lang),
                    ("morph.lr", text(&lr)),
                    ("morph.epochs", text(&epochs)),
                    ("resample", text(&resample)),
                    ("morph.objective", objective),
                    ("family", family),
                ],
            )?;
            commands::train_morph(&s)
        }
        Command::TrainDetector {
            common,
            mode,
            data,
            init,
            folds,
            protocol,
            compare,
            family,
        } => {
            let s = resolve(
                &common,
                &[
                    ("mode", mode),
                    ("data", path(&data)),
                    ("init", path(&init)),
                    ("folds", text(&folds)),
                    ("protocol", protocol),
                    ("compare", path(&compare)),
                    ("family", family),
                ],
            )?;
            commands::train_detector(&s)
        }
        Command::Ablate {
            common,
            data,
            unimorph,
            lang,
            grid,
            mode,
            family,
        } => {
            let s = resolve(
                &common,
                &[
                    ("data", path(&data)),
                    ("unimorph", path(&unimorph)),
                    ("lang", lang),
                    ("grid", grid),
                    ("mode", mode),
                    ("family", family),
                ],
            )?;
            commands::ablate(&s)
        }
        Command::Selfcheck { inject_fault } => selfcheck::run(inject_fault),
        Command::ShowConfig { common } => {
            commands::show_config(&resolve(&common, &[])?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = logging::init(cli.log_level, cli.log.as_deref()) {
        eprintln!("error: cannot open log file: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
