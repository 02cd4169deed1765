//! `micrograin` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure (non-finite loss).

mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use micrograin::Error;

#[derive(Parser)]
#[command(name = "micrograin", version, about = "Micrograph translation, super-resolution and particle sizing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic paired corpus (primary/secondary/tertiary).
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warp an image onto another's frame using landmark correspondences.
    Register {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Output extents `WxH`; defaults to the input extents.
        #[arg(long)]
        size: Option<String>,
    },
    /// Train the optical-to-electron style translator GAN.
    TrainTranslator {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the 4x super-resolution GAN.
    TrainSr {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Translator checkpoint (required with sr.train_on_translator).
        #[arg(long)]
        translator: Option<PathBuf>,
    },
    /// Train the dense circle detector.
    TrainDetector {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate and super-resolve one image.
    SuperResolve {
        #[arg(long)]
        translator: PathBuf,
        #[arg(long)]
        sr: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Detect circles on an image; writes an annotation CSV.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        p_thresh: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// PSNR/SSIM over name-matched pairs plus manifold density & coverage.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Size-distribution statistics (and KDE curve) from an annotation CSV.
    Stats {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// KDE curve CSV path; defaults to `<out>` with a `_kde.csv` suffix.
        #[arg(long)]
        kde_out: Option<PathBuf>,
    },
    /// End-to-end run over a corpus: register, translate, super-resolve,
    /// detect, and report statistics.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        translator: Option<PathBuf>,
        #[arg(long)]
        sr: Option<PathBuf>,
        #[arg(long)]
        detector: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Synth { config, out } => ops::synth(config.as_deref(), &out),
        Command::Register { landmarks, input, out, size } => {
            ops::register(&landmarks, &input, &out, size.as_deref())
        }
        Command::TrainTranslator { config, data, out } => ops::train_translator(config.as_deref(), &data, &out),
        Command::TrainSr { config, data, out, translator } => {
            ops::train_sr(config.as_deref(), &data, &out, translator.as_deref())
        }
        Command::TrainDetector { config, data, out } => ops::train_detector(config.as_deref(), &data, &out),
        Command::SuperResolve { translator, sr, input, out, config } => {
            ops::super_resolve(config.as_deref(), &translator, &sr, &input, &out)
        }
        Command::Detect { model, input, out, p_thresh, config } => {
            ops::detect(config.as_deref(), &model, &input, &out, p_thresh)
        }
        Command::Evaluate { real, fake, out, config } => ops::evaluate(config.as_deref(), &real, &fake, &out),
        Command::Stats { annotations, out, kde_out } => ops::stats(&annotations, &out, kde_out.as_deref()),
        Command::Pipeline { config, input, out, translator, sr, detector } => ops::pipeline(
            config.as_deref(),
            &input,
            &out,
            translator.as_deref(),
            sr.as_deref(),
            detector.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
