use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dotspec::inversion::Method;
use dotspec_cli::config::ExperimentConfig;
use dotspec_cli::error::{CliError, CliResult};
use dotspec_cli::pipeline::{
    cmd_fit, cmd_forward, cmd_invert, cmd_reproduce, cmd_synth, FitOptions, ForwardOptions,
    InvertOptions,
};

#[derive(Parser)]
#[command(name = "dotspec", version, about = "Quantum-dot spin decoherence and noise-spectrum reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated fields in tesla; overrides `b_tesla`.
    #[arg(long, value_delimiter = ',')]
    b_tesla: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the bath and write parallel, perpendicular and total spectra.
    Synth(Common),
    /// Coherence curves for every configured sequence.
    Forward {
        #[command(flatten)]
        common: Common,
        /// Add Monte-Carlo columns for the oracle sequences.
        #[arg(long)]
        oracle: bool,
        /// Monte-Carlo realizations; overrides `oracle.realizations`.
        #[arg(long)]
        realizations: Option<usize>,
        /// Total spectrum CSV used instead of `synth` output.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Reconstruct S from CPMG curves and fit a Gaussian peak.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Directory of curve files used instead of `forward` output.
        #[arg(long)]
        input: Option<PathBuf>,
        /// `recursive` or `lsq`; overrides `inversion.method`.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Fit decompositions and Ramsey curves.
    Fit {
        #[command(flatten)]
        common: Common,
        /// A single decomposition or curve CSV.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run every stage over the field sweep and report the trend checks.
    Reproduce(Common),
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(b) = &common.b_tesla {
        config.b_tesla = b.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(common) => {
            for dir in cmd_synth(&load(&common)?)? {
                println!("{}", dir.display());
            }
        }
        Command::Forward { common, oracle, realizations, input } => {
            let mut config = load(&common)?;
            if let Some(r) = realizations {
                config.oracle.realizations = r;
            }
            let options = ForwardOptions { oracle, spectrum: input };
            for dir in cmd_forward(&config, &options)? {
                println!("{}", dir.display());
            }
        }
        Command::Invert { common, input, method } => {
            let options = InvertOptions { input, method };
            for r in cmd_invert(&load(&common)?, &options)? {
                if let Some(f) = r.fit {
                    println!(
                        "B = {:.3} T: center {:.3} MHz, amplitude {:.3} rad/us",
                        r.field_b_tesla, f.center_mhz, f.amplitude
                    );
                }
            }
        }
        Command::Fit { common, input } => {
            let records = cmd_fit(&load(&common)?, &FitOptions { input })?;
            println!("{}", serde_json::to_string_pretty(&records).expect("records serialize"));
        }
        Command::Reproduce(common) => {
            let report = cmd_reproduce(&load(&common)?)?;
            print!("{}", report.table());
            if !report.all_pass() {
                eprintln!("warning: some trend checks failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}
