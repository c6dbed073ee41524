use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand, ValueEnum};
use geoflow::runner::{emit_report, error_record, run, ExperimentConfig, Format, Subcommand};
use geoflow::Error;

#[derive(Parser)]
#[command(
    name = "geoflow",
    version,
    about = "Transport calculus experiments on surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Commutator, Pestov and Guillemin–Kazhdan residual battery.
    VerifyIdentities(Common),
    /// Beurling transform contraction survey.
    Beurling(Common),
    /// Truncated formal invariant distribution.
    Invariant(Common),
    /// Terminator value by bisection over curvature profiles.
    Terminator(Common),
    /// Green solutions of the β-Riccati equation and hyperbolicity gaps.
    Riccati(Common),
    /// Ray transform spectrum on the disc.
    Xray(Common),
    /// Table of closed-form constants.
    Constants(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and tables/.
    #[arg(long, default_value = "geoflow-out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output formats to write.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,csv")]
    format: Vec<OutputFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

impl Command {
    fn split(self) -> (Subcommand, Common) {
        match self {
            Command::VerifyIdentities(c) => (Subcommand::VerifyIdentities, c),
            Command::Beurling(c) => (Subcommand::Beurling, c),
            Command::Invariant(c) => (Subcommand::Invariant, c),
            Command::Terminator(c) => (Subcommand::Terminator, c),
            Command::Riccati(c) => (Subcommand::Riccati, c),
            Command::Xray(c) => (Subcommand::Xray, c),
            Command::Constants(c) => (Subcommand::Constants, c),
        }
    }
}

fn load(sub: Subcommand, args: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    match cfg.subcommand {
        Some(s) if s != sub => {
            return Err(Error::Config {
                path: "subcommand".into(),
                message: format!("config is for `{s}` but `{sub}` was requested"),
            })
        }
        _ => cfg.subcommand = Some(sub),
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", seed)?;
    }
    Ok(cfg)
}

fn fail(err: &Error, out: Option<&PathBuf>) {
    let record = error_record(err);
    eprintln!("{record}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{record}\n"));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, args) = cli.command.split();
    let cfg = match load(sub, &args) {
        Ok(c) => c,
        Err(e) => {
            fail(&e, None);
            return ExitCode::from(2);
        }
    };
    let report = match run(&cfg) {
        Ok(r) => r,
        Err(e @ Error::Config { .. }) => {
            fail(&e, None);
            return ExitCode::from(2);
        }
        Err(e) => {
            fail(&e, Some(&args.out));
            return ExitCode::from(1);
        }
    };
    let formats: Vec<Format> = args
        .format
        .iter()
        .map(|f| match f {
            OutputFormat::Json => Format::Json,
            OutputFormat::Csv => Format::Csv,
        })
        .collect();
    if let Err(e) = emit_report(&report, &args.out, &formats) {
        fail(&e, None);
        return ExitCode::from(1);
    }
    for v in &report.verdicts {
        println!(
            "{} {}: {:.6e} (threshold {:.6e})",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.value,
            v.threshold
        );
    }
    println!(
        "{} rows, {:.2} s",
        report.row_count(),
        report.wall_clock_seconds
    );
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
