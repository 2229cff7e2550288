use std::path::PathBuf;
use std::process::ExitCode;

use benfordkit::digits::{benford_probability, DigitPosition};
use benfordkit::pipeline::StudyConfig;
use benfordkit::report::{run_study, write_report, write_sweep, ReportFormat, SweepReport, SCHEMA_VERSION};
use benfordkit::synth::{conformance_sweep, SweepFile};
use benfordkit::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "benfordkit", version, about = "Leading-digit forensics for count time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DigitArg {
    #[value(name = "1")]
    First,
    #[value(name = "2")]
    Second,
    Both,
}

impl DigitArg {
    fn positions(self) -> Vec<DigitPosition> {
        match self {
            DigitArg::First => vec![DigitPosition::First],
            DigitArg::Second => vec![DigitPosition::Second],
            DigitArg::Both => DigitPosition::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    CsvBundle,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full digit study over one or more input files.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        #[arg(long, value_enum)]
        digit: Option<DigitArg>,
        #[arg(long)]
        replications: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Second-digit analysis uses values strictly above the threshold.
        #[arg(long)]
        second_digit_strict: bool,
        #[arg(long)]
        focal_group: Option<String>,
    },
    /// Generate synthetic growth curves and test their digits.
    SynthSweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        replications: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the Newcomb-Benford digit probabilities.
    BenfordTable {
        #[arg(long, value_enum, default_value = "both")]
        digit: DigitArg,
    },
}

const DEFAULT_REPLICATIONS: u32 = 5000;

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Analyze {
            config,
            input,
            out,
            format,
            digit,
            replications,
            seed,
            alpha,
            second_digit_strict,
            focal_group,
        } => {
            let mut cfg = StudyConfig::load(&config)?;
            if let Some(d) = digit {
                cfg.digit_positions = d.positions();
            }
            if let Some(b) = replications {
                cfg.replications = b;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            if second_digit_strict {
                cfg.second_digit_min += 1;
            }
            if focal_group.is_some() {
                cfg.focal_group = focal_group;
            }
            cfg.validate()?;
            let report = run_study(&cfg, &input)?;
            let format = match format {
                FormatArg::Json => ReportFormat::Json,
                FormatArg::CsvBundle => ReportFormat::CsvBundle,
            };
            for path in write_report(&report, &out, format)? {
                println!("{}", path.display());
            }
        }
        Command::SynthSweep {
            spec,
            out,
            replications,
            seed,
        } => {
            let file = SweepFile::load(&spec)?;
            let replications = replications.or(file.replications).unwrap_or(DEFAULT_REPLICATIONS);
            let seed = seed.or(file.seed).unwrap_or(0);
            let rows = conformance_sweep(&file.specs, file.position, replications, file.alpha, seed)?;
            let sweep = SweepReport {
                schema_version: SCHEMA_VERSION,
                replications,
                seed,
                alpha: file.alpha,
                rows,
            };
            for path in write_sweep(&sweep, &out)? {
                println!("{}", path.display());
            }
        }
        Command::BenfordTable { digit } => {
            println!("position,digit,probability,percent");
            for position in digit.positions() {
                for d in position.digits() {
                    let p = benford_probability(position, d)?;
                    println!("{position},{d},{p:.12},{:.1}", 100.0 * p);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
        Err(_) => ExitCode::from(2),
    }
}
