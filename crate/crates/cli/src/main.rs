use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sphs_cli::bundled::{bundled, BUNDLED};
use sphs_cli::scenario::{CheckName, VariantName};
use sphs_cli::{apply_overrides, parse_scenario, run::summary_text, run_scenario, CliError, Overrides, Scenario};

#[derive(Parser)]
#[command(name = "sphs", version, about = "Simulate and audit singular port-Hamiltonian scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or a bundled scenario by name).
    Run {
        config: String,
        /// Output directory. Defaults to the scenario's `output_dir`, then `out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-final")]
        t_final: Option<f64>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<VariantName>,
        /// Comma-separated checks, e.g. `passivity,convergence_to_s`.
        #[arg(long, value_delimiter = ',', value_parser = parse_check)]
        audit: Option<Vec<CheckName>>,
    },
    /// Parse and validate a scenario without running it.
    Validate { config: String },
    /// List the bundled scenarios.
    ListScenarios,
}

fn parse_variant(s: &str) -> Result<VariantName, String> {
    VariantName::parse(s).ok_or_else(|| format!("unknown variant {s:?} (exact, saturated, linear)"))
}

fn parse_check(s: &str) -> Result<CheckName, String> {
    CheckName::parse(s).ok_or_else(|| {
        let all: Vec<&str> = CheckName::ALL.iter().map(|c| c.as_str()).collect();
        format!("unknown check {s:?} (one of {})", all.join(", "))
    })
}

fn load(config: &str) -> Result<Scenario, CliError> {
    let path = Path::new(config);
    if path.exists() {
        parse_scenario(path)
    } else {
        bundled(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::ListScenarios => {
            for (name, text) in BUNDLED {
                let desc = sphs_cli::parse_str(text)
                    .ok()
                    .and_then(|s| s.description)
                    .unwrap_or_default();
                println!("{name}\t{desc}");
            }
            0
        }
        Command::Validate { config } => match load(&config) {
            Ok(s) => {
                println!("{}: ok ({} runs)", s.name, s.runs().map(|r| r.len()).unwrap_or(0));
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Run { config, out, seed, dt, t_final, variant, audit } => {
            let overrides = Overrides { seed, dt, t_final, variant, checks: audit };
            let result = load(&config).and_then(|s| apply_overrides(&s, &overrides)).and_then(|s| {
                let dir = out
                    .or_else(|| s.output_dir.as_ref().map(PathBuf::from))
                    .unwrap_or_else(|| Path::new("out").join(&s.name));
                run_scenario(&s, &dir)
            });
            match result {
                Ok(summary) => {
                    print!("{}", summary_text(&summary));
                    println!("outputs in {}", summary.out_dir.display());
                    summary.exit_code()
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
    };
    ExitCode::from(code)
}
