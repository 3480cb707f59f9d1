use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eqkf_harness::checks;
use eqkf_harness::config::{load_config_with, Overrides};
use eqkf_harness::report::{emit_report, Format};
use eqkf_harness::run::run_scenario;

const EXIT_INVALID: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "eqkf",
    version,
    about = "Equality-constrained Kalman filter harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and report every configured method.
    Run {
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// csv or structured.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Comma-separated method tags.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_enum)]
        feedback: Option<Toggle>,
    },
    /// Run the acceptance criteria and invariant checks.
    Check,
}

fn invalid(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_INVALID)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Cmd::Run {
            config,
            out,
            format,
            methods,
            seed,
            steps,
            feedback,
        } => {
            let format: Format = match format.parse() {
                Ok(f) => f,
                Err(e) => return invalid(e),
            };
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return invalid(format!("reading {}: {e}", config.display())),
            };
            let overrides = Overrides {
                methods,
                seed,
                steps,
                feedback: feedback.map(|t| matches!(t, Toggle::On)),
            };
            let scenario = match load_config_with(&text, &overrides) {
                Ok(c) => c,
                Err(e) => return invalid(format!("{}: {e}", config.display())),
            };
            let report = match run_scenario(&scenario) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_NUMERICAL);
                }
            };
            let body = emit_report(&report, format);
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, body) {
                        eprintln!("error: writing {}: {e}", path.display());
                        return ExitCode::FAILURE;
                    }
                }
                None => print!("{body}"),
            }
            ExitCode::SUCCESS
        }
        Cmd::Check => {
            let exe = std::env::current_exe().ok();
            let mut failed = 0;
            for outcome in checks::run_all(exe.as_deref()) {
                println!("{outcome}");
                failed += usize::from(!outcome.passed);
            }
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                eprintln!("{failed} check(s) failed");
                ExitCode::FAILURE
            }
        }
    }
}
