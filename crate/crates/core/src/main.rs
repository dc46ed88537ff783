use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rician_emi::cli::{self, output, runners, ExperimentConfig, RunOutput, Scenario};
use rician_emi::Result;

#[derive(Parser)]
#[command(name = "rician-emi", version, about = "Deterministic-equivalent EMI of correlated Rician MIMO channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Large-system approximation Ī(I) and (δ, δ̃) at every grid point.
    Approx(Common),
    /// Monte-Carlo EMI at Q = I at every grid point.
    Mc(Common),
    /// Optimize the transmit covariance; also writes the iteration trace.
    Optimize(Common),
    /// Compare the asymptotic optimizer with the Monte-Carlo gradient reference.
    Compare(Common),
    /// Accuracy of Ī against Monte Carlo over sizes and SNRs.
    Sweep(Common),
    /// Run the invariant suite and emit a pass/fail report.
    Validate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; missing keys take the subcommand's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl Common {
    fn config(&self, scenario: Scenario) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, scenario)?,
            None => ExperimentConfig::preset(scenario),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(tol) = self.tol {
            cfg.tol = tol;
        }
        if let Some(out) = &self.out {
            cfg.output_path = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn emit(cfg: &ExperimentConfig, run: &RunOutput) -> Result<()> {
    output::with_output(cfg.output_path.as_deref(), |w| output::write_rows(w, cfg, run))
}

fn execute(command: Command) -> Result<i32> {
    let (common, scenario) = match &command {
        Command::Approx(c) | Command::Mc(c) | Command::Sweep(c) => (c, Scenario::AccuracySweep),
        Command::Optimize(c) => (c, Scenario::Optimize),
        Command::Compare(c) => (c, Scenario::CompareOptimizers),
        Command::Validate(c) => (c, Scenario::Validate),
    };
    let Format::Csv = common.format;
    let cfg = common.config(scenario)?;
    match command {
        Command::Approx(_) => emit(&cfg, &runners::run_approx(&cfg)?)?,
        Command::Mc(_) => emit(&cfg, &runners::run_mc(&cfg)?)?,
        Command::Sweep(_) => emit(&cfg, &cli::run_accuracy_sweep(&cfg)?)?,
        Command::Compare(_) => emit(&cfg, &cli::run_compare_optimizers(&cfg)?)?,
        Command::Optimize(_) => {
            let run = cli::run_optimize(&cfg)?;
            emit(&cfg, &run)?;
            let trace = cfg
                .trace_path
                .clone()
                .or_else(|| cfg.output_path.as_deref().map(output::default_trace_path));
            match trace {
                Some(path) => output::write_trace(&path, &run.traces)?,
                None => eprintln!("no --out given; optimizer trace not written"),
            }
        }
        Command::Validate(_) => {
            let report = cli::run_validate(&cfg)?;
            output::with_output(cfg.output_path.as_deref(), |w| report.write_csv(w, &cfg))?;
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!("FAILED {}: {}", c.check, c.detail);
            }
            if report.config_error.is_some() {
                return Ok(cli::EXIT_CONFIG);
            }
            if !report.passed() {
                return Ok(cli::EXIT_VALIDATION);
            }
        }
    }
    Ok(cli::EXIT_OK)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let code = execute(args.command).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        cli::exit_code(&e)
    });
    ExitCode::from(code as u8)
}
