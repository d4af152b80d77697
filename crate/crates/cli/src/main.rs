use branchfront::harness::{
    certify_stored, load_scenario, run_scenario_with, ExitReport, HarnessError, RunOptions, Scenario, Task,
};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "branchfront", version, about = "Bistable fronts on branched planar domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to out/<scenario name>.
    #[arg(long, env = "BRANCHFRONT_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "BRANCHFRONT_THREADS")]
    threads: Option<usize>,
    /// Seed for randomized extra sample points; never changes the physics.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Traveling-wave table for the thresholds in [waves].
    Wave(Common),
    /// Run a simulation scenario.
    Simulate(Common),
    /// Transition-front certification on snapshots stored by `simulate`.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Directory holding the snapshots; defaults to the output directory.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Weight and candidate residual checks from [bounds].
    VerifyBounds(Common),
    /// Parameter sweep from [sweep].
    Sweep(Common),
}

fn out_dir(common: &Common, s: &Scenario) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&s.name))
}

fn load(common: &Common, want: Task) -> Result<Scenario, HarnessError> {
    let s = load_scenario(&common.config)?;
    if s.task != want {
        return Err(HarnessError::Run {
            scenario: s.name.clone(),
            context: "task".into(),
            message: format!("config task is '{}', this subcommand runs '{}'", s.task.name(), want.name()),
        });
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<ExitReport, HarnessError> {
    let (common, task) = match &cli.command {
        Command::Wave(c) => (c, Task::WaveTable),
        Command::Simulate(c) => (c, Task::Simulate),
        Command::VerifyBounds(c) => (c, Task::VerifyBounds),
        Command::Sweep(c) => (c, Task::Sweep),
        Command::Certify { common, .. } => (common, Task::Simulate),
    };
    if let Some(n) = common.threads {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let s = load(common, task)?;
    let out = out_dir(common, &s);
    match &cli.command {
        Command::Certify { run, .. } => {
            let run = run.clone().unwrap_or_else(|| out.clone());
            certify_stored(&s, &run, &out)
        }
        _ => run_scenario_with(&s, &out, RunOptions { seed: common.seed }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            print!("{}", report.to_text());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
