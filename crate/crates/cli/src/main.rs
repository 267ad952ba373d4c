use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixflow_core::experiment::commands::{self, CommandError, Report};
use mixflow_core::experiment::config::{ConfigFile, ExperimentConfig};
use mixflow_core::ConfigError;

#[derive(Parser)]
#[command(name = "mixflow", version, about = "Mixed-autonomy ring-road experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one episode and write its trajectory.
    Run(Common),
    /// Equilibrium and stop-and-go velocities over a range of densities.
    SweepDensity(Common),
    /// Train the scenario's learned policy.
    Train(Common),
    /// Evaluate a (trained) scenario across track lengths.
    Eval(Common),
    /// Write a downsampled space-time diagram of an episode.
    Spacetime {
        #[command(flatten)]
        common: Common,
        /// Episode CSV written by `run`; simulates the scenario when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Keep every n-th step.
        #[arg(long, default_value_t = 10)]
        every: usize,
    },
    /// Print the named scenarios.
    ListRecipes,
}

#[derive(Args)]
struct Common {
    /// Recipe name (see `list-recipes`).
    #[arg(long)]
    scenario: Option<String>,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Trained parameter file for scenarios with learned AVs.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CommandError> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| ConfigError::invalid(format!("{}: {e}", path.display())))?;
                ConfigFile::parse(&text)?
            }
            None => ConfigFile::default(),
        };
        Ok(ExperimentConfig::resolve(file, self.scenario.as_deref(), self.seed)?)
    }

    fn thread_pool(&self) -> Result<(), CommandError> {
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(ConfigError::invalid("--jobs must be >= 1").into());
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .map_err(|e| ConfigError::invalid(format!("thread pool: {e}")))?;
        }
        Ok(())
    }
}

fn print(report: &Report) {
    for line in &report.lines {
        println!("{line}");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
}

fn dispatch(command: Command) -> Result<(), CommandError> {
    let params = |c: &Common| c.params.clone();
    match command {
        Command::ListRecipes => {
            for line in commands::list_recipes() {
                println!("{line}");
            }
            Ok(())
        }
        Command::Run(c) => with(&c, |cfg, out| commands::cmd_run(cfg, out, params(&c).as_deref())),
        Command::SweepDensity(c) => with(&c, commands::cmd_sweep_density),
        Command::Train(c) => with(&c, |cfg, out| {
            commands::cmd_train(cfg, out, |st| {
                eprintln!(
                    "iteration {:>4}  mean {:>10.1}  best {:>10.1}  validation {:>10.1}  std {:.4}",
                    st.iteration, st.fitness_mean, st.fitness_best, st.mean_fitness, st.param_std_mean
                );
            })
        }),
        Command::Eval(c) => with(&c, |cfg, out| {
            commands::cmd_eval(cfg, out, params(&c).as_deref()).map(|(r, _)| r)
        }),
        Command::Spacetime { common, input, every } => with(&common, |cfg, out| {
            commands::cmd_spacetime(cfg, out, input.as_deref(), params(&common).as_deref(), every)
        }),
    }
}

fn with(
    c: &Common,
    f: impl FnOnce(&ExperimentConfig, &Path) -> Result<Report, CommandError>,
) -> Result<(), CommandError> {
    let cfg = c.resolve()?;
    c.thread_pool()?;
    let report = f(&cfg, &c.out)?;
    print(&report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
