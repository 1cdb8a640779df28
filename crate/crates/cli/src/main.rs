use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pgo_cli::{cmd_corrupt, cmd_demo, cmd_eval, cmd_optimize, cmd_replay, cmd_synth, demo, CliResult};
use pgo_core::{GridWorldSpec, ScheduleKind};

/// Robust pose-graph optimization with graduated non-convexity.
#[derive(Parser)]
#[command(name = "pgo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a g2o pose graph.
    Optimize {
        #[arg(long)]
        graph: PathBuf,
        /// Schedule, overriding the configuration file.
        #[arg(long, value_parser = parse_schedule)]
        schedule: Option<ScheduleKind>,
        /// Key-value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sidecar labels; a third column overrides factor kinds.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt a graph with false loops or noisy perturbations.
    Corrupt {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an optimize run against ground truth.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Ground-truth g2o file or trajectory CSV.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Output directory, defaulting to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Line-fit demonstration of both schedules.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = demo::DEFAULT_POINTS)]
        points: usize,
    },
    /// Generate a synthetic planar grid-world graph.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        poses: usize,
        #[arg(long, default_value_t = 80)]
        loops: usize,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_schedule(s: &str) -> Result<ScheduleKind, String> {
    s.parse().map_err(|e: pgo_core::Error| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Optimize {
            graph,
            schedule,
            config,
            labels,
            out,
        } => {
            let m = cmd_optimize(&graph, labels.as_deref(), schedule, config.as_deref(), &out)?;
            for c in &m.iterations {
                println!("{}: {} outer, {} inner iterations", c.schedule, c.outer, c.inner);
            }
        }
        Command::Corrupt { graph, spec, out } => {
            cmd_corrupt(&graph, &spec, &out)?;
        }
        Command::Eval { run, labels, gt, out } => {
            let (_, report) = cmd_eval(&run, &labels, gt.as_deref(), out.as_deref())?;
            print!("{}", report.to_text());
        }
        Command::Demo { out, seed, points } => {
            let (_, outcome) = cmd_demo(&out, seed, points)?;
            for r in &outcome.runs {
                println!("{}: slope {:.6} after {} stages", r.schedule, r.final_slope, r.outer_iterations);
            }
        }
        Command::Synth {
            out,
            seed,
            poses,
            loops,
        } => {
            let spec = GridWorldSpec {
                seed,
                poses,
                loops,
                ..GridWorldSpec::default()
            };
            cmd_synth(spec, &out)?;
        }
        Command::Replay { manifest, out } => {
            cmd_replay(&manifest, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PGO_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
