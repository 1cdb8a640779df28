//! Commands behind the `pgo` binary. Each command writes its outputs plus a
//! run manifest that can be replayed to reproduce them.

pub mod demo;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use thiserror::Error;

use pgo_core::eval::{factor_csv, score_loops, trajectory_errors, EvalReport};
use pgo_core::posegraph::io::{apply_labels, parse_labels, parse_trajectory_csv, trajectory, write_labels, write_trajectory_csv, Trajectory};
use pgo_core::{corrupt, dead_reckoning, gnc_optimize, grid_world, GridWorldSpec, parse_g2o, serialize_g2o, CorruptionSpec, GncReport, PgoProblem, PoseGraph, RunConfig, ScheduleKind};

pub use manifest::{Invocation, IterationCounts, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<pgo_core::Error> for CliError {
    fn from(e: pgo_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: pgo_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Input(format!("serialization failed: {e}")))
}

/// Collects the files a command writes into one directory.
struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, invocation: Invocation, started: Instant, iterations: Vec<IterationCounts>) -> CliResult<RunManifest> {
        let name = invocation.manifest_name();
        self.names.push(name.to_string());
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: invocation.seed(),
            invocation,
            out_dir: self.dir.display().to_string(),
            outputs: self.names.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
            iterations,
        };
        let path = self.dir.join(name);
        fs::write(&path, json(&manifest)?).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        Ok(manifest)
    }
}

/// Names of the files the commands write.
pub mod files {
    pub const OPTIMIZED: &str = "optimized.g2o";
    pub const TRAJECTORY: &str = "trajectory.csv";
    pub const MU_HISTORY: &str = "mu_history.json";
    pub const FACTORS: &str = "factors.csv";
    pub const CORRUPTED: &str = "corrupted.g2o";
    pub const LABELS: &str = "labels.txt";
    pub const SPEC: &str = "spec.txt";
    pub const EVAL_JSON: &str = "eval.json";
    pub const EVAL_TEXT: &str = "eval.txt";
    pub const DEMO_POINTS: &str = "demo_points.csv";
    pub const DEMO_STAGES: &str = "demo_stages.csv";
    pub const DEMO_MU: &str = "demo_mu.csv";
    pub const DEMO_SUMMARY: &str = "demo_summary.json";
    pub const GROUND_TRUTH: &str = "ground_truth.g2o";
    pub const INITIAL: &str = "initial.g2o";
}

/// Loads a run configuration file, or the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => with_path(p, RunConfig::from_kv(&read(p)?)),
    }
}

pub fn load_graph(path: &Path, labels: Option<&Path>) -> CliResult<PoseGraph> {
    let mut graph = with_path(path, parse_g2o(&read(path)?))?;
    if let Some(lp) = labels {
        let entries = with_path(lp, parse_labels(&read(lp)?))?;
        with_path(lp, apply_labels(&mut graph, &entries))?;
    }
    Ok(graph)
}

/// Runs graduated non-convexity on a g2o graph. `schedule` overrides the
/// configuration's schedule.
pub fn cmd_optimize(
    graph_path: &Path,
    labels_path: Option<&Path>,
    schedule: Option<ScheduleKind>,
    config_path: Option<&Path>,
    out_dir: &Path,
) -> CliResult<RunManifest> {
    let mut config = load_config(config_path)?;
    if let Some(s) = schedule {
        config.solver.schedule_kind = s;
    }
    run_optimize(
        Invocation::Optimize {
            graph: graph_path.display().to_string(),
            labels: labels_path.map(|p| p.display().to_string()),
            config,
        },
        out_dir,
    )
}

fn run_optimize(invocation: Invocation, out_dir: &Path) -> CliResult<RunManifest> {
    let Invocation::Optimize { graph, labels, config } = &invocation else {
        return Err(CliError::Input("not an optimize invocation".into()));
    };
    let started = Instant::now();
    let graph_path = PathBuf::from(graph);
    let g = load_graph(&graph_path, labels.as_deref().map(Path::new))?;
    let problem = with_path(&graph_path, PgoProblem::new(g))?;
    let result = gnc_optimize(&problem, &config.solver, &config.kernel)?;
    info!(
        "{} schedule: {} outer, {} inner iterations",
        result.schedule, result.outer_iterations, result.inner_iterations_total
    );
    let report = result.report();
    let optimized = result.solution.graph();
    let mut out = Outputs::create(out_dir)?;
    out.write(files::OPTIMIZED, &serialize_g2o(optimized))?;
    out.write(files::TRAJECTORY, &write_trajectory_csv(&trajectory(optimized)))?;
    out.write(files::MU_HISTORY, &json(&report)?)?;
    out.write(
        files::FACTORS,
        &factor_csv(optimized, &result.final_residuals, &result.final_mus(), &result.classification)?,
    )?;
    let counts = vec![IterationCounts {
        schedule: result.schedule,
        outer: result.outer_iterations,
        inner: result.inner_iterations_total,
    }];
    out.finish(invocation, started, counts)
}

/// Writes a corrupted copy of a graph with its outlier labels and the spec.
pub fn cmd_corrupt(graph_path: &Path, spec_path: &Path, out_dir: &Path) -> CliResult<RunManifest> {
    let spec = with_path(spec_path, CorruptionSpec::from_kv(&read(spec_path)?))?;
    run_corrupt(
        Invocation::Corrupt {
            graph: graph_path.display().to_string(),
            spec,
        },
        out_dir,
    )
}

fn run_corrupt(invocation: Invocation, out_dir: &Path) -> CliResult<RunManifest> {
    let Invocation::Corrupt { graph, spec } = &invocation else {
        return Err(CliError::Input("not a corrupt invocation".into()));
    };
    let started = Instant::now();
    let graph_path = PathBuf::from(graph);
    let g = load_graph(&graph_path, None)?;
    let corrupted = with_path(&graph_path, corrupt(&g, spec))?;
    let mut out = Outputs::create(out_dir)?;
    out.write(files::CORRUPTED, &serialize_g2o(&corrupted))?;
    out.write(files::LABELS, &write_labels(&corrupted))?;
    out.write(files::SPEC, &spec.to_kv())?;
    out.finish(invocation, started, Vec::new())
}

fn load_trajectory(path: &Path) -> CliResult<Trajectory> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "csv") {
        with_path(path, parse_trajectory_csv(&text))
    } else {
        Ok(trajectory(&with_path(path, parse_g2o(&text))?))
    }
}

/// Scores an `optimize` output directory. `gt_path` may be a g2o file or a
/// trajectory CSV; results go to `out_dir`, defaulting to the run directory.
pub fn cmd_eval(run_dir: &Path, labels_path: &Path, gt_path: Option<&Path>, out_dir: Option<&Path>) -> CliResult<(RunManifest, EvalReport)> {
    let invocation = Invocation::Eval {
        run: run_dir.display().to_string(),
        labels: labels_path.display().to_string(),
        gt: gt_path.map(|p| p.display().to_string()),
    };
    run_eval(invocation, out_dir.unwrap_or(run_dir))
}

fn run_eval(invocation: Invocation, out_dir: &Path) -> CliResult<(RunManifest, EvalReport)> {
    let Invocation::Eval { run, labels, gt } = &invocation else {
        return Err(CliError::Input("not an eval invocation".into()));
    };
    let started = Instant::now();
    let run_dir = PathBuf::from(run);
    let graph = load_graph(&run_dir.join(files::OPTIMIZED), Some(Path::new(labels)))?;
    let history_path = run_dir.join(files::MU_HISTORY);
    let report: GncReport = serde_json::from_str(&read(&history_path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", history_path.display())))?;
    let classification = with_path(&history_path, score_loops(&graph, &report.classification, &graph.labels()))?;
    let trajectory_report = match gt {
        None => None,
        Some(p) => {
            let gt_traj = load_trajectory(Path::new(p))?;
            Some(with_path(Path::new(p), trajectory_errors(&trajectory(&graph), &gt_traj))?)
        }
    };
    let eval = EvalReport {
        classification,
        trajectory: trajectory_report,
    };
    let mut out = Outputs::create(out_dir)?;
    out.write(files::EVAL_JSON, &json(&eval)?)?;
    out.write(files::EVAL_TEXT, &eval.to_text())?;
    let manifest = out.finish(invocation, started, Vec::new())?;
    Ok((manifest, eval))
}

/// Runs both schedules on the three-slope line-fit mixture.
pub fn cmd_demo(out_dir: &Path, seed: u64, points: usize) -> CliResult<(RunManifest, demo::DemoOutcome)> {
    run_demo(Invocation::Demo { seed, points }, out_dir)
}

fn run_demo(invocation: Invocation, out_dir: &Path) -> CliResult<(RunManifest, demo::DemoOutcome)> {
    let Invocation::Demo { seed, points } = &invocation else {
        return Err(CliError::Input("not a demo invocation".into()));
    };
    let started = Instant::now();
    let outcome = demo::regression_demo(*seed, *points)?;
    let mut out = Outputs::create(out_dir)?;
    out.write(files::DEMO_POINTS, &outcome.points_csv())?;
    out.write(files::DEMO_STAGES, &outcome.stages_csv())?;
    out.write(files::DEMO_MU, &outcome.mu_csv())?;
    out.write(files::DEMO_SUMMARY, &json(&outcome.runs)?)?;
    let counts = outcome
        .runs
        .iter()
        .map(|r| IterationCounts {
            schedule: r.schedule,
            outer: r.outer_iterations,
            inner: r.inner_iterations,
        })
        .collect();
    let manifest = out.finish(invocation, started, counts)?;
    Ok((manifest, outcome))
}

/// Generates the synthetic grid-world graph: ground truth plus a copy whose
/// vertices are initialized by chaining odometry.
pub fn cmd_synth(spec: GridWorldSpec, out_dir: &Path) -> CliResult<RunManifest> {
    run_synth(Invocation::Synth { spec }, out_dir)
}

fn run_synth(invocation: Invocation, out_dir: &Path) -> CliResult<RunManifest> {
    let Invocation::Synth { spec } = &invocation else {
        return Err(CliError::Input("not a synth invocation".into()));
    };
    let started = Instant::now();
    let gt = grid_world(spec)?;
    let initial = dead_reckoning(&gt)?;
    let mut out = Outputs::create(out_dir)?;
    out.write(files::GROUND_TRUTH, &serialize_g2o(&gt))?;
    out.write(files::INITIAL, &serialize_g2o(&initial))?;
    out.finish(invocation, started, Vec::new())
}

/// Re-executes the invocation recorded in a manifest, writing into `out_dir`
/// or the manifest's own output directory.
pub fn cmd_replay(manifest_path: &Path, out_dir: Option<&Path>) -> CliResult<RunManifest> {
    let manifest: RunManifest = serde_json::from_str(&read(manifest_path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", manifest_path.display())))?;
    let target = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&manifest.out_dir));
    replay(manifest.invocation, &target)
}

pub fn replay(invocation: Invocation, out_dir: &Path) -> CliResult<RunManifest> {
    match invocation {
        inv @ Invocation::Optimize { .. } => run_optimize(inv, out_dir),
        inv @ Invocation::Corrupt { .. } => run_corrupt(inv, out_dir),
        inv @ Invocation::Eval { .. } => run_eval(inv, out_dir).map(|(m, _)| m),
        inv @ Invocation::Demo { .. } => run_demo(inv, out_dir).map(|(m, _)| m),
        inv @ Invocation::Synth { .. } => run_synth(inv, out_dir),
    }
}
