//! Scalar line-fit demonstration of the two schedules on a three-slope mixture.

use std::fmt::Write as _;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pgo_core::solver::MuRecord;
use pgo_core::{gnc_optimize_observed, KernelConfig, LineFitProblem, Result, ScheduleKind, SolverConfig};

pub const DEFAULT_POINTS: usize = 200;
pub const INITIAL_SLOPE: f64 = 7.5;
/// Slopes of the mixture components with their shares of the data.
pub const COMPONENTS: [(f64, f64); 3] = [(1.0, 0.55), (5.0, 0.15), (10.0, 0.30)];
/// Residual scale of the line fit.
pub const RESIDUAL_SIGMA: f64 = 2.0;
pub const KERNEL_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoPoint {
    pub x: f64,
    pub y: f64,
    /// Slope of the component that generated the point.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStage {
    pub stage: usize,
    pub slope: f64,
    pub inner_iterations: usize,
    /// Control value of every point during this stage.
    pub mus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRun {
    pub schedule: ScheduleKind,
    pub final_slope: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub stages: Vec<DemoStage>,
    pub mu_history: Vec<Vec<MuRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoOutcome {
    pub seed: u64,
    pub points: Vec<DemoPoint>,
    pub runs: Vec<DemoRun>,
}

/// Noiseless mixture: `x` uniform on [0, 1], each point exactly on its
/// component's line.
pub fn mixture(seed: u64, n: usize) -> Vec<DemoPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: Vec<usize> = COMPONENTS.iter().map(|(_, share)| (share * n as f64).round() as usize).collect();
    let assigned: usize = counts[..counts.len() - 1].iter().sum();
    if let Some(last) = counts.last_mut() {
        *last = n.saturating_sub(assigned);
    }
    let mut points = Vec::with_capacity(n);
    for ((slope, _), count) in COMPONENTS.iter().zip(counts) {
        for _ in 0..count {
            let x: f64 = rng.random();
            points.push(DemoPoint { x, y: slope * x, slope: *slope });
        }
    }
    points
}

pub fn demo_configs(schedule: ScheduleKind) -> (SolverConfig, KernelConfig) {
    (
        SolverConfig::with_schedule(schedule),
        KernelConfig {
            c: KERNEL_SCALE,
            ..KernelConfig::default()
        },
    )
}

pub fn regression_demo(seed: u64, n: usize) -> Result<DemoOutcome> {
    let points = mixture(seed, n);
    let problem = LineFitProblem::new(
        points.iter().map(|p| p.x).collect(),
        points.iter().map(|p| p.y).collect(),
        RESIDUAL_SIGMA,
        INITIAL_SLOPE,
    )?;
    let mut runs = Vec::new();
    for schedule in [ScheduleKind::Efficient, ScheduleKind::Baseline] {
        let (cfg, kcfg) = demo_configs(schedule);
        let mut stages = Vec::new();
        let result = gnc_optimize_observed(&problem, &cfg, &kcfg, |stage, solution, mus| {
            stages.push(DemoStage {
                stage: stage.outer_iteration,
                slope: solution.slope,
                inner_iterations: stage.inner_iterations,
                mus: mus.to_vec(),
            });
        })?;
        runs.push(DemoRun {
            schedule,
            final_slope: result.solution.slope,
            outer_iterations: result.outer_iterations,
            inner_iterations: result.inner_iterations_total,
            stages,
            mu_history: result.mu_history,
        });
    }
    Ok(DemoOutcome { seed, points, runs })
}

impl DemoOutcome {
    pub fn points_csv(&self) -> String {
        let mut out = String::from("index,x,y,component_slope\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{i},{:?},{:?},{:?}", p.x, p.y, p.slope);
        }
        out
    }

    /// One row per schedule and stage.
    pub fn stages_csv(&self) -> String {
        let mut out = String::from("schedule,stage,slope,inner_iterations,mu_min,mu_max\n");
        for run in &self.runs {
            for s in &run.stages {
                let lo = s.mus.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = s.mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let _ = writeln!(out, "{},{},{:?},{},{lo:?},{hi:?}", run.schedule, s.stage, s.slope, s.inner_iterations);
            }
        }
        out
    }

    /// One row per schedule, stage and point.
    pub fn mu_csv(&self) -> String {
        let mut out = String::from("schedule,stage,point,mu\n");
        for run in &self.runs {
            for s in &run.stages {
                for (i, mu) in s.mus.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{i},{mu:?}", run.schedule, s.stage);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_proportions() {
        let pts = mixture(3, 200);
        let count = |s: f64| pts.iter().filter(|p| p.slope == s).count();
        assert_eq!((count(1.0), count(5.0), count(10.0)), (110, 30, 60));
        assert!(pts.iter().all(|p| (0.0..1.0).contains(&p.x) && p.y == p.slope * p.x));
        assert_eq!(mixture(3, 200), pts);
    }
}
