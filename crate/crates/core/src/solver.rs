//! Robust inner solver (IRLS inside Levenberg-Marquardt) and the outer GNC loop.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::kernel::{baseline_ramp, sig_rho, sig_weight, KernelConfig};
use crate::linalg::BlockSystem;
use crate::posegraph::{PoseGraph, VertexId};
use crate::schedule::{assign_mu, chi2_quantile, converged, mark_strong_outlier, ChiSquareGate, FactorScheduleState, MuSource};

/// Quantile level used to classify factors after optimization.
pub const CLASSIFICATION_LEVEL: f64 = 0.95;

const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e16;
/// Whitened residual with one Jacobian per free block it touches.
pub type Linearization = (DVector<f64>, Vec<(usize, DMatrix<f64>)>);


/// A least-squares problem made of whitened residual blocks over manifold
/// variables. The solver owns the robustification.
pub trait RobustProblem: Clone {
    /// Tangent dimension of each free variable block.
    fn block_dims(&self) -> Vec<usize>;
    fn num_factors(&self) -> usize;
    fn factor_dim(&self, factor: usize) -> usize;
    /// Factors that may be outliers. They always carry the robust kernel;
    /// the remaining ones do only when `robust_on_odometry` is set.
    fn is_loop(&self, factor: usize) -> bool;
    fn residual(&self, factor: usize) -> Result<DVector<f64>>;
    /// Whitened residual plus Jacobians on the free blocks it touches.
    fn linearize(&self, factor: usize) -> Result<Linearization>;
    /// Applies a tangent step laid out block after block.
    fn retract(&self, delta: &DVector<f64>) -> Result<Self>;

    fn residual_norms(&self) -> Result<Vec<f64>> {
        (0..self.num_factors()).map(|i| Ok(self.residual(i)?.norm())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Efficient,
    Baseline,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "efficient" => Ok(Self::Efficient),
            "baseline" => Ok(Self::Baseline),
            other => Err(Error::Domain(format!("unknown schedule '{other}'"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Efficient => "efficient",
            Self::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_inner_iters: usize,
    pub rel_cost_tol: f64,
    pub abs_grad_tol: f64,
    pub lm_lambda_init: f64,
    pub lm_lambda_factor: f64,
    pub schedule_kind: ScheduleKind,
    pub robust_on_odometry: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_inner_iters: 50,
            rel_cost_tol: 1e-6,
            abs_grad_tol: 1e-8,
            lm_lambda_init: 1e-4,
            lm_lambda_factor: 10.0,
            schedule_kind: ScheduleKind::Efficient,
            robust_on_odometry: false,
        }
    }
}

impl SolverConfig {
    pub fn with_schedule(schedule_kind: ScheduleKind) -> Self {
        Self {
            schedule_kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_inner_iters == 0 {
            return Err(Error::Domain("max_inner_iters must be >= 1".into()));
        }
        for (name, v) in [
            ("rel_cost_tol", self.rel_cost_tol),
            ("abs_grad_tol", self.abs_grad_tol),
            ("lm_lambda_init", self.lm_lambda_init),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.lm_lambda_factor > 1.0) {
            return Err(Error::Domain(format!("lm_lambda_factor must be > 1, got {}", self.lm_lambda_factor)));
        }
        Ok(())
    }

    fn is_robust<P: RobustProblem>(&self, problem: &P, factor: usize) -> bool {
        self.robust_on_odometry || problem.is_loop(factor)
    }
}

/// Result of one inner solve at fixed control parameters.
#[derive(Debug, Clone)]
pub struct InnerOutcome<P> {
    pub problem: P,
    pub residuals: Vec<f64>,
    /// Linear solves performed, accepted or not.
    pub iterations: usize,
    /// Robust cost at the start and after every accepted step.
    pub cost_trace: Vec<f64>,
}

impl<P> InnerOutcome<P> {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().unwrap_or(&0.0)
    }
}

fn factor_cost(r: f64, mu: f64, robust: bool, kcfg: &KernelConfig) -> Result<f64> {
    if robust {
        sig_rho(r, mu, kcfg)
    } else {
        Ok(0.5 * r * r)
    }
}

/// Total robust cost `sum_i rho(|r_i|; mu_i)` (quadratic for non-robust factors).
pub fn robust_cost<P: RobustProblem>(problem: &P, mus: &[f64], cfg: &SolverConfig, kcfg: &KernelConfig) -> Result<f64> {
    let norms = problem.residual_norms()?;
    cost_from_norms(problem, &norms, mus, cfg, kcfg)
}

fn cost_from_norms<P: RobustProblem>(problem: &P, norms: &[f64], mus: &[f64], cfg: &SolverConfig, kcfg: &KernelConfig) -> Result<f64> {
    let mut total = 0.0;
    for (i, &r) in norms.iter().enumerate() {
        total += factor_cost(r, mus[i], cfg.is_robust(problem, i), kcfg)?;
    }
    Ok(total)
}

fn sparsity<P: RobustProblem>(problem: &P) -> Result<Vec<(usize, usize)>> {
    let mut pairs = BTreeSet::new();
    for i in 0..problem.num_factors() {
        let (_, jac) = problem.linearize(i)?;
        for (a, _) in &jac {
            for (b, _) in &jac {
                pairs.insert(((*a).min(*b), (*a).max(*b)));
            }
        }
    }
    Ok(pairs.into_iter().collect())
}

/// Levenberg-Marquardt on the robust cost with IRLS weights recomputed at
/// every linearization.
pub fn optimize_inner<P: RobustProblem>(problem: &P, mus: &[f64], cfg: &SolverConfig, kcfg: &KernelConfig) -> Result<InnerOutcome<P>> {
    cfg.validate()?;
    kcfg.validate()?;
    let n_factors = problem.num_factors();
    if mus.len() != n_factors {
        return Err(Error::Contract(format!("{} control values for {n_factors} factors", mus.len())));
    }
    if let Some(bad) = mus.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::Domain(format!("control parameter {bad} outside [0, 1]")));
    }

    let dims = problem.block_dims();
    let mut system = BlockSystem::new(&dims, &sparsity(problem)?);
    let mut current = problem.clone();
    let mut norms = current.residual_norms()?;
    let mut cost = cost_from_norms(&current, &norms, mus, cfg, kcfg)?;
    let mut trace = vec![cost];
    let mut lambda = cfg.lm_lambda_init;
    let mut iterations = 0;

    if system.dim() == 0 || cost == 0.0 {
        return Ok(InnerOutcome {
            problem: current,
            residuals: norms,
            iterations,
            cost_trace: trace,
        });
    }

    let relinearize = |system: &mut BlockSystem, state: &P| -> Result<()> {
        system.clear();
        for i in 0..n_factors {
            let (r, jac) = state.linearize(i)?;
            if jac.is_empty() {
                continue;
            }
            let w = if cfg.is_robust(state, i) {
                sig_weight(r.norm(), mus[i], kcfg)?
            } else {
                1.0
            };
            system.add_factor(&jac, &r, w);
        }
        Ok(())
    };
    relinearize(&mut system, &current)?;

    while iterations < cfg.max_inner_iters {
        let grad_norm = system.gradient().norm();
        if grad_norm < cfg.abs_grad_tol {
            debug!("inner solve: gradient norm {grad_norm:e} below tolerance");
            break;
        }
        iterations += 1;
        let Some(step) = system.solve_damped(lambda) else {
            lambda *= cfg.lm_lambda_factor;
            if lambda > LAMBDA_MAX {
                return Err(Error::Numerical {
                    message: format!("normal equations not positive definite after {iterations} iterations"),
                    trace,
                });
            }
            continue;
        };
        let candidate = current.retract(&step)?;
        let cand_norms = candidate.residual_norms()?;
        let cand_cost = cost_from_norms(&candidate, &cand_norms, mus, cfg, kcfg)?;
        if cand_cost.is_finite() && cand_cost <= cost {
            let rel = (cost - cand_cost) / cost.max(f64::MIN_POSITIVE);
            current = candidate;
            norms = cand_norms;
            cost = cand_cost;
            trace.push(cost);
            lambda = (lambda / cfg.lm_lambda_factor).max(LAMBDA_MIN);
            if rel < cfg.rel_cost_tol || cost == 0.0 {
                break;
            }
            relinearize(&mut system, &current)?;
        } else {
            lambda *= cfg.lm_lambda_factor;
            if lambda > LAMBDA_MAX {
                debug!("inner solve: no descent direction at maximum damping");
                break;
            }
        }
    }
    Ok(InnerOutcome {
        problem: current,
        residuals: norms,
        iterations,
        cost_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Inlier,
    Outlier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuRecord {
    pub outer_iteration: usize,
    pub mu: f64,
    pub source: MuSource,
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub outer_iteration: usize,
    pub inner_iterations: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    /// Robust factors flagged as strong outliers after this stage.
    pub strong_outliers: usize,
}

#[derive(Debug, Clone)]
pub struct GncResult<P = PgoProblem> {
    pub schedule: ScheduleKind,
    pub solution: P,
    /// Control values per factor; empty for non-robust factors.
    pub mu_history: Vec<Vec<MuRecord>>,
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    pub stages: Vec<StageReport>,
    pub final_residuals: Vec<f64>,
    pub classification: Vec<Classification>,
}

/// Serializable view of a [`GncResult`] without the solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GncReport {
    pub schedule: ScheduleKind,
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    pub stages: Vec<StageReport>,
    pub mu_history: Vec<Vec<MuRecord>>,
    pub final_residuals: Vec<f64>,
    pub classification: Vec<Classification>,
}

impl<P> GncResult<P> {
    pub fn report(&self) -> GncReport {
        GncReport {
            schedule: self.schedule,
            outer_iterations: self.outer_iterations,
            inner_iterations_total: self.inner_iterations_total,
            stages: self.stages.clone(),
            mu_history: self.mu_history.clone(),
            final_residuals: self.final_residuals.clone(),
            classification: self.classification.clone(),
        }
    }

    pub fn final_mus(&self) -> Vec<Option<f64>> {
        self.mu_history.iter().map(|h| h.last().map(|r| r.mu)).collect()
    }
}

/// Factor `i` is an outlier iff its squared whitened residual exceeds the
/// 0.95 chi-square quantile of its dimension.
pub fn classify<P: RobustProblem>(problem: &P, residuals: &[f64]) -> Result<Vec<Classification>> {
    let mut thresholds = BTreeMap::new();
    residuals
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let dim = problem.factor_dim(i);
            let t = match thresholds.get(&dim) {
                Some(t) => *t,
                None => {
                    let t = chi2_quantile(CLASSIFICATION_LEVEL, dim)?;
                    thresholds.insert(dim, t);
                    t
                }
            };
            Ok(if r * r > t {
                Classification::Outlier
            } else {
                Classification::Inlier
            })
        })
        .collect()
}

/// Graduated non-convexity with the configured schedule.
pub fn gnc_optimize<P: RobustProblem>(problem: &P, cfg: &SolverConfig, kcfg: &KernelConfig) -> Result<GncResult<P>> {
    gnc_optimize_observed(problem, cfg, kcfg, |_, _, _| {})
}

/// As [`gnc_optimize`], calling `observe(stage, solution, mus)` after every
/// outer iteration with the control values that stage used.
pub fn gnc_optimize_observed<P, F>(problem: &P, cfg: &SolverConfig, kcfg: &KernelConfig, observe: F) -> Result<GncResult<P>>
where
    P: RobustProblem,
    F: FnMut(&StageReport, &P, &[f64]),
{
    cfg.validate()?;
    kcfg.validate()?;
    match cfg.schedule_kind {
        ScheduleKind::Efficient => efficient(problem, cfg, kcfg, observe),
        ScheduleKind::Baseline => baseline(problem, cfg, kcfg, observe),
    }
}

fn efficient<P, F>(problem: &P, cfg: &SolverConfig, kcfg: &KernelConfig, mut observe: F) -> Result<GncResult<P>>
where
    P: RobustProblem,
    F: FnMut(&StageReport, &P, &[f64]),
{
    let n = problem.num_factors();
    let robust: Vec<usize> = (0..n).filter(|&i| cfg.is_robust(problem, i)).collect();
    let mut gates = BTreeMap::new();
    for &i in &robust {
        let dim = problem.factor_dim(i);
        if let std::collections::btree_map::Entry::Vacant(e) = gates.entry(dim) {
            e.insert(ChiSquareGate::strong_outlier(dim)?);
        }
    }
    let mut states: Vec<FactorScheduleState> = robust.iter().map(|&i| FactorScheduleState::new(i)).collect();
    let mut mus = vec![1.0; n];
    let mut history = vec![Vec::new(); n];
    let mut stages = Vec::new();
    let mut current = problem.clone();
    let mut residuals = current.residual_norms()?;
    let mut inner_total = 0;
    let mut outer = 0;

    loop {
        outer += 1;
        for state in states.iter_mut() {
            let i = state.factor_id;
            let gate = &gates[&problem.factor_dim(i)];
            let (next, assignment) = assign_mu(*state, residuals[i], gate, kcfg)?;
            *state = next;
            mus[i] = assignment.mu;
            history[i].push(MuRecord {
                outer_iteration: outer,
                mu: assignment.mu,
                source: assignment.source,
            });
        }
        let inner = optimize_inner(&current, &mus, cfg, kcfg)?;
        inner_total += inner.iterations;
        current = inner.problem;
        residuals = inner.residuals;
        for state in states.iter_mut() {
            let i = state.factor_id;
            mark_strong_outlier(state, residuals[i], &gates[&problem.factor_dim(i)]);
        }
        let strong = states.iter().filter(|s| s.is_strong_outlier()).count();
        stages.push(StageReport {
            outer_iteration: outer,
            inner_iterations: inner.iterations,
            cost_before: inner.cost_trace[0],
            cost_after: *inner.cost_trace.last().unwrap_or(&0.0),
            strong_outliers: strong,
        });
        info!(
            "efficient stage {outer}: {} inner iterations, cost {:.6e}, {strong} strong outliers",
            inner.iterations,
            stages.last().map_or(0.0, |s| s.cost_after)
        );
        if let Some(stage) = stages.last() {
            observe(stage, &current, &mus);
        }
        if converged(&states, kcfg.mu_tol) {
            break;
        }
    }
    finish(ScheduleKind::Efficient, current, residuals, history, outer, inner_total, stages)
}

fn baseline<P, F>(problem: &P, cfg: &SolverConfig, kcfg: &KernelConfig, mut observe: F) -> Result<GncResult<P>>
where
    P: RobustProblem,
    F: FnMut(&StageReport, &P, &[f64]),
{
    let n = problem.num_factors();
    let robust: Vec<bool> = (0..n).map(|i| cfg.is_robust(problem, i)).collect();
    let mut history = vec![Vec::new(); n];
    let mut stages = Vec::new();
    let mut current = problem.clone();
    let mut residuals = current.residual_norms()?;
    let mut inner_total = 0;
    let mut outer = 0;
    for mu in baseline_ramp(0.0)? {
        outer += 1;
        for (i, h) in history.iter_mut().enumerate() {
            if robust[i] {
                h.push(MuRecord {
                    outer_iteration: outer,
                    mu,
                    source: MuSource::Global,
                });
            }
        }
        let mus = vec![mu; n];
        let inner = optimize_inner(&current, &mus, cfg, kcfg)?;
        inner_total += inner.iterations;
        current = inner.problem;
        residuals = inner.residuals;
        stages.push(StageReport {
            outer_iteration: outer,
            inner_iterations: inner.iterations,
            cost_before: inner.cost_trace[0],
            cost_after: *inner.cost_trace.last().unwrap_or(&0.0),
            strong_outliers: 0,
        });
        info!("baseline stage {outer} (mu = {mu}): {} inner iterations", inner.iterations);
        if let Some(stage) = stages.last() {
            observe(stage, &current, &mus);
        }
    }
    finish(ScheduleKind::Baseline, current, residuals, history, outer, inner_total, stages)
}

fn finish<P: RobustProblem>(
    schedule: ScheduleKind,
    solution: P,
    residuals: Vec<f64>,
    mu_history: Vec<Vec<MuRecord>>,
    outer_iterations: usize,
    inner_iterations_total: usize,
    stages: Vec<StageReport>,
) -> Result<GncResult<P>> {
    let classification = classify(&solution, &residuals)?;
    Ok(GncResult {
        schedule,
        solution,
        mu_history,
        outer_iterations,
        inner_iterations_total,
        stages,
        final_residuals: residuals,
        classification,
    })
}

/// Pose graph with the anchor vertex held fixed.
#[derive(Debug, Clone)]
pub struct PgoProblem {
    graph: PoseGraph,
    block_ids: Vec<VertexId>,
    block_of: BTreeMap<VertexId, usize>,
}

impl PgoProblem {
    pub fn new(graph: PoseGraph) -> Result<Self> {
        graph.validate()?;
        let anchor = graph.anchor_id();
        let block_ids: Vec<VertexId> = graph.vertices().keys().copied().filter(|id| Some(*id) != anchor).collect();
        let block_of = block_ids.iter().enumerate().map(|(b, id)| (*id, b)).collect();
        Ok(Self {
            graph,
            block_ids,
            block_of,
        })
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn into_graph(self) -> PoseGraph {
        self.graph
    }
}

impl RobustProblem for PgoProblem {
    fn block_dims(&self) -> Vec<usize> {
        self.block_ids.iter().map(|id| self.graph.vertices()[id].dof()).collect()
    }

    fn num_factors(&self) -> usize {
        self.graph.factors().len()
    }

    fn factor_dim(&self, factor: usize) -> usize {
        self.graph.factors()[factor].dim()
    }

    fn is_loop(&self, factor: usize) -> bool {
        self.graph.factors()[factor].is_loop()
    }

    fn residual(&self, factor: usize) -> Result<DVector<f64>> {
        self.graph.factor_residual(factor)
    }

    fn linearize(&self, factor: usize) -> Result<Linearization> {
        let f = &self.graph.factors()[factor];
        let lin = self.graph.linearize_factor(factor)?;
        let mut jac = Vec::with_capacity(2);
        if let Some(&b) = self.block_of.get(&f.from) {
            jac.push((b, lin.j_from));
        }
        if let Some(&b) = self.block_of.get(&f.to) {
            jac.push((b, lin.j_to));
        }
        Ok((lin.residual, jac))
    }

    fn retract(&self, delta: &DVector<f64>) -> Result<Self> {
        let mut next = self.clone();
        let mut offset = 0;
        for id in &self.block_ids {
            let pose = next
                .graph
                .vertex_mut(*id)
                .ok_or_else(|| Error::Integrity(format!("missing vertex {id}")))?;
            let d = pose.dof();
            *pose = pose.retract(&delta.as_slice()[offset..offset + d])?;
            offset += d;
        }
        Ok(next)
    }
}

/// Scalar slope fit `y = a x` with one residual `(y_i - a x_i) / sigma` per
/// data point. Every point is an outlier candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFitProblem {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub sigma: f64,
    pub slope: f64,
}

impl LineFitProblem {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, sigma: f64, slope: f64) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Contract(format!("{} abscissae but {} ordinates", xs.len(), ys.len())));
        }
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self { xs, ys, sigma, slope })
    }
}

impl RobustProblem for LineFitProblem {
    fn block_dims(&self) -> Vec<usize> {
        vec![1]
    }

    fn num_factors(&self) -> usize {
        self.xs.len()
    }

    fn factor_dim(&self, _factor: usize) -> usize {
        1
    }

    fn is_loop(&self, _factor: usize) -> bool {
        true
    }

    fn residual(&self, i: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, (self.ys[i] - self.slope * self.xs[i]) / self.sigma))
    }

    fn linearize(&self, i: usize) -> Result<Linearization> {
        let j = DMatrix::from_element(1, 1, -self.xs[i] / self.sigma);
        Ok((self.residual(i)?, vec![(0, j)]))
    }

    fn retract(&self, delta: &DVector<f64>) -> Result<Self> {
        Ok(Self {
            slope: self.slope + delta[0],
            ..self.clone()
        })
    }
}
