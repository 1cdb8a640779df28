//! Per-factor efficient GNC schedule.
//!
//! Every robust factor walks through at most three control values:
//! `0` (convex surrogate), `mu*` (its convexity boundary at the current
//! residual) and `1` (the full robust kernel). Factors whose residual exceeds
//! the chi-square gate skip the boundary stage, and once flagged as strong
//! outliers they are pinned to `mu = 1` for the rest of the run.

use log::debug;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::kernel::{find_mu_star, KernelConfig};

/// Quantile level of the strong-outlier gate.
pub const STRONG_OUTLIER_LEVEL: f64 = 0.9;

/// Restart marker for factors flagged as strong outliers.
pub const STRONG_OUTLIER_STEP: u32 = 2;

/// Quantile of the chi-square distribution with `dim` degrees of freedom.
pub fn chi2_quantile(p: f64, dim: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {p}")));
    }
    if dim == 0 {
        return Err(Error::Domain("chi-square dimension must be >= 1".into()));
    }
    let dist = ChiSquared::new(dim as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.inverse_cdf(p))
}

/// Mahalanobis gate on squared whitened residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareGate {
    pub p: f64,
    pub dim: usize,
    /// Cached quantile, on the squared-norm scale.
    pub threshold: f64,
}

impl ChiSquareGate {
    pub fn new(p: f64, dim: usize) -> Result<Self> {
        Ok(Self {
            p,
            dim,
            threshold: chi2_quantile(p, dim)?,
        })
    }

    pub fn strong_outlier(dim: usize) -> Result<Self> {
        Self::new(STRONG_OUTLIER_LEVEL, dim)
    }

    /// `r^2 < threshold` for a whitened residual norm `r`.
    pub fn admits(&self, r: f64) -> bool {
        r * r < self.threshold
    }

    /// `r^2 > threshold` for a whitened residual norm `r`.
    pub fn exceeds(&self, r: f64) -> bool {
        r * r > self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorScheduleState {
    pub factor_id: usize,
    pub mu: f64,
    pub step: u32,
    /// `STRONG_OUTLIER_STEP` once the factor has been flagged, else 0.
    pub init_step: u32,
}

impl FactorScheduleState {
    pub fn new(factor_id: usize) -> Self {
        Self {
            factor_id,
            mu: 0.0,
            step: 0,
            init_step: 0,
        }
    }

    pub fn is_strong_outlier(&self) -> bool {
        self.init_step == STRONG_OUTLIER_STEP
    }
}

/// Which branch of the schedule produced a control value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSource {
    /// First stage, convex surrogate.
    Convex,
    /// Convexity boundary of the current residual.
    Boundary,
    /// Full robust kernel.
    Full,
    /// Shared control value of the heuristic ramp.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuAssignment {
    pub mu: f64,
    pub source: MuSource,
}

/// Advances one factor by one schedule stage given its current whitened
/// residual norm.
pub fn assign_mu(
    state: FactorScheduleState,
    r: f64,
    gate: &ChiSquareGate,
    cfg: &KernelConfig,
) -> Result<(FactorScheduleState, MuAssignment)> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::Domain(format!("residual norm must be finite and >= 0, got {r}")));
    }
    let mut next = state;
    if next.init_step == STRONG_OUTLIER_STEP {
        next.step = next.step.max(STRONG_OUTLIER_STEP);
    }
    let assignment = match next.step {
        0 => MuAssignment {
            mu: 0.0,
            source: MuSource::Convex,
        },
        1 if gate.admits(r) => MuAssignment {
            mu: find_mu_star(r, cfg)?.mu.min(1.0),
            source: MuSource::Boundary,
        },
        _ => MuAssignment {
            mu: 1.0,
            source: MuSource::Full,
        },
    };
    next.step += 1;
    next.mu = assignment.mu;
    Ok((next, assignment))
}

/// Flags a single factor as a strong outlier when its residual exceeds the gate.
pub fn mark_strong_outlier(state: &mut FactorScheduleState, r: f64, gate: &ChiSquareGate) {
    if gate.exceeds(r) {
        state.init_step = STRONG_OUTLIER_STEP;
    }
}

pub fn mark_strong_outliers(
    states: &[FactorScheduleState],
    residuals: &[f64],
    gate: &ChiSquareGate,
) -> Result<Vec<FactorScheduleState>> {
    if states.len() != residuals.len() {
        return Err(Error::Contract(format!(
            "{} schedule states but {} residuals",
            states.len(),
            residuals.len()
        )));
    }
    Ok(states
        .iter()
        .zip(residuals)
        .map(|(s, &r)| {
            let mut s = *s;
            mark_strong_outlier(&mut s, r, gate);
            s
        })
        .collect())
}

/// True when every factor has reached `mu = 1` within `mu_tol`.
pub fn converged(states: &[FactorScheduleState], mu_tol: f64) -> bool {
    if states.is_empty() {
        debug!("convergence check on an empty factor set");
        return true;
    }
    states.iter().all(|s| s.mu >= 1.0 - mu_tol)
}
