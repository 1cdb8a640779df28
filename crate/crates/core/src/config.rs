//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted
//! names such as `kernel.c` or `solver.max_inner_iters`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::solver::{ScheduleKind, SolverConfig};

/// Parsed key-value pairs with the line each key came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let (key, value) = raw.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected 'key = value', got '{raw}'"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line: *line,
                message: format!("invalid value '{v}' for '{key}'"),
            }),
        }
    }

    /// Comma-separated list of reals.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| Error::Parse {
                        line: *line,
                        message: format!("invalid number '{}' in '{key}'", s.trim()),
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn expect_only(&self, allowed: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unknown key '{key}'"),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn format_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

/// Kernel and solver settings for one optimization run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub kernel: KernelConfig,
    pub solver: SolverConfig,
}

const RUN_KEYS: &[&str] = &[
    "kernel.c",
    "kernel.mu_tol",
    "kernel.d2_tol",
    "kernel.max_bisect_iters",
    "solver.max_inner_iters",
    "solver.rel_cost_tol",
    "solver.abs_grad_tol",
    "solver.lm_lambda_init",
    "solver.lm_lambda_factor",
    "solver.schedule",
    "solver.robust_on_odometry",
];

impl RunConfig {
    /// Missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.expect_only(RUN_KEYS)?;
        let mut cfg = Self::default();
        let k = &mut cfg.kernel;
        k.c = kv.get("kernel.c")?.unwrap_or(k.c);
        k.mu_tol = kv.get("kernel.mu_tol")?.unwrap_or(k.mu_tol);
        k.d2_tol = kv.get("kernel.d2_tol")?.unwrap_or(k.d2_tol);
        k.max_bisect_iters = kv.get("kernel.max_bisect_iters")?.unwrap_or(k.max_bisect_iters);
        let s = &mut cfg.solver;
        s.max_inner_iters = kv.get("solver.max_inner_iters")?.unwrap_or(s.max_inner_iters);
        s.rel_cost_tol = kv.get("solver.rel_cost_tol")?.unwrap_or(s.rel_cost_tol);
        s.abs_grad_tol = kv.get("solver.abs_grad_tol")?.unwrap_or(s.abs_grad_tol);
        s.lm_lambda_init = kv.get("solver.lm_lambda_init")?.unwrap_or(s.lm_lambda_init);
        s.lm_lambda_factor = kv.get("solver.lm_lambda_factor")?.unwrap_or(s.lm_lambda_factor);
        s.schedule_kind = kv.get::<ScheduleKind>("solver.schedule")?.unwrap_or(s.schedule_kind);
        s.robust_on_odometry = kv.get("solver.robust_on_odometry")?.unwrap_or(s.robust_on_odometry);
        cfg.kernel.validate()?;
        cfg.solver.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let k = &self.kernel;
        let s = &self.solver;
        let _ = writeln!(out, "kernel.c = {:?}", k.c);
        let _ = writeln!(out, "kernel.mu_tol = {:?}", k.mu_tol);
        let _ = writeln!(out, "kernel.d2_tol = {:?}", k.d2_tol);
        let _ = writeln!(out, "kernel.max_bisect_iters = {}", k.max_bisect_iters);
        let _ = writeln!(out, "solver.max_inner_iters = {}", s.max_inner_iters);
        let _ = writeln!(out, "solver.rel_cost_tol = {:?}", s.rel_cost_tol);
        let _ = writeln!(out, "solver.abs_grad_tol = {:?}", s.abs_grad_tol);
        let _ = writeln!(out, "solver.lm_lambda_init = {:?}", s.lm_lambda_init);
        let _ = writeln!(out, "solver.lm_lambda_factor = {:?}", s.lm_lambda_factor);
        let _ = writeln!(out, "solver.schedule = {}", s.schedule_kind);
        let _ = writeln!(out, "solver.robust_on_odometry = {}", s.robust_on_odometry);
        out
    }
}
