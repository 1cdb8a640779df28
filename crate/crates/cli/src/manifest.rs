//! Run manifests: everything needed to re-execute a command.

use serde::{Deserialize, Serialize};

use pgo_core::{CorruptionSpec, GridWorldSpec, RunConfig, ScheduleKind};

/// A command together with its resolved parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Optimize {
        graph: String,
        labels: Option<String>,
        config: RunConfig,
    },
    Corrupt {
        graph: String,
        spec: CorruptionSpec,
    },
    Eval {
        run: String,
        labels: String,
        gt: Option<String>,
    },
    Demo {
        seed: u64,
        points: usize,
    },
    Synth {
        spec: GridWorldSpec,
    },
}

impl Invocation {
    /// Evaluation writes next to an optimize run, so its manifest gets its
    /// own name.
    pub fn manifest_name(&self) -> &'static str {
        match self {
            Invocation::Eval { .. } => "eval_manifest.json",
            _ => "manifest.json",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Corrupt { spec, .. } => Some(spec.seed),
            Invocation::Demo { seed, .. } => Some(*seed),
            Invocation::Synth { spec } => Some(spec.seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub schedule: ScheduleKind,
    pub outer: usize,
    pub inner: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub invocation: Invocation,
    pub seed: Option<u64>,
    pub out_dir: String,
    /// File names written into `out_dir`, the manifest last.
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub iterations: Vec<IterationCounts>,
}
