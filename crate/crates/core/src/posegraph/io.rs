//! Sidecar outlier labels and trajectory CSV.
//!
//! Label lines are `<factor_index> <0|1>` with an optional third column
//! `odometry` or `loop` that overrides the kind inferred from vertex ids.

use std::fmt::Write as _;

use super::{FactorKind, Pose, Pose2, Pose3, PoseGraph, VertexId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelEntry {
    pub factor_index: usize,
    pub is_outlier: bool,
    pub kind: Option<FactorKind>,
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelEntry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = raw.split_whitespace().collect();
        let bad = |message: String| Error::Parse { line, message };
        if parts.len() < 2 || parts.len() > 3 {
            return Err(bad(format!("expected '<index> <0|1> [kind]', got '{raw}'")));
        }
        let factor_index = parts[0]
            .parse()
            .map_err(|_| bad(format!("invalid factor index '{}'", parts[0])))?;
        let is_outlier = match parts[1] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("label must be 0 or 1, got '{other}'"))),
        };
        let kind = match parts.get(2) {
            None => None,
            Some(&"odometry") => Some(FactorKind::Odometry),
            Some(&"loop") => Some(FactorKind::LoopClosure),
            Some(other) => return Err(bad(format!("unknown factor kind '{other}'"))),
        };
        out.push(LabelEntry {
            factor_index,
            is_outlier,
            kind,
        });
    }
    Ok(out)
}

pub fn apply_labels(graph: &mut PoseGraph, labels: &[LabelEntry]) -> Result<()> {
    let n = graph.factors().len();
    for l in labels {
        let f = graph
            .factors_mut()
            .get_mut(l.factor_index)
            .ok_or_else(|| Error::Contract(format!("label for factor {} but graph has {n} factors", l.factor_index)))?;
        f.is_true_outlier = Some(l.is_outlier);
        if let Some(kind) = l.kind {
            f.kind = kind;
        }
    }
    Ok(())
}

/// One line per factor, in factor order.
pub fn write_labels(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for (i, f) in graph.factors().iter().enumerate() {
        let _ = writeln!(out, "{i} {}", u8::from(f.is_true_outlier.unwrap_or(false)));
    }
    out
}

/// Vertex trajectory in id order.
pub type Trajectory = Vec<(VertexId, Pose)>;

pub fn trajectory(graph: &PoseGraph) -> Trajectory {
    graph.vertices().iter().map(|(id, p)| (*id, *p)).collect()
}

pub fn write_trajectory_csv(traj: &[(VertexId, Pose)]) -> String {
    let planar = traj.first().is_none_or(|(_, p)| matches!(p, Pose::Se2(_)));
    let mut out = String::from(if planar { "id,x,y,theta\n" } else { "id,x,y,z,qw,qx,qy,qz\n" });
    for (id, pose) in traj {
        match pose {
            Pose::Se2(p) => {
                let _ = writeln!(out, "{id},{:.16e},{:.16e},{:.16e}", p.x, p.y, p.theta);
            }
            Pose::Se3(p) => {
                let q = p.rotation.quaternion();
                let t = p.translation;
                let _ = writeln!(
                    out,
                    "{id},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    t.x, t.y, t.z, q.w, q.i, q.j, q.k
                );
            }
        }
    }
    out
}

pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols = header.split(',').count();
    if cols != 4 && cols != 8 {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected trajectory header '{header}'"),
        });
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = raw.split(',').collect();
        if parts.len() != cols {
            return Err(Error::Parse {
                line,
                message: format!("expected {cols} columns, got {}", parts.len()),
            });
        }
        let id: VertexId = parts[0].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid id '{}'", parts[0]),
        })?;
        let vals = parts[1..]
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid number '{s}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let pose = if cols == 4 {
            Pose::Se2(Pose2::new(vals[0], vals[1], vals[2]))
        } else {
            Pose::Se3(Pose3::from_parts([vals[0], vals[1], vals[2]], vals[3], vals[4], vals[5], vals[6]))
        };
        out.push((id, pose));
    }
    Ok(out)
}
