//! g2o text format (`VERTEX_SE2`, `EDGE_SE2`, `VERTEX_SE3:QUAT`, `EDGE_SE3:QUAT`).

use std::fmt::Write as _;

use log::warn;
use nalgebra::DMatrix;

use super::{Factor, Pose, Pose2, Pose3, PoseGraph, VertexId};
use crate::error::{Error, Result};

struct Fields<'a> {
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn id(&mut self) -> Result<VertexId> {
        let tok = self.next_token()?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("invalid vertex id '{tok}'"),
        })
    }

    fn float(&mut self) -> Result<f64> {
        let tok = self.next_token()?;
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse {
                line: self.line,
                message: format!("invalid number '{tok}'"),
            }),
        }
    }

    fn floats<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.float()?;
        }
        Ok(out)
    }

    fn next_token(&mut self) -> Result<&'a str> {
        self.tokens.next().ok_or_else(|| Error::Parse {
            line: self.line,
            message: "missing field".into(),
        })
    }
}

fn upper_triangular(n: usize, values: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = values[k];
            m[(j, i)] = values[k];
            k += 1;
        }
    }
    m
}

/// Parses a g2o document. Unknown tags are skipped with a warning.
pub fn parse_g2o(text: &str) -> Result<PoseGraph> {
    let mut graph = PoseGraph::new();
    let mut pending = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut tokens = raw.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        if tag.starts_with('#') {
            continue;
        }
        let mut f = Fields { line, tokens };
        match tag {
            "VERTEX_SE2" => {
                let id = f.id()?;
                let [x, y, t] = f.floats::<3>()?;
                graph.add_vertex(id, Pose::Se2(Pose2::new(x, y, t)));
            }
            "VERTEX_SE3:QUAT" => {
                let id = f.id()?;
                let [x, y, z, qx, qy, qz, qw] = f.floats::<7>()?;
                graph.add_vertex(id, Pose::Se3(Pose3::from_parts([x, y, z], qw, qx, qy, qz)));
            }
            "EDGE_SE2" => {
                let (from, to) = (f.id()?, f.id()?);
                let [x, y, t] = f.floats::<3>()?;
                let info = f.floats::<6>()?;
                pending.push((line, from, to, Pose::Se2(Pose2::new(x, y, t)), upper_triangular(3, &info)));
            }
            "EDGE_SE3:QUAT" => {
                let (from, to) = (f.id()?, f.id()?);
                let [x, y, z, qx, qy, qz, qw] = f.floats::<7>()?;
                let info = f.floats::<21>()?;
                pending.push((
                    line,
                    from,
                    to,
                    Pose::Se3(Pose3::from_parts([x, y, z], qw, qx, qy, qz)),
                    upper_triangular(6, &info),
                ));
            }
            other => warn!("line {line}: skipping unsupported tag {other}"),
        }
    }
    // Edges may precede the vertices they reference in some files.
    for (line, from, to, meas, info) in pending {
        let factor = Factor::new(Factor::kind_from_ids(from, to), from, to, meas, info).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("line {line}: {m}")),
            other => other,
        })?;
        graph.add_factor(factor).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("line {line}: {m}")),
            other => other,
        })?;
    }
    Ok(graph)
}

fn num(out: &mut String, v: f64) {
    let _ = write!(out, " {v:.16e}");
}

fn write_pose(out: &mut String, pose: &Pose) {
    match pose {
        Pose::Se2(p) => {
            num(out, p.x);
            num(out, p.y);
            num(out, p.theta);
        }
        Pose::Se3(p) => {
            for v in p.translation.iter() {
                num(out, *v);
            }
            let q = p.rotation.quaternion();
            for v in [q.i, q.j, q.k, q.w] {
                num(out, v);
            }
        }
    }
}

/// Vertices in ascending id order, then factors in stored order.
pub fn serialize_g2o(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for (id, pose) in graph.vertices() {
        let tag = match pose {
            Pose::Se2(_) => "VERTEX_SE2",
            Pose::Se3(_) => "VERTEX_SE3:QUAT",
        };
        let _ = write!(out, "{tag} {id}");
        write_pose(&mut out, pose);
        out.push('\n');
    }
    for f in graph.factors() {
        let tag = match f.measurement {
            Pose::Se2(_) => "EDGE_SE2",
            Pose::Se3(_) => "EDGE_SE3:QUAT",
        };
        let _ = write!(out, "{tag} {} {}", f.from, f.to);
        write_pose(&mut out, &f.measurement);
        let info = f.information();
        let n = info.nrows();
        for i in 0..n {
            for j in i..n {
                num(&mut out, info[(i, j)]);
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posegraph::FactorKind;

    #[test]
    fn minimal_file() {
        let g = parse_g2o("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1").unwrap();
        assert_eq!(g.num_vertices(), 2);
        assert_eq!(g.factors().len(), 1);
        assert_eq!(g.factors()[0].kind, FactorKind::Odometry);
        assert_eq!(g.factors()[0].information(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn empty_stream() {
        let g = parse_g2o("").unwrap();
        assert_eq!(g.num_vertices(), 0);
        assert!(g.factors().is_empty());
    }

    #[test]
    fn loop_kind_and_unknown_tags() {
        let text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nVERTEX_SE2 2 2 0 0\nFIX 0\nEDGE_SE2 0 2 2 0 0 1 0 0 1 0 1\n";
        let g = parse_g2o(text).unwrap();
        assert_eq!(g.factors()[0].kind, FactorKind::LoopClosure);
    }

    #[test]
    fn malformed_number_reports_line() {
        let err = parse_g2o("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 abc 0\n").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                line: 2,
                message: "invalid number 'abc'".into()
            }
        );
        assert!(matches!(parse_g2o("VERTEX_SE2 0 0 0\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_vertex_is_integrity_error() {
        let err = parse_g2o("VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn single_vertex_serializes_to_one_line() {
        let g = parse_g2o("VERTEX_SE2 4 1.5 2 0.1").unwrap();
        let s = serialize_g2o(&g);
        assert_eq!(s.lines().count(), 1);
        assert!(s.starts_with("VERTEX_SE2 4 "));
    }

    #[test]
    fn se3_edge_has_21_information_entries() {
        let mut info = String::new();
        for i in 0..6 {
            for j in i..6 {
                info.push_str(if i == j { " 1" } else { " 0" });
            }
        }
        let text = format!(
            "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 5 1 0 0 0 0 0 1\nEDGE_SE3:QUAT 0 5 1 0 0 0 0 0 1{info}\n"
        );
        let g = parse_g2o(&text).unwrap();
        assert_eq!(g.factors()[0].kind, FactorKind::LoopClosure);
        let s = serialize_g2o(&g);
        let edge = s.lines().find(|l| l.starts_with("EDGE_SE3:QUAT")).unwrap();
        assert_eq!(edge.split_whitespace().count(), 3 + 7 + 21);
    }
}
