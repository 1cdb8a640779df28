//! Pose-graph data model: SE(2)/SE(3) vertices, relative-pose factors,
//! whitened residuals and their Jacobians.

pub mod g2o;
pub mod io;
pub mod lie;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use lie::{normalize_angle, se_compose, se_exp, se_inverse, se_log, se_retract, LieGroup, Pose2, Pose3};

pub type VertexId = u64;

/// A vertex pose in either SE(2) or SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pose {
    Se2(Pose2),
    Se3(Pose3),
}

impl Pose {
    /// Tangent-space dimension.
    pub fn dof(&self) -> usize {
        match self {
            Pose::Se2(_) => 3,
            Pose::Se3(_) => 6,
        }
    }

    pub fn identity_like(&self) -> Pose {
        match self {
            Pose::Se2(_) => Pose::Se2(Pose2::identity()),
            Pose::Se3(_) => Pose::Se3(Pose3::identity()),
        }
    }

    /// Position as a 3-vector (`z = 0` in the plane).
    pub fn position(&self) -> [f64; 3] {
        match self {
            Pose::Se2(p) => [p.x, p.y, 0.0],
            Pose::Se3(p) => [p.translation.x, p.translation.y, p.translation.z],
        }
    }

    pub fn compose(&self, other: &Pose) -> Result<Pose> {
        match (self, other) {
            (Pose::Se2(a), Pose::Se2(b)) => Ok(Pose::Se2(a.compose(b))),
            (Pose::Se3(a), Pose::Se3(b)) => Ok(Pose::Se3(a.compose(b))),
            _ => Err(mixed()),
        }
    }

    pub fn inverse(&self) -> Pose {
        match self {
            Pose::Se2(a) => Pose::Se2(a.inverse()),
            Pose::Se3(a) => Pose::Se3(a.inverse()),
        }
    }

    pub fn log(&self) -> DVector<f64> {
        match self {
            Pose::Se2(a) => DVector::from_column_slice(a.log().as_slice()),
            Pose::Se3(a) => DVector::from_column_slice(a.log().as_slice()),
        }
    }

    /// `self * exp(v)`; `v` must match the pose's dimension.
    pub fn retract(&self, v: &[f64]) -> Result<Pose> {
        if v.len() != self.dof() {
            return Err(Error::Contract(format!(
                "tangent of length {} applied to a {}-dof pose",
                v.len(),
                self.dof()
            )));
        }
        Ok(match self {
            Pose::Se2(a) => Pose::Se2(a.retract(&SVector::<f64, 3>::from_column_slice(v))),
            Pose::Se3(a) => Pose::Se3(a.retract(&SVector::<f64, 6>::from_column_slice(v))),
        })
    }
}

fn mixed() -> Error {
    Error::Integrity("factor mixes SE(2) and SE(3) poses".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Odometry,
    LoopClosure,
}

/// Relative-pose measurement between two vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub from: VertexId,
    pub to: VertexId,
    pub measurement: Pose,
    information: DMatrix<f64>,
    /// Transposed Cholesky factor of the information, `info = L L^T`.
    whitener: DMatrix<f64>,
    /// Ground-truth outlier label, when known.
    pub is_true_outlier: Option<bool>,
}

impl Factor {
    pub fn new(kind: FactorKind, from: VertexId, to: VertexId, measurement: Pose, information: DMatrix<f64>) -> Result<Self> {
        if from == to {
            return Err(Error::Integrity(format!("factor connects vertex {from} to itself")));
        }
        let n = measurement.dof();
        if information.shape() != (n, n) {
            return Err(Error::Integrity(format!(
                "information matrix is {}x{}, expected {n}x{n}",
                information.nrows(),
                information.ncols()
            )));
        }
        let asym = (&information - information.transpose()).amax();
        if !(asym <= 1e-9 * information.amax().max(1.0)) {
            return Err(Error::Integrity(format!("information matrix is not symmetric (max asymmetry {asym:e})")));
        }
        let chol = Cholesky::new(information.clone())
            .ok_or_else(|| Error::Integrity("information matrix is not positive definite".into()))?;
        let whitener = chol.l().transpose();
        Ok(Self {
            kind,
            from,
            to,
            measurement,
            information,
            whitener,
            is_true_outlier: None,
        })
    }

    /// Factor kind implied by id adjacency.
    pub fn kind_from_ids(from: VertexId, to: VertexId) -> FactorKind {
        if from.abs_diff(to) == 1 {
            FactorKind::Odometry
        } else {
            FactorKind::LoopClosure
        }
    }

    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    pub fn dim(&self) -> usize {
        self.measurement.dof()
    }

    pub fn is_loop(&self) -> bool {
        self.kind == FactorKind::LoopClosure
    }

    /// Unwhitened error `log(Z^-1 Xi^-1 Xj)`.
    pub fn error(&self, from: &Pose, to: &Pose) -> Result<DVector<f64>> {
        let rel = from.inverse().compose(to)?;
        Ok(self.measurement.inverse().compose(&rel)?.log())
    }

    /// Whitened residual `L^T e`.
    pub fn whitened(&self, from: &Pose, to: &Pose) -> Result<DVector<f64>> {
        Ok(&self.whitener * self.error(from, to)?)
    }

    /// Whitened residual and its Jacobians with respect to right
    /// perturbations of the `from` and `to` poses.
    pub fn linearize(&self, from: &Pose, to: &Pose) -> Result<Linearization> {
        let (e, j_from, j_to) = match (&self.measurement, from, to) {
            (Pose::Se2(z), Pose::Se2(a), Pose::Se2(b)) => raw_jacobians::<Pose2, 3>(z, a, b),
            (Pose::Se3(z), Pose::Se3(a), Pose::Se3(b)) => raw_jacobians::<Pose3, 6>(z, a, b),
            _ => return Err(mixed()),
        };
        Ok(Linearization {
            residual: &self.whitener * e,
            j_from: &self.whitener * j_from,
            j_to: &self.whitener * j_to,
        })
    }
}

fn raw_jacobians<G: LieGroup<N>, const N: usize>(z: &G, a: &G, b: &G) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let err_pose = z.inverse().compose(&a.between(b));
    let e: SVector<f64, N> = err_pose.log();
    let j_to: SMatrix<f64, N, N> = G::right_jacobian_inv(&e);
    let j_from = -(j_to * b.between(a).adjoint());
    (
        DVector::from_column_slice(e.as_slice()),
        DMatrix::from_column_slice(N, N, j_from.as_slice()),
        DMatrix::from_column_slice(N, N, j_to.as_slice()),
    )
}

#[derive(Debug, Clone)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub j_from: DMatrix<f64>,
    pub j_to: DMatrix<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseGraph {
    vertices: BTreeMap<VertexId, Pose>,
    factors: Vec<Factor>,
    anchor: Option<VertexId>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, id: VertexId, pose: Pose) -> Option<Pose> {
        self.vertices.insert(id, pose)
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<usize> {
        for id in [factor.from, factor.to] {
            let pose = self
                .vertices
                .get(&id)
                .ok_or_else(|| Error::Integrity(format!("factor references missing vertex {id}")))?;
            if pose.dof() != factor.dim() {
                return Err(mixed());
            }
        }
        self.factors.push(factor);
        Ok(self.factors.len() - 1)
    }

    pub fn vertices(&self) -> &BTreeMap<VertexId, Pose> {
        &self.vertices
    }

    pub fn vertex(&self, id: VertexId) -> Option<&Pose> {
        self.vertices.get(&id)
    }

    pub fn vertex_mut(&mut self, id: VertexId) -> Option<&mut Pose> {
        self.vertices.get_mut(&id)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [Factor] {
        &mut self.factors
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_loops(&self) -> usize {
        self.factors.iter().filter(|f| f.is_loop()).count()
    }

    /// Gauge-fixed vertex: the explicit anchor if set, else the smallest id.
    pub fn anchor_id(&self) -> Option<VertexId> {
        self.anchor.or_else(|| self.vertices.keys().next().copied())
    }

    pub fn set_anchor(&mut self, id: VertexId) -> Result<()> {
        if !self.vertices.contains_key(&id) {
            return Err(Error::Integrity(format!("anchor {id} is not a vertex")));
        }
        self.anchor = Some(id);
        Ok(())
    }

    /// Checks vertex references and that odometry connects every vertex.
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.factors.iter().enumerate() {
            for id in [f.from, f.to] {
                let pose = self
                    .vertices
                    .get(&id)
                    .ok_or_else(|| Error::Integrity(format!("factor {i} references missing vertex {id}")))?;
                if pose.dof() != f.dim() {
                    return Err(mixed());
                }
            }
        }
        if !self.odometry_connected() {
            return Err(Error::Integrity("odometry factors do not connect all vertices".into()));
        }
        Ok(())
    }

    pub fn odometry_connected(&self) -> bool {
        let Some(start) = self.vertices.keys().next().copied() else {
            return true;
        };
        let mut adjacency: BTreeMap<VertexId, Vec<VertexId>> = BTreeMap::new();
        for f in self.factors.iter().filter(|f| f.kind == FactorKind::Odometry) {
            adjacency.entry(f.from).or_default().push(f.to);
            adjacency.entry(f.to).or_default().push(f.from);
        }
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &n in adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        seen.len() == self.vertices.len()
    }

    fn endpoints(&self, f: &Factor) -> Result<(&Pose, &Pose)> {
        let a = self
            .vertices
            .get(&f.from)
            .ok_or_else(|| Error::Integrity(format!("missing vertex {}", f.from)))?;
        let b = self
            .vertices
            .get(&f.to)
            .ok_or_else(|| Error::Integrity(format!("missing vertex {}", f.to)))?;
        Ok((a, b))
    }

    /// Whitened residual vector of one factor.
    pub fn factor_residual(&self, index: usize) -> Result<DVector<f64>> {
        let f = self
            .factors
            .get(index)
            .ok_or_else(|| Error::Contract(format!("no factor {index}")))?;
        factor_residual(f, self)
    }

    /// Whitened residual norms of all factors, in factor order.
    pub fn residual_norms(&self) -> Result<Vec<f64>> {
        self.factors.iter().map(|f| Ok(factor_residual(f, self)?.norm())).collect()
    }

    pub fn linearize_factor(&self, index: usize) -> Result<Linearization> {
        let f = &self.factors[index];
        let (a, b) = self.endpoints(f)?;
        f.linearize(a, b)
    }

    /// Ground-truth labels, `false` where unknown.
    pub fn labels(&self) -> Vec<bool> {
        self.factors.iter().map(|f| f.is_true_outlier.unwrap_or(false)).collect()
    }

    /// Applies the same rigid transform on the left of every vertex.
    pub fn transform_all(&mut self, t: &Pose) -> Result<()> {
        for pose in self.vertices.values_mut() {
            *pose = t.compose(pose)?;
        }
        Ok(())
    }

    /// Mean translation length of odometry measurements.
    pub fn mean_odometry_step(&self) -> f64 {
        let steps: Vec<f64> = self
            .factors
            .iter()
            .filter(|f| f.kind == FactorKind::Odometry)
            .map(|f| {
                let p = f.measurement.position();
                (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
            })
            .collect();
        if steps.is_empty() {
            0.0
        } else {
            steps.iter().sum::<f64>() / steps.len() as f64
        }
    }

    /// Replaces vertex poses with those of `other` for every shared id.
    pub fn with_poses_from(&self, other: &PoseGraph) -> PoseGraph {
        let mut g = self.clone();
        for (id, pose) in g.vertices.iter_mut() {
            if let Some(p) = other.vertices.get(id) {
                *pose = *p;
            }
        }
        g
    }
}

/// `L^T log(Z^-1 Xi^-1 Xj)` for factor `f` on the poses of `graph`.
pub fn factor_residual(f: &Factor, graph: &PoseGraph) -> Result<DVector<f64>> {
    let (a, b) = graph.endpoints(f)?;
    f.whitened(a, b)
}
