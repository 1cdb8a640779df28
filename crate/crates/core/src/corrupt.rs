//! Seeded dataset generators: false-loop injection, Gaussian perturbation of
//! measurements, and a synthetic Manhattan-world SE(2) pose graph.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;
use std::fmt::Write as _;

use log::warn;
use nalgebra::{DMatrix, Quaternion, UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{format_list, KeyValues};
use crate::error::{Error, Result};
use crate::posegraph::{Factor, FactorKind, Pose, Pose2, Pose3, PoseGraph, VertexId};
use crate::schedule::chi2_quantile;
use crate::solver::CLASSIFICATION_LEVEL;

const MAX_REJECTIONS: usize = 10_000;
/// Injected translations are drawn within this many mean odometry steps.
const FALSE_LOOP_RADIUS_STEPS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    FalseLoops,
    NoisyPerturbation,
}

impl std::str::FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "false_loops" => Ok(Self::FalseLoops),
            "noisy_perturbation" => Ok(Self::NoisyPerturbation),
            other => Err(Error::Domain(format!("unknown corruption mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FalseLoops => "false_loops",
            Self::NoisyPerturbation => "noisy_perturbation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub seed: u64,
    pub mode: CorruptionMode,
    pub outlier_ratio: f64,
    /// Per-DOF standard deviations, translation first.
    pub odom_sigma: Vec<f64>,
    pub loop_sigma: Vec<f64>,
    /// Minimum vertex-id separation of injected false loops.
    pub min_id_gap: u64,
}

impl CorruptionSpec {
    pub const DEFAULT_ODOM_SIGMA: [f64; 3] = [0.05, 0.05, 0.01];
    pub const DEFAULT_LOOP_SIGMA: [f64; 3] = [1.0, 1.0, 0.5];
    pub const DEFAULT_MIN_ID_GAP: u64 = 50;

    pub fn new(mode: CorruptionMode, outlier_ratio: f64, seed: u64) -> Self {
        Self {
            seed,
            mode,
            outlier_ratio,
            odom_sigma: Self::DEFAULT_ODOM_SIGMA.to_vec(),
            loop_sigma: Self::DEFAULT_LOOP_SIGMA.to_vec(),
            min_id_gap: Self::DEFAULT_MIN_ID_GAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.outlier_ratio) {
            return Err(Error::Domain(format!("outlier_ratio must lie in [0, 1], got {}", self.outlier_ratio)));
        }
        for (name, sig) in [("odom_sigma", &self.odom_sigma), ("loop_sigma", &self.loop_sigma)] {
            if let Some(bad) = sig.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                return Err(Error::Domain(format!("{name} entries must be >= 0, got {bad}")));
            }
        }
        if self.min_id_gap == 0 {
            return Err(Error::Domain("min_id_gap must be >= 1".into()));
        }
        Ok(())
    }

    /// Missing keys other than `mode` keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.expect_only(&["seed", "mode", "outlier_ratio", "odom_sigma", "loop_sigma", "min_id_gap"])?;
        let mode = kv
            .get::<CorruptionMode>("mode")?
            .ok_or_else(|| Error::Domain("corruption spec needs a 'mode'".into()))?;
        let mut spec = Self::new(mode, kv.get("outlier_ratio")?.unwrap_or(0.0), kv.get("seed")?.unwrap_or(0));
        if let Some(s) = kv.get_list("odom_sigma")? {
            spec.odom_sigma = s;
        }
        if let Some(s) = kv.get_list("loop_sigma")? {
            spec.loop_sigma = s;
        }
        spec.min_id_gap = kv.get("min_id_gap")?.unwrap_or(spec.min_id_gap);
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "mode = {}", self.mode);
        let _ = writeln!(out, "outlier_ratio = {:?}", self.outlier_ratio);
        let _ = writeln!(out, "odom_sigma = {}", format_list(&self.odom_sigma));
        let _ = writeln!(out, "loop_sigma = {}", format_list(&self.loop_sigma));
        let _ = writeln!(out, "min_id_gap = {}", self.min_id_gap);
        out
    }
}

/// Applies the corruption selected by `spec.mode`.
pub fn corrupt(g: &PoseGraph, spec: &CorruptionSpec) -> Result<PoseGraph> {
    match spec.mode {
        CorruptionMode::FalseLoops => inject_false_loops(g, spec),
        CorruptionMode::NoisyPerturbation => perturb(g, spec),
    }
}

/// Number of factors to inject so that `k / (k + existing)` is closest to `ratio`.
pub fn false_loop_count(existing: usize, ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!("outlier_ratio must lie in [0, 1], got {ratio}")));
    }
    if ratio == 0.0 {
        return Ok(0);
    }
    if ratio == 1.0 {
        return Err(Error::UnsatisfiableRatio(format!(
            "ratio 1 cannot be reached by adding false loops to {existing} existing loops"
        )));
    }
    let exact = ratio * existing as f64 / (1.0 - ratio);
    let lo = exact.floor() as usize;
    let err = |k: usize| (k as f64 / (k + existing).max(1) as f64 - ratio).abs();
    Ok(if err(lo + 1) < err(lo) { lo + 1 } else { lo })
}

/// Adds false loop closures between far-apart vertices. Every injected
/// measurement is rejection-sampled until its whitened residual on the
/// graph's current poses exceeds the 0.95 chi-square gate.
pub fn inject_false_loops(g: &PoseGraph, spec: &CorruptionSpec) -> Result<PoseGraph> {
    spec.validate()?;
    if spec.mode != CorruptionMode::FalseLoops {
        return Err(Error::Contract("inject_false_loops needs mode false_loops".into()));
    }
    let existing = g.num_loops();
    if spec.outlier_ratio == 1.0 && existing == 0 {
        return Err(Error::UnsatisfiableRatio("outlier ratio 1 requested on a graph without loops".into()));
    }
    let k = false_loop_count(existing, spec.outlier_ratio)?;
    let mut out = g.clone();
    for f in out.factors_mut() {
        f.is_true_outlier = Some(false);
    }
    if k == 0 {
        if spec.outlier_ratio > 0.0 {
            warn!("outlier ratio {} rounds to zero injected loops", spec.outlier_ratio);
        }
        return Ok(out);
    }
    let ids: Vec<VertexId> = g.vertices().keys().copied().collect();
    let (first, last) = match (ids.first(), ids.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::Degenerate("cannot inject loops into an empty graph".into())),
    };
    if (ids.len() as u64) < spec.min_id_gap + 1 || last - first < spec.min_id_gap {
        return Err(Error::Degenerate(format!(
            "graph with {} vertices cannot host loops with id gap {}",
            ids.len(),
            spec.min_id_gap
        )));
    }
    let information = g
        .factors()
        .iter()
        .find(|f| f.is_loop())
        .or_else(|| g.factors().first())
        .map(|f| f.information().clone())
        .unwrap_or_else(|| DMatrix::identity(g.vertices()[&first].dof(), g.vertices()[&first].dof()));
    let dof = information.nrows();
    let gate = chi2_quantile(CLASSIFICATION_LEVEL, dof)?;
    let radius = FALSE_LOOP_RADIUS_STEPS * g.mean_odometry_step().max(f64::EPSILON);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    for _ in 0..k {
        let (from, to) = loop {
            let a = ids[rng.random_range(0..ids.len())];
            let b = ids[rng.random_range(0..ids.len())];
            if a.abs_diff(b) >= spec.min_id_gap {
                break (a.min(b), a.max(b));
            }
        };
        let (xa, xb) = (g.vertices()[&from], g.vertices()[&to]);
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let z = random_relative_pose(&mut rng, &xa, radius);
            let factor = Factor::new(FactorKind::LoopClosure, from, to, z, information.clone())?;
            if factor.whitened(&xa, &xb)?.norm_squared() > gate {
                accepted = Some(factor);
                break;
            }
        }
        let mut factor = accepted.ok_or_else(|| {
            Error::Degenerate(format!(
                "no false loop between {from} and {to} exceeded the gate after {MAX_REJECTIONS} draws"
            ))
        })?;
        factor.is_true_outlier = Some(true);
        out.add_factor(factor)?;
    }
    Ok(out)
}

fn random_relative_pose(rng: &mut ChaCha8Rng, like: &Pose, radius: f64) -> Pose {
    match like {
        Pose::Se2(_) => {
            let r = radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(-PI..PI);
            let theta = rng.random_range(-PI..PI);
            Pose::Se2(Pose2::new(r * phi.cos(), r * phi.sin(), theta))
        }
        Pose::Se3(_) => {
            let dir = loop {
                let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
                if v.norm() > 1e-12 {
                    break v.normalize();
                }
            };
            let t = dir * radius * rng.random::<f64>().cbrt();
            let q = loop {
                let q: Quaternion<f64> = Quaternion::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                );
                if q.norm() > 1e-12 {
                    break UnitQuaternion::from_quaternion(q);
                }
            };
            Pose::Se3(Pose3::new(t, q))
        }
    }
}

fn gaussian_tangent(rng: &mut ChaCha8Rng, sigma: &[f64]) -> Result<Vec<f64>> {
    sigma
        .iter()
        .map(|&s| {
            if s == 0.0 {
                return Ok(0.0);
            }
            let n = Normal::new(0.0, s).map_err(|e| Error::Domain(format!("invalid sigma {s}: {e}")))?;
            Ok(n.sample(rng))
        })
        .collect()
}

fn check_sigma(name: &str, sigma: &[f64], dof: usize) -> Result<()> {
    if sigma.len() != dof {
        return Err(Error::Contract(format!("{name} has {} entries for {dof}-dof measurements", sigma.len())));
    }
    Ok(())
}

/// Right-composes Gaussian noise onto every odometry measurement and onto
/// `round(ratio * loops)` uniformly chosen loop closures, which become the
/// labeled outliers.
pub fn perturb(g: &PoseGraph, spec: &CorruptionSpec) -> Result<PoseGraph> {
    spec.validate()?;
    if spec.mode != CorruptionMode::NoisyPerturbation {
        return Err(Error::Contract("perturb needs mode noisy_perturbation".into()));
    }
    let mut out = g.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let loops: Vec<usize> = (0..g.factors().len()).filter(|&i| g.factors()[i].is_loop()).collect();
    let chosen = (spec.outlier_ratio * loops.len() as f64).round() as usize;
    let mut selected = vec![false; g.factors().len()];
    for i in sample(&mut rng, loops.len(), chosen).into_vec() {
        selected[loops[i]] = true;
    }
    for (i, f) in out.factors_mut().iter_mut().enumerate() {
        let dof = f.dim();
        if !f.is_loop() && spec.odom_sigma.iter().any(|s| *s > 0.0) {
            check_sigma("odom_sigma", &spec.odom_sigma, dof)?;
            f.measurement = f.measurement.retract(&gaussian_tangent(&mut rng, &spec.odom_sigma)?)?;
        }
        if selected[i] {
            check_sigma("loop_sigma", &spec.loop_sigma, dof)?;
            f.measurement = f.measurement.retract(&gaussian_tangent(&mut rng, &spec.loop_sigma)?)?;
        }
        f.is_true_outlier = Some(selected[i]);
    }
    Ok(out)
}

/// Replaces every vertex pose by chaining odometry outward from the anchor.
pub fn dead_reckoning(g: &PoseGraph) -> Result<PoseGraph> {
    let mut out = g.clone();
    let Some(anchor) = g.anchor_id() else {
        return Ok(out);
    };
    let mut adjacency: BTreeMap<VertexId, Vec<(VertexId, Pose)>> = BTreeMap::new();
    for f in g.factors().iter().filter(|f| f.kind == FactorKind::Odometry) {
        adjacency.entry(f.from).or_default().push((f.to, f.measurement));
        adjacency.entry(f.to).or_default().push((f.from, f.measurement.inverse()));
    }
    let mut placed = BTreeMap::from([(anchor, g.vertices()[&anchor])]);
    let mut queue = VecDeque::from([anchor]);
    while let Some(v) = queue.pop_front() {
        let base = placed[&v];
        for (n, z) in adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            if !placed.contains_key(n) {
                placed.insert(*n, base.compose(z)?);
                queue.push_back(*n);
            }
        }
    }
    if placed.len() != g.num_vertices() {
        return Err(Error::Integrity("odometry factors do not connect all vertices".into()));
    }
    for (id, pose) in placed {
        if let Some(p) = out.vertex_mut(id) {
            *p = pose;
        }
    }
    Ok(out)
}

/// Parameters of the synthetic planar grid world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorldSpec {
    pub seed: u64,
    pub poses: usize,
    /// Cells per side of the square the robot stays in.
    pub grid_size: i64,
    pub step: f64,
    /// Upper bound on the number of loop closures.
    pub loops: usize,
    /// Minimum index separation of revisits that become loops.
    pub min_loop_gap: usize,
    /// Standard deviations encoded in every factor's information matrix.
    pub info_sigma: [f64; 3],
    /// Standard deviations of the noise actually added to the measurements.
    pub noise_sigma: [f64; 3],
}

impl Default for GridWorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            poses: 300,
            grid_size: 7,
            step: 1.0,
            loops: 80,
            min_loop_gap: 10,
            info_sigma: [0.1, 0.1, 0.05],
            noise_sigma: [0.0; 3],
        }
    }
}

const GRID_WORLD_STREAM: u64 = 1;

/// Synthetic dataset: vertices hold ground truth, measurements carry the
/// configured noise, and every factor is labeled inlier.
pub fn grid_world(spec: &GridWorldSpec) -> Result<PoseGraph> {
    if spec.poses < 2 || spec.grid_size < 2 || !(spec.step > 0.0) {
        return Err(Error::Domain("grid world needs >= 2 poses, grid_size >= 2 and step > 0".into()));
    }
    if spec.info_sigma.iter().any(|s| !(*s > 0.0)) || spec.noise_sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Domain("grid world sigmas must be positive".into()));
    }
    // A separate stream keeps worlds and corruptions with equal seeds independent.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(GRID_WORLD_STREAM);
    const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    let inside = |c: (i64, i64)| (0..spec.grid_size).contains(&c.0) && (0..spec.grid_size).contains(&c.1);
    let mut cells = vec![(0i64, 0i64)];
    let mut headings = vec![0usize];
    for _ in 1..spec.poses {
        let (cell, h) = (*cells.last().unwrap_or(&(0, 0)), *headings.last().unwrap_or(&0));
        let u: f64 = rng.random();
        let preferred = if u < 0.6 { [0, 1, 3] } else if u < 0.8 { [1, 0, 3] } else { [3, 0, 1] };
        let mut next = None;
        for turn in preferred.into_iter().chain([2]) {
            let nh = (h + turn) % 4;
            let c = (cell.0 + DIRS[nh].0, cell.1 + DIRS[nh].1);
            if inside(c) {
                next = Some((c, nh));
                break;
            }
        }
        let (c, nh) = next.ok_or_else(|| Error::Degenerate("grid walk is stuck".into()))?;
        cells.push(c);
        headings.push(nh);
    }
    let gt: Vec<Pose> = cells
        .iter()
        .zip(&headings)
        .map(|(c, h)| Pose::Se2(Pose2::new(c.0 as f64 * spec.step, c.1 as f64 * spec.step, *h as f64 * PI / 2.0)))
        .collect();

    let mut last_visit: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut candidates = Vec::new();
    for (i, c) in cells.iter().enumerate() {
        if let Some(&j) = last_visit.get(c) {
            if i - j >= spec.min_loop_gap {
                candidates.push((j, i));
            }
        }
        last_visit.insert(*c, i);
    }
    if candidates.len() < spec.loops {
        warn!("grid world offers {} loop candidates, {} requested", candidates.len(), spec.loops);
    }
    let mut chosen: Vec<(usize, usize)> = sample(&mut rng, candidates.len(), spec.loops.min(candidates.len()))
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    chosen.sort_unstable_by_key(|&(j, i)| (i, j));

    let information = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        3,
        spec.info_sigma.iter().map(|s| 1.0 / (s * s)),
    ));
    let mut g = PoseGraph::new();
    for (i, p) in gt.iter().enumerate() {
        g.add_vertex(i as VertexId, *p);
    }
    let edges = (0..spec.poses - 1).map(|i| (i, i + 1, FactorKind::Odometry));
    let loops = chosen.into_iter().map(|(j, i)| (j, i, FactorKind::LoopClosure));
    for (a, b, kind) in edges.chain(loops) {
        let exact = gt[a].inverse().compose(&gt[b])?;
        let z = exact.retract(&gaussian_tangent(&mut rng, &spec.noise_sigma)?)?;
        let mut f = Factor::new(kind, a as VertexId, b as VertexId, z, information.clone())?;
        f.is_true_outlier = Some(false);
        g.add_factor(f)?;
    }
    Ok(g)
}
