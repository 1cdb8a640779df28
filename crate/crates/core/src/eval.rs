//! Outlier-classification scores and trajectory error metrics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posegraph::io::Trajectory;
use crate::posegraph::{Pose, PoseGraph};
use crate::solver::{Classification, GncResult, PgoProblem};

/// Confusion counts over loop closures with "outlier" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl ClassificationReport {
    /// `predicted[i]` and `actual[i]` are true for outliers.
    pub fn from_pairs(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Ok(Self {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
        })
    }

    pub fn is_perfect(&self) -> bool {
        self.precision == 1.0 && self.recall == 1.0
    }
}

/// Scores the loop closures of `result`. `labels` holds one ground-truth
/// flag per factor of the optimized graph.
pub fn score_classification(result: &GncResult<PgoProblem>, labels: &[bool]) -> Result<ClassificationReport> {
    let graph = result.solution.graph();
    score_loops(graph, &result.classification, labels)
}

/// As [`score_classification`] for an explicit graph and classification.
pub fn score_loops(graph: &PoseGraph, classification: &[Classification], labels: &[bool]) -> Result<ClassificationReport> {
    let n = graph.factors().len();
    if classification.len() != n || labels.len() != n {
        return Err(Error::Contract(format!(
            "graph has {n} factors but {} classifications and {} labels",
            classification.len(),
            labels.len()
        )));
    }
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    for (i, f) in graph.factors().iter().enumerate() {
        if f.is_loop() {
            predicted.push(classification[i] == Classification::Outlier);
            actual.push(labels[i]);
        }
    }
    ClassificationReport::from_pairs(&predicted, &actual)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryErrors {
    /// Meters.
    pub ate: f64,
    /// Percent.
    pub rpe: f64,
}

pub fn trajectory_errors(est: &Trajectory, gt: &Trajectory) -> Result<TrajectoryErrors> {
    Ok(TrajectoryErrors {
        ate: ate(est, gt)?,
        rpe: rpe(est, gt)?,
    })
}

fn check_pair(est: &Trajectory, gt: &Trajectory) -> Result<usize> {
    if est.len() != gt.len() {
        return Err(Error::Contract(format!("trajectories have {} and {} poses", est.len(), gt.len())));
    }
    if est.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 poses, got {}", est.len())));
    }
    let mut dim = None;
    for ((ie, pe), (ig, pg)) in est.iter().zip(gt) {
        if ie != ig {
            return Err(Error::Contract(format!("pose ids differ: {ie} vs {ig}")));
        }
        let d = match (pe, pg) {
            (Pose::Se2(_), Pose::Se2(_)) => 2,
            (Pose::Se3(_), Pose::Se3(_)) => 3,
            _ => return Err(Error::Contract(format!("pose {ie} mixes SE(2) and SE(3)"))),
        };
        if *dim.get_or_insert(d) != d {
            return Err(Error::Contract("trajectory mixes SE(2) and SE(3)".into()));
        }
    }
    Ok(dim.unwrap_or(2))
}

fn positions(traj: &Trajectory, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, traj.len(), |r, c| traj[c].1.position()[r])
}

/// Root-mean-square position error after the rigid alignment of `est` onto
/// `gt` that minimizes it.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let dim = check_pair(est, gt)?;
    let p = positions(est, dim);
    let q = positions(gt, dim);
    let n = p.ncols() as f64;
    let pc: DVector<f64> = p.column_mean();
    let qc: DVector<f64> = q.column_mean();
    let p0 = DMatrix::from_fn(dim, p.ncols(), |r, c| p[(r, c)] - pc[r]);
    let q0 = DMatrix::from_fn(dim, q.ncols(), |r, c| q[(r, c)] - qc[r]);
    let cov = &q0 * p0.transpose();
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical {
            message: "alignment SVD did not converge".into(),
            trace: Vec::new(),
        }),
    };
    let mut s = DMatrix::<f64>::identity(dim, dim);
    if (&u * &v_t).determinant() < 0.0 {
        s[(dim - 1, dim - 1)] = -1.0;
    }
    let rot = &u * s * &v_t;
    let aligned = &rot * &p0;
    let sq: f64 = (aligned - q0).iter().map(|e| e * e).sum();
    Ok((sq / n).sqrt())
}

/// Root-mean-square translation of `log(dgt^-1 dest)` over consecutive pose
/// pairs, divided by the root-mean-square ground-truth step and times 100.
pub fn rpe(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let dim = check_pair(est, gt)?;
    let mut err_sq = 0.0;
    let mut step_sq = 0.0;
    for k in 0..est.len() - 1 {
        let d_est = est[k].1.inverse().compose(&est[k + 1].1)?;
        let d_gt = gt[k].1.inverse().compose(&gt[k + 1].1)?;
        let e = d_gt.inverse().compose(&d_est)?.log();
        err_sq += e.rows(0, dim).norm_squared();
        let t = d_gt.position();
        step_sq += t.iter().map(|v| v * v).sum::<f64>();
    }
    if step_sq == 0.0 {
        return Err(Error::Degenerate("ground-truth trajectory never moves".into()));
    }
    Ok(100.0 * (err_sq / step_sq).sqrt())
}

/// Combined evaluation of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: ClassificationReport,
    pub trajectory: Option<TrajectoryErrors>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let c = &self.classification;
        let mut rows: Vec<(&str, String)> = vec![
            ("precision", format!("{:.6}", c.precision)),
            ("recall", format!("{:.6}", c.recall)),
            ("true_positives", c.true_positives.to_string()),
            ("false_positives", c.false_positives.to_string()),
            ("true_negatives", c.true_negatives.to_string()),
            ("false_negatives", c.false_negatives.to_string()),
        ];
        if let Some(t) = &self.trajectory {
            rows.push(("ate_m", format!("{:.6}", t.ate)));
            rows.push(("rpe_percent", format!("{:.6}", t.rpe)));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>14}");
        }
        out
    }
}

/// Per-factor CSV: index, kind, residual, final control value, predicted
/// class and ground-truth label (empty when unknown).
pub fn factor_csv(graph: &PoseGraph, residuals: &[f64], final_mus: &[Option<f64>], classification: &[Classification]) -> Result<String> {
    let n = graph.factors().len();
    if residuals.len() != n || final_mus.len() != n || classification.len() != n {
        return Err(Error::Contract(format!("per-factor columns do not match {n} factors")));
    }
    let mut out = String::from("index,kind,residual,mu_final,classification,label\n");
    for (i, f) in graph.factors().iter().enumerate() {
        let kind = if f.is_loop() { "loop" } else { "odometry" };
        let mu = final_mus[i].map(|m| format!("{m:?}")).unwrap_or_default();
        let class = match classification[i] {
            Classification::Inlier => "inlier",
            Classification::Outlier => "outlier",
        };
        let label = f.is_true_outlier.map(|l| u8::from(l).to_string()).unwrap_or_default();
        let _ = writeln!(out, "{i},{kind},{:?},{mu},{class},{label}", residuals[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posegraph::Pose2;
    use approx::assert_abs_diff_eq;

    fn line(n: usize, step: f64) -> Trajectory {
        (0..n).map(|i| (i as u64, Pose::Se2(Pose2::new(i as f64 * step, 0.0, 0.0)))).collect()
    }

    #[test]
    fn ate_examples() {
        let gt = line(100, 1.0);
        assert_eq!(ate(&gt, &gt).unwrap(), 0.0);
        // One pose displaced by 1 m: sqrt(1/100) before alignment, which
        // absorbs only the 1 cm mean shift and a negligible rotation.
        let mut est = gt.clone();
        est[50].1 = Pose::Se2(Pose2::new(50.0, 1.0, 0.0));
        let v = ate(&est, &gt).unwrap();
        assert!(v <= 0.1 + 1e-12, "ate {v}");
        assert_abs_diff_eq!(v, 0.1, epsilon = 1e-3);
        assert!(matches!(ate(&gt[..1].to_vec(), &gt[..1].to_vec()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rpe_examples() {
        let gt = line(2, 1.0);
        let est = vec![gt[0], (1, Pose::Se2(Pose2::new(1.05, 0.0, 0.0)))];
        assert_abs_diff_eq!(rpe(&est, &gt).unwrap(), 5.0, epsilon = 1e-9);
        assert_eq!(rpe(&gt, &gt).unwrap(), 0.0);
        let stretched = line(50, 1.03);
        assert_abs_diff_eq!(rpe(&stretched, &line(50, 1.0)).unwrap(), 3.0, epsilon = 0.1);
    }

    #[test]
    fn classification_conventions() {
        let perfect = ClassificationReport::from_pairs(&[true, false], &[true, false]).unwrap();
        assert!(perfect.is_perfect());
        let none = ClassificationReport::from_pairs(&[false, false, false], &[true, false, false]).unwrap();
        assert_eq!((none.precision, none.recall), (1.0, 0.0));
        assert!(ClassificationReport::from_pairs(&[true], &[]).is_err());
    }
}
