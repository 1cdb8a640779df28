//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its PASS/FAIL line regardless of output capture.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pgo_cli::demo::regression_demo;
use pgo_cli::{cmd_corrupt, cmd_demo, cmd_eval, cmd_optimize, cmd_replay, cmd_synth, files, RunManifest};
use pgo_core::kernel::baseline_ramp;
use pgo_core::posegraph::io::Trajectory;
use pgo_core::{
    ate, dead_reckoning, find_mu_star, gnc_optimize, grid_world, inject_false_loops, perturb, rpe, score_classification, sig_d2, sig_rho,
    sig_weight, ClassificationReport, CorruptionMode, CorruptionSpec, GncResult, GridWorldSpec, KernelConfig, PgoProblem, Pose, Pose2, Pose3,
    ScheduleKind, SolverConfig,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn kcfg(c: f64) -> KernelConfig {
    KernelConfig {
        c,
        ..KernelConfig::default()
    }
}

fn kernel_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let r = rng.random_range(-100.0..100.0);
        let c = 10f64.powf(rng.random_range(-2.0..1.0));
        let cfg = kcfg(c);
        let gm = 0.5 * c * c * r * r / (c * c + r * r);
        let err = (sig_rho(r, 1.0, &cfg).map_err(|e| e.to_string())? - gm).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("r = {r}, c = {c}: off Geman-McClure by {err:e}"))?;
        let quad = 0.5 * c * c * r * r / (c * c + 1.0);
        ensure(sig_rho(r, 0.0, &cfg).map_err(|e| e.to_string())? == quad, || format!("r = {r}, c = {c}: not the quadratic"))?;
    }
    Ok(format!("max deviation {worst:.1e}"))
}

fn derivative_oracle() -> Outcome {
    let cfg = kcfg(1.0);
    let (mut worst1, mut worst2) = (0.0f64, 0.0f64);
    for mu in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let rho = |x: f64| sig_rho(x, mu, &cfg).unwrap();
        for k in 0..=60 {
            let r = 10f64.powf(-3.0 + k as f64 / 10.0);
            let h = 1e-4 * r;
            let fd1 = (rho(r + h) - rho(r - h)) / (2.0 * h);
            let d1 = sig_weight(r, mu, &cfg).map_err(|e| e.to_string())? * r;
            let rel1 = (fd1 - d1).abs() / d1.abs();
            worst1 = worst1.max(rel1);
            ensure(rel1 <= 1e-5, || format!("first derivative at r = {r}, mu = {mu}: rel {rel1:e}"))?;
            let h = 1e-2 * r;
            let fd2 = (-rho(r + 2.0 * h) + 16.0 * rho(r + h) - 30.0 * rho(r) + 16.0 * rho(r - h) - rho(r - 2.0 * h)) / (12.0 * h * h);
            let d2 = sig_d2(r, mu, &cfg).map_err(|e| e.to_string())?;
            let rel2 = (fd2 - d2).abs() / d2.abs();
            worst2 = worst2.max(rel2);
            ensure(rel2 <= 1e-4, || format!("second derivative at r = {r}, mu = {mu}: rel {rel2:e}"))?;
        }
    }
    Ok(format!("max rel error {worst1:.1e} / {worst2:.1e}"))
}

fn mu_star_certificate() -> Outcome {
    let cfg = kcfg(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut boundary = 0;
    for _ in 0..500 {
        let r = rng.random_range(0.1..100.0);
        let m = find_mu_star(r, &cfg).map_err(|e| e.to_string())?;
        if m.at_boundary {
            boundary += 1;
            for k in 0..=1000 {
                let mu = k as f64 / 1000.0;
                ensure(sig_d2(r, mu, &cfg).unwrap() > 0.0, || format!("r = {r}: boundary claimed but d2 <= 0 at mu = {mu}"))?;
            }
        } else {
            let d2 = sig_d2(r, m.mu, &cfg).unwrap();
            ensure(d2.abs() <= 1e-8, || format!("r = {r}: |d2(mu* = {})| = {d2:e}", m.mu))?;
        }
    }
    let anchor = find_mu_star(1.0 / 3f64.sqrt(), &cfg).map_err(|e| e.to_string())?;
    ensure((anchor.mu - 1.0).abs() <= 1e-6, || format!("r = 1/sqrt(3) gives mu* = {}", anchor.mu))?;
    Ok(format!("{boundary} of 500 convex on all of [0, 1]; anchor mu* = {:.9}", anchor.mu))
}

fn convexity_boundary() -> Outcome {
    let cfg = KernelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::INFINITY;
    for set in 0..100 {
        let n = rng.random_range(1..20);
        for _ in 0..n {
            let ri: f64 = 10f64.powf(rng.random_range(-2.0..2.0));
            let m = find_mu_star(ri, &cfg).map_err(|e| e.to_string())?;
            for _ in 0..1000 {
                let r = rng.random_range(-ri..=ri);
                let d2 = sig_d2(r, m.mu, &cfg).unwrap();
                worst = worst.min(d2);
                ensure(d2 >= -1e-8, || format!("set {set}: d2({r}, mu*({ri}) = {}) = {d2:e}", m.mu))?;
            }
        }
    }
    Ok(format!("min second derivative {worst:.3e}"))
}

fn regression_reproduction() -> Outcome {
    let outcome = regression_demo(0, 200).map_err(|e| e.to_string())?;
    let eff = outcome.runs.iter().find(|r| r.schedule == ScheduleKind::Efficient).ok_or("no efficient run")?;
    let base = outcome.runs.iter().find(|r| r.schedule == ScheduleKind::Baseline).ok_or("no baseline run")?;
    ensure((eff.final_slope - 1.0).abs() <= 1e-3, || format!("efficient slope {}", eff.final_slope))?;
    for (point, history) in outcome.points.iter().zip(&eff.mu_history) {
        if point.slope == 1.0 {
            let mus: Vec<f64> = history.iter().map(|h| h.mu).collect();
            ensure(mus.len() == 3 && mus[0] == 0.0 && mus[2] == 1.0, || format!("inlier control values {mus:?}"))?;
        }
    }
    let ramp = baseline_ramp(0.0).map_err(|e| e.to_string())?;
    ensure(base.stages.len() == 5 && ramp.len() == 5, || format!("baseline used {} stages", base.stages.len()))?;
    for (stage, want) in base.stages.iter().zip([0.0, 0.12, 0.384, 0.9648, 1.0]) {
        ensure(stage.mus.iter().all(|m| (m - want).abs() <= 1e-12), || format!("baseline stage {} not at mu = {want}", stage.stage))?;
    }
    Ok(format!(
        "slope {:.6}, efficient {} stages, baseline {} stages",
        eff.final_slope,
        eff.stages.len(),
        base.stages.len()
    ))
}

struct Instance {
    ratio: f64,
    seed: u64,
    efficient: GncResult,
    baseline: GncResult,
    scores: [ClassificationReport; 2],
}

fn solve_pair(graph: pgo_core::PoseGraph) -> Result<(GncResult, GncResult, [ClassificationReport; 2]), String> {
    let labels = graph.labels();
    let problem = PgoProblem::new(dead_reckoning(&graph).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let kc = KernelConfig::default();
    let e = gnc_optimize(&problem, &SolverConfig::with_schedule(ScheduleKind::Efficient), &kc).map_err(|e| e.to_string())?;
    let b = gnc_optimize(&problem, &SolverConfig::with_schedule(ScheduleKind::Baseline), &kc).map_err(|e| e.to_string())?;
    let se = score_classification(&e, &labels).map_err(|e| e.to_string())?;
    let sb = score_classification(&b, &labels).map_err(|e| e.to_string())?;
    Ok((e, b, [se, sb]))
}

fn experiment_one() -> Result<Vec<Instance>, String> {
    let mut out = Vec::new();
    for ratio in [0.1, 0.3, 0.5] {
        for seed in 0..5 {
            let world = grid_world(&GridWorldSpec {
                seed,
                noise_sigma: [0.03, 0.03, 0.015],
                ..GridWorldSpec::default()
            })
            .map_err(|e| e.to_string())?;
            let spec = CorruptionSpec::new(CorruptionMode::FalseLoops, ratio, seed);
            let corrupted = inject_false_loops(&world, &spec).map_err(|e| e.to_string())?;
            let (efficient, baseline, scores) = solve_pair(corrupted)?;
            out.push(Instance {
                ratio,
                seed,
                efficient,
                baseline,
                scores,
            });
        }
    }
    Ok(out)
}

fn false_loop_detection(instances: &[Instance]) -> Outcome {
    let mut summary = Vec::new();
    for ratio in [0.1, 0.3, 0.5] {
        let (mut pmin, mut rmin) = (1.0f64, 1.0f64);
        for inst in instances.iter().filter(|i| i.ratio == ratio) {
            let s = &inst.scores[0];
            pmin = pmin.min(s.precision);
            rmin = rmin.min(s.recall);
            let floor = if ratio == 0.1 { 1.0 } else if ratio == 0.5 { 0.99 } else { 0.0 };
            ensure(s.precision >= floor && s.recall >= floor, || {
                format!("ratio {ratio}, seed {}: precision {} recall {}", inst.seed, s.precision, s.recall)
            })?;
        }
        summary.push(format!("{:.0}%: P >= {pmin:.3}, R >= {rmin:.3}", ratio * 100.0));
    }
    Ok(summary.join("; "))
}

fn iteration_dominance(instances: &[Instance]) -> Outcome {
    let mut summary = Vec::new();
    for ratio in [0.1, 0.3, 0.5] {
        let mut inner_wins = 0;
        let (mut eo, mut bo, mut ei, mut bi) = (0, 0, 0, 0);
        for inst in instances.iter().filter(|i| i.ratio == ratio) {
            let (e, b) = (&inst.efficient, &inst.baseline);
            ensure(e.outer_iterations <= b.outer_iterations, || {
                format!("ratio {ratio}, seed {}: outer {} > {}", inst.seed, e.outer_iterations, b.outer_iterations)
            })?;
            if e.inner_iterations_total <= b.inner_iterations_total {
                inner_wins += 1;
            }
            eo += e.outer_iterations;
            bo += b.outer_iterations;
            ei += e.inner_iterations_total;
            bi += b.inner_iterations_total;
        }
        ensure(inner_wins >= 4, || format!("ratio {ratio}: inner iterations lower on only {inner_wins} of 5 seeds"))?;
        summary.push(format!("{:.0}%: outer {eo}/{bo}, inner {ei}/{bi}", ratio * 100.0));
    }
    Ok(summary.join("; "))
}

fn noisy_loops() -> Outcome {
    let gt = grid_world(&GridWorldSpec::default()).map_err(|e| e.to_string())?;
    let (mut eff, mut base) = (0, 0);
    for seed in 0..10 {
        let spec = CorruptionSpec::new(CorruptionMode::NoisyPerturbation, 0.3, seed);
        let corrupted = perturb(&gt, &spec).map_err(|e| e.to_string())?;
        let (_, _, scores) = solve_pair(corrupted)?;
        eff += scores[0].is_perfect() as usize;
        base += scores[1].is_perfect() as usize;
    }
    ensure(eff >= base, || format!("efficient {eff} successes, baseline {base}"))?;
    Ok(format!("successes: efficient {eff}/10, baseline {base}/10"))
}

fn random_se2(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
    Pose::Se2(Pose2::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    ))
}

fn random_se3(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
    let t = Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale));
    let w = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    Pose::Se3(Pose3::new(t, UnitQuaternion::from_scaled_axis(w)))
}

fn transformed(traj: &Trajectory, t: &Pose) -> Trajectory {
    traj.iter().map(|(id, p)| (*id, t.compose(p).unwrap())).collect()
}

fn gauge_and_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for k in 0..200 {
        let sample: fn(&mut ChaCha8Rng, f64) -> Pose = if k % 2 == 0 { random_se2 } else { random_se3 };
        let n = rng.random_range(3..40);
        let gt: Trajectory = (0..n).map(|i| (i as u64, sample(&mut rng, 10.0))).collect();
        let est: Trajectory = gt
            .iter()
            .map(|(id, p)| {
                let dof = p.dof();
                let d: Vec<f64> = (0..dof).map(|_| rng.random_range(-0.05..0.05)).collect();
                (*id, p.retract(&d).unwrap())
            })
            .collect();
        let (t1, t2) = (sample(&mut rng, 10.0), sample(&mut rng, 10.0));
        let a = ate(&est, &gt).map_err(|e| e.to_string())?;
        let r = rpe(&est, &gt).map_err(|e| e.to_string())?;
        let moved_est = transformed(&est, &t1);
        let moved_gt = transformed(&gt, &t2);
        let deviations = [
            (ate(&moved_est, &gt).unwrap() - a).abs(),
            (ate(&moved_est, &moved_gt).unwrap() - a).abs(),
            (rpe(&moved_est, &moved_gt).unwrap() - r).abs() / r.max(1.0),
            ate(&transformed(&gt, &t1), &gt).unwrap(),
            rpe(&transformed(&gt, &t1), &gt).unwrap(),
        ];
        for d in deviations {
            worst = worst.max(d);
            ensure(d <= 1e-9, || format!("instance {k}: gauge deviation {d:e}"))?;
        }
    }
    for k in 0..1000 {
        let n = rng.random_range(0..200);
        let pairs: Vec<(bool, bool)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let (pred, act): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let rep = ClassificationReport::from_pairs(&pred, &act).map_err(|e| e.to_string())?;
        let count = |p: bool, a: bool| pairs.iter().filter(|x| **x == (p, a)).count();
        let (tp, fp, tn, fn_) = (count(true, true), count(true, false), count(false, false), count(false, true));
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        ensure(
            (rep.true_positives, rep.false_positives, rep.true_negatives, rep.false_negatives) == (tp, fp, tn, fn_)
                && rep.precision == precision
                && rep.recall == recall,
            || format!("confusion instance {k} disagrees with the tally"),
        )?;
    }
    Ok(format!("max gauge deviation {worst:.1e}; 1000 confusion instances agree"))
}

fn same_outputs(a: &Path, b: &Path, manifest: &RunManifest) -> Result<usize, String> {
    let mut compared = 0;
    for name in &manifest.outputs {
        if name.ends_with("manifest.json") {
            continue;
        }
        let left = fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let right = fs::read(b.join(name)).map_err(|e| e.to_string())?;
        ensure(left == right, || format!("{name} differs after replay"))?;
        compared += 1;
    }
    Ok(compared)
}

fn manifest_replay() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let err = |e: pgo_cli::CliError| e.to_string();
    let mut runs: Vec<(String, std::path::PathBuf, RunManifest)> = Vec::new();

    let synth = root.join("synth");
    let spec = GridWorldSpec {
        seed: 2,
        poses: 150,
        loops: 40,
        noise_sigma: [0.03, 0.03, 0.015],
        ..GridWorldSpec::default()
    };
    runs.push(("synth".into(), synth.clone(), cmd_synth(spec, &synth).map_err(err)?));
    let gt = synth.join(files::GROUND_TRUTH);

    for (name, body) in [
        ("false_loops", "mode = false_loops\noutlier_ratio = 0.3\nseed = 4\n"),
        ("perturb", "mode = noisy_perturbation\noutlier_ratio = 0.3\nseed = 4\n"),
    ] {
        let spec_path = root.join(format!("{name}.txt"));
        fs::write(&spec_path, body).map_err(|e| e.to_string())?;
        let dir = root.join(name);
        runs.push((format!("corrupt {name}"), dir.clone(), cmd_corrupt(&gt, &spec_path, &dir).map_err(err)?));
    }
    let graph = root.join("false_loops").join(files::CORRUPTED);
    let labels = root.join("false_loops").join(files::LABELS);
    for schedule in [ScheduleKind::Efficient, ScheduleKind::Baseline] {
        let dir = root.join(format!("opt_{schedule}"));
        runs.push((format!("optimize {schedule}"), dir.clone(), cmd_optimize(&graph, None, Some(schedule), None, &dir).map_err(err)?));
    }
    let eval_dir = root.join("eval");
    let (m, _) = cmd_eval(&root.join("opt_efficient"), &labels, Some(&gt), Some(&eval_dir)).map_err(err)?;
    runs.push(("eval".into(), eval_dir, m));
    let demo_dir = root.join("demo");
    runs.push(("demo".into(), demo_dir.clone(), cmd_demo(&demo_dir, 7, 200).map_err(err)?.0));

    let mut files_compared = 0;
    for (i, (name, dir, manifest)) in runs.iter().enumerate() {
        let again = root.join(format!("replay_{i}"));
        let replayed = cmd_replay(&dir.join(manifest.invocation.manifest_name()), Some(&again)).map_err(err)?;
        ensure(replayed.invocation == manifest.invocation, || format!("{name}: invocation changed on replay"))?;
        files_compared += same_outputs(dir, &again, manifest).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("{} runs replayed, {files_compared} files identical", runs.len()))
}

fn report(id: usize, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let result = match (result, limit) {
        (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
        (r, _) => r,
    };
    match &result {
        Ok(detail) => println!("PASS criterion {id:>2} {title}: {detail} ({elapsed:.2?})"),
        Err(detail) => println!("FAIL criterion {id:>2} {title}: {detail} ({elapsed:.2?})"),
    }
    result.is_ok()
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let mut ok = true;
    ok &= report(1, "kernel limits", secs(1), kernel_limits);
    ok &= report(2, "derivative oracle", secs(1), derivative_oracle);
    ok &= report(3, "mu* certificate", secs(5), mu_star_certificate);
    ok &= report(4, "convexity boundary", secs(10), convexity_boundary);
    ok &= report(5, "line-fit regression", secs(5), regression_reproduction);

    let start = Instant::now();
    let instances = experiment_one();
    let exp1_time = start.elapsed();
    match instances {
        Ok(instances) => {
            ok &= report(6, "false loop detection", None, || {
                if exp1_time > Duration::from_secs(120) {
                    return Err(format!("experiment took {exp1_time:.2?}, limit 120s"));
                }
                false_loop_detection(&instances).map(|s| format!("{s}; 30 solves in {exp1_time:.2?}"))
            });
            ok &= report(7, "iteration dominance", None, || iteration_dominance(&instances));
        }
        Err(e) => {
            println!("FAIL criterion  6 false loop detection: {e}");
            println!("FAIL criterion  7 iteration dominance: {e}");
            ok = false;
        }
    }

    ok &= report(8, "noisy loop successes", secs(300), noisy_loops);
    ok &= report(9, "gauge and metric suite", secs(5), gauge_and_metrics);
    ok &= report(10, "manifest replay", None, manifest_replay);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
