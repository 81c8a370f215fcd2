//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};

use netsir::analysis::{build_m, diagonal_lyapunov, effective_r_trace, eradication_certificate};
use netsir::control::{run_controlled, ControlPolicy};
use netsir::estimator::{gain_sweep, run_observer, ObserverGain, SweepOutcome};
use netsir::model::simulate;
use netsir::numerics::{general_eigenvalues, spectral_radius, symmetric_eigenvalues, DenseMatrix, EIGEN_TOL};
use netsir::observability::observability_at_zero;
use netsir::scenario::{europe, scalar_toy};
use netsir::synthesis::{
    solve_feasibility, verify_certificate, Candidate, GainStructure, Infeasibility, LmiProblem, SolverOptions,
};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn simplex_and_monotonicity() -> Outcome {
    let s = europe();
    let traj = simulate(&s.model, &s.initial, 1000).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut check = |model: &netsir::model::NetworkModel, traj: &netsir::model::Trajectory, tag: &str| -> Result<(), String> {
        for pair in traj.states.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            worst = worst.max(b.simplex_deviation());
            ensure!(b.simplex_deviation() <= 1e-12, "{tag}: simplex deviation {:e} at t={}", b.simplex_deviation(), b.t);
            for i in 0..model.nodes() {
                ensure!(b.s[i] <= a.s[i], "{tag}: s increased at t={} node {i}", b.t);
                ensure!(b.r[i] >= a.r[i], "{tag}: r decreased at t={} node {i}", b.t);
            }
        }
        Ok(())
    };
    check(&s.model, &traj, "europe")?;
    for seed in 0..100 {
        let (model, state) = common::random_instance(seed);
        let traj = simulate(&model, &state, 1000).map_err(|e| e.to_string())?;
        check(&model, &traj, &format!("random seed {seed}"))?;
    }
    Ok(format!("europe T=1000 + 100 random models, max deviation {worst:.2e}"))
}

fn peak_matches_threshold_crossing() -> Outcome {
    let s = europe();
    let traj = simulate(&s.model, &s.initial, 500).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for k in 0..s.model.viruses() {
        let trace = effective_r_trace(&s.model, &traj, k).map_err(|e| e.to_string())?;
        let peak = traj.peak_time(k).ok_or(format!("virus {}: no peak", k + 1))?;
        let crossing = trace.threshold_crossing.ok_or(format!("virus {}: no crossing", k + 1))?;
        ensure!(peak.abs_diff(crossing) <= 1, "virus {}: peak {peak} vs crossing {crossing}", k + 1);
        detail.push(format!("virus {}: peak {peak}, crossing {crossing}", k + 1));
    }
    Ok(detail.join("; "))
}

fn observability_rank() -> Outcome {
    let s = europe();
    let full = observability_at_zero(&s.model).map_err(|e| e.to_string())?;
    ensure!(full.numerical_rank == 10, "rank {} != 10", full.numerical_rank);
    let degenerate = s.model.with_gamma(1, 4, 0.2).map_err(|e| e.to_string())?;
    let lost = observability_at_zero(&degenerate).map_err(|e| e.to_string())?;
    ensure!(lost.numerical_rank <= 9, "rank {} with equal healing at DE", lost.numerical_rank);
    Ok(format!("rank {} (distinct), {} (equal at {})", full.numerical_rank, lost.numerical_rank, s.model.labels()[4]))
}

fn observer_convergence() -> Outcome {
    let s = europe();
    let traj = simulate(&s.model, &s.initial, 500).map_err(|e| e.to_string())?;
    let gain = s.observer_gain().ok_or("no gains")?.map_err(|e| e.to_string())?;
    let init = s.observer_initial().ok_or("no observer")?;
    let (_, trace) = run_observer(&s.model, &gain, &traj, &init).map_err(|e| e.to_string())?;
    let worst = trace.aggregate.iter().copied().fold(0.0f64, f64::max);
    ensure!(worst < 0.01, "aggregate error reaches {worst:e}");
    let err = trace.virus_error(0);
    let t_err = err.iter().position(|v| *v < 1e-3).ok_or("virus-1 error never below 1e-3")?;
    let total: Vec<f64> = traj.states.iter().map(|st| st.x[0].iter().sum()).collect();
    let t_inf = total.iter().position(|v| *v < 1e-3).ok_or("virus-1 infection never below 1e-3")?;
    ensure!(t_err < t_inf, "error settles at {t_err}, infection at {t_inf}");
    Ok(format!("max aggregate {worst:.3e}; virus 1 error < 1e-3 at t={t_err}, infection at t={t_inf}"))
}

fn gain_scaling() -> Outcome {
    let s = europe();
    let traj = simulate(&s.model, &s.initial, 500).map_err(|e| e.to_string())?;
    let init = s.observer_initial().ok_or("no observer")?;
    let base = ObserverGain::uniform(s.model.viruses(), s.model.nodes(), 1.0).map_err(|e| e.to_string())?;
    let points = gain_sweep(&s.model, &traj, &init, &base, &[1.0, 3.5], 0.01).map_err(|e| e.to_string())?;
    ensure!(matches!(points[0].outcome, SweepOutcome::Converged { .. }), "eta=1: {:?}", points[0].outcome);
    ensure!(matches!(points[1].outcome, SweepOutcome::Diverged { .. }), "eta=3.5: {:?}", points[1].outcome);
    Ok(format!("eta=1 {:?}, eta=3.5 {:?}", points[0].outcome, points[1].outcome))
}

fn lmi_synthesis() -> Outcome {
    let toy = scalar_toy();
    let problem = LmiProblem::for_virus(&toy.model, 0, 0.5, 0.1).map_err(|e| e.to_string())?;
    let cert = solve_feasibility(&problem, &SolverOptions::default()).map_err(|e| e.to_string())?;
    ensure!(cert.feasible && cert.lambda_max_f <= -1e-9, "scalar: feasible={} lambda_max={:e}", cert.feasible, cert.lambda_max_f);
    let closed = problem.plant[(0, 0)] - cert.gain[(0, 0)] * problem.output[(0, 0)];
    ensure!(closed.abs() < 1.0, "|M - LC| = {closed}");

    let hopeless = LmiProblem::for_virus(&toy.model, 0, 0.5, 1.0).map_err(|e| e.to_string())?;
    let refused = solve_feasibility(&hopeless, &SolverOptions::default()).map_err(|e| e.to_string())?;
    ensure!(
        !refused.feasible && refused.infeasibility == Some(Infeasibility::DiagonalBlockContradiction),
        "l=1 not reported as contradiction: {:?}",
        refused.infeasibility
    );

    let mut rng = common::rng(6);
    let mut feasible = 0;
    for case in 0..50 {
        let n = rng.random_range(2..=3);
        let plant = common::random_nonnegative(&mut rng, n).scale(rng.random_range(0.1..0.6));
        let output = DenseMatrix::from_diag(&(0..n).map(|_| rng.random_range(0.1..=1.0)).collect::<Vec<_>>());
        let problem = LmiProblem::new(plant, output, rng.random_range(0.1..=1.0), rng.random_range(0.0..0.8))
            .map_err(|e| e.to_string())?;
        let options = SolverOptions {
            structure: GainStructure::Full,
            ..SolverOptions::default()
        };
        let cert = solve_feasibility(&problem, &options).map_err(|e| e.to_string())?;
        let report = verify_certificate(&problem, &cert.q, Candidate::Multiplier(&cert.r)).map_err(|e| e.to_string())?;
        ensure!(report.agree, "case {case}: Schur and block forms disagree: {report:?}");
        if cert.feasible {
            feasible += 1;
            ensure!(report.meets_margin, "case {case}: certificate misses the margin");
        }
    }
    Ok(format!(
        "scalar L={:.4}, |M-LC|={:.4}; l=1 refused; 50 random instances agree ({feasible} feasible)",
        cert.gain[(0, 0)],
        closed.abs()
    ))
}

fn feedback_control() -> Outcome {
    let s = europe();
    let m = s.model.viruses();
    let run = run_controlled(&s.model, &s.initial, &ControlPolicy::true_state(m), 200).map_err(|e| e.to_string())?;
    for d in &run.decay {
        ensure!(d.violations_2.is_empty(), "virus {}: 2-norm bound fails at {:?}", d.virus + 1, d.violations_2);
    }
    let gain = s.observer_gain().ok_or("no gains")?.map_err(|e| e.to_string())?;
    let init = s.observer_initial().ok_or("no observer")?;
    let est = run_controlled(&s.model, &s.initial, &ControlPolicy::estimated_state(m, gain, init), 200)
        .map_err(|e| e.to_string())?;
    let last = est.trajectory.states.last().ok_or("empty run")?;
    let mut detail = Vec::new();
    for k in 0..m {
        let total: f64 = last.x[k].iter().sum();
        ensure!(total < 1e-6, "estimated mode, virus {}: sum x[200] = {total:e}", k + 1);
        detail.push(format!("{total:.1e}"));
    }
    Ok(format!("true-state decay holds; estimated-state sum x[200] = {}", detail.join(", ")))
}

fn spectral_oracle() -> Outcome {
    let mut rng = common::rng(8);
    let mut issued = 0;
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(1..=6);
        let m = common::random_nonnegative(&mut rng, n);
        let rho = spectral_radius(&m, EIGEN_TOL).map_err(|e| e.to_string())?.spectral_radius;
        let modulus = general_eigenvalues(&m).map_err(|e| e.to_string())?.iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max((rho - modulus).abs());
        ensure!((rho - modulus).abs() <= 1e-8, "case {case}: {rho} vs {modulus}");
        if rho < 1.0 {
            if let Ok(cert) = diagonal_lyapunov(&m) {
                issued += 1;
                let pd = DenseMatrix::from_diag(&cert.p);
                let dec = m.transpose().matmul(&pd.matmul(&m).unwrap()).unwrap().sub(&pd).unwrap();
                let top = symmetric_eigenvalues(&dec).map_err(|e| e.to_string())?.into_iter().fold(f64::MIN, f64::max);
                ensure!(top < 0.0 && cert.p.iter().all(|p| *p > 0.0), "case {case}: certificate fails, top {top:e}");
            }
        }
    }
    let s = europe();
    for k in 0..s.model.viruses() {
        let cert = eradication_certificate(&s.model, k).map_err(|e| e.to_string())?;
        let m = build_m(&s.model, k).map_err(|e| e.to_string())?;
        let modulus = general_eigenvalues(&m).map_err(|e| e.to_string())?.iter().map(|z| z.norm()).fold(0.0, f64::max);
        ensure!((cert.rho_m - modulus).abs() <= 1e-8, "europe virus {}: {} vs {modulus}", k + 1, cert.rho_m);
    }
    Ok(format!("200 random matrices, max gap {worst:.1e}; {issued} Lyapunov certificates verified"))
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_netsir");
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&root).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            names.push(path);
        }
    }
    names.sort();
    for scenario in &names {
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let out = Command::new(bin)
                .args(["run", "--gnuplot-script", "--scenario"])
                .arg(scenario)
                .arg("--out")
                .arg(dir.path())
                .env_remove("NETSIR_OUT_DIR")
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(out.status.success(), "{}: {}", scenario.display(), String::from_utf8_lossy(&out.stderr));
            let mut files = Vec::new();
            for entry in std::fs::read_dir(dir.path()).map_err(|e| e.to_string())? {
                let path = entry.map_err(|e| e.to_string())?.path();
                files.push((path.file_name().unwrap().to_owned(), std::fs::read(&path).map_err(|e| e.to_string())?));
            }
            files.sort();
            outputs.push(files);
        }
        ensure!(outputs[0] == outputs[1], "{}: outputs differ between runs", scenario.display());
    }
    Ok(format!("{} shipped scenarios reproduce byte-for-byte", names.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("simplex invariance and monotone compartments", simplex_and_monotonicity),
        ("infection peak at effective reproduction threshold", peak_matches_threshold_crossing),
        ("observability rank", observability_rank),
        ("observer convergence on the European network", observer_convergence),
        ("gain scaling convergence and divergence", gain_scaling),
        ("LMI observer synthesis", lmi_synthesis),
        ("feedback control decay", feedback_control),
        ("spectral radius and Lyapunov certificates", spectral_oracle),
        ("CLI determinism", cli_determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match result {
            Ok(detail) => println!("[PASS] {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
