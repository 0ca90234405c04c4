//! Acceptance suite: eight criteria, one PASS/FAIL line each. Runs without
//! the libtest harness so the lines are always printed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stopping_smp::adjoint::{
    solve_first_adjoint, solve_second_adjoint, AdjointOptions, Candidate, SolverBackend,
};
use stopping_smp::cli::run_cli;
use stopping_smp::constrained::{
    multipliers_from_theta, slackness, theta_sweep, ConstrainedProblem, MultiplierVector,
    DEFAULT_GAMMAS,
};
use stopping_smp::forward::{simulate_forward, ControlProcess, SpikeWindow};
use stopping_smp::grid::{sample_brownian, TimeGrid};
use stopping_smp::mc::MeanVar;
use stopping_smp::model::{builtin, BUILTIN_MODELS};
use stopping_smp::scenarios::{
    brute_force_candidates, brute_force_constraint, brute_force_model, brute_force_rate,
    build_example_s4, dual_model, hitting_model, orders_model, run_example_s4,
    BRUTE_CONSTRAINT_LEVEL,
};
use stopping_smp::smp_check::{
    check_duality, check_maximum_principle, check_orders, sample_steps, simulate_variations,
    OrderStudy, Rate,
};
use stopping_smp::stopping::{
    convergence_gap, discretize_tau, evaluate_stopping_time, GapStudy, JumpSchedule, PhiReport,
    StoppingTimeSpec,
};
use stopping_smp::Error;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Discretization gap on `dX = u dt + dW`, `Ψ = |x|`, `τ` hitting 0.
fn criterion_1() -> Verdict {
    let start = Instant::now();
    let study = GapStudy {
        n_list: vec![4, 8, 16, 32, 64],
        n_paths: 20_000,
        seed: 11,
        horizon: 1.0,
        fine_steps: 1024,
    };
    let tau = StoppingTimeSpec::level_crossing(0, 0.0);
    let table = convergence_gap(
        &hitting_model(),
        &ControlProcess::Constant(vec![0.2]),
        &tau,
        &[-0.5],
        &study,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let slope = table.slope.map_or(f64::NAN, |f| f.slope);
    let trend = table.scaled_trend.map_or(f64::NAN, |f| f.slope);
    let eligible = table.rows.iter().filter(|r| r.eligible).count();
    let pass = slope <= -0.4 && trend <= 0.0 && eligible >= 2 && secs(elapsed) <= 60.0;
    verdict(
        pass,
        format!(
            "slope {slope:.3} (<= -0.4), sqrt(n)-scaled trend {trend:.3} (<= 0), {eligible} eligible n, {:.1}s (<= 60s)",
            secs(elapsed)
        ),
    )
}

/// Variation orders with control in both coefficients.
fn criterion_2() -> Verdict {
    let start = Instant::now();
    let grid = TimeGrid::uniform(2, 1.0, 512).unwrap();
    let study = OrderStudy {
        start: 0.125,
        value: vec![1.0],
        eps: (4..=9).map(|p| 0.5f64.powi(p)).collect(),
        n_paths: 50_000,
        seed: 12,
    };
    let rep = check_orders(
        &orders_model(),
        &ControlProcess::Constant(vec![0.0]),
        &[0.0],
        &grid,
        &study,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let slope = |r: &Rate| r.slope().unwrap_or(f64::NAN);
    let (sy, sz, sr) = (
        slope(&rep.rates[0]),
        slope(&rep.rates[1]),
        slope(&rep.rates[3]),
    );
    let pass = (0.35..=0.65).contains(&sy)
        && (0.85..=1.15).contains(&sz)
        && sr >= 1.1
        && secs(elapsed) <= 120.0;
    verdict(
        pass,
        format!(
            "slope E|y| {sy:.3} in [0.35,0.65], E|z| {sz:.3} in [0.85,1.15], remainder {sr:.3} (>= 1.1), {:.1}s (<= 120s)",
            secs(elapsed)
        ),
    )
}

/// Duality identity on the nonlinear scalar model.
fn criterion_3() -> Verdict {
    let model = dual_model();
    let grid = TimeGrid::uniform(2, 1.0, 64).unwrap();
    let noise = sample_brownian(&grid, 1, 50_000, 13).unwrap();
    let states = simulate_forward(
        &model,
        &ControlProcess::Constant(vec![0.5]),
        &noise,
        &grid,
        &[0.0],
    )
    .unwrap();
    let tau =
        evaluate_stopping_time(&StoppingTimeSpec::level_crossing(0, 0.5), &states, &grid).unwrap();
    let disc = discretize_tau(&tau, &grid).unwrap();
    let cand = Candidate {
        states: &states,
        noise: &noise,
        grid: &grid,
    };
    let opts = AdjointOptions::with_backend(SolverBackend::Regression { degree: 2 });
    let first = solve_first_adjoint(&model, cand, JumpSchedule::Stopping(&disc), &opts).unwrap();
    let var = simulate_variations(&model, cand, &SpikeWindow::new(0.2, 0.1, vec![1.5])).unwrap();
    let c = check_duality(&model, cand, &first, &var).unwrap();
    let z = c.residual.mean.abs() / c.residual.se;
    verdict(
        c.agrees(3.0),
        format!(
            "lhs {:.5} ± {:.5}, rhs {:.5} ± {:.5}, residual {:.5} ± {:.5} ({z:.2} SE, <= 3)",
            c.lhs.mean, c.lhs.se, c.rhs.mean, c.rhs.se, c.residual.mean, c.residual.se
        ),
    )
}

/// Closed-form and regression adjoints on every eligible registry model.
fn criterion_4() -> Verdict {
    let grid = TimeGrid::uniform(4, 1.0, 16).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in BUILTIN_MODELS {
        let model = builtin(name).unwrap();
        let x0 = vec![0.5; model.state_dim()];
        let u = ControlProcess::Constant(model.control_set().sample(3)[1].clone());
        let mut dists = Vec::new();
        let mut eligible = true;
        for (n_paths, limit) in [(10_000, 0.05), (100_000, 0.02)] {
            let noise = sample_brownian(&grid, model.noise_dim(), n_paths, 14).unwrap();
            let states = simulate_forward(&model, &u, &noise, &grid, &x0).unwrap();
            let disc = discretize_tau(&vec![1.0; n_paths], &grid).unwrap();
            let cand = Candidate {
                states: &states,
                noise: &noise,
                grid: &grid,
            };
            let sched = JumpSchedule::Stopping(&disc);
            let closed = match solve_first_adjoint(
                &model,
                cand,
                sched,
                &AdjointOptions::with_backend(SolverBackend::ClosedForm),
            ) {
                Ok(a) => a,
                Err(Error::BackendRefused(_)) => {
                    eligible = false;
                    break;
                }
                Err(e) => panic!("{name}: {e}"),
            };
            let regress =
                solve_first_adjoint(&model, cand, sched, &AdjointOptions::default()).unwrap();
            let d = closed.sup_distance(&regress);
            pass &= d <= limit;
            dists.push(format!("{d:.2e}@{n_paths}"));
        }
        if eligible {
            parts.push(format!("{name} {}", dists.join(" ")));
        } else {
            parts.push(format!("{name} not eligible"));
        }
    }
    let any = parts.iter().any(|p| !p.ends_with("not eligible"));
    verdict(
        pass && any,
        format!(
            "sup distance (<= 0.05 @1e4, <= 0.02 @1e5): {}",
            parts.join("; ")
        ),
    )
}

/// Production-planning example at N = 4.
fn criterion_5() -> Verdict {
    let ex = build_example_s4(4).unwrap();
    let rep = run_example_s4(&ex, 20_000, 7).unwrap();
    let get = |n: &str| rep.checks.iter().find(|c| c.name == n).unwrap();
    let a = get("printed_state_mean_x1");
    let b = (ex.printed.norm_sq() - 1.0).abs();
    let c1 = get("adjoint_p_vs_oracle");
    let c2 = get("adjoint_qPQ_vs_zero");
    let d = get("hamiltonian_gap_min");
    let flagged: Vec<&str> = rep.discrepancies.iter().map(|d| d.name.as_str()).collect();
    let e =
        flagged.contains(&"first_half_control_vs_printed_state") && flagged.contains(&"beta0_sign");
    let pass = a.pass && b <= 1e-10 && c1.pass && c2.pass && d.pass && e;
    verdict(
        pass,
        format!(
            "(a) E X(1) {:.4} ± {:.4} (3 SE), (b) |norm-1| {b:.1e}, (c) p err {:.1e}, q/P/Q {:.1e}, (d) min gap {:.1e}, (e) flagged {flagged:?}",
            rep.printed_x1.mean, rep.printed_x1.se, c1.value, c2.value, d.value
        ),
    )
}

/// Exhaustive Jⁿ for the four brute-force candidates, computed pathwise from
/// the raw increments independently of the library cost code.
fn brute_force_oracle(grid: &TimeGrid, noise: &stopping_smp::grid::BrownianBatch) -> Vec<Vec<f64>> {
    let steps = grid.steps();
    brute_force_candidates()
        .iter()
        .map(|vals| {
            (0..noise.n_paths())
                .map(|p| {
                    let dw = noise.path_increments(p);
                    let mut x = 0.0;
                    let mut run = 0.0;
                    let mut path = vec![0.0];
                    for k in 0..steps {
                        let u = vals[grid.interval_of_step(k) - 1];
                        let dt = grid.dt(k);
                        run += brute_force_rate(grid.time(k)) * u * dt;
                        x += u * dt + 0.3 * dw[k];
                        path.push(x);
                    }
                    let hit = (0..=steps)
                        .find(|&k| path[k] >= 0.8)
                        .map_or(1.0, |k| grid.time(k));
                    let i = if hit < 0.5 { 1 } else { 2 };
                    run - path[grid.coarse_index(i)]
                })
                .collect()
        })
        .collect()
}

/// Maximum-principle discrimination in the brute-force scenario.
fn criterion_6() -> Verdict {
    let grid = TimeGrid::uniform(2, 1.0, 32).unwrap();
    let noise = sample_brownian(&grid, 1, 100_000, 16).unwrap();
    let costs = brute_force_oracle(&grid, &noise);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let means: Vec<f64> = costs.iter().map(|c| mean(c)).collect();
    let best = (0..4)
        .min_by(|&a, &b| means[a].total_cmp(&means[b]))
        .unwrap();
    let worst = (0..4)
        .max_by(|&a, &b| means[a].total_cmp(&means[b]))
        .unwrap();
    let separation = (0..4)
        .filter(|&c| c != best)
        .map(|c| {
            let mut mv = MeanVar::new();
            costs[c]
                .iter()
                .zip(&costs[best])
                .for_each(|(a, b)| mv.push(a - b));
            mv.mean() / mv.se()
        })
        .fold(f64::INFINITY, f64::min);

    let model = brute_force_model();
    let tau_spec = StoppingTimeSpec::level_crossing(0, 0.8);
    let steps = sample_steps(&grid, 16);
    let controls = vec![vec![0.0], vec![1.0]];
    let check = |c: usize| {
        let vals = brute_force_candidates()[c];
        let ctl = ControlProcess::Piecewise(vals.iter().map(|&v| vec![v]).collect());
        let states = simulate_forward(&model, &ctl, &noise, &grid, &[0.0]).unwrap();
        let tau = evaluate_stopping_time(&tau_spec, &states, &grid).unwrap();
        let disc = discretize_tau(&tau, &grid).unwrap();
        let cand = Candidate {
            states: &states,
            noise: &noise,
            grid: &grid,
        };
        let opts = AdjointOptions::default();
        let first =
            solve_first_adjoint(&model, cand, JumpSchedule::Stopping(&disc), &opts).unwrap();
        let second =
            solve_second_adjoint(&model, cand, JumpSchedule::Stopping(&disc), &first, &opts)
                .unwrap();
        check_maximum_principle(&model, cand, &first, &second, &controls, &steps, 3.0).unwrap()
    };
    let on_best = check(best);
    let on_worst = check(worst);
    let pass =
        separation >= 5.0 && on_best.violation_frac <= 0.01 && on_worst.max_row_violation >= 0.2;
    verdict(
        pass,
        format!(
            "costs {:?}, optimum {:?} worst {:?}, separation {separation:.1} SE (>= 5), violation on optimum {:.4} (<= 0.01), worst row violation on worst {:.3} (>= 0.2)",
            means.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>(),
            brute_force_candidates()[best],
            brute_force_candidates()[worst],
            on_best.violation_frac,
            on_worst.max_row_violation
        ),
    )
}

/// Multiplier normalization, slackness signs and the θ sweep.
fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst_norm = 0.0f64;
    let mut triples = 0;
    while triples < 100 {
        let j = rng.random_range(-1.0..1.0);
        let n = rng.random_range(1..8);
        let ephi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = 10f64.powf(rng.random_range(-4.0..-0.5));
        match multipliers_from_theta(j, &ephi, theta) {
            Ok(b) => {
                worst_norm = worst_norm.max((b.norm_sq() - 1.0).abs());
                triples += 1;
            }
            Err(Error::DegeneratePenalty) => continue,
            Err(e) => panic!("{e}"),
        }
    }
    let norm_ok = worst_norm <= 1e-10;

    // hand-computed rows: printed example normalization, inactive constraint
    // with zero multiplier, active constraint with negative multiplier
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut printed = vec![0.0; 4];
    printed.push(h);
    let row1 = MultiplierVector::supplied(-h, printed).is_normalized();
    let phi = PhiReport {
        mean: vec![0.25, 0.0],
        se: vec![0.01, 0.01],
        n_paths: 1000,
    };
    let rows = slackness(
        &MultiplierVector::supplied(h, vec![0.0, -h]),
        &phi,
        &DEFAULT_GAMMAS,
    )
    .unwrap();
    let row2 = rows[0].products.iter().all(|&v| v == 0.0) && rows[0].pass;
    let row3 = rows[1].products[1] > 0.0 && rows[1].pass;
    let rows_ok = row1 && row2 && row3;

    let model = brute_force_model();
    let constraint = brute_force_constraint(BRUTE_CONSTRAINT_LEVEL);
    let tau = StoppingTimeSpec::level_crossing(0, 0.8);
    let grid = TimeGrid::uniform(2, 1.0, 32).unwrap();
    let noise = sample_brownian(&grid, 1, 20_000, 18).unwrap();
    let mut problem = ConstrainedProblem {
        objective: &model,
        constraint: &constraint,
        tau: &tau,
        grid: &grid,
        noise: &noise,
        x0: &[0.0],
        j_ref: 0.0,
    };
    let incumbent = vec![vec![1.0], vec![0.0]];
    problem.j_ref = problem
        .evaluate(&ControlProcess::Piecewise(incumbent.clone()))
        .unwrap()
        .cost
        .estimate;
    let sweep = theta_sweep(
        &problem,
        &incumbent,
        &[vec![0.0], vec![1.0]],
        &[1e-1, 1e-2, 1e-3, 1e-4],
        64,
    )
    .unwrap();
    let all_have = sweep.rows.iter().all(|r| r.multipliers.is_some());
    let sweep_ok = all_have && sweep.signs_hold();
    let trace: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| match &r.multipliers {
            Some(b) => format!(
                "θ={:.0e}: β0 {:.3} β {:?}",
                r.theta,
                b.beta0,
                b.beta
                    .iter()
                    .map(|v| (v * 1e3).round() / 1e3)
                    .collect::<Vec<_>>()
            ),
            None => format!("θ={:.0e}: none", r.theta),
        })
        .collect();
    verdict(
        norm_ok && rows_ok && sweep_ok,
        format!(
            "max |norm-1| over 100 triples {worst_norm:.1e}, slackness rows {row1}/{row2}/{row3}, sweep [{}]",
            trace.join("; ")
        ),
    )
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Byte-identical CSVs across reruns and thread counts.
fn criterion_8() -> Verdict {
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--scenario", "linear", "--paths", "300"],
        vec!["cost", "--scenario", "hitting", "--paths", "3000"],
        vec!["convergence", "--scenario", "hitting", "--paths", "2000"],
        vec!["adjoint", "--scenario", "dual", "--paths", "1000"],
        vec!["check-smp", "--scenario", "brute_force", "--paths", "3000"],
        vec!["check-orders", "--scenario", "orders", "--paths", "500"],
        vec!["check-duality", "--scenario", "dual", "--paths", "3000"],
        vec![
            "check-constrained",
            "--scenario",
            "brute_force",
            "--paths",
            "1000",
            "--theta-sweep",
        ],
        vec!["example-s4", "--N", "2", "--paths", "1000"],
    ];
    let root = tempfile::tempdir().unwrap();
    let mut files = 0;
    let mut mismatched = Vec::new();
    for (i, cmd) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for (run, threads) in ["1", "4", "4"].iter().enumerate() {
            let dir = root.path().join(format!("{i}-{run}"));
            let mut argv = vec!["stopping-smp"];
            argv.extend(cmd.iter().copied());
            let dir_s = dir.to_string_lossy().into_owned();
            argv.extend(["--seed", "5", "--threads", threads, "--out", &dir_s]);
            let code = run_cli(argv);
            assert!(code == 0 || code == 1, "{cmd:?} exited with {code}");
            outputs.push(read_dir_sorted(&dir));
        }
        files += outputs[0].len();
        if outputs[1] != outputs[0] || outputs[2] != outputs[0] {
            mismatched.push(cmd[0]);
        }
    }
    verdict(
        mismatched.is_empty() && files > 0,
        format!(
            "{} commands, {files} CSVs compared across 1/4/4 threads, mismatches {mismatched:?}",
            commands.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 discretization gap", criterion_1),
        ("2 variation orders", criterion_2),
        ("3 duality identity", criterion_3),
        ("4 backend equivalence", criterion_4),
        ("5 example reproduction", criterion_5),
        ("6 checker discrimination", criterion_6),
        ("7 constrained checker", criterion_7),
        ("8 determinism", criterion_8),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {name}: {tag} [{:.1}s] {}",
            secs(start.elapsed()),
            v.detail
        );
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
