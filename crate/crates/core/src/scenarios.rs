//! Built-in scenarios and the production-planning example runner.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::adjoint::{
    solve_first_adjoint, solve_second_adjoint, AdjointOptions, Candidate, SolverBackend,
};
use crate::constrained::MultiplierVector;
use crate::error::{Error, Result};
use crate::forward::{simulate_forward, ControlProcess, SpikeWindow};
use crate::grid::{sample_brownian, TimeGrid};
use crate::mc::{block_reduce, Estimate, MeanVar};
use crate::model::{builtin, production_delta_model, production_model, ControlSet, ModelSpec};
use crate::smp_check::{check_maximum_principle, sample_steps};
use crate::stopping::{JumpSchedule, StoppingTimeSpec};

/// Names accepted by [`scenario`].
pub const SCENARIOS: [&str; 8] = [
    "constant",
    "linear",
    "hitting",
    "orders",
    "dual",
    "brute_force",
    "brute_force_flipped",
    "s4_example",
];

/// A model with everything a pipeline needs to run on it.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub x0: Vec<f64>,
    pub grid: TimeGrid,
    pub tau: StoppingTimeSpec,
    /// Adjoint jumps at every coarse point instead of at `τⁿ`.
    pub every_point: bool,
    pub control: ControlProcess,
    pub adjoint: AdjointOptions,
    pub multipliers: Option<MultiplierVector>,
    /// Model whose terminal cost is the constraint function `φ`.
    pub constraint: Option<ModelSpec>,
    /// Spike used by the duality and expansion checks.
    pub spike: SpikeWindow,
    /// Controls compared in the Hamiltonian gap.
    pub control_samples: Vec<Vec<f64>>,
    /// Grid sizes and fine steps for the discretization-gap study.
    pub n_list: Vec<usize>,
    pub fine_steps: usize,
    /// Spike start, value and widths for the variation-order study.
    pub order_start: f64,
    pub order_value: Vec<f64>,
    pub order_eps: Vec<f64>,
    /// `β⁰` is added to the last jump weight instead of scaling the running
    /// cost when adjoints are solved for multipliers.
    pub fold_beta0: bool,
    /// Known first-order adjoint per coarse interval.
    pub oracle_p: Option<Vec<f64>>,
    /// Known value of `J`.
    pub oracle_cost: Option<f64>,
}

impl Scenario {
    fn new(
        name: &str,
        model: ModelSpec,
        x0: Vec<f64>,
        grid: TimeGrid,
        control: ControlProcess,
    ) -> Self {
        let q = model.control_dim();
        let control_samples = model.control_set().sample(11);
        Self {
            name: name.into(),
            x0,
            tau: StoppingTimeSpec::Constant(grid.horizon()),
            every_point: false,
            control,
            adjoint: AdjointOptions::default(),
            multipliers: None,
            constraint: None,
            spike: SpikeWindow::new(
                0.5 * grid.coarse_time(1),
                0.25 * grid.coarse_time(1),
                control_samples[0].clone(),
            ),
            control_samples,
            n_list: vec![4, 8, 16, 32, 64],
            fine_steps: 1024,
            order_start: 0.5 * grid.coarse_time(1),
            order_value: vec![0.0; q],
            order_eps: (4..=9).map(|p| 0.5f64.powi(p)).collect(),
            fold_beta0: false,
            oracle_p: None,
            oracle_cost: None,
            grid,
            model,
        }
    }

    /// Adjoint options for multipliers `β`: jump weights `βʲ` and running-cost
    /// factor `β⁰`, or `β⁰` folded into the last weight.
    pub fn multiplier_options(&self, beta: &MultiplierVector) -> AdjointOptions {
        let mut weights = beta.beta.clone();
        let mut beta0 = beta.beta0;
        if self.fold_beta0 {
            if let Some(last) = weights.last_mut() {
                *last += beta0;
            }
            beta0 = 0.0;
        }
        AdjointOptions {
            weights: Some(weights),
            beta0,
            backend: self.adjoint.backend,
        }
    }

    pub fn schedule<'a>(
        &self,
        disc: &'a crate::stopping::DiscreteStoppingTime,
    ) -> JumpSchedule<'a> {
        if self.every_point {
            JumpSchedule::EveryPoint
        } else {
            JumpSchedule::Stopping(disc)
        }
    }
}

/// Looks up a built-in scenario by name.
pub fn scenario(name: &str) -> Result<Scenario> {
    match name {
        "constant" => Ok(constant_scenario()),
        "linear" => Ok(linear_scenario()),
        "hitting" => Ok(hitting_scenario()),
        "orders" => Ok(orders_scenario()),
        "dual" => Ok(dual_scenario()),
        "brute_force" => Ok(brute_force_scenario(BRUTE_OPTIMUM)),
        "brute_force_flipped" => Ok(brute_force_scenario(BRUTE_WORST)),
        "s4_example" => Ok(build_example_s4(4)?.scenario),
        other => Err(Error::Config(format!(
            "unknown scenario '{other}' (known: {})",
            SCENARIOS.join(", ")
        ))),
    }
}

pub fn constant_scenario() -> Scenario {
    let grid = TimeGrid::uniform(4, 1.0, 8).expect("valid grid");
    let mut s = Scenario::new(
        "constant",
        builtin("constant").expect("registered"),
        vec![0.0],
        grid,
        ControlProcess::Constant(vec![0.5]),
    );
    s.oracle_cost = Some(1.0);
    s
}

pub fn linear_scenario() -> Scenario {
    let grid = TimeGrid::uniform(4, 1.0, 16).expect("valid grid");
    let mut s = Scenario::new(
        "linear",
        builtin("linear").expect("registered"),
        vec![1.0],
        grid,
        ControlProcess::Constant(vec![0.0]),
    );
    s.tau = StoppingTimeSpec::level_crossing(0, 1.3);
    s.spike = SpikeWindow::new(0.3, 0.1, vec![0.5]);
    s.order_value = vec![0.5];
    s
}

/// `dX = u dt + dW`, `Ψ(x) = |x|`, `f ≡ 0`, `τ` the first time `X` reaches 0.
pub fn hitting_model() -> ModelSpec {
    ModelSpec::new(
        "hitting",
        1,
        1,
        ControlSet::interval(-1.0, 1.0),
        |_, _, u, o| o[0] = u[0],
        |_, _, _, o| o[0] = 1.0,
        |_, _, _| 0.0,
        |x| x[0].abs(),
    )
}

pub fn hitting_scenario() -> Scenario {
    let grid = TimeGrid::uniform(4, 1.0, 64).expect("valid grid");
    let mut s = Scenario::new(
        "hitting",
        hitting_model(),
        vec![-0.5],
        grid,
        ControlProcess::Constant(vec![0.2]),
    );
    s.tau = StoppingTimeSpec::level_crossing(0, 0.0);
    s
}

/// Control in both coefficients: `b = ½ sin x + u`, `σ = 0.2 + 0.3u + 0.1 sin x`,
/// `f ≡ 0`, `Ψ(x) = x`.
pub fn orders_model() -> ModelSpec {
    ModelSpec::new(
        "orders",
        1,
        1,
        ControlSet::interval(0.0, 1.0),
        |_, x, u, o| o[0] = 0.5 * x[0].sin() + u[0],
        |_, x, u, o| o[0] = 0.2 + 0.3 * u[0] + 0.1 * x[0].sin(),
        |_, _, _| 0.0,
        |x| x[0],
    )
    .with_drift_x(|_, x, _, o| o[0] = 0.5 * x[0].cos())
    .with_diffusion_x(|_, x, _, o| o[0] = 0.1 * x[0].cos())
    .with_drift_xx(|_, x, _, y, o| o[0] = -0.5 * x[0].sin() * y[0] * y[0])
    .with_diffusion_xx(|_, x, _, y, o| o[0] = -0.1 * x[0].sin() * y[0] * y[0])
}

pub fn orders_scenario() -> Scenario {
    let grid = TimeGrid::uniform(2, 1.0, 512).expect("valid grid");
    let mut s = Scenario::new(
        "orders",
        orders_model(),
        vec![0.0],
        grid,
        ControlProcess::Constant(vec![0.0]),
    );
    s.order_start = 0.125;
    s.order_value = vec![1.0];
    s.spike = SpikeWindow::new(0.125, 0.0625, vec![1.0]);
    s
}

/// `b = sin x + u`, `σ = 0.3 + 0.1u`, `f = u²`, `Ψ(x) = x²`, `U = [0, 2]`.
pub fn dual_model() -> ModelSpec {
    ModelSpec::new(
        "dual",
        1,
        1,
        ControlSet::interval(0.0, 2.0),
        |_, x, u, o| o[0] = x[0].sin() + u[0],
        |_, _, u, o| o[0] = 0.3 + 0.1 * u[0],
        |_, _, u| u[0] * u[0],
        |x| x[0] * x[0],
    )
    .with_drift_x(|_, x, _, o| o[0] = x[0].cos())
    .with_diffusion_x(|_, _, _, o| o[0] = 0.0)
    .with_cost_x(|_, _, _, o| o[0] = 0.0)
    .with_terminal_x(|x, o| o[0] = 2.0 * x[0])
    .with_drift_xx(|_, x, _, y, o| o[0] = -x[0].sin() * y[0] * y[0])
    .with_diffusion_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_cost_xx(|_, _, _, _| 0.0)
    .with_terminal_xx(|_, y| 2.0 * y[0] * y[0])
}

/// Two coarse intervals, `u ≡ 0.5`, `τ` the first time `X` reaches 0.5.
pub fn dual_scenario() -> Scenario {
    let grid = TimeGrid::uniform(2, 1.0, 64).expect("valid grid");
    let mut s = Scenario::new(
        "dual",
        dual_model(),
        vec![0.0],
        grid,
        ControlProcess::Constant(vec![0.5]),
    );
    s.tau = StoppingTimeSpec::level_crossing(0, 0.5);
    s.spike = SpikeWindow::new(0.2, 0.1, vec![1.5]);
    s.order_start = 0.125;
    s.order_value = vec![1.5];
    s
}

/// Running-cost rate of the brute-force scenario: cheap on `[0, ½)`,
/// expensive afterwards.
pub fn brute_force_rate(t: f64) -> f64 {
    if t < 0.5 {
        0.3
    } else {
        1.5
    }
}

/// `U = {0, 1}`, `b = u`, `σ = 0.3`, `f = k(t)u`, `Ψ(x) = −x`, `τ` the first
/// time `X` reaches 0.8, two coarse intervals.
pub fn brute_force_model() -> ModelSpec {
    ModelSpec::new(
        "brute_force",
        1,
        1,
        ControlSet::Finite(vec![vec![0.0], vec![1.0]]),
        |_, _, u, o| o[0] = u[0],
        |_, _, _, o| o[0] = 0.3,
        |t, _, u| brute_force_rate(t) * u[0],
        |x| -x[0],
    )
    .with_drift_x(|_, _, _, o| o[0] = 0.0)
    .with_diffusion_x(|_, _, _, o| o[0] = 0.0)
    .with_cost_x(|_, _, _, o| o[0] = 0.0)
    .with_terminal_x(|_, o| o[0] = -1.0)
    .with_drift_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_diffusion_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_cost_xx(|_, _, _, _| 0.0)
    .with_terminal_xx(|_, _| 0.0)
}

/// Constraint `E[X(t_j)] ≥ level` on the brute-force dynamics.
pub fn brute_force_constraint(level: f64) -> ModelSpec {
    ModelSpec::new(
        "brute_force_constraint",
        1,
        1,
        ControlSet::Finite(vec![vec![0.0], vec![1.0]]),
        |_, _, u, o| o[0] = u[0],
        |_, _, _, o| o[0] = 0.3,
        |_, _, _| 0.0,
        move |x| x[0] - level,
    )
}

pub const BRUTE_OPTIMUM: [f64; 2] = [1.0, 0.0];
pub const BRUTE_WORST: [f64; 2] = [0.0, 1.0];
pub const BRUTE_CONSTRAINT_LEVEL: f64 = 0.6;

/// The four piecewise-constant open-loop candidates, in lexicographic order.
pub fn brute_force_candidates() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
}

pub fn brute_force_scenario(values: [f64; 2]) -> Scenario {
    let grid = TimeGrid::uniform(2, 1.0, 32).expect("valid grid");
    let name = if values == BRUTE_OPTIMUM {
        "brute_force"
    } else {
        "brute_force_flipped"
    };
    let control = ControlProcess::Piecewise(values.iter().map(|&v| vec![v]).collect());
    let mut s = Scenario::new(name, brute_force_model(), vec![0.0], grid, control);
    s.tau = StoppingTimeSpec::level_crossing(0, 0.8);
    s.constraint = Some(brute_force_constraint(BRUTE_CONSTRAINT_LEVEL));
    s.control_samples = vec![vec![0.0], vec![1.0]];
    s.spike = SpikeWindow::new(0.2, 0.1, vec![1.0 - values[0]]);
    s.order_value = vec![1.0 - values[0]];
    s.order_start = 0.125;
    s
}

/// The production-planning example with its printed solution.
#[derive(Clone)]
pub struct ExampleS4 {
    pub n: usize,
    pub scenario: Scenario,
    /// Printed multipliers `β⁰, β¹..β^{N+1}`.
    pub printed: MultiplierVector,
}

impl ExampleS4 {
    /// `p(t) = −(β⁰ + Σ_{j ≥ i} βʲ)` on coarse interval `i`.
    pub fn oracle_p(&self, interval: usize) -> f64 {
        let b = &self.printed;
        -(b.beta0 + b.beta[interval - 1..].iter().sum::<f64>())
    }

    /// Hamiltonian gap `(ũ − u)·p` on interval `i`.
    pub fn oracle_gap(&self, interval: usize, u_tilde: f64, u: f64) -> f64 {
        (u_tilde - u) * self.oracle_p(interval)
    }

    /// Printed optimal control on interval `i`.
    pub fn printed_control(&self, interval: usize) -> f64 {
        if interval <= self.n {
            (2 * interval - 1) as f64 / (4 * self.n) as f64
        } else {
            2.0
        }
    }

    /// Printed second-half state `2t − 4t²/3 − 2/3 + ∫₀ᵗ W ds` given `∫₀ᵗ W ds`.
    pub fn printed_state(t: f64, int_w: f64) -> f64 {
        2.0 * t - 4.0 / 3.0 * t * t - 2.0 / 3.0 + int_w
    }

    /// `E[X(1)]` implied by the dynamics under the printed controls:
    /// `Σ_i u_i/(2N) + 1 − 4/3`.
    pub fn implied_mean_x1(&self) -> f64 {
        let first: f64 = (1..=self.n)
            .map(|i| self.printed_control(i) / (2 * self.n) as f64)
            .sum();
        first + 1.0 - 4.0 / 3.0
    }
}

/// Fine steps per first-half coarse interval of the example grid.
pub const S4_SUBSTEPS: usize = 16;

/// Builds the example in its `δX` form on the grid `i/(2N)`, `i ≤ N`, plus 1.
/// The objective `E[X(1)]` enters as a terminal cost, so `β⁰` is folded into
/// the last jump weight and the running cost carries no weight in the
/// Hamiltonian.
pub fn build_example_s4(n: usize) -> Result<ExampleS4> {
    if n == 0 {
        return Err(Error::InvalidArgument("example needs N >= 1".into()));
    }
    let mut points: Vec<f64> = (0..=n).map(|i| i as f64 / (2 * n) as f64).collect();
    points.push(1.0);
    let grid = TimeGrid::from_points(&points, 1.0 / (2 * n * S4_SUBSTEPS) as f64)?;
    let mut beta = vec![0.0; n];
    beta.push(FRAC_1_SQRT_2);
    let printed = MultiplierVector::supplied(-FRAC_1_SQRT_2, beta);
    let mut ex = ExampleS4 {
        n,
        scenario: Scenario::new(
            "s4_example",
            production_delta_model(),
            vec![0.0],
            grid,
            ControlProcess::Constant(vec![2.0]),
        ),
        printed: printed.clone(),
    };
    let values: Vec<Vec<f64>> = (1..=n + 1).map(|i| vec![ex.printed_control(i)]).collect();
    let oracle: Vec<f64> = (1..=n + 1).map(|i| ex.oracle_p(i)).collect();
    let s = &mut ex.scenario;
    s.control = ControlProcess::Piecewise(values);
    s.every_point = true;
    s.fold_beta0 = true;
    s.adjoint.backend = SolverBackend::ClosedForm;
    s.adjoint = s.multiplier_options(&printed);
    s.oracle_p = Some(oracle);
    s.multipliers = Some(printed);
    s.constraint = Some(production_delta_model());
    s.control_samples = ControlSet::interval(0.0, 2.0).sample(21);
    s.spike = SpikeWindow::new(0.75, 0.1, vec![1.0]);
    s.order_start = 0.75;
    s.order_value = vec![1.0];
    Ok(ex)
}

/// One line of a summary: `name,value,tolerance,pass`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tolerance: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass,
        }
    }
}

/// A mismatch between printed objects, reported rather than failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub name: String,
    pub printed: f64,
    pub implied: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleS4Report {
    /// Printed second-half trajectory at `t = 1`.
    pub printed_x1: Estimate,
    /// `X(1)` of the original dynamics under the printed controls.
    pub simulated_x1: Estimate,
    /// `δX(1)` of the transformed dynamics under the printed controls.
    pub simulated_dx1: Estimate,
    pub checks: Vec<Check>,
    pub discrepancies: Vec<Discrepancy>,
}

impl ExampleS4Report {
    pub fn passes(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Verifies each printed object of the example separately and reports the
/// ones that do not fit together.
pub fn run_example_s4(ex: &ExampleS4, n_paths: usize, seed: u64) -> Result<ExampleS4Report> {
    let s = &ex.scenario;
    let grid = &s.grid;
    let noise = sample_brownian(grid, 1, n_paths, seed)?;

    // (a) printed second-half trajectory at t = 1
    let steps = grid.steps();
    let printed_x1 = block_reduce(
        n_paths,
        MeanVar::new,
        |acc, p| {
            let w = noise.path_values(p);
            let int_w: f64 = (0..steps)
                .map(|k| 0.5 * (w[k] + w[k + 1]) * grid.dt(k))
                .sum();
            acc.push(ExampleS4::printed_state(1.0, int_w));
            Ok(())
        },
        |a, b| a.merge(&b),
    )?
    .estimate();

    let mut checks = vec![Check::new(
        "printed_state_mean_x1",
        printed_x1.mean,
        3.0 * printed_x1.se,
        printed_x1.within(0.0, 3.0),
    )];

    // (b) normalization of the printed multipliers
    let norm = ex.printed.norm_sq();
    checks.push(Check::new(
        "multiplier_norm_sq",
        norm,
        1e-10,
        ex.printed.is_normalized(),
    ));

    // (c) adjoints against the oracle, deterministic backend
    let states = simulate_forward(&s.model, &s.control, &noise, grid, &s.x0)?;
    let cand = Candidate {
        states: &states,
        noise: &noise,
        grid,
    };
    let first = solve_first_adjoint(&s.model, cand, JumpSchedule::EveryPoint, &s.adjoint)?;
    let second =
        solve_second_adjoint(&s.model, cand, JumpSchedule::EveryPoint, &first, &s.adjoint)?;
    let mut p_err = 0.0f64;
    let mut pq_abs = 0.0f64;
    for path in 0..n_paths {
        for k in 0..steps {
            let i = grid.interval_of_step(k);
            p_err = p_err.max((first.p_on_step(grid, path, k)[0] - ex.oracle_p(i)).abs());
            pq_abs = pq_abs
                .max(first.q(path, k)[0].abs())
                .max(second.big_p_on_step(grid, path, k)[0].abs())
                .max(second.big_q(path, k)[0].abs());
        }
    }
    checks.push(Check::new(
        "adjoint_p_vs_oracle",
        p_err,
        1e-8,
        p_err <= 1e-8,
    ));
    checks.push(Check::new(
        "adjoint_qPQ_vs_zero",
        pq_abs,
        1e-8,
        pq_abs <= 1e-8,
    ));

    // (d) Hamiltonian gap on the control grid, and against (ũ − u)p
    let sampled = sample_steps(grid, steps);
    let gap = check_maximum_principle(
        &s.model,
        cand,
        &first,
        &second,
        &s.control_samples,
        &sampled,
        0.0,
    )?;
    checks.push(Check::new(
        "hamiltonian_gap_min",
        gap.min_gap,
        -1e-8,
        gap.min_gap >= -1e-8,
    ));
    let mut formula_err = 0.0f64;
    for r in &gap.rows {
        let i = grid.interval_of_step(r.step);
        let oracle = ex.oracle_gap(i, ex.printed_control(i), s.control_samples[r.u_index][0]);
        formula_err = formula_err
            .max((r.min_gap - oracle).abs())
            .max((r.mean_gap - oracle).abs());
    }
    checks.push(Check::new(
        "hamiltonian_gap_vs_formula",
        formula_err,
        1e-8,
        formula_err <= 1e-8,
    ));

    // (e) cross-checks that expose the printed inconsistencies
    let simulated_dx1 = terminal_mean(&states, grid.steps())?;
    let original = production_model();
    let orig_states = simulate_forward(&original, &s.control, &noise, grid, &[0.0, 0.0])?;
    let simulated_x1 = terminal_mean(&orig_states, grid.steps())?;
    let implied = ex.implied_mean_x1();
    let first_half_integral: f64 = (1..=ex.n)
        .map(|i| ex.printed_control(i) / (2 * ex.n) as f64)
        .sum();
    let discrepancies = vec![
        Discrepancy {
            name: "first_half_control_vs_printed_state".into(),
            printed: 0.0,
            implied,
            note: format!(
                "printed state has E X(1) = 0; the printed first-half control gives E X(1) = {implied:.6} \
                 (simulated {:.6} ± {:.6}); the printed state needs a first-half control integral of 1/3, \
                 the printed control integrates to {first_half_integral:.6}",
                simulated_x1.mean, simulated_x1.se
            ),
        },
        Discrepancy {
            name: "beta0_sign".into(),
            printed: ex.printed.beta0,
            implied: 0.0,
            note: "printed beta0 is negative; the theorem asserts beta0 >= 0".into(),
        },
    ];
    Ok(ExampleS4Report {
        printed_x1,
        simulated_x1,
        simulated_dx1,
        checks,
        discrepancies,
    })
}

fn terminal_mean(states: &crate::forward::StateBatch, last: usize) -> Result<Estimate> {
    Ok(block_reduce(
        states.n_paths(),
        MeanVar::new,
        |acc, p| {
            acc.push(states.state(p, last)[0]);
            Ok(())
        },
        |a, b| a.merge(&b),
    )?
    .estimate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_every_name() {
        for name in SCENARIOS {
            let s = scenario(name).unwrap();
            s.control.validate(&s.grid).unwrap();
            assert_eq!(s.x0.len(), s.model.state_dim());
        }
        assert!(matches!(scenario("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn example_grid_and_controls() {
        let ex = build_example_s4(4).unwrap();
        let g = &ex.scenario.grid;
        assert_eq!(g.n(), 5);
        assert_eq!(g.coarse_times(), vec![0.0, 0.125, 0.25, 0.375, 0.5, 1.0]);
        assert_eq!(ex.printed_control(5), 2.0);
        assert_eq!(ex.printed_control(1), 1.0 / 16.0);
        let mut u = [0.0];
        let k = g.step_containing(0.75);
        ex.scenario.control.eval(g, k, &[0.0], &mut u);
        assert_eq!(u[0], 2.0);
        assert!(ex.oracle_p(5).abs() < 1e-15);
        assert!((ex.implied_mean_x1() + 5.0 / 24.0).abs() < 1e-12);
        assert!(build_example_s4(0).is_err());
    }

    #[test]
    fn example_checks_pass_with_flags() {
        let ex = build_example_s4(2).unwrap();
        let r = run_example_s4(&ex, 2000, 3).unwrap();
        assert!(r.passes(), "{:?}", r.checks);
        assert_eq!(r.discrepancies.len(), 2);
        assert!(r.simulated_x1.within(ex.implied_mean_x1(), 4.0));
        assert!((r.simulated_x1.mean - r.simulated_dx1.mean).abs() < 5.0 * r.simulated_x1.se);
    }
}
