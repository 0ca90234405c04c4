//! Stopping times, the grid-rounded stopping time `τⁿ`, both cost functionals
//! and the discretization-gap study.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::forward::{simulate_path, ControlProcess, StateBatch};
use crate::grid::{BrownianBatch, TimeGrid};
use crate::mc::{block_reduce, fit_loglog, Estimate, LineFit, MeanVar};
use crate::model::ModelSpec;

pub type ObservableFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// How `τ` is produced on each path.
#[derive(Clone)]
pub enum StoppingTimeSpec {
    /// `τ ≡ c`.
    Constant(f64),
    /// `τ = min{s_k : g(s_k, X(s_k)) ≥ 0} ∧ T`, monitored on the fine grid.
    Hitting(ObservableFn),
    /// Externally supplied, one value per path.
    PerPath(Vec<f64>),
}

impl fmt::Debug for StoppingTimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingTimeSpec::Constant(c) => write!(f, "Constant({c})"),
            StoppingTimeSpec::Hitting(_) => f.write_str("Hitting(..)"),
            StoppingTimeSpec::PerPath(v) => write!(f, "PerPath({} values)", v.len()),
        }
    }
}

impl StoppingTimeSpec {
    pub fn hitting(g: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        StoppingTimeSpec::Hitting(Arc::new(g))
    }

    /// First time coordinate `coord` of the state reaches `level`.
    pub fn level_crossing(coord: usize, level: f64) -> Self {
        Self::hitting(move |_, x| x[coord] - level)
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, StoppingTimeSpec::Constant(_))
    }

    /// `τ` on one path from its states (`steps + 1` points of dimension `m`).
    /// Only the prefix up to the trigger is inspected.
    pub fn evaluate_path(
        &self,
        path: usize,
        states: &[f64],
        m: usize,
        grid: &TimeGrid,
    ) -> Result<f64> {
        let horizon = grid.horizon();
        match self {
            StoppingTimeSpec::Constant(c) => {
                if !(0.0..=horizon).contains(c) {
                    return Err(invalid(format!(
                        "constant stopping time {c} outside [0, T]"
                    )));
                }
                Ok(*c)
            }
            StoppingTimeSpec::PerPath(v) => {
                let tau = *v
                    .get(path)
                    .ok_or_else(|| invalid("fewer supplied stopping times than paths"))?;
                if !(0.0..=horizon).contains(&tau) {
                    return Err(invalid(format!(
                        "supplied stopping time {tau} outside [0, T]"
                    )));
                }
                Ok(tau)
            }
            StoppingTimeSpec::Hitting(g) => {
                for k in 0..=grid.steps() {
                    let val = g(grid.time(k), &states[k * m..(k + 1) * m]);
                    if !val.is_finite() {
                        return Err(Error::InvalidObservable { path, step: k });
                    }
                    if val >= 0.0 {
                        return Ok(grid.time(k));
                    }
                }
                Ok(horizon)
            }
        }
    }
}

/// `τ` for every path of a batch.
pub fn evaluate_stopping_time(
    spec: &StoppingTimeSpec,
    states: &StateBatch,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    if states.steps() != grid.steps() {
        return Err(invalid("states were not simulated on this grid"));
    }
    (0..states.n_paths())
        .map(|p| spec.evaluate_path(p, states.path_states(p), states.state_dim(), grid))
        .collect()
}

/// Interval index `i` with `t_{i-1} ≤ τ < t_i` (`i = n` also takes `τ = T`).
fn interval_index(tau: f64, coarse: &[f64]) -> usize {
    let n = coarse.len() - 1;
    // first i in 1..=n with tau < t_i
    let i = coarse[1..].partition_point(|&t| t <= tau) + 1;
    i.min(n)
}

/// Per-path interval assignment of the rounded-up stopping time `τⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStoppingTime {
    /// 1-based coarse interval index per path.
    pub index: Vec<usize>,
    /// `τⁿ = t_index`.
    pub tau_n: Vec<f64>,
    pub tau: Vec<f64>,
}

impl DiscreteStoppingTime {
    pub fn n_paths(&self) -> usize {
        self.index.len()
    }

    /// The indicator `1{index(path) = i}`.
    pub fn fires(&self, path: usize, i: usize) -> bool {
        self.index[path] == i
    }
}

pub fn discretize_tau(tau: &[f64], grid: &TimeGrid) -> Result<DiscreteStoppingTime> {
    let coarse = grid.coarse_times();
    let horizon = grid.horizon();
    let mut index = Vec::with_capacity(tau.len());
    let mut tau_n = Vec::with_capacity(tau.len());
    for &t in tau {
        if !(0.0..=horizon).contains(&t) {
            return Err(invalid(format!("stopping time {t} outside [0, {horizon}]")));
        }
        let i = interval_index(t, &coarse);
        index.push(i);
        tau_n.push(coarse[i]);
    }
    Ok(DiscreteStoppingTime {
        index,
        tau_n,
        tau: tau.to_vec(),
    })
}

/// Which coarse points carry a terminal/constraint term on each path.
#[derive(Debug, Clone, Copy)]
pub enum JumpSchedule<'a> {
    /// `1{t_{i-1} ≤ τ < t_i}`: exactly one point per path.
    Stopping(&'a DiscreteStoppingTime),
    /// Every coarse point `t_1..t_n` on every path (multi-time constraints).
    EveryPoint,
}

impl JumpSchedule<'_> {
    pub fn fires(&self, path: usize, i: usize) -> bool {
        match self {
            JumpSchedule::Stopping(disc) => disc.fires(path, i),
            JumpSchedule::EveryPoint => true,
        }
    }

    pub fn stopping(&self) -> Option<&DiscreteStoppingTime> {
        match self {
            JumpSchedule::Stopping(disc) => Some(disc),
            JumpSchedule::EveryPoint => None,
        }
    }
}

/// Monte Carlo cost estimate split into running and terminal parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub estimate: f64,
    pub se: f64,
    pub n_paths: usize,
    pub running: Estimate,
    pub terminal: Estimate,
}

impl CostReport {
    fn from_parts(total: MeanVar, running: MeanVar, terminal: MeanVar) -> Self {
        Self {
            estimate: total.mean(),
            se: total.se(),
            n_paths: total.count(),
            running: running.estimate(),
            terminal: terminal.estimate(),
        }
    }

    pub fn as_estimate(&self) -> Estimate {
        Estimate {
            mean: self.estimate,
            se: self.se,
            n: self.n_paths,
        }
    }
}

/// Left-point rule for `∫₀ᵀ f(X, u) dt` on one path.
pub fn running_cost_path(
    model: &ModelSpec,
    grid: &TimeGrid,
    states: &[f64],
    controls: &[f64],
) -> f64 {
    let (m, q) = (model.state_dim(), model.control_dim());
    (0..grid.steps())
        .map(|k| {
            model.running_cost(
                grid.time(k),
                &states[k * m..(k + 1) * m],
                &controls[k * q..(k + 1) * q],
            ) * grid.dt(k)
        })
        .sum()
}

type Triple = (MeanVar, MeanVar, MeanVar);

fn triple() -> Triple {
    (MeanVar::new(), MeanVar::new(), MeanVar::new())
}

fn merge_triple(a: &mut Triple, b: Triple) {
    a.0.merge(&b.0);
    a.1.merge(&b.1);
    a.2.merge(&b.2);
}

/// `J(u) = E[∫₀ᵀ f dt + Ψ(X(τ))]`, `X(τ)` read at the fine step containing `τ`.
pub fn eval_cost_j(
    model: &ModelSpec,
    states: &StateBatch,
    tau: &[f64],
    grid: &TimeGrid,
) -> Result<CostReport> {
    if tau.len() != states.n_paths() {
        return Err(invalid(
            "stopping times and states have different path counts",
        ));
    }
    let m = model.state_dim();
    let (total, run, term) = block_reduce(
        states.n_paths(),
        triple,
        |acc, p| {
            let r = running_cost_path(model, grid, states.path_states(p), states.path_controls(p));
            let k = grid.step_containing(tau[p]);
            let t = model.terminal_cost(&states.path_states(p)[k * m..(k + 1) * m]);
            acc.0.push(r + t);
            acc.1.push(r);
            acc.2.push(t);
            Ok(())
        },
        merge_triple,
    )?;
    Ok(CostReport::from_parts(total, run, term))
}

/// Terminal part of `Jⁿ` on one path: `Σ_j Ψ(X(t_j))·1{index = j}`.
fn discrete_terminal_path(
    model: &ModelSpec,
    grid: &TimeGrid,
    states: &[f64],
    schedule: JumpSchedule<'_>,
    path: usize,
) -> f64 {
    let m = model.state_dim();
    (1..=grid.n())
        .filter(|&i| schedule.fires(path, i))
        .map(|i| {
            let k = grid.coarse_index(i);
            model.terminal_cost(&states[k * m..(k + 1) * m])
        })
        .sum()
}

/// `Jⁿ(u) = E[∫₀ᵀ f dt + Ψ(X(τⁿ))]`.
pub fn eval_cost_jn(
    model: &ModelSpec,
    states: &StateBatch,
    disc: &DiscreteStoppingTime,
    grid: &TimeGrid,
) -> Result<CostReport> {
    if disc.n_paths() != states.n_paths() {
        return Err(invalid(
            "stopping times and states have different path counts",
        ));
    }
    let schedule = JumpSchedule::Stopping(disc);
    let (total, run, term) = block_reduce(
        states.n_paths(),
        triple,
        |acc, p| {
            let r = running_cost_path(model, grid, states.path_states(p), states.path_controls(p));
            let t = discrete_terminal_path(model, grid, states.path_states(p), schedule, p);
            acc.0.push(r + t);
            acc.1.push(r);
            acc.2.push(t);
            Ok(())
        },
        merge_triple,
    )?;
    Ok(CostReport::from_parts(total, run, term))
}

/// Per-point expectations `E[Ψ(X(t_j))·1{fires(j)}]`, `j = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiReport {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub n_paths: usize,
}

impl PhiReport {
    pub fn total(&self) -> f64 {
        self.mean.iter().sum()
    }
}

pub fn phi_expectations(
    model: &ModelSpec,
    states: &StateBatch,
    schedule: JumpSchedule<'_>,
    grid: &TimeGrid,
) -> Result<PhiReport> {
    if let Some(disc) = schedule.stopping() {
        if disc.n_paths() != states.n_paths() {
            return Err(invalid(
                "stopping times and states have different path counts",
            ));
        }
    }
    let n = grid.n();
    let m = model.state_dim();
    let acc = block_reduce(
        states.n_paths(),
        || vec![MeanVar::new(); n],
        |acc, p| {
            let xs = states.path_states(p);
            for (j, slot) in acc.iter_mut().enumerate() {
                let i = j + 1;
                let v = if schedule.fires(p, i) {
                    let k = grid.coarse_index(i);
                    model.terminal_cost(&xs[k * m..(k + 1) * m])
                } else {
                    0.0
                };
                slot.push(v);
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y)),
    )?;
    Ok(PhiReport {
        mean: acc.iter().map(MeanVar::mean).collect(),
        se: acc.iter().map(MeanVar::se).collect(),
        n_paths: states.n_paths(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub n: usize,
    pub gap: f64,
    pub gap_se: f64,
    /// `gap > 3·gap_se`; noise-dominated rows are excluded from the fit.
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapTable {
    pub rows: Vec<GapRow>,
    /// Fine-grid `Ĵ`.
    pub reference: Estimate,
    /// Least-squares slope of `ln gap` against `ln n` over eligible rows.
    pub slope: Option<LineFit>,
    /// Slope of `ln(gap·√n)` against `ln n` over eligible rows.
    pub scaled_trend: Option<LineFit>,
    /// Every pathwise difference vanished.
    pub exact: bool,
}

impl GapTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,gap,gap_se,eligible\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.n, r.gap, r.gap_se, r.eligible);
        }
        out
    }
}

/// Settings for [`convergence_gap`].
#[derive(Debug, Clone)]
pub struct GapStudy {
    pub n_list: Vec<usize>,
    pub n_paths: usize,
    pub seed: u64,
    pub horizon: f64,
    /// Fine steps on `[0, T]`; every `n` must divide it.
    pub fine_steps: usize,
}

/// `|Ĵ − Ĵⁿ|` per `n` on common random numbers. One fine-grid simulation per
/// path serves every `n`; the running cost cancels pathwise.
pub fn convergence_gap(
    model: &ModelSpec,
    control: &ControlProcess,
    tau: &StoppingTimeSpec,
    x0: &[f64],
    study: &GapStudy,
) -> Result<GapTable> {
    let n_list = &study.n_list;
    if n_list.len() < 4 {
        return Err(invalid("need at least four grid sizes"));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(invalid(
            "grid sizes must be positive and strictly increasing",
        ));
    }
    if let Some(&bad) = n_list
        .iter()
        .find(|&&n| !study.fine_steps.is_multiple_of(n))
    {
        return Err(invalid(format!(
            "grid size {bad} does not divide {} fine steps",
            study.fine_steps
        )));
    }
    let grid = TimeGrid::uniform(1, study.horizon, study.fine_steps)?;
    control.validate(&grid)?;
    let noise = BrownianBatch::new(&grid, model.noise_dim(), study.n_paths, study.seed)?;
    let (m, q, d) = (model.state_dim(), model.control_dim(), model.noise_dim());
    let steps = grid.steps();
    // coarse points for each n taken from the fine grid itself so hitting
    // times compare exactly against them
    let coarse: Vec<Vec<f64>> = n_list
        .iter()
        .map(|&n| (0..=n).map(|i| grid.time(i * steps / n)).collect())
        .collect();

    struct Acc {
        reference: MeanVar,
        diffs: Vec<MeanVar>,
        all_zero: bool,
    }
    let acc = block_reduce(
        study.n_paths,
        || Acc {
            reference: MeanVar::new(),
            diffs: vec![MeanVar::new(); n_list.len()],
            all_zero: true,
        },
        |acc, p| {
            let mut inc = vec![0.0; steps * d];
            noise.fill_path(p, &mut inc);
            let mut xs = vec![0.0; (steps + 1) * m];
            let mut us = vec![0.0; steps * q];
            simulate_path(model, control, &grid, &inc, x0, &mut xs, &mut us)
                .map_err(|f| f.into_error(p))?;
            let t = tau.evaluate_path(p, &xs, m, &grid)?;
            let k = grid.step_containing(t);
            let psi_tau = model.terminal_cost(&xs[k * m..(k + 1) * m]);
            let run = running_cost_path(model, &grid, &xs, &us);
            acc.reference.push(run + psi_tau);
            for (slot, (c, &n)) in acc.diffs.iter_mut().zip(coarse.iter().zip(n_list)) {
                let i = interval_index(t, c);
                let kn = i * steps / n;
                let diff = psi_tau - model.terminal_cost(&xs[kn * m..(kn + 1) * m]);
                if diff != 0.0 {
                    acc.all_zero = false;
                }
                slot.push(diff);
            }
            Ok(())
        },
        |a, b| {
            a.reference.merge(&b.reference);
            a.diffs
                .iter_mut()
                .zip(&b.diffs)
                .for_each(|(x, y)| x.merge(y));
            a.all_zero &= b.all_zero;
        },
    )?;

    let rows: Vec<GapRow> = n_list
        .iter()
        .zip(&acc.diffs)
        .map(|(&n, mv)| {
            let gap = mv.mean().abs();
            let gap_se = mv.se();
            GapRow {
                n,
                gap,
                gap_se,
                eligible: gap > 3.0 * gap_se && gap > 0.0,
            }
        })
        .collect();
    let eligible: Vec<&GapRow> = rows.iter().filter(|r| r.eligible).collect();
    let ns: Vec<f64> = eligible.iter().map(|r| r.n as f64).collect();
    let gaps: Vec<f64> = eligible.iter().map(|r| r.gap).collect();
    let scaled: Vec<f64> = eligible
        .iter()
        .map(|r| r.gap * (r.n as f64).sqrt())
        .collect();
    Ok(GapTable {
        slope: fit_loglog(&ns, &gaps),
        scaled_trend: fit_loglog(&ns, &scaled),
        rows,
        reference: acc.reference.estimate(),
        exact: acc.all_zero,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::simulate_forward;
    use crate::grid::{make_grid, sample_brownian};
    use crate::model::{constant_model, ControlSet};

    fn brownian_model(psi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ModelSpec {
        ModelSpec::new(
            "bm",
            1,
            1,
            ControlSet::interval(-1.0, 1.0),
            |_, _, u, o| o[0] = u[0],
            |_, _, _, o| o[0] = 1.0,
            |_, _, _| 0.0,
            psi,
        )
    }

    fn frozen_model(psi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ModelSpec {
        ModelSpec::new(
            "frozen",
            1,
            1,
            ControlSet::interval(0.0, 1.0),
            |_, _, _, o| o[0] = 0.0,
            |_, _, _, o| o[0] = 0.0,
            |_, _, _| 0.0,
            psi,
        )
    }

    fn batch(
        model: &ModelSpec,
        n: usize,
        substeps: usize,
        paths: usize,
        x0: f64,
    ) -> (TimeGrid, StateBatch) {
        let g = make_grid(n, 1.0, substeps).unwrap();
        let w = sample_brownian(&g, 1, paths, 17).unwrap();
        let sb =
            simulate_forward(model, &ControlProcess::Constant(vec![0.0]), &w, &g, &[x0]).unwrap();
        (g, sb)
    }

    #[test]
    fn constant_and_silent_stopping_times() {
        let model = brownian_model(|x| x[0]);
        let (g, sb) = batch(&model, 4, 10, 20, 0.0);
        let tau = evaluate_stopping_time(&StoppingTimeSpec::Constant(0.3), &sb, &g).unwrap();
        assert!(tau.iter().all(|&t| t == 0.3));
        let never = StoppingTimeSpec::hitting(|_, _| -1.0);
        let tau = evaluate_stopping_time(&never, &sb, &g).unwrap();
        assert!(tau.iter().all(|&t| t == 1.0));
        let nan = StoppingTimeSpec::hitting(|_, _| f64::NAN);
        assert!(matches!(
            evaluate_stopping_time(&nan, &sb, &g),
            Err(Error::InvalidObservable { path: 0, step: 0 })
        ));
    }

    #[test]
    fn hitting_probability_reflection_principle() {
        // P(max_{[0,1]} W ≥ 0.5) = 2(1 − Φ(0.5)) = 0.617075. Discrete
        // monitoring on 4096 steps lowers it by about 0.007 (level shift
        // 0.5826·√Δt); with 20000 paths 3 SE is about 0.010.
        use statrs::distribution::{ContinuousCDF, Normal};
        let exact = 2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(0.5));
        assert!((exact - 0.617).abs() < 1e-3);
        let model = brownian_model(|x| x[0]);
        let g = make_grid(1, 1.0, 4096).unwrap();
        let n = 20_000;
        let w = sample_brownian(&g, 1, n, 5).unwrap();
        let spec = StoppingTimeSpec::level_crossing(0, 0.5);
        let mut mv = MeanVar::new();
        let mut xs = vec![0.0; 4097];
        let mut us = vec![0.0; 4096];
        for p in 0..n {
            let inc = w.path_increments(p);
            simulate_path(
                &model,
                &ControlProcess::Constant(vec![0.0]),
                &g,
                &inc,
                &[0.0],
                &mut xs,
                &mut us,
            )
            .unwrap();
            let t = spec.evaluate_path(p, &xs, 1, &g).unwrap();
            mv.push(if t < 1.0 { 1.0 } else { 0.0 });
        }
        assert!(
            mv.estimate().within(exact, 3.0),
            "{:?} vs {exact}",
            mv.estimate()
        );
    }

    #[test]
    fn discretization_examples() {
        let g = make_grid(4, 1.0, 1).unwrap();
        let d = discretize_tau(&[0.3, 0.25, 1.0, 0.0, 0.999], &g).unwrap();
        assert_eq!(d.index, vec![2, 2, 4, 1, 4]);
        assert_eq!(d.tau_n, vec![0.5, 0.5, 1.0, 0.25, 1.0]);
        assert!(discretize_tau(&[1.2], &g).is_err());
        assert!(discretize_tau(&[-0.1], &g).is_err());
    }

    #[test]
    fn cost_of_frozen_state() {
        let model = frozen_model(|x| x[0]);
        let (g, sb) = batch(&model, 4, 5, 10, 2.5);
        let tau = vec![0.3; 10];
        let rep = eval_cost_j(&model, &sb, &tau, &g).unwrap();
        assert_eq!(rep.estimate, 2.5);
        assert_eq!(rep.se, 0.0);
        assert!(eval_cost_j(&model, &sb, &tau[..5], &g).is_err());
    }

    #[test]
    fn unit_running_cost() {
        let model = constant_model();
        let (g, sb) = batch(&model, 4, 25, 10, 0.0);
        let rep = eval_cost_j(&model, &sb, &[1.0; 10], &g).unwrap();
        assert!((rep.estimate - 1.0).abs() < 1e-12);
        assert_eq!(rep.running.mean, rep.estimate);
    }

    #[test]
    fn stopped_brownian_martingale() {
        let model = brownian_model(|x| x[0]);
        let (g, sb) = batch(&model, 10, 10, 20_000, 0.0);
        let rep = eval_cost_j(&model, &sb, &vec![0.3; 20_000], &g).unwrap();
        assert!(rep.as_estimate().within(0.0, 3.0), "{rep:?}");
    }

    #[test]
    fn discrete_cost_examples() {
        let model = brownian_model(|x| x[0]);
        let (g, sb) = batch(&model, 4, 10, 500, 0.0);
        let at_t = vec![1.0; 500];
        let j = eval_cost_j(&model, &sb, &at_t, &g).unwrap();
        let jn = eval_cost_jn(&model, &sb, &discretize_tau(&at_t, &g).unwrap(), &g).unwrap();
        assert_eq!(j, jn);

        // n = 1: terminal read at T regardless of τ
        let (g1, sb1) = batch(&model, 1, 40, 200, 0.0);
        let early = vec![0.2; 200];
        let jn1 = eval_cost_jn(&model, &sb1, &discretize_tau(&early, &g1).unwrap(), &g1).unwrap();
        let jt = eval_cost_j(&model, &sb1, &vec![1.0; 200], &g1).unwrap();
        assert_eq!(jn1.estimate, jt.estimate);

        // τ ≡ 0.3, n = 4: terminal read at 0.5
        let drift = ModelSpec::new(
            "drift",
            1,
            1,
            ControlSet::interval(0.0, 1.0),
            |_, _, _, o| o[0] = 1.0,
            |_, _, _, o| o[0] = 0.0,
            |_, _, _| 0.0,
            |x| x[0],
        );
        let (g, sb) = batch(&drift, 4, 10, 3, 0.0);
        let tau = vec![0.3; 3];
        let jn = eval_cost_jn(&drift, &sb, &discretize_tau(&tau, &g).unwrap(), &g).unwrap();
        let j = eval_cost_j(&drift, &sb, &tau, &g).unwrap();
        assert!((jn.estimate - 0.5).abs() < 1e-12);
        assert!((j.estimate - 0.3).abs() < 1e-12);
    }

    #[test]
    fn phi_examples() {
        let model = brownian_model(|x| x[0] * x[0]);
        let (g, sb) = batch(&model, 4, 10, 400, 0.0);
        let disc = discretize_tau(&vec![1.0; 400], &g).unwrap();
        let phi = phi_expectations(&model, &sb, JumpSchedule::Stopping(&disc), &g).unwrap();
        assert!(phi.mean[..3].iter().all(|&v| v == 0.0));
        assert!(phi.mean[3] > 0.0);

        let one = brownian_model(|_| 1.0);
        let spec = StoppingTimeSpec::level_crossing(0, 0.3);
        let tau = evaluate_stopping_time(&spec, &sb, &g).unwrap();
        let disc = discretize_tau(&tau, &g).unwrap();
        let phi = phi_expectations(&one, &sb, JumpSchedule::Stopping(&disc), &g).unwrap();
        for (j, &v) in phi.mean.iter().enumerate() {
            let occ = disc.index.iter().filter(|&&i| i == j + 1).count() as f64 / 400.0;
            assert!((v - occ).abs() < 1e-12);
        }
        assert!((phi.total() - 1.0).abs() < 1e-12);

        // Jⁿ terminal part equals the sum of the per-point expectations.
        let jn = eval_cost_jn(&model, &sb, &disc, &g).unwrap();
        let phi = phi_expectations(&model, &sb, JumpSchedule::Stopping(&disc), &g).unwrap();
        assert!((jn.terminal.mean - phi.total()).abs() < 1e-12);
        assert!((jn.estimate - jn.running.mean - phi.total()).abs() < 1e-12);
    }

    fn study(n_list: Vec<usize>, paths: usize) -> GapStudy {
        GapStudy {
            n_list,
            n_paths: paths,
            seed: 3,
            horizon: 1.0,
            fine_steps: 256,
        }
    }

    #[test]
    fn gap_exact_cases() {
        let flat = brownian_model(|_| 2.0);
        let spec = StoppingTimeSpec::level_crossing(0, 0.2);
        let ctl = ControlProcess::Constant(vec![0.0]);
        let t =
            convergence_gap(&flat, &ctl, &spec, &[0.0], &study(vec![2, 4, 8, 16], 500)).unwrap();
        assert!(t.exact && t.slope.is_none());
        assert!(t.rows.iter().all(|r| r.gap == 0.0 && !r.eligible));

        let lin = brownian_model(|x| x[0]);
        let t = convergence_gap(
            &lin,
            &ctl,
            &StoppingTimeSpec::Constant(1.0),
            &[0.0],
            &study(vec![2, 4, 8, 16], 500),
        )
        .unwrap();
        assert!(t.exact);
    }

    #[test]
    fn gap_preconditions() {
        let lin = brownian_model(|x| x[0]);
        let ctl = ControlProcess::Constant(vec![0.0]);
        let spec = StoppingTimeSpec::Constant(1.0);
        assert!(convergence_gap(&lin, &ctl, &spec, &[0.0], &study(vec![2, 4, 8], 10)).is_err());
        assert!(convergence_gap(&lin, &ctl, &spec, &[0.0], &study(vec![2, 8, 4, 16], 10)).is_err());
        assert!(convergence_gap(&lin, &ctl, &spec, &[0.0], &study(vec![2, 4, 8, 3], 10)).is_err());
    }

    #[test]
    fn gap_decays_for_hitting_time() {
        let model = brownian_model(|x| x[0].abs());
        let spec = StoppingTimeSpec::level_crossing(0, 0.0);
        let ctl = ControlProcess::Constant(vec![0.2]);
        let mut s = study(vec![4, 8, 16, 32], 4000);
        s.fine_steps = 1024;
        let t = convergence_gap(&model, &ctl, &spec, &[-0.5], &s).unwrap();
        let slope = t.slope.unwrap().slope;
        assert!(slope <= -0.4, "{t:?}");
        assert!(t.to_csv().starts_with("n,gap,gap_se,eligible\n4,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_and_rounding(n in 1usize..40, horizon in 0.1f64..5.0, fracs in prop::collection::vec(0.0f64..=1.0, 1..50)) {
                let g = make_grid(n, horizon, 1).unwrap();
                let tau: Vec<f64> = fracs.iter().map(|f| (f * horizon).min(horizon)).collect();
                let d = discretize_tau(&tau, &g).unwrap();
                for (p, &t) in tau.iter().enumerate() {
                    let fired = (1..=n).filter(|&i| d.fires(p, i)).count();
                    prop_assert_eq!(fired, 1);
                    let i = d.index[p];
                    prop_assert!(g.coarse_time(i - 1) <= t);
                    if i < n { prop_assert!(t < g.coarse_time(i)); } else { prop_assert!(t <= horizon); }
                    prop_assert!(t <= d.tau_n[p]);
                    prop_assert!(d.tau_n[p] <= t + horizon / n as f64 + 1e-12);
                }
            }
        }
    }
}
