//! Constrained problems: the Ekeland distance, the penalized functional `J^θ`,
//! multipliers extracted from it, and the constrained maximum-principle
//! checker.

use std::fmt::Write as _;

use crate::adjoint::{AdjointFirst, AdjointSecond, Candidate};
use crate::error::{invalid, Error, Result};
use crate::forward::{simulate_forward, ControlProcess, StateBatch};
use crate::grid::{BrownianBatch, TimeGrid};
use crate::model::ModelSpec;
use crate::smp_check::{check_maximum_principle, SmpReport};
use crate::stopping::{
    discretize_tau, eval_cost_jn, evaluate_stopping_time, phi_expectations, CostReport,
    JumpSchedule, PhiReport, StoppingTimeSpec,
};

/// Tolerance on `|β⁰|² + Σ|βʲ|² = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Default slackness test values `γ`.
pub const DEFAULT_GAMMAS: [f64; 2] = [0.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierSource {
    Supplied,
    Extracted,
}

/// `(β⁰, β¹, …, βⁿ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierVector {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub source: MultiplierSource,
}

impl MultiplierVector {
    pub fn supplied(beta0: f64, beta: Vec<f64>) -> Self {
        Self {
            beta0,
            beta,
            source: MultiplierSource::Supplied,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.beta0 * self.beta0 + self.beta.iter().map(|b| b * b).sum::<f64>()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sq() - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// Signs expected from the positive-part construction: `β⁰ ≥ 0`, `βʲ ≤ 0`.
    pub fn has_expected_signs(&self) -> bool {
        self.beta0 >= 0.0 && self.beta.iter().all(|&b| b <= 0.0)
    }

    /// Parses `beta0,beta1,...,betan`.
    pub fn parse(text: &str) -> Result<Self> {
        let vals: Vec<f64> = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad multiplier '{s}'")))
            })
            .collect::<Result<_>>()?;
        match vals.split_first() {
            Some((&b0, rest)) if !rest.is_empty() => Ok(Self::supplied(b0, rest.to_vec())),
            _ => Err(Error::Config(
                "multiplier file needs beta0 and at least one beta_j".into(),
            )),
        }
    }

    pub fn to_line(&self) -> String {
        let mut out = self.beta0.to_string();
        for b in &self.beta {
            let _ = write!(out, ",{b}");
        }
        out
    }
}

/// `M{(t, ω) : u1 ≠ u2}` estimated from the applied controls of two batches
/// simulated on the same grid and noise.
pub fn ekeland_distance(a: &StateBatch, b: &StateBatch, grid: &TimeGrid) -> Result<f64> {
    if a.n_paths() != b.n_paths() || a.steps() != grid.steps() || b.steps() != grid.steps() {
        return Err(invalid("control batches do not share a grid and path set"));
    }
    if a.control_dim() != b.control_dim() {
        return Err(invalid("control dimensions differ"));
    }
    let n = a.n_paths();
    let dist = (0..grid.steps())
        .map(|k| {
            let differ = (0..n)
                .filter(|&p| a.control(p, k) != b.control(p, k))
                .count();
            grid.dt(k) * differ as f64 / n as f64
        })
        .sum();
    Ok(dist)
}

/// `J^θ` with its squared components.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedCostReport {
    pub value: f64,
    /// `[(J − J_ref + θ)⁺]²`.
    pub objective_sq: f64,
    /// `[(−Eφⱼ)⁺]²` per constraint.
    pub constraint_sq: Vec<f64>,
    pub theta: f64,
}

/// `J^θ = sqrt([(J − J_ref + θ)⁺]² + Σⱼ[(−Eφⱼ)⁺]²)`. `j` is taken relative to
/// the incumbent, i.e. `j = J(u) − J(ū)`.
pub fn penalized_value(j: f64, ephi: &[f64], theta: f64) -> Result<PenalizedCostReport> {
    if !(theta > 0.0) {
        return Err(invalid("theta must be positive"));
    }
    let objective_sq = (j + theta).max(0.0).powi(2);
    let constraint_sq: Vec<f64> = ephi.iter().map(|&e| (-e).max(0.0).powi(2)).collect();
    let value = (objective_sq + constraint_sq.iter().sum::<f64>()).sqrt();
    Ok(PenalizedCostReport {
        value,
        objective_sq,
        constraint_sq,
        theta,
    })
}

/// Multipliers `β⁰ = (j + θ)⁺ / J^θ`, `βʲ = −(−Eφⱼ)⁺ / J^θ`.
pub fn multipliers_from_theta(j: f64, ephi: &[f64], theta: f64) -> Result<MultiplierVector> {
    let pen = penalized_value(j, ephi, theta)?;
    if pen.value == 0.0 {
        return Err(Error::DegeneratePenalty);
    }
    Ok(MultiplierVector {
        beta0: (j + theta).max(0.0) / pen.value,
        beta: ephi.iter().map(|&e| -(-e).max(0.0) / pen.value).collect(),
        source: MultiplierSource::Extracted,
    })
}

/// Objective, constraint function, stopping time and sampling setup of a
/// constrained problem. The constraints are `E[φ(X(t_j))] ≥ 0`, `j = 1..n`,
/// where `φ` is the terminal cost of `constraint` (which must share the
/// dynamics of `objective`).
pub struct ConstrainedProblem<'a> {
    pub objective: &'a ModelSpec,
    pub constraint: &'a ModelSpec,
    pub tau: &'a StoppingTimeSpec,
    pub grid: &'a TimeGrid,
    pub noise: &'a BrownianBatch,
    pub x0: &'a [f64],
    /// Reference value `J(ū)` subtracted inside the penalty.
    pub j_ref: f64,
}

/// One simulated control under a [`ConstrainedProblem`].
pub struct Evaluation {
    pub states: StateBatch,
    pub cost: CostReport,
    pub phi: PhiReport,
}

impl ConstrainedProblem<'_> {
    pub fn evaluate(&self, control: &ControlProcess) -> Result<Evaluation> {
        let states = simulate_forward(self.objective, control, self.noise, self.grid, self.x0)?;
        let tau = evaluate_stopping_time(self.tau, &states, self.grid)?;
        let disc = discretize_tau(&tau, self.grid)?;
        let cost = eval_cost_jn(self.objective, &states, &disc, self.grid)?;
        let phi = phi_expectations(
            self.constraint,
            &states,
            JumpSchedule::EveryPoint,
            self.grid,
        )?;
        Ok(Evaluation { states, cost, phi })
    }

    pub fn penalized(&self, eval: &Evaluation, theta: f64) -> Result<PenalizedCostReport> {
        penalized_value(eval.cost.estimate - self.j_ref, &eval.phi.mean, theta)
    }
}

/// `J^θ(u)` for a simulated control.
pub fn penalized_cost(
    problem: &ConstrainedProblem<'_>,
    control: &ControlProcess,
    theta: f64,
) -> Result<PenalizedCostReport> {
    let eval = problem.evaluate(control)?;
    problem.penalized(&eval, theta)
}

/// Slackness products for one constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SlacknessRow {
    pub j: usize,
    pub beta: f64,
    pub ephi: f64,
    pub se: f64,
    /// `βʲ(γ − Êφⱼ)` for each `γ` of the report.
    pub products: Vec<f64>,
    pub pass: bool,
}

/// Slackness rows: `βʲ(γ − Êφⱼ) ≥ −3|βʲ|·SEⱼ` for every `γ`.
pub fn slackness(
    beta: &MultiplierVector,
    phi: &PhiReport,
    gammas: &[f64],
) -> Result<Vec<SlacknessRow>> {
    if beta.beta.len() != phi.mean.len() {
        return Err(invalid(format!(
            "{} multipliers for {} constraints",
            beta.beta.len(),
            phi.mean.len()
        )));
    }
    if gammas.iter().any(|&g| g > 0.0) {
        return Err(invalid("slackness values gamma must be non-positive"));
    }
    Ok(beta
        .beta
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let (e, se) = (phi.mean[i], phi.se[i]);
            let products: Vec<f64> = gammas.iter().map(|g| b * (g - e)).collect();
            let tol = 3.0 * b.abs() * se;
            SlacknessRow {
                j: i + 1,
                beta: b,
                ephi: e,
                se,
                pass: products.iter().all(|&v| v >= -tol),
                products,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedReport {
    pub multipliers: MultiplierVector,
    pub normalized: bool,
    pub gammas: Vec<f64>,
    pub rows: Vec<SlacknessRow>,
    pub gap: SmpReport,
    /// Signs differ from `β⁰ ≥ 0`, `βʲ ≤ 0`; reported, not failed.
    pub sign_discrepancy: bool,
}

impl ConstrainedReport {
    pub fn slackness_ok(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn passes(&self, max_violation: f64) -> bool {
        self.normalized && self.slackness_ok() && self.gap.violation_frac <= max_violation
    }

    pub fn to_csv(&self) -> String {
        slackness_csv(&self.gammas, &self.rows)
    }
}

/// `j,beta_j,Ephi_j,se_j,slack_gamma0,slack_gamma_neg1`, one slack column per
/// `γ` in order.
pub fn slackness_csv(gammas: &[f64], rows: &[SlacknessRow]) -> String {
    let mut out = String::from("j,beta_j,Ephi_j,se_j");
    for g in gammas {
        out.push_str(&slack_label(*g));
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{}", r.j, r.beta, r.ephi, r.se);
        for v in &r.products {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn slack_label(g: f64) -> String {
    if g == 0.0 {
        ",slack_gamma0".into()
    } else if g < 0.0 {
        format!(",slack_gamma_neg{}", -g)
    } else {
        format!(",slack_gamma{g}")
    }
}

/// Constrained maximum-principle check. `first` and `second` must have been
/// solved with jump weights `βʲ` and running-cost factor `β⁰`.
#[allow(clippy::too_many_arguments)]
pub fn check_constrained_smp(
    model: &ModelSpec,
    cand: Candidate<'_>,
    beta: &MultiplierVector,
    phi: &PhiReport,
    first: &AdjointFirst,
    second: &AdjointSecond,
    controls: &[Vec<f64>],
    steps: &[usize],
    gammas: &[f64],
    tol_mult: f64,
) -> Result<ConstrainedReport> {
    let rows = slackness(beta, phi, gammas)?;
    let gap = check_maximum_principle(model, cand, first, second, controls, steps, tol_mult)?;
    Ok(ConstrainedReport {
        multipliers: beta.clone(),
        normalized: beta.is_normalized(),
        gammas: gammas.to_vec(),
        rows,
        gap,
        sign_discrepancy: !beta.has_expected_signs(),
    })
}

/// Result of the local `u^θ` search. This is a heuristic used to produce
/// candidates; it certifies nothing about optimality.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSearch {
    /// Piecewise-constant control values, one per coarse interval.
    pub values: Vec<Vec<f64>>,
    pub penalized: PenalizedCostReport,
    pub cost: f64,
    pub ephi: Vec<f64>,
    /// `J^θ` after every accepted move, starting at the incumbent.
    pub trace: Vec<f64>,
    /// `d̃(u^θ, incumbent)`.
    pub distance: f64,
    /// `d̃(u^θ, incumbent) ≤ √θ`.
    pub within_ball: bool,
    pub budget_exhausted: bool,
}

/// Coordinate descent over piecewise-constant controls drawn from
/// `choices`. A move from `u` to `u'` is accepted when
/// `J^θ(u') + √θ·d̃(u', u) < J^θ(u)`; each sweep takes the best such move.
/// `budget` bounds the number of candidate evaluations.
pub fn search_u_theta(
    problem: &ConstrainedProblem<'_>,
    incumbent: &[Vec<f64>],
    choices: &[Vec<f64>],
    theta: f64,
    budget: usize,
) -> Result<ThetaSearch> {
    if incumbent.len() != problem.grid.n() {
        return Err(invalid("incumbent needs one value per coarse interval"));
    }
    let root = theta.sqrt();
    let start = problem.evaluate(&ControlProcess::Piecewise(incumbent.to_vec()))?;
    let mut cur_pen = problem.penalized(&start, theta)?;
    let start_states = start.states;
    let mut cur = incumbent.to_vec();
    let mut cur_cost = start.cost.estimate;
    let mut cur_phi = start.phi.mean;
    let mut cur_states = start_states.clone();
    let mut trace = vec![cur_pen.value];
    let mut used = 1usize;
    let mut exhausted = false;
    'outer: loop {
        let mut best: Option<(Vec<Vec<f64>>, f64, PenalizedCostReport, Evaluation)> = None;
        for i in 0..cur.len() {
            for c in choices {
                if &cur[i] == c {
                    continue;
                }
                if used >= budget {
                    exhausted = true;
                    break 'outer;
                }
                used += 1;
                let mut next = cur.clone();
                next[i] = c.clone();
                let eval = problem.evaluate(&ControlProcess::Piecewise(next.clone()))?;
                let pen = problem.penalized(&eval, theta)?;
                let score =
                    pen.value + root * ekeland_distance(&eval.states, &cur_states, problem.grid)?;
                if score < cur_pen.value && best.as_ref().is_none_or(|b| score < b.1) {
                    best = Some((next, score, pen, eval));
                }
            }
        }
        match best {
            Some((next, _, pen, eval)) => {
                cur = next;
                trace.push(pen.value);
                cur_pen = pen;
                cur_cost = eval.cost.estimate;
                cur_phi = eval.phi.mean;
                cur_states = eval.states;
            }
            None => break,
        }
    }
    let distance = ekeland_distance(&cur_states, &start_states, problem.grid)?;
    Ok(ThetaSearch {
        values: cur,
        penalized: cur_pen,
        cost: cur_cost,
        ephi: cur_phi,
        trace,
        distance,
        within_ball: distance <= root,
        budget_exhausted: exhausted,
    })
}

/// One `θ` of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub search: ThetaSearch,
    /// `None` when `J^θ(u^θ) = 0`.
    pub multipliers: Option<MultiplierVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSweep {
    pub rows: Vec<SweepRow>,
}

impl ThetaSweep {
    /// `β⁰ ≥ 0` and `βʲ ≤ 0` on every row that produced multipliers.
    pub fn signs_hold(&self) -> bool {
        self.rows
            .iter()
            .filter_map(|r| r.multipliers.as_ref())
            .all(MultiplierVector::has_expected_signs)
    }

    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.search.ephi.len());
        let mut out = String::from("theta,j_theta,cost,distance,within_ball,beta0");
        for j in 1..=n {
            let _ = write!(out, ",beta{j}");
        }
        out.push('\n');
        for r in &self.rows {
            let s = &r.search;
            let _ = write!(
                out,
                "{},{},{},{},{}",
                r.theta, s.penalized.value, s.cost, s.distance, s.within_ball
            );
            match &r.multipliers {
                Some(b) => {
                    let _ = write!(out, ",{}", b.beta0);
                    for v in &b.beta {
                        let _ = write!(out, ",{v}");
                    }
                }
                None => out.push_str(&",".repeat(n + 1)),
            }
            out.push('\n');
        }
        out
    }
}

/// Runs [`search_u_theta`] for each `θ` from the same incumbent and extracts
/// the multipliers at each `u^θ`. No limit is taken.
pub fn theta_sweep(
    problem: &ConstrainedProblem<'_>,
    incumbent: &[Vec<f64>],
    choices: &[Vec<f64>],
    thetas: &[f64],
    budget: usize,
) -> Result<ThetaSweep> {
    let rows = thetas
        .iter()
        .map(|&theta| {
            let search = search_u_theta(problem, incumbent, choices, theta, budget)?;
            let multipliers =
                match multipliers_from_theta(search.cost - problem.j_ref, &search.ephi, theta) {
                    Ok(b) => Some(b),
                    Err(Error::DegeneratePenalty) => None,
                    Err(e) => return Err(e),
                };
            Ok(SweepRow {
                theta,
                search,
                multipliers,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ThetaSweep { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, sample_brownian};
    use crate::model::ControlSet;
    use proptest::prelude::*;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn penalized_examples() {
        let r = penalized_value(0.0, &[0.1, 0.0], 0.04).unwrap();
        assert!((r.value - 0.04).abs() < 1e-15);
        assert_eq!(penalized_value(-0.04, &[0.2], 0.04).unwrap().value, 0.0);
        let r = penalized_value(-0.04, &[-0.03, 0.5], 0.04).unwrap();
        assert!((r.value - 0.03).abs() < 1e-15);
        let total = r.objective_sq + r.constraint_sq.iter().sum::<f64>();
        assert!((r.value * r.value - total).abs() < 1e-15);
        assert!(penalized_value(0.0, &[], 0.0).is_err());
    }

    #[test]
    fn multiplier_examples() {
        let b = multipliers_from_theta(0.0, &[0.0, 0.3], 0.01).unwrap();
        assert_eq!((b.beta0, b.beta.clone()), (1.0, vec![0.0, 0.0]));
        let b = multipliers_from_theta(-0.01, &[-0.05, 0.1], 0.01).unwrap();
        assert_eq!((b.beta0, b.beta.clone()), (0.0, vec![-1.0, 0.0]));
        let b = multipliers_from_theta(0.0, &[-0.03, 0.0], 0.03).unwrap();
        assert!((b.beta0 - H).abs() < 1e-15 && (b.beta[0] + H).abs() < 1e-15);
        assert_eq!(b.beta[1], 0.0);
        assert_eq!(
            multipliers_from_theta(-0.5, &[1.0], 0.1),
            Err(Error::DegeneratePenalty)
        );
    }

    #[test]
    fn printed_example_multipliers() {
        let mut beta = vec![0.0; 4];
        beta.push(H);
        let b = MultiplierVector::supplied(-H, beta);
        assert!(b.is_normalized());
        assert!(!b.has_expected_signs());
        let parsed = MultiplierVector::parse(&b.to_line()).unwrap();
        assert_eq!(parsed, b);
        assert!(MultiplierVector::parse("1.0").is_err());
        assert!(MultiplierVector::parse("1.0,x").is_err());
    }

    #[test]
    fn slackness_examples() {
        let phi = PhiReport {
            mean: vec![0.4, 0.0],
            se: vec![0.01, 0.01],
            n_paths: 100,
        };
        let b = MultiplierVector::supplied(H, vec![0.0, -H]);
        let rows = slackness(&b, &phi, &DEFAULT_GAMMAS).unwrap();
        // inactive constraint with zero multiplier
        assert_eq!(rows[0].products, vec![0.0, 0.0]);
        assert!(rows[0].pass);
        // active constraint: βγ > 0 for γ < 0
        assert_eq!(rows[1].products[0], 0.0);
        assert!(rows[1].products[1] > 0.0 && rows[1].pass);
        // negative multiplier on a violated constraint fails at γ = 0
        let infeasible = PhiReport {
            mean: vec![-0.2, 0.0],
            ..phi.clone()
        };
        let rows = slackness(
            &MultiplierVector::supplied(H, vec![-H, 0.0]),
            &infeasible,
            &DEFAULT_GAMMAS,
        )
        .unwrap();
        assert!(rows[0].products[0] < 0.0 && !rows[0].pass);
        assert!(slackness(&b, &phi, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn extracted_multipliers_normalized(
            j in -1.0f64..1.0,
            ephi in prop::collection::vec(-1.0f64..1.0, 1..6),
            theta in 1e-4f64..0.5,
        ) {
            match multipliers_from_theta(j, &ephi, theta) {
                Ok(b) => {
                    prop_assert!(b.is_normalized());
                    prop_assert!(b.has_expected_signs());
                }
                Err(e) => prop_assert_eq!(e, Error::DegeneratePenalty),
            }
        }

        #[test]
        fn penalty_monotone_in_violation(
            ephi in prop::collection::vec(-1.0f64..1.0, 1..5),
            which in 0usize..5,
            extra in 0.0f64..0.5,
        ) {
            let i = which % ephi.len();
            let base = penalized_value(0.1, &ephi, 0.05).unwrap().value;
            let mut worse = ephi.clone();
            worse[i] -= extra;
            prop_assert!(penalized_value(0.1, &worse, 0.05).unwrap().value >= base);
        }
    }

    fn drift_model() -> ModelSpec {
        ModelSpec::new(
            "drift",
            1,
            1,
            ControlSet::Finite(vec![vec![0.0], vec![1.0]]),
            |_, _, u, o| o[0] = u[0],
            |_, _, _, o| o[0] = 0.3,
            |t, _, u| if t < 0.5 { 0.3 * u[0] } else { 1.5 * u[0] },
            |x| -x[0],
        )
    }

    fn batch(
        model: &ModelSpec,
        grid: &TimeGrid,
        noise: &BrownianBatch,
        vals: &[f64],
    ) -> StateBatch {
        let ctl = ControlProcess::Piecewise(vals.iter().map(|&v| vec![v]).collect());
        simulate_forward(model, &ctl, noise, grid, &[0.0]).unwrap()
    }

    #[test]
    fn ekeland_distance_examples() {
        let model = drift_model();
        let grid = make_grid(4, 1.0, 8).unwrap();
        let noise = sample_brownian(&grid, 1, 50, 3).unwrap();
        let a = batch(&model, &grid, &noise, &[0.0, 1.0, 0.0, 1.0]);
        let b = batch(&model, &grid, &noise, &[0.0, 0.0, 0.0, 1.0]);
        let c = batch(&model, &grid, &noise, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(ekeland_distance(&a, &a, &grid).unwrap(), 0.0);
        assert!((ekeland_distance(&a, &b, &grid).unwrap() - 0.25).abs() < 1e-12);
        assert!((ekeland_distance(&a, &c, &grid).unwrap() - 1.0).abs() < 1e-12);
        // triangle inequality
        let (ab, bc, ac) = (
            ekeland_distance(&a, &b, &grid).unwrap(),
            ekeland_distance(&b, &c, &grid).unwrap(),
            ekeland_distance(&a, &c, &grid).unwrap(),
        );
        assert!(ac <= ab + bc + 1e-12);

        let spiked = crate::forward::spike_perturb(
            &ControlProcess::Constant(vec![0.0]),
            0.3125,
            0.125,
            vec![1.0],
        )
        .unwrap();
        let s = simulate_forward(&model, &spiked, &noise, &grid, &[0.0]).unwrap();
        let z = batch(&model, &grid, &noise, &[0.0; 4]);
        assert!((ekeland_distance(&s, &z, &grid).unwrap() - 0.125).abs() < 1e-12);
    }

    fn brute_setup() -> (
        ModelSpec,
        ModelSpec,
        StoppingTimeSpec,
        TimeGrid,
        BrownianBatch,
    ) {
        let model = drift_model();
        let constraint = ModelSpec::new(
            "drift-constraint",
            1,
            1,
            ControlSet::Finite(vec![vec![0.0], vec![1.0]]),
            |_, _, u, o| o[0] = u[0],
            |_, _, _, o| o[0] = 0.3,
            |_, _, _| 0.0,
            |x| x[0] - 0.3,
        );
        let grid = make_grid(2, 1.0, 16).unwrap();
        let noise = sample_brownian(&grid, 1, 4000, 17).unwrap();
        (
            model,
            constraint,
            StoppingTimeSpec::level_crossing(0, 0.8),
            grid,
            noise,
        )
    }

    #[test]
    fn search_matches_exhaustive_penalized_minimum() {
        let (model, constraint, tau, grid, noise) = brute_setup();
        let mut problem = ConstrainedProblem {
            objective: &model,
            constraint: &constraint,
            tau: &tau,
            grid: &grid,
            noise: &noise,
            x0: &[0.0],
            j_ref: 0.0,
        };
        let incumbent = vec![vec![0.0], vec![0.0]];
        problem.j_ref = problem
            .evaluate(&ControlProcess::Piecewise(incumbent.clone()))
            .unwrap()
            .cost
            .estimate;
        let choices = vec![vec![0.0], vec![1.0]];
        let theta = 0.04;
        let res = search_u_theta(&problem, &incumbent, &choices, theta, 100).unwrap();
        assert!(res.trace.windows(2).all(|w| w[1] < w[0]));
        assert!(!res.budget_exhausted);

        let mut best = (f64::INFINITY, vec![]);
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                let v = vec![vec![a], vec![b]];
                let pen =
                    penalized_cost(&problem, &ControlProcess::Piecewise(v.clone()), theta).unwrap();
                if pen.value < best.0 {
                    best = (pen.value, v);
                }
            }
        }
        assert_eq!(res.values, best.1);
        assert_eq!(res.penalized.value, best.0);
    }

    #[test]
    fn search_keeps_incumbent_when_already_optimal() {
        let (model, constraint, tau, grid, noise) = brute_setup();
        let incumbent = vec![vec![1.0], vec![0.0]];
        let mut problem = ConstrainedProblem {
            objective: &model,
            constraint: &constraint,
            tau: &tau,
            grid: &grid,
            noise: &noise,
            x0: &[0.0],
            j_ref: 0.0,
        };
        problem.j_ref = problem
            .evaluate(&ControlProcess::Piecewise(incumbent.clone()))
            .unwrap()
            .cost
            .estimate;
        let res = search_u_theta(&problem, &incumbent, &[vec![0.0], vec![1.0]], 0.5, 100).unwrap();
        assert_eq!(res.values, incumbent);
        assert_eq!(res.trace.len(), 1);
        assert_eq!(res.distance, 0.0);
        assert!(res.within_ball);

        let tight = search_u_theta(&problem, &incumbent, &[vec![0.0], vec![1.0]], 0.5, 1).unwrap();
        assert!(tight.budget_exhausted);

        let sweep = theta_sweep(
            &problem,
            &incumbent,
            &[vec![0.0], vec![1.0]],
            &[0.1, 0.01, 0.001],
            50,
        )
        .unwrap();
        assert!(sweep.signs_hold());
        assert_eq!(sweep.to_csv().lines().count(), 4);
    }
}
