//! Spike variations: the first- and second-order variational processes,
//! their orders in ε, the cost expansion, the duality identity and the
//! maximum-principle inequality.
//!
//! The indicators `1{t_{i-1} ≤ τ < t_i}` are those of the candidate and are
//! held fixed under the perturbation, as the adjoint jumps are.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::adjoint::{hamiltonian_unchecked, AdjointFirst, AdjointSecond, Candidate};
use crate::error::{invalid, Error, Result};
use crate::forward::{
    simulate_path, simulate_perturbed_path, ControlProcess, PathFailure, SpikeWindow,
};
use crate::grid::{BrownianBatch, TimeGrid};
use crate::mc::{block_reduce, fit_loglog, Estimate, LineFit, MeanVar};
use crate::model::ModelSpec;
use crate::stopping::{running_cost_path, JumpSchedule};

/// Variational processes `y`, `z` on every path, path-major with `steps + 1`
/// points of dimension `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationBatch {
    m: usize,
    steps: usize,
    n_paths: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    window: SpikeWindow,
}

impl VariationBatch {
    pub fn window(&self) -> &SpikeWindow {
        &self.window
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn y(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * (self.steps + 1) + k) * self.m;
        &self.y[o..o + self.m]
    }

    pub fn z(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * (self.steps + 1) + k) * self.m;
        &self.z[o..o + self.m]
    }

    fn path_y(&self, path: usize) -> &[f64] {
        let w = (self.steps + 1) * self.m;
        &self.y[path * w..(path + 1) * w]
    }

    fn path_z(&self, path: usize) -> &[f64] {
        let w = (self.steps + 1) * self.m;
        &self.z[path * w..(path + 1) * w]
    }
}

/// Scratch space for one variation step.
struct Work {
    bx: Vec<f64>,
    sx: Vec<f64>,
    sx_e: Vec<f64>,
    b: Vec<f64>,
    b_e: Vec<f64>,
    s: Vec<f64>,
    s_e: Vec<f64>,
    bxx: Vec<f64>,
    sxx: Vec<f64>,
}

impl Work {
    fn new(m: usize, d: usize) -> Self {
        Self {
            bx: vec![0.0; m * m],
            sx: vec![0.0; d * m * m],
            sx_e: vec![0.0; d * m * m],
            b: vec![0.0; m],
            b_e: vec![0.0; m],
            s: vec![0.0; m * d],
            s_e: vec![0.0; m * d],
            bxx: vec![0.0; m],
            sxx: vec![0.0; m * d],
        }
    }
}

/// Forward Euler for `(y, z)` along one candidate path. Both start at zero
/// and stay exactly zero before the window.
#[allow(clippy::too_many_arguments)]
pub(crate) fn variation_path(
    model: &ModelSpec,
    grid: &TimeGrid,
    states: &[f64],
    controls: &[f64],
    increments: &[f64],
    window: &SpikeWindow,
    y: &mut [f64],
    z: &mut [f64],
) -> std::result::Result<(), PathFailure> {
    let (m, d, q) = (model.state_dim(), model.noise_dim(), model.control_dim());
    y.fill(0.0);
    z.fill(0.0);
    let Some(start) = window.first_step(grid) else {
        return Ok(());
    };
    let mut w = Work::new(m, d);
    for k in start..grid.steps() {
        let (t, dt) = (grid.time(k), grid.dt(k));
        let x = &states[k * m..(k + 1) * m];
        let u = &controls[k * q..(k + 1) * q];
        let dw = &increments[k * d..(k + 1) * d];
        let active = window.covers(grid, k);
        model.drift_x(t, x, u, &mut w.bx);
        model.diffusion_x(t, x, u, &mut w.sx);
        let (yk, yn) = y.split_at_mut((k + 1) * m);
        let (zk, zn) = z.split_at_mut((k + 1) * m);
        let (yk, zk) = (&yk[k * m..], &zk[k * m..]);
        model.drift_xx(t, x, u, yk, &mut w.bxx);
        model.diffusion_xx(t, x, u, yk, &mut w.sxx);
        if active {
            let ue = window.value.as_slice();
            model.drift(t, x, u, &mut w.b);
            model.drift(t, x, ue, &mut w.b_e);
            model.diffusion(t, x, u, &mut w.s);
            model.diffusion(t, x, ue, &mut w.s_e);
            model.diffusion_x(t, x, ue, &mut w.sx_e);
        }
        for l in 0..m {
            let mut ydrift = 0.0;
            let mut zdrift = 0.5 * w.bxx[l];
            for a in 0..m {
                ydrift += w.bx[l * m + a] * yk[a];
                zdrift += w.bx[l * m + a] * zk[a];
            }
            if active {
                zdrift += w.b_e[l] - w.b[l];
            }
            let mut yv = yk[l] + ydrift * dt;
            let mut zv = zk[l] + zdrift * dt;
            for j in 0..d {
                let blk = j * m * m + l * m;
                let mut yd = 0.0;
                let mut zd = 0.5 * w.sxx[l * d + j];
                for a in 0..m {
                    yd += w.sx[blk + a] * yk[a];
                    zd += w.sx[blk + a] * zk[a];
                }
                if active {
                    yd += w.s_e[l * d + j] - w.s[l * d + j];
                    for a in 0..m {
                        zd += (w.sx_e[blk + a] - w.sx[blk + a]) * yk[a];
                    }
                }
                yv += yd * dw[j];
                zv += zd * dw[j];
            }
            yn[l] = yv;
            zn[l] = zv;
        }
        if yn[..m].iter().chain(&zn[..m]).any(|v| !v.is_finite()) {
            return Err(PathFailure::Diverged(k + 1));
        }
    }
    Ok(())
}

/// `y` and `z` for a spike window on a simulated candidate.
pub fn simulate_variations(
    model: &ModelSpec,
    cand: Candidate<'_>,
    window: &SpikeWindow,
) -> Result<VariationBatch> {
    window.validate(cand.grid)?;
    model.check_control(&window.value)?;
    let (m, steps, n_paths) = (model.state_dim(), cand.grid.steps(), cand.states.n_paths());
    if cand.noise.n_paths() != n_paths || cand.noise.steps() != steps {
        return Err(invalid("candidate and noise do not match"));
    }
    let w = (steps + 1) * m;
    let mut y = vec![0.0; n_paths * w];
    let mut z = vec![0.0; n_paths * w];
    let failures: Vec<Option<Error>> = y
        .par_chunks_mut(w)
        .zip(z.par_chunks_mut(w))
        .enumerate()
        .map(|(p, (yp, zp))| {
            let inc = cand.noise.path_increments(p);
            variation_path(
                model,
                cand.grid,
                cand.states.path_states(p),
                cand.states.path_controls(p),
                &inc,
                window,
                yp,
                zp,
            )
            .err()
            .map(|f| f.into_error(p))
        })
        .collect();
    if let Some(e) = failures.into_iter().flatten().next() {
        return Err(e);
    }
    Ok(VariationBatch {
        m,
        steps,
        n_paths,
        y,
        z,
        window: window.clone(),
    })
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// One quantity of the order study at one ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderPoint {
    /// `max_t E|·|`.
    pub value: f64,
    /// Standard error at the maximizing step.
    pub se: f64,
    pub eligible: bool,
}

/// A fitted rate, or the note that the quantity vanished identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Exact,
    Fitted(LineFit),
    Insufficient,
}

impl Rate {
    pub fn slope(&self) -> Option<f64> {
        match self {
            Rate::Fitted(f) => Some(f.slope),
            _ => None,
        }
    }
}

pub const ORDER_LABELS: [&str; 4] = ["Ey", "Ez", "Er1", "Er2"];

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub eps: Vec<f64>,
    /// `[E|y|, E|z|, E|Xᵉ−X̄−y|, E|Xᵉ−X̄−y−z|]` per ε.
    pub points: Vec<[OrderPoint; 4]>,
    pub rates: [Rate; 4],
}

impl OrderReport {
    /// Slope bands: `E|y|` in `0.5 ± 0.15`, `E|z|` in `1 ± 0.15`, first
    /// remainder at least 0.85, second remainder at least 1.1. A quantity that
    /// vanished identically passes.
    pub fn verdicts(&self) -> [bool; 4] {
        let band = |r: &Rate, lo: f64, hi: f64| match r {
            Rate::Exact => true,
            Rate::Fitted(f) => f.slope >= lo && f.slope <= hi,
            Rate::Insufficient => false,
        };
        [
            band(&self.rates[0], 0.35, 0.65),
            band(&self.rates[1], 0.85, 1.15),
            band(&self.rates[2], 0.85, f64::INFINITY),
            band(&self.rates[3], 1.1, f64::INFINITY),
        ]
    }

    pub fn passes(&self) -> bool {
        self.verdicts().iter().all(|&v| v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,Ey,Ez,Er1,Er2\n");
        for (e, pts) in self.eps.iter().zip(&self.points) {
            let _ = writeln!(
                out,
                "{e},{},{},{},{}",
                pts[0].value, pts[1].value, pts[2].value, pts[3].value
            );
        }
        out
    }
}

/// Settings for [`check_orders`]: spike windows `[start, start + ε)` carrying
/// `value`, simulated on fresh noise.
#[derive(Debug, Clone)]
pub struct OrderStudy {
    pub start: f64,
    pub value: Vec<f64>,
    pub eps: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
}

/// Estimates the four orders of the variational expansion. Each path is
/// simulated once and re-used for every ε (common random numbers).
pub fn check_orders(
    model: &ModelSpec,
    control: &ControlProcess,
    x0: &[f64],
    grid: &TimeGrid,
    study: &OrderStudy,
) -> Result<OrderReport> {
    let eps = &study.eps;
    if eps.len() < 4 {
        return Err(invalid("need at least four spike widths"));
    }
    let ratio = eps[1] / eps[0];
    if eps.iter().any(|&e| !(e > 0.0))
        || eps
            .windows(2)
            .any(|w| ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-9)
        || ratio == 1.0
    {
        return Err(invalid("spike widths must form a geometric sequence"));
    }
    let windows: Vec<SpikeWindow> = eps
        .iter()
        .map(|&e| SpikeWindow::new(study.start, e, study.value.clone()))
        .collect();
    let widest = eps.iter().cloned().fold(0.0, f64::max);
    SpikeWindow::new(study.start, widest, study.value.clone()).validate(grid)?;
    for w in &windows {
        w.validate(grid)?;
    }
    model.check_control(&study.value)?;
    control.validate(grid)?;

    let (m, d, q) = (model.state_dim(), model.noise_dim(), model.control_dim());
    let steps = grid.steps();
    let noise = BrownianBatch::new(grid, d, study.n_paths, study.seed)?;
    let n_eps = eps.len();
    let slot = |e: usize, c: usize, k: usize| (e * 4 + c) * (steps + 1) + k;
    let acc = block_reduce(
        study.n_paths,
        || vec![MeanVar::new(); n_eps * 4 * (steps + 1)],
        |acc, p| {
            let inc = noise.path_increments(p);
            let mut xs = vec![0.0; (steps + 1) * m];
            let mut us = vec![0.0; steps * q];
            simulate_path(model, control, grid, &inc, x0, &mut xs, &mut us)
                .map_err(|f| f.into_error(p))?;
            let mut xe = vec![0.0; (steps + 1) * m];
            let mut y = vec![0.0; (steps + 1) * m];
            let mut z = vec![0.0; (steps + 1) * m];
            for (e, w) in windows.iter().enumerate() {
                simulate_perturbed_path(model, grid, &inc, &xs, &us, w, &mut xe)
                    .map_err(|f| f.into_error(p))?;
                variation_path(model, grid, &xs, &us, &inc, w, &mut y, &mut z)
                    .map_err(|f| f.into_error(p))?;
                for k in 0..=steps {
                    let r = k * m..(k + 1) * m;
                    let (yk, zk, xk, xek) = (&y[r.clone()], &z[r.clone()], &xs[r.clone()], &xe[r]);
                    acc[slot(e, 0, k)].push(norm(yk.iter().copied()));
                    acc[slot(e, 1, k)].push(norm(zk.iter().copied()));
                    acc[slot(e, 2, k)].push(norm((0..m).map(|a| xek[a] - xk[a] - yk[a])));
                    acc[slot(e, 3, k)].push(norm((0..m).map(|a| xek[a] - xk[a] - yk[a] - zk[a])));
                }
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y)),
    )?;

    let mut points = Vec::with_capacity(n_eps);
    let mut all_zero = [true; 4];
    for e in 0..n_eps {
        let mut row = [OrderPoint {
            value: 0.0,
            se: 0.0,
            eligible: false,
        }; 4];
        for (c, pt) in row.iter_mut().enumerate() {
            let best = (0..=steps)
                .map(|k| acc[slot(e, c, k)])
                .max_by(|a, b| a.mean().total_cmp(&b.mean()))
                .unwrap_or_default();
            *pt = OrderPoint {
                value: best.mean(),
                se: best.se(),
                eligible: best.mean() > 3.0 * best.se() && best.mean() > 0.0,
            };
            all_zero[c] &= best.mean() == 0.0;
        }
        points.push(row);
    }
    let rates = std::array::from_fn(|c| {
        if all_zero[c] {
            return Rate::Exact;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = eps
            .iter()
            .zip(&points)
            .filter(|(_, p)| p[c].eligible)
            .map(|(&e, p)| (e, p[c].value))
            .unzip();
        fit_loglog(&xs, &ys).map_or(Rate::Insufficient, Rate::Fitted)
    });
    Ok(OrderReport {
        eps: eps.clone(),
        points,
        rates,
    })
}

/// Coefficient of `Ψ_xx[y, y]` in the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiCurvature {
    /// Coefficient 1.
    #[default]
    AsPrinted,
    /// Coefficient ½ (second-order Taylor).
    Taylor,
}

impl PhiCurvature {
    fn factor(self) -> f64 {
        match self {
            PhiCurvature::AsPrinted => 1.0,
            PhiCurvature::Taylor => 0.5,
        }
    }
}

/// Two-sided comparison, both sides estimated on the same paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `lhs − rhs` estimated pathwise.
    pub residual: Estimate,
}

impl Comparison {
    pub fn agrees(&self, k: f64) -> bool {
        self.residual.within(0.0, k)
    }
}

fn compare(lhs: MeanVar, rhs: MeanVar, diff: MeanVar) -> Comparison {
    Comparison {
        lhs: lhs.estimate(),
        rhs: rhs.estimate(),
        residual: diff.estimate(),
    }
}

fn triple_merge(a: &mut (MeanVar, MeanVar, MeanVar), b: (MeanVar, MeanVar, MeanVar)) {
    a.0.merge(&b.0);
    a.1.merge(&b.1);
    a.2.merge(&b.2);
}

/// Compares `Ĵⁿ(uᵉ) − Ĵⁿ(ū)` with its second-order expansion in `(y, z)`.
pub fn check_expansion(
    model: &ModelSpec,
    cand: Candidate<'_>,
    variations: &VariationBatch,
    schedule: JumpSchedule<'_>,
    curvature: PhiCurvature,
) -> Result<Comparison> {
    let grid = cand.grid;
    let window = variations.window();
    let (m, q) = (model.state_dim(), model.control_dim());
    let n_paths = cand.states.n_paths();
    if variations.n_paths() != n_paths || variations.steps() != grid.steps() {
        return Err(invalid("variations do not match the candidate"));
    }
    let c = curvature.factor();
    let acc = block_reduce(
        n_paths,
        || (MeanVar::new(), MeanVar::new(), MeanVar::new()),
        |acc, p| {
            let xs = cand.states.path_states(p);
            let us = cand.states.path_controls(p);
            let inc = cand.noise.path_increments(p);
            let mut xe = vec![0.0; xs.len()];
            simulate_perturbed_path(model, grid, &inc, xs, us, window, &mut xe)
                .map_err(|f| f.into_error(p))?;
            let mut ue = us.to_vec();
            for k in 0..grid.steps() {
                if window.covers(grid, k) {
                    ue[k * q..(k + 1) * q].copy_from_slice(&window.value);
                }
            }
            let (y, z) = (variations.path_y(p), variations.path_z(p));
            let mut lhs =
                running_cost_path(model, grid, &xe, &ue) - running_cost_path(model, grid, xs, us);
            let mut rhs = 0.0;
            let mut gx = vec![0.0; m];
            for i in 1..=grid.n() {
                if !schedule.fires(p, i) {
                    continue;
                }
                let k = grid.coarse_index(i);
                let r = k * m..(k + 1) * m;
                lhs += model.terminal_cost(&xe[r.clone()]) - model.terminal_cost(&xs[r.clone()]);
                model.terminal_x(&xs[r.clone()], &mut gx);
                rhs += (0..m)
                    .map(|a| gx[a] * (y[k * m + a] + z[k * m + a]))
                    .sum::<f64>();
                rhs += c * model.terminal_xx(&xs[r.clone()], &y[r]);
            }
            for k in 0..grid.steps() {
                let (t, dt) = (grid.time(k), grid.dt(k));
                let r = k * m..(k + 1) * m;
                let (x, u) = (&xs[r.clone()], &us[k * q..(k + 1) * q]);
                model.cost_x(t, x, u, &mut gx);
                let mut v = (0..m)
                    .map(|a| gx[a] * (y[k * m + a] + z[k * m + a]))
                    .sum::<f64>();
                v += 0.5 * model.cost_xx(t, x, u, &y[r]);
                if window.covers(grid, k) {
                    v += model.running_cost(t, x, &window.value) - model.running_cost(t, x, u);
                }
                rhs += v * dt;
            }
            acc.0.push(lhs);
            acc.1.push(rhs);
            acc.2.push(lhs - rhs);
            Ok(())
        },
        triple_merge,
    )?;
    Ok(compare(acc.0, acc.1, acc.2))
}

/// Compares `E[−Σ_i φ_x(t_i)(y + z)(t_i)]` with the time integral of the
/// `f_x`, `b_xx`, `σ_xx`, `Δb` and `Δσ` terms weighted by the adjoint. The
/// jump terms are read from `first`, so weights carry over.
pub fn check_duality(
    model: &ModelSpec,
    cand: Candidate<'_>,
    first: &AdjointFirst,
    variations: &VariationBatch,
) -> Result<Comparison> {
    let grid = cand.grid;
    let window = variations.window();
    let (m, d, q) = (model.state_dim(), model.noise_dim(), model.control_dim());
    let n_paths = cand.states.n_paths();
    if variations.n_paths() != n_paths
        || first.n_paths() != n_paths
        || first.steps() != grid.steps()
    {
        return Err(invalid("adjoint, variations and candidate do not match"));
    }
    let beta0 = first.beta0();
    let acc = block_reduce(
        n_paths,
        || (MeanVar::new(), MeanVar::new(), MeanVar::new()),
        |acc, p| {
            let xs = cand.states.path_states(p);
            let us = cand.states.path_controls(p);
            let (y, z) = (variations.path_y(p), variations.path_z(p));
            let mut lhs = 0.0;
            for i in 1..=grid.n() {
                let k = grid.coarse_index(i);
                let jump = first.jump(p, i);
                lhs -= (0..m)
                    .map(|a| jump[a] * (y[k * m + a] + z[k * m + a]))
                    .sum::<f64>();
            }
            let mut fx = vec![0.0; m];
            let mut bxx = vec![0.0; m];
            let mut sxx = vec![0.0; m * d];
            let mut b = vec![0.0; m];
            let mut be = vec![0.0; m];
            let mut s = vec![0.0; m * d];
            let mut se = vec![0.0; m * d];
            let mut rhs = 0.0;
            for k in 0..grid.steps() {
                let (t, dt) = (grid.time(k), grid.dt(k));
                let r = k * m..(k + 1) * m;
                let (x, u, yk) = (&xs[r.clone()], &us[k * q..(k + 1) * q], &y[r.clone()]);
                // p_{k+1} stands in for E[p_{k+1} | F_k]; the factors it
                // multiplies are known at s_k
                let pk = first.p(p, k + 1);
                let qk = first.q(p, k);
                model.cost_x(t, x, u, &mut fx);
                model.drift_xx(t, x, u, yk, &mut bxx);
                model.diffusion_xx(t, x, u, yk, &mut sxx);
                let mut v = beta0 * (0..m).map(|a| fx[a] * (yk[a] + z[k * m + a])).sum::<f64>();
                v += 0.5 * (0..m).map(|a| pk[a] * bxx[a]).sum::<f64>();
                v += 0.5 * (0..m * d).map(|e| qk[e] * sxx[e]).sum::<f64>();
                if window.covers(grid, k) {
                    model.drift(t, x, u, &mut b);
                    model.drift(t, x, &window.value, &mut be);
                    model.diffusion(t, x, u, &mut s);
                    model.diffusion(t, x, &window.value, &mut se);
                    v += (0..m).map(|a| pk[a] * (be[a] - b[a])).sum::<f64>();
                    v += (0..m * d).map(|e| qk[e] * (se[e] - s[e])).sum::<f64>();
                }
                rhs += v * dt;
            }
            acc.0.push(lhs);
            acc.1.push(rhs);
            acc.2.push(lhs - rhs);
            Ok(())
        },
        triple_merge,
    )?;
    Ok(compare(acc.0, acc.1, acc.2))
}

/// Default number of sample times for the inequality check.
pub const DEFAULT_TIME_BUDGET: usize = 16;

/// Evenly spread fine steps; their midpoints are strictly inside coarse
/// intervals.
pub fn sample_steps(grid: &TimeGrid, budget: usize) -> Vec<usize> {
    let steps = grid.steps();
    if budget == 0 || steps == 0 {
        return Vec::new();
    }
    if budget >= steps {
        return (0..steps).collect();
    }
    let mut out: Vec<usize> = (0..budget)
        .map(|i| (2 * i + 1) * steps / (2 * budget))
        .collect();
    out.dedup();
    out
}

/// Gap statistics for one `(t, u)` sample across paths.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub step: usize,
    pub time: f64,
    pub u_index: usize,
    pub min_gap: f64,
    pub mean_gap: f64,
    pub violation_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmpReport {
    pub controls: Vec<Vec<f64>>,
    pub rows: Vec<GapRow>,
    pub min_gap: f64,
    /// Fraction of all `(path, t, u)` samples below `−tol`.
    pub violation_frac: f64,
    /// Largest per-`(t, u)` violation fraction.
    pub max_row_violation: f64,
    /// Gap evaluated at the candidate's own control was exactly zero
    /// everywhere.
    pub zero_at_candidate: bool,
}

impl SmpReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,u_index,min_gap,mean_gap,violation_frac\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.time, r.u_index, r.min_gap, r.mean_gap, r.violation_frac
            );
        }
        out
    }
}

/// Hamiltonian gap `[H(ū) − H(u)] − ½ Σ_j Δσʲᵀ P Δσʲ` at step `k` of `path`,
/// with a noise tolerance built from the local regression standard errors.
#[allow(clippy::too_many_arguments)]
fn gap_at(
    model: &ModelSpec,
    cand: Candidate<'_>,
    first: &AdjointFirst,
    second: &AdjointSecond,
    path: usize,
    k: usize,
    u: &[f64],
) -> (f64, f64) {
    let grid = cand.grid;
    let (m, d) = (model.state_dim(), model.noise_dim());
    let t = grid.time(k);
    let x = cand.states.state(path, k);
    let ubar = cand.states.control(path, k);
    let p = first.p_on_step(grid, path, k);
    let q = first.q(path, k);
    let big_p = second.big_p_on_step(grid, path, k);
    let beta0 = first.beta0();
    let h = hamiltonian_unchecked(model, t, x, ubar, p, q, beta0)
        - hamiltonian_unchecked(model, t, x, u, p, q, beta0);
    let mut s0 = vec![0.0; m * d];
    let mut s1 = vec![0.0; m * d];
    let mut b0 = vec![0.0; m];
    let mut b1 = vec![0.0; m];
    model.diffusion(t, x, ubar, &mut s0);
    model.diffusion(t, x, u, &mut s1);
    model.drift(t, x, ubar, &mut b0);
    model.drift(t, x, u, &mut b1);
    let mut quad = 0.0;
    let mut ds_norm2 = 0.0;
    for j in 0..d {
        let ds: Vec<f64> = (0..m).map(|l| s0[l * d + j] - s1[l * d + j]).collect();
        ds_norm2 += ds.iter().map(|v| v * v).sum::<f64>();
        for a in 0..m {
            for b in 0..m {
                quad += ds[a] * big_p[a * m + b] * ds[b];
            }
        }
    }
    let db = norm((0..m).map(|l| b0[l] - b1[l]));
    let scale =
        db * first.se_p(k) + ds_norm2.sqrt() * first.se_q(k) + 0.5 * ds_norm2 * second.se_p(k);
    (h - 0.5 * quad, scale)
}

/// Checks the maximum-principle inequality at `steps × controls` on every
/// path. A sample violates when its gap is below `−(tol_mult · local SE +
/// 1e-12)`.
pub fn check_maximum_principle(
    model: &ModelSpec,
    cand: Candidate<'_>,
    first: &AdjointFirst,
    second: &AdjointSecond,
    controls: &[Vec<f64>],
    steps: &[usize],
    tol_mult: f64,
) -> Result<SmpReport> {
    let grid = cand.grid;
    let n_paths = cand.states.n_paths();
    if first.n_paths() != n_paths || second.n_paths() != n_paths {
        return Err(invalid("adjoints do not match the candidate"));
    }
    for u in controls {
        model.check_control(u)?;
    }
    if let Some(&k) = steps.iter().find(|&&k| k >= grid.steps()) {
        return Err(invalid(format!("sample step {k} outside the grid")));
    }
    let pairs: Vec<(usize, usize)> = steps
        .iter()
        .flat_map(|&k| (0..controls.len()).map(move |c| (k, c)))
        .collect();
    let rows: Vec<(GapRow, usize, bool)> = pairs
        .par_iter()
        .map(|&(k, c)| {
            let mut mv = MeanVar::new();
            let mut min_gap = f64::INFINITY;
            let mut bad = 0usize;
            let mut zero_ok = true;
            for p in 0..n_paths {
                let (g, scale) = gap_at(model, cand, first, second, p, k, &controls[c]);
                if cand.states.control(p, k) == controls[c].as_slice() {
                    zero_ok &= g == 0.0;
                }
                mv.push(g);
                min_gap = min_gap.min(g);
                if g < -(tol_mult * scale + 1e-12) {
                    bad += 1;
                }
            }
            let row = GapRow {
                step: k,
                time: grid.time(k) + 0.5 * grid.dt(k),
                u_index: c,
                min_gap,
                mean_gap: mv.mean(),
                violation_frac: bad as f64 / n_paths as f64,
            };
            (row, bad, zero_ok)
        })
        .collect();
    let total = (pairs.len() * n_paths).max(1) as f64;
    let bad: usize = rows.iter().map(|r| r.1).sum();
    Ok(SmpReport {
        controls: controls.to_vec(),
        min_gap: rows
            .iter()
            .map(|r| r.0.min_gap)
            .fold(f64::INFINITY, f64::min),
        violation_frac: bad as f64 / total,
        max_row_violation: rows.iter().map(|r| r.0.violation_frac).fold(0.0, f64::max),
        zero_at_candidate: rows.iter().all(|r| r.2),
        rows: rows.into_iter().map(|r| r.0).collect(),
    })
}
