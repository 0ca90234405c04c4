//! Backward sweeps for the first- and second-order adjoint processes with
//! jumps at the coarse points, and the Hamiltonian.
//!
//! Within a fine step `k` of length `Δ` both sweeps use
//!
//! ```text
//! v̂_k  = E[v_{k+1} | X_k]            z_k = E[(v_{k+1} − v̂_k) ΔW_kᵀ | X_k] / Δ
//! v_k  = v̂_k + driver(X_k, u_k, v̂_k, z_k) Δ
//! ```
//!
//! and at a coarse point `t_i` the stored right limit `v(t_i⁺)` receives the
//! jump `v(t_i) = v(t_i⁺) − w_i·φ(t_i)`. The conditional expectations are
//! either exact (closed form, when the recursion stays deterministic) or
//! least-squares projections, computed separately for paths that stopped in
//! an earlier interval, stopped in the current interval, or are still alive.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::forward::StateBatch;
use crate::grid::{BrownianBatch, TimeGrid};
use crate::model::{polarize, ModelSpec};
use crate::regression::project;
use crate::stopping::JumpSchedule;

/// Default polynomial degree of the regression basis.
pub const DEFAULT_DEGREE: usize = 2;

/// Relative tolerance for declaring two per-path quantities equal in the
/// closed-form eligibility test.
const SAME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverBackend {
    /// Deterministic recursion with vanishing martingale parts. Refuses any
    /// candidate on which the driver or a jump differs between paths.
    ClosedForm,
    /// Least-squares Monte Carlo on a total-degree polynomial basis.
    Regression { degree: usize },
}

impl SolverBackend {
    pub fn label(&self) -> &'static str {
        match self {
            SolverBackend::ClosedForm => "closed",
            SolverBackend::Regression { .. } => "regress",
        }
    }
}

impl Default for SolverBackend {
    fn default() -> Self {
        SolverBackend::Regression {
            degree: DEFAULT_DEGREE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointOptions {
    /// Jump coefficients `w_1..w_n`; `None` means all ones.
    pub weights: Option<Vec<f64>>,
    /// Weight of the running cost in the driver.
    pub beta0: f64,
    pub backend: SolverBackend,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            weights: None,
            beta0: 1.0,
            backend: SolverBackend::default(),
        }
    }
}

impl AdjointOptions {
    pub fn with_backend(backend: SolverBackend) -> Self {
        Self {
            backend,
            ..Self::default()
        }
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i - 1])
    }
}

/// A simulated candidate: its states and applied controls together with the
/// noise and grid that produced them.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub states: &'a StateBatch,
    pub noise: &'a BrownianBatch,
    pub grid: &'a TimeGrid,
}

impl Candidate<'_> {
    fn validate(&self, model: &ModelSpec) -> Result<()> {
        let (s, g, w) = (self.states, self.grid, self.noise);
        if s.steps() != g.steps() || w.steps() != g.steps() {
            return Err(invalid(
                "candidate, noise and grid disagree on the step count",
            ));
        }
        if s.n_paths() != w.n_paths() {
            return Err(invalid("candidate and noise disagree on the path count"));
        }
        if s.state_dim() != model.state_dim() || w.dim() != model.noise_dim() {
            return Err(invalid("candidate dimensions do not match the model"));
        }
        Ok(())
    }
}

/// Output of one backward sweep. Values are step-major:
/// `values[(k * paths + path) * dim + e]`, martingale parts
/// `mart[((k * paths + path) * dim + e) * d + j]`.
#[derive(Debug, Clone, PartialEq)]
struct Sweep {
    dim: usize,
    d: usize,
    n_paths: usize,
    steps: usize,
    values: Vec<f64>,
    mart: Vec<f64>,
    right: Vec<f64>,
    jumps: Vec<f64>,
    se_value: Vec<f64>,
    se_mart: Vec<f64>,
}

impl Sweep {
    fn value(&self, path: usize, k: usize) -> &[f64] {
        let o = (k * self.n_paths + path) * self.dim;
        &self.values[o..o + self.dim]
    }

    fn mart(&self, path: usize, k: usize) -> &[f64] {
        let w = self.dim * self.d;
        let o = (k * self.n_paths + path) * w;
        &self.mart[o..o + w]
    }

    fn right(&self, path: usize, i: usize) -> &[f64] {
        let o = ((i - 1) * self.n_paths + path) * self.dim;
        &self.right[o..o + self.dim]
    }

    fn jump(&self, path: usize, i: usize) -> &[f64] {
        let o = ((i - 1) * self.n_paths + path) * self.dim;
        &self.jumps[o..o + self.dim]
    }

    /// Value governing step `k` forward: the right limit at interior coarse
    /// points.
    fn on_step(&self, grid: &TimeGrid, path: usize, k: usize) -> &[f64] {
        if k > 0 && k < self.steps && grid.is_coarse_point(k) {
            self.right(path, grid.interval_of_step(k) - 1)
        } else {
            self.value(path, k)
        }
    }
}

fn same(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= SAME_TOL * (1.0 + x.abs().max(y.abs())))
}

/// Regime of a path at step `k` inside interval `i`: 0 stopped before
/// `t_{i-1}`, 1 stopped in `[t_{i-1}, s_k]`, 2 still running.
fn regime(schedule: JumpSchedule<'_>, path: usize, i: usize, s: f64) -> usize {
    match schedule.stopping() {
        None => 0,
        Some(disc) if disc.index[path] < i => 0,
        Some(disc) if disc.tau[path] <= s => 1,
        Some(_) => 2,
    }
}

struct SweepContext<'a> {
    cand: Candidate<'a>,
    schedule: JumpSchedule<'a>,
    m: usize,
    d: usize,
    increments: Vec<f64>,
}

impl<'a> SweepContext<'a> {
    fn new(model: &ModelSpec, cand: Candidate<'a>, schedule: JumpSchedule<'a>) -> Result<Self> {
        cand.validate(model)?;
        if let Some(disc) = schedule.stopping() {
            if disc.n_paths() != cand.states.n_paths() {
                return Err(invalid(
                    "stopping times and candidate have different path counts",
                ));
            }
        }
        let steps = cand.grid.steps();
        let d = model.noise_dim();
        let mut increments = vec![0.0; cand.states.n_paths() * steps * d];
        if steps > 0 {
            increments
                .par_chunks_mut(steps * d)
                .enumerate()
                .for_each(|(p, out)| cand.noise.fill_path(p, out));
        }
        Ok(Self {
            cand,
            schedule,
            m: model.state_dim(),
            d,
            increments,
        })
    }

    fn n_paths(&self) -> usize {
        self.cand.states.n_paths()
    }

    fn dw(&self, path: usize, k: usize) -> &[f64] {
        let steps = self.cand.grid.steps();
        let o = (path * steps + k) * self.d;
        &self.increments[o..o + self.d]
    }

    /// Generic backward sweep. `jump(path, i, out)` writes the (already
    /// weighted and indicator-masked) jump term; `driver(path, k, v̂, z, out)`
    /// the generator.
    fn sweep<J, D>(
        &self,
        dim: usize,
        backend: SolverBackend,
        symmetric: bool,
        jump: J,
        driver: D,
    ) -> Result<Sweep>
    where
        J: Fn(usize, usize, &mut [f64]) + Sync,
        D: Fn(usize, usize, &[f64], &[f64], &mut [f64]) + Sync,
    {
        let grid = self.cand.grid;
        let (n_p, steps, n, d) = (self.n_paths(), grid.steps(), grid.n(), self.d);
        let mut sw = Sweep {
            dim,
            d,
            n_paths: n_p,
            steps,
            values: vec![0.0; (steps + 1) * n_p * dim],
            mart: vec![0.0; steps * n_p * dim * d],
            right: vec![0.0; n * n_p * dim],
            jumps: vec![0.0; n * n_p * dim],
            se_value: vec![0.0; steps],
            se_mart: vec![0.0; steps],
        };
        let row = n_p * dim;

        // terminal point: right limit zero, value is minus the jump
        self.apply_jump(&mut sw, steps, n, backend, &jump)?;

        for k in (0..steps).rev() {
            let dt = grid.dt(k);
            let s = grid.time(k);
            let i = grid.interval_of_step(k);
            let (head, tail) = sw.values.split_at_mut((k + 1) * row);
            let next = &tail[..row];
            let cur = &mut head[k * row..];
            let mart = &mut sw.mart[k * row * d..(k + 1) * row * d];

            match backend {
                SolverBackend::ClosedForm => {
                    let vhat = next[..dim].to_vec();
                    let zero = vec![0.0; dim * d];
                    let mut reference = vec![0.0; dim];
                    driver(0, k, &vhat, &zero, &mut reference);
                    let bad = cur
                        .par_chunks_mut(dim)
                        .enumerate()
                        .map(|(p, out)| {
                            let mut drv = vec![0.0; dim];
                            driver(p, k, &vhat, &zero, &mut drv);
                            for e in 0..dim {
                                out[e] = vhat[e] + drv[e] * dt;
                            }
                            if same(&drv, &reference) && same(&next[p * dim..(p + 1) * dim], &vhat)
                            {
                                usize::MAX
                            } else {
                                p
                            }
                        })
                        .min()
                        .unwrap_or(usize::MAX);
                    if bad != usize::MAX {
                        return Err(Error::BackendRefused(format!(
                            "adjoint driver differs between paths (path {bad}, step {k})"
                        )));
                    }
                }
                SolverBackend::Regression { degree } => {
                    let mut groups: [Vec<usize>; 3] = Default::default();
                    for p in 0..n_p {
                        groups[regime(self.schedule, p, i, s)].push(p);
                    }
                    let states = self.cand.states;
                    let mut fits = Vec::with_capacity(3);
                    let (mut se_v, mut se_z) = (0.0f64, 0.0f64);
                    for members in &groups {
                        let fit_v = project(
                            members,
                            self.m,
                            |p| states.state(p, k),
                            dim,
                            |p, out| out.copy_from_slice(&next[p * dim..(p + 1) * dim]),
                            degree,
                            k,
                        )?;
                        // martingale part from the projection residual: same
                        // conditional mean, far less variance
                        let fit_z = project(
                            members,
                            self.m,
                            |p| states.state(p, k),
                            dim * d,
                            |p, out| {
                                let mut vhat = vec![0.0; dim];
                                fit_v.predict(states.state(p, k), &mut vhat);
                                let v = &next[p * dim..(p + 1) * dim];
                                let dw = self.dw(p, k);
                                for e in 0..dim {
                                    for j in 0..d {
                                        out[e * d + j] = (v[e] - vhat[e]) * dw[j] / dt;
                                    }
                                }
                            },
                            degree,
                            k,
                        )?;
                        se_v = se_v.max(fit_v.max_mean_se());
                        se_z = se_z.max(fit_z.max_mean_se());
                        fits.push((fit_v, fit_z));
                    }
                    sw.se_value[k] = se_v;
                    sw.se_mart[k] = se_z;
                    cur[..row]
                        .par_chunks_mut(dim)
                        .zip(mart.par_chunks_mut(dim * d))
                        .enumerate()
                        .for_each(|(p, (out, z))| {
                            let (fit_v, fit_z) = &fits[regime(self.schedule, p, i, s)];
                            let mut vhat = vec![0.0; dim];
                            fit_v.predict(states.state(p, k), &mut vhat);
                            fit_z.predict(states.state(p, k), z);
                            let mut drv = vec![0.0; dim];
                            driver(p, k, &vhat, z, &mut drv);
                            for e in 0..dim {
                                out[e] = vhat[e] + drv[e] * dt;
                            }
                        });
                }
            }
            if symmetric {
                let m = (dim as f64).sqrt() as usize;
                cur[..row]
                    .par_chunks_mut(dim)
                    .for_each(|v| symmetrize(m, v));
            }
            if k > 0 && grid.is_coarse_point(k) {
                self.apply_jump(&mut sw, k, grid.interval_of_step(k) - 1, backend, &jump)?;
            }
        }
        Ok(sw)
    }

    /// Moves `values[k]` into the right limit of coarse point `i` (zero at
    /// `t_n`) and stores `right − jump` as the value at `t_i`.
    fn apply_jump<J>(
        &self,
        sw: &mut Sweep,
        k: usize,
        i: usize,
        backend: SolverBackend,
        jump: &J,
    ) -> Result<()>
    where
        J: Fn(usize, usize, &mut [f64]) + Sync,
    {
        let (n_p, dim) = (sw.n_paths, sw.dim);
        let row = n_p * dim;
        let terminal = k == sw.steps;
        let cur = &mut sw.values[k * row..(k + 1) * row];
        let right = &mut sw.right[(i - 1) * row..i * row];
        let jumps = &mut sw.jumps[(i - 1) * row..i * row];
        cur.par_chunks_mut(dim)
            .zip(right.par_chunks_mut(dim))
            .zip(jumps.par_chunks_mut(dim))
            .enumerate()
            .for_each(|(p, ((v, r), j))| {
                if terminal {
                    r.fill(0.0);
                } else {
                    r.copy_from_slice(v);
                }
                jump(p, i, j);
                for e in 0..dim {
                    v[e] = r[e] - j[e];
                }
            });
        if backend == SolverBackend::ClosedForm {
            let first = jumps[..dim].to_vec();
            if let Some(p) = (0..n_p).find(|&p| !same(&jumps[p * dim..(p + 1) * dim], &first)) {
                return Err(Error::BackendRefused(format!(
                    "jump at coarse point {i} differs between paths (path {p})"
                )));
            }
        }
        Ok(())
    }
}

fn symmetrize(m: usize, v: &mut [f64]) {
    for a in 0..m {
        for b in (a + 1)..m {
            let s = 0.5 * (v[a * m + b] + v[b * m + a]);
            v[a * m + b] = s;
            v[b * m + a] = s;
        }
    }
}

/// First-order adjoint `(p, q)` along a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointFirst {
    sweep: Sweep,
    m: usize,
    beta0: f64,
    backend: SolverBackend,
}

impl AdjointFirst {
    pub fn backend(&self) -> SolverBackend {
        self.backend
    }

    /// Running-cost weight the driver was built with.
    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn state_dim(&self) -> usize {
        self.m
    }

    pub fn n_paths(&self) -> usize {
        self.sweep.n_paths
    }

    pub fn steps(&self) -> usize {
        self.sweep.steps
    }

    /// `p(s_k)`; at a coarse point this is the left value `p(t_i)`.
    pub fn p(&self, path: usize, k: usize) -> &[f64] {
        self.sweep.value(path, k)
    }

    /// `p` in force on step `k` (right limit at interior coarse points).
    pub fn p_on_step(&self, grid: &TimeGrid, path: usize, k: usize) -> &[f64] {
        self.sweep.on_step(grid, path, k)
    }

    /// `q` on step `k`, layout `l * d + j`.
    pub fn q(&self, path: usize, k: usize) -> &[f64] {
        self.sweep.mart(path, k)
    }

    /// `p(t_i⁺)`, `i = 1..n`.
    pub fn p_right(&self, path: usize, i: usize) -> &[f64] {
        self.sweep.right(path, i)
    }

    /// Stored jump term `w_i·Ψ_x(X(t_i))·1{fires}`, so `p(t_i) = p(t_i⁺) − jump`.
    pub fn jump(&self, path: usize, i: usize) -> &[f64] {
        self.sweep.jump(path, i)
    }

    /// Regression standard error of `p̂` at step `k` (0 for closed form).
    pub fn se_p(&self, k: usize) -> f64 {
        self.sweep.se_value[k]
    }

    pub fn se_q(&self, k: usize) -> f64 {
        self.sweep.se_mart[k]
    }

    /// Largest `|p|` difference over paths, steps and coordinates.
    pub fn sup_distance(&self, other: &AdjointFirst) -> f64 {
        self.sweep
            .values
            .iter()
            .zip(&other.sweep.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `path,step,time,p_1..p_m,q_11..q_md`; `q` is empty on the last row.
    pub fn to_csv(&self, grid: &TimeGrid) -> String {
        let (m, d) = (self.m, self.sweep.d);
        let mut out = String::from("path,step,time");
        for l in 1..=m {
            let _ = write!(out, ",p_{l}");
        }
        for l in 1..=m {
            for j in 1..=d {
                let _ = write!(out, ",q_{l}{j}");
            }
        }
        out.push('\n');
        for path in 0..self.n_paths() {
            for k in 0..=self.steps() {
                let _ = write!(out, "{path},{k},{}", grid.time(k));
                for v in self.p(path, k) {
                    let _ = write!(out, ",{v}");
                }
                if k < self.steps() {
                    for v in self.q(path, k) {
                        let _ = write!(out, ",{v}");
                    }
                } else {
                    out.push_str(&",".repeat(m * d));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Second-order adjoint `(P, Q)` along a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSecond {
    sweep: Sweep,
    m: usize,
    backend: SolverBackend,
}

impl AdjointSecond {
    pub fn backend(&self) -> SolverBackend {
        self.backend
    }

    pub fn n_paths(&self) -> usize {
        self.sweep.n_paths
    }

    pub fn steps(&self) -> usize {
        self.sweep.steps
    }

    /// `P(s_k)`, row-major `m × m`.
    pub fn big_p(&self, path: usize, k: usize) -> &[f64] {
        self.sweep.value(path, k)
    }

    pub fn big_p_on_step(&self, grid: &TimeGrid, path: usize, k: usize) -> &[f64] {
        self.sweep.on_step(grid, path, k)
    }

    /// `Q` on step `k`, layout `(a * m + b) * d + j`.
    pub fn big_q(&self, path: usize, k: usize) -> &[f64] {
        self.sweep.mart(path, k)
    }

    /// `Qʲ` as a row-major `m × m` matrix.
    pub fn big_q_column(&self, path: usize, k: usize, j: usize) -> Vec<f64> {
        let d = self.sweep.d;
        self.big_q(path, k)
            .iter()
            .skip(j)
            .step_by(d)
            .copied()
            .collect()
    }

    pub fn big_p_right(&self, path: usize, i: usize) -> &[f64] {
        self.sweep.right(path, i)
    }

    /// Stored `w_i·Ψ_xx(X(t_i))·1{fires}`, so `P(t_i) = P(t_i⁺) − jump`.
    pub fn jump(&self, path: usize, i: usize) -> &[f64] {
        self.sweep.jump(path, i)
    }

    pub fn se_p(&self, k: usize) -> f64 {
        self.sweep.se_value[k]
    }

    pub fn se_q(&self, k: usize) -> f64 {
        self.sweep.se_mart[k]
    }

    /// `path,step,time,P_11..P_mm,Q1_11..Qd_mm`.
    pub fn to_csv(&self, grid: &TimeGrid) -> String {
        let (m, d) = (self.m, self.sweep.d);
        let mut out = String::from("path,step,time");
        for a in 1..=m {
            for b in 1..=m {
                let _ = write!(out, ",P_{a}{b}");
            }
        }
        for j in 1..=d {
            for a in 1..=m {
                for b in 1..=m {
                    let _ = write!(out, ",Q{j}_{a}{b}");
                }
            }
        }
        out.push('\n');
        for path in 0..self.n_paths() {
            for k in 0..=self.steps() {
                let _ = write!(out, "{path},{k},{}", grid.time(k));
                for v in self.big_p(path, k) {
                    let _ = write!(out, ",{v}");
                }
                if k < self.steps() {
                    for j in 0..d {
                        for v in self.big_q_column(path, k, j) {
                            let _ = write!(out, ",{v}");
                        }
                    }
                } else {
                    out.push_str(&",".repeat(m * m * d));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn check_weights(opts: &AdjointOptions, n: usize) -> Result<()> {
    match &opts.weights {
        Some(w) if w.len() != n => Err(invalid(format!(
            "expected {n} jump weights, got {}",
            w.len()
        ))),
        Some(w) if w.iter().any(|v| !v.is_finite()) => Err(invalid("jump weights must be finite")),
        _ if !opts.beta0.is_finite() => Err(invalid("beta0 must be finite")),
        _ => Ok(()),
    }
}

/// Solves the first-order adjoint equation backward from `p(t_n⁺) = 0`.
pub fn solve_first_adjoint(
    model: &ModelSpec,
    cand: Candidate<'_>,
    schedule: JumpSchedule<'_>,
    opts: &AdjointOptions,
) -> Result<AdjointFirst> {
    check_weights(opts, cand.grid.n())?;
    let ctx = SweepContext::new(model, cand, schedule)?;
    let (m, d) = (ctx.m, ctx.d);
    let (states, grid) = (cand.states, cand.grid);
    let beta0 = opts.beta0;
    let sweep = ctx.sweep(
        m,
        opts.backend,
        false,
        |p, i, out| {
            if schedule.fires(p, i) {
                model.terminal_x(states.state(p, grid.coarse_index(i)), out);
                let w = opts.weight(i);
                out.iter_mut().for_each(|v| *v *= w);
            } else {
                out.fill(0.0);
            }
        },
        |p, k, vhat, z, out| {
            let (t, x, u) = (grid.time(k), states.state(p, k), states.control(p, k));
            let mut bx = vec![0.0; m * m];
            let mut sx = vec![0.0; d * m * m];
            let mut fx = vec![0.0; m];
            model.drift_x(t, x, u, &mut bx);
            model.diffusion_x(t, x, u, &mut sx);
            model.cost_x(t, x, u, &mut fx);
            for a in 0..m {
                let mut acc = -beta0 * fx[a];
                for l in 0..m {
                    acc += bx[l * m + a] * vhat[l];
                    for j in 0..d {
                        acc += sx[j * m * m + l * m + a] * z[l * d + j];
                    }
                }
                out[a] = acc;
            }
        },
    )?;
    Ok(AdjointFirst {
        sweep,
        m,
        beta0,
        backend: opts.backend,
    })
}

/// `H_xx(x, u, p, q)` with running-cost weight `beta0`, row-major `m × m`.
pub fn hamiltonian_hessian(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    q: &[f64],
    beta0: f64,
) -> Vec<f64> {
    let (m, d) = (model.state_dim(), model.noise_dim());
    let mut out = vec![0.0; m * m];
    polarize(m, &mut out, |y| {
        let mut bxx = vec![0.0; m];
        let mut sxx = vec![0.0; m * d];
        model.drift_xx(t, x, u, y, &mut bxx);
        model.diffusion_xx(t, x, u, y, &mut sxx);
        let drift: f64 = bxx.iter().zip(p).map(|(a, b)| a * b).sum();
        let diff: f64 = sxx.iter().zip(q).map(|(a, b)| a * b).sum();
        drift + diff - beta0 * model.cost_xx(t, x, u, y)
    });
    out
}

/// Solves the second-order adjoint equation backward from `P(t_n⁺) = 0`,
/// using `(p, q)` from `first` in `H_xx`.
pub fn solve_second_adjoint(
    model: &ModelSpec,
    cand: Candidate<'_>,
    schedule: JumpSchedule<'_>,
    first: &AdjointFirst,
    opts: &AdjointOptions,
) -> Result<AdjointSecond> {
    check_weights(opts, cand.grid.n())?;
    if first.n_paths() != cand.states.n_paths() || first.steps() != cand.grid.steps() {
        return Err(invalid("first-order adjoint does not match the candidate"));
    }
    let ctx = SweepContext::new(model, cand, schedule)?;
    let (m, d) = (ctx.m, ctx.d);
    let (states, grid) = (cand.states, cand.grid);
    let beta0 = opts.beta0;
    let mm = m * m;
    let sweep = ctx.sweep(
        mm,
        opts.backend,
        true,
        |p, i, out| {
            if schedule.fires(p, i) {
                model.terminal_hessian(states.state(p, grid.coarse_index(i)), out);
                let w = opts.weight(i);
                out.iter_mut().for_each(|v| *v *= w);
            } else {
                out.fill(0.0);
            }
        },
        |p, k, ph, z, out| {
            let (t, x, u) = (grid.time(k), states.state(p, k), states.control(p, k));
            let mut bx = vec![0.0; mm];
            let mut sx = vec![0.0; d * mm];
            model.drift_x(t, x, u, &mut bx);
            model.diffusion_x(t, x, u, &mut sx);
            let hxx = hamiltonian_hessian(
                model,
                t,
                x,
                u,
                first.p_on_step(grid, p, k),
                first.q(p, k),
                beta0,
            );
            for a in 0..m {
                for b in 0..m {
                    let mut acc = hxx[a * m + b];
                    for l in 0..m {
                        acc += bx[l * m + a] * ph[l * m + b] + ph[a * m + l] * bx[l * m + b];
                    }
                    for j in 0..d {
                        let s = &sx[j * mm..(j + 1) * mm];
                        for l in 0..m {
                            for r in 0..m {
                                acc += s[l * m + a] * ph[l * m + r] * s[r * m + b];
                            }
                            acc += s[l * m + a] * z[(l * m + b) * d + j]
                                + z[(a * m + l) * d + j] * s[l * m + b];
                        }
                    }
                    out[a * m + b] = acc;
                }
            }
        },
    )?;
    Ok(AdjointSecond {
        sweep,
        m,
        backend: opts.backend,
    })
}

/// `H = bᵀp + Σ_j σʲᵀqʲ − β0·f` with `q` laid out `l * d + j`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    q: &[f64],
    beta0: f64,
) -> Result<f64> {
    model.check_control(u)?;
    let (m, d) = (model.state_dim(), model.noise_dim());
    if x.len() != m || p.len() != m || q.len() != m * d {
        return Err(invalid(
            "hamiltonian argument dimensions do not match the model",
        ));
    }
    Ok(hamiltonian_unchecked(model, t, x, u, p, q, beta0))
}

pub(crate) fn hamiltonian_unchecked(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    q: &[f64],
    beta0: f64,
) -> f64 {
    let (m, d) = (model.state_dim(), model.noise_dim());
    let mut b = vec![0.0; m];
    let mut s = vec![0.0; m * d];
    model.drift(t, x, u, &mut b);
    model.diffusion(t, x, u, &mut s);
    let drift: f64 = b.iter().zip(p).map(|(a, c)| a * c).sum();
    let diff: f64 = s.iter().zip(q).map(|(a, c)| a * c).sum();
    drift + diff - beta0 * model.running_cost(t, x, u)
}
