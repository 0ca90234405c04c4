//! Euler–Maruyama simulation of the controlled state and spike-perturbed
//! controls.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{BrownianBatch, TimeGrid};
use crate::model::ModelSpec;

pub type FeedbackFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScheduleFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Spike window `[start, start + width)` carrying a replacement value.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeWindow {
    pub start: f64,
    pub width: f64,
    pub value: Vec<f64>,
}

impl SpikeWindow {
    pub fn new(start: f64, width: f64, value: Vec<f64>) -> Self {
        Self {
            start,
            width,
            value,
        }
    }

    /// Whether fine step `[s_k, s_{k+1})` lies in the window. Controls are
    /// sampled at the left endpoint.
    pub fn covers(&self, grid: &TimeGrid, k: usize) -> bool {
        if self.width <= 0.0 {
            return false;
        }
        let s = grid.time(k);
        let tol = 1e-9 * grid.dt(k);
        s >= self.start - tol && s < self.start + self.width - tol
    }

    /// First fine step inside the window, if any.
    pub fn first_step(&self, grid: &TimeGrid) -> Option<usize> {
        (0..grid.steps()).find(|&k| self.covers(grid, k))
    }

    /// Requires `[start, start + width] ⊂ (t_{i-1}, t_i)` for some `i`.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if !(self.width >= 0.0) || !self.start.is_finite() || !self.width.is_finite() {
            return Err(invalid(
                "spike window needs finite start and non-negative width",
            ));
        }
        if self.width == 0.0 {
            return Ok(());
        }
        let end = self.start + self.width;
        let inside = (1..=grid.n())
            .any(|i| grid.coarse_time(i - 1) < self.start && end < grid.coarse_time(i));
        if inside {
            Ok(())
        } else {
            Err(Error::InvalidWindow {
                start: self.start,
                end,
            })
        }
    }
}

/// An adapted control process.
#[derive(Clone)]
pub enum ControlProcess {
    /// The same value at every time.
    Constant(Vec<f64>),
    /// One value per coarse interval, in interval order.
    Piecewise(Vec<Vec<f64>>),
    /// Deterministic schedule evaluated at the left end of each fine step.
    Schedule(ScheduleFn),
    /// Feedback on the current state, `u = κ(s_k, X(s_k))`.
    Feedback(FeedbackFn),
    /// Base control replaced by a fixed value on a spike window.
    Spike {
        base: Box<ControlProcess>,
        window: SpikeWindow,
    },
}

impl fmt::Debug for ControlProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlProcess::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            ControlProcess::Piecewise(v) => f.debug_tuple("Piecewise").field(v).finish(),
            ControlProcess::Schedule(_) => f.write_str("Schedule(..)"),
            ControlProcess::Feedback(_) => f.write_str("Feedback(..)"),
            ControlProcess::Spike { base, window } => f
                .debug_struct("Spike")
                .field("base", base)
                .field("window", window)
                .finish(),
        }
    }
}

impl ControlProcess {
    pub fn schedule(g: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        ControlProcess::Schedule(Arc::new(g))
    }

    pub fn feedback(g: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        ControlProcess::Feedback(Arc::new(g))
    }

    /// True when the control does not depend on the state.
    pub fn is_open_loop(&self) -> bool {
        match self {
            ControlProcess::Feedback(_) => false,
            ControlProcess::Spike { base, .. } => base.is_open_loop(),
            _ => true,
        }
    }

    /// Value applied on fine step `k` given the state at `s_k`.
    pub fn eval(&self, grid: &TimeGrid, k: usize, x: &[f64], out: &mut [f64]) {
        match self {
            ControlProcess::Constant(v) => out.copy_from_slice(v),
            ControlProcess::Piecewise(vals) => {
                out.copy_from_slice(&vals[grid.interval_of_step(k) - 1])
            }
            ControlProcess::Schedule(g) => g(grid.time(k), out),
            ControlProcess::Feedback(g) => g(grid.time(k), x, out),
            ControlProcess::Spike { base, window } => {
                if window.covers(grid, k) {
                    out.copy_from_slice(&window.value);
                } else {
                    base.eval(grid, k, x, out);
                }
            }
        }
    }

    /// Checks structural consistency against a grid (piecewise lengths and
    /// spike windows).
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        match self {
            ControlProcess::Piecewise(vals) if vals.len() != grid.n() => Err(invalid(format!(
                "piecewise control has {} values for {} intervals",
                vals.len(),
                grid.n()
            ))),
            ControlProcess::Spike { base, window } => {
                window.validate(grid)?;
                base.validate(grid)
            }
            _ => Ok(()),
        }
    }
}

/// Replaces `base` by `value` on `[v, v + eps)`.
pub fn spike_perturb(
    base: &ControlProcess,
    v: f64,
    eps: f64,
    value: Vec<f64>,
) -> Result<ControlProcess> {
    if !(eps >= 0.0) || !v.is_finite() || v < 0.0 {
        return Err(invalid("spike needs v >= 0 and eps >= 0"));
    }
    Ok(ControlProcess::Spike {
        base: Box::new(base.clone()),
        window: SpikeWindow::new(v, eps, value),
    })
}

/// Simulated states and applied controls for a batch of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBatch {
    m: usize,
    q: usize,
    steps: usize,
    n_paths: usize,
    x0: Vec<f64>,
    x: Vec<f64>,
    u: Vec<f64>,
}

impl StateBatch {
    pub fn state_dim(&self) -> usize {
        self.m
    }

    pub fn control_dim(&self) -> usize {
        self.q
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// `X(s_k)` on `path`.
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let base = (path * (self.steps + 1) + k) * self.m;
        &self.x[base..base + self.m]
    }

    /// Control applied on `[s_k, s_{k+1})`.
    pub fn control(&self, path: usize, k: usize) -> &[f64] {
        let base = (path * self.steps + k) * self.q;
        &self.u[base..base + self.q]
    }

    pub fn path_states(&self, path: usize) -> &[f64] {
        let len = (self.steps + 1) * self.m;
        &self.x[path * len..(path + 1) * len]
    }

    pub fn path_controls(&self, path: usize) -> &[f64] {
        let len = self.steps * self.q;
        &self.u[path * len..(path + 1) * len]
    }

    /// CSV dump: `path,step,time,X_1..X_m,u_1..u_q`. The last point has no
    /// applied control, its control fields are empty.
    pub fn to_csv(&self, grid: &TimeGrid) -> String {
        let mut out = String::from("path,step,time");
        for l in 1..=self.m {
            let _ = write!(out, ",X_{l}");
        }
        for c in 1..=self.q {
            let _ = write!(out, ",u_{c}");
        }
        out.push('\n');
        for p in 0..self.n_paths {
            for k in 0..=self.steps {
                let _ = write!(out, "{p},{k},{}", grid.time(k));
                for v in self.state(p, k) {
                    let _ = write!(out, ",{v}");
                }
                if k < self.steps {
                    for v in self.control(p, k) {
                        let _ = write!(out, ",{v}");
                    }
                } else {
                    out.push_str(&",".repeat(self.q));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Euler–Maruyama on one path. `xs` receives `steps + 1` states, `us` the
/// `steps` applied controls. Returns the failing step on divergence.
pub fn simulate_path(
    model: &ModelSpec,
    control: &ControlProcess,
    grid: &TimeGrid,
    increments: &[f64],
    x0: &[f64],
    xs: &mut [f64],
    us: &mut [f64],
) -> std::result::Result<(), PathFailure> {
    let (m, d, q) = (model.state_dim(), model.noise_dim(), model.control_dim());
    let mut b = vec![0.0; m];
    let mut s = vec![0.0; m * d];
    xs[..m].copy_from_slice(x0);
    for k in 0..grid.steps() {
        let (head, tail) = xs.split_at_mut((k + 1) * m);
        let x = &head[k * m..];
        let u = &mut us[k * q..(k + 1) * q];
        control.eval(grid, k, x, u);
        if !model.control_set().contains(u) {
            return Err(PathFailure::Domain(u.to_vec()));
        }
        euler_step(
            model,
            grid,
            k,
            x,
            u,
            &increments[k * d..(k + 1) * d],
            &mut b,
            &mut s,
            &mut tail[..m],
        );
        if tail[..m].iter().any(|v| !v.is_finite()) {
            return Err(PathFailure::Diverged(k + 1));
        }
    }
    Ok(())
}

/// `next = x + b Δs + σ ΔW`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn euler_step(
    model: &ModelSpec,
    grid: &TimeGrid,
    k: usize,
    x: &[f64],
    u: &[f64],
    dw: &[f64],
    b: &mut [f64],
    s: &mut [f64],
    next: &mut [f64],
) {
    let (m, d) = (model.state_dim(), model.noise_dim());
    let t = grid.time(k);
    let dt = grid.dt(k);
    model.drift(t, x, u, b);
    model.diffusion(t, x, u, s);
    for l in 0..m {
        let mut v = x[l] + b[l] * dt;
        for j in 0..d {
            v += s[l * d + j] * dw[j];
        }
        next[l] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathFailure {
    Domain(Vec<f64>),
    Diverged(usize),
}

impl PathFailure {
    pub(crate) fn into_error(self, path: usize) -> Error {
        match self {
            PathFailure::Domain(value) => Error::Domain { value },
            PathFailure::Diverged(step) => Error::SimulationDiverged { path, step },
        }
    }
}

/// Simulates every path of `noise` under `control` from `x0`.
pub fn simulate_forward(
    model: &ModelSpec,
    control: &ControlProcess,
    noise: &BrownianBatch,
    grid: &TimeGrid,
    x0: &[f64],
) -> Result<StateBatch> {
    let (m, d, q) = (model.state_dim(), model.noise_dim(), model.control_dim());
    if x0.len() != m {
        return Err(invalid(format!(
            "x0 has dimension {}, model expects {m}",
            x0.len()
        )));
    }
    if noise.dim() != d {
        return Err(invalid(format!(
            "noise dimension {} does not match model dimension {d}",
            noise.dim()
        )));
    }
    if noise.steps() != grid.steps() {
        return Err(invalid("noise and grid step counts differ"));
    }
    control.validate(grid)?;
    let steps = grid.steps();
    let n_paths = noise.n_paths();
    let mut x = vec![0.0; n_paths * (steps + 1) * m];
    let mut u = vec![0.0; n_paths * steps * q.max(1)];
    let u_len = steps * q;
    let failures: Vec<Option<Error>> = x
        .par_chunks_mut((steps + 1) * m)
        .zip(u.par_chunks_mut(u_len.max(1)))
        .enumerate()
        .map(|(path, (xs, us))| {
            let inc = noise.path_increments(path);
            simulate_path(model, control, grid, &inc, x0, xs, us)
                .err()
                .map(|f| f.into_error(path))
        })
        .collect();
    if let Some(err) = failures.into_iter().flatten().next() {
        return Err(err);
    }
    u.truncate(n_paths * u_len);
    Ok(StateBatch {
        m,
        q,
        steps,
        n_paths,
        x0: x0.to_vec(),
        x,
        u,
    })
}

/// Re-simulates one path with the candidate's applied controls replaced on
/// the spike window, starting from the first window step (earlier states are
/// copied from the candidate). This is the perturbation `u^ε` of a fixed
/// adapted process, as opposed to re-evaluating a feedback law.
pub(crate) fn simulate_perturbed_path(
    model: &ModelSpec,
    grid: &TimeGrid,
    increments: &[f64],
    base_states: &[f64],
    base_controls: &[f64],
    window: &SpikeWindow,
    out: &mut [f64],
) -> std::result::Result<(), PathFailure> {
    let (m, d, q) = (model.state_dim(), model.noise_dim(), model.control_dim());
    let start = window.first_step(grid).unwrap_or(grid.steps());
    out[..(start + 1) * m].copy_from_slice(&base_states[..(start + 1) * m]);
    let mut b = vec![0.0; m];
    let mut s = vec![0.0; m * d];
    for k in start..grid.steps() {
        let u = if window.covers(grid, k) {
            window.value.as_slice()
        } else {
            &base_controls[k * q..(k + 1) * q]
        };
        let (head, tail) = out.split_at_mut((k + 1) * m);
        euler_step(
            model,
            grid,
            k,
            &head[k * m..],
            u,
            &increments[k * d..(k + 1) * d],
            &mut b,
            &mut s,
            &mut tail[..m],
        );
        if tail[..m].iter().any(|v| !v.is_finite()) {
            return Err(PathFailure::Diverged(k + 1));
        }
    }
    Ok(())
}

/// Simulates the spike perturbation of a simulated candidate on the same
/// noise. Paths agree with the candidate strictly before the window.
pub fn simulate_perturbed(
    model: &ModelSpec,
    candidate: &StateBatch,
    window: &SpikeWindow,
    noise: &BrownianBatch,
    grid: &TimeGrid,
) -> Result<StateBatch> {
    window.validate(grid)?;
    model.check_control(&window.value)?;
    let (m, q) = (candidate.m, candidate.q);
    let steps = candidate.steps;
    let mut x = vec![0.0; candidate.x.len()];
    let failures: Vec<Option<Error>> = x
        .par_chunks_mut((steps + 1) * m)
        .enumerate()
        .map(|(path, xs)| {
            let inc = noise.path_increments(path);
            simulate_perturbed_path(
                model,
                grid,
                &inc,
                candidate.path_states(path),
                candidate.path_controls(path),
                window,
                xs,
            )
            .err()
            .map(|f| f.into_error(path))
        })
        .collect();
    if let Some(err) = failures.into_iter().flatten().next() {
        return Err(err);
    }
    let mut u = candidate.u.clone();
    for path in 0..candidate.n_paths {
        for k in 0..steps {
            if window.covers(grid, k) {
                let base = (path * steps + k) * q;
                u[base..base + q].copy_from_slice(&window.value);
            }
        }
    }
    Ok(StateBatch {
        m,
        q,
        steps,
        n_paths: candidate.n_paths,
        x0: candidate.x0.clone(),
        x,
        u,
    })
}
