//! Problem coefficients `b`, `σ`, `f`, `Ψ`, their state derivatives, and
//! sample-based checks of the smoothness and Lipschitz assumptions.
//!
//! Coefficients take an explicit time argument; time-homogeneous models just
//! ignore it. Matrices are stored row-major:
//!
//! * `σ` is `m × d`, entry `(l, j)` at `l * d + j`; column `j` is `σʲ`.
//! * `b_x` is `m × m`, entry `(l, a) = ∂b_l/∂x_a` at `l * m + a`.
//! * `σ_x` is `d` blocks of `m × m`; block `j` is `σʲ_x`.
//! * Second derivatives are exposed as quadratic forms `D²g[y, y]`.
//!
//! Every coefficient closure must be pure: it is called concurrently from
//! many threads and must not carry hidden state.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

pub type CoefFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type TerminalGradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type CurvatureFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarCurvatureFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCurvatureFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Default relative step for first-derivative central differences.
pub const FD_STEP_FIRST: f64 = 1e-5;
/// Default relative step for second-derivative central differences.
pub const FD_STEP_SECOND: f64 = 1e-4;

/// Admissible control values.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    /// Closed box `[lo, hi]` per coordinate.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Finite list of points.
    Finite(Vec<Vec<f64>>),
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlSet::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Finite(points) => points.first().map_or(0, Vec::len),
        }
    }

    /// Exact membership, closed intervals, no tolerance.
    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSet::Box { lo, hi } => {
                u.len() == lo.len()
                    && u.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(v, (l, h))| *v >= *l && *v <= *h)
            }
            ControlSet::Finite(points) => points.iter().any(|p| p.as_slice() == u),
        }
    }

    /// Covering sample: every point of a finite set, or a uniform grid with
    /// `resolution` points per coordinate (corners included) for a box.
    pub fn sample(&self, resolution: usize) -> Vec<Vec<f64>> {
        match self {
            ControlSet::Finite(points) => points.clone(),
            ControlSet::Box { lo, hi } => {
                let res = resolution.max(2);
                let axes: Vec<Vec<f64>> = lo
                    .iter()
                    .zip(hi)
                    .map(|(&l, &h)| {
                        if l == h {
                            vec![l]
                        } else {
                            (0..res)
                                .map(|i| {
                                    if i == res - 1 {
                                        h
                                    } else {
                                        l + (h - l) * i as f64 / (res - 1) as f64
                                    }
                                })
                                .collect()
                        }
                    })
                    .collect();
                let mut out = vec![Vec::new()];
                for axis in &axes {
                    let mut next = Vec::with_capacity(out.len() * axis.len());
                    for prefix in &out {
                        for &v in axis {
                            let mut p = prefix.clone();
                            p.push(v);
                            next.push(p);
                        }
                    }
                    out = next;
                }
                out
            }
        }
    }
}

/// Coefficients of a controlled diffusion with running and terminal cost.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    m: usize,
    d: usize,
    control_set: ControlSet,
    drift: CoefFn,
    diffusion: CoefFn,
    cost: ScalarFn,
    terminal: TerminalFn,
    drift_x: Option<CoefFn>,
    diffusion_x: Option<CoefFn>,
    cost_x: Option<CoefFn>,
    terminal_x: Option<TerminalGradFn>,
    drift_xx: Option<CurvatureFn>,
    diffusion_xx: Option<CurvatureFn>,
    cost_xx: Option<ScalarCurvatureFn>,
    terminal_xx: Option<TerminalCurvatureFn>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("d", &self.d)
            .field("control_set", &self.control_set)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new<B, S, F, P>(
        name: impl Into<String>,
        m: usize,
        d: usize,
        control_set: ControlSet,
        drift: B,
        diffusion: S,
        cost: F,
        terminal: P,
    ) -> Self
    where
        B: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        F: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
        P: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            m,
            d,
            control_set,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            cost: Arc::new(cost),
            terminal: Arc::new(terminal),
            drift_x: None,
            diffusion_x: None,
            cost_x: None,
            terminal_x: None,
            drift_xx: None,
            diffusion_xx: None,
            cost_xx: None,
            terminal_xx: None,
        }
    }

    pub fn with_drift_x(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift_x = Some(Arc::new(g));
        self
    }

    pub fn with_diffusion_x(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion_x = Some(Arc::new(g));
        self
    }

    pub fn with_cost_x(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.cost_x = Some(Arc::new(g));
        self
    }

    pub fn with_terminal_x(
        mut self,
        g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.terminal_x = Some(Arc::new(g));
        self
    }

    pub fn with_drift_xx(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift_xx = Some(Arc::new(g));
        self
    }

    pub fn with_diffusion_xx(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion_xx = Some(Arc::new(g));
        self
    }

    pub fn with_cost_xx(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.cost_xx = Some(Arc::new(g));
        self
    }

    pub fn with_terminal_xx(
        mut self,
        g: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terminal_xx = Some(Arc::new(g));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension `m`.
    pub fn state_dim(&self) -> usize {
        self.m
    }

    /// Noise dimension `d`.
    pub fn noise_dim(&self) -> usize {
        self.d
    }

    pub fn control_dim(&self) -> usize {
        self.control_set.dim()
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn check_control(&self, u: &[f64]) -> Result<()> {
        if self.control_set.contains(u) {
            Ok(())
        } else {
            Err(Error::Domain { value: u.to_vec() })
        }
    }

    /// Drift, diffusion and running cost at `(t, x, u)` with domain checks.
    pub fn evaluate(&self, t: f64, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        if x.len() != self.m {
            return Err(invalid(format!(
                "state has dimension {}, model expects {}",
                x.len(),
                self.m
            )));
        }
        if u.len() != self.control_dim() {
            return Err(invalid(format!(
                "control has dimension {}, model expects {}",
                u.len(),
                self.control_dim()
            )));
        }
        self.check_control(u)?;
        let mut b = vec![0.0; self.m];
        let mut s = vec![0.0; self.m * self.d];
        self.drift(t, x, u, &mut b);
        self.diffusion(t, x, u, &mut s);
        Ok((b, s, self.running_cost(t, x, u)))
    }

    pub fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, u, out)
    }

    pub fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, u, out)
    }

    pub fn running_cost(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        (self.cost)(t, x, u)
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn has_analytic(&self, coef: Coefficient) -> bool {
        match coef {
            Coefficient::DriftX => self.drift_x.is_some(),
            Coefficient::DiffusionX => self.diffusion_x.is_some(),
            Coefficient::CostX => self.cost_x.is_some(),
            Coefficient::TerminalX => self.terminal_x.is_some(),
            Coefficient::DriftXX => self.drift_xx.is_some(),
            Coefficient::DiffusionXX => self.diffusion_xx.is_some(),
            Coefficient::CostXX => self.cost_xx.is_some(),
            Coefficient::TerminalXX => self.terminal_xx.is_some(),
        }
    }

    /// `b_x`, `m × m`.
    pub fn drift_x(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.drift_x {
            Some(g) => g(t, x, u, out),
            None => fd_jacobian(self.m, x, FD_STEP_FIRST, out, |xx, o| {
                self.drift(t, xx, u, o)
            }),
        }
    }

    /// `σʲ_x` for every column, `d` blocks of `m × m`.
    pub fn diffusion_x(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.diffusion_x {
            Some(g) => g(t, x, u, out),
            None => {
                let (m, d) = (self.m, self.d);
                let mut jac = vec![0.0; m * d * m];
                fd_jacobian(m * d, x, FD_STEP_FIRST, &mut jac, |xx, o| {
                    self.diffusion(t, xx, u, o)
                });
                // jac row (l*d + j), column a -> block j entry (l, a)
                for l in 0..m {
                    for j in 0..d {
                        for a in 0..m {
                            out[j * m * m + l * m + a] = jac[(l * d + j) * m + a];
                        }
                    }
                }
            }
        }
    }

    /// `f_x`, length `m`.
    pub fn cost_x(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.cost_x {
            Some(g) => g(t, x, u, out),
            None => fd_jacobian(1, x, FD_STEP_FIRST, out, |xx, o| {
                o[0] = self.running_cost(t, xx, u)
            }),
        }
    }

    /// `Ψ_x`, length `m`.
    pub fn terminal_x(&self, x: &[f64], out: &mut [f64]) {
        match &self.terminal_x {
            Some(g) => g(x, out),
            None => fd_jacobian(1, x, FD_STEP_FIRST, out, |xx, o| {
                o[0] = self.terminal_cost(xx)
            }),
        }
    }

    /// `b_xx[y, y]`, length `m`.
    pub fn drift_xx(&self, t: f64, x: &[f64], u: &[f64], y: &[f64], out: &mut [f64]) {
        match &self.drift_xx {
            Some(g) => g(t, x, u, y, out),
            None => fd_curvature(self.m, x, y, FD_STEP_SECOND, out, |xx, o| {
                self.drift(t, xx, u, o)
            }),
        }
    }

    /// `σʲ_xx[y, y]` for every column, layout `l * d + j`.
    pub fn diffusion_xx(&self, t: f64, x: &[f64], u: &[f64], y: &[f64], out: &mut [f64]) {
        match &self.diffusion_xx {
            Some(g) => g(t, x, u, y, out),
            None => fd_curvature(self.m * self.d, x, y, FD_STEP_SECOND, out, |xx, o| {
                self.diffusion(t, xx, u, o)
            }),
        }
    }

    /// `f_xx[y, y]`.
    pub fn cost_xx(&self, t: f64, x: &[f64], u: &[f64], y: &[f64]) -> f64 {
        match &self.cost_xx {
            Some(g) => g(t, x, u, y),
            None => {
                let mut o = [0.0];
                fd_curvature(1, x, y, FD_STEP_SECOND, &mut o, |xx, r| {
                    r[0] = self.running_cost(t, xx, u)
                });
                o[0]
            }
        }
    }

    /// `Ψ_xx[y, y]`.
    pub fn terminal_xx(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.terminal_xx {
            Some(g) => g(x, y),
            None => {
                let mut o = [0.0];
                fd_curvature(1, x, y, FD_STEP_SECOND, &mut o, |xx, r| {
                    r[0] = self.terminal_cost(xx)
                });
                o[0]
            }
        }
    }

    /// Hessian of `Ψ` as an `m × m` matrix, recovered from its quadratic form.
    pub fn terminal_hessian(&self, x: &[f64], out: &mut [f64]) {
        polarize(self.m, out, |y| self.terminal_xx(x, y));
    }
}

/// Recovers the symmetric matrix of a quadratic form `q(y) = yᵀ A y`.
pub fn polarize(m: usize, out: &mut [f64], q: impl Fn(&[f64]) -> f64) {
    let mut y = vec![0.0; m];
    for a in 0..m {
        y[a] = 1.0;
        out[a * m + a] = q(&y);
        y[a] = 0.0;
    }
    for a in 0..m {
        for b in (a + 1)..m {
            y[a] = 1.0;
            y[b] = 1.0;
            let plus = q(&y);
            y[b] = -1.0;
            let minus = q(&y);
            y[a] = 0.0;
            y[b] = 0.0;
            let v = 0.25 * (plus - minus);
            out[a * m + b] = v;
            out[b * m + a] = v;
        }
    }
}

/// Central-difference Jacobian of `g: R^m -> R^rows`, step `h·max(1,|x_a|)`.
fn fd_jacobian(rows: usize, x: &[f64], h: f64, out: &mut [f64], g: impl Fn(&[f64], &mut [f64])) {
    let m = x.len();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; rows];
    let mut fm = vec![0.0; rows];
    for a in 0..m {
        let step = h * x[a].abs().max(1.0);
        xp[a] = x[a] + step;
        g(&xp, &mut fp);
        xp[a] = x[a] - step;
        g(&xp, &mut fm);
        xp[a] = x[a];
        for r in 0..rows {
            out[r * m + a] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
}

/// Central second difference of `g` along direction `y`.
fn fd_curvature(
    rows: usize,
    x: &[f64],
    y: &[f64],
    h: f64,
    out: &mut [f64],
    g: impl Fn(&[f64], &mut [f64]),
) {
    let ynorm = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if ynorm == 0.0 {
        out[..rows].iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let xnorm = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let s = h * xnorm / ynorm;
    let mut xx: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + s * b).collect();
    let mut fp = vec![0.0; rows];
    let mut f0 = vec![0.0; rows];
    let mut fm = vec![0.0; rows];
    g(&xx, &mut fp);
    g(x, &mut f0);
    for (v, (a, b)) in xx.iter_mut().zip(x.iter().zip(y)) {
        *v = a - s * b;
    }
    g(&xx, &mut fm);
    for r in 0..rows {
        out[r] = (fp[r] - 2.0 * f0[r] + fm[r]) / (s * s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    DriftX,
    DiffusionX,
    CostX,
    TerminalX,
    DriftXX,
    DiffusionXX,
    CostXX,
    TerminalXX,
}

impl Coefficient {
    pub const ALL: [Coefficient; 8] = [
        Coefficient::DriftX,
        Coefficient::DiffusionX,
        Coefficient::CostX,
        Coefficient::TerminalX,
        Coefficient::DriftXX,
        Coefficient::DiffusionXX,
        Coefficient::CostXX,
        Coefficient::TerminalXX,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Coefficient::DriftX => "b_x",
            Coefficient::DiffusionX => "sigma_x",
            Coefficient::CostX => "f_x",
            Coefficient::TerminalX => "psi_x",
            Coefficient::DriftXX => "b_xx",
            Coefficient::DiffusionXX => "sigma_xx",
            Coefficient::CostXX => "f_xx",
            Coefficient::TerminalXX => "psi_xx",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEntry {
    pub coefficient: Coefficient,
    /// False when the model relies on the finite-difference fallback, which
    /// is self-consistent by construction.
    pub analytic: bool,
    pub max_discrepancy: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub entries: Vec<DerivativeEntry>,
    pub probes: Vec<Probe>,
}

impl DerivativeReport {
    pub fn entry(&self, coef: Coefficient) -> &DerivativeEntry {
        self.entries.iter().find(|e| e.coefficient == coef).unwrap()
    }

    pub fn any_flagged(&self) -> bool {
        self.entries.iter().any(|e| e.flagged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl Probe {
    pub fn new(t: f64, x: Vec<f64>, u: Vec<f64>) -> Self {
        Self { t, x, u }
    }
}

/// Relative discrepancy above which a supplied derivative is flagged.
const FLAG_FIRST: f64 = 1e-6;
const FLAG_SECOND: f64 = 1e-4;

/// Compares supplied derivatives with central differences at each probe.
/// First derivatives use step `h·max(1,|x|)`; second derivatives use `10h`.
pub fn check_derivatives(model: &ModelSpec, probes: &[Probe], h: f64) -> Result<DerivativeReport> {
    if probes.is_empty() {
        return Err(invalid("need at least one probe"));
    }
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let (m, d) = (model.state_dim(), model.noise_dim());
    let h2 = 10.0 * h;
    let mut worst = [0.0f64; 8];
    let mut flagged = [false; 8];
    let mut record = |slot: usize, a: &[f64], b: &[f64], tol: f64| {
        for (x, y) in a.iter().zip(b) {
            let diff = (x - y).abs();
            worst[slot] = worst[slot].max(diff);
            if diff > tol * y.abs().max(1.0) {
                flagged[slot] = true;
            }
        }
    };
    let directions: Vec<Vec<f64>> = (0..m)
        .map(|a| {
            let mut e = vec![0.0; m];
            e[a] = 1.0;
            e
        })
        .chain(std::iter::once(vec![1.0; m]))
        .collect();

    for p in probes {
        let (t, x, u) = (p.t, p.x.as_slice(), p.u.as_slice());
        let mut a = vec![0.0; m * m];
        let mut b = vec![0.0; m * m];
        model.drift_x(t, x, u, &mut a);
        fd_jacobian(m, x, h, &mut b, |xx, o| model.drift(t, xx, u, o));
        record(0, &a, &b, FLAG_FIRST);

        let mut a = vec![0.0; d * m * m];
        model.diffusion_x(t, x, u, &mut a);
        let mut jac = vec![0.0; m * d * m];
        fd_jacobian(m * d, x, h, &mut jac, |xx, o| model.diffusion(t, xx, u, o));
        let mut b = vec![0.0; d * m * m];
        for l in 0..m {
            for j in 0..d {
                for c in 0..m {
                    b[j * m * m + l * m + c] = jac[(l * d + j) * m + c];
                }
            }
        }
        record(1, &a, &b, FLAG_FIRST);

        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        model.cost_x(t, x, u, &mut a);
        fd_jacobian(1, x, h, &mut b, |xx, o| o[0] = model.running_cost(t, xx, u));
        record(2, &a, &b, FLAG_FIRST);

        model.terminal_x(x, &mut a);
        fd_jacobian(1, x, h, &mut b, |xx, o| o[0] = model.terminal_cost(xx));
        record(3, &a, &b, FLAG_FIRST);

        for y in &directions {
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            model.drift_xx(t, x, u, y, &mut a);
            fd_curvature(m, x, y, h2, &mut b, |xx, o| model.drift(t, xx, u, o));
            record(4, &a, &b, FLAG_SECOND);

            let mut a = vec![0.0; m * d];
            let mut b = vec![0.0; m * d];
            model.diffusion_xx(t, x, u, y, &mut a);
            fd_curvature(m * d, x, y, h2, &mut b, |xx, o| {
                model.diffusion(t, xx, u, o)
            });
            record(5, &a, &b, FLAG_SECOND);

            let a = [model.cost_xx(t, x, u, y)];
            let mut b = [0.0];
            fd_curvature(1, x, y, h2, &mut b, |xx, o| {
                o[0] = model.running_cost(t, xx, u)
            });
            record(6, &a, &b, FLAG_SECOND);

            let a = [model.terminal_xx(x, y)];
            let mut b = [0.0];
            fd_curvature(1, x, y, h2, &mut b, |xx, o| o[0] = model.terminal_cost(xx));
            record(7, &a, &b, FLAG_SECOND);
        }
    }

    let entries = Coefficient::ALL
        .iter()
        .enumerate()
        .map(|(i, &c)| DerivativeEntry {
            coefficient: c,
            analytic: model.has_analytic(c),
            max_discrepancy: worst[i],
            flagged: flagged[i],
        })
        .collect();
    Ok(DerivativeReport {
        entries,
        probes: probes.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzPair {
    pub t: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzReport {
    pub drift: f64,
    pub diffusion: f64,
    pub terminal: f64,
    /// Pairs skipped because `x1 == x2`.
    pub skipped: usize,
}

/// Empirical Lipschitz constants in `x` over the supplied pairs (Euclidean
/// norm for vectors, Frobenius for `σ`).
pub fn estimate_lipschitz(model: &ModelSpec, pairs: &[LipschitzPair]) -> LipschitzReport {
    let (m, d) = (model.state_dim(), model.noise_dim());
    let mut rep = LipschitzReport {
        drift: 0.0,
        diffusion: 0.0,
        terminal: 0.0,
        skipped: 0,
    };
    let norm = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let (mut b1, mut b2) = (vec![0.0; m], vec![0.0; m]);
    let (mut s1, mut s2) = (vec![0.0; m * d], vec![0.0; m * d]);
    for p in pairs {
        let dx = norm(&p.x1, &p.x2);
        if dx == 0.0 {
            rep.skipped += 1;
            continue;
        }
        model.drift(p.t, &p.x1, &p.u, &mut b1);
        model.drift(p.t, &p.x2, &p.u, &mut b2);
        model.diffusion(p.t, &p.x1, &p.u, &mut s1);
        model.diffusion(p.t, &p.x2, &p.u, &mut s2);
        rep.drift = rep.drift.max(norm(&b1, &b2) / dx);
        rep.diffusion = rep.diffusion.max(norm(&s1, &s2) / dx);
        let dpsi = (model.terminal_cost(&p.x1) - model.terminal_cost(&p.x2)).abs();
        rep.terminal = rep.terminal.max(dpsi / dx);
    }
    rep
}

/// Names accepted by [`builtin`].
pub const BUILTIN_MODELS: [&str; 4] = ["constant", "linear", "s4_example", "s4_example_delta"];

/// Built-in model registry.
pub fn builtin(name: &str) -> Result<ModelSpec> {
    match name {
        "constant" => Ok(constant_model()),
        "linear" => Ok(linear_model()),
        "s4_example" => Ok(production_model()),
        "s4_example_delta" => Ok(production_delta_model()),
        other => Err(Error::Config(format!("unknown model '{other}'"))),
    }
}

/// `b ≡ 0`, `σ ≡ 0`, `f ≡ 1`, `Ψ ≡ 0`; scalar state, control in `[0, 1]`.
pub fn constant_model() -> ModelSpec {
    ModelSpec::new(
        "constant",
        1,
        1,
        ControlSet::interval(0.0, 1.0),
        |_, _, _, o| o[0] = 0.0,
        |_, _, _, o| o[0] = 0.0,
        |_, _, _| 1.0,
        |_| 0.0,
    )
    .with_drift_x(|_, _, _, o| o[0] = 0.0)
    .with_diffusion_x(|_, _, _, o| o[0] = 0.0)
    .with_cost_x(|_, _, _, o| o[0] = 0.0)
    .with_terminal_x(|_, o| o[0] = 0.0)
    .with_drift_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_diffusion_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_cost_xx(|_, _, _, _| 0.0)
    .with_terminal_xx(|_, _| 0.0)
}

/// Scalar linear model: `b = 0.1x + u`, `σ = 0.2x + 0.1u`, `f = x + u²/2`,
/// `Ψ(x) = x`, `u ∈ [-1, 1]`. With `u ≡ 0` this is geometric Brownian motion.
pub fn linear_model() -> ModelSpec {
    ModelSpec::new(
        "linear",
        1,
        1,
        ControlSet::interval(-1.0, 1.0),
        |_, x, u, o| o[0] = 0.1 * x[0] + u[0],
        |_, x, u, o| o[0] = 0.2 * x[0] + 0.1 * u[0],
        |_, x, u| x[0] + 0.5 * u[0] * u[0],
        |x| x[0],
    )
    .with_drift_x(|_, _, _, o| o[0] = 0.1)
    .with_diffusion_x(|_, _, _, o| o[0] = 0.2)
    .with_cost_x(|_, _, _, o| o[0] = 1.0)
    .with_terminal_x(|_, o| o[0] = 1.0)
    .with_drift_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_diffusion_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_cost_xx(|_, _, _, _| 0.0)
    .with_terminal_xx(|_, _| 0.0)
}

/// Production-planning model in its original form. The state is augmented
/// with the demand noise: `x = (inventory, W)`, `d inventory = (u - 8t/3 + W) dt`,
/// `dW = dW`. The objective is the terminal inventory.
pub fn production_model() -> ModelSpec {
    ModelSpec::new(
        "s4_example",
        2,
        1,
        ControlSet::interval(0.0, 2.0),
        |t, x, u, o| {
            o[0] = u[0] - 8.0 / 3.0 * t + x[1];
            o[1] = 0.0;
        },
        |_, _, _, o| {
            o[0] = 0.0;
            o[1] = 1.0;
        },
        |_, _, _| 0.0,
        |x| x[0],
    )
    .with_drift_x(|_, _, _, o| {
        o.copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
    })
    .with_diffusion_x(|_, _, _, o| o.iter_mut().for_each(|v| *v = 0.0))
    .with_cost_x(|_, _, _, o| o.iter_mut().for_each(|v| *v = 0.0))
    .with_terminal_x(|_, o| o.copy_from_slice(&[1.0, 0.0]))
    .with_drift_xx(|_, _, _, _, o| o.iter_mut().for_each(|v| *v = 0.0))
    .with_diffusion_xx(|_, _, _, _, o| o.iter_mut().for_each(|v| *v = 0.0))
    .with_cost_xx(|_, _, _, _| 0.0)
    .with_terminal_xx(|_, _| 0.0)
}

/// Production-planning model after subtracting `W(s)s`:
/// `dδX = (u - 8t/3) dt - t dW`, running cost `u - 8t/3`, `Ψ(x) = x`.
pub fn production_delta_model() -> ModelSpec {
    ModelSpec::new(
        "s4_example_delta",
        1,
        1,
        ControlSet::interval(0.0, 2.0),
        |t, _, u, o| o[0] = u[0] - 8.0 / 3.0 * t,
        |t, _, _, o| o[0] = -t,
        |t, _, u| u[0] - 8.0 / 3.0 * t,
        |x| x[0],
    )
    .with_drift_x(|_, _, _, o| o[0] = 0.0)
    .with_diffusion_x(|_, _, _, o| o[0] = 0.0)
    .with_cost_x(|_, _, _, o| o[0] = 0.0)
    .with_terminal_x(|_, o| o[0] = 1.0)
    .with_drift_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_diffusion_xx(|_, _, _, _, o| o[0] = 0.0)
    .with_cost_xx(|_, _, _, _| 0.0)
    .with_terminal_xx(|_, _| 0.0)
}
