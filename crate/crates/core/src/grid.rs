//! Two-level time grids and reproducible Brownian increments.
//!
//! Coarse points `t_0 < ... < t_n` carry the stopping-time indicators and the
//! adjoint jumps. The fine grid refines every coarse interval and is what the
//! Euler schemes step on.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    fine: Vec<f64>,
    coarse_idx: Vec<usize>,
    interval: Vec<usize>,
}

impl TimeGrid {
    /// Uniform grid with `n` coarse intervals on `[0, horizon]`, each split
    /// into `substeps` fine steps.
    pub fn uniform(n: usize, horizon: f64, substeps: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("coarse interval count must be at least 1"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("horizon must be positive and finite"));
        }
        if substeps == 0 {
            return Err(invalid("substeps must be at least 1"));
        }
        let total = n * substeps;
        let mut fine: Vec<f64> = (0..=total)
            .map(|k| k as f64 * horizon / total as f64)
            .collect();
        let coarse_idx: Vec<usize> = (0..=n).map(|i| i * substeps).collect();
        for (i, &k) in coarse_idx.iter().enumerate() {
            fine[k] = i as f64 * horizon / n as f64;
        }
        fine[total] = horizon;
        Ok(Self::assemble(fine, coarse_idx))
    }

    /// Grid with explicit coarse points (starting at 0, strictly increasing)
    /// and fine spacing `fine_dt`, which must divide every coarse gap.
    pub fn from_points(points: &[f64], fine_dt: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("need at least two coarse points"));
        }
        if points[0] != 0.0 {
            return Err(invalid("first coarse point must be 0"));
        }
        if !(fine_dt > 0.0) {
            return Err(invalid("fine step must be positive"));
        }
        let mut fine = vec![0.0];
        let mut coarse_idx = vec![0];
        for w in points.windows(2) {
            let gap = w[1] - w[0];
            if !(gap > 0.0) {
                return Err(invalid("coarse points must be strictly increasing"));
            }
            let ratio = gap / fine_dt;
            let steps = ratio.round();
            if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
                return Err(invalid(format!(
                    "fine step {fine_dt} does not divide coarse gap {gap}"
                )));
            }
            let steps = steps as usize;
            for j in 1..steps {
                fine.push(w[0] + j as f64 * gap / steps as f64);
            }
            fine.push(w[1]);
            coarse_idx.push(fine.len() - 1);
        }
        Ok(Self::assemble(fine, coarse_idx))
    }

    fn assemble(fine: Vec<f64>, coarse_idx: Vec<usize>) -> Self {
        let steps = fine.len() - 1;
        let mut interval = vec![0; steps];
        for i in 1..coarse_idx.len() {
            for slot in &mut interval[coarse_idx[i - 1]..coarse_idx[i]] {
                *slot = i;
            }
        }
        Self {
            fine,
            coarse_idx,
            interval,
        }
    }

    /// Number of coarse intervals `n`.
    pub fn n(&self) -> usize {
        self.coarse_idx.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.fine.last().unwrap()
    }

    /// Number of fine steps.
    pub fn steps(&self) -> usize {
        self.fine.len() - 1
    }

    pub fn fine_times(&self) -> &[f64] {
        &self.fine
    }

    pub fn time(&self, k: usize) -> f64 {
        self.fine[k]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.fine[k + 1] - self.fine[k]
    }

    /// Coarse point `t_i`, `i = 0..=n`.
    pub fn coarse_time(&self, i: usize) -> f64 {
        self.fine[self.coarse_idx[i]]
    }

    pub fn coarse_times(&self) -> Vec<f64> {
        self.coarse_idx.iter().map(|&k| self.fine[k]).collect()
    }

    /// Fine index of coarse point `t_i`.
    pub fn coarse_index(&self, i: usize) -> usize {
        self.coarse_idx[i]
    }

    pub fn coarse_indices(&self) -> &[usize] {
        &self.coarse_idx
    }

    /// Coarse interval `i` (1-based) containing fine step `[s_k, s_{k+1})`.
    pub fn interval_of_step(&self, k: usize) -> usize {
        self.interval[k]
    }

    pub fn is_coarse_point(&self, k: usize) -> bool {
        self.coarse_idx.binary_search(&k).is_ok()
    }

    /// Fine step `k` with `s_k <= t < s_{k+1}`; `t = T` maps to the last point.
    pub fn step_containing(&self, t: f64) -> usize {
        if t >= self.horizon() {
            return self.steps();
        }
        match self.fine.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
            Ok(k) => k,
            Err(k) => k.saturating_sub(1),
        }
    }
}

/// Brownian increments on a fine grid, regenerated on demand.
///
/// Each path owns a ChaCha8 stream selected by `(seed, path)`, so the
/// increments of a path never depend on the batch size or on the order in
/// which paths are generated. Changing the grid changes the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianBatch {
    d: usize,
    n_paths: usize,
    seed: u64,
    dts: Vec<f64>,
}

impl BrownianBatch {
    pub fn new(grid: &TimeGrid, d: usize, n_paths: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("noise dimension must be at least 1"));
        }
        if n_paths == 0 {
            return Err(invalid("path count must be at least 1"));
        }
        Ok(Self {
            d,
            n_paths,
            seed,
            dts: (0..grid.steps()).map(|k| grid.dt(k)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.dts.len()
    }

    /// Writes the increments of `path` into `out` (layout `k * d + j`).
    pub fn fill_path(&self, path: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dts.len() * self.d);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        for (k, &dt) in self.dts.iter().enumerate() {
            let scale = dt.sqrt();
            for j in 0..self.d {
                let z: f64 = rng.sample(StandardNormal);
                out[k * self.d + j] = z * scale;
            }
        }
    }

    pub fn path_increments(&self, path: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dts.len() * self.d];
        self.fill_path(path, &mut out);
        out
    }

    /// Brownian path `W(s_k)` by prefix sums, layout `k * d + j`, `W(0) = 0`.
    pub fn path_values(&self, path: usize) -> Vec<f64> {
        let inc = self.path_increments(path);
        let mut w = vec![0.0; (self.dts.len() + 1) * self.d];
        for k in 0..self.dts.len() {
            for j in 0..self.d {
                w[(k + 1) * self.d + j] = w[k * self.d + j] + inc[k * self.d + j];
            }
        }
        w
    }

    /// CSV dump: `path,step,time,W_1..W_d`.
    pub fn to_csv(&self, grid: &TimeGrid) -> String {
        let mut out = String::from("path,step,time");
        for j in 1..=self.d {
            let _ = write!(out, ",W_{j}");
        }
        out.push('\n');
        for path in 0..self.n_paths {
            let w = self.path_values(path);
            for k in 0..=self.dts.len() {
                let _ = write!(out, "{path},{k},{}", grid.time(k));
                for j in 0..self.d {
                    let _ = write!(out, ",{}", w[k * self.d + j]);
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Alias matching the operation name used across the CLI.
pub fn make_grid(n: usize, horizon: f64, substeps: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(n, horizon, substeps)
}

pub fn sample_brownian(
    grid: &TimeGrid,
    d: usize,
    n_paths: usize,
    seed: u64,
) -> Result<BrownianBatch> {
    BrownianBatch::new(grid, d, n_paths, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::MeanVar;

    #[test]
    fn uniform_coarse_points() {
        let g = make_grid(4, 1.0, 1).unwrap();
        assert_eq!(g.coarse_times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(1, 2.0, 2).unwrap();
        assert_eq!(g.fine_times(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_grid(0, 1.0, 1).is_err());
        assert!(make_grid(2, 0.0, 1).is_err());
        assert!(make_grid(2, -1.0, 1).is_err());
        assert!(make_grid(2, 1.0, 0).is_err());
    }

    #[test]
    fn coarse_spacing_and_nesting() {
        let g = make_grid(7, 3.0, 5).unwrap();
        for i in 1..=7 {
            let gap = g.coarse_time(i) - g.coarse_time(i - 1);
            assert!((gap - 3.0 / 7.0).abs() <= 4.0 * f64::EPSILON);
            assert_eq!(g.coarse_index(i), 5 * i);
        }
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.horizon(), 3.0);
        assert_eq!(g.interval_of_step(0), 1);
        assert_eq!(g.interval_of_step(4), 1);
        assert_eq!(g.interval_of_step(5), 2);
        assert_eq!(g.interval_of_step(34), 7);
    }

    #[test]
    fn explicit_points() {
        let g = TimeGrid::from_points(&[0.0, 0.125, 0.25, 0.375, 0.5, 1.0], 0.125 / 4.0).unwrap();
        assert_eq!(g.n(), 5);
        assert_eq!(g.coarse_index(4), 16);
        assert_eq!(g.coarse_index(5), 32);
        assert_eq!(g.coarse_time(5), 1.0);
        assert!(TimeGrid::from_points(&[0.0, 0.3], 0.2).is_err());
    }

    #[test]
    fn step_lookup() {
        let g = make_grid(4, 1.0, 2).unwrap();
        assert_eq!(g.step_containing(0.0), 0);
        assert_eq!(g.step_containing(0.3), 2);
        assert_eq!(g.step_containing(0.25), 2);
        assert_eq!(g.step_containing(1.0), 8);
    }

    #[test]
    fn brownian_starts_at_zero_and_is_reproducible() {
        let g = make_grid(4, 1.0, 8).unwrap();
        let b = sample_brownian(&g, 2, 10, 99).unwrap();
        for p in 0..10 {
            let w = b.path_values(p);
            assert_eq!(&w[..2], &[0.0, 0.0]);
        }
        let again = sample_brownian(&g, 2, 10, 99).unwrap();
        assert_eq!(b.path_increments(3), again.path_increments(3));
        let bigger = sample_brownian(&g, 2, 1000, 99).unwrap();
        assert_eq!(b.path_increments(7), bigger.path_increments(7));
        let other = sample_brownian(&g, 2, 10, 100).unwrap();
        assert_ne!(b.path_increments(3), other.path_increments(3));
    }

    #[test]
    fn terminal_moments() {
        // W(1) ~ N(0, 1). Over 1e5 paths the sample variance has standard
        // deviation sqrt(2 / 1e5) ~ 0.00447, so 4 sigma is about 0.018; the
        // tighter [0.99, 1.01] band holds for this seed and is asserted below
        // alongside the 4-sigma band.
        let g = make_grid(1, 1.0, 4).unwrap();
        let n = 100_000;
        let b = sample_brownian(&g, 1, n, 2024).unwrap();
        let mut mv = MeanVar::new();
        for p in 0..n {
            let w = b.path_values(p);
            mv.push(w[4]);
        }
        let sd_var = (2.0 / n as f64).sqrt();
        assert!((mv.variance() - 1.0).abs() <= 4.0 * sd_var);
        assert!(
            mv.variance() >= 0.99 && mv.variance() <= 1.01,
            "{}",
            mv.variance()
        );
        assert!(mv.mean().abs() <= 4.0 * (1.0 / n as f64).sqrt());
    }

    #[test]
    fn csv_header() {
        let g = make_grid(1, 1.0, 2).unwrap();
        let b = sample_brownian(&g, 2, 1, 1).unwrap();
        let csv = b.to_csv(&g);
        assert!(csv.starts_with("path,step,time,W_1,W_2\n0,0,0,0,0\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
