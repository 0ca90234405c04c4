//! Least-squares projection onto polynomials of the state, used for the
//! conditional expectations of the backward sweeps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mc::{block_reduce, MeanVar};

/// Below this many samples per basis function a group falls back to the
/// constant basis.
pub const MIN_SAMPLES_PER_TERM: usize = 10;

/// Total-degree monomials of standardized state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    active: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
}

impl Basis {
    pub fn constant() -> Self {
        Self {
            active: Vec::new(),
            mean: Vec::new(),
            scale: Vec::new(),
            exponents: vec![Vec::new()],
        }
    }

    fn build(active: Vec<usize>, mean: Vec<f64>, scale: Vec<f64>, degree: usize) -> Self {
        let mut exponents = vec![vec![0u32; active.len()]];
        let mut frontier = exponents.clone();
        for _ in 0..degree {
            let mut next = Vec::new();
            for e in &frontier {
                // extend only at or after the last raised coordinate so each
                // monomial appears once
                let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
                for c in start..active.len() {
                    let mut f = e.clone();
                    f[c] += 1;
                    next.push(f);
                }
            }
            exponents.extend(next.iter().cloned());
            frontier = next;
        }
        Self {
            active,
            mean,
            scale,
            exponents,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let z: Vec<f64> = self
            .active
            .iter()
            .enumerate()
            .map(|(c, &a)| (x[a] - self.mean[c]) / self.scale[c])
            .collect();
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = e.iter().zip(&z).map(|(&p, &v)| v.powi(p as i32)).product();
        }
    }
}

/// A fitted multi-output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    basis: Basis,
    /// `len(basis) × n_out`, column-major per output.
    coef: Vec<f64>,
    n_out: usize,
    /// Residual variance per output.
    pub resid_var: Vec<f64>,
    pub n: usize,
}

impl Projection {
    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn predict(&self, x: &[f64], out: &mut [f64]) {
        let nb = self.basis.len();
        let mut phi = vec![0.0; nb];
        self.basis.eval(x, &mut phi);
        for (o, col) in out.iter_mut().zip(self.coef.chunks(nb)) {
            *o = col.iter().zip(&phi).map(|(c, f)| c * f).sum();
        }
    }

    /// Average standard error of the fitted mean for output `o`.
    pub fn mean_se(&self, o: usize) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.resid_var[o] * self.basis.len() as f64 / self.n as f64).sqrt()
    }

    pub fn max_mean_se(&self) -> f64 {
        (0..self.n_out).map(|o| self.mean_se(o)).fold(0.0, f64::max)
    }
}

/// Regresses `target(i)` on the basis of `state(i)` over `members`.
///
/// Coordinates with zero sample variance or affinely dependent on earlier
/// coordinates are dropped, small samples use the
/// constant basis, and a normal matrix that is not numerically positive
/// definite is reported as [`Error::DegenerateBasis`] tagged with `step`.
pub fn project<'a, S, T>(
    members: &[usize],
    m: usize,
    state: S,
    n_out: usize,
    target: T,
    degree: usize,
    step: usize,
) -> Result<Projection>
where
    S: Fn(usize) -> &'a [f64] + Sync,
    T: Fn(usize, &mut [f64]) + Sync,
{
    let n = members.len();
    if n == 0 {
        return Ok(Projection {
            basis: Basis::constant(),
            coef: vec![0.0; n_out],
            n_out,
            resid_var: vec![0.0; n_out],
            n: 0,
        });
    }
    let moments = block_reduce(
        n,
        || vec![MeanVar::new(); m],
        |acc, i| {
            let x = state(members[i]);
            acc.iter_mut().zip(x).for_each(|(a, &v)| a.push(v));
            Ok(())
        },
        |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y)),
    )?;
    let mut active = Vec::new();
    let mut mean = Vec::new();
    let mut scale = Vec::new();
    for (a, mv) in moments.iter().enumerate() {
        let sd = mv.variance().sqrt();
        if sd > 1e-12 * mv.mean().abs().max(1.0) {
            active.push(a);
            mean.push(mv.mean());
            scale.push(sd);
        }
    }
    let (active, mean, scale) = drop_dependent(members, &state, active, mean, scale)?;
    let mut basis = Basis::build(active, mean, scale, degree);
    if n < MIN_SAMPLES_PER_TERM * basis.len() {
        basis = Basis::constant();
    }
    let nb = basis.len();

    let (xtx, xty) = block_reduce(
        n,
        || (vec![0.0; nb * nb], vec![0.0; nb * n_out]),
        |(xtx, xty), i| {
            let mut phi = vec![0.0; nb];
            let mut y = vec![0.0; n_out];
            basis.eval(state(members[i]), &mut phi);
            target(members[i], &mut y);
            for a in 0..nb {
                for b in a..nb {
                    xtx[a * nb + b] += phi[a] * phi[b];
                }
                for (o, &yo) in y.iter().enumerate() {
                    xty[o * nb + a] += phi[a] * yo;
                }
            }
            Ok(())
        },
        |a, b| {
            a.0.iter_mut().zip(&b.0).for_each(|(x, y)| *x += y);
            a.1.iter_mut().zip(&b.1).for_each(|(x, y)| *x += y);
        },
    )?;
    let gram = DMatrix::from_fn(nb, nb, |a, b| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        xtx[lo * nb + hi]
    });
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateBasis { step })?;
    let diag = chol.l_dirty().diagonal();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dmin > 1e-8 * dmax) {
        return Err(Error::DegenerateBasis { step });
    }
    let mut coef = Vec::with_capacity(nb * n_out);
    for o in 0..n_out {
        let rhs = DVector::from_column_slice(&xty[o * nb..(o + 1) * nb]);
        coef.extend(chol.solve(&rhs).iter());
    }
    let mut fit = Projection {
        basis,
        coef,
        n_out,
        resid_var: vec![0.0; n_out],
        n,
    };

    let rss = block_reduce(
        n,
        || vec![0.0; n_out],
        |acc, i| {
            let mut y = vec![0.0; n_out];
            let mut yhat = vec![0.0; n_out];
            target(members[i], &mut y);
            fit.predict(state(members[i]), &mut yhat);
            acc.iter_mut()
                .zip(y.iter().zip(&yhat))
                .for_each(|(a, (y, h))| *a += (y - h) * (y - h));
            Ok(())
        },
        |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| *x += y),
    )?;
    let dof = n.saturating_sub(nb).max(1) as f64;
    fit.resid_var = rss.iter().map(|r| r / dof).collect();
    Ok(fit)
}

/// Keeps, in coordinate order, only state coordinates that are not affine
/// combinations of the ones already kept. Conditioning on the kept set is
/// the same as conditioning on the full state.
fn drop_dependent<'a, S>(
    members: &[usize],
    state: &S,
    active: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)>
where
    S: Fn(usize) -> &'a [f64] + Sync,
{
    let c = active.len();
    if c < 2 {
        return Ok((active, mean, scale));
    }
    let corr = block_reduce(
        members.len(),
        || vec![0.0; c * c],
        |acc, i| {
            let x = state(members[i]);
            let z: Vec<f64> = (0..c)
                .map(|a| (x[active[a]] - mean[a]) / scale[a])
                .collect();
            for a in 0..c {
                for b in a..c {
                    acc[a * c + b] += z[a] * z[b];
                }
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| *x += y),
    )?;
    let n = members.len() as f64;
    let mut kept: Vec<usize> = Vec::new();
    for a in 0..c {
        let mut trial = kept.clone();
        trial.push(a);
        let r = trial.len();
        let g = DMatrix::from_fn(r, r, |x, y| {
            let (lo, hi) = (trial[x].min(trial[y]), trial[x].max(trial[y]));
            corr[lo * c + hi] / n
        });
        // last pivot² is the residual variance of coordinate a given the kept ones
        let independent = g
            .cholesky()
            .map(|l| {
                let piv = l.l_dirty()[(r - 1, r - 1)];
                piv * piv > 1e-10
            })
            .unwrap_or(false);
        if independent {
            kept = trial;
        }
    }
    Ok((
        kept.iter().map(|&a| active[a]).collect(),
        kept.iter().map(|&a| mean[a]).collect(),
        kept.iter().map(|&a| scale[a]).collect(),
    ))
}
