//! Posterior summaries of `g(x)` and of the simulator image.
//!
//! Both are mixtures over retained draws of Gaussians with known moments, so
//! the pointwise mean and variance are computed exactly for the mixture by
//! the law of total variance instead of by sampling each component.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::sampler::{prior_cholesky, PosteriorChain};
use crate::emulator::Emulator;
use crate::error::{Error, Result};
use crate::kernels::MaternKernel;

/// Pointwise posterior mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

/// `k × k` grid on `[0,1]²` including the boundary, `x1` varying slowest,
/// flattened row-major as `(x1, x2)` pairs.
pub fn regular_grid(k: usize) -> Vec<f64> {
    let h = if k > 1 { 1.0 / (k - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(2 * k * k);
    for a in 0..k {
        for b in 0..k {
            out.push(a as f64 * h);
            out.push(b as f64 * h);
        }
    }
    out
}

const DRAW_CHUNK: usize = 16;

/// Posterior mean and variance of `g` at `points` (row-major, `dim` columns).
///
/// Each draw contributes the conditional `g(x) | g_N, η, τ²`; the returned
/// variance is the mean conditional variance plus the spread of the
/// conditional means.
pub fn posterior_g(chain: &PosteriorChain, points: &[f64]) -> Result<Field> {
    if chain.is_empty() {
        return Err(Error::arg("posterior chain is empty"));
    }
    let d = chain.nodes.dim();
    if points.len() % d != 0 {
        return Err(Error::arg(format!("grid coordinates are not a multiple of dimension {d}")));
    }
    if points.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::arg("grid points must lie in the unit cube"));
    }
    let gsize = points.len() / d;
    let s = chain.len();

    // spread is accumulated around the first draw's conditional mean, which
    // keeps identical draws at exactly zero spread and limits cancellation
    let (pivot, _) = conditional(chain, 0, points, gsize)?;

    // fixed chunking keeps the floating-point summation order independent of
    // the thread count
    let chunks: Vec<Result<(DVector<f64>, DVector<f64>, DVector<f64>)>> = (0..s)
        .collect::<Vec<_>>()
        .par_chunks(DRAW_CHUNK)
        .map(|draws| {
            let mut sum_dev = DVector::zeros(gsize);
            let mut sum_sq = DVector::zeros(gsize);
            let mut sum_var = DVector::zeros(gsize);
            for &k in draws {
                let (mean, var) = conditional(chain, k, points, gsize)?;
                let dev = mean - &pivot;
                sum_sq += dev.map(|v| v * v);
                sum_dev += dev;
                sum_var += var;
            }
            Ok((sum_dev, sum_sq, sum_var))
        })
        .collect();

    let mut sum_dev = DVector::zeros(gsize);
    let mut sum_sq = DVector::zeros(gsize);
    let mut sum_var = DVector::zeros(gsize);
    for c in chunks {
        let (a, b, v) = c?;
        sum_dev += a;
        sum_sq += b;
        sum_var += v;
    }
    let sf = s as f64;
    let dev = sum_dev / sf;
    let mean = &pivot + &dev;
    let var = DVector::from_fn(gsize, |i, _| {
        let spread = (sum_sq[i] / sf - dev[i] * dev[i]).max(0.0);
        sum_var[i] / sf + spread
    });
    Ok(Field { mean, var })
}

/// Conditional mean and variance of `g` at the grid for draw `k`.
fn conditional(chain: &PosteriorChain, k: usize, points: &[f64], gsize: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = chain.nodes.dim();
    let n = chain.nodes.count();
    let eta: Vec<f64> = chain.eta.row(k).iter().copied().collect();
    let tau2 = chain.tau_g2[k];
    let chol = prior_cholesky(&eta, &chain.nodes, chain.smoothness, chain.nugget)?;
    let g = chain.g.row(k).transpose();
    let alpha = chol.solve(&g);
    let kernel = MaternKernel::new(eta, chain.smoothness)?;

    let mut cross = DMatrix::zeros(n, gsize);
    for (j, x) in points.chunks_exact(d).enumerate() {
        for (i, node) in chain.nodes.iter().enumerate() {
            cross[(i, j)] = kernel.eval_unchecked(x, node);
        }
    }
    let mean = cross.tr_mul(&alpha);
    chol.chol.l_dirty().solve_lower_triangular_mut(&mut cross);
    let var = DVector::from_fn(gsize, |j, _| tau2 * (1.0 - cross.column(j).norm_squared()).max(0.0));
    Ok((mean, var))
}

/// Posterior mean and variance of the simulator image.
///
/// Draw `k` contributes `N(U m_k, U diag(v_k) Uᵀ)`; the pixel variance is the
/// mean of `Σ v_l u_l²` plus the pixelwise spread of `U m_k`.
pub fn posterior_ys(chain: &PosteriorChain, emulator: &Emulator) -> Result<Field> {
    if chain.is_empty() {
        return Err(Error::arg("posterior chain is empty"));
    }
    let u = emulator.basis().components();
    if chain.score_mean.ncols() != u.ncols() {
        return Err(Error::arg("chain was produced with a different emulator basis"));
    }
    let s = chain.len() as f64;
    let l = u.ncols();
    let m_bar = DVector::from_fn(l, |i, _| chain.score_mean.column(i).mean());
    let v_bar = DVector::from_fn(l, |i, _| chain.score_var.column(i).mean());
    let centered = DMatrix::from_fn(chain.len(), l, |k, i| chain.score_mean[(k, i)] - m_bar[i]);
    let cov = centered.tr_mul(&centered) / s;

    let mean = u * &m_bar;
    let spread = (u * &cov).component_mul(u).column_sum();
    let within = u.map(|x| x * x) * &v_bar;
    let var = (spread + within).map(|v| v.max(0.0));
    Ok(Field { mean, var })
}

/// Accuracy of a posterior field against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    /// Average of `−(t − μ)²/σ² − ln σ²`; larger is better.
    pub score: f64,
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

pub fn field_metrics(truth: &DVector<f64>, field: &Field) -> Result<Metrics> {
    if truth.len() != field.mean.len() || truth.is_empty() {
        return Err(Error::arg("truth and posterior field sizes differ"));
    }
    let n = truth.len() as f64;
    let mut floored = 0;
    let mut sse = 0.0;
    let mut score = 0.0;
    for ((t, mu), v) in truth.iter().zip(field.mean.iter()).zip(field.var.iter()) {
        let v = if *v < VARIANCE_FLOOR {
            floored += 1;
            VARIANCE_FLOOR
        } else {
            *v
        };
        let r = t - mu;
        sse += r * r;
        score += -r * r / v - v.ln();
    }
    if floored > 0 {
        log::info!("{floored} posterior variances floored at {VARIANCE_FLOOR:e} for scoring");
    }
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        score: score / n,
    })
}
