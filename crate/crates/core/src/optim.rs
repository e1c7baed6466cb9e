//! Derivative-free box-constrained minimization used for kernel
//! hyperparameters: Nelder–Mead with vertices projected onto the box,
//! restarted from a Sobol design over the box.

use crate::error::{Error, Result};
use crate::quasirandom::sobol;

#[derive(Debug, Clone)]
pub(crate) struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NelderMead {
    pub max_evals: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    /// Initial simplex edge as a fraction of each box width.
    pub step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 400,
            f_tol: 1e-10,
            x_tol: 1e-7,
            step: 0.1,
        }
    }
}

fn eval<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl NelderMead {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, f: &mut F, x0: &[f64], bounds: &SearchBox) -> (Vec<f64>, f64) {
        let n = x0.len();
        let mut start = x0.to_vec();
        bounds.project(&mut start);
        let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
        for i in 0..n {
            let mut v = start.clone();
            let h = self.step * (bounds.hi[i] - bounds.lo[i]);
            // step inward if the start sits on the upper face
            v[i] = if v[i] + h <= bounds.hi[i] { v[i] + h } else { v[i] - h };
            bounds.project(&mut v);
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(f, v)).collect();
        let mut evals = n + 1;

        while evals < self.max_evals {
            let mut idx: Vec<usize> = (0..=n).collect();
            idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
            values = idx.iter().map(|&i| values[i]).collect();

            let spread_f = (values[n] - values[0]).abs();
            let spread_x = simplex
                .iter()
                .skip(1)
                .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if (values[n].is_finite() && spread_f <= self.f_tol * (1.0 + values[0].abs()))
                || spread_x <= self.x_tol
            {
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut p: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect();
                bounds.project(&mut p);
                p
            };

            let xr = along(1.0);
            let fr = eval(f, &xr);
            evals += 1;
            if fr < values[0] {
                let xe = along(2.0);
                let fe = eval(f, &xe);
                evals += 1;
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[n] {
                let xc = along(0.5);
                (xc.clone(), eval(f, &xc))
            } else {
                let xc = along(-0.5);
                (xc.clone(), eval(f, &xc))
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            // shrink toward the best vertex
            for i in 1..=n {
                let shrunk: Vec<f64> = simplex[i]
                    .iter()
                    .zip(&simplex[0])
                    .map(|(v, b)| b + 0.5 * (v - b))
                    .collect();
                values[i] = eval(f, &shrunk);
                simplex[i] = shrunk;
            }
            evals += n;
        }

        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        (simplex[best].clone(), values[best])
    }
}

/// Minimizes `f` over the box from `starts` Sobol-designed starting points and
/// returns the best local solution. Fails if every start is non-finite.
pub(crate) fn multistart<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    bounds: &SearchBox,
    starts: usize,
    nm: NelderMead,
) -> Result<(Vec<f64>, f64)> {
    let dim = bounds.dim();
    let design = sobol(dim, starts.max(1))?;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for u in design.iter() {
        let x0: Vec<f64> = u
            .iter()
            .zip(bounds.lo.iter().zip(&bounds.hi))
            .map(|(t, (lo, hi))| lo + t * (hi - lo))
            .collect();
        let (x, v) = nm.minimize(f, &x0, bounds);
        if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((x, v));
        }
    }
    best.ok_or_else(|| Error::Fit("objective is non-finite at every start".into()))
}
