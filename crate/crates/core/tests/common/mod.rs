//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use figp_inverse::kernels::matern_phi;
use figp_inverse::{FigpModel, FunctionSample, NodeSet, Smoothness};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use nalgebra::{DMatrix, DVector};

pub const LN_2PI: f64 = 1.8378770664093453;

/// `Σ c·x1^p·x2^q`
pub type Poly = Vec<(f64, i32, i32)>;

/// Midpoint-rule value of `τ² ∫∫ g1(x) g2(x') φ(‖θ⊙(x−x')‖) dx dx'` on a
/// `k × k` grid per factor. Exploits stationarity: the double sum is
/// `Σ_u φ(u) C(u)` with `C` the discrete cross-correlation, which factorizes
/// over axes for monomials.
pub fn grid_quadrature(g1: &Poly, g2: &Poly, theta: [f64; 2], nu: Smoothness, tau2: f64, k: usize) -> f64 {
    let h = 1.0 / k as f64;
    let t: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) * h).collect();
    // corr[p][q][u + k - 1] = Σ_i t_i^p t_{i-u}^q
    let max_pow = 4;
    let mut corr = vec![vec![vec![0.0; 2 * k - 1]; max_pow + 1]; max_pow + 1];
    for (p, row) in corr.iter_mut().enumerate() {
        for (q, c) in row.iter_mut().enumerate() {
            for (ui, slot) in c.iter_mut().enumerate() {
                let u = ui as isize - (k as isize - 1);
                let mut acc = 0.0;
                for i in 0..k as isize {
                    let j = i - u;
                    if (0..k as isize).contains(&j) {
                        acc += t[i as usize].powi(p as i32) * t[j as usize].powi(q as i32);
                    }
                }
                *slot = acc;
            }
        }
    }
    let mut total = 0.0;
    for u1 in 0..2 * k - 1 {
        for u2 in 0..2 * k - 1 {
            let d1 = (u1 as f64 - (k as f64 - 1.0)) * h * theta[0];
            let d2 = (u2 as f64 - (k as f64 - 1.0)) * h * theta[1];
            let w = matern_phi((d1 * d1 + d2 * d2).sqrt(), nu).unwrap();
            let mut c = 0.0;
            for &(a, p1, p2) in g1 {
                for &(b, q1, q2) in g2 {
                    c += a * b * corr[p1 as usize][q1 as usize][u1] * corr[p2 as usize][q2 as usize][u2];
                }
            }
            total += w * c;
        }
    }
    tau2 * total * h.powi(4)
}

pub fn without<T: Clone>(v: &[T], i: usize) -> Vec<T> {
    v.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x.clone()).collect()
}

/// Mean squared leave-one-out residual by refitting on n-1 points with the
/// hyperparameters and nugget frozen.
pub fn refit_loocv(model: &FigpModel) -> f64 {
    let inputs = model.inputs();
    let scores = model.scores();
    let n = inputs.len();
    let mut acc = 0.0;
    for i in 0..n {
        let rest: Vec<f64> = without(scores.as_slice(), i);
        let sub = FigpModel::from_parts(
            model.kernel().clone(),
            model.mu(),
            model.nugget(),
            without(inputs, i),
            DVector::from_vec(rest),
        )
        .unwrap();
        let p = sub.predict(&inputs[i]).unwrap();
        acc += (scores[i] - p.mean).powi(2);
    }
    acc / n as f64
}

/// Log-density of `y ~ N(U m, σ²I + U diag(v) Uᵀ)` from a dense Cholesky.
pub fn dense_log_density(y: &DVector<f64>, u: &DMatrix<f64>, mean: &DVector<f64>, var: &DVector<f64>, s2: f64) -> f64 {
    let m = y.len();
    let mut cov = u * DMatrix::from_diagonal(var) * u.transpose();
    for i in 0..m {
        cov[(i, i)] += s2;
    }
    let chol = cov.cholesky().unwrap();
    let r = y - u * mean;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (m as f64 * LN_2PI + log_det + r.dot(&chol.solve(&r)))
}

pub fn basis(x: &[f64]) -> [f64; 8] {
    let (a, b) = (x[0], x[1]);
    [1.0, a, b * b, (3.0 * a * b).sin(), a.exp(), (2.0 * b).cos(), a * b.powi(3), (a + b).sqrt()]
}

/// `Σ c_k φ_k(x)` over eight fixed smooth functions; the linear kernel is
/// bilinear, so more than eight inputs would make its Gram singular.
pub fn input(nodes: &NodeSet, c: [f64; 8]) -> FunctionSample {
    let v = nodes
        .iter()
        .map(|x| basis(x).iter().zip(&c).map(|(p, w)| p * w).sum())
        .collect();
    FunctionSample::from_values(v, nodes).unwrap()
}

pub fn random_inputs(nodes: &NodeSet, n: usize, rng: &mut ChaCha8Rng) -> Vec<FunctionSample> {
    (0..n)
        .map(|_| {
            let mut c = [0.0; 8];
            c[0] = rng.random_range(0.5..1.5);
            for w in &mut c[1..] {
                *w = rng.random_range(-0.5..0.5);
            }
            input(nodes, c)
        })
        .collect()
}

/// A smooth nonlinear functional of the input.
pub fn response(g: &FunctionSample) -> f64 {
    let v = g.values();
    let n = v.len() as f64;
    let m1 = v.sum() / n;
    let m2 = v.map(|x| x * x).sum() / n;
    m1 + 0.3 * m2 - 0.2 * (2.0 * m1).sin()
}
