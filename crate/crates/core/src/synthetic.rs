//! Synthetic two-fidelity forward solvers and the benchmark problem built on
//! them.
//!
//! Sensor `j = k·a + b` integrates `g` against `cos(πp_a x₁) cos(πp_b x₂)` on a
//! midpoint tensor grid, where `p_0 < … < p_{k−1}` are evenly spaced on
//! `[0, F]`. A low maximum frequency `F` keeps the image smooth in the sensor
//! index, so a handful of principal components capture it. The low-fidelity
//! output is that linear functional; the high-fidelity output adds a
//! quadratic distortion `β a_j²`, so the low fidelity is exactly its
//! linearization at zero.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::expr::FunctionExpr;

pub const TRAINING_FUNCTIONS: [&str; 10] = [
    "1",
    "1+x1",
    "1-x1",
    "1+x1*x2",
    "1-x1*x2",
    "1+x2",
    "1+x1^2",
    "1-x1^2",
    "1+x2^2",
    "1-x2^2",
];

pub const TEST_FUNCTION: &str = "1-sin(x2)";

pub const NOISE_SD: f64 = 0.005;

/// Explained-variance threshold for emulating the benchmark. Looser bases
/// leave a truncation error above the noise level that the emulator variance
/// does not account for.
pub const BENCHMARK_THRESHOLD: f64 = 0.999999;

#[derive(Debug, Clone)]
pub struct SyntheticSolver {
    freqs: usize,
    max_frequency: f64,
    grid: usize,
    beta: f64,
    /// `C[k, a] = cos(πp_k t_a) / grid`, so that `A = C G Cᵀ`.
    weights: DMatrix<f64>,
}

impl Default for SyntheticSolver {
    fn default() -> Self {
        Self::new(32, 4.0, 128, 0.3).expect("default solver parameters are valid")
    }
}

impl SyntheticSolver {
    /// `freqs` sensor frequencies per axis spanning `[0, max_frequency]`
    /// (output length `freqs²`) and a `grid × grid` quadrature.
    pub fn new(freqs: usize, max_frequency: f64, grid: usize, beta: f64) -> Result<Self> {
        if freqs == 0 || grid == 0 {
            return Err(Error::arg("sensor and quadrature sizes must be positive"));
        }
        if !(max_frequency >= 0.0 && max_frequency.is_finite()) {
            return Err(Error::arg(format!("maximum frequency must be finite and nonnegative, got {max_frequency}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::arg(format!("nonlinearity must be finite and nonnegative, got {beta}")));
        }
        let h = 1.0 / grid as f64;
        let weights = DMatrix::from_fn(freqs, grid, |k, a| {
            let t = (a as f64 + 0.5) * h;
            (std::f64::consts::PI * frequency(k, freqs, max_frequency) * t).cos() * h
        });
        Ok(Self {
            freqs,
            max_frequency,
            grid,
            beta,
            weights,
        })
    }

    /// Output image length `m`.
    pub fn m(&self) -> usize {
        self.freqs * self.freqs
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.freqs, self.max_frequency, self.grid, beta)
    }

    /// Sensor frequency `p_k`.
    pub fn frequency(&self, k: usize) -> f64 {
        frequency(k, self.freqs, self.max_frequency)
    }

    /// Quadrature points along one axis.
    pub fn abscissae(&self) -> Vec<f64> {
        (0..self.grid).map(|a| (a as f64 + 0.5) / self.grid as f64).collect()
    }

    /// Values of `g` on the quadrature grid, `G[a, b] = g(t_a, t_b)`.
    pub fn grid_values(&self, g: &FunctionExpr) -> Result<DMatrix<f64>> {
        if g.arity() > 2 {
            return Err(Error::arg(format!("expression uses x{} on a 2-d domain", g.arity())));
        }
        let t = self.abscissae();
        let mut out = DMatrix::zeros(self.grid, self.grid);
        for a in 0..self.grid {
            for b in 0..self.grid {
                out[(a, b)] = g.eval_at(&[t[a], t[b]], a * self.grid + b)?;
            }
        }
        Ok(out)
    }

    /// Linear sensor integrals of gridded values.
    pub fn integrate(&self, values: &DMatrix<f64>) -> Result<DVector<f64>> {
        if values.shape() != (self.grid, self.grid) {
            return Err(Error::arg("grid values have the wrong shape"));
        }
        let a = &self.weights * values * self.weights.transpose();
        // row-major so that sensor j = freqs·a + b
        Ok(DVector::from_iterator(self.m(), a.transpose().iter().copied()))
    }

    pub fn low_fidelity(&self, g: &FunctionExpr) -> Result<DVector<f64>> {
        self.integrate(&self.grid_values(g)?)
    }

    pub fn high_fidelity(&self, g: &FunctionExpr) -> Result<DVector<f64>> {
        Ok(self.distort(&self.low_fidelity(g)?))
    }

    /// Applies the high-fidelity distortion to low-fidelity outputs.
    pub fn distort(&self, low: &DVector<f64>) -> DVector<f64> {
        low.map(|a| a + self.beta * a * a)
    }
}

fn frequency(k: usize, freqs: usize, max_frequency: f64) -> f64 {
    if freqs > 1 {
        max_frequency * k as f64 / (freqs - 1) as f64
    } else {
        0.0
    }
}

/// The standard test problem: training images at both fidelities and a
/// noisy high-fidelity observation of the test input.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub training: Vec<FunctionExpr>,
    /// `m × n`, one column per training input.
    pub y_high: DMatrix<f64>,
    pub y_low: DMatrix<f64>,
    pub test: FunctionExpr,
    /// Noise-free high-fidelity image of the test input.
    pub y_test: DVector<f64>,
    pub y_p: DVector<f64>,
    pub noise_sd: f64,
}

pub fn make_benchmark(solver: &SyntheticSolver, seed: u64) -> Result<Benchmark> {
    let training: Vec<FunctionExpr> = TRAINING_FUNCTIONS
        .iter()
        .map(|s| FunctionExpr::parse(s))
        .collect::<Result<_>>()?;
    let low: Vec<DVector<f64>> = training.iter().map(|g| solver.low_fidelity(g)).collect::<Result<_>>()?;
    let high: Vec<DVector<f64>> = low.iter().map(|a| solver.distort(a)).collect();
    let test = FunctionExpr::parse(TEST_FUNCTION)?;
    let y_test = solver.high_fidelity(&test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, NOISE_SD).expect("positive sd");
    let y_p = y_test.map(|v| v + normal.sample(&mut rng));
    Ok(Benchmark {
        training,
        y_high: DMatrix::from_columns(&high),
        y_low: DMatrix::from_columns(&low),
        test,
        y_test,
        y_p,
        noise_sd: NOISE_SD,
    })
}
