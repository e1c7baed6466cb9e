//! Bayesian recovery of a functional input from a noisy simulator image.
//!
//! The observation is modelled as `y ~ N(Σ m_l(g) u_l, σ²I + Σ v_l(g) u_l u_lᵀ)`
//! with a Matérn GP prior on `g` (realized on the node set), an inverse-gamma
//! prior on `σ²`, conjugate inverse-gamma on `τ²` and gamma priors on the
//! prior's inverse lengthscales `η`.

mod posterior;
mod sampler;

use std::sync::Arc;

use nalgebra::DVector;

use crate::emulator::Emulator;
use crate::error::{Error, Result};
use crate::kernels::Smoothness;
use crate::linalg::{NuggetPolicy, LN_2PI};
use crate::quasirandom::FunctionSample;

pub use posterior::{field_metrics, posterior_g, posterior_ys, regular_grid, Field, Metrics};
pub use sampler::{run_mcmc, Acceptance, PosteriorChain};

/// Hyperparameters of the priors: `σ² ~ IG(a1, b1)`, `τ² ~ IG(a2, b2)`,
/// `η_j ~ Gamma(a3, b3)`. All `b` are rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub a3: f64,
    pub b3: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            a1: 1.0,
            b1: 1.0,
            a2: 1.0,
            b2: 1e-5,
            a3: 1.0,
            b3: 1.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a1", self.a1),
            ("b1", self.b1),
            ("a2", self.a2),
            ("b2", self.b2),
            ("a3", self.a3),
            ("b3", self.b3),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcSettings {
    pub burn_in: usize,
    /// Post-burn-in iterations; every `thin`-th one is kept.
    pub samples: usize,
    pub thin: usize,
    /// Initial step sizes for `g`, `log σ²` and `log η_j`.
    pub c_g: f64,
    pub c_s: f64,
    pub c_eta: f64,
    /// Acceptance rate the burn-in adaptation steers toward.
    pub adapt_target: f64,
    pub adapt_interval: usize,
    pub seed: u64,
    /// Drop the log-scale Jacobian from the `σ²` and `η` acceptance ratios.
    pub paper_literal: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            samples: 5000,
            thin: 5,
            c_g: 0.05,
            c_s: 0.3,
            c_eta: 0.3,
            adapt_target: 0.35,
            adapt_interval: 100,
            seed: 0,
            paper_literal: false,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in == 0 || self.samples == 0 || self.thin == 0 {
            return Err(Error::Config("burn_in, samples and thin must all be at least 1".into()));
        }
        for (name, v) in [("c_g", self.c_g), ("c_s", self.c_s), ("c_eta", self.c_eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("step size {name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::Config(format!(
                "adapt_target must be in (0,1), got {}",
                self.adapt_target
            )));
        }
        if self.adapt_interval == 0 {
            return Err(Error::Config("adapt_interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        self.samples.div_ceil(self.thin)
    }
}

/// Switches for exercising individual sampler blocks in isolation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SamplerHooks {
    /// Replace the likelihood by a constant, so the chain samples the prior.
    pub flat_likelihood: bool,
    pub freeze_g: bool,
    pub freeze_sigma_e2: bool,
    pub freeze_eta: bool,
    pub freeze_tau_g2: bool,
}

/// Where the chain starts `g_N` when no explicit initial state is given.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum InitStrategy {
    /// The training input with the highest likelihood under the emulator.
    /// Starting from a prior draw (near zero) can leave the chain on the flat
    /// region far from all training inputs where the emulator reverts to its
    /// mean.
    #[default]
    BestTraining,
    /// A draw from the GP prior with unit inverse lengthscales.
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub g: DVector<f64>,
    pub sigma_e2: f64,
    pub eta: Vec<f64>,
    pub tau_g2: f64,
}

/// The observation projected once onto the emulator basis.
#[derive(Debug, Clone)]
pub struct ProjectedObservation {
    m: usize,
    /// `Uᵀy`
    uty: DVector<f64>,
    /// `‖y − UUᵀy‖²`, the energy outside the basis.
    perp: f64,
}

impl ProjectedObservation {
    pub fn new(y: &DVector<f64>, basis: &crate::reduction::PcaBasis) -> Result<Self> {
        let uty = basis.scores(y)?;
        let perp = (y - basis.components() * &uty).norm_squared();
        Ok(Self { m: y.len(), uty, perp })
    }

    /// Log-density of the observation given component means and variances.
    ///
    /// Uses `‖y − Um‖² = ‖(I − UUᵀ)y‖² + ‖Uᵀy − m‖²` and the diagonal
    /// Woodbury form, so the cost is `O(L)`.
    pub fn log_likelihood(&self, mean: &DVector<f64>, var: &DVector<f64>, sigma_e2: f64) -> Result<f64> {
        if !(sigma_e2 > 0.0 && sigma_e2.is_finite()) {
            return Err(Error::arg(format!("noise variance must be positive, got {sigma_e2}")));
        }
        if mean.len() != self.uty.len() || var.len() != self.uty.len() {
            return Err(Error::arg("score moments do not match the basis size"));
        }
        let mut log_det = self.m as f64 * sigma_e2.ln();
        let mut quad = self.perp / sigma_e2;
        for l in 0..self.uty.len() {
            let v = var[l];
            if !(v >= 0.0) {
                return Err(Error::numeric(format!("negative emulator variance {v:e} for component {}", l + 1)));
            }
            let r = self.uty[l] - mean[l];
            log_det += (v / sigma_e2).ln_1p();
            quad += r * r / (sigma_e2 + v);
        }
        Ok(-0.5 * (self.m as f64 * LN_2PI + log_det + quad))
    }
}

#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub observation: DVector<f64>,
    pub emulator: Arc<Emulator>,
    pub priors: Priors,
    pub mcmc: McmcSettings,
    /// Smoothness of the GP prior on `g`.
    pub smoothness: Smoothness,
    pub nugget: NuggetPolicy,
    pub hooks: SamplerHooks,
    pub init: InitStrategy,
    pub initial: Option<InitialState>,
    projected: ProjectedObservation,
}

impl InverseProblem {
    pub fn new(observation: DVector<f64>, emulator: Arc<Emulator>, priors: Priors, mcmc: McmcSettings) -> Result<Self> {
        priors.validate()?;
        mcmc.validate()?;
        if observation.len() != emulator.basis().image_len() {
            return Err(Error::data(format!(
                "observation has length {} but the emulator produces images of length {}",
                observation.len(),
                emulator.basis().image_len()
            )));
        }
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("observation contains non-finite values"));
        }
        let projected = ProjectedObservation::new(&observation, emulator.basis())?;
        Ok(Self {
            observation,
            emulator,
            priors,
            mcmc,
            smoothness: Smoothness::FiveHalves,
            nugget: NuggetPolicy::default(),
            hooks: SamplerHooks::default(),
            init: InitStrategy::default(),
            initial: None,
            projected,
        })
    }

    pub fn projected(&self) -> &ProjectedObservation {
        &self.projected
    }

    /// Log-likelihood of the observation at a realized input.
    pub fn log_likelihood(&self, g: &FunctionSample, sigma_e2: f64) -> Result<f64> {
        let (mean, var) = self.emulator.predict_scores(g)?;
        self.projected.log_likelihood(&mean, &var, sigma_e2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::PcaBasis;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_log_density(y: &DVector<f64>, mu: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let chol = cov.clone().cholesky().unwrap();
        let r = y - mu;
        let quad = r.dot(&chol.solve(&r));
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        -0.5 * (y.len() as f64 * LN_2PI + log_det + quad)
    }

    fn basis(m: usize, l: usize, rng: &mut ChaCha8Rng) -> PcaBasis {
        let y = DMatrix::from_fn(m, l + 2, |_, _| rng.random_range(-1.0..1.0));
        let full = PcaBasis::fit(&y, 0.999_999_999).unwrap();
        let u = full.components().columns(0, l).into_owned();
        PcaBasis::from_parts(u, full.explained()[..l].to_vec(), 0.5).unwrap()
    }

    #[test]
    fn matches_dense_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = basis(64, 3, &mut rng);
        let y = DVector::from_fn(64, |_, _| rng.random_range(-1.0..1.0));
        let mean = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let var = DVector::from_fn(3, |_, _| rng.random_range(0.0..0.5));
        let s2 = 0.03;
        let p = ProjectedObservation::new(&y, &b).unwrap();
        let fast = p.log_likelihood(&mean, &var, s2).unwrap();
        let u = b.components();
        let cov = DMatrix::identity(64, 64) * s2 + u * DMatrix::from_diagonal(&var) * u.transpose();
        let dense = dense_log_density(&y, &(u * &mean), &cov);
        assert!((fast - dense).abs() <= 1e-8 * dense.abs(), "{fast} {dense}");
    }

    #[test]
    fn zero_variance_is_spherical() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = basis(16, 2, &mut rng);
        let y = DVector::from_fn(16, |_, _| rng.random_range(-1.0..1.0));
        let mean = DVector::from_vec(vec![0.4, -0.2]);
        let p = ProjectedObservation::new(&y, &b).unwrap();
        let got = p.log_likelihood(&mean, &DVector::zeros(2), 0.5).unwrap();
        let r = &y - b.components() * &mean;
        let expected = -0.5 * (16.0 * (LN_2PI + 0.5f64.ln()) + r.norm_squared() / 0.5);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn argument_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = basis(8, 1, &mut rng);
        let p = ProjectedObservation::new(&DVector::zeros(8), &b).unwrap();
        let one = DVector::from_element(1, 0.1);
        assert!(matches!(p.log_likelihood(&one, &one, 0.0), Err(Error::Argument(_))));
        let neg = DVector::from_element(1, -0.1);
        assert!(matches!(p.log_likelihood(&one, &neg, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn settings_validation() {
        assert!(Priors { b2: 0.0, ..Priors::default() }.validate().is_err());
        assert!(McmcSettings { thin: 0, ..McmcSettings::default() }.validate().is_err());
        assert_eq!(McmcSettings { samples: 7, thin: 5, ..McmcSettings::default() }.retained(), 2);
        assert_eq!(McmcSettings::default().retained(), 1000);
    }
}
