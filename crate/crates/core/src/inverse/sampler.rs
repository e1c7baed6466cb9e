//! Metropolis-within-Gibbs sampler over `(g_N, σ², η, τ²)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{InitStrategy, InitialState, InverseProblem, SamplerHooks};
use crate::error::{Error, Result};
use crate::kernels::{MaternKernel, Smoothness};
use crate::linalg::{cholesky_jittered, Jittered, NuggetPolicy};
use crate::quasirandom::{FunctionSample, NodeSet};

/// Post-burn-in acceptance rates per block.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Acceptance {
    pub g: f64,
    pub sigma_e2: f64,
    pub eta: f64,
}

/// Thinned post-burn-in draws.
#[derive(Debug, Clone)]
pub struct PosteriorChain {
    /// Post-burn-in iteration index of each retained draw.
    pub iterations: Vec<usize>,
    /// `S × N`
    pub g: DMatrix<f64>,
    pub sigma_e2: Vec<f64>,
    pub tau_g2: Vec<f64>,
    /// `S × d`
    pub eta: DMatrix<f64>,
    /// Emulator score means and variances at each retained `g` (`S × L`).
    pub score_mean: DMatrix<f64>,
    pub score_var: DMatrix<f64>,
    pub acceptance: Acceptance,
    /// Step sizes after adaptation: `[c_g, c_s, c_η]`.
    pub steps: [f64; 3],
    pub nodes: Arc<NodeSet>,
    pub smoothness: Smoothness,
    pub nugget: NuggetPolicy,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.sigma_e2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_e2.is_empty()
    }
}

/// Cholesky factor of the prior correlation `Φ_η` on the nodes.
struct PriorFactor {
    chol: Jittered,
    lower: DMatrix<f64>,
    /// `L⁻¹ g`
    white: DVector<f64>,
}

impl PriorFactor {
    fn new(eta: &[f64], g: &DVector<f64>, nodes: &NodeSet, smoothness: Smoothness, policy: NuggetPolicy) -> Result<Self> {
        let chol = prior_cholesky(eta, nodes, smoothness, policy)?;
        let white = chol.solve_lower(g);
        let lower = chol.lower();
        Ok(Self { chol, lower, white })
    }

    /// `gᵀΦ⁻¹g`
    fn quad(&self) -> f64 {
        self.white.norm_squared()
    }

    /// `log N(g; 0, τ²Φ)` without the `2π` term.
    fn log_density(&self, tau2: f64) -> f64 {
        let n = self.white.len() as f64;
        -0.5 * (n * tau2.ln() + self.chol.log_det() + self.quad() / tau2)
    }
}

pub(crate) fn prior_cholesky(
    eta: &[f64],
    nodes: &NodeSet,
    smoothness: Smoothness,
    policy: NuggetPolicy,
) -> Result<Jittered> {
    let kernel = MaternKernel::new(eta.to_vec(), smoothness)?;
    let phi = kernel.gram(nodes)?;
    cholesky_jittered(&phi, 1.0, policy).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("prior correlation at eta = {eta:?}: {msg}")),
        other => other,
    })
}

struct State {
    g: DVector<f64>,
    sigma2: f64,
    eta: Vec<f64>,
    tau2: f64,
    prior: PriorFactor,
    mean: DVector<f64>,
    var: DVector<f64>,
    loglik: f64,
}

struct Counter {
    accepted: usize,
    tried: usize,
}

impl Counter {
    fn new() -> Self {
        Self { accepted: 0, tried: 0 }
    }

    fn record(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += accepted as usize;
    }

    fn rate(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }
}

fn inv_gamma_log_density(x: f64, a: f64, b: f64) -> f64 {
    -(a + 1.0) * x.ln() - b / x
}

fn gamma_log_density(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() - b * x
}

fn accept(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    !log_ratio.is_nan() && (log_ratio >= 0.0 || u.ln() < log_ratio)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

impl InverseProblem {
    fn evaluate(&self, g: &DVector<f64>, sigma2: f64) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let nodes = self.emulator.nodes();
        let sample = FunctionSample::with_id(g.clone(), nodes.count(), nodes.id())?;
        let (mean, var) = self.emulator.predict_scores(&sample)?;
        let loglik = self.loglik_of(&mean, &var, sigma2)?;
        Ok((mean, var, loglik))
    }

    fn loglik_of(&self, mean: &DVector<f64>, var: &DVector<f64>, sigma2: f64) -> Result<f64> {
        if self.hooks.flat_likelihood {
            return Ok(0.0);
        }
        self.projected.log_likelihood(mean, var, sigma2)
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Result<State> {
        let nodes = self.emulator.nodes();
        let (n, d) = (nodes.count(), nodes.dim());
        let init = match &self.initial {
            Some(s) => s.clone(),
            None => {
                let eta = vec![1.0; d];
                let tau2 = self.priors.b2 / (self.priors.a2 + 1.0);
                let y = &self.observation;
                let sigma_e2 = (1e-4 * y.map(|v| (v - y.mean()).powi(2)).mean()).max(1e-12);
                let candidates = self.emulator.training_inputs();
                let g = match self.init {
                    InitStrategy::BestTraining if !candidates.is_empty() => {
                        let mut best = (f64::NEG_INFINITY, 0);
                        for (i, c) in candidates.iter().enumerate() {
                            let ll = self.log_likelihood(c, sigma_e2)?;
                            if ll > best.0 {
                                best = (ll, i);
                            }
                        }
                        candidates[best.1].values().clone()
                    }
                    _ => {
                        let chol = prior_cholesky(&eta, nodes, self.smoothness, self.nugget)?;
                        chol.lower() * normals(rng, n) * tau2.sqrt()
                    }
                };
                InitialState {
                    g,
                    sigma_e2,
                    eta,
                    tau_g2: tau2,
                }
            }
        };
        if init.g.len() != n || init.eta.len() != d {
            return Err(Error::arg("initial state does not match the node set"));
        }
        if !(init.sigma_e2 > 0.0 && init.tau_g2 > 0.0 && init.eta.iter().all(|e| *e > 0.0)) {
            return Err(Error::arg("initial variances and inverse lengthscales must be positive"));
        }
        let prior = PriorFactor::new(&init.eta, &init.g, nodes, self.smoothness, self.nugget)?;
        let (mean, var, loglik) = self.evaluate(&init.g, init.sigma_e2)?;
        Ok(State {
            g: init.g,
            sigma2: init.sigma_e2,
            eta: init.eta,
            tau2: init.tau_g2,
            prior,
            mean,
            var,
            loglik,
        })
    }
}

/// Runs the sampler: adaptive burn-in followed by `samples` iterations
/// thinned by `thin`. Deterministic for a given seed.
pub fn run_mcmc(problem: &InverseProblem) -> Result<PosteriorChain> {
    let settings = problem.mcmc;
    settings.validate()?;
    problem.priors.validate()?;
    let hooks: SamplerHooks = problem.hooks;
    let pr = problem.priors;
    let nodes = problem.emulator.nodes().clone();
    let (n, d) = (nodes.count(), nodes.dim());
    let l = problem.emulator.basis().len();
    let jacobian = if settings.paper_literal { 0.0 } else { 1.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut st = problem.initial_state(&mut rng)?;
    let (mut c_g, mut c_s, mut c_eta) = (settings.c_g, settings.c_s, settings.c_eta);

    let s = settings.retained();
    let mut chain = PosteriorChain {
        iterations: Vec::with_capacity(s),
        g: DMatrix::zeros(s, n),
        sigma_e2: Vec::with_capacity(s),
        tau_g2: Vec::with_capacity(s),
        eta: DMatrix::zeros(s, d),
        score_mean: DMatrix::zeros(s, l),
        score_var: DMatrix::zeros(s, l),
        acceptance: Acceptance::default(),
        steps: [0.0; 3],
        nodes: nodes.clone(),
        smoothness: problem.smoothness,
        nugget: problem.nugget,
    };

    let mut window = [Counter::new(), Counter::new(), Counter::new()];
    let mut kept = [Counter::new(), Counter::new(), Counter::new()];
    let total = settings.burn_in + settings.samples;

    for it in 0..total {
        let sampling = it >= settings.burn_in;
        let counters = if sampling { &mut kept } else { &mut window };

        if !hooks.freeze_g {
            // L⁻¹g' = L⁻¹g + c_g τ z, so the prior term needs no solve
            let z = normals(&mut rng, n);
            let step = c_g * st.tau2.sqrt();
            let g_new = &st.g + &st.prior.lower * &z * step;
            let white_new = &st.prior.white + &z * step;
            let q_old = st.prior.quad();
            let q_new = white_new.norm_squared();
            let (mean, var, loglik) = problem.evaluate(&g_new, st.sigma2)?;
            let log_ratio = loglik - st.loglik - 0.5 * (q_new - q_old) / st.tau2;
            let ok = accept(&mut rng, log_ratio);
            if ok {
                st.g = g_new;
                st.prior.white = white_new;
                st.mean = mean;
                st.var = var;
                st.loglik = loglik;
            }
            counters[0].record(ok);
        }

        if !hooks.freeze_sigma_e2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let s_new = st.sigma2 * (c_s * z).exp();
            let loglik = problem.loglik_of(&st.mean, &st.var, s_new)?;
            let log_ratio = loglik - st.loglik + inv_gamma_log_density(s_new, pr.a1, pr.b1)
                - inv_gamma_log_density(st.sigma2, pr.a1, pr.b1)
                + jacobian * (s_new.ln() - st.sigma2.ln());
            let ok = accept(&mut rng, log_ratio);
            if ok {
                st.sigma2 = s_new;
                st.loglik = loglik;
            }
            counters[1].record(ok);
        }

        if !hooks.freeze_eta {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mut eta_new = st.eta.clone();
                eta_new[j] = st.eta[j] * (c_eta * z).exp();
                let prior_new = PriorFactor::new(&eta_new, &st.g, &nodes, problem.smoothness, problem.nugget)?;
                let log_ratio = prior_new.log_density(st.tau2) - st.prior.log_density(st.tau2)
                    + gamma_log_density(eta_new[j], pr.a3, pr.b3)
                    - gamma_log_density(st.eta[j], pr.a3, pr.b3)
                    + jacobian * (eta_new[j].ln() - st.eta[j].ln());
                let ok = accept(&mut rng, log_ratio);
                if ok {
                    st.eta = eta_new;
                    st.prior = prior_new;
                }
                counters[2].record(ok);
            }
        }

        if !hooks.freeze_tau_g2 {
            let shape = pr.a2 + 0.5 * n as f64;
            let rate = pr.b2 + 0.5 * st.prior.quad();
            let x: f64 = Gamma::new(shape, 1.0)
                .map_err(|e| Error::numeric(format!("conditional for tau_g2: {e}")))?
                .sample(&mut rng);
            st.tau2 = rate / x;
            if !(st.tau2 > 0.0 && st.tau2.is_finite()) {
                return Err(Error::numeric(format!("tau_g2 draw {} is not positive", st.tau2)));
            }
        }

        if !sampling && (it + 1) % settings.adapt_interval == 0 {
            for (c, w) in [&mut c_g, &mut c_s, &mut c_eta].into_iter().zip(window.iter_mut()) {
                if w.tried > 0 {
                    *c *= (0.5 * (w.rate() - settings.adapt_target)).exp();
                }
                *w = Counter::new();
            }
        }

        if sampling && (it - settings.burn_in) % settings.thin == 0 {
            let row = chain.iterations.len();
            chain.iterations.push(it - settings.burn_in);
            chain.g.set_row(row, &st.g.transpose());
            chain.sigma_e2.push(st.sigma2);
            chain.tau_g2.push(st.tau2);
            for (j, e) in st.eta.iter().enumerate() {
                chain.eta[(row, j)] = *e;
            }
            chain.score_mean.set_row(row, &st.mean.transpose());
            chain.score_var.set_row(row, &st.var.transpose());
        }
    }

    let rate = |c: &Counter, frozen: bool| if frozen { f64::NAN } else { c.rate() };
    chain.acceptance = Acceptance {
        g: rate(&kept[0], hooks.freeze_g),
        sigma_e2: rate(&kept[1], hooks.freeze_sigma_e2),
        eta: rate(&kept[2], hooks.freeze_eta),
    };
    chain.steps = [c_g, c_s, c_eta];
    log::info!(
        "sampler finished: acceptance g {:.3}, sigma_e2 {:.3}, eta {:.3}",
        chain.acceptance.g,
        chain.acceptance.sigma_e2,
        chain.acceptance.eta
    );
    Ok(chain)
}
