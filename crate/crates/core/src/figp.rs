//! Functional-input Gaussian process for one principal-component score.
//!
//! The score vector `f` over training inputs `g_1..g_n` is modelled as
//! `N(μ1, K)` with `K_jk = K(g_j, g_k)`. Given the correlation parameters
//! (Matérn lengthscales for the linear kernel, decay γ for the nonlinear one),
//! `μ` and `τ²` are profiled in closed form by generalized least squares and
//! the remaining parameters are searched in log space.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{FunctionalKernel, KernelShape, KernelVariant, MaternKernel, PreparedInputs, Smoothness};
use crate::linalg::{cholesky_jittered, cholesky_with, Jittered, NuggetPolicy, LN_2PI};
use crate::optim::{multistart, NelderMead, SearchBox};
use crate::quasirandom::{FunctionSample, NodeSet};

/// Hyperparameter search configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    /// Bounds for the Matérn lengthscales θ (linear kernel).
    pub lengthscale_bounds: (f64, f64),
    /// Bounds for the decay γ (nonlinear kernel).
    pub decay_bounds: (f64, f64),
    /// Number of Sobol multi-starts in log space.
    pub starts: usize,
    pub max_evals: usize,
    pub smoothness: Smoothness,
    pub nugget: NuggetPolicy,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            lengthscale_bounds: (0.01, 100.0),
            decay_bounds: (0.01, 100.0),
            starts: 8,
            max_evals: 300,
            smoothness: Smoothness::FiveHalves,
            nugget: NuggetPolicy::default(),
        }
    }
}

impl FitSettings {
    fn search_box(&self, variant: KernelVariant, dim: usize) -> SearchBox {
        let ((lo, hi), k) = match variant {
            KernelVariant::Linear => (self.lengthscale_bounds, dim),
            KernelVariant::Nonlinear => (self.decay_bounds, 1),
        };
        SearchBox::uniform(k, lo.ln(), hi.ln())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("lengthscale", self.lengthscale_bounds),
            ("decay", self.decay_bounds),
        ] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::Config(format!("{name} bounds must satisfy 0 < lo < hi")));
            }
        }
        if self.starts == 0 || self.max_evals < 10 {
            return Err(Error::Config("need at least one start and ten evaluations".into()));
        }
        self.nugget.validate()
    }
}

/// Unit-scale kernel with the given correlation parameters (log space).
pub(crate) fn correlation_kernel(
    variant: KernelVariant,
    log_params: &[f64],
    nodes: &Arc<NodeSet>,
    smoothness: Smoothness,
) -> Result<FunctionalKernel> {
    let params: Vec<f64> = log_params.iter().map(|v| v.exp()).collect();
    match variant {
        KernelVariant::Linear => {
            FunctionalKernel::linear(1.0, MaternKernel::new(params, smoothness)?, nodes.clone())
        }
        KernelVariant::Nonlinear => FunctionalKernel::nonlinear(1.0, params[0], smoothness, nodes.clone()),
    }
}

/// Generalized-least-squares profile of `y ~ N(Xβ, τ²(R + εI))` over β and τ².
#[derive(Debug, Clone)]
pub(crate) struct GlsProfile {
    pub beta: DVector<f64>,
    pub tau2: f64,
    pub loglik: f64,
    /// Relative nugget ε that made `R + εI` factorizable.
    pub rel_nugget: f64,
}

/// Lower bound on profiled τ², relative to the mean square of the data.
pub(crate) fn tau2_floor(y: &DVector<f64>) -> f64 {
    1e-12 * y.norm_squared() / y.len() as f64 + 1e-300
}

pub(crate) fn gls_profile(
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    policy: NuggetPolicy,
) -> Result<GlsProfile> {
    let n = y.len();
    let fac = cholesky_jittered(r, 1.0, policy)?;
    let mut xt = x.clone();
    fac.chol.l_dirty().solve_lower_triangular_mut(&mut xt);
    let yt = fac.solve_lower(y);
    let xtx = xt.tr_mul(&xt);
    let xty = xt.tr_mul(&yt);
    let beta = xtx
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| Error::numeric("GLS normal equations are singular"))?;
    let resid = &yt - &xt * &beta;
    let q = resid.norm_squared();
    let tau2 = (q / n as f64).max(tau2_floor(y));
    let loglik = -0.5 * n as f64 * (LN_2PI + tau2.ln()) - 0.5 * fac.log_det() - 0.5 * q / tau2;
    if !loglik.is_finite() {
        return Err(Error::numeric("non-finite profiled likelihood"));
    }
    Ok(GlsProfile {
        beta,
        tau2,
        loglik,
        rel_nugget: fac.nugget,
    })
}

/// Multi-start search over log correlation parameters maximizing `profile`.
/// Returns the best log parameters.
pub(crate) fn search_correlation<F>(
    variant: KernelVariant,
    nodes: &Arc<NodeSet>,
    settings: &FitSettings,
    mut profile: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&FunctionalKernel) -> Result<f64>,
{
    let bounds = settings.search_box(variant, nodes.dim());
    let nm = NelderMead {
        max_evals: settings.max_evals,
        ..NelderMead::default()
    };
    let mut objective = |u: &[f64]| -> f64 {
        correlation_kernel(variant, u, nodes, settings.smoothness)
            .and_then(|k| profile(&k))
            .map(|ll| -ll)
            .unwrap_or(f64::INFINITY)
    };
    let (best, _) = multistart(&mut objective, &bounds, settings.starts, nm)?;
    Ok(best)
}

pub(crate) fn check_inputs(inputs: &[FunctionSample], scores: &DVector<f64>, nodes: &NodeSet) -> Result<()> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::data(format!("need at least 2 training inputs, got {n}")));
    }
    if scores.len() != n {
        return Err(Error::arg(format!("{} scores for {n} inputs", scores.len())));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("training scores contain non-finite values"));
    }
    for (i, g) in inputs.iter().enumerate() {
        if g.node_set() != nodes.id() {
            return Err(Error::arg(format!("training input {i} is on a different node set")));
        }
        for (j, h) in inputs.iter().enumerate().take(i) {
            if g.values() == h.values() {
                return Err(Error::data(format!("training inputs {j} and {i} are identical")));
            }
        }
    }
    Ok(())
}

/// Predictive mean and variance of a score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

pub(crate) fn clip_variance(raw: f64) -> f64 {
    if raw < -1e-8 {
        log::warn!("negative predictive variance {raw:e} clipped to zero");
    }
    raw.max(0.0)
}

/// Fitted functional-input GP for one score.
#[derive(Debug, Clone)]
pub struct FigpModel {
    kernel: FunctionalKernel,
    mu: f64,
    inputs: Vec<FunctionSample>,
    scores: DVector<f64>,
    prepared: PreparedInputs,
    gram: DMatrix<f64>,
    factor: Jittered,
    alpha: DVector<f64>,
}

impl FigpModel {
    /// Maximum-likelihood fit of the given kernel variant.
    pub fn fit(
        nodes: &Arc<NodeSet>,
        inputs: &[FunctionSample],
        scores: &DVector<f64>,
        variant: KernelVariant,
        settings: &FitSettings,
    ) -> Result<Self> {
        settings.validate()?;
        check_inputs(inputs, scores, nodes)?;
        let ones = DMatrix::from_element(inputs.len(), 1, 1.0);
        let best = search_correlation(variant, nodes, settings, |k| {
            let r = k.gram(inputs)?;
            Ok(gls_profile(&r, &ones, scores, settings.nugget)?.loglik)
        })?;
        let corr = correlation_kernel(variant, &best, nodes, settings.smoothness)?;
        let r = corr.gram(inputs)?;
        let prof = gls_profile(&r, &ones, scores, settings.nugget)?;
        let kernel = corr.with_tau2(prof.tau2)?;
        let policy = NuggetPolicy {
            initial: prof.rel_nugget,
            ..settings.nugget
        };
        Self::assemble(kernel, prof.beta[0], inputs.to_vec(), scores.clone(), Nugget::Escalate(policy))
    }

    /// Rebuilds a model from known hyperparameters and an absolute nugget.
    pub fn from_parts(
        kernel: FunctionalKernel,
        mu: f64,
        nugget: f64,
        inputs: Vec<FunctionSample>,
        scores: DVector<f64>,
    ) -> Result<Self> {
        check_inputs(&inputs, &scores, kernel.nodes())?;
        if !mu.is_finite() || !(nugget >= 0.0) {
            return Err(Error::arg("mean must be finite and nugget nonnegative"));
        }
        Self::assemble(kernel, mu, inputs, scores, Nugget::Fixed(nugget))
    }

    /// Builds a model whose nugget starts at `policy.initial·τ²` and escalates.
    pub(crate) fn with_escalation(
        kernel: FunctionalKernel,
        mu: f64,
        inputs: Vec<FunctionSample>,
        scores: DVector<f64>,
        policy: NuggetPolicy,
    ) -> Result<Self> {
        Self::assemble(kernel, mu, inputs, scores, Nugget::Escalate(policy))
    }

    fn assemble(
        kernel: FunctionalKernel,
        mu: f64,
        inputs: Vec<FunctionSample>,
        scores: DVector<f64>,
        nugget: Nugget,
    ) -> Result<Self> {
        let prepared = kernel.prepare(&inputs)?;
        let gram = kernel.gram_prepared(&prepared)?;
        let factor = match nugget {
            Nugget::Fixed(v) => cholesky_with(&gram, v)
                .ok_or_else(|| Error::numeric(format!("Gram matrix not positive definite with nugget {v:e}")))?,
            Nugget::Escalate(policy) => cholesky_jittered(&gram, kernel.tau2(), policy)?,
        };
        let centered = scores.add_scalar(-mu);
        let alpha = factor.solve(&centered);
        Ok(Self {
            kernel,
            mu,
            inputs,
            scores,
            prepared,
            gram,
            factor,
            alpha,
        })
    }

    pub fn kernel(&self) -> &FunctionalKernel {
        &self.kernel
    }

    pub fn variant(&self) -> KernelVariant {
        self.kernel.variant()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn tau2(&self) -> f64 {
        self.kernel.tau2()
    }

    /// Absolute diagonal jitter included in the cached factorization.
    pub fn nugget(&self) -> f64 {
        self.factor.nugget
    }

    pub fn inputs(&self) -> &[FunctionSample] {
        &self.inputs
    }

    pub fn scores(&self) -> &DVector<f64> {
        &self.scores
    }

    /// Gram matrix without the nugget.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub(crate) fn factor(&self) -> &Jittered {
        &self.factor
    }

    /// Matérn lengthscales (linear) or `[γ]` (nonlinear).
    pub fn correlation_params(&self) -> Vec<f64> {
        match self.kernel.shape() {
            KernelShape::Linear(m) => m.lengthscales().to_vec(),
            KernelShape::Nonlinear { gamma, .. } => vec![*gamma],
        }
    }

    /// Log-likelihood of the training scores at the fitted parameters.
    pub fn log_likelihood(&self) -> f64 {
        let n = self.scores.len() as f64;
        let centered = self.scores.add_scalar(-self.mu);
        -0.5 * (n * LN_2PI + self.factor.log_det() + centered.dot(&self.alpha))
    }

    /// Closed-form leave-one-out error `(1/n)‖Λ⁻¹K⁻¹(f − μ1)‖²`, Λ = diag(K⁻¹).
    pub fn loocv(&self) -> Result<f64> {
        let inv = self.factor.chol.inverse();
        let n = self.alpha.len();
        let mut acc = 0.0;
        for i in 0..n {
            let d = inv[(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::numeric("inverse Gram has a non-positive diagonal"));
            }
            acc += (self.alpha[i] / d).powi(2);
        }
        Ok(acc / n as f64)
    }

    /// Cross-covariances with the training inputs and the prior variance at `g`.
    pub(crate) fn cross(&self, g: &FunctionSample) -> Result<(DVector<f64>, f64)> {
        self.kernel.cross(&self.prepared, g)
    }

    pub fn predict(&self, g: &FunctionSample) -> Result<Prediction> {
        let (k, kgg) = self.cross(g)?;
        let mean = self.mu + k.dot(&self.alpha);
        let var = clip_variance(kgg - self.factor.quad_form(&k));
        Ok(Prediction { mean, var })
    }
}

enum Nugget {
    Fixed(f64),
    Escalate(NuggetPolicy),
}

/// A fitted candidate and its leave-one-out error.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub model: FigpModel,
    pub loocv: f64,
}

/// Both kernel fits for one score, with the LOOCV-preferred one marked.
#[derive(Debug, Clone)]
pub struct KernelSelection {
    pub linear: Candidate,
    pub nonlinear: Candidate,
    pub chosen: KernelVariant,
}

impl KernelSelection {
    pub fn chosen_model(&self) -> &FigpModel {
        match self.chosen {
            KernelVariant::Linear => &self.linear.model,
            KernelVariant::Nonlinear => &self.nonlinear.model,
        }
    }

    pub fn into_chosen(self) -> FigpModel {
        match self.chosen {
            KernelVariant::Linear => self.linear.model,
            KernelVariant::Nonlinear => self.nonlinear.model,
        }
    }
}

/// Fits both kernels and keeps the one with the smaller LOOCV (ties go to linear).
pub fn select_kernel(
    nodes: &Arc<NodeSet>,
    inputs: &[FunctionSample],
    scores: &DVector<f64>,
    settings: &FitSettings,
) -> Result<KernelSelection> {
    let fit = |variant| -> Result<Candidate> {
        let model = FigpModel::fit(nodes, inputs, scores, variant, settings)?;
        let loocv = model.loocv()?;
        Ok(Candidate { model, loocv })
    };
    let linear = fit(KernelVariant::Linear)?;
    let nonlinear = fit(KernelVariant::Nonlinear)?;
    let chosen = if linear.loocv <= nonlinear.loocv {
        KernelVariant::Linear
    } else {
        KernelVariant::Nonlinear
    };
    Ok(KernelSelection {
        linear,
        nonlinear,
        chosen,
    })
}
