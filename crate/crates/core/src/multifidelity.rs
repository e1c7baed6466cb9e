//! Autoregressive two-fidelity emulator `f(g) = ρ h(g) + δ(g)` for one score.
//!
//! `h` is a functional-input GP on the low-fidelity scores and `δ` a second,
//! independent one on the residual `f − ρh`. Both fidelities are observed at
//! the same inputs. For each candidate δ-kernel the regression coefficient ρ
//! and the δ mean are profiled jointly by generalized least squares on the
//! design `[1, h]`, while δ's correlation parameters are searched.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::figp::{
    check_inputs, clip_variance, correlation_kernel, gls_profile, search_correlation, select_kernel,
    FigpModel, FitSettings, Prediction,
};
use crate::kernels::KernelVariant;
use crate::linalg::NuggetPolicy;
use crate::quasirandom::{FunctionSample, NodeSet};

pub const RHO_BOUND: f64 = 10.0;

/// Leave-one-out errors of both candidate kernels at each fidelity level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfSelection {
    pub low: [f64; 2],
    pub delta: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct MultiFiModel {
    rho: f64,
    low: FigpModel,
    delta: FigpModel,
    /// Lower-triangular factor of the joint covariance of `(h, f)`.
    joint: DMatrix<f64>,
    // V⁻¹(z − μ)
    alpha: DVector<f64>,
}

impl MultiFiModel {
    /// Fits `h` to the low-fidelity scores and `(ρ, δ)` to the high-fidelity
    /// ones, selecting each kernel by leave-one-out error.
    pub fn fit(
        nodes: &Arc<NodeSet>,
        inputs: &[FunctionSample],
        low_scores: &DVector<f64>,
        high_scores: &DVector<f64>,
        settings: &FitSettings,
    ) -> Result<(Self, MfSelection)> {
        Self::fit_with(nodes, inputs, low_scores, high_scores, settings, None)
    }

    /// As [`MultiFiModel::fit`], optionally forcing both kernel variants.
    pub fn fit_with(
        nodes: &Arc<NodeSet>,
        inputs: &[FunctionSample],
        low_scores: &DVector<f64>,
        high_scores: &DVector<f64>,
        settings: &FitSettings,
        force: Option<KernelVariant>,
    ) -> Result<(Self, MfSelection)> {
        settings.validate()?;
        if inputs.len() < 3 {
            return Err(Error::data(format!(
                "multi-fidelity fit needs at least 3 inputs, got {}",
                inputs.len()
            )));
        }
        check_inputs(inputs, low_scores, nodes)?;
        check_inputs(inputs, high_scores, nodes)?;

        let low_sel = select_kernel(nodes, inputs, low_scores, settings)?;
        let low_loocv = [low_sel.linear.loocv, low_sel.nonlinear.loocv];
        let low = match force {
            Some(KernelVariant::Linear) => low_sel.linear.model,
            Some(KernelVariant::Nonlinear) => low_sel.nonlinear.model,
            None => low_sel.into_chosen(),
        };

        let span = low_scores.max() - low_scores.min();
        let fixed_rho = if span <= 1e-12 * (1.0 + low_scores.amax()) {
            log::warn!("low-fidelity scores are constant; autoregressive coefficient fixed to 0");
            Some(0.0)
        } else {
            None
        };

        let mut fits = Vec::with_capacity(2);
        for variant in KernelVariant::ALL {
            let (rho, delta) = fit_delta(nodes, inputs, low_scores, high_scores, variant, settings, fixed_rho)?;
            let loocv = delta.loocv()?;
            fits.push((rho, delta, loocv));
        }
        let delta_loocv = [fits[0].2, fits[1].2];
        let pick = match force {
            Some(KernelVariant::Linear) => 0,
            Some(KernelVariant::Nonlinear) => 1,
            None if delta_loocv[0] <= delta_loocv[1] => 0,
            None => 1,
        };
        let (rho, delta, _) = fits.swap_remove(pick);
        let model = Self::from_parts(rho, low, delta)?;
        Ok((
            model,
            MfSelection {
                low: low_loocv,
                delta: delta_loocv,
            },
        ))
    }

    /// Assembles the joint conditioning blocks from two fitted GPs sharing
    /// training inputs. The GPs keep the nuggets they were fitted with.
    pub fn from_parts(rho: f64, low: FigpModel, delta: FigpModel) -> Result<Self> {
        if !rho.is_finite() || rho.abs() > RHO_BOUND {
            return Err(Error::arg(format!("autoregressive coefficient {rho} outside [-10, 10]")));
        }
        if low.inputs() != delta.inputs() {
            return Err(Error::arg("low-fidelity and discrepancy GPs must share training inputs"));
        }
        // With K_h = L_h L_hᵀ and K_δ = L_δ L_δᵀ the joint covariance factors
        // exactly as [[L_h, 0], [ρL_h, L_δ]], so no 2n factorization is needed.
        let n = low.inputs().len();
        let lh = low.factor().lower();
        let ld = delta.factor().lower();
        let mut joint = DMatrix::zeros(2 * n, 2 * n);
        joint.view_mut((0, 0), (n, n)).copy_from(&lh);
        joint.view_mut((n, 0), (n, n)).copy_from(&(&lh * rho));
        joint.view_mut((n, n), (n, n)).copy_from(&ld);

        let z_minus_mu = Self::centered_targets(rho, &low, &delta);
        let alpha = solve_lower(&joint, &z_minus_mu);
        let alpha = joint
            .tr_solve_lower_triangular(&alpha)
            .ok_or_else(|| Error::numeric("joint multi-fidelity factor is singular"))?;
        Ok(Self {
            rho,
            low,
            delta,
            joint,
            alpha,
        })
    }

    fn centered_targets(rho: f64, low: &FigpModel, delta: &FigpModel) -> DVector<f64> {
        let n = low.inputs().len();
        let high = Self::high_scores_of(rho, low, delta);
        let mut z = DVector::zeros(2 * n);
        for i in 0..n {
            z[i] = low.scores()[i] - low.mu();
            z[n + i] = high[i] - (rho * low.mu() + delta.mu());
        }
        z
    }

    fn high_scores_of(rho: f64, low: &FigpModel, delta: &FigpModel) -> DVector<f64> {
        delta.scores() + low.scores() * rho
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn low(&self) -> &FigpModel {
        &self.low
    }

    pub fn delta(&self) -> &FigpModel {
        &self.delta
    }

    /// High-fidelity training scores `f = ρh + δ`.
    pub fn high_scores(&self) -> DVector<f64> {
        Self::high_scores_of(self.rho, &self.low, &self.delta)
    }

    /// Prior mean of the high-fidelity score, `ρμ_h + μ_δ`.
    pub fn prior_mean(&self) -> f64 {
        self.rho * self.low.mu() + self.delta.mu()
    }

    pub fn predict(&self, g: &FunctionSample) -> Result<Prediction> {
        let (kh, khh) = self.low.cross(g)?;
        let (kd, kdd) = self.delta.cross(g)?;
        let n = kh.len();
        let rho = self.rho;
        let mut t = DVector::zeros(2 * n);
        for i in 0..n {
            t[i] = rho * kh[i];
            t[n + i] = rho * rho * kh[i] + kd[i];
        }
        let mean = self.prior_mean() + t.dot(&self.alpha);
        let prior = rho * rho * khh + kdd;
        let var = clip_variance(prior - solve_lower(&self.joint, &t).norm_squared());
        Ok(Prediction { mean, var })
    }
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    // diagonal is strictly positive by construction
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// Fits `(ρ, δ)` for one δ-kernel variant. Returns ρ and the δ-GP on `f − ρh`.
fn fit_delta(
    nodes: &Arc<NodeSet>,
    inputs: &[FunctionSample],
    low: &DVector<f64>,
    high: &DVector<f64>,
    variant: KernelVariant,
    settings: &FitSettings,
    fixed_rho: Option<f64>,
) -> Result<(f64, FigpModel)> {
    let n = inputs.len();
    let profile = |r: &DMatrix<f64>| -> Result<(f64, f64, f64, f64, f64)> {
        // returns (loglik, rho, mu, tau2, rel_nugget)
        let ones = DMatrix::from_element(n, 1, 1.0);
        if let Some(rho) = fixed_rho {
            let p = gls_profile(r, &ones, &(high - low * rho), settings.nugget)?;
            return Ok((p.loglik, rho, p.beta[0], p.tau2, p.rel_nugget));
        }
        let mut x = DMatrix::from_element(n, 2, 1.0);
        x.set_column(1, low);
        let p = gls_profile(r, &x, high, settings.nugget)?;
        let rho = p.beta[1];
        if rho.abs() <= RHO_BOUND {
            return Ok((p.loglik, rho, p.beta[0], p.tau2, p.rel_nugget));
        }
        let rho = rho.clamp(-RHO_BOUND, RHO_BOUND);
        let p = gls_profile(r, &ones, &(high - low * rho), settings.nugget)?;
        Ok((p.loglik, rho, p.beta[0], p.tau2, p.rel_nugget))
    };

    let best = search_correlation(variant, nodes, settings, |k| Ok(profile(&k.gram(inputs)?)?.0))?;
    let corr = correlation_kernel(variant, &best, nodes, settings.smoothness)?;
    let (_, rho, mu, tau2, rel) = profile(&corr.gram(inputs)?)?;
    let kernel = corr.with_tau2(tau2)?;
    let policy = NuggetPolicy {
        initial: rel,
        ..settings.nugget
    };
    let delta = FigpModel::with_escalation(kernel, mu, inputs.to_vec(), high - low * rho, policy)?;
    Ok((rho, delta))
}
