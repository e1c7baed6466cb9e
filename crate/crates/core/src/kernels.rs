//! Matérn kernels on the unit cube and the two functional-input kernels
//! built on top of them.
//!
//! Functional kernels are evaluated on realized samples: the integral kernel
//! `τ² ∫∫ g₁(x) g₂(x') Φ_θ(x,x') dx dx'` becomes the quadrature
//! `τ²/N² · g₁ᵀ Φ_θ g₂` over the shared node set, and the L₂ distance in the
//! nonlinear kernel uses the same node average.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, Jittered, NuggetPolicy};
use crate::quasirandom::{FunctionSample, NodeSet};

/// Half-integer Matérn smoothness with a closed-form radial profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl Default for Smoothness {
    fn default() -> Self {
        Smoothness::FiveHalves
    }
}

#[inline]
fn phi(r: f64, nu: Smoothness) -> f64 {
    match nu {
        Smoothness::Half => (-r).exp(),
        Smoothness::ThreeHalves => {
            let s = 3f64.sqrt() * r;
            (1.0 + s) * (-s).exp()
        }
        Smoothness::FiveHalves => {
            let s = 5f64.sqrt() * r;
            (1.0 + s + 5.0 / 3.0 * r * r) * (-s).exp()
        }
    }
}

/// Matérn radial profile φ(r); φ(0) = 1 and φ decreases to 0.
pub fn matern_phi(r: f64, nu: Smoothness) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::arg(format!("Matérn radius must be nonnegative, got {r}")));
    }
    Ok(phi(r, nu))
}

/// Anisotropic Matérn kernel `φ(‖θ ⊙ (x − x')‖₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaternKernel {
    lengthscales: Vec<f64>,
    smoothness: Smoothness,
}

impl MaternKernel {
    pub fn new(lengthscales: Vec<f64>, smoothness: Smoothness) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::arg("Matérn kernel needs at least one lengthscale"));
        }
        if lengthscales.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::arg(format!(
                "Matérn lengthscales must be positive and finite, got {lengthscales:?}"
            )));
        }
        Ok(Self {
            lengthscales,
            smoothness,
        })
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::arg(format!(
                "points of dimension {} and {} for a {}-dimensional kernel",
                x.len(),
                y.len(),
                self.dim()
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((a, b), t) in x.iter().zip(y).zip(&self.lengthscales) {
            let d = t * (a - b);
            r2 += d * d;
        }
        phi(r2.sqrt(), self.smoothness)
    }

    /// `N×N` matrix `Φ(x_i, x_j)` over a node set (no jitter).
    pub fn gram(&self, nodes: &NodeSet) -> Result<DMatrix<f64>> {
        self.check_nodes(nodes)?;
        let n = nodes.count();
        let mut m = DMatrix::from_element(n, n, 1.0);
        for i in 0..n {
            let xi = nodes.point(i);
            for j in 0..i {
                let v = self.eval_unchecked(xi, nodes.point(j));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Vector `(Φ(x, x_1), ..., Φ(x, x_N))`.
    pub fn cross(&self, x: &[f64], nodes: &NodeSet) -> Result<DVector<f64>> {
        self.check_nodes(nodes)?;
        if x.len() != self.dim() {
            return Err(Error::arg("point dimension does not match kernel"));
        }
        Ok(DVector::from_iterator(
            nodes.count(),
            nodes.iter().map(|p| self.eval_unchecked(x, p)),
        ))
    }

    fn check_nodes(&self, nodes: &NodeSet) -> Result<()> {
        if nodes.dim() != self.dim() {
            return Err(Error::arg(format!(
                "{}-dimensional nodes for a {}-dimensional kernel",
                nodes.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelVariant {
    Linear,
    Nonlinear,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 2] = [KernelVariant::Linear, KernelVariant::Nonlinear];

    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::Linear => "linear",
            KernelVariant::Nonlinear => "nonlinear",
        }
    }
}

impl std::str::FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelVariant::Linear),
            "nonlinear" => Ok(KernelVariant::Nonlinear),
            other => Err(Error::Config(format!("unknown kernel variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelShape {
    /// Integral kernel with a Matérn base on Ω.
    Linear(MaternKernel),
    /// `φ(γ ‖g₁ − g₂‖)` with decay `γ`.
    Nonlinear { gamma: f64, smoothness: Smoothness },
}

/// A kernel between functional inputs realized on a fixed node set.
#[derive(Debug, Clone)]
pub struct FunctionalKernel {
    tau2: f64,
    shape: KernelShape,
    nodes: Arc<NodeSet>,
    // Φ_θ over the nodes, linear variant only
    base_gram: Option<Arc<DMatrix<f64>>>,
}

impl FunctionalKernel {
    pub fn linear(tau2: f64, base: MaternKernel, nodes: Arc<NodeSet>) -> Result<Self> {
        check_tau2(tau2)?;
        let gram = base.gram(&nodes)?;
        Ok(Self {
            tau2,
            shape: KernelShape::Linear(base),
            nodes,
            base_gram: Some(Arc::new(gram)),
        })
    }

    pub fn nonlinear(tau2: f64, gamma: f64, smoothness: Smoothness, nodes: Arc<NodeSet>) -> Result<Self> {
        check_tau2(tau2)?;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::arg(format!("decay must be positive, got {gamma}")));
        }
        Ok(Self {
            tau2,
            shape: KernelShape::Nonlinear { gamma, smoothness },
            nodes,
            base_gram: None,
        })
    }

    pub fn variant(&self) -> KernelVariant {
        match self.shape {
            KernelShape::Linear(_) => KernelVariant::Linear,
            KernelShape::Nonlinear { .. } => KernelVariant::Nonlinear,
        }
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn nodes(&self) -> &Arc<NodeSet> {
        &self.nodes
    }

    /// Same kernel with a different scale; shares the cached base Gram.
    pub fn with_tau2(&self, tau2: f64) -> Result<Self> {
        check_tau2(tau2)?;
        Ok(Self {
            tau2,
            ..self.clone()
        })
    }

    fn check_sample(&self, g: &FunctionSample) -> Result<()> {
        if g.node_set() != self.nodes.id() || g.len() != self.nodes.count() {
            return Err(Error::arg(
                "function sample was realized on a different node set than the kernel",
            ));
        }
        Ok(())
    }

    #[inline]
    fn linear_value(&self, g1_w2: f64, g2_w1: f64) -> f64 {
        let n = self.nodes.count() as f64;
        self.tau2 * (0.5 * (g1_w2 + g2_w1)) / (n * n)
    }

    #[inline]
    fn nonlinear_value(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let KernelShape::Nonlinear { gamma, smoothness } = self.shape else {
            unreachable!("nonlinear_value on a linear kernel")
        };
        let d2 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            / self.nodes.count() as f64;
        self.tau2 * phi(gamma * d2.sqrt(), smoothness)
    }

    /// `K(g₁, g₂)`; exactly symmetric in its arguments.
    pub fn eval(&self, g1: &FunctionSample, g2: &FunctionSample) -> Result<f64> {
        self.check_sample(g1)?;
        self.check_sample(g2)?;
        let v = match &self.base_gram {
            Some(phi) => {
                let w1 = phi.as_ref() * g1.values();
                let w2 = phi.as_ref() * g2.values();
                self.linear_value(g1.values().dot(&w2), g2.values().dot(&w1))
            }
            None => self.nonlinear_value(g1.values(), g2.values()),
        };
        finite(v)
    }

    /// Caches per-sample work so that repeated cross-covariances against the
    /// same training set cost O(nN) after one O(N²) product.
    pub fn prepare(&self, gs: &[FunctionSample]) -> Result<PreparedInputs> {
        for g in gs {
            self.check_sample(g)?;
        }
        let values: Vec<DVector<f64>> = gs.iter().map(|g| g.values().clone()).collect();
        let weighted = match &self.base_gram {
            Some(phi) => values.iter().map(|v| phi.as_ref() * v).collect(),
            None => Vec::new(),
        };
        Ok(PreparedInputs { values, weighted })
    }

    /// Gram matrix over the prepared samples, without jitter.
    pub fn gram_prepared(&self, p: &PreparedInputs) -> Result<DMatrix<f64>> {
        let n = p.values.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = if self.base_gram.is_some() {
                    self.linear_value(p.values[i].dot(&p.weighted[j]), p.values[j].dot(&p.weighted[i]))
                } else {
                    self.nonlinear_value(&p.values[i], &p.values[j])
                };
                let v = finite(v)?;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    pub fn gram(&self, gs: &[FunctionSample]) -> Result<DMatrix<f64>> {
        if gs.is_empty() {
            return Err(Error::arg("Gram matrix of an empty sample list"));
        }
        self.gram_prepared(&self.prepare(gs)?)
    }

    /// Gram matrix plus its jittered factorization; the nugget is relative to τ².
    pub fn factor_gram(&self, gs: &[FunctionSample], policy: NuggetPolicy) -> Result<(DMatrix<f64>, Jittered)> {
        let k = self.gram(gs)?;
        let f = cholesky_jittered(&k, self.tau2, policy)?;
        Ok((k, f))
    }

    /// Cross-covariances `(K(g, g_1), ..., K(g, g_n))` and `K(g, g)`.
    pub fn cross(&self, p: &PreparedInputs, g: &FunctionSample) -> Result<(DVector<f64>, f64)> {
        self.check_sample(g)?;
        let gv = g.values();
        let n = p.values.len();
        let (k, kgg) = match &self.base_gram {
            Some(phi) => {
                let w = phi.as_ref() * gv;
                let k = DVector::from_iterator(
                    n,
                    (0..n).map(|j| self.linear_value(gv.dot(&p.weighted[j]), p.values[j].dot(&w))),
                );
                let gw = gv.dot(&w);
                (k, self.linear_value(gw, gw))
            }
            None => (
                DVector::from_iterator(n, p.values.iter().map(|v| self.nonlinear_value(gv, v))),
                self.tau2,
            ),
        };
        if k.iter().any(|v| !v.is_finite()) || !kgg.is_finite() {
            return Err(Error::numeric("non-finite kernel value"));
        }
        Ok((k, kgg))
    }
}

/// Training samples with cached kernel-specific products.
#[derive(Debug, Clone)]
pub struct PreparedInputs {
    values: Vec<DVector<f64>>,
    weighted: Vec<DVector<f64>>,
}

impl PreparedInputs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_tau2(tau2: f64) -> Result<()> {
    if !(tau2.is_finite() && tau2 > 0.0) {
        return Err(Error::arg(format!("kernel scale must be positive, got {tau2}")));
    }
    Ok(())
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric("non-finite kernel value"))
    }
}
