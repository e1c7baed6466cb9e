//! Full image emulator: a PCA basis of the high-fidelity training images and
//! one score model per retained component.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::figp::{select_kernel, FigpModel, FitSettings, Prediction};
use crate::kernels::KernelVariant;
use crate::multifidelity::MultiFiModel;
use crate::quasirandom::{FunctionSample, NodeSet};
use crate::reduction::PcaBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    #[default]
    Single,
    Multi,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Single => "single",
            Fidelity::Multi => "multi",
        })
    }
}

impl FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Fidelity::Single),
            "multi" => Ok(Fidelity::Multi),
            _ => Err(Error::Config(format!("fidelity must be 'single' or 'multi', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Cumulative explained-variance threshold for the PCA basis.
    pub threshold: f64,
    /// Forces one kernel variant for every component instead of LOOCV selection.
    pub kernel: Option<KernelVariant>,
    pub fidelity: Fidelity,
    pub settings: FitSettings,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            threshold: 0.99,
            kernel: None,
            fidelity: Fidelity::Single,
            settings: FitSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ComponentModel {
    Single(FigpModel),
    Multi(MultiFiModel),
}

impl ComponentModel {
    pub fn predict(&self, g: &FunctionSample) -> Result<Prediction> {
        match self {
            ComponentModel::Single(m) => m.predict(g),
            ComponentModel::Multi(m) => m.predict(g),
        }
    }

    /// Kernel of the high-fidelity path: the FIGP itself, or the discrepancy GP.
    pub fn variant(&self) -> KernelVariant {
        match self {
            ComponentModel::Single(m) => m.variant(),
            ComponentModel::Multi(m) => m.delta().variant(),
        }
    }
}

/// One row of the selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub component: usize,
    pub explained: f64,
    /// LOOCV of the linear and nonlinear kernels. For multi-fidelity these
    /// refer to the discrepancy GP.
    pub loocv_linear: f64,
    pub loocv_nonlinear: f64,
    pub chosen: KernelVariant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low_fidelity: Option<LowFidelityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowFidelityReport {
    pub rho: f64,
    pub loocv_linear: f64,
    pub loocv_nonlinear: f64,
    pub chosen: KernelVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fidelity: Fidelity,
    pub components: Vec<ComponentReport>,
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>4} {:>10} {:>14} {:>14} {:>10}", "l", "explained", "LOOCV linear", "LOOCV nonlin", "chosen")?;
        for c in &self.components {
            writeln!(
                f,
                "{:>4} {:>10.6} {:>14.6e} {:>14.6e} {:>10}",
                c.component + 1,
                c.explained,
                c.loocv_linear,
                c.loocv_nonlinear,
                c.chosen.name()
            )?;
            if let Some(lo) = &c.low_fidelity {
                writeln!(
                    f,
                    "{:>4} {:>10} {:>14.6e} {:>14.6e} {:>10}  rho = {:.4}",
                    "",
                    "low",
                    lo.loocv_linear,
                    lo.loocv_nonlinear,
                    lo.chosen.name(),
                    lo.rho
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Emulator {
    nodes: Arc<NodeSet>,
    basis: PcaBasis,
    components: Vec<ComponentModel>,
}

impl Emulator {
    /// Fits the basis to `y_high` (m×n, one column per input) and a score model
    /// per component. Multi-fidelity projects `y_low` onto the same basis.
    pub fn fit(
        nodes: Arc<NodeSet>,
        inputs: &[FunctionSample],
        y_high: &DMatrix<f64>,
        y_low: Option<&DMatrix<f64>>,
        options: &FitOptions,
    ) -> Result<(Self, FitReport)> {
        options.settings.validate()?;
        if y_high.ncols() != inputs.len() {
            return Err(Error::data(format!(
                "{} output columns for {} inputs",
                y_high.ncols(),
                inputs.len()
            )));
        }
        let basis = PcaBasis::fit(y_high, options.threshold)?;
        let high = basis.scores_matrix(y_high)?;
        let low = match (options.fidelity, y_low) {
            (Fidelity::Single, _) => None,
            (Fidelity::Multi, None) => {
                return Err(Error::Config("multi-fidelity fit requires low-fidelity outputs".into()))
            }
            (Fidelity::Multi, Some(y)) => {
                if y.shape() != y_high.shape() {
                    return Err(Error::data("low- and high-fidelity output shapes differ"));
                }
                Some(basis.scores_matrix(y)?)
            }
        };

        let mut components = Vec::with_capacity(basis.len());
        let mut rows = Vec::with_capacity(basis.len());
        for l in 0..basis.len() {
            let f = high.row(l).transpose();
            let tag = |e: Error| match e {
                Error::Fit(msg) => Error::Fit(format!("component {}: {msg}", l + 1)),
                Error::Numeric(msg) => Error::Numeric(format!("component {}: {msg}", l + 1)),
                other => other,
            };
            let (model, row) = match &low {
                None => {
                    let sel = select_kernel(&nodes, inputs, &f, &options.settings).map_err(tag)?;
                    let chosen = options.kernel.unwrap_or(sel.chosen);
                    let row = ComponentReport {
                        component: l,
                        explained: basis.explained()[l],
                        loocv_linear: sel.linear.loocv,
                        loocv_nonlinear: sel.nonlinear.loocv,
                        chosen,
                        low_fidelity: None,
                    };
                    let model = match chosen {
                        KernelVariant::Linear => sel.linear.model,
                        KernelVariant::Nonlinear => sel.nonlinear.model,
                    };
                    (ComponentModel::Single(model), row)
                }
                Some(low) => {
                    let h = low.row(l).transpose();
                    let (model, sel) =
                        MultiFiModel::fit_with(&nodes, inputs, &h, &f, &options.settings, options.kernel)
                            .map_err(tag)?;
                    let row = ComponentReport {
                        component: l,
                        explained: basis.explained()[l],
                        loocv_linear: sel.delta[0],
                        loocv_nonlinear: sel.delta[1],
                        chosen: model.delta().variant(),
                        low_fidelity: Some(LowFidelityReport {
                            rho: model.rho(),
                            loocv_linear: sel.low[0],
                            loocv_nonlinear: sel.low[1],
                            chosen: model.low().variant(),
                        }),
                    };
                    (ComponentModel::Multi(model), row)
                }
            };
            log::info!("component {}: {} kernel", l + 1, row.chosen.name());
            components.push(model);
            rows.push(row);
        }
        let report = FitReport {
            fidelity: options.fidelity,
            components: rows,
        };
        Ok((Self::from_parts(nodes, basis, components)?, report))
    }

    pub fn from_parts(nodes: Arc<NodeSet>, basis: PcaBasis, components: Vec<ComponentModel>) -> Result<Self> {
        if components.len() != basis.len() {
            return Err(Error::data(format!(
                "{} component models for a basis of {}",
                components.len(),
                basis.len()
            )));
        }
        Ok(Self {
            nodes,
            basis,
            components,
        })
    }

    pub fn nodes(&self) -> &Arc<NodeSet> {
        &self.nodes
    }

    pub fn basis(&self) -> &PcaBasis {
        &self.basis
    }

    pub fn components(&self) -> &[ComponentModel] {
        &self.components
    }

    /// Functional inputs the score models were trained on.
    pub fn training_inputs(&self) -> &[FunctionSample] {
        match self.components.first() {
            Some(ComponentModel::Single(m)) => m.inputs(),
            Some(ComponentModel::Multi(m)) => m.low().inputs(),
            None => &[],
        }
    }

    pub fn fidelity(&self) -> Fidelity {
        match self.components.first() {
            Some(ComponentModel::Multi(_)) => Fidelity::Multi,
            _ => Fidelity::Single,
        }
    }

    /// Predictive means and variances of all component scores at `g`.
    pub fn predict_scores(&self, g: &FunctionSample) -> Result<(DVector<f64>, DVector<f64>)> {
        let l = self.components.len();
        let mut mean = DVector::zeros(l);
        let mut var = DVector::zeros(l);
        for (i, c) in self.components.iter().enumerate() {
            let p = c.predict(g)?;
            mean[i] = p.mean;
            var[i] = p.var;
        }
        Ok((mean, var))
    }

    /// Predictive mean image `Σ m_l u_l` and pixelwise variance `Σ v_l u_l²`.
    pub fn predict_image(&self, g: &FunctionSample) -> Result<(DVector<f64>, DVector<f64>)> {
        let (m, v) = self.predict_scores(g)?;
        let u = self.basis.components();
        let mean = u * &m;
        let var = u.map(|x| x * x) * &v;
        Ok((mean, var))
    }
}
