//! On-disk formats: training data, observations, ground truth, fitted
//! emulators and sampler outputs.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::emulator::{ComponentModel, Emulator};
use crate::error::{Error, Result};
use crate::expr::FunctionExpr;
use crate::figp::FigpModel;
use crate::inverse::{Field, PosteriorChain};
use crate::kernels::{FunctionalKernel, KernelVariant, MaternKernel, Smoothness};
use crate::multifidelity::MultiFiModel;
use crate::quasirandom::{realize, sobol, FunctionSample, NodeSet, NodeSetId};
use crate::reduction::PcaBasis;

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One training input, given symbolically or by its node values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, try_from = "RawInputSpec")]
pub enum InputSpec {
    Expr { expr: FunctionExpr },
    Values { values: Vec<f64> },
}

// Going through a plain struct keeps expression syntax errors visible instead
// of collapsing them into "no variant matched".
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInputSpec {
    expr: Option<String>,
    values: Option<Vec<f64>>,
}

impl TryFrom<RawInputSpec> for InputSpec {
    type Error = Error;

    fn try_from(raw: RawInputSpec) -> Result<Self> {
        match (raw.expr, raw.values) {
            (Some(text), None) => Ok(InputSpec::Expr {
                expr: FunctionExpr::parse(&text)?,
            }),
            (None, Some(values)) => Ok(InputSpec::Values { values }),
            _ => Err(Error::data("each input needs exactly one of \"expr\" or \"values\"")),
        }
    }
}

/// Simulator images: either a list of `n` columns of length `m`, or one flat
/// column-major array of length `m·n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Images {
    Columns(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl Images {
    pub fn from_matrix(y: &DMatrix<f64>) -> Self {
        Images::Columns(y.column_iter().map(|c| c.iter().copied().collect()).collect())
    }

    pub fn to_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            Images::Columns(cols) => {
                if cols.len() != n {
                    return Err(Error::data(format!("{} output columns for {n} inputs", cols.len())));
                }
                let m = cols.first().map_or(0, Vec::len);
                if m == 0 || cols.iter().any(|c| c.len() != m) {
                    return Err(Error::data("output columns must be nonempty and of equal length"));
                }
                Ok(DMatrix::from_fn(m, n, |i, j| cols[j][i]))
            }
            Images::Flat(v) => {
                if n == 0 || v.is_empty() || v.len() % n != 0 {
                    return Err(Error::data(format!("flat output of length {} is not divisible by {n}", v.len())));
                }
                Ok(DMatrix::from_column_slice(v.len() / n, n, v))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub dim: usize,
    #[serde(rename = "nodes_N")]
    pub nodes_n: usize,
    pub inputs: Vec<InputSpec>,
    pub outputs_high: Images,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs_low: Option<Images>,
}

/// Training data resolved against its node set.
#[derive(Debug, Clone)]
pub struct ResolvedTraining {
    pub nodes: Arc<NodeSet>,
    pub inputs: Vec<FunctionSample>,
    pub y_high: DMatrix<f64>,
    pub y_low: Option<DMatrix<f64>>,
}

impl TrainingData {
    pub fn resolve(&self) -> Result<ResolvedTraining> {
        let nodes = Arc::new(sobol(self.dim, self.nodes_n)?);
        let inputs = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, spec)| match spec {
                InputSpec::Expr { expr } => realize(expr, &nodes),
                InputSpec::Values { values } => FunctionSample::from_values(values.clone(), &nodes)
                    .map_err(|e| Error::Data(format!("input {i}: {e}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let n = inputs.len();
        let y_high = self.outputs_high.to_matrix(n)?;
        let y_low = self.outputs_low.as_ref().map(|y| y.to_matrix(n)).transpose()?;
        if let Some(low) = &y_low {
            if low.shape() != y_high.shape() {
                return Err(Error::data("low- and high-fidelity outputs differ in shape"));
            }
        }
        for y in std::iter::once(&y_high).chain(y_low.as_ref()) {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::data("training outputs contain non-finite values"));
            }
        }
        Ok(ResolvedTraining {
            nodes,
            inputs,
            y_high,
            y_low,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y_p: Vec<f64>,
}

/// Ground truth for scoring a recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub g: FunctionExpr,
    pub y_s: Vec<f64>,
}

// ---- model file ----

const MODEL_FORMAT: &str = "figp-inverse-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodesRecord {
    dim: usize,
    count: usize,
    id: NodeSetId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BasisRecord {
    threshold: f64,
    explained: Vec<f64>,
    /// One entry per component, each of length `m`.
    components: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GpRecord {
    variant: KernelVariant,
    smoothness: Smoothness,
    /// Matérn lengthscales (linear) or the decay γ (nonlinear).
    params: Vec<f64>,
    tau2: f64,
    mu: f64,
    nugget: f64,
    scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ComponentRecord {
    Single { gp: GpRecord },
    Multi { rho: f64, low: GpRecord, delta: GpRecord },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    nodes: NodesRecord,
    basis: BasisRecord,
    /// Training inputs as node values.
    inputs: Vec<Vec<f64>>,
    components: Vec<ComponentRecord>,
}

fn gp_record(m: &FigpModel) -> GpRecord {
    let smoothness = match m.kernel().shape() {
        crate::kernels::KernelShape::Linear(k) => k.smoothness(),
        crate::kernels::KernelShape::Nonlinear { smoothness, .. } => *smoothness,
    };
    GpRecord {
        variant: m.variant(),
        smoothness,
        params: m.correlation_params(),
        tau2: m.tau2(),
        mu: m.mu(),
        nugget: m.nugget(),
        scores: m.scores().iter().copied().collect(),
    }
}

fn gp_from_record(r: &GpRecord, nodes: &Arc<NodeSet>, inputs: &[FunctionSample]) -> Result<FigpModel> {
    let kernel = match r.variant {
        KernelVariant::Linear => {
            FunctionalKernel::linear(r.tau2, MaternKernel::new(r.params.clone(), r.smoothness)?, nodes.clone())?
        }
        KernelVariant::Nonlinear => {
            let gamma = *r
                .params
                .first()
                .filter(|_| r.params.len() == 1)
                .ok_or_else(|| Error::data("nonlinear kernel needs exactly one decay parameter"))?;
            FunctionalKernel::nonlinear(r.tau2, gamma, r.smoothness, nodes.clone())?
        }
    };
    FigpModel::from_parts(kernel, r.mu, r.nugget, inputs.to_vec(), DVector::from_vec(r.scores.clone()))
}

impl Emulator {
    pub fn to_json(&self) -> Result<String> {
        let basis = self.basis();
        let inputs = self.training_inputs();
        let record = ModelRecord {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            nodes: NodesRecord {
                dim: self.nodes().dim(),
                count: self.nodes().count(),
                id: self.nodes().id(),
            },
            basis: BasisRecord {
                threshold: basis.threshold(),
                explained: basis.explained().to_vec(),
                components: basis
                    .components()
                    .column_iter()
                    .map(|c| c.iter().copied().collect())
                    .collect(),
            },
            inputs: inputs.iter().map(|g| g.values().iter().copied().collect()).collect(),
            components: self
                .components()
                .iter()
                .map(|c| match c {
                    ComponentModel::Single(m) => ComponentRecord::Single { gp: gp_record(m) },
                    ComponentModel::Multi(m) => ComponentRecord::Multi {
                        rho: m.rho(),
                        low: gp_record(m.low()),
                        delta: gp_record(m.delta()),
                    },
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ModelRecord = serde_json::from_str(text).map_err(|e| Error::Data(format!("model file: {e}")))?;
        if r.format != MODEL_FORMAT || r.version != MODEL_VERSION {
            return Err(Error::data(format!(
                "unsupported model file format '{}' version {}",
                r.format, r.version
            )));
        }
        let nodes = Arc::new(sobol(r.nodes.dim, r.nodes.count)?);
        if nodes.id() != r.nodes.id {
            return Err(Error::data("model node-set hash does not match the regenerated Sobol nodes"));
        }
        let m = r.basis.components.first().map_or(0, Vec::len);
        if r.basis.components.iter().any(|c| c.len() != m) {
            return Err(Error::data("basis components differ in length"));
        }
        let u = DMatrix::from_fn(m, r.basis.components.len(), |i, j| r.basis.components[j][i]);
        let basis = PcaBasis::from_parts(u, r.basis.explained, r.basis.threshold)?;
        let inputs = r
            .inputs
            .into_iter()
            .map(|v| FunctionSample::from_values(v, &nodes))
            .collect::<Result<Vec<_>>>()?;
        let components = r
            .components
            .iter()
            .map(|c| match c {
                ComponentRecord::Single { gp } => Ok(ComponentModel::Single(gp_from_record(gp, &nodes, &inputs)?)),
                ComponentRecord::Multi { rho, low, delta } => Ok(ComponentModel::Multi(MultiFiModel::from_parts(
                    *rho,
                    gp_from_record(low, &nodes, &inputs)?,
                    gp_from_record(delta, &nodes, &inputs)?,
                )?)),
            })
            .collect::<Result<Vec<_>>>()?;
        Emulator::from_parts(nodes, basis, components)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_json(&text)
    }
}

// ---- CSV exports ----

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("CSV: {other:?}")),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// One row per retained draw: `iter,sigma_e2,tau_g2,eta_1..eta_d,g_1..g_N`.
pub fn write_chain_csv<W: Write>(out: W, chain: &PosteriorChain) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (d, n) = (chain.eta.ncols(), chain.g.ncols());
    let mut header = vec!["iter".to_string(), "sigma_e2".into(), "tau_g2".into()];
    header.extend((1..=d).map(|j| format!("eta_{j}")));
    header.extend((1..=n).map(|i| format!("g_{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for k in 0..chain.len() {
        let mut row = vec![chain.iterations[k].to_string(), fmt(chain.sigma_e2[k]), fmt(chain.tau_g2[k])];
        row.extend(chain.eta.row(k).iter().map(|v| fmt(*v)));
        row.extend(chain.g.row(k).iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `x1..xd,mean,variance` per grid point.
pub fn write_grid_csv<W: Write>(out: W, points: &[f64], dim: usize, field: &Field) -> Result<()> {
    if points.len() != dim * field.mean.len() {
        return Err(Error::arg("grid and field sizes differ"));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    header.extend(["mean".into(), "variance".into()]);
    w.write_record(&header).map_err(csv_error)?;
    for (i, x) in points.chunks_exact(dim).enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(fmt(field.mean[i]));
        row.push(fmt(field.var[i]));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `index,mean,variance` per pixel.
pub fn write_image_csv<W: Write>(out: W, field: &Field) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "mean", "variance"]).map_err(csv_error)?;
    for i in 0..field.mean.len() {
        w.write_record([i.to_string(), fmt(field.mean[i]), fmt(field.var[i])])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a grid or image CSV back: leading coordinate columns (or the pixel
/// index) followed by `mean,variance`.
pub fn read_field_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Field)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = r.headers().map_err(csv_error)?.clone();
    let k = headers.len();
    if k < 3 || &headers[k - 2] != "mean" || &headers[k - 1] != "variance" {
        return Err(Error::data(format!("{}: expected trailing mean,variance columns", path.display())));
    }
    let mut coords = Vec::new();
    let (mut mean, mut var) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("{} row {}: {e}", path.display(), line + 2)))?;
        if vals.len() != k {
            return Err(Error::data(format!("{} row {}: wrong column count", path.display(), line + 2)));
        }
        coords.push(vals[..k - 2].to_vec());
        mean.push(vals[k - 2]);
        var.push(vals[k - 1]);
    }
    Ok((
        coords,
        Field {
            mean: DVector::from_vec(mean),
            var: DVector::from_vec(var),
        },
    ))
}
