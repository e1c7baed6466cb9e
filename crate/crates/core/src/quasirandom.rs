//! Sobol point sets on the unit cube and realization of functional inputs on them.
//!
//! Direction numbers come from the Joe–Kuo `new-joe-kuo-6.21201` table
//! (first 64 dimensions). Points are produced in Gray-code order, the same
//! order as SciPy's unscrambled `qmc.Sobol`, with the initial all-zeros point
//! skipped.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr::FunctionExpr;
use crate::sobol_table::{JOE_KUO, MAX_DIM};

const BITS: usize = 32;
pub const MAX_COUNT: usize = 1 << 20;

/// Identity of a node set: a truncated SHA-256 of its dimension, size and
/// coordinates. Used to refuse mixing samples realized on different grids.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeSetId([u8; 16]);

impl NodeSetId {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 32 || !s.is_ascii() {
            return Err(Error::data(format!("malformed node-set hash '{s}'")));
        }
        let mut out = [0u8; 16];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::data(format!("malformed node-set hash '{s}'")))?;
        }
        Ok(Self(out))
    }
}

impl fmt::Debug for NodeSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeSetId({})", self.to_hex())
    }
}

impl Serialize for NodeSetId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for NodeSetId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        NodeSetId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// `count` points in `[0,1)^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    dim: usize,
    count: usize,
    points: Vec<f64>,
    id: NodeSetId,
}

impl NodeSet {
    /// Builds a node set from explicit points. Coordinates must lie in `[0,1]`.
    pub fn from_points(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::arg("node coordinates must form a nonempty count x dim matrix"));
        }
        if points.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("node coordinates must lie in the unit cube"));
        }
        let count = points.len() / dim;
        let id = hash_points(dim, count, &points);
        Ok(Self {
            dim,
            count,
            points,
            id,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn id(&self) -> NodeSetId {
        self.id
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }
}

fn hash_points(dim: usize, count: usize, points: &[f64]) -> NodeSetId {
    let mut h = Sha256::new();
    h.update((dim as u64).to_le_bytes());
    h.update((count as u64).to_le_bytes());
    for v in points {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    NodeSetId(out)
}

fn direction_numbers(dim: usize) -> Vec<[u32; BITS]> {
    let mut dirs = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1u32 << (BITS - 1 - k);
    }
    dirs.push(first);
    for &(s, a, m_init) in JOE_KUO.iter().take(dim.saturating_sub(1)) {
        let s = s as usize;
        let mut m = [0u32; BITS];
        m[..s].copy_from_slice(m_init);
        for k in s..BITS {
            let mut mk = m[k - s] ^ (m[k - s] << s);
            for i in 1..s {
                if (a >> (s - 1 - i)) & 1 == 1 {
                    mk ^= m[k - i] << i;
                }
            }
            m[k] = mk;
        }
        let mut v = [0u32; BITS];
        for k in 0..BITS {
            v[k] = m[k] << (BITS - 1 - k);
        }
        dirs.push(v);
    }
    dirs
}

/// First `count` nonzero points of the `dim`-dimensional Sobol sequence.
pub fn sobol(dim: usize, count: usize) -> Result<NodeSet> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Config(format!(
            "Sobol dimension must be in 1..={MAX_DIM}, got {dim}"
        )));
    }
    if count == 0 || count > MAX_COUNT {
        return Err(Error::Config(format!(
            "Sobol point count must be in 1..={MAX_COUNT}, got {count}"
        )));
    }
    let dirs = direction_numbers(dim);
    let mut state = vec![0u32; dim];
    let mut points = Vec::with_capacity(count * dim);
    let scale = 1.0 / (1u64 << BITS) as f64;
    // index i here is the Gray-code step producing point i+1 of the sequence
    for i in 0..count as u32 {
        let c = (!i).trailing_zeros() as usize;
        for (x, v) in state.iter_mut().zip(&dirs) {
            *x ^= v[c];
            points.push(*x as f64 * scale);
        }
    }
    NodeSet::from_points(dim, points)
}

/// A functional input realized on a node set: `(g(x_1), ..., g(x_N))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSample {
    values: DVector<f64>,
    nodes: NodeSetId,
}

impl FunctionSample {
    pub fn from_values(values: Vec<f64>, nodes: &NodeSet) -> Result<Self> {
        Self::with_id(DVector::from_vec(values), nodes.count(), nodes.id())
    }

    pub(crate) fn with_id(values: DVector<f64>, count: usize, nodes: NodeSetId) -> Result<Self> {
        if values.len() != count {
            return Err(Error::arg(format!(
                "sample has {} values but the node set has {count} nodes",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("function sample contains non-finite values"));
        }
        Ok(Self { values, nodes })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn node_set(&self) -> NodeSetId {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            values: &self.values * a,
            nodes: self.nodes,
        }
    }
}

/// Evaluates `expr` at every node.
pub fn realize(expr: &FunctionExpr, nodes: &NodeSet) -> Result<FunctionSample> {
    if expr.arity() > nodes.dim() {
        return Err(Error::arg(format!(
            "expression '{}' uses {} coordinates but nodes are {}-dimensional",
            expr.source(),
            expr.arity(),
            nodes.dim()
        )));
    }
    let values = nodes
        .iter()
        .enumerate()
        .map(|(i, x)| expr.eval_at(x, i))
        .collect::<Result<Vec<_>>>()?;
    FunctionSample::from_values(values, nodes)
}
