//! Uncentered principal-component reduction of simulator images.
//!
//! Components are the leading left singular vectors of the raw `m×n` image
//! matrix (no mean removal), so that scores are plain projections `uᵀy` and
//! images are rebuilt as `Σ f_l u_l`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    components: DMatrix<f64>,
    explained: Vec<f64>,
    threshold: f64,
}

impl PcaBasis {
    /// Fits the smallest basis whose cumulative squared singular values reach
    /// `threshold` of the total energy `‖Y‖²_F`.
    pub fn fit(y: &DMatrix<f64>, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        let (m, n) = y.shape();
        if m < 1 || n < 2 {
            return Err(Error::data(format!("PCA needs m >= 1 and n >= 2, got {m}x{n}")));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("image matrix contains non-finite values"));
        }
        let svd = y.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let energies: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
        let total: f64 = energies.iter().sum();
        if !(total > 0.0) {
            return Err(Error::data("image matrix is identically zero"));
        }

        let mut cumulative = 0.0;
        let mut keep = 0;
        for e in &energies {
            cumulative += e;
            keep += 1;
            if cumulative / total >= threshold {
                break;
            }
        }

        let mut components = DMatrix::zeros(m, keep);
        for (c, &i) in order.iter().take(keep).enumerate() {
            let mut col = u.column(i).into_owned();
            let pivot = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
            if pivot < 0.0 {
                col.neg_mut();
            }
            components.set_column(c, &col);
        }
        let explained = energies.iter().take(keep).map(|e| e / total).collect();
        Ok(Self {
            components,
            explained,
            threshold,
        })
    }

    /// Rebuilds a basis from stored parts, checking orthonormality.
    pub fn from_parts(components: DMatrix<f64>, explained: Vec<f64>, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        if explained.len() != components.ncols() {
            return Err(Error::data("explained-variance length does not match component count"));
        }
        let gram = components.transpose() * &components;
        let err = (gram - DMatrix::identity(components.ncols(), components.ncols())).abs().max();
        if err > 1e-8 {
            return Err(Error::data(format!("stored components are not orthonormal (error {err:e})")));
        }
        Ok(Self {
            components,
            explained,
            threshold,
        })
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn component(&self, l: usize) -> DVector<f64> {
        self.components.column(l).into_owned()
    }

    pub fn explained(&self) -> &[f64] {
        &self.explained
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Image length `m`.
    pub fn image_len(&self) -> usize {
        self.components.nrows()
    }

    /// Number of retained components `L`.
    pub fn len(&self) -> usize {
        self.components.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.components.ncols() == 0
    }

    pub fn scores(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.image_len() {
            return Err(Error::arg(format!(
                "image has length {} but the basis expects {}",
                y.len(),
                self.image_len()
            )));
        }
        Ok(self.components.tr_mul(y))
    }

    /// Scores of every column of an `m×n` image matrix, as an `L×n` matrix.
    pub fn scores_matrix(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.image_len() {
            return Err(Error::arg("image matrix row count does not match the basis"));
        }
        Ok(self.components.tr_mul(y))
    }

    pub fn reconstruct(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.len() {
            return Err(Error::arg(format!(
                "{} scores for a basis of {} components",
                s.len(),
                self.len()
            )));
        }
        Ok(&self.components * s)
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "explained-variance threshold must be in (0,1), got {threshold}"
        )));
    }
    Ok(())
}
