//! Static local model networks.
//!
//! A network blends `K` local affine models with normalized, axis-orthogonal
//! Gaussian validity functions. The linear inputs and the validity inputs are
//! separate vectors so that dynamic models can keep strongly correlated
//! delayed signals out of the partitioning space.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Axis-orthogonal Gaussian over the validity-input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityFunction {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl ValidityFunction {
    pub fn new(centers: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        check_len("validity widths", widths.len(), centers.len())?;
        if let Some(w) = widths.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!(
                "validity widths must be finite and positive, got {w}"
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("validity centers must be finite".into()));
        }
        Ok(Self { centers, widths })
    }

    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    /// Logarithm of the unnormalized Gaussian membership.
    pub fn log_membership(&self, x_val: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.widths)
            .zip(x_val)
            .map(|((c, s), x)| {
                let z = (x - c) / s;
                -0.5 * z * z
            })
            .sum()
    }
}

/// Affine local model `offset + gains · x_lin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLinearModel {
    pub offset: f64,
    pub gains: Vec<f64>,
}

impl LocalLinearModel {
    pub fn new(offset: f64, gains: Vec<f64>) -> Self {
        Self { offset, gains }
    }

    pub fn predict(&self, x_lin: &[f64]) -> f64 {
        self.offset
            + self
                .gains
                .iter()
                .zip(x_lin)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModelNetwork {
    models: Vec<LocalLinearModel>,
    validities: Vec<ValidityFunction>,
    lin_dim: usize,
    val_dim: usize,
}

impl LocalModelNetwork {
    pub fn new(
        models: Vec<LocalLinearModel>,
        validities: Vec<ValidityFunction>,
        lin_dim: usize,
        val_dim: usize,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config(
                "a network needs at least one local model".into(),
            ));
        }
        check_len("validity functions", validities.len(), models.len())?;
        for m in &models {
            check_len("local model gains", m.gains.len(), lin_dim)?;
            if !m.offset.is_finite() || m.gains.iter().any(|g| !g.is_finite()) {
                return Err(Error::Config(
                    "local model parameters must be finite".into(),
                ));
            }
        }
        for v in &validities {
            check_len("validity centers", v.centers.len(), val_dim)?;
            // Re-run the width checks for deserialized values.
            ValidityFunction::new(v.centers.clone(), v.widths.clone())?;
        }
        Ok(Self {
            models,
            validities,
            lin_dim,
            val_dim,
        })
    }

    /// Single global affine model with no partitioning.
    pub fn single(model: LocalLinearModel, val_dim: usize) -> Result<Self> {
        let lin_dim = model.gains.len();
        let validity = ValidityFunction::new(vec![0.0; val_dim], vec![1.0; val_dim])?;
        Self::new(vec![model], vec![validity], lin_dim, val_dim)
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    pub fn lin_dim(&self) -> usize {
        self.lin_dim
    }

    pub fn val_dim(&self) -> usize {
        self.val_dim
    }

    pub fn models(&self) -> &[LocalLinearModel] {
        &self.models
    }

    pub fn models_mut(&mut self) -> &mut [LocalLinearModel] {
        &mut self.models
    }

    pub fn validities(&self) -> &[ValidityFunction] {
        &self.validities
    }

    /// Normalized validity weights. Computed in log-space with max-subtraction, so inputs
    /// far away from every center still yield a proper simplex vector dominated by the
    /// nearest (in Mahalanobis sense) local model.
    pub fn validity_weights(&self, x_val: &[f64]) -> Result<Vec<f64>> {
        check_len("validity input", x_val.len(), self.val_dim)?;
        Ok(self.validity_weights_unchecked(x_val))
    }

    pub(crate) fn validity_weights_unchecked(&self, x_val: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = self
            .validities
            .iter()
            .map(|v| v.log_membership(x_val))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= sum;
        }
        w
    }

    pub fn evaluate(&self, x_lin: &[f64], x_val: &[f64]) -> Result<f64> {
        check_len("linear input", x_lin.len(), self.lin_dim)?;
        let phi = self.validity_weights(x_val)?;
        Ok(self.evaluate_with_weights(x_lin, &phi))
    }

    pub(crate) fn evaluate_with_weights(&self, x_lin: &[f64], phi: &[f64]) -> f64 {
        self.models
            .iter()
            .zip(phi)
            .map(|(m, p)| p * m.predict(x_lin))
            .sum()
    }

    /// Validity-weighted parameter `Σ φ_i w_{i,j}` for linear input `j`.
    pub fn weighted_gain(&self, phi: &[f64], j: usize) -> f64 {
        self.models
            .iter()
            .zip(phi)
            .map(|(m, p)| p * m.gains[j])
            .sum()
    }

    pub fn weighted_offset(&self, phi: &[f64]) -> f64 {
        self.models.iter().zip(phi).map(|(m, p)| p * m.offset).sum()
    }

    /// Reorders local models (and their validities) by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_len("permutation", order.len(), self.num_models())?;
        let models = order.iter().map(|&i| self.models[i].clone()).collect();
        let validities = order.iter().map(|&i| self.validities[i].clone()).collect();
        Self::new(models, validities, self.lin_dim, self.val_dim)
    }
}
