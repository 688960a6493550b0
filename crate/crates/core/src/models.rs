//! Gaussian sources and linear test-channel realizations `X_hat = A X + W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_nonnegative, ensure_positive, RdpError, Result};
use crate::linalg;

/// Eigenvalues at or below this are treated as a singular covariance.
pub const PD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarGaussian {
    pub mean: f64,
    pub variance: f64,
}

impl ScalarGaussian {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(RdpError::InvalidInput(format!("mean must be finite, got {mean}")));
        }
        ensure_positive("variance", variance)?;
        Ok(Self { mean, variance })
    }

    pub fn centered(variance: f64) -> Result<Self> {
        Self::new(0.0, variance)
    }
}

/// Multivariate Gaussian source with its eigen-decomposition cached.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSource {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl GaussianSource {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.len() != covariance.nrows() {
            return Err(RdpError::DimensionMismatch { expected: covariance.nrows(), got: mean.len() });
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(RdpError::InvalidInput("mean entries must be finite".into()));
        }
        let (eigvecs, eigvals) = eigendecompose(&covariance)?;
        Ok(Self { mean, covariance, eigvecs, eigvals })
    }

    pub fn zero_mean(covariance: DMatrix<f64>) -> Result<Self> {
        let n = covariance.nrows();
        Self::new(DVector::zeros(n), covariance)
    }

    /// Diagonal zero-mean source with the given variances.
    pub fn from_eigenvalues(eigvals: &[f64]) -> Result<Self> {
        if eigvals.is_empty() {
            return Err(RdpError::InvalidInput("at least one eigenvalue is required".into()));
        }
        for &l in eigvals {
            ensure_positive("eigenvalue", l)?;
        }
        Self::zero_mean(DMatrix::from_diagonal(&DVector::from_column_slice(eigvals)))
    }

    pub fn from_descriptor(desc: &SourceDescriptor) -> Result<Self> {
        match desc {
            SourceDescriptor::Eigenvalues { eigenvalues } => Self::from_eigenvalues(eigenvalues),
            SourceDescriptor::Full { mean, covariance } => {
                let n = covariance.len();
                if n == 0 {
                    return Err(RdpError::InvalidInput("covariance must be non-empty".into()));
                }
                for row in covariance {
                    if row.len() != n {
                        return Err(RdpError::DimensionMismatch { expected: n, got: row.len() });
                    }
                }
                let cov = DMatrix::from_fn(n, n, |i, j| covariance[i][j]);
                let mean = match mean {
                    Some(m) => DVector::from_column_slice(m),
                    None => DVector::zeros(n),
                };
                Self::new(mean, cov)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Orthonormal eigenvectors, one per column, matching [`Self::eigvals`].
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Eigenvalues in descending order.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn trace(&self) -> f64 {
        self.eigvals.sum()
    }
}

/// JSON description of a source: a full covariance (optionally with a mean) or
/// the eigenvalues of a diagonal one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SourceDescriptor {
    Eigenvalues {
        eigenvalues: Vec<f64>,
    },
    Full {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        covariance: Vec<Vec<f64>>,
    },
}

/// Symmetric eigen-decomposition with a positive-definiteness check.
///
/// Eigenvalues come back in descending order.
pub fn eigendecompose(covariance: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (v, d) = linalg::symmetric_eigen(covariance)?;
    let min = d[d.len() - 1];
    if min <= PD_TOL {
        return Err(RdpError::NotPositiveDefinite(min));
    }
    Ok((v, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarRealization {
    pub gain: f64,
    pub noise_var: f64,
}

impl ScalarRealization {
    pub fn new(gain: f64, noise_var: f64) -> Result<Self> {
        if !gain.is_finite() {
            return Err(RdpError::InvalidInput(format!("gain must be finite, got {gain}")));
        }
        ensure_nonnegative("noise variance", noise_var)?;
        Ok(Self { gain, noise_var })
    }

    pub fn reconstruction_variance(&self, var_x: f64) -> f64 {
        self.gain * self.gain * var_x + self.noise_var
    }

    /// `E[(X - X_hat)^2] = (1 - a)^2 var_x + noise_var`.
    pub fn mse(&self, var_x: f64) -> f64 {
        let one_minus = 1.0 - self.gain;
        one_minus * one_minus * var_x + self.noise_var
    }
}

/// Realization whose gain and noise covariance share the source eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorRealization {
    pub eigvecs: DMatrix<f64>,
    pub gains: DVector<f64>,
    pub noise_vars: DVector<f64>,
}

impl VectorRealization {
    pub fn dim(&self) -> usize {
        self.gains.len()
    }

    pub fn gain_matrix(&self) -> DMatrix<f64> {
        linalg::from_eigen(&self.eigvecs, &self.gains)
    }

    pub fn noise_covariance(&self) -> DMatrix<f64> {
        linalg::from_eigen(&self.eigvecs, &self.noise_vars)
    }

    /// `A Sigma_X A^T + Sigma_W`.
    pub fn reconstruction_covariance(&self, source: &GaussianSource) -> DMatrix<f64> {
        let a = self.gain_matrix();
        &a * source.covariance() * a.transpose() + self.noise_covariance()
    }

    /// Eigenvalues of the reconstruction covariance in the source eigenbasis.
    pub fn reconstruction_eigvals(&self, source: &GaussianSource) -> DVector<f64> {
        self.gains.zip_zip_map(source.eigvals(), &self.noise_vars, |a, l, w| a * a * l + w)
    }

    /// Mean squared error `tr[(I - A) Sigma_X (I - A)^T + Sigma_W]`.
    pub fn mse(&self, source: &GaussianSource) -> f64 {
        let n = self.dim();
        let ima = DMatrix::<f64>::identity(n, n) - self.gain_matrix();
        (&ima * source.covariance() * ima.transpose() + self.noise_covariance()).trace()
    }

    /// Largest pairwise commutator norm among `A`, `Sigma_W` and `Sigma_X`.
    pub fn commutator_with(&self, source: &GaussianSource) -> f64 {
        let a = self.gain_matrix();
        let w = self.noise_covariance();
        let s = source.covariance();
        linalg::commutator_norm(&a, s).max(linalg::commutator_norm(&w, s)).max(linalg::commutator_norm(&a, &w))
    }
}

/// Builds `A = V diag(gains) V^T` and `Sigma_W = V diag(noise_vars) V^T` in the
/// source eigenbasis. The mean is absorbed by `mu_W = (I - A) mu_X`.
pub fn assemble_realization(source: &GaussianSource, gains: &[f64], noise_vars: &[f64]) -> Result<VectorRealization> {
    let n = source.dim();
    if gains.len() != n {
        return Err(RdpError::DimensionMismatch { expected: n, got: gains.len() });
    }
    if noise_vars.len() != n {
        return Err(RdpError::DimensionMismatch { expected: n, got: noise_vars.len() });
    }
    for &w in noise_vars {
        ensure_nonnegative("noise variance", w)?;
    }
    if gains.iter().any(|g| !g.is_finite()) {
        return Err(RdpError::InvalidInput("gains must be finite".into()));
    }
    Ok(VectorRealization {
        eigvecs: source.eigvecs().clone(),
        gains: DVector::from_column_slice(gains),
        noise_vars: DVector::from_column_slice(noise_vars),
    })
}
