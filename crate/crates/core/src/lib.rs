//! Rate-distortion-perception functions of Gaussian sources under MSE
//! distortion and KL, reverse KL, Jensen-Shannon, squared Hellinger and
//! squared Wasserstein-2 perception constraints.

pub mod cli;
pub mod divergence;
pub mod error;
pub mod linalg;
pub mod models;
pub mod multivariate;
pub mod oracle;
pub mod scalar;
pub mod special;

pub use divergence::PerceptionMetric;
pub use error::{RdpError, Result};
pub use models::{GaussianSource, ScalarGaussian, ScalarRealization, VectorRealization};
pub use multivariate::{alternating_minimization, LagrangePair, MultiRdpSolution};
pub use scalar::{scalar_rdpf, RegionCase, ScalarRdpSolution};
