//! Bias-reduced kernel density estimation with β-divergence bandwidth selection.
//!
//! The estimator is `f̂ₙ(x) = fₙ(x) − (h²/2) fₙ''(x) μ₂(K)`, where `fₙ` is the
//! Parzen estimate. Bandwidths can be chosen by a normal-reference rule, by
//! leave-one-out cross-validation on a β-divergence, by minimising the
//! asymptotic expected divergence for a known target, or by Monte Carlo MISE.

pub mod bandwidth;
pub mod cli;
pub mod density;
pub mod divergence;
pub mod error;
pub mod kernels;
pub mod quadrature;
pub mod simulate;

pub use bandwidth::{BandwidthSearch, Selection, SelectorMethod, SelectorSpec};
pub use density::{DensityEstimate, EvaluationGrid, Mode, Sample};
pub use divergence::{BetaParam, NormalTarget, TargetDensity};
pub use error::{Error, Result};
pub use kernels::{gaussian_kernel, Kernel};
pub use quadrature::QuadratureSpec;
pub use simulate::{NormalMixture, SimulationConfig, SimulationTarget};
