//! Randomness: parameter sampling, random boundaries, domain maps, EIM and
//! Monte Carlo statistics.

pub mod domain_map;
pub mod eim;
pub mod kl;
pub mod params;
pub mod stats;

pub use domain_map::{
    stochastic_map, transform_coefficients, DomainMap, HarmonicMapper, PulledBack,
};
pub use eim::{eim_build, eim_evaluate, EimCoefficients, EimSurrogate};
pub use kl::{kl_expand, realize_boundary, KlField};
pub use params::{sample_parameters, Marginal, ParamDomain};
pub use stats::{error_metrics, moments, ErrorMetrics, Moments, SamplePair};
