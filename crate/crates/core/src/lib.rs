//! Core of the judicial-fairness audit toolkit.
//!
//! The pipeline runs from an annotated case corpus and a label catalog
//! ([`corpus`]) through counterfactual prompt generation ([`promptgen`]),
//! verdict parsing ([`outcome_parser`]), document fixed-effects estimation
//! ([`stats_fe`]), the three fairness metric families ([`metrics`]),
//! binomial aggregation ([`aggregate`]) and report emission ([`report`]).
//! [`synth_judge`] produces synthetic judge outputs with planted effects and
//! serves as the end-to-end oracle.
//!
//! The numeric kernels are generic over [`Scalar`]; the aliases below pin the
//! `f64` instantiation used by the pipeline.

pub mod aggregate;
pub mod corpus;
pub mod metrics;
pub mod outcome_parser;
pub mod promptgen;
pub mod report;
pub mod scalar;
pub mod stats_fe;
pub mod synth_judge;

pub use scalar::Scalar;

/// Panel design in double precision.
pub type Design = stats_fe::PanelDesign<f64>;
/// Regression fit in double precision.
pub type Fit = stats_fe::RegressionFit<f64>;
/// Single coefficient estimate in double precision.
pub type Estimate = stats_fe::Coefficient<f64>;
/// Panel design in single precision.
pub type DesignF32 = stats_fe::PanelDesign<f32>;
/// Regression fit in single precision.
pub type FitF32 = stats_fe::RegressionFit<f32>;
