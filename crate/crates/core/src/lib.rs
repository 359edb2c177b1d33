//! Brain-age regression pipeline on tabular volumetric features.
//!
//! The crate covers the full workflow from cohort tables to statistical
//! reports:
//!
//! - [`cohort`] — CSV ingestion, validation, stratified splitting, and
//!   synthetic cohort simulation with known ground truth.
//! - [`harmonize`] — ComBat-style location/scale site harmonization with
//!   spline-smooth age and linear sex/eTIV covariate preservation.
//! - [`nn`] — a minimal deterministic tensor core with reverse-mode
//!   gradients and Adam, sized for the tabular transformer below.
//! - [`model`] — the 175-token transformer age regressor, training loop,
//!   slope/intercept bias correction, brain-age-gap computation, metrics,
//!   and weight serialization.
//! - [`stats`] — OLS with HC3 robust covariance, ANCOVA and interaction
//!   regressions, Mann-Whitney U, Shapiro-Wilk, and effect sizes.
//! - [`pipeline`] — configuration-driven orchestration of all stages with
//!   machine-readable report bundles.

pub mod cohort;
pub mod container;
pub mod harmonize;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod stats;

/// Number of volumetric input features every record carries.
pub const FEATURE_COUNT: usize = 175;
