//! Summary-data Mendelian randomization.
//!
//! Univariable and multivariable inverse-variance weighted (IVW) and MR-Egger
//! estimators over per-variant association summaries, with fixed-effect and
//! multiplicative random-effects inference, allele orientation, generalized
//! least squares for correlated variants, and a Monte Carlo engine for
//! power/bias studies.

pub mod data;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod numfmt;
pub mod orientation;
pub mod report;
pub mod simulation;
pub mod wls;

pub use data::{load_correlation, load_dataset, CorrelationMatrix, SummaryDataset, VariantRecord};
pub use error::{MrError, Result};
pub use estimators::{
    egger_correlated, egger_multivariable, egger_univariable, f_statistic, inside_bias_oracle,
    ivw_correlated, ivw_multivariable, ivw_univariable, CausalEstimate, InterceptTest, MRResult,
    MethodTag, Model,
};
pub use orientation::{orient, OrientationReport};
pub use wls::{fit_gls, fit_wls, scaled_se, RegressionFit, RegressionSpec, WeightScheme};
