//! Rate standardization over exact empirical distributions of categorical
//! registry data.
//!
//! The crate provides crude and standardized rates (general, SCA, SCC and
//! SONC families), diagnostics for between-period confounding, nested-rate
//! recursion checks, a fundamental-disease-probability model with synthetic
//! data generation, and the file formats and batch pipeline used by the
//! `stdrate` CLI.

pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod fdp;
pub mod fixtures;
pub mod io;
pub mod nesting;
pub mod operators;
pub mod pipeline;
pub mod scalar;
pub mod schema;
pub mod weights;

pub use dist::{build_empirical, build_from_counts, EmpiricalJoint, Margin, Tally};
pub use error::{Error, RateError, Result};
pub use operators::{
    rate_table, sca, sca_expanded, scc, sonc_apply, standardize_general, EmptyStratumPolicy, Method,
    RateEntry, RateTable, StandardizationSpec, Standardized,
};
pub use scalar::Scalar;
pub use schema::{Column, CovariateSchema, Factorization, StratumKey, VarSet};
pub use weights::{SoncFamily, WeightMeasure};

pub use num_rational::BigRational;
