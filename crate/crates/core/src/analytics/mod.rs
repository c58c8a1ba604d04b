// SPDX-License-Identifier: MIT OR Apache-2.0

//! Party distributions and the statistics built on them.

pub mod dist;
pub mod groups;
pub mod ols;
pub mod special;

pub use dist::{barycenter, entropy, wasserstein, GroundMetric, PartyDistribution, Source};
pub use groups::{
    build_psi, entropy_table, group_regression, level_groups, party_regression, sensitivity_regression,
    sensitivity_table, survey_baseline, EntropyRow, GroupKey, GroupRegression, SensitivityRow, SensitivityTable,
    Weighting,
};
pub use ols::{ols, Coefficient, Design, RegressionResult};
