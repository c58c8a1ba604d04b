// SPDX-License-Identifier: MIT OR Apache-2.0

//! File formats, pipeline stages and CLI support for `partylens-core`.

pub mod config;
pub mod container;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;
pub mod seed;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use pipeline::{Logger, Run, Stage};
