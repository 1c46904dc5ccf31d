//! Service and command-line front end for SIFT projects.

pub mod api;
pub mod http;

pub use api::{Api, ApiError, ApiResult};
