//! Independent reference implementations. Written from the definitions,
//! not from the library code, and shared by the integration and acceptance
//! suites.
#![allow(dead_code)]

pub mod cache_model;
pub mod embedding;
pub mod metrics;
