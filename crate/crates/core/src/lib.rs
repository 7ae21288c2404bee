//! Cost auditing for reasoning-model APIs.
//!
//! Computes what a workload actually costs from token usage and a dated price
//! catalog, and measures how far that departs from what listed per-token
//! prices suggest.

pub mod catalog;
pub mod cli;
pub mod collect;
pub mod cost;
pub mod fixtures;
pub mod http;
pub mod ledger;
pub mod predict;
pub mod ranking;
pub mod report;
pub mod variance;
