//! File formats, HTTP endpoints and the `ladder` command line around
//! `ladder-core`.

pub mod cli;
pub mod client;
pub mod config;
pub mod corpus_io;
pub mod refine;
pub mod reporting;
pub mod scoring;
pub mod shards;
pub mod train;

use serde::{Deserialize, Serialize};

/// One item that failed somewhere in a batch; listed in `failures.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub index: usize,
    pub id: String,
    pub step: String,
    pub error: String,
}

impl ItemFailure {
    pub fn new(index: usize, id: &str, step: &str, error: impl Into<String>) -> Self {
        Self {
            index,
            id: id.to_string(),
            step: step.to_string(),
            error: error.into(),
        }
    }
}
