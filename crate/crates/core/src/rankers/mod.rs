//! Trainable scorers: a GNN over rule instantiation graphs that rescores
//! rule-supported candidates, and a path-message ranker that scores every
//! entity of a fact graph for a query in one pass.

mod gnn;
mod nbf;

pub use gnn::{
    aggregator_examples, train_aggregator, Aggregator, AggregatorArch, AggregatorConfig, AggregatorExample,
    AggregatorInput, Composition,
};
pub use nbf::{train_nbf, Aggregate, MessageGraph, NbfConfig, NbfRanker};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Binary accuracy for the aggregator, MRR for the path ranker.
    pub valid_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingReport {
    pub train_examples: usize,
    pub valid_examples: usize,
    /// Validation metric of the initial parameters.
    pub initial_valid_metric: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub best_valid_metric: f64,
}

/// Parses `kind key=value ...` architecture descriptors.
pub(crate) fn parse_descriptor(text: &str, kind: &str) -> Result<BTreeMap<String, String>> {
    let mut parts = text.split_whitespace();
    match parts.next() {
        Some(k) if k == kind => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut map = BTreeMap::new();
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad descriptor field {p:?}")))?;
        map.insert(k.to_owned(), v.to_owned());
    }
    Ok(map)
}

pub(crate) fn descriptor_field<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("descriptor lacks {key}")))?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("descriptor field {key} is malformed")))
}

/// Checks that a loaded parameter store has exactly the names and shapes of
/// a freshly built one.
pub(crate) fn check_layout(expected: &crate::autodiff::ParamStore, got: &crate::autodiff::ParamStore) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            got.len()
        )));
    }
    for (name, t) in expected.iter() {
        let id = got
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if got.get(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                got.get(id).shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one item of a deterministic parallel loop. Stable across
/// platforms and compiler versions.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
