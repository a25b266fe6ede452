//! Named program inputs and sink outputs.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::collection::{discretize, Multiset, StreamChunk};
use crate::token::{Granularity, Token};
use crate::value::Record;
use crate::Result;

/// Data bound to one named source.
#[derive(Debug, Clone, PartialEq)]
pub enum InputData {
    /// An ordered record sequence. Batch sources read it as one collection,
    /// micro-batch sources discretize it, tuple sources emit it one by one.
    Records(Vec<Record>),
    /// Pre-cut batches: one collection token or one chunk each.
    Batches(Vec<Multiset>),
}

impl InputData {
    pub fn len(&self) -> usize {
        match self {
            InputData::Records(r) => r.len(),
            InputData::Batches(b) => b.iter().map(Multiset::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The data tokens a source of the given granularity emits, in order.
    pub fn tokens(&self, granularity: Granularity, batch_size: usize) -> Result<Vec<Token>> {
        Ok(match (granularity, self) {
            (Granularity::Collection, InputData::Records(r)) => {
                vec![Token::Collection(r.iter().cloned().collect())]
            }
            (Granularity::Collection, InputData::Batches(b)) => b.iter().cloned().map(Token::Collection).collect(),
            (Granularity::MicroBatch, InputData::Records(r)) => discretize(r.clone(), batch_size)?
                .into_iter()
                .map(Token::MicroBatch)
                .collect(),
            (Granularity::MicroBatch, InputData::Batches(b)) => b
                .iter()
                .enumerate()
                .map(|(seq, m)| {
                    Token::MicroBatch(StreamChunk {
                        seq: seq as u64,
                        batch: m.clone(),
                    })
                })
                .collect(),
            (Granularity::Tuple, d) => d.records().into_iter().map(Token::Tuple).collect(),
        })
    }

    /// All records in order, ignoring batch boundaries.
    pub fn records(&self) -> Vec<Record> {
        match self {
            InputData::Records(r) => r.clone(),
            InputData::Batches(b) => b.iter().flat_map(|m| m.records().iter().cloned()).collect(),
        }
    }
}

pub type Inputs = BTreeMap<String, InputData>;

/// Data tokens that reached one sink, in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SinkOutput {
    pub tokens: Vec<Token>,
}

impl SinkOutput {
    /// Every record, across tokens, in arrival order.
    pub fn records(&self) -> Vec<Record> {
        self.tokens.iter().flat_map(|t| t.records().iter().cloned()).collect()
    }

    pub fn bag(&self) -> Multiset {
        self.records().into_iter().collect()
    }

    /// Per-token bags, for chunk-wise comparisons.
    pub fn chunks(&self) -> Vec<Multiset> {
        self.tokens.iter().map(|t| t.records().iter().cloned().collect()).collect()
    }

    /// Canonical serialization of the token sequence: collections and
    /// chunks serialize sorted, tuples in order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.tokens).expect("tokens serialize")
    }
}

pub type Outputs = BTreeMap<String, SinkOutput>;

/// Union bag over every sink.
pub fn union_bag(outputs: &Outputs) -> Multiset {
    outputs.values().flat_map(|s| s.records()).collect()
}

/// Bag equality per sink name (same sink set required).
pub fn outputs_bag_equal(a: &Outputs, b: &Outputs) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .all(|(name, sa)| b.get(name).is_some_and(|sb| sa.bag() == sb.bag()))
}

pub fn records(xs: impl IntoIterator<Item = Record>) -> InputData {
    InputData::Records(xs.into_iter().collect())
}
