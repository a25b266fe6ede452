use serde::{Deserialize, Serialize};

use crate::collection::{Multiset, StreamChunk};
use crate::value::Record;

/// Unit of data on a channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Token {
    Collection(Multiset),
    MicroBatch(StreamChunk),
    Tuple(Record),
    Control(i64),
    EndOfStream,
}

/// What one data token on a channel represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Collection,
    MicroBatch,
    Tuple,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Collection => "collection",
            Granularity::MicroBatch => "micro-batch",
            Granularity::Tuple => "tuple",
        }
    }
}

impl Token {
    pub fn is_data(&self) -> bool {
        matches!(self, Token::Collection(_) | Token::MicroBatch(_) | Token::Tuple(_))
    }

    pub fn granularity(&self) -> Option<Granularity> {
        match self {
            Token::Collection(_) => Some(Granularity::Collection),
            Token::MicroBatch(_) => Some(Granularity::MicroBatch),
            Token::Tuple(_) => Some(Granularity::Tuple),
            _ => None,
        }
    }

    /// Records carried by a data token, in arrival order.
    pub fn records(&self) -> &[Record] {
        match self {
            Token::Collection(m) => m.records(),
            Token::MicroBatch(c) => c.batch.records(),
            Token::Tuple(r) => std::slice::from_ref(r),
            Token::Control(_) | Token::EndOfStream => &[],
        }
    }

    pub fn into_records(self) -> Vec<Record> {
        match self {
            Token::Collection(m) => m.into_records(),
            Token::MicroBatch(c) => c.batch.into_records(),
            Token::Tuple(r) => vec![r],
            Token::Control(_) | Token::EndOfStream => Vec::new(),
        }
    }
}

/// Iteration tag carried by tokens inside tagged-token loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub id: u64,
    pub iteration: u64,
}

/// A token in flight, with its run-unique id and optional loop tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub id: u64,
    pub token: Token,
    pub tag: Option<Tag>,
}
