//! Collections, stream chunks and count-based windows.

use serde::{Deserialize, Serialize};

use crate::value::Record;
use crate::{Error, Result};

/// An unordered bag of records.
///
/// The backing vector keeps arrival order so that stream operators can fold
/// in order, but equality is bag equality and serialization is canonical
/// (sorted), so two multisets holding the same records in different orders
/// compare and serialize identically.
#[derive(Debug, Clone, Default)]
pub struct Multiset {
    items: Vec<Record>,
}

impl Multiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(items: Vec<Record>) -> Self {
        Multiset { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, r: Record) {
        self.items.push(r);
    }

    pub fn extend(&mut self, other: Multiset) {
        self.items.extend(other.items);
    }

    /// Records in arrival order.
    pub fn iter(&self) -> std::slice::Iter<'_, Record> {
        self.items.iter()
    }

    pub fn records(&self) -> &[Record] {
        &self.items
    }

    pub fn into_records(self) -> Vec<Record> {
        self.items
    }

    /// Records sorted into the canonical order used for display and
    /// serialization.
    pub fn sorted(&self) -> Vec<Record> {
        let mut v = self.items.clone();
        v.sort();
        v
    }
}

impl PartialEq for Multiset {
    fn eq(&self, other: &Self) -> bool {
        bag_equal(self, other)
    }
}

impl Eq for Multiset {}

impl FromIterator<Record> for Multiset {
    fn from_iter<I: IntoIterator<Item = Record>>(iter: I) -> Self {
        Multiset {
            items: iter.into_iter().collect(),
        }
    }
}

impl IntoIterator for Multiset {
    type Item = Record;
    type IntoIter = std::vec::IntoIter<Record>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.into_iter()
    }
}

impl<'a> IntoIterator for &'a Multiset {
    type Item = &'a Record;
    type IntoIter = std::slice::Iter<'a, Record>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

impl Serialize for Multiset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.sorted().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Multiset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Multiset {
            items: Vec::deserialize(d)?,
        })
    }
}

/// True iff `a` and `b` hold the same records with the same multiplicities.
pub fn bag_equal(a: &Multiset, b: &Multiset) -> bool {
    a.len() == b.len() && a.sorted() == b.sorted()
}

/// One micro-batch of a discretized stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamChunk {
    pub seq: u64,
    pub batch: Multiset,
}

/// Cut an ordered record sequence into fixed-size chunks numbered from 0.
///
/// Every chunk but the last holds exactly `batch_size` records; an empty
/// input yields no chunks.
pub fn discretize(records: Vec<Record>, batch_size: usize) -> Result<Vec<StreamChunk>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut chunks = Vec::with_capacity(records.len().div_ceil(batch_size));
    let mut it = records.into_iter().peekable();
    let mut seq = 0;
    while it.peek().is_some() {
        let batch: Multiset = it.by_ref().take(batch_size).collect();
        chunks.push(StreamChunk { seq, batch });
        seq += 1;
    }
    Ok(chunks)
}

/// Count-based sliding window. `slide <= size`; `slide == size` is tumbling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size: usize,
    pub slide: usize,
}

impl WindowSpec {
    pub fn new(size: usize, slide: usize) -> Result<Self> {
        let spec = WindowSpec { size, slide };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.slide == 0 {
            return Err(Error::invalid("window size and slide must be positive"));
        }
        if self.slide > self.size {
            return Err(Error::invalid(format!(
                "window slide {} exceeds size {} (gaps are not supported)",
                self.slide, self.size
            )));
        }
        Ok(())
    }

    /// Whether the element at zero-based `position` closes a window.
    pub fn closes_window(&self, position: usize) -> bool {
        position + 1 >= self.size && (position + 1 - self.size).is_multiple_of(self.slide)
    }
}

/// Full windows over `records`: window `i` covers positions
/// `[i * slide, i * slide + size)`.
pub fn windows(records: &[Record], spec: WindowSpec) -> Result<Vec<Multiset>> {
    spec.validate()?;
    let mut out = Vec::new();
    let mut start = 0;
    while start + spec.size <= records.len() {
        out.push(records[start..start + spec.size].iter().cloned().collect());
        start += spec.slide;
    }
    Ok(out)
}
