//! Built-in programs, one per engine concept, and random input generators
//! for them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collection::WindowSpec;
use crate::dataset::{InputData, Inputs, Outputs};
use crate::graph::{translate, ConsumePolicy, SemanticGraph};
use crate::kernel::{require, require_predicate};
use crate::program::{LogicalProgram, ProgramMode};
use crate::reference;
use crate::topology::{require_bolt, Bolt, Topology};
use crate::value::{Record, Value};
use crate::{Error, Result};

/// Either API's program.
#[derive(Debug, Clone)]
pub enum AnyProgram {
    Declarative(LogicalProgram),
    Topological(Topology),
}

impl AnyProgram {
    pub fn name(&self) -> &str {
        match self {
            AnyProgram::Declarative(p) => &p.name,
            AnyProgram::Topological(t) => &t.name,
        }
    }

    pub fn semantic_graph(&self) -> Result<SemanticGraph> {
        match self {
            AnyProgram::Declarative(p) => translate(p),
            AnyProgram::Topological(t) => t.as_semantic_graph(),
        }
    }

    /// Source input names, in actor order.
    pub fn input_names(&self) -> Result<Vec<String>> {
        let g = self.semantic_graph()?;
        Ok(g.actors
            .iter()
            .filter_map(|a| match &a.operator {
                crate::graph::Operator::Source { input } => Some(input.clone()),
                _ => None,
            })
            .collect())
    }

    /// Sequential reference outputs.
    pub fn reference(&self, inputs: &Inputs) -> Result<Outputs> {
        match self {
            AnyProgram::Declarative(p) => reference::evaluate(p, inputs),
            AnyProgram::Topological(t) => reference::evaluate_topology(t, inputs),
        }
    }
}

pub const NAMES: &[&str] = &["wordcount", "map-reduce", "keyed-join", "windowed-count", "halving", "from-any-merge"];

pub fn get(name: &str) -> Result<AnyProgram> {
    Ok(match name {
        "wordcount" => AnyProgram::Declarative(wordcount()?),
        "map-reduce" => AnyProgram::Declarative(map_reduce()?),
        "keyed-join" => AnyProgram::Declarative(keyed_join()?),
        "windowed-count" => AnyProgram::Declarative(windowed_count()?),
        "halving" => AnyProgram::Declarative(halving()?),
        "from-any-merge" => AnyProgram::Topological(from_any_merge()?),
        _ => {
            return Err(Error::invalid(format!(
                "unknown program `{name}` (built-ins: {})",
                NAMES.join(", ")
            )))
        }
    })
}

pub fn all() -> Vec<AnyProgram> {
    NAMES.iter().map(|n| get(n).expect("built-in program")).collect()
}

/// lines -> split -> (word, 1) -> sum per word.
pub fn wordcount() -> Result<LogicalProgram> {
    let mut p = LogicalProgram::new("wordcount", ProgramMode::Batch);
    let s = p.source("lines")?;
    let words = p.flat_map(s, require("split_words")?)?;
    let pairs = p.map(words, require("pair_one")?)?;
    let counts = p.reduce_by_key(pairs, require("sum")?)?;
    p.sink(counts, "counts")?;
    Ok(p)
}

/// b = r(m(A)): key by residue, sum per key.
pub fn map_reduce() -> Result<LogicalProgram> {
    let mut p = LogicalProgram::new("map-reduce", ProgramMode::Batch);
    let s = p.source("numbers")?;
    let keyed = p.map(s, require("key_mod_4")?)?;
    let sums = p.reduce_by_key(keyed, require("sum")?)?;
    p.sink(sums, "sums")?;
    Ok(p)
}

pub fn keyed_join() -> Result<LogicalProgram> {
    let mut p = LogicalProgram::new("keyed-join", ProgramMode::Batch);
    let l = p.source("left")?;
    let r = p.source("right")?;
    let j = p.join(l, r)?;
    p.sink(j, "joined")?;
    Ok(p)
}

/// Tuple stream: running count per word, then sliding windows of 3.
pub fn windowed_count() -> Result<LogicalProgram> {
    let mut p = LogicalProgram::new("windowed-count", ProgramMode::TupleStream);
    let s = p.source("events")?;
    let pairs = p.map(s, require("pair_one")?)?;
    let counts = p.map_with_state(pairs, require("count")?, Value::Int(0))?;
    let w = p.window(counts, WindowSpec::new(3, 1)?)?;
    p.sink(w, "windows")?;
    Ok(p)
}

/// Halve every value until all are below one, at most 10 times.
pub fn halving() -> Result<LogicalProgram> {
    let mut body = LogicalProgram::new("halve-step", ProgramMode::Batch);
    let s = body.source("in")?;
    let h = body.map(s, require("halve")?)?;
    body.sink(h, "out")?;
    let mut p = LogicalProgram::new("halving", ProgramMode::Batch);
    let s = p.source("values")?;
    let it = p.iterate(s, body, require_predicate("all_lt_1")?, 10)?;
    p.sink(it, "result")?;
    Ok(p)
}

/// Two spouts feeding one from-any bolt that forwards whatever arrives.
pub fn from_any_merge() -> Result<Topology> {
    let mut t = Topology::new("from-any-merge");
    let a = t.add_spout("left", "left")?;
    let b = t.add_spout("right", "right")?;
    let m = t.add_bolt(Bolt::new("merge", require_bolt("forward")?, ConsumePolicy::FromAny))?;
    t.connect(a, m)?;
    t.connect(b, m)?;
    Ok(t)
}

const WORDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu",
];

fn text_lines(rng: &mut ChaCha8Rng, n: usize) -> Vec<Record> {
    (0..n)
        .map(|_| {
            let k = rng.gen_range(0..6);
            let line: Vec<&str> = (0..k).map(|_| *WORDS.choose(rng).expect("non-empty")).collect();
            Record::unkeyed(line.join(" "))
        })
        .collect()
}

fn ints(rng: &mut ChaCha8Rng, n: usize, hi: i64) -> Vec<Record> {
    (0..n).map(|_| Record::unkeyed(rng.gen_range(-hi..=hi))).collect()
}

fn keyed_ints(rng: &mut ChaCha8Rng, n: usize, keys: i64) -> Vec<Record> {
    (0..n).map(|_| Record::keyed(rng.gen_range(0..keys), rng.gen_range(0..100i64))).collect()
}

/// Random inputs for a built-in program, at most `max_records` in total.
pub fn random_inputs(program: &str, seed: u64, max_records: usize) -> Result<Inputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(0..=max_records);
    let data: Vec<(&str, Vec<Record>)> = match program {
        "wordcount" => vec![("lines", text_lines(&mut rng, n))],
        "map-reduce" => vec![("numbers", ints(&mut rng, n, 1000))],
        "keyed-join" => {
            // Keep the join output small: few records per side.
            let m = n.min(60);
            let left = rng.gen_range(0..=m);
            vec![("left", keyed_ints(&mut rng, left, 8)), ("right", keyed_ints(&mut rng, m - left, 8))]
        }
        "windowed-count" => {
            let ev = (0..n).map(|_| Record::unkeyed(*WORDS[..4].choose(&mut rng).expect("non-empty"))).collect();
            vec![("events", ev)]
        }
        "halving" => {
            let vals = (0..n.min(200)).map(|_| Record::unkeyed(rng.gen_range(0..=1000i64))).collect();
            vec![("values", vals)]
        }
        "from-any-merge" => {
            let left = rng.gen_range(0..=n);
            vec![("left", ints(&mut rng, left, 50)), ("right", ints(&mut rng, n - left, 50))]
        }
        _ => return Err(Error::invalid(format!("no generator for `{program}`"))),
    };
    Ok(data.into_iter().map(|(k, v)| (k.to_string(), InputData::Records(v))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_program_builds_and_has_a_generator() {
        for p in all() {
            p.semantic_graph().unwrap();
            let inputs = random_inputs(p.name(), 3, 50).unwrap();
            p.reference(&inputs).unwrap();
        }
        assert!(get("nope").is_err());
    }

    #[test]
    fn generators_respect_the_record_bound() {
        for name in NAMES {
            for seed in 0..20 {
                let inputs = random_inputs(name, seed, 100).unwrap();
                let total: usize = inputs.values().map(InputData::len).sum();
                assert!(total <= 100, "{name} produced {total}");
            }
        }
    }

    #[test]
    fn wordcount_reference_counts_words() {
        let lines = vec![Record::unkeyed("a b a"), Record::unkeyed("b a")];
        let inputs: Inputs = [("lines".to_string(), InputData::Records(lines))].into_iter().collect();
        let out = wordcount().map(AnyProgram::Declarative).unwrap().reference(&inputs).unwrap();
        let got = out["counts"].bag();
        let want = vec![Record::keyed("a", 3), Record::keyed("b", 2)].into_iter().collect();
        assert_eq!(got, want);
    }
}
