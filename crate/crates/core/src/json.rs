//! JSON program descriptions.
//!
//! A declarative program lists ops in dependency order; each op names its
//! upstream ops by id and its kernel by built-in name:
//!
//! ```json
//! {"name": "wc", "mode": "batch", "ops": [
//!   {"id": "src", "kind": "source", "input": "lines"},
//!   {"id": "words", "kind": "flat_map", "kernel": "split_words", "inputs": ["src"]},
//!   {"id": "pairs", "kind": "map", "kernel": "pair_one", "inputs": ["words"]},
//!   {"id": "counts", "kind": "reduce_by_key", "kernel": "sum", "inputs": ["pairs"]},
//!   {"id": "out", "kind": "sink", "output": "counts", "inputs": ["counts"]}
//! ]}
//! ```
//!
//! A topology has `spouts`, `bolts` and `edges` instead of `ops`.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::collection::WindowSpec;
use crate::corpus::AnyProgram;
use crate::graph::ConsumePolicy;
use crate::kernel::{require, require_predicate};
use crate::program::{LogicalProgram, OpId, OpKind, ProgramMode, DEFAULT_BATCH_SIZE};
use crate::topology::{require_bolt, Bolt, Routing, Topology};
use crate::value::Value;
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramDoc {
    name: String,
    #[serde(default)]
    mode: Option<ProgramMode>,
    #[serde(default)]
    batch_size: Option<usize>,
    #[serde(default)]
    ops: Vec<OpDoc>,
    #[serde(default)]
    spouts: Vec<SpoutDoc>,
    #[serde(default)]
    bolts: Vec<BoltDoc>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpDoc {
    id: String,
    kind: OpKind,
    #[serde(default)]
    inputs: Vec<String>,
    kernel: Option<String>,
    input: Option<String>,
    output: Option<String>,
    init: Option<serde_json::Value>,
    size: Option<usize>,
    slide: Option<usize>,
    terminate: Option<String>,
    max_iterations: Option<usize>,
    body: Option<Box<ProgramDoc>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpoutDoc {
    name: String,
    input: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoltDoc {
    name: String,
    kernel: String,
    #[serde(default)]
    consume_policy: Option<ConsumePolicy>,
    #[serde(default)]
    initial_state: Option<serde_json::Value>,
    #[serde(default)]
    replication: Option<usize>,
    #[serde(default)]
    loop_exit: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    from: String,
    to: String,
    #[serde(default)]
    routing: Routing,
}

/// JSON to [`Value`]: integers, floats, strings and arrays map directly;
/// `{"pair": [a, b]}` builds a pair.
pub fn value_from_json(v: &serde_json::Value) -> Result<Value> {
    use serde_json::Value as J;
    Ok(match v {
        J::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().ok_or_else(|| Error::invalid(format!("number out of range: {n}")))?),
        },
        J::String(s) => Value::text(s.as_str()),
        J::Array(items) => Value::List(items.iter().map(value_from_json).collect::<Result<_>>()?),
        J::Object(m) if m.len() == 1 && m.contains_key("pair") => match &m["pair"] {
            J::Array(p) if p.len() == 2 => Value::pair(value_from_json(&p[0])?, value_from_json(&p[1])?),
            _ => return Err(Error::invalid("`pair` needs a two-element array")),
        },
        other => return Err(Error::invalid(format!("unsupported value `{other}`"))),
    })
}

/// Parse a program. Syntax errors carry line and column.
pub fn parse_program(text: &str) -> Result<AnyProgram> {
    let doc: ProgramDoc = serde_json::from_str(text)?;
    build(doc)
}

pub fn load_program(path: impl AsRef<std::path::Path>) -> Result<AnyProgram> {
    parse_program(&std::fs::read_to_string(path)?)
}

fn build(doc: ProgramDoc) -> Result<AnyProgram> {
    let topological = !doc.spouts.is_empty() || !doc.bolts.is_empty();
    if topological {
        if !doc.ops.is_empty() {
            return Err(Error::invalid("a program has either `ops` or `spouts`/`bolts`, not both"));
        }
        return build_topology(doc).map(AnyProgram::Topological);
    }
    if !doc.edges.is_empty() {
        return Err(Error::invalid("`edges` belong to topologies; declarative ops name their `inputs`"));
    }
    build_declarative(doc).map(AnyProgram::Declarative)
}

fn need<'a, T>(field: &'a Option<T>, op: &str, name: &str) -> Result<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("op `{op}` needs `{name}`")))
}

fn build_declarative(doc: ProgramDoc) -> Result<LogicalProgram> {
    let mut p = LogicalProgram::new(doc.name, doc.mode.unwrap_or(ProgramMode::Batch));
    p.batch_size = doc.batch_size.unwrap_or(DEFAULT_BATCH_SIZE);
    let mut ids: BTreeMap<String, OpId> = BTreeMap::new();
    for op in doc.ops {
        let ups: Vec<OpId> = op
            .inputs
            .iter()
            .map(|i| {
                ids.get(i)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("op `{}` reads `{i}`, which is not defined earlier", op.id)))
            })
            .collect::<Result<_>>()?;
        let one = || -> Result<OpId> {
            match ups.as_slice() {
                [u] => Ok(*u),
                _ => Err(Error::invalid(format!("op `{}` needs exactly one input", op.id))),
            }
        };
        let kernel = || -> Result<crate::kernel::Kernel> { require(need(&op.kernel, &op.id, "kernel")?) };
        let id = match op.kind {
            OpKind::Source => {
                if !ups.is_empty() {
                    return Err(Error::invalid(format!("source `{}` takes no inputs", op.id)));
                }
                p.source(need(&op.input, &op.id, "input")?)?
            }
            OpKind::Sink => p.sink(one()?, need(&op.output, &op.id, "output")?)?,
            OpKind::Map => p.map(one()?, kernel()?)?,
            OpKind::FlatMap => p.flat_map(one()?, kernel()?)?,
            OpKind::Filter => p.filter(one()?, kernel()?)?,
            OpKind::GroupByKey => p.group_by_key(one()?)?,
            OpKind::ReduceByKey => p.reduce_by_key(one()?, kernel()?)?,
            OpKind::Reduce => p.reduce(one()?, kernel()?)?,
            OpKind::Join => match ups.as_slice() {
                [l, r] => p.join(*l, *r)?,
                _ => return Err(Error::invalid(format!("join `{}` needs two inputs", op.id))),
            },
            OpKind::MapWithState => {
                let init = value_from_json(need(&op.init, &op.id, "init")?)?;
                p.map_with_state(one()?, kernel()?, init)?
            }
            OpKind::Window => {
                let spec = WindowSpec::new(*need(&op.size, &op.id, "size")?, *need(&op.slide, &op.id, "slide")?)?;
                p.window(one()?, spec)?
            }
            OpKind::Iterate => {
                let body = build_declarative(*op.body.ok_or_else(|| Error::invalid(format!("iterate `{}` needs `body`", op.id)))?)?;
                let terminate = require_predicate(need(&op.terminate, &op.id, "terminate")?)?;
                let max = *need(&op.max_iterations, &op.id, "max_iterations")?;
                p.iterate(one()?, body, terminate, max)?
            }
        };
        if ids.insert(op.id.clone(), id).is_some() {
            return Err(Error::invalid(format!("duplicate op id `{}`", op.id)));
        }
    }
    p.validate()?;
    Ok(p)
}

fn build_topology(doc: ProgramDoc) -> Result<Topology> {
    if doc.mode.is_some() || doc.batch_size.is_some() {
        return Err(Error::invalid("topologies are tuple streams; drop `mode` and `batch_size`"));
    }
    let mut t = Topology::new(doc.name);
    for s in doc.spouts {
        t.add_spout(&s.name, &s.input)?;
    }
    for b in doc.bolts {
        let mut bolt = Bolt::new(&b.name, require_bolt(&b.kernel)?, b.consume_policy.unwrap_or(ConsumePolicy::FromAll));
        if let Some(init) = &b.initial_state {
            bolt = bolt.with_state(value_from_json(init)?);
        }
        if let Some(n) = b.replication {
            bolt = bolt.replicated(n);
        }
        if b.loop_exit {
            bolt = bolt.loop_exit();
        }
        t.add_bolt(bolt)?;
    }
    for e in doc.edges {
        t.connect_named(&e.from, &e.to, e.routing)?;
    }
    let diags = t.validate();
    if !diags.is_empty() {
        return Err(Error::invalid(diags.join("; ")));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    const WC: &str = r#"{"name": "wc", "mode": "batch", "ops": [
        {"id": "src", "kind": "source", "input": "lines"},
        {"id": "words", "kind": "flat_map", "kernel": "split_words", "inputs": ["src"]},
        {"id": "pairs", "kind": "map", "kernel": "pair_one", "inputs": ["words"]},
        {"id": "counts", "kind": "reduce_by_key", "kernel": "sum", "inputs": ["pairs"]},
        {"id": "out", "kind": "sink", "output": "counts", "inputs": ["counts"]}
    ]}"#;

    #[test]
    fn json_wordcount_matches_builtin_shape() {
        let AnyProgram::Declarative(p) = parse_program(WC).unwrap() else { panic!("expected ops") };
        let builtin = corpus::wordcount().unwrap();
        let kinds = |q: &LogicalProgram| q.ops().iter().map(|o| o.kind()).collect::<Vec<_>>();
        assert_eq!(kinds(&p), kinds(&builtin));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_program("{\n  \"name\": \"x\",\n  \"ops\": [,]\n}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn unknown_kernel_and_forward_reference_are_rejected() {
        let bad_kernel = WC.replace("split_words", "nope");
        assert!(matches!(parse_program(&bad_kernel), Err(Error::InvalidArgument(_))));
        let fwd = r#"{"name": "f", "ops": [{"id": "m", "kind": "map", "kernel": "identity", "inputs": ["s"]}]}"#;
        assert!(parse_program(fwd).is_err());
    }

    #[test]
    fn topology_documents() {
        let text = r#"{"name": "merge",
            "spouts": [{"name": "a", "input": "a"}, {"name": "b", "input": "b"}],
            "bolts": [{"name": "m", "kernel": "forward", "consume_policy": "from_any"}],
            "edges": [{"from": "a", "to": "m"}, {"from": "b", "to": "m"}]}"#;
        let AnyProgram::Topological(t) = parse_program(text).unwrap() else { panic!("expected topology") };
        let g = t.as_semantic_graph().unwrap();
        assert!(g.contains_from_any());
    }

    #[test]
    fn values_from_json() {
        let v: serde_json::Value = serde_json::from_str(r#"[1, 2.5, "x", {"pair": [1, "y"]}]"#).unwrap();
        assert_eq!(
            value_from_json(&v).unwrap(),
            Value::List(vec![Value::Int(1), Value::Float(2.5), Value::text("x"), Value::pair(Value::Int(1), Value::text("y"))])
        );
    }
}
