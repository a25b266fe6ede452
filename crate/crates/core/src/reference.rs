//! Sequential reference evaluation.
//!
//! A direct, single-threaded reading of the operator semantics, kept
//! independent of the runtime's operator code so the two can be checked
//! against each other. Batch programs process each source collection token
//! as one round; micro-batch programs process chunk by chunk with only
//! `map_with_state` and `window` carrying state across chunks; tuple
//! programs fold the whole ordered stream.

use std::collections::{BTreeMap, VecDeque};

use crate::collection::{Multiset, StreamChunk, WindowSpec};
use crate::dataset::{InputData, Inputs, Outputs, SinkOutput};
use crate::graph::ConsumePolicy;
use crate::kernel::{Kernel, Predicate};
use crate::program::{LogicalProgram, OpParams, ProgramMode};
use crate::token::{Granularity, Token};
use crate::topology::{BoltInput, Emitter, Node, Topology};
use crate::value::{Record, Value};
use crate::{Error, Result};

pub fn group_by_key(records: &[Record]) -> Result<Vec<Record>> {
    let mut groups: BTreeMap<Value, Vec<Value>> = BTreeMap::new();
    for r in records {
        groups.entry(r.require_key("group_by_key")?.clone()).or_default().push(r.payload.clone());
    }
    Ok(groups
        .into_iter()
        .map(|(k, mut vs)| {
            vs.sort();
            Record::keyed(k, Value::List(vs))
        })
        .collect())
}

pub fn reduce_by_key(records: &[Record], f: &Kernel) -> Result<Vec<Record>> {
    let mut groups: BTreeMap<Value, Value> = BTreeMap::new();
    for r in records {
        let k = r.require_key("reduce_by_key")?;
        let next = match groups.get(k) {
            Some(acc) => f.combine(acc, &r.payload)?,
            None => r.payload.clone(),
        };
        groups.insert(k.clone(), next);
    }
    Ok(groups.into_iter().map(|(k, v)| Record::keyed(k, v)).collect())
}

pub fn join(left: &[Record], right: &[Record]) -> Result<Vec<Record>> {
    for r in right {
        r.require_key("join")?;
    }
    let mut out = Vec::new();
    for a in left {
        let k = a.require_key("join")?;
        for b in right.iter().filter(|b| b.key.as_ref() == Some(k)) {
            out.push(Record::keyed(k.clone(), Value::pair(a.payload.clone(), b.payload.clone())));
        }
    }
    Ok(out)
}

/// Per-key state of a `map_with_state` operator; unkeyed records share
/// the `None` cell.
#[derive(Debug, Clone, Default)]
struct KeyedState {
    cells: BTreeMap<Option<Value>, Value>,
}

impl KeyedState {
    fn step(&mut self, f: &Kernel, init: &Value, r: &Record) -> Result<Record> {
        let cell = self.cells.entry(r.key.clone()).or_insert_with(|| init.clone());
        let (next, out) = f.step(cell, r)?;
        *cell = next;
        Ok(out)
    }
}

#[derive(Debug, Clone, Default)]
struct WindowBuffer {
    seen: usize,
    items: VecDeque<Record>,
}

impl WindowBuffer {
    fn push(&mut self, spec: WindowSpec, r: &Record) -> Option<Record> {
        self.items.push_back(r.clone());
        if self.items.len() > spec.size {
            self.items.pop_front();
        }
        let pos = self.seen;
        self.seen += 1;
        spec.closes_window(pos).then(|| window_record(self.items.iter()))
    }
}

/// The record a window emits: unkeyed, payload = the window's items.
pub fn window_record<'a>(items: impl Iterator<Item = &'a Record>) -> Record {
    Record::unkeyed(Value::List(items.map(Record::to_value).collect()))
}

#[derive(Debug, Clone)]
enum OpState {
    None,
    Keyed(KeyedState),
    Window(WindowBuffer),
}

fn apply_elementwise(params: &OpParams, input: &[Record]) -> Result<Vec<Record>> {
    let mut out = Vec::with_capacity(input.len());
    for r in input {
        match params {
            OpParams::Map(k) => out.push(k.apply_map(r)?),
            OpParams::FlatMap(k) => out.extend(k.apply_flat_map(r)?),
            OpParams::Filter(k) => {
                if k.apply_filter(r)? {
                    out.push(r.clone());
                }
            }
            _ => unreachable!("not element-wise"),
        }
    }
    Ok(out)
}

/// Repeat `body` until `terminate` holds or `max` bodies ran. Returns the
/// final collection and the number of bodies executed.
pub fn iterate(body: &LogicalProgram, terminate: &Predicate, max: usize, input: Multiset) -> Result<(Multiset, usize)> {
    let src = body.input_names()[0].to_string();
    let dst = body.output_names()[0].to_string();
    let mut cur = input;
    let mut n = 0;
    while n < max && !terminate.test(&cur) {
        let mut inputs = Inputs::new();
        inputs.insert(src.clone(), InputData::Records(cur.into_records()));
        let out = evaluate(body, &inputs)?;
        cur = out.get(&dst).map(SinkOutput::bag).unwrap_or_default();
        n += 1;
    }
    Ok((cur, n))
}

/// Apply one op to one round of inputs, updating its state.
fn step_op(params: &OpParams, state: &mut OpState, ins: &[&[Record]]) -> Result<Vec<Record>> {
    Ok(match params {
        OpParams::Source { .. } | OpParams::Sink { .. } => ins[0].to_vec(),
        OpParams::Map(_) | OpParams::FlatMap(_) | OpParams::Filter(_) => apply_elementwise(params, ins[0])?,
        OpParams::GroupByKey => group_by_key(ins[0])?,
        OpParams::ReduceByKey(k) => reduce_by_key(ins[0], k)?,
        OpParams::Reduce(k) => {
            let v = k
                .fold(ins[0].iter().map(|r| &r.payload))?
                .ok_or_else(|| Error::EmptyInput("reduce over an empty collection".into()))?;
            vec![Record::unkeyed(v)]
        }
        OpParams::Join => join(ins[0], ins[1])?,
        OpParams::MapWithState { kernel, init } => {
            let OpState::Keyed(s) = state else { unreachable!() };
            ins[0].iter().map(|r| s.step(kernel, init, r)).collect::<Result<_>>()?
        }
        OpParams::Window(spec) => {
            let OpState::Window(w) = state else { unreachable!() };
            ins[0].iter().filter_map(|r| w.push(*spec, r)).collect()
        }
        OpParams::Iterate(spec) => {
            let input: Multiset = ins[0].iter().cloned().collect();
            iterate(&spec.body, &spec.terminate, spec.max_iterations, input)?.0.into_records()
        }
    })
}

fn initial_state(params: &OpParams) -> OpState {
    match params {
        OpParams::MapWithState { .. } => OpState::Keyed(KeyedState::default()),
        OpParams::Window(_) => OpState::Window(WindowBuffer::default()),
        _ => OpState::None,
    }
}

/// Evaluate a declarative program sequentially.
pub fn evaluate(prog: &LogicalProgram, inputs: &Inputs) -> Result<Outputs> {
    prog.validate()?;
    let granularity = match prog.mode {
        ProgramMode::Batch => Granularity::Collection,
        ProgramMode::MicroBatchStream => Granularity::MicroBatch,
        ProgramMode::TupleStream => Granularity::Tuple,
    };
    // Source token lists; each token is one round.
    let mut source_rounds: BTreeMap<&str, Vec<Vec<Record>>> = BTreeMap::new();
    for name in prog.input_names() {
        let data = inputs
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing input `{name}`")))?;
        let rounds = match granularity {
            // A tuple stream is one ordered round.
            Granularity::Tuple => vec![data.records()],
            g => data
                .tokens(g, prog.batch_size)?
                .into_iter()
                .map(Token::into_records)
                .collect(),
        };
        source_rounds.insert(name, rounds);
    }
    // From-all semantics: multi-source programs run as many rounds as the
    // shortest source provides.
    let rounds = source_rounds.values().map(Vec::len).min().unwrap_or(0);

    let mut states: Vec<OpState> = prog.ops().iter().map(|o| initial_state(&o.params)).collect();
    let mut outputs = Outputs::new();
    for name in prog.output_names() {
        outputs.insert(name.to_string(), SinkOutput::default());
    }
    for round in 0..rounds {
        let mut values: Vec<Vec<Record>> = Vec::with_capacity(prog.ops().len());
        for op in prog.ops() {
            let out = if let OpParams::Source { input } = &op.params {
                source_rounds[input.as_str()][round].clone()
            } else {
                let ins: Vec<&[Record]> = op.inputs.iter().map(|i| values[i.0].as_slice()).collect();
                step_op(&op.params, &mut states[op.id.0], &ins)?
            };
            if let OpParams::Sink { output } = &op.params {
                let sink = outputs.get_mut(output).expect("declared sink");
                match granularity {
                    Granularity::Collection => sink.tokens.push(Token::Collection(out.iter().cloned().collect())),
                    Granularity::MicroBatch => sink.tokens.push(Token::MicroBatch(StreamChunk {
                        seq: round as u64,
                        batch: out.iter().cloned().collect(),
                    })),
                    Granularity::Tuple => sink.tokens.extend(out.iter().cloned().map(Token::Tuple)),
                }
            }
            values.push(out);
        }
    }
    Ok(outputs)
}

/// Sequential simulation of a topology: spout tuples are injected spout by
/// spout in input order and processed to completion through a FIFO work
/// list. Bolts without successors feed implicit sinks named after them.
pub fn evaluate_topology(topo: &Topology, inputs: &Inputs) -> Result<Outputs> {
    let diags = topo.validate();
    if !diags.is_empty() {
        return Err(Error::invalid(diags.join("; ")));
    }
    let nodes = topo.nodes();
    let mut outputs = Outputs::new();
    let mut state: Vec<Value> = Vec::with_capacity(nodes.len());
    let mut pending: Vec<BTreeMap<usize, VecDeque<Record>>> = vec![BTreeMap::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        match n {
            Node::Bolt(b) => {
                state.push(b.initial_state.clone().unwrap_or(Value::List(vec![])));
                if topo.targets_of(crate::topology::NodeId(i)).is_empty() {
                    outputs.insert(b.name.clone(), SinkOutput::default());
                }
            }
            Node::Spout(_) => state.push(Value::List(vec![])),
        }
    }
    // Port numbers follow edge order per destination.
    let mut port_of_edge = Vec::with_capacity(topo.edges().len());
    let mut next_port: BTreeMap<usize, usize> = BTreeMap::new();
    for e in topo.edges() {
        let p = next_port.entry(e.to.0).or_insert(0);
        port_of_edge.push(*p);
        *p += 1;
    }

    let mut work: VecDeque<(usize, usize, Record)> = VecDeque::new();
    let deliver = |from: usize, target: Option<usize>, r: Record, work: &mut VecDeque<(usize, usize, Record)>| {
        let out: Vec<usize> = (0..topo.edges().len()).filter(|&i| topo.edges()[i].from.0 == from).collect();
        for (idx, &ei) in out.iter().enumerate() {
            if target.is_none_or(|t| t == idx) {
                work.push_back((topo.edges()[ei].to.0, port_of_edge[ei], r.clone()));
            }
        }
    };

    for (i, n) in nodes.iter().enumerate() {
        if let Node::Spout(s) = n {
            let data = inputs
                .get(&s.input)
                .ok_or_else(|| Error::invalid(format!("missing input `{}`", s.input)))?;
            for r in data.records() {
                deliver(i, None, r, &mut work);
            }
        }
    }
    let mut steps = 0usize;
    while let Some((node, port, r)) = work.pop_front() {
        steps += 1;
        if steps > 10_000_000 {
            return Err(Error::Stall("topology reference did not quiesce".into()));
        }
        let Node::Bolt(b) = &nodes[node] else { unreachable!("spouts have no inputs") };
        let ports = next_port[&node];
        let input = match b.consume_policy {
            ConsumePolicy::FromAny => BoltInput { tuples: vec![(port, r)] },
            ConsumePolicy::FromAll => {
                pending[node].entry(port).or_default().push_back(r);
                if (0..ports).any(|p| pending[node].get(&p).is_none_or(VecDeque::is_empty)) {
                    continue;
                }
                BoltInput {
                    tuples: (0..ports)
                        .map(|p| (p, pending[node].get_mut(&p).unwrap().pop_front().unwrap()))
                        .collect(),
                }
            }
        };
        let targets = topo.targets_of(crate::topology::NodeId(node));
        let mut em = Emitter::new(targets.clone());
        b.kernel.call(&input, &mut em, &mut state[node])?;
        for (target, rec) in em.into_emitted() {
            if targets.is_empty() {
                outputs.get_mut(&b.name).unwrap().tokens.push(Token::Tuple(rec));
            } else {
                deliver(node, target, rec, &mut work);
            }
        }
    }
    Ok(outputs)
}
