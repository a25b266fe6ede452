//! What one firing computes, and how its output is routed onto channels.
//!
//! Everything here is a pure function of the firing's input tokens, the
//! state token and the actor's firing index, so it can run on any worker.

use std::collections::BTreeMap;

use crate::collection::{Multiset, StreamChunk};
use crate::graph::{ConsumePolicy, ElementOp, Operator};
use crate::plan::{ChannelId, PlanActor, PlanOp, Routing};
use crate::token::{Envelope, Granularity, Tag, Token};
use crate::topology::{BoltInput, Emitter};
use crate::value::{partition_of, Record, Value};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Input {
    pub port: usize,
    pub channel: ChannelId,
    pub env: Envelope,
}

/// Tokens matched by a firing rule.
#[derive(Debug, Clone, Default)]
pub struct Firing {
    /// Per-actor firing number, from 0.
    pub index: u64,
    /// Ordered by port, then by channel within the port.
    pub inputs: Vec<Input>,
    pub state: Option<Envelope>,
    /// The next input token of a source actor.
    pub source: Option<Token>,
}

impl Firing {
    fn tag(&self) -> Option<Tag> {
        self.inputs.iter().find_map(|i| i.env.tag)
    }

    fn seq(&self) -> u64 {
        let from_input = self.inputs.iter().find_map(|i| match &i.env.token {
            Token::MicroBatch(c) => Some(c.seq),
            _ => None,
        });
        match (&self.source, from_input) {
            (Some(Token::MicroBatch(c)), _) => c.seq,
            (_, Some(s)) => s,
            _ => 0,
        }
    }

    fn port_records(&self, port: usize) -> Vec<Record> {
        self.inputs
            .iter()
            .filter(|i| i.port == port)
            .flat_map(|i| i.env.token.records().iter().cloned())
            .collect()
    }

    fn state_value(&self) -> Option<Value> {
        self.state.as_ref().map(|e| match &e.token {
            Token::Tuple(r) => r.payload.clone(),
            _ => Value::List(Vec::new()),
        })
    }
}

/// Records sent to all output groups (`group: None`) or one of them.
#[derive(Debug, Clone)]
struct Emission {
    records: Vec<Record>,
    group: Option<usize>,
    tag: Option<Tag>,
}

#[derive(Debug, Clone, Default)]
pub struct Fired {
    pub sends: Vec<(ChannelId, Token, Option<Tag>)>,
    pub state: Option<Value>,
    pub sink: Option<Token>,
}

fn encode_record(r: &Record) -> Value {
    Value::pair(Value::List(r.key.iter().cloned().collect()), r.payload.clone())
}

fn decode_record(v: &Value) -> Result<Record> {
    let (k, p) = v.as_pair().ok_or_else(|| Error::type_error(format!("malformed state entry `{v}`")))?;
    let key = k.as_list().and_then(|l| l.first().cloned());
    Ok(Record { key, payload: p.clone() })
}

fn decode_cells(state: &Value) -> Result<BTreeMap<Option<Value>, Value>> {
    let items = state.as_list().ok_or_else(|| Error::type_error(format!("malformed state `{state}`")))?;
    items
        .iter()
        .map(|e| decode_record(e).map(|r| (r.key, r.payload)))
        .collect()
}

fn encode_cells(cells: BTreeMap<Option<Value>, Value>) -> Value {
    Value::List(cells.into_iter().map(|(key, payload)| encode_record(&Record { key, payload })).collect())
}

fn run_chain(chain: &[ElementOp], input: Vec<Record>) -> Result<Vec<Record>> {
    let mut cur = input;
    for op in chain {
        let mut next = Vec::with_capacity(cur.len());
        for r in &cur {
            match op {
                ElementOp::Map(k) => next.push(k.apply_map(r)?),
                ElementOp::FlatMap(k) => next.extend(k.apply_flat_map(r)?),
                ElementOp::Filter(k) => {
                    if k.apply_filter(r)? {
                        next.push(r.clone());
                    }
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

fn group(records: Vec<Record>) -> Result<Vec<Record>> {
    let mut groups: BTreeMap<Value, Vec<Value>> = BTreeMap::new();
    for r in records {
        let k = r.require_key("group_by_key")?.clone();
        groups.entry(k).or_default().push(r.payload);
    }
    Ok(groups
        .into_iter()
        .map(|(k, mut vs)| {
            vs.sort();
            Record::keyed(k, Value::List(vs))
        })
        .collect())
}

fn operator(actor: &PlanActor, op: &Operator, f: &Firing, out: &mut Fired) -> Result<Vec<Emission>> {
    let tag = f.tag();
    let all = |records| vec![Emission { records, group: None, tag }];
    Ok(match op {
        Operator::Source { .. } => {
            let t = f.source.as_ref().ok_or_else(|| Error::invalid("source fired without a token"))?;
            all(t.records().to_vec())
        }
        Operator::Sink { .. } => {
            let records = f.port_records(0);
            out.sink = Some(match actor.granularity {
                Granularity::Collection => Token::Collection(records.into_iter().collect()),
                Granularity::MicroBatch => Token::MicroBatch(StreamChunk {
                    seq: f.seq(),
                    batch: records.into_iter().collect(),
                }),
                Granularity::Tuple => {
                    let r = records.into_iter().next().ok_or_else(|| Error::invalid("tuple sink fired without a tuple"))?;
                    Token::Tuple(r)
                }
            });
            Vec::new()
        }
        Operator::Elementwise(chain) => all(run_chain(chain, f.port_records(0))?),
        Operator::GroupByKey => all(group(f.port_records(0))?),
        Operator::ReduceByKey(k) => {
            let mut acc: BTreeMap<Value, Value> = BTreeMap::new();
            for r in f.port_records(0) {
                let key = r.require_key("reduce_by_key")?.clone();
                let v = match acc.remove(&key) {
                    Some(a) => k.combine(&a, &r.payload)?,
                    None => r.payload,
                };
                acc.insert(key, v);
            }
            all(acc.into_iter().map(|(key, v)| Record::keyed(key, v)).collect())
        }
        Operator::Reduce(k) => {
            let records = f.port_records(0);
            let v = k
                .fold(records.iter().map(|r| &r.payload))?
                .ok_or_else(|| Error::EmptyInput(format!("reduce `{}` over an empty collection", k.name())))?;
            all(vec![Record::unkeyed(v)])
        }
        Operator::Join => {
            let (left, right) = (f.port_records(0), f.port_records(1));
            let mut by_key: BTreeMap<&Value, Vec<&Value>> = BTreeMap::new();
            for r in &right {
                by_key.entry(r.require_key("join")?).or_default().push(&r.payload);
            }
            let mut joined = Vec::new();
            for l in &left {
                let k = l.require_key("join")?;
                for rv in by_key.get(k).into_iter().flatten() {
                    joined.push(Record::keyed(k.clone(), Value::pair(l.payload.clone(), (*rv).clone())));
                }
            }
            all(joined)
        }
        Operator::MapWithState { kernel, init } => {
            let mut cells = decode_cells(&f.state_value().unwrap_or(Value::List(Vec::new())))?;
            let mut emitted = Vec::new();
            for r in f.port_records(0) {
                let cell = cells.entry(r.key.clone()).or_insert_with(|| init.clone());
                let (next, rec) = kernel.step(cell, &r)?;
                *cell = next;
                emitted.push(rec);
            }
            out.state = Some(encode_cells(cells));
            all(emitted)
        }
        Operator::Window(spec) => {
            let state = f.state_value().unwrap_or_else(|| Value::pair(Value::Int(0), Value::List(Vec::new())));
            let (seen, items) = state
                .as_pair()
                .and_then(|(s, l)| Some((s.as_int()?, l.as_list()?)))
                .ok_or_else(|| Error::type_error(format!("malformed window state `{state}`")))?;
            let mut seen = seen as usize;
            let mut buf: Vec<Record> = items.iter().map(decode_record).collect::<Result<_>>()?;
            let mut windows = Vec::new();
            for r in f.port_records(0) {
                buf.push(r);
                if buf.len() > spec.size {
                    buf.remove(0);
                }
                if spec.closes_window(seen) {
                    windows.push(Record::unkeyed(Value::List(buf.iter().map(Record::to_value).collect())));
                }
                seen += 1;
            }
            out.state = Some(Value::pair(
                Value::Int(seen as i64),
                Value::List(buf.iter().map(encode_record).collect()),
            ));
            all(windows)
        }
        Operator::Bolt { kernel, initial_state } => {
            let tuples = f.inputs.iter().map(|i| (i.port, i.env.token.records()[0].clone())).collect();
            let targets = actor.outputs.iter().map(|g| g.target.clone()).collect();
            let mut em = Emitter::new(targets);
            let mut state = f.state_value().unwrap_or(Value::List(Vec::new()));
            kernel.call(&BoltInput { tuples }, &mut em, &mut state)?;
            if initial_state.is_some() {
                out.state = Some(state);
            }
            em.into_emitted()
                .into_iter()
                .map(|(group, r)| Emission { records: vec![r], group, tag })
                .collect()
        }
        Operator::Iterate { .. } => return Err(Error::Unsupported("iterate actors are expanded before execution".into())),
    })
}

/// Execute one firing of `actor`. `local` is runtime-private bookkeeping
/// carried between firings (the loop controller's admission counter).
pub fn execute(actor: &PlanActor, f: &Firing, local: &mut Value) -> Result<Fired> {
    let mut out = Fired::default();
    let emissions = match &actor.op {
        PlanOp::Operator(op) => operator(actor, op, f, &mut out)?,
        PlanOp::Scatter | PlanOp::Gather => {
            let records = f.inputs.iter().flat_map(|i| i.env.token.records().iter().cloned()).collect();
            vec![Emission { records, group: None, tag: f.tag() }]
        }
        PlanOp::LoopController { terminate, max_iterations } => {
            let input = &f.inputs[0];
            let tag = match input.env.tag {
                // A fresh token from upstream gets the next tag id.
                None => {
                    let id = local.as_int().unwrap_or(0);
                    *local = Value::Int(id + 1);
                    Tag { id: id as u64, iteration: 0 }
                }
                Some(t) => Tag { id: t.id, iteration: t.iteration + 1 },
            };
            let records = input.env.token.records().to_vec();
            let current: Multiset = records.iter().cloned().collect();
            if tag.iteration as usize >= *max_iterations || terminate.test(&current) {
                (1..actor.outputs.len())
                    .map(|g| Emission { records: records.clone(), group: Some(g), tag: None })
                    .collect()
            } else {
                vec![Emission { records, group: Some(0), tag: Some(tag) }]
            }
        }
        PlanOp::Driver { .. } => return Err(Error::Unsupported("driver firings run in the runtime".into())),
    };
    route(actor, f, emissions, &mut out);
    Ok(out)
}

/// Route `records` to every output group of `actor`, as if a firing had
/// produced them. Used for driver results.
pub fn emit_all(actor: &PlanActor, f: &Firing, records: Vec<Record>) -> Fired {
    let mut out = Fired::default();
    route(actor, f, vec![Emission { records, group: None, tag: f.tag() }], &mut out);
    out
}

/// Records arriving on `port`, in input order.
pub fn port_records(f: &Firing, port: usize) -> Vec<Record> {
    f.port_records(port)
}

fn make_token(gran: Granularity, seq: u64, records: Vec<Record>) -> Token {
    match gran {
        Granularity::Collection => Token::Collection(records.into_iter().collect()),
        Granularity::MicroBatch => Token::MicroBatch(StreamChunk {
            seq,
            batch: records.into_iter().collect(),
        }),
        Granularity::Tuple => unreachable!("tuples are routed one by one"),
    }
}

fn route(actor: &PlanActor, f: &Firing, emissions: Vec<Emission>, out: &mut Fired) {
    let gran = actor.granularity;
    if gran == Granularity::Tuple {
        let mut unkeyed = 0u64;
        for em in emissions {
            for r in em.records {
                for (gi, g) in actor.outputs.iter().enumerate() {
                    if em.group.is_some_and(|x| x != gi) {
                        continue;
                    }
                    let q = g.channels.len();
                    let idx = match g.routing {
                        Routing::Single => 0,
                        Routing::Hash => r.key.as_ref().map_or(0, |k| partition_of(k, q)),
                        Routing::Scatter => match &r.key {
                            Some(k) => partition_of(k, q),
                            None => ((f.index + unkeyed) % q as u64) as usize,
                        },
                        Routing::TagModulo => em.tag.map_or(0, |t| (t.id % q as u64) as usize),
                    };
                    out.sends.push((g.channels[idx], Token::Tuple(r.clone()), em.tag));
                }
                if r.key.is_none() {
                    unkeyed += 1;
                }
            }
        }
        return;
    }
    // Collection and micro-batch: one token per channel per firing, so
    // from-all consumers stay in lockstep.
    let seq = f.seq();
    for (gi, g) in actor.outputs.iter().enumerate() {
        let mine: Vec<&Emission> = emissions.iter().filter(|e| e.group.is_none_or(|x| x == gi)).collect();
        if mine.is_empty() {
            continue;
        }
        let tag = mine.iter().find_map(|e| e.tag);
        let records: Vec<Record> = mine.iter().flat_map(|e| e.records.iter().cloned()).collect();
        let q = g.channels.len();
        match g.routing {
            Routing::Single => out.sends.push((g.channels[0], make_token(gran, seq, records), tag)),
            Routing::TagModulo => {
                let idx = tag.map_or(0, |t| (t.id % q as u64) as usize);
                out.sends.push((g.channels[idx], make_token(gran, seq, records), tag));
            }
            Routing::Hash | Routing::Scatter => {
                let mut buckets: Vec<Vec<Record>> = vec![Vec::new(); q];
                let mut rr = 0usize;
                for r in records {
                    let idx = match (&r.key, g.routing) {
                        (Some(k), _) => partition_of(k, q),
                        (None, Routing::Scatter) => {
                            rr += 1;
                            (rr - 1) % q
                        }
                        (None, _) => 0,
                    };
                    buckets[idx].push(r);
                }
                for (i, b) in buckets.into_iter().enumerate() {
                    out.sends.push((g.channels[i], make_token(gran, seq, b), tag));
                }
            }
        }
    }
}

/// Whether a from-all actor needs every input channel, or any one.
pub fn needs_all(actor: &PlanActor) -> bool {
    actor.consume == ConsumePolicy::FromAll
}
