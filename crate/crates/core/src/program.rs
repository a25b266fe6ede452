//! Declarative programs: an operator algebra over collections and streams.
//!
//! A [`LogicalProgram`] only describes a computation. It is translated into a
//! semantic graph, expanded into a parallel plan and executed by a runtime,
//! or evaluated directly by the sequential reference evaluator.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::collection::WindowSpec;
use crate::kernel::{Kernel, KernelFn, Predicate};
use crate::value::Value;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramMode {
    Batch,
    MicroBatchStream,
    TupleStream,
}

impl ProgramMode {
    pub fn is_stream(self) -> bool {
        !matches!(self, ProgramMode::Batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpId(pub usize);

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "op{}", self.0)
    }
}

/// Operator kind tag, without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Source,
    Map,
    FlatMap,
    Filter,
    GroupByKey,
    ReduceByKey,
    Reduce,
    Join,
    MapWithState,
    Window,
    Iterate,
    Sink,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Source => "source",
            OpKind::Map => "map",
            OpKind::FlatMap => "flat_map",
            OpKind::Filter => "filter",
            OpKind::GroupByKey => "group_by_key",
            OpKind::ReduceByKey => "reduce_by_key",
            OpKind::Reduce => "reduce",
            OpKind::Join => "join",
            OpKind::MapWithState => "map_with_state",
            OpKind::Window => "window",
            OpKind::Iterate => "iterate",
            OpKind::Sink => "sink",
        }
    }

    /// Operators that redistribute records by key between replicas.
    pub fn is_shuffle(self) -> bool {
        matches!(self, OpKind::GroupByKey | OpKind::ReduceByKey | OpKind::Join)
    }
}

#[derive(Debug, Clone)]
pub enum OpParams {
    Source { input: String },
    Map(Kernel),
    FlatMap(Kernel),
    Filter(Kernel),
    GroupByKey,
    ReduceByKey(Kernel),
    Reduce(Kernel),
    Join,
    MapWithState { kernel: Kernel, init: Value },
    Window(WindowSpec),
    Iterate(IterateSpec),
    Sink { output: String },
}

#[derive(Debug, Clone)]
pub struct IterateSpec {
    pub body: Box<LogicalProgram>,
    pub terminate: Predicate,
    pub max_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct LogicalOp {
    pub id: OpId,
    pub label: String,
    pub params: OpParams,
    pub inputs: Vec<OpId>,
}

impl LogicalOp {
    pub fn kind(&self) -> OpKind {
        match &self.params {
            OpParams::Source { .. } => OpKind::Source,
            OpParams::Map(_) => OpKind::Map,
            OpParams::FlatMap(_) => OpKind::FlatMap,
            OpParams::Filter(_) => OpKind::Filter,
            OpParams::GroupByKey => OpKind::GroupByKey,
            OpParams::ReduceByKey(_) => OpKind::ReduceByKey,
            OpParams::Reduce(_) => OpKind::Reduce,
            OpParams::Join => OpKind::Join,
            OpParams::MapWithState { .. } => OpKind::MapWithState,
            OpParams::Window(_) => OpKind::Window,
            OpParams::Iterate(_) => OpKind::Iterate,
            OpParams::Sink { .. } => OpKind::Sink,
        }
    }

    pub fn kernel(&self) -> Option<&Kernel> {
        match &self.params {
            OpParams::Map(k)
            | OpParams::FlatMap(k)
            | OpParams::Filter(k)
            | OpParams::ReduceByKey(k)
            | OpParams::Reduce(k)
            | OpParams::MapWithState { kernel: k, .. } => Some(k),
            _ => None,
        }
    }
}

/// An acyclic operator graph with named inputs (sources) and outputs (sinks).
#[derive(Debug, Clone)]
pub struct LogicalProgram {
    pub name: String,
    pub mode: ProgramMode,
    /// Records per chunk when a record input feeds a micro-batch program.
    pub batch_size: usize,
    ops: Vec<LogicalOp>,
}

pub const DEFAULT_BATCH_SIZE: usize = 8;

impl LogicalProgram {
    pub fn new(name: impl Into<String>, mode: ProgramMode) -> Self {
        LogicalProgram {
            name: name.into(),
            mode,
            batch_size: DEFAULT_BATCH_SIZE,
            ops: Vec::new(),
        }
    }

    pub fn ops(&self) -> &[LogicalOp] {
        &self.ops
    }

    pub fn op(&self, id: OpId) -> Option<&LogicalOp> {
        self.ops.get(id.0)
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.ops
            .iter()
            .filter_map(|o| match &o.params {
                OpParams::Source { input } => Some(input.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.ops
            .iter()
            .filter_map(|o| match &o.params {
                OpParams::Sink { output } => Some(output.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Ids of ops consuming `id`'s output, in op order.
    pub fn successors(&self, id: OpId) -> Vec<OpId> {
        self.ops.iter().filter(|o| o.inputs.contains(&id)).map(|o| o.id).collect()
    }

    fn check_upstream(&self, id: OpId) -> Result<()> {
        match self.ops.get(id.0) {
            None => Err(Error::invalid(format!("unknown upstream {id}"))),
            Some(op) if op.kind() == OpKind::Sink => {
                Err(Error::invalid(format!("sink {id} cannot feed another operator")))
            }
            Some(_) => Ok(()),
        }
    }

    fn check_kernel(kernel: &Kernel, want: fn(&KernelFn) -> bool, kind: &str) -> Result<()> {
        if want(kernel.func()) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "kernel `{}` is a {} kernel, {kind} needs a different kind",
                kernel.name(),
                kernel.func().kind_name()
            )))
        }
    }

    fn require_mode(&self, op: OpKind, ok: bool, why: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMode(format!("{} {why} (program mode {:?})", op.name(), self.mode)))
        }
    }

    fn push(&mut self, params: OpParams, inputs: Vec<OpId>, label: String) -> OpId {
        let id = OpId(self.ops.len());
        self.ops.push(LogicalOp { id, label, params, inputs });
        id
    }

    pub fn source(&mut self, input: &str) -> Result<OpId> {
        if self.input_names().contains(&input) {
            return Err(Error::invalid(format!("duplicate source `{input}`")));
        }
        Ok(self.push(OpParams::Source { input: input.to_string() }, vec![], format!("source:{input}")))
    }

    pub fn sink(&mut self, upstream: OpId, output: &str) -> Result<OpId> {
        self.check_upstream(upstream)?;
        if self.output_names().contains(&output) {
            return Err(Error::invalid(format!("duplicate sink `{output}`")));
        }
        Ok(self.push(OpParams::Sink { output: output.to_string() }, vec![upstream], format!("sink:{output}")))
    }

    /// `{f(v) : v in a}`.
    pub fn map(&mut self, upstream: OpId, f: Kernel) -> Result<OpId> {
        self.check_upstream(upstream)?;
        Self::check_kernel(&f, |k| matches!(k, KernelFn::Map(_)), "map")?;
        let label = format!("map:{}", f.name());
        Ok(self.push(OpParams::Map(f), vec![upstream], label))
    }

    pub fn flat_map(&mut self, upstream: OpId, f: Kernel) -> Result<OpId> {
        self.check_upstream(upstream)?;
        Self::check_kernel(&f, |k| matches!(k, KernelFn::FlatMap(_)), "flat_map")?;
        let label = format!("flat_map:{}", f.name());
        Ok(self.push(OpParams::FlatMap(f), vec![upstream], label))
    }

    pub fn filter(&mut self, upstream: OpId, f: Kernel) -> Result<OpId> {
        self.check_upstream(upstream)?;
        Self::check_kernel(&f, |k| matches!(k, KernelFn::Filter(_)), "filter")?;
        let label = format!("filter:{}", f.name());
        Ok(self.push(OpParams::Filter(f), vec![upstream], label))
    }

    fn collection_only(&self, op: OpKind) -> Result<()> {
        self.require_mode(op, self.mode != ProgramMode::TupleStream, "needs whole collections or micro-batches")
    }

    /// `{(k, {v : (k, v) in a})}`.
    pub fn group_by_key(&mut self, upstream: OpId) -> Result<OpId> {
        self.check_upstream(upstream)?;
        self.collection_only(OpKind::GroupByKey)?;
        Ok(self.push(OpParams::GroupByKey, vec![upstream], "group_by_key".into()))
    }

    pub fn reduce_by_key(&mut self, upstream: OpId, f: Kernel) -> Result<OpId> {
        self.check_upstream(upstream)?;
        self.collection_only(OpKind::ReduceByKey)?;
        Self::check_kernel(&f, |k| matches!(k, KernelFn::Reduce(_)), "reduce_by_key")?;
        let label = format!("reduce_by_key:{}", f.name());
        Ok(self.push(OpParams::ReduceByKey(f), vec![upstream], label))
    }

    pub fn reduce(&mut self, upstream: OpId, f: Kernel) -> Result<OpId> {
        self.check_upstream(upstream)?;
        self.collection_only(OpKind::Reduce)?;
        Self::check_kernel(&f, |k| matches!(k, KernelFn::Reduce(_)), "reduce")?;
        let label = format!("reduce:{}", f.name());
        Ok(self.push(OpParams::Reduce(f), vec![upstream], label))
    }

    /// `{(k, (va, vb)) : (k, va) in a, (k, vb) in b}`.
    pub fn join(&mut self, left: OpId, right: OpId) -> Result<OpId> {
        self.check_upstream(left)?;
        self.check_upstream(right)?;
        if self.mode.is_stream() {
            return Err(Error::UnsupportedInStream("join is only defined on whole collections".into()));
        }
        Ok(self.push(OpParams::Join, vec![left, right], "join".into()))
    }

    pub fn map_with_state(&mut self, upstream: OpId, f: Kernel, init: Value) -> Result<OpId> {
        self.check_upstream(upstream)?;
        self.require_mode(OpKind::MapWithState, self.mode.is_stream(), "needs a stream mode")?;
        Self::check_kernel(&f, |k| matches!(k, KernelFn::Stateful(_)), "map_with_state")?;
        let label = format!("map_with_state:{}", f.name());
        Ok(self.push(OpParams::MapWithState { kernel: f, init }, vec![upstream], label))
    }

    pub fn window(&mut self, upstream: OpId, spec: WindowSpec) -> Result<OpId> {
        self.check_upstream(upstream)?;
        spec.validate()?;
        self.require_mode(OpKind::Window, self.mode.is_stream(), "needs a stream mode")?;
        let label = format!("window:{}/{}", spec.size, spec.slide);
        Ok(self.push(OpParams::Window(spec), vec![upstream], label))
    }

    /// Repeat `body` on the collection until `terminate` holds or
    /// `max_iterations` bodies have run. The body must be a batch program
    /// with exactly one source and one sink.
    pub fn iterate(
        &mut self,
        upstream: OpId,
        body: LogicalProgram,
        terminate: Predicate,
        max_iterations: usize,
    ) -> Result<OpId> {
        self.check_upstream(upstream)?;
        if max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        self.require_mode(OpKind::Iterate, self.mode == ProgramMode::Batch, "needs batch mode")?;
        if body.mode != ProgramMode::Batch {
            return Err(Error::invalid("iteration body must be a batch program"));
        }
        if body.input_names().len() != 1 || body.output_names().len() != 1 {
            return Err(Error::invalid("iteration body needs exactly one source and one sink"));
        }
        body.validate()?;
        let label = format!("iterate:{}", terminate.name());
        Ok(self.push(
            OpParams::Iterate(IterateSpec {
                body: Box::new(body),
                terminate,
                max_iterations,
            }),
            vec![upstream],
            label,
        ))
    }

    /// Structural checks on a finished program.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.output_names().is_empty() {
            return Err(Error::invalid(format!("program `{}` has no sink", self.name)));
        }
        for op in &self.ops {
            let want = match op.kind() {
                OpKind::Source => 0,
                OpKind::Join => 2,
                _ => 1,
            };
            if op.inputs.len() != want {
                return Err(Error::invalid(format!(
                    "{} `{}` has {} inputs, expected {want}",
                    op.kind().name(),
                    op.label,
                    op.inputs.len()
                )));
            }
            // Builders only reference earlier ops, so the op list is a
            // topological order and the graph is acyclic.
            if op.inputs.iter().any(|i| i.0 >= op.id.0) {
                return Err(Error::invalid(format!("op {} references a later op", op.id)));
            }
        }
        let mut consumed = BTreeSet::new();
        for op in &self.ops {
            consumed.extend(op.inputs.iter().copied());
        }
        if let Some(dangling) = self.ops.iter().find(|o| o.kind() != OpKind::Sink && !consumed.contains(&o.id)) {
            return Err(Error::invalid(format!("`{}` has no consumer; add a sink", dangling.label)));
        }
        Ok(())
    }

    pub fn contains(&self, kind: OpKind) -> bool {
        self.ops.iter().any(|o| o.kind() == kind)
    }
}

/// Forward every operator to each micro-batch: `op(a) = [op(a1), op(a2), ...]`.
pub fn lift_to_stream(prog: &LogicalProgram) -> Result<LogicalProgram> {
    if prog.mode != ProgramMode::Batch {
        return Err(Error::InvalidMode(format!("lift_to_stream expects a batch program, got {:?}", prog.mode)));
    }
    if prog.contains(OpKind::Join) {
        return Err(Error::UnsupportedInStream("join has no chunk-wise stream semantics".into()));
    }
    if prog.contains(OpKind::Iterate) {
        return Err(Error::UnsupportedInStream("iterate cannot be lifted to a stream".into()));
    }
    let mut lifted = prog.clone();
    lifted.mode = ProgramMode::MicroBatchStream;
    lifted.name = format!("{}-stream", prog.name);
    Ok(lifted)
}
