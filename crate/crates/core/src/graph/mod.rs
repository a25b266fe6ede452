//! Semantic dataflow graphs: actors are operators, edges are data
//! dependencies, and parallelism is only implicit.

mod dot;
pub(crate) use dot::escape;
mod fuse;
mod translate;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::collection::WindowSpec;
use crate::kernel::{Kernel, Predicate};
use crate::token::Granularity;
use crate::topology::BoltKernel;
use crate::value::Value;
use crate::{Error, Result};

pub use dot::to_dot;
pub use fuse::{fuse, FusionHints};
pub use translate::translate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActorId(pub usize);

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsumePolicy {
    /// Fire only when every input channel holds a token.
    FromAll,
    /// Fire on a token from any one non-empty input channel.
    FromAny,
}

impl ConsumePolicy {
    pub fn name(self) -> &'static str {
        match self {
            ConsumePolicy::FromAll => "from-all",
            ConsumePolicy::FromAny => "from-any",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputPolicy {
    Broadcast,
    HashPartition,
    Forward,
}

impl OutputPolicy {
    pub fn name(self) -> &'static str {
        match self {
            OutputPolicy::Broadcast => "broadcast",
            OutputPolicy::HashPartition => "hash",
            OutputPolicy::Forward => "forward",
        }
    }
}

/// One step of an element-wise chain; fusion concatenates chains.
#[derive(Debug, Clone)]
pub enum ElementOp {
    Map(Kernel),
    FlatMap(Kernel),
    Filter(Kernel),
}

impl ElementOp {
    pub fn kernel(&self) -> &Kernel {
        match self {
            ElementOp::Map(k) | ElementOp::FlatMap(k) | ElementOp::Filter(k) => k,
        }
    }

    pub fn label(&self) -> String {
        let kind = match self {
            ElementOp::Map(_) => "map",
            ElementOp::FlatMap(_) => "flat_map",
            ElementOp::Filter(_) => "filter",
        };
        format!("{kind}:{}", self.kernel().name())
    }
}

/// What an actor computes.
#[derive(Debug, Clone)]
pub enum Operator {
    Source { input: String },
    Sink { output: String },
    Elementwise(Vec<ElementOp>),
    GroupByKey,
    ReduceByKey(Kernel),
    Reduce(Kernel),
    Join,
    MapWithState { kernel: Kernel, init: Value },
    Window(WindowSpec),
    Bolt { kernel: BoltKernel, initial_state: Option<Value> },
    /// Body lives in the actor's `hierarchical_body`.
    Iterate { terminate: Predicate, max_iterations: usize },
}

impl Operator {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Operator::Source { .. } => "source",
            Operator::Sink { .. } => "sink",
            Operator::Elementwise(_) => "elementwise",
            Operator::GroupByKey => "group_by_key",
            Operator::ReduceByKey(_) => "reduce_by_key",
            Operator::Reduce(_) => "reduce",
            Operator::Join => "join",
            Operator::MapWithState { .. } => "map_with_state",
            Operator::Window(_) => "window",
            Operator::Bolt { .. } => "bolt",
            Operator::Iterate { .. } => "iterate",
        }
    }

    pub fn kernel_name(&self) -> Option<String> {
        match self {
            Operator::Elementwise(ops) => Some(ops.iter().map(|o| o.kernel().name()).collect::<Vec<_>>().join("∘")),
            Operator::ReduceByKey(k) | Operator::Reduce(k) | Operator::MapWithState { kernel: k, .. } => {
                Some(k.name().to_string())
            }
            Operator::Bolt { kernel, .. } => Some(kernel.name().to_string()),
            Operator::Iterate { terminate, .. } => Some(terminate.name().to_string()),
            _ => None,
        }
    }

    pub fn is_shuffle(&self) -> bool {
        matches!(self, Operator::GroupByKey | Operator::ReduceByKey(_) | Operator::Join)
    }

    /// Operators whose output depends on the arrival order of their input.
    pub fn is_order_sensitive(&self) -> bool {
        matches!(self, Operator::MapWithState { .. } | Operator::Window(_))
    }
}

#[derive(Debug, Clone)]
pub struct SemanticActor {
    pub id: ActorId,
    pub label: String,
    pub operator: Operator,
    pub granularity: Granularity,
    pub consume_policy: ConsumePolicy,
    pub stateful: bool,
    pub hierarchical_body: Option<Box<SemanticGraph>>,
    /// Replication requested by the author (topology bolts).
    pub parallelism_hint: Option<usize>,
    /// Declared able to stop a feedback cycle (topology bolts).
    pub loop_exit: bool,
}

impl SemanticActor {
    pub fn new(id: ActorId, label: impl Into<String>, operator: Operator, granularity: Granularity) -> Self {
        let stateful = matches!(
            operator,
            Operator::MapWithState { .. } | Operator::Window(_) | Operator::Bolt { initial_state: Some(_), .. }
        );
        SemanticActor {
            id,
            label: label.into(),
            operator,
            granularity,
            consume_policy: ConsumePolicy::FromAll,
            stateful,
            hierarchical_body: None,
            parallelism_hint: None,
            loop_exit: false,
        }
    }

    pub fn is_source(&self) -> bool {
        matches!(self.operator, Operator::Source { .. })
    }

    pub fn is_sink(&self) -> bool {
        matches!(self.operator, Operator::Sink { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticEdge {
    pub from: ActorId,
    pub to: ActorId,
    /// Input port on the consumer (join: 0 = left, 1 = right).
    pub port: usize,
    pub policy: OutputPolicy,
    /// Feedback edge closing a cycle.
    pub is_loop: bool,
}

#[derive(Debug, Clone)]
pub struct SemanticGraph {
    pub name: String,
    pub actors: Vec<SemanticActor>,
    pub edges: Vec<SemanticEdge>,
    /// Records per chunk for micro-batch sources fed whole record lists.
    pub batch_size: usize,
}

impl SemanticGraph {
    pub fn new(name: impl Into<String>) -> Self {
        SemanticGraph {
            name: name.into(),
            actors: Vec::new(),
            edges: Vec::new(),
            batch_size: crate::program::DEFAULT_BATCH_SIZE,
        }
    }

    pub fn actor(&self, id: ActorId) -> &SemanticActor {
        &self.actors[id.0]
    }

    pub fn incoming(&self, id: ActorId) -> impl Iterator<Item = &SemanticEdge> {
        self.edges.iter().filter(move |e| e.to == id)
    }

    pub fn outgoing(&self, id: ActorId) -> impl Iterator<Item = &SemanticEdge> {
        self.edges.iter().filter(move |e| e.from == id)
    }

    pub fn sources(&self) -> Vec<ActorId> {
        self.actors.iter().filter(|a| a.is_source()).map(|a| a.id).collect()
    }

    pub fn sinks(&self) -> Vec<ActorId> {
        self.actors.iter().filter(|a| a.is_sink()).map(|a| a.id).collect()
    }

    /// Summary output policy of an actor: hash if any outgoing edge is
    /// hashed, forward for a single consumer, broadcast otherwise.
    pub fn output_policy(&self, id: ActorId) -> OutputPolicy {
        let out: Vec<_> = self.outgoing(id).collect();
        if out.iter().any(|e| e.policy == OutputPolicy::HashPartition) {
            OutputPolicy::HashPartition
        } else if out.len() == 1 {
            OutputPolicy::Forward
        } else {
            OutputPolicy::Broadcast
        }
    }

    pub fn contains_from_any(&self) -> bool {
        self.actors.iter().any(|a| {
            a.consume_policy == ConsumePolicy::FromAny
                || a.hierarchical_body.as_ref().is_some_and(|b| b.contains_from_any())
        })
    }

    /// Actor ids in topological order over non-loop edges.
    pub fn topo_order(&self) -> Result<Vec<ActorId>> {
        let n = self.actors.len();
        let mut indeg = vec![0usize; n];
        for e in self.edges.iter().filter(|e| !e.is_loop) {
            indeg[e.to.0] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(ActorId(i));
            for e in self.edges.iter().filter(|e| !e.is_loop && e.from.0 == i) {
                indeg[e.to.0] -= 1;
                if indeg[e.to.0] == 0 {
                    queue.push_back(e.to.0);
                }
            }
        }
        if order.len() != n {
            return Err(Error::invalid(format!(
                "graph `{}` has a cycle not marked as a loop edge",
                self.name
            )));
        }
        Ok(order)
    }

    /// Structural invariants: ids dense, edges in range, granularity
    /// agreement, from-any only on tuples, acyclic outside loop edges, and
    /// single-entry/single-exit hierarchical bodies.
    pub fn check(&self) -> Result<()> {
        for (i, a) in self.actors.iter().enumerate() {
            if a.id.0 != i {
                return Err(Error::invalid(format!("actor id {} at position {i}", a.id)));
            }
            if a.consume_policy == ConsumePolicy::FromAny && a.granularity != Granularity::Tuple {
                return Err(Error::invalid(format!("`{}` is from-any but consumes {}", a.label, a.granularity.name())));
            }
            if let Some(body) = &a.hierarchical_body {
                if body.sources().len() != 1 || body.sinks().len() != 1 {
                    return Err(Error::invalid(format!("hierarchical actor `{}` needs one body input and output", a.label)));
                }
                if self.incoming(a.id).count() != 1 {
                    return Err(Error::invalid(format!("hierarchical actor `{}` needs exactly one input", a.label)));
                }
                body.check()?;
            }
        }
        for e in &self.edges {
            if e.from.0 >= self.actors.len() || e.to.0 >= self.actors.len() {
                return Err(Error::invalid(format!("edge {}->{} references a missing actor", e.from, e.to)));
            }
            let (a, b) = (self.actor(e.from), self.actor(e.to));
            if a.granularity != b.granularity {
                return Err(Error::type_error(format!(
                    "edge `{}` -> `{}` joins {} with {}",
                    a.label,
                    b.label,
                    a.granularity.name(),
                    b.granularity.name()
                )));
            }
        }
        self.topo_order().map(|_| ())
    }

    /// Serializable summary, mirroring the program JSON plus annotations.
    pub fn dump(&self) -> GraphDump {
        GraphDump {
            name: self.name.clone(),
            actors: self
                .actors
                .iter()
                .map(|a| ActorDump {
                    id: a.id.0,
                    label: a.label.clone(),
                    kind: a.operator.kind_name().to_string(),
                    kernel: a.operator.kernel_name(),
                    granularity: a.granularity,
                    consume_policy: a.consume_policy,
                    output_policy: self.output_policy(a.id),
                    stateful: a.stateful,
                    body: a.hierarchical_body.as_ref().map(|b| Box::new(b.dump())),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDump {
                    from: e.from.0,
                    to: e.to.0,
                    port: e.port,
                    policy: e.policy,
                    is_loop: e.is_loop,
                })
                .collect(),
        }
    }

    /// Number of actors per operator kind name; handy for assertions.
    pub fn kind_histogram(&self) -> BTreeMap<&'static str, usize> {
        let mut h = BTreeMap::new();
        for a in &self.actors {
            *h.entry(a.operator.kind_name()).or_insert(0) += 1;
        }
        h
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphDump {
    pub name: String,
    pub actors: Vec<ActorDump>,
    pub edges: Vec<EdgeDump>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActorDump {
    pub id: usize,
    pub label: String,
    pub kind: String,
    pub kernel: Option<String>,
    pub granularity: Granularity,
    pub consume_policy: ConsumePolicy,
    pub output_policy: OutputPolicy,
    pub stateful: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body: Option<Box<GraphDump>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeDump {
    pub from: usize,
    pub to: usize,
    pub port: usize,
    pub policy: OutputPolicy,
    pub is_loop: bool,
}
