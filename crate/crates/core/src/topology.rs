//! Topological programs: explicit graphs of spouts and bolts.
//!
//! Spouts read a named input one tuple at a time. Bolts run a per-tuple
//! kernel that may keep local state and emit any number of records to any
//! subset of their outgoing edges. Feedback edges are allowed as long as
//! every cycle contains a bolt declared as a loop exit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{ActorId, ConsumePolicy, Operator, OutputPolicy, SemanticActor, SemanticEdge, SemanticGraph};
use crate::kernel::KernelResult;
use crate::token::Granularity;
use crate::value::{Record, Value};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// What one bolt activation sees: a single `(port, record)` for from-any
/// bolts, one record per input port (in port order) for from-all bolts.
#[derive(Debug, Clone, PartialEq)]
pub struct BoltInput {
    pub tuples: Vec<(usize, Record)>,
}

/// Collects a bolt activation's output. Targets are the bolt's outgoing
/// edges in connection order.
#[derive(Debug, Clone, Default)]
pub struct Emitter {
    targets: Vec<String>,
    emitted: Vec<(Option<usize>, Record)>,
}

impl Emitter {
    pub fn new(targets: Vec<String>) -> Self {
        Emitter {
            targets,
            emitted: Vec::new(),
        }
    }

    /// Names of the downstream nodes, indexed like `emit_to`.
    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    /// Send to every outgoing edge.
    pub fn emit(&mut self, r: Record) {
        self.emitted.push((None, r));
    }

    pub fn emit_to(&mut self, target: usize, r: Record) {
        self.emitted.push((Some(target), r));
    }

    pub fn emit_to_named(&mut self, name: &str, r: Record) -> KernelResult<()> {
        let i = self
            .targets
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| format!("no outgoing edge to `{name}`"))?;
        self.emit_to(i, r);
        Ok(())
    }

    pub fn into_emitted(self) -> Vec<(Option<usize>, Record)> {
        self.emitted
    }
}

pub type BoltFn = Arc<dyn Fn(&BoltInput, &mut Emitter, &mut Value) -> KernelResult<()> + Send + Sync>;

#[derive(Clone)]
pub struct BoltKernel {
    name: String,
    func: BoltFn,
}

impl fmt::Debug for BoltKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bolt:{}", self.name)
    }
}

impl BoltKernel {
    pub fn new(
        name: &str,
        f: impl Fn(&BoltInput, &mut Emitter, &mut Value) -> KernelResult<()> + Send + Sync + 'static,
    ) -> Self {
        BoltKernel {
            name: name.to_string(),
            func: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Run one activation. `state` is the bolt's local state (a scratch
    /// value for stateless bolts).
    pub fn call(&self, input: &BoltInput, emitter: &mut Emitter, state: &mut Value) -> Result<()> {
        (self.func)(input, emitter, state).map_err(|message| Error::Kernel {
            kernel: self.name.clone(),
            message,
        })
    }
}

fn count_entry(state: &mut Value, key: &Value) -> KernelResult<i64> {
    let Value::List(entries) = state else {
        return Err(format!("count state must be a list, got `{state}`"));
    };
    for e in entries.iter_mut() {
        if let Value::Pair(k, n) = e {
            if k.as_ref() == key {
                let next = n.as_int().ok_or("count must be int")? + 1;
                **n = Value::Int(next);
                return Ok(next);
            }
        }
    }
    entries.push(Value::pair(key.clone(), Value::Int(1)));
    entries.sort();
    Ok(1)
}

/// Built-in bolt kernels, referenced by name from JSON topologies.
pub fn lookup_bolt(name: &str) -> Option<BoltKernel> {
    let k = match name {
        "forward" => BoltKernel::new(name, |input, em, _| {
            for (_, r) in &input.tuples {
                em.emit(r.clone());
            }
            Ok(())
        }),
        "split_words" => BoltKernel::new(name, |input, em, _| {
            for (_, r) in &input.tuples {
                let text = r.payload.as_text().ok_or_else(|| format!("expected text, got `{}`", r.payload))?;
                for w in text.split_whitespace() {
                    em.emit(Record::unkeyed(w.to_string()));
                }
            }
            Ok(())
        }),
        // Running count per key (or per payload for unkeyed tuples).
        "count_words" => BoltKernel::new(name, |input, em, state| {
            for (_, r) in &input.tuples {
                let key = r.key.clone().unwrap_or_else(|| r.payload.clone());
                let n = count_entry(state, &key)?;
                em.emit(Record::keyed(key, n));
            }
            Ok(())
        }),
        // From-all combiner: sums one payload from every port.
        "sum_ports" => BoltKernel::new(name, |input, em, _| {
            let mut total = 0i64;
            for (_, r) in &input.tuples {
                total += r.payload.as_int().ok_or_else(|| format!("expected int, got `{}`", r.payload))?;
            }
            em.emit(Record::unkeyed(total));
            Ok(())
        }),
        // Loop-exit bolt: emits n downstream and n - 1 around the loop
        // while n > 0. Targets that are the bolt itself are the loop.
        "countdown" => BoltKernel::new(name, |input, em, _| {
            for (_, r) in &input.tuples {
                let n = r.payload.as_int().ok_or_else(|| format!("expected int, got `{}`", r.payload))?;
                for (i, _) in em.targets().to_vec().iter().enumerate().filter(|(_, t)| t.as_str() != "countdown") {
                    em.emit_to(i, r.clone());
                }
                if n > 0 {
                    let next = Record { key: r.key.clone(), payload: Value::Int(n - 1) };
                    em.emit_to_named("countdown", next)?;
                }
            }
            Ok(())
        }),
        _ => return None,
    };
    Some(k)
}

pub const BOLT_NAMES: &[&str] = &["forward", "split_words", "count_words", "sum_ports", "countdown"];

pub fn require_bolt(name: &str) -> Result<BoltKernel> {
    lookup_bolt(name).ok_or_else(|| Error::invalid(format!("unknown bolt kernel `{name}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    #[default]
    RoundRobin,
    HashByKey,
}

#[derive(Debug, Clone)]
pub struct Spout {
    pub name: String,
    /// Input dataset the spout reads, one tuple per activation.
    pub input: String,
}

#[derive(Debug, Clone)]
pub struct Bolt {
    pub name: String,
    pub kernel: BoltKernel,
    pub consume_policy: ConsumePolicy,
    pub initial_state: Option<Value>,
    pub replication: usize,
    pub loop_exit: bool,
}

impl Bolt {
    pub fn new(name: &str, kernel: BoltKernel, consume_policy: ConsumePolicy) -> Self {
        Bolt {
            name: name.to_string(),
            kernel,
            consume_policy,
            initial_state: None,
            replication: 1,
            loop_exit: false,
        }
    }

    pub fn with_state(mut self, init: Value) -> Self {
        self.initial_state = Some(init);
        self
    }

    pub fn replicated(mut self, n: usize) -> Self {
        self.replication = n;
        self
    }

    pub fn loop_exit(mut self) -> Self {
        self.loop_exit = true;
        self
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Spout(Spout),
    Bolt(Bolt),
}

impl Node {
    pub fn name(&self) -> &str {
        match self {
            Node::Spout(s) => &s.name,
            Node::Bolt(b) => &b.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub routing: Routing,
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub name: String,
    nodes: Vec<Node>,
    edges: Vec<TopoEdge>,
}

impl Topology {
    pub fn new(name: impl Into<String>) -> Self {
        Topology {
            name: name.into(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TopoEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name() == name).map(NodeId)
    }

    fn add(&mut self, node: Node) -> Result<NodeId> {
        if node.name().is_empty() {
            return Err(Error::invalid("node names must be non-empty"));
        }
        if self.find(node.name()).is_some() {
            return Err(Error::invalid(format!("duplicate node name `{}`", node.name())));
        }
        self.nodes.push(node);
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn add_spout(&mut self, name: &str, input: &str) -> Result<NodeId> {
        self.add(Node::Spout(Spout {
            name: name.to_string(),
            input: input.to_string(),
        }))
    }

    pub fn add_bolt(&mut self, bolt: Bolt) -> Result<NodeId> {
        if bolt.replication == 0 {
            return Err(Error::invalid(format!("bolt `{}` replication must be positive", bolt.name)));
        }
        self.add(Node::Bolt(bolt))
    }

    pub fn connect(&mut self, from: NodeId, to: NodeId) -> Result<NodeId> {
        self.connect_with(from, to, Routing::RoundRobin)
    }

    /// Append a FIFO edge; returns the destination node.
    pub fn connect_with(&mut self, from: NodeId, to: NodeId, routing: Routing) -> Result<NodeId> {
        if from.0 >= self.nodes.len() || to.0 >= self.nodes.len() {
            return Err(Error::invalid(format!("dangling edge {} -> {}", from.0, to.0)));
        }
        if matches!(self.nodes[to.0], Node::Spout(_)) {
            return Err(Error::invalid(format!("spout `{}` cannot have inputs", self.nodes[to.0].name())));
        }
        self.edges.push(TopoEdge { from, to, routing });
        Ok(to)
    }

    pub fn connect_named(&mut self, from: &str, to: &str, routing: Routing) -> Result<NodeId> {
        let f = self.find(from).ok_or_else(|| Error::invalid(format!("unknown node `{from}`")))?;
        let t = self.find(to).ok_or_else(|| Error::invalid(format!("unknown node `{to}`")))?;
        self.connect_with(f, t, routing)
    }

    fn successors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges.iter().filter(move |e| e.from == id).map(|e| e.to)
    }

    /// Edge indices that close cycles: back edges of a depth-first search
    /// started from each node in insertion order.
    pub fn feedback_edges(&self) -> BTreeSet<usize> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut mark = vec![Mark::New; self.nodes.len()];
        let mut back = BTreeSet::new();
        for start in 0..self.nodes.len() {
            if mark[start] != Mark::New {
                continue;
            }
            // Iterative DFS: (node, next edge index to inspect).
            let mut stack = vec![(start, 0usize)];
            mark[start] = Mark::Active;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                let out: Vec<usize> = (0..self.edges.len()).filter(|&i| self.edges[i].from.0 == node).collect();
                if *next < out.len() {
                    let ei = out[*next];
                    *next += 1;
                    let to = self.edges[ei].to.0;
                    match mark[to] {
                        Mark::New => {
                            mark[to] = Mark::Active;
                            stack.push((to, 0));
                        }
                        Mark::Active => {
                            back.insert(ei);
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[node] = Mark::Done;
                    stack.pop();
                }
            }
        }
        back
    }

    /// Strongly connected components that contain a cycle.
    fn cycles(&self) -> Vec<Vec<NodeId>> {
        let n = self.nodes.len();
        let reach = |from: usize| {
            let mut seen = vec![false; n];
            let mut stack = vec![from];
            while let Some(x) = stack.pop() {
                for s in self.successors(NodeId(x)) {
                    if !seen[s.0] {
                        seen[s.0] = true;
                        stack.push(s.0);
                    }
                }
            }
            seen
        };
        let reach_all: Vec<Vec<bool>> = (0..n).map(reach).collect();
        let mut assigned = vec![false; n];
        let mut out = Vec::new();
        for i in 0..n {
            if assigned[i] || !reach_all[i][i] {
                continue;
            }
            let comp: Vec<NodeId> = (0..n).filter(|&j| reach_all[i][j] && reach_all[j][i]).map(NodeId).collect();
            for c in &comp {
                assigned[c.0] = true;
            }
            out.push(comp);
        }
        out
    }

    /// One diagnostic per violated invariant; empty when the topology is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Bolt(b) = node {
                if !self.edges.iter().any(|e| e.to.0 == i) {
                    diags.push(format!("bolt `{}` has no inputs", b.name));
                }
            }
        }
        for cycle in self.cycles() {
            let has_exit = cycle
                .iter()
                .any(|id| matches!(self.node(*id), Node::Bolt(b) if b.loop_exit));
            if !has_exit {
                let names: Vec<&str> = cycle.iter().map(|id| self.node(*id).name()).collect();
                diags.push(format!("cycle through [{}] has no loop-exit bolt", names.join(", ")));
            }
        }
        diags
    }

    /// Spouts become tuple sources, bolts become tuple actors with their
    /// consume policy, edges map one-to-one (hash routing becomes a hash
    /// partition, feedback edges are flagged as loops) and every bolt
    /// without successors gets an implicit sink named after it.
    pub fn as_semantic_graph(&self) -> Result<SemanticGraph> {
        let diags = self.validate();
        if !diags.is_empty() {
            return Err(Error::invalid(format!("invalid topology `{}`: {}", self.name, diags.join("; "))));
        }
        let mut g = SemanticGraph::new(self.name.clone());
        for (i, node) in self.nodes.iter().enumerate() {
            let actor = match node {
                Node::Spout(s) => SemanticActor::new(
                    ActorId(i),
                    format!("spout:{}", s.name),
                    Operator::Source { input: s.input.clone() },
                    Granularity::Tuple,
                ),
                Node::Bolt(b) => {
                    let mut a = SemanticActor::new(
                        ActorId(i),
                        b.name.clone(),
                        Operator::Bolt {
                            kernel: b.kernel.clone(),
                            initial_state: b.initial_state.clone(),
                        },
                        Granularity::Tuple,
                    );
                    a.consume_policy = b.consume_policy;
                    a.parallelism_hint = Some(b.replication);
                    a.loop_exit = b.loop_exit;
                    a
                }
            };
            g.actors.push(actor);
        }
        let feedback = self.feedback_edges();
        let mut next_port: BTreeMap<usize, usize> = BTreeMap::new();
        for (ei, e) in self.edges.iter().enumerate() {
            let fan_out = self.edges.iter().filter(|x| x.from == e.from).count();
            let policy = match e.routing {
                Routing::HashByKey => OutputPolicy::HashPartition,
                Routing::RoundRobin if fan_out == 1 => OutputPolicy::Forward,
                Routing::RoundRobin => OutputPolicy::Broadcast,
            };
            let port = next_port.entry(e.to.0).or_insert(0);
            g.edges.push(SemanticEdge {
                from: ActorId(e.from.0),
                to: ActorId(e.to.0),
                port: *port,
                policy,
                is_loop: feedback.contains(&ei),
            });
            *port += 1;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Bolt(b) = node {
                if self.successors(NodeId(i)).next().is_none() {
                    let id = ActorId(g.actors.len());
                    g.actors.push(SemanticActor::new(
                        id,
                        format!("sink:{}", b.name),
                        Operator::Sink { output: b.name.clone() },
                        Granularity::Tuple,
                    ));
                    g.edges.push(SemanticEdge {
                        from: ActorId(i),
                        to: id,
                        port: 0,
                        policy: OutputPolicy::Forward,
                        is_loop: false,
                    });
                }
            }
        }
        g.check()?;
        Ok(g)
    }

    /// Names of the bolt's downstream nodes in edge order.
    pub fn targets_of(&self, id: NodeId) -> Vec<String> {
        self.successors(id).map(|t| self.node(t).name().to_string()).collect()
    }
}
