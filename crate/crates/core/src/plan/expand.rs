use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{ActorId, ConsumePolicy, Operator, OutputPolicy, SemanticActor, SemanticEdge, SemanticGraph};
use crate::kernel::Predicate;
use crate::token::Granularity;
use crate::value::Value;
use crate::{Error, Result};

use super::{
    assign_stages, Channel, ChannelId, ChannelKind, ExecutionPlan, OutputGroup, Parallelism, PlanActor,
    PlanActorId, PlanMode, PlanOp, Role, Routing,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationStrategy {
    /// A driver runs the whole body once per superstep, with a barrier
    /// between supersteps.
    BarrierPerSuperstep,
    /// Tokens carry an iteration tag and circulate independently.
    TaggedToken,
}

#[derive(Debug, Default)]
struct IdAlloc {
    actor: usize,
    channel: usize,
}

struct Builder {
    granularity: Granularity,
    actors: Vec<PlanActor>,
    channels: Vec<Channel>,
    actor_base: usize,
    channel_base: usize,
}

impl Builder {
    fn new(granularity: Granularity, ids: &IdAlloc) -> Self {
        Builder {
            granularity,
            actors: Vec::new(),
            channels: Vec::new(),
            actor_base: ids.actor,
            channel_base: ids.channel,
        }
    }

    fn actor_mut(&mut self, id: PlanActorId) -> &mut PlanActor {
        &mut self.actors[id.0 - self.actor_base]
    }

    fn add_actor(&mut self, origin: ActorId, replica: usize, role: Role, label: String, op: PlanOp, consume: ConsumePolicy) -> PlanActorId {
        let id = PlanActorId(self.actor_base + self.actors.len());
        self.actors.push(PlanActor {
            id,
            origin,
            replica,
            role,
            label,
            op,
            granularity: self.granularity,
            consume,
            inputs: Vec::new(),
            outputs: Vec::new(),
            state: None,
            initial_state: None,
            stage: None,
        });
        id
    }

    fn add_channel(&mut self, from: PlanActorId, to: PlanActorId, port: usize, kind: ChannelKind, shuffle: bool) -> ChannelId {
        let id = ChannelId(self.channel_base + self.channels.len());
        self.channels.push(Channel {
            id,
            from,
            to,
            port,
            kind,
            shuffle,
        });
        if kind == ChannelKind::State {
            self.actor_mut(to).state = Some(id);
        } else {
            self.actor_mut(to).inputs.push(id);
        }
        id
    }

    fn add_group(&mut self, from: PlanActorId, channels: Vec<ChannelId>, routing: Routing, target: &str) {
        self.actor_mut(from).outputs.push(OutputGroup {
            channels,
            routing,
            target: target.to_string(),
        });
    }

    /// `from -> to` as a one-channel group.
    fn link(&mut self, from: PlanActorId, to: PlanActorId, port: usize, kind: ChannelKind, target: &str) {
        let c = self.add_channel(from, to, port, kind, false);
        self.add_group(from, vec![c], Routing::Single, target);
    }

    fn gather(&mut self, origin: ActorId, label: &str, producers: &[PlanActorId]) -> PlanActorId {
        let consume = if self.granularity == Granularity::Tuple {
            ConsumePolicy::FromAny
        } else {
            ConsumePolicy::FromAll
        };
        let g = self.add_actor(origin, 0, Role::Gather, format!("gather:{label}"), PlanOp::Gather, consume);
        for (i, &p) in producers.iter().enumerate() {
            self.link(p, g, i, ChannelKind::Data, label);
        }
        g
    }

    fn scatter(&mut self, origin: ActorId, label: &str, producer: PlanActorId, consumers: &[PlanActorId], port: usize, target: &str) {
        let s = self.add_actor(origin, 0, Role::Scatter, format!("scatter:{label}"), PlanOp::Scatter, ConsumePolicy::FromAll);
        self.link(producer, s, 0, ChannelKind::Data, target);
        let chans = consumers.iter().map(|&c| self.add_channel(s, c, port, ChannelKind::Data, false)).collect();
        self.add_group(s, chans, Routing::Scatter, target);
    }

    fn finish(self, name: &str, mode: PlanMode, batch_size: usize, parallelism: BTreeMap<ActorId, usize>, ids: &mut IdAlloc) -> ExecutionPlan {
        ids.actor = self.actor_base + self.actors.len();
        ids.channel = self.channel_base + self.channels.len();
        ExecutionPlan {
            name: name.to_string(),
            mode,
            granularity: self.granularity,
            batch_size,
            actors: self.actors,
            channels: self.channels,
            stages: None,
            parallelism,
            actor_base: self.actor_base,
            channel_base: self.channel_base,
        }
    }
}

fn pinned(op: &Operator) -> bool {
    matches!(
        op,
        Operator::Source { .. }
            | Operator::Sink { .. }
            | Operator::Reduce(_)
            | Operator::Iterate { .. }
            | Operator::MapWithState { .. }
            | Operator::Window(_)
    )
}

/// Actors that reach an order-sensitive actor over non-loop edges,
/// including the order-sensitive actors themselves.
fn order_sensitive_closure(g: &SemanticGraph) -> BTreeSet<ActorId> {
    let mut out: BTreeSet<ActorId> = g.actors.iter().filter(|a| a.operator.is_order_sensitive()).map(|a| a.id).collect();
    let mut stack: Vec<ActorId> = out.iter().copied().collect();
    while let Some(a) = stack.pop() {
        for e in g.incoming(a).filter(|e| !e.is_loop) {
            if out.insert(e.from) {
                stack.push(e.from);
            }
        }
    }
    out
}

fn replica_counts(g: &SemanticGraph, par: &Parallelism) -> Result<BTreeMap<ActorId, usize>> {
    if par.default == 0 {
        return Err(Error::invalid("default parallelism must be at least 1"));
    }
    for (origin, p) in &par.per_origin {
        if origin.0 >= g.actors.len() {
            return Err(Error::invalid(format!("parallelism given for unknown actor {origin}")));
        }
        if *p == 0 {
            return Err(Error::invalid(format!("parallelism for {origin} must be at least 1")));
        }
    }
    let ordered = if g.actors.first().is_some_and(|a| a.granularity != Granularity::Collection) {
        order_sensitive_closure(g)
    } else {
        BTreeSet::new()
    };
    Ok(g
        .actors
        .iter()
        .map(|a| {
            let p = if pinned(&a.operator) || ordered.contains(&a.id) {
                1
            } else {
                par.per_origin.get(&a.id).copied().or(a.parallelism_hint).unwrap_or(par.default)
            };
            (a.id, p)
        })
        .collect())
}

fn replica_label(label: &str, r: usize, p: usize) -> String {
    if p > 1 {
        format!("{label}#{r}")
    } else {
        label.to_string()
    }
}

/// Initial value of a stateful actor's state token.
fn state_init(a: &SemanticActor) -> Option<Value> {
    match &a.operator {
        // Per-key cells, encoded as a list of (key, state) pairs.
        Operator::MapWithState { .. } => Some(Value::List(Vec::new())),
        // (position, buffered items)
        Operator::Window(_) => Some(Value::pair(Value::Int(0), Value::List(Vec::new()))),
        Operator::Bolt { initial_state, .. } => initial_state.clone(),
        _ => None,
    }
}

struct Pending {
    driver: PlanActorId,
    body: SemanticGraph,
}

/// Expand a semantic graph into an execution plan.
pub fn expand(g: &SemanticGraph, par: &Parallelism, mode: PlanMode) -> Result<ExecutionPlan> {
    let mut ids = IdAlloc::default();
    expand_with(g, par, mode, &mut ids)
}

fn expand_with(g: &SemanticGraph, par: &Parallelism, mode: PlanMode, ids: &mut IdAlloc) -> Result<ExecutionPlan> {
    g.check()?;
    let counts = replica_counts(g, par)?;
    let granularity = g.actors.first().map_or(Granularity::Collection, |a| a.granularity);
    let mut b = Builder::new(granularity, ids);
    let mut replicas: BTreeMap<ActorId, Vec<PlanActorId>> = BTreeMap::new();
    let mut pending = Vec::new();

    for id in g.topo_order()? {
        let a = g.actor(id);
        let p = counts[&id];
        let ids_for = match (&a.operator, mode) {
            (Operator::Iterate { terminate, max_iterations }, PlanMode::TaggedToken) => {
                let body = a.hierarchical_body.as_ref().expect("iterate has a body");
                vec![tagged_fragment(&mut b, a, body, terminate, *max_iterations, par.default)?]
            }
            (Operator::Iterate { terminate, max_iterations }, _) => {
                let body = a.hierarchical_body.as_ref().expect("iterate has a body");
                let driver = b.add_actor(
                    id,
                    0,
                    Role::Driver,
                    a.label.clone(),
                    // Body is filled in once this plan's ids are final.
                    PlanOp::Driver {
                        body: Box::new(empty_plan(mode, granularity)),
                        terminate: terminate.clone(),
                        max_iterations: *max_iterations,
                    },
                    ConsumePolicy::FromAll,
                );
                pending.push(Pending {
                    driver,
                    body: (**body).clone(),
                });
                vec![driver]
            }
            _ => (0..p)
                .map(|r| {
                    let rid = b.add_actor(
                        id,
                        r,
                        Role::Worker,
                        replica_label(&a.label, r, p),
                        PlanOp::Operator(a.operator.clone()),
                        a.consume_policy,
                    );
                    if let Some(init) = state_init(a) {
                        b.add_channel(rid, rid, 0, ChannelKind::State, false);
                        b.actor_mut(rid).initial_state = Some(init);
                    }
                    rid
                })
                .collect(),
        };
        replicas.insert(id, ids_for);
    }

    for e in &g.edges {
        wire_edge(&mut b, g, e, &replicas)?;
    }

    let mut plan = b.finish(&g.name, mode, g.batch_size, counts, ids);
    for pnd in pending {
        let body = expand_with(&pnd.body, &Parallelism::uniform(par.default), mode, ids)?;
        let idx = pnd.driver.0 - plan.actor_base;
        if let PlanOp::Driver { body: slot, .. } = &mut plan.actors[idx].op {
            **slot = body;
        }
    }
    let plan = if mode == PlanMode::Bsp { assign_stages(plan)? } else { plan };
    plan.check()?;
    Ok(plan)
}

fn empty_plan(mode: PlanMode, granularity: Granularity) -> ExecutionPlan {
    ExecutionPlan {
        name: String::new(),
        mode,
        granularity,
        batch_size: crate::program::DEFAULT_BATCH_SIZE,
        actors: Vec::new(),
        channels: Vec::new(),
        stages: None,
        parallelism: BTreeMap::new(),
        actor_base: 0,
        channel_base: 0,
    }
}

fn wire_edge(b: &mut Builder, g: &SemanticGraph, e: &SemanticEdge, replicas: &BTreeMap<ActorId, Vec<PlanActorId>>) -> Result<()> {
    let (u, v) = (g.actor(e.from), g.actor(e.to));
    let (us, vs) = (&replicas[&e.from], &replicas[&e.to]);
    let (p, q) = (us.len(), vs.len());
    let target = v.label.as_str();
    let kind = if e.is_loop { ChannelKind::Loop } else { ChannelKind::Data };

    if e.policy == OutputPolicy::HashPartition {
        if b.granularity == Granularity::Tuple && v.consume_policy == ConsumePolicy::FromAll && p > 1 {
            // A from-all tuple consumer needs one channel per port.
            let gathers: Vec<PlanActorId> = (0..q)
                .map(|j| {
                    b.add_actor(e.to, j, Role::Gather, format!("gather:{}", replica_label(target, j, q)), PlanOp::Gather, ConsumePolicy::FromAny)
                })
                .collect();
            for &ui in us {
                let chans = gathers.iter().map(|&gj| b.add_channel(ui, gj, 0, kind, true)).collect();
                b.add_group(ui, chans, Routing::Hash, target);
            }
            for (j, &gj) in gathers.iter().enumerate() {
                b.link(gj, vs[j], e.port, ChannelKind::Data, target);
            }
        } else {
            for &ui in us {
                let chans = vs.iter().map(|&vj| b.add_channel(ui, vj, e.port, kind, true)).collect();
                b.add_group(ui, chans, Routing::Hash, target);
            }
        }
        return Ok(());
    }
    if p == q {
        for (i, &ui) in us.iter().enumerate() {
            b.link(ui, vs[i], e.port, kind, target);
        }
        return Ok(());
    }
    if e.is_loop {
        return Err(Error::Unsupported(format!(
            "feedback edge `{}` -> `{}` joins {p} replicas to {q}",
            u.label, v.label
        )));
    }
    let single = if p == 1 { us[0] } else { b.gather(e.from, &u.label, us) };
    if q == 1 {
        b.link(single, vs[0], e.port, ChannelKind::Data, target);
    } else {
        b.scatter(e.to, target, single, vs, e.port, target);
    }
    Ok(())
}

/// Loop controller plus `p` aligned copies of a shuffle-free body chain.
/// Controller group 0 feeds the body by tag; body exits return on loop
/// channels (ports 1..=p); later groups are the iteration's consumers.
fn tagged_fragment(
    b: &mut Builder,
    a: &SemanticActor,
    body: &SemanticGraph,
    terminate: &Predicate,
    max_iterations: usize,
    p: usize,
) -> Result<PlanActorId> {
    let mut chain = Vec::new();
    for id in body.topo_order()? {
        let ba = body.actor(id);
        match &ba.operator {
            Operator::Source { .. } | Operator::Sink { .. } => {}
            Operator::Elementwise(_) => chain.push(ba),
            other => {
                return Err(Error::Unsupported(format!(
                    "tagged-token iteration needs a shuffle-free element-wise body; `{}` is {}",
                    ba.label,
                    other.kind_name()
                )))
            }
        }
    }
    let ctrl = b.add_actor(
        a.id,
        0,
        Role::Driver,
        format!("loop:{}", a.label),
        PlanOp::LoopController {
            terminate: terminate.clone(),
            max_iterations,
        },
        ConsumePolicy::FromAny,
    );
    let mut entries = Vec::with_capacity(p);
    let mut exits = Vec::with_capacity(p);
    for r in 0..p {
        let mut prev: Option<PlanActorId> = None;
        let steps: Vec<(String, Operator)> = if chain.is_empty() {
            vec![("body:identity".to_string(), Operator::Elementwise(Vec::new()))]
        } else {
            chain.iter().map(|c| (format!("body:{}", c.label), c.operator.clone())).collect()
        };
        for (label, op) in steps {
            let id = b.add_actor(a.id, r, Role::Worker, replica_label(&label, r, p), PlanOp::Operator(op), ConsumePolicy::FromAll);
            match prev {
                None => entries.push(id),
                Some(prev) => b.link(prev, id, 0, ChannelKind::Data, &label),
            }
            prev = Some(id);
        }
        exits.push(prev.expect("non-empty chain"));
    }
    let chans = entries.iter().map(|&en| b.add_channel(ctrl, en, 0, ChannelKind::Data, false)).collect();
    b.add_group(ctrl, chans, Routing::TagModulo, "body");
    for (r, &ex) in exits.iter().enumerate() {
        b.link(ex, ctrl, r + 1, ChannelKind::Loop, &a.label);
    }
    Ok(ctrl)
}

/// Standalone plan `in -> iteration -> out` for one hierarchical actor.
pub fn expand_iteration(actor: &SemanticActor, p: usize, strategy: IterationStrategy) -> Result<ExecutionPlan> {
    if actor.hierarchical_body.is_none() || !matches!(actor.operator, Operator::Iterate { .. }) {
        return Err(Error::invalid(format!("`{}` is not a hierarchical iteration actor", actor.label)));
    }
    let mut g = SemanticGraph::new(format!("iteration:{}", actor.label));
    let gran = actor.granularity;
    g.actors.push(SemanticActor::new(ActorId(0), "source:in", Operator::Source { input: "in".into() }, gran));
    let mut it = actor.clone();
    it.id = ActorId(1);
    g.actors.push(it);
    g.actors.push(SemanticActor::new(ActorId(2), "sink:out", Operator::Sink { output: "out".into() }, gran));
    for (from, to) in [(0, 1), (1, 2)] {
        g.edges.push(SemanticEdge {
            from: ActorId(from),
            to: ActorId(to),
            port: 0,
            policy: OutputPolicy::Forward,
            is_loop: false,
        });
    }
    let mode = match strategy {
        IterationStrategy::BarrierPerSuperstep => PlanMode::Pipelined,
        IterationStrategy::TaggedToken => PlanMode::TaggedToken,
    };
    expand(&g, &Parallelism::uniform(p), mode)
}
