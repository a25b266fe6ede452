//! Parallel execution dataflow: replicated actors wired by channels, with
//! scatter/gather actors where replica counts change, hash-routed channels
//! at shuffles, and stage numbers for barrier-synchronous execution.

mod dot;
mod expand;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{ActorId, ConsumePolicy, Operator};
use crate::kernel::Predicate;
use crate::token::Granularity;
use crate::value::Value;
use crate::{Error, Result};

pub use dot::to_dot;
pub use expand::{expand, expand_iteration, IterationStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanActorId(pub usize);

impl fmt::Display for PlanActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId(pub usize);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Stage by stage; no task of stage n+1 starts before stage n is done.
    Bsp,
    /// Tokens move downstream as soon as they are produced.
    Pipelined,
    /// Pipelined, with iterations run as tagged tokens around a loop.
    TaggedToken,
}

impl PlanMode {
    pub fn name(self) -> &'static str {
        match self {
            PlanMode::Bsp => "bsp",
            PlanMode::Pipelined => "pipelined",
            PlanMode::TaggedToken => "tagged-token",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bsp" => Ok(PlanMode::Bsp),
            "pipelined" => Ok(PlanMode::Pipelined),
            "tagged-token" | "tagged_token" => Ok(PlanMode::TaggedToken),
            _ => Err(Error::invalid(format!("unknown plan mode `{s}` (bsp, pipelined, tagged-token)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Worker,
    Scatter,
    Gather,
    Driver,
}

/// What a plan actor does when it fires.
#[derive(Debug, Clone)]
pub enum PlanOp {
    Operator(Operator),
    /// One input, many outputs: keyed records by hash, unkeyed round-robin.
    Scatter,
    /// Many inputs, one output.
    Gather,
    /// Runs `body` to completion once per superstep until `terminate`.
    Driver {
        body: Box<ExecutionPlan>,
        terminate: Predicate,
        max_iterations: usize,
    },
    /// Tagged-token loop head: admits new tokens, counts iterations per
    /// tag and decides between another lap and exit.
    LoopController { terminate: Predicate, max_iterations: usize },
}

impl PlanOp {
    pub fn name(&self) -> String {
        match self {
            PlanOp::Operator(op) => match op.kernel_name() {
                Some(k) => format!("{}:{k}", op.kind_name()),
                None => op.kind_name().to_string(),
            },
            PlanOp::Scatter => "scatter".into(),
            PlanOp::Gather => "gather".into(),
            PlanOp::Driver { terminate, .. } => format!("driver:{}", terminate.name()),
            PlanOp::LoopController { terminate, .. } => format!("loop:{}", terminate.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Data,
    /// Feedback edge; never carries end-of-stream.
    Loop,
    /// Self-loop carrying a stateful actor's state token.
    State,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Channel {
    pub id: ChannelId,
    pub from: PlanActorId,
    pub to: PlanActorId,
    /// Consumer input port; a from-all consumer needs a token from every
    /// channel of every port.
    pub port: usize,
    pub kind: ChannelKind,
    /// Part of a hash shuffle; stage boundaries sit on these.
    pub shuffle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Exactly one channel.
    Single,
    /// Records go to channel `hash(key) mod n`; unkeyed records to 0.
    Hash,
    /// Keyed records by hash, unkeyed records round-robin.
    Scatter,
    /// Tagged tokens go to channel `tag mod n`.
    TagModulo,
}

/// One logical consumer: every emitted token goes to each group, and is
/// routed to one or more channels within it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputGroup {
    pub channels: Vec<ChannelId>,
    pub routing: Routing,
    /// Consumer name as the producer's kernel sees it (bolt emitters).
    pub target: String,
}

#[derive(Debug, Clone)]
pub struct PlanActor {
    pub id: PlanActorId,
    /// Semantic actor this one was expanded from (for scatter and gather,
    /// the actor they serve).
    pub origin: ActorId,
    pub replica: usize,
    pub role: Role,
    pub label: String,
    pub op: PlanOp,
    pub granularity: Granularity,
    pub consume: ConsumePolicy,
    pub inputs: Vec<ChannelId>,
    pub outputs: Vec<OutputGroup>,
    pub state: Option<ChannelId>,
    pub initial_state: Option<Value>,
    pub stage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stage {
    pub id: usize,
    pub members: Vec<PlanActorId>,
}

#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub name: String,
    pub mode: PlanMode,
    pub granularity: Granularity,
    pub batch_size: usize,
    pub actors: Vec<PlanActor>,
    pub channels: Vec<Channel>,
    pub stages: Option<Vec<Stage>>,
    pub parallelism: BTreeMap<ActorId, usize>,
    /// Ids are global across nested plans; these are this plan's offsets.
    pub actor_base: usize,
    pub channel_base: usize,
}

impl ExecutionPlan {
    pub fn actor(&self, id: PlanActorId) -> &PlanActor {
        &self.actors[id.0 - self.actor_base]
    }

    pub fn channel(&self, id: ChannelId) -> &Channel {
        &self.channels[id.0 - self.channel_base]
    }

    pub fn replicas(&self, origin: ActorId) -> Vec<&PlanActor> {
        self.actors
            .iter()
            .filter(|a| a.origin == origin && matches!(a.role, Role::Worker | Role::Driver))
            .collect()
    }

    /// Output channels, flattened over groups.
    pub fn out_channels(&self, id: PlanActorId) -> impl Iterator<Item = ChannelId> + '_ {
        self.actor(id).outputs.iter().flat_map(|g| g.channels.iter().copied())
    }

    pub fn has_loops(&self) -> bool {
        self.channels.iter().any(|c| c.kind == ChannelKind::Loop)
    }

    pub fn sources(&self) -> Vec<PlanActorId> {
        self.actors
            .iter()
            .filter(|a| matches!(a.op, PlanOp::Operator(Operator::Source { .. })))
            .map(|a| a.id)
            .collect()
    }

    /// Ids of every plan (this one and nested driver bodies).
    pub fn all_actor_ids(&self) -> Vec<PlanActorId> {
        let mut out: Vec<_> = self.actors.iter().map(|a| a.id).collect();
        for a in &self.actors {
            if let PlanOp::Driver { body, .. } = &a.op {
                out.extend(body.all_actor_ids());
            }
        }
        out
    }

    /// Stage of an actor in this plan or any nested body.
    pub fn find_stage(&self, id: PlanActorId) -> Option<usize> {
        if let Some(a) = self.actors.iter().find(|a| a.id == id) {
            return a.stage;
        }
        self.actors.iter().find_map(|a| match &a.op {
            PlanOp::Driver { body, .. } => body.find_stage(id),
            _ => None,
        })
    }

    /// Structural invariants: endpoints exist and agree with actor wiring,
    /// scatter has one input, gather one output, no channel goes to an
    /// earlier stage and every shuffle channel enters a later one.
    pub fn check(&self) -> Result<()> {
        let in_range = |id: PlanActorId| id.0 >= self.actor_base && id.0 < self.actor_base + self.actors.len();
        for c in &self.channels {
            if !in_range(c.from) || !in_range(c.to) {
                return Err(Error::invalid(format!("channel {} has a dangling endpoint", c.id)));
            }
            if !self.actor(c.to).inputs.contains(&c.id) && self.actor(c.to).state != Some(c.id) {
                return Err(Error::invalid(format!("channel {} is not an input of {}", c.id, c.to)));
            }
        }
        for a in &self.actors {
            let outs = a.outputs.iter().map(|g| g.channels.len()).sum::<usize>();
            match a.role {
                Role::Scatter if a.inputs.len() != 1 => {
                    return Err(Error::invalid(format!("scatter {} has {} inputs", a.id, a.inputs.len())))
                }
                Role::Gather if outs != 1 => return Err(Error::invalid(format!("gather {} has {outs} outputs", a.id))),
                _ => {}
            }
            if let PlanOp::Driver { body, .. } = &a.op {
                body.check()?;
            }
        }
        if let Some(stages) = &self.stages {
            for c in self.channels.iter().filter(|c| c.kind == ChannelKind::Data) {
                let (s, t) = (self.actor(c.from).stage, self.actor(c.to).stage);
                if s > t || (c.shuffle && s == t) {
                    return Err(Error::invalid(format!("channel {} crosses stages {s:?} -> {t:?}", c.id)));
                }
            }
            let total: usize = stages.iter().map(|s| s.members.len()).sum();
            if total != self.actors.len() {
                return Err(Error::invalid("every actor must belong to exactly one stage"));
            }
        }
        Ok(())
    }

    /// Topological order of actors over data channels.
    pub fn topo_order(&self) -> Vec<PlanActorId> {
        let n = self.actors.len();
        let mut indeg = vec![0usize; n];
        for c in self.channels.iter().filter(|c| c.kind == ChannelKind::Data) {
            indeg[c.to.0 - self.actor_base] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).rev().collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(self.actors[i].id);
            let id = self.actors[i].id;
            let mut next = Vec::new();
            for c in self.channels.iter().filter(|c| c.kind == ChannelKind::Data && c.from == id) {
                let t = c.to.0 - self.actor_base;
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    next.push(t);
                }
            }
            next.sort_unstable_by(|a, b| b.cmp(a));
            ready.extend(next);
        }
        order
    }

    pub fn summary(&self) -> PlanSummary {
        let mut roles = BTreeMap::new();
        for a in &self.actors {
            *roles.entry(format!("{:?}", a.role).to_lowercase()).or_insert(0) += 1;
        }
        PlanSummary {
            name: self.name.clone(),
            mode: self.mode,
            actors: self.actors.len(),
            channels: self.channels.len(),
            shuffle_channels: self.channels.iter().filter(|c| c.shuffle).count(),
            stages: self.stages.as_ref().map(Vec::len),
            roles,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanSummary {
    pub name: String,
    pub mode: PlanMode,
    pub actors: usize,
    pub channels: usize,
    pub shuffle_channels: usize,
    pub stages: Option<usize>,
    pub roles: BTreeMap<String, usize>,
}

/// Replica count per semantic actor: overrides, then the actor's own hint,
/// then the default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parallelism {
    pub default: usize,
    pub per_origin: BTreeMap<ActorId, usize>,
}

impl Parallelism {
    pub fn uniform(p: usize) -> Self {
        Parallelism {
            default: p,
            per_origin: BTreeMap::new(),
        }
    }

    pub fn with(mut self, origin: ActorId, p: usize) -> Self {
        self.per_origin.insert(origin, p);
        self
    }
}

/// Compute stages: an actor's stage is the maximum over its data inputs of
/// the producer's stage, plus one across a shuffle channel.
pub fn assign_stages(mut plan: ExecutionPlan) -> Result<ExecutionPlan> {
    if plan.mode != PlanMode::Bsp {
        return Err(Error::InvalidMode(format!("stages exist only in bsp plans, not {}", plan.mode.name())));
    }
    if plan.has_loops() {
        return Err(Error::InvalidMode("bsp plans cannot contain feedback channels".into()));
    }
    let order = plan.topo_order();
    let mut stage: BTreeMap<PlanActorId, usize> = BTreeMap::new();
    for id in order {
        let s = plan
            .channels
            .iter()
            .filter(|c| c.to == id && c.kind == ChannelKind::Data)
            .map(|c| stage[&c.from] + usize::from(c.shuffle))
            .max()
            .unwrap_or(0);
        stage.insert(id, s);
    }
    let count = stage.values().max().map_or(0, |m| m + 1);
    let mut stages: Vec<Stage> = (0..count).map(|id| Stage { id, members: Vec::new() }).collect();
    for a in plan.actors.iter_mut() {
        let s = stage[&a.id];
        a.stage = Some(s);
        stages[s].members.push(a.id);
    }
    plan.stages = Some(stages);
    Ok(plan)
}
