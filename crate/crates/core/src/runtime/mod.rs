//! Process-network execution of an [`ExecutionPlan`].
//!
//! Two strategies share the firing engine in [`ops`] and the per-actor
//! queues in `cell`: a master–workers scheduler that owns every queue and
//! hands single firings to agnostic workers, and a process-based runtime
//! where each actor delivers its own output straight into its consumers'
//! queues.

mod cell;
pub mod ops;
mod process;
mod scheduled;
mod state;
pub mod trace;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collection::Multiset;
use crate::dataset::{InputData, Inputs, Outputs};
use crate::graph::Operator;
use crate::plan::{ChannelId, ExecutionPlan, PlanActor, PlanActorId, PlanMode, PlanOp};
use crate::token::{Envelope, Token};
use crate::value::{Record, Value};
use crate::{Error, Result};

pub use state::ActorHarness;
pub use trace::{EventKind, Trace, TraceEvent, Tracer};

use ops::Firing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispatch {
    /// Task `i` goes to worker `i mod N`.
    #[default]
    #[serde(alias = "RoundRobin", alias = "round-robin")]
    RoundRobin,
    /// One shared ready queue; idle workers pull.
    #[serde(alias = "OnDemand", alias = "on-demand")]
    OnDemand,
}

impl Dispatch {
    pub fn name(self) -> &'static str {
        match self {
            Dispatch::RoundRobin => "round_robin",
            Dispatch::OnDemand => "on_demand",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "round_robin" | "round-robin" | "rr" => Ok(Dispatch::RoundRobin),
            "on_demand" | "on-demand" | "od" => Ok(Dispatch::OnDemand),
            _ => Err(Error::invalid(format!("unknown dispatch policy `{s}` (round-robin, on-demand)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeKind {
    #[default]
    Scheduled,
    #[serde(alias = "process-based")]
    Process,
}

/// Run configuration. Missing JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Plan mode used when a program is expanded for this run.
    pub mode: PlanMode,
    pub workers: usize,
    pub dispatch: Dispatch,
    pub seed: u64,
    /// `None` means unbounded channels.
    pub channel_capacity: Option<usize>,
    pub watchdog_ms: u64,
    pub runtime: RuntimeKind,
    /// Upper bound of a seed-derived sleep injected before each task.
    pub jitter_us: u64,
    /// Replicas per actor at expansion; defaults to `workers`.
    pub parallelism: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: PlanMode::Pipelined,
            workers: 1,
            dispatch: Dispatch::RoundRobin,
            seed: 0,
            channel_capacity: None,
            watchdog_ms: 10_000,
            runtime: RuntimeKind::Scheduled,
            jitter_us: 0,
            parallelism: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.channel_capacity == Some(0) {
            return Err(Error::invalid("channel capacity must be at least 1"));
        }
        if self.parallelism == Some(0) {
            return Err(Error::invalid("parallelism must be at least 1"));
        }
        Ok(())
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism.unwrap_or(self.workers)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub tasks: u64,
    pub supersteps: u64,
    pub wall_ns: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outputs: Outputs,
    pub trace: Trace,
    pub stats: RunStats,
}

/// An aborted run: the error, the task that raised it (when a kernel
/// failed) and the trace up to the abort.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub task: Option<u64>,
    pub actor: Option<PlanActorId>,
    pub trace: Trace,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.task, self.actor) {
            (Some(t), Some(a)) => write!(f, "task {t} on actor {a} failed: {}", self.error),
            _ => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for RunFailure {}

impl From<Box<RunFailure>> for Error {
    fn from(f: Box<RunFailure>) -> Self {
        f.error
    }
}

/// Execute `plan` over `inputs` with the runtime chosen by `cfg`.
pub fn run(plan: &ExecutionPlan, inputs: &Inputs, cfg: &RunConfig) -> Result<RunOutput, Box<RunFailure>> {
    let fail = |error| {
        Box::new(RunFailure {
            error,
            task: None,
            actor: None,
            trace: Trace::default(),
        })
    };
    cfg.validate().map_err(fail)?;
    plan.check().map_err(fail)?;
    let ctx = Ctx::new(cfg.clone());
    let started = Instant::now();
    let result = match cfg.runtime {
        RuntimeKind::Scheduled => scheduled::run(plan, inputs, &ctx),
        RuntimeKind::Process => process::run(plan, inputs, &ctx),
    };
    let stats = RunStats {
        tasks: ctx.tasks.load(Ordering::SeqCst),
        supersteps: ctx.supersteps.load(Ordering::SeqCst),
        wall_ns: started.elapsed().as_nanos() as u64,
    };
    let trace = ctx.tracer.finish();
    match result {
        Ok(outputs) => Ok(RunOutput { outputs, trace, stats }),
        Err(f) => Err(Box::new(RunFailure {
            error: f.error,
            task: f.task,
            actor: f.actor,
            trace,
        })),
    }
}

/// Master–workers execution with `workers` threads.
pub fn run_scheduled(
    plan: &ExecutionPlan,
    inputs: &Inputs,
    workers: usize,
    dispatch: Dispatch,
    seed: u64,
) -> Result<RunOutput, Box<RunFailure>> {
    let cfg = RunConfig {
        workers,
        dispatch,
        seed,
        mode: plan.mode,
        ..RunConfig::default()
    };
    run(plan, inputs, &cfg)
}

/// Process-based execution with actors multiplexed on `executors` threads.
pub fn run_process_based(plan: &ExecutionPlan, inputs: &Inputs, executors: usize, seed: u64) -> Result<RunOutput, Box<RunFailure>> {
    let cfg = RunConfig {
        workers: executors,
        seed,
        runtime: RuntimeKind::Process,
        mode: plan.mode,
        ..RunConfig::default()
    };
    run(plan, inputs, &cfg)
}

/// Internal failure, before the trace is attached.
#[derive(Debug)]
pub(crate) struct Failure {
    pub error: Error,
    pub task: Option<u64>,
    pub actor: Option<PlanActorId>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure {
            error,
            task: None,
            actor: None,
        }
    }
}

/// Run-wide state shared by every thread of a run.
pub(crate) struct Ctx {
    pub cfg: RunConfig,
    pub tracer: Tracer,
    tokens: AtomicU64,
    tasks: AtomicU64,
    supersteps: AtomicU64,
}

/// Event context a task runs under.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Scope {
    pub superstep: Option<u64>,
    pub round: Option<u64>,
}

impl Ctx {
    fn new(cfg: RunConfig) -> Self {
        Ctx {
            cfg,
            tracer: Tracer::default(),
            tokens: AtomicU64::new(0),
            tasks: AtomicU64::new(0),
            supersteps: AtomicU64::new(0),
        }
    }

    pub fn next_token(&self) -> u64 {
        self.tokens.fetch_add(1, Ordering::SeqCst)
    }

    pub fn next_task(&self) -> u64 {
        self.tasks.fetch_add(1, Ordering::SeqCst)
    }

    pub fn policy(&self) -> &'static str {
        match self.cfg.runtime {
            RuntimeKind::Scheduled => self.cfg.dispatch.name(),
            RuntimeKind::Process => "process",
        }
    }

    pub fn watchdog(&self) -> Duration {
        Duration::from_millis(self.cfg.watchdog_ms.max(1))
    }

    /// Seed-derived delay, a function of (seed, actor, firing) only.
    fn jitter(&self, actor: PlanActorId, index: u64) {
        if self.cfg.jitter_us == 0 {
            return;
        }
        let mix = (actor.0 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ mix);
        let us = rng.gen_range(0..=self.cfg.jitter_us);
        std::thread::sleep(Duration::from_micros(us));
    }

    pub fn event(&self, kind: EventKind, actor: &PlanActor, scope: Scope) -> TraceEvent {
        let mut ev = TraceEvent::new(kind).actor(actor.id.0);
        ev.stage = actor.stage;
        ev.superstep = scope.superstep;
        ev.round = scope.round;
        ev
    }

    /// Send event plus envelope for a token leaving `actor` on `ch`.
    pub fn send(&self, actor: &PlanActor, scope: Scope, worker: Option<usize>, ch: ChannelId, token: Token, tag: Option<crate::token::Tag>) -> Envelope {
        let id = self.next_token();
        let mut ev = self.event(EventKind::Send, actor, scope).channel(ch.0).worker(worker).token(id).tag(tag.map(|t| t.id));
        match token {
            Token::EndOfStream => ev = ev.marker("eos"),
            Token::Control(_) => ev = ev.marker("control"),
            _ => {}
        }
        self.tracer.emit(ev);
        Envelope { id, token, tag }
    }

    pub fn receive(&self, actor: &PlanActor, scope: Scope, worker: Option<usize>, ch: ChannelId, env: &Envelope) {
        let mut ev = self
            .event(EventKind::Receive, actor, scope)
            .channel(ch.0)
            .worker(worker)
            .token(env.id)
            .tag(env.tag.map(|t| t.id));
        match env.token {
            Token::EndOfStream => ev = ev.marker("eos"),
            Token::Control(_) => ev = ev.marker("control"),
            _ => {}
        }
        self.tracer.emit(ev);
    }

    /// The initial state token of a stateful actor.
    pub fn seed_state(&self, actor: &PlanActor) -> Option<(ChannelId, Envelope)> {
        let ch = actor.state?;
        let init = actor.initial_state.clone().unwrap_or(Value::List(Vec::new()));
        let env = self.send(actor, Scope::default(), None, ch, Token::Tuple(Record::unkeyed(init)), None);
        Some((ch, env))
    }
}

/// Result of one task: envelopes to deliver (including the next state
/// token), a sink token, and the actor's updated runtime-local value.
#[derive(Debug)]
pub(crate) struct TaskOut {
    pub sends: Vec<(ChannelId, Envelope)>,
    pub sink: Option<Token>,
    pub local: Value,
}

fn task_event(ctx: &Ctx, kind: EventKind, actor: &PlanActor, scope: Scope, task: u64, worker: Option<usize>, f: &Firing) -> TraceEvent {
    let tag = f.inputs.iter().find_map(|i| i.env.tag).map(|t| t.id);
    let mut ev = ctx.event(kind, actor, scope).task(task).worker(worker).tag(tag);
    if kind == EventKind::TaskStart {
        ev.policy = Some(ctx.policy().to_string());
    }
    ev
}

fn receive_inputs(ctx: &Ctx, actor: &PlanActor, scope: Scope, worker: Option<usize>, f: &Firing) {
    for i in &f.inputs {
        ctx.receive(actor, scope, worker, i.channel, &i.env);
    }
    if let (Some(ch), Some(env)) = (actor.state, &f.state) {
        ctx.receive(actor, scope, worker, ch, env);
    }
}

/// Run one firing of a plain actor, emitting its task and token events.
pub(crate) fn run_task(
    ctx: &Ctx,
    actor: &PlanActor,
    task: u64,
    worker: Option<usize>,
    f: Firing,
    mut local: Value,
    scope: Scope,
) -> Result<TaskOut, Failure> {
    ctx.tracer.emit(task_event(ctx, EventKind::TaskStart, actor, scope, task, worker, &f));
    receive_inputs(ctx, actor, scope, worker, &f);
    ctx.jitter(actor.id, f.index);
    let fired = match ops::execute(actor, &f, &mut local) {
        Ok(x) => x,
        Err(error) => {
            ctx.tracer.emit(task_event(ctx, EventKind::TaskFailed, actor, scope, task, worker, &f));
            return Err(Failure {
                error,
                task: Some(task),
                actor: Some(actor.id),
            });
        }
    };
    let mut sends: Vec<(ChannelId, Envelope)> = fired
        .sends
        .into_iter()
        .map(|(ch, tok, tag)| (ch, ctx.send(actor, scope, worker, ch, tok, tag)))
        .collect();
    if let Some(ch) = actor.state {
        // Stateless bolts without an explicit state keep the old token value.
        let next = fired.state.or_else(|| {
            f.state.as_ref().and_then(|e| e.token.records().first().map(|r| r.payload.clone()))
        });
        let token = Token::Tuple(Record::unkeyed(next.unwrap_or(Value::List(Vec::new()))));
        sends.push((ch, ctx.send(actor, scope, worker, ch, token, None)));
    }
    ctx.tracer.emit(task_event(ctx, EventKind::TaskEnd, actor, scope, task, worker, &f));
    Ok(TaskOut {
        sends,
        sink: fired.sink,
        local,
    })
}

/// Nested plan runner used by drivers: (body, inputs, scope) -> outputs.
pub(crate) type BodyRunner<'a> = dyn FnMut(&ExecutionPlan, &Inputs, Scope) -> Result<Outputs, Failure> + 'a;

fn body_endpoints(body: &ExecutionPlan) -> Result<(String, String)> {
    let mut input = None;
    let mut output = None;
    for a in &body.actors {
        match &a.op {
            PlanOp::Operator(Operator::Source { input: i }) => input = Some(i.clone()),
            PlanOp::Operator(Operator::Sink { output: o }) => output = Some(o.clone()),
            _ => {}
        }
    }
    match (input, output) {
        (Some(i), Some(o)) => Ok((i, o)),
        _ => Err(Error::invalid("iteration body needs one source and one sink")),
    }
}

/// Fire a driver: run its body once per superstep until the predicate
/// holds or the bound is reached, then route the result downstream.
pub(crate) fn drive(
    ctx: &Ctx,
    actor: &PlanActor,
    task: u64,
    worker: Option<usize>,
    f: Firing,
    scope: Scope,
    exec: &mut BodyRunner<'_>,
) -> Result<TaskOut, Failure> {
    let PlanOp::Driver {
        body,
        terminate,
        max_iterations,
    } = &actor.op
    else {
        unreachable!("drive called on a non-driver");
    };
    ctx.tracer.emit(task_event(ctx, EventKind::TaskStart, actor, scope, task, worker, &f));
    receive_inputs(ctx, actor, scope, worker, &f);
    let fail = |error| Failure {
        error,
        task: Some(task),
        actor: Some(actor.id),
    };
    let (input, output) = body_endpoints(body).map_err(fail)?;
    let mut cur = ops::port_records(&f, 0);
    let mut n = 0u64;
    while (n as usize) < *max_iterations && !terminate.test(&cur.iter().cloned().collect::<Multiset>()) {
        let mut ev = ctx.event(EventKind::SuperstepBegin, actor, scope).worker(worker);
        ev.superstep = Some(n);
        ctx.tracer.emit(ev);
        ctx.supersteps.fetch_add(1, Ordering::SeqCst);
        let inputs: Inputs = [(input.clone(), InputData::Records(cur))].into_iter().collect();
        let inner = Scope {
            superstep: Some(n),
            round: None,
        };
        let outs = exec(body, &inputs, inner)?;
        cur = outs.get(&output).map(|s| s.records()).unwrap_or_default();
        let mut ev = ctx.event(EventKind::SuperstepEnd, actor, scope).worker(worker);
        ev.superstep = Some(n);
        ctx.tracer.emit(ev);
        n += 1;
    }
    let fired = ops::emit_all(actor, &f, cur);
    let sends = fired
        .sends
        .into_iter()
        .map(|(ch, tok, tag)| (ch, ctx.send(actor, scope, worker, ch, tok, tag)))
        .collect();
    ctx.tracer.emit(task_event(ctx, EventKind::TaskEnd, actor, scope, task, worker, &f));
    Ok(TaskOut {
        sends,
        sink: None,
        local: Value::Int(0),
    })
}

/// Source tokens for every source actor of `plan`, in actor order.
pub(crate) fn source_tokens(plan: &ExecutionPlan, actor: &PlanActor, inputs: &Inputs) -> Result<Vec<Token>> {
    match &actor.op {
        PlanOp::Operator(Operator::Source { input }) => inputs
            .get(input)
            .ok_or_else(|| Error::invalid(format!("no input bound to source `{input}`")))?
            .tokens(plan.granularity, plan.batch_size),
        _ => Ok(Vec::new()),
    }
}

/// Sink output name of an actor, if it is a sink.
pub(crate) fn sink_name(actor: &PlanActor) -> Option<&str> {
    match &actor.op {
        PlanOp::Operator(Operator::Sink { output }) => Some(output),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_defaults_and_rejects_unknown_fields() {
        let cfg = RunConfig::from_json(r#"{"workers": 4, "dispatch": "on_demand", "mode": "bsp"}"#).unwrap();
        assert_eq!(cfg.workers, 4);
        assert_eq!(cfg.dispatch, Dispatch::OnDemand);
        assert_eq!(cfg.mode, PlanMode::Bsp);
        assert_eq!(cfg.watchdog_ms, 10_000);
        assert_eq!(cfg.channel_capacity, None);
        assert!(RunConfig::from_json(r#"{"workerz": 4}"#).is_err());
        assert!(RunConfig::from_json(r#"{"workers": 0}"#).is_err());
    }
}
