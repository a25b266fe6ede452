//! Master–workers execution. The master owns every channel queue, decides
//! which actor fires next and hands single firings to workers. Workers see
//! one task at a time and know nothing about the graph.

use std::collections::BTreeMap;
use std::sync::Arc;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Inputs, Outputs};
use crate::plan::{ChannelKind, ExecutionPlan, PlanActor};
use crate::token::Granularity;
use crate::Error;

use super::cell::{Cell, Poll};
use super::ops::Firing;
use super::{drive, run_task, sink_name, source_tokens, Ctx, Dispatch, EventKind, Failure, Scope, TaskOut};
use crate::value::Value;

struct Task {
    id: u64,
    idx: usize,
    actor: Arc<PlanActor>,
    firing: Firing,
    local: Value,
    scope: Scope,
}

struct Done {
    idx: usize,
    result: Result<TaskOut, Failure>,
}

pub(crate) fn run(plan: &ExecutionPlan, inputs: &Inputs, ctx: &Ctx) -> Result<Outputs, Failure> {
    let n = ctx.cfg.workers;
    let (done_tx, done_rx) = unbounded::<Done>();
    std::thread::scope(|s| {
        let mut queues = Vec::new();
        match ctx.cfg.dispatch {
            Dispatch::RoundRobin => {
                for w in 0..n {
                    let (tx, rx) = unbounded::<Task>();
                    queues.push(tx);
                    let done = done_tx.clone();
                    s.spawn(move || worker(ctx, w, rx, done));
                }
            }
            Dispatch::OnDemand => {
                let (tx, rx) = unbounded::<Task>();
                queues.push(tx);
                for w in 0..n {
                    let (rx, done) = (rx.clone(), done_tx.clone());
                    s.spawn(move || worker(ctx, w, rx, done));
                }
            }
        }
        let mut master = Master {
            ctx,
            queues,
            done: done_rx,
            rng: ChaCha8Rng::seed_from_u64(ctx.cfg.seed),
        };
        master.execute(plan, inputs, Scope::default())
        // Dropping the master closes the task queues and the workers exit.
    })
}

fn worker(ctx: &Ctx, w: usize, rx: Receiver<Task>, done: Sender<Done>) {
    while let Ok(t) = rx.recv() {
        let result = run_task(ctx, &t.actor, t.id, Some(w), t.firing, t.local, t.scope);
        if done.send(Done { idx: t.idx, result }).is_err() {
            return;
        }
    }
}

struct Master<'a> {
    ctx: &'a Ctx,
    queues: Vec<Sender<Task>>,
    done: Receiver<Done>,
    rng: ChaCha8Rng,
}

/// Barrier cursor for stage-by-stage plans: (round, stage) currently open.
struct Cursor {
    round: u64,
    stage: usize,
    stages: usize,
    tuple: bool,
}

struct Run<'p> {
    plan: &'p ExecutionPlan,
    cells: Vec<Cell>,
    occupancy: Vec<usize>,
    busy: Vec<bool>,
    in_flight: usize,
    cursor: Option<Cursor>,
}

impl Run<'_> {
    fn idx(&self, id: crate::plan::PlanActorId) -> usize {
        id.0 - self.plan.actor_base
    }

    fn occ(&mut self, ch: crate::plan::ChannelId) -> &mut usize {
        &mut self.occupancy[ch.0 - self.plan.channel_base]
    }

    fn blocked(&self, i: usize, cap: Option<usize>) -> bool {
        let Some(cap) = cap else { return false };
        self.cells[i]
            .actor
            .outputs
            .iter()
            .flat_map(|g| &g.channels)
            .any(|&c| self.plan.channel(c).kind != ChannelKind::State && self.occupancy[c.0 - self.plan.channel_base] >= cap)
    }

    fn gated(&self, i: usize) -> bool {
        let Some(cur) = &self.cursor else { return false };
        let s = self.cells[i].actor.stage.unwrap_or(0);
        if cur.tuple {
            s > cur.stage
        } else {
            (self.cells[i].fired, s) > (cur.round, cur.stage)
        }
    }

    fn round_of(&self, i: usize) -> Option<u64> {
        match &self.cursor {
            Some(c) if !c.tuple => Some(self.cells[i].fired),
            _ => None,
        }
    }

    fn stage_done(&self, stage: usize, round: u64, tuple: bool) -> bool {
        self.cells.iter().enumerate().all(|(i, c)| {
            c.actor.stage.unwrap_or(0) != stage || (!self.busy[i] && (c.retired || (!tuple && c.fired > round)))
        })
    }

    fn all_retired(&self) -> bool {
        self.cells.iter().all(|c| c.retired)
    }

    fn deliver(&mut self, sends: Vec<(crate::plan::ChannelId, crate::token::Envelope)>) {
        for (ch, env) in sends {
            let c = self.plan.channel(ch);
            let to = self.idx(c.to);
            if c.kind != ChannelKind::State {
                *self.occ(ch) += 1;
            }
            self.cells[to].push(ch, env);
        }
    }
}

impl Master<'_> {
    fn dispatch(&mut self, t: Task) {
        let q = match self.ctx.cfg.dispatch {
            Dispatch::RoundRobin => (t.id % self.queues.len() as u64) as usize,
            Dispatch::OnDemand => 0,
        };
        self.queues[q].send(t).expect("workers outlive the master");
    }

    fn execute(&mut self, plan: &ExecutionPlan, inputs: &Inputs, scope: Scope) -> Result<Outputs, Failure> {
        let ctx = self.ctx;
        let mut cells = Vec::with_capacity(plan.actors.len());
        for a in &plan.actors {
            cells.push(Cell::new(plan, a, source_tokens(plan, a, inputs)?));
        }
        let mut run = Run {
            plan,
            occupancy: vec![0; plan.channels.len()],
            busy: vec![false; cells.len()],
            cells,
            in_flight: 0,
            cursor: plan.stages.as_ref().map(|st| Cursor {
                round: 0,
                stage: 0,
                stages: st.len().max(1),
                tuple: plan.granularity == Granularity::Tuple,
            }),
        };
        for a in &plan.actors {
            if let Some((ch, env)) = ctx.seed_state(a) {
                run.deliver(vec![(ch, env)]);
            }
        }
        let cap = ctx.cfg.channel_capacity;
        let mut failure: Option<Failure> = None;
        loop {
            let mut progress = false;
            let mut awaiting = Vec::new();
            if failure.is_none() {
                progress |= self.advance(&mut run, scope);
                for i in 0..run.cells.len() {
                    if run.busy[i] || run.cells[i].retired || run.gated(i) {
                        continue;
                    }
                    if run.cells[i].is_driver() && run.in_flight > 0 {
                        continue;
                    }
                    let actor = run.cells[i].actor.clone();
                    let ev_scope = Scope {
                        round: run.round_of(i),
                        ..scope
                    };
                    for (ch, env) in run.cells[i].absorb_markers() {
                        ctx.receive(&actor, ev_scope, None, ch, &env);
                        *run.occ(ch) -= 1;
                        progress = true;
                    }
                    let blocked = run.blocked(i, cap);
                    let rng = &mut self.rng;
                    match run.cells[i].poll(blocked, &mut |k| rng.gen_range(0..k)) {
                        Poll::Fire(f) => {
                            progress = true;
                            for inp in &f.inputs {
                                *run.occ(inp.channel) -= 1;
                            }
                            let id = ctx.next_task();
                            if run.cells[i].is_driver() {
                                // Drivers run on the master while no other task is in
                                // flight; their body reuses the same workers.
                                let out = {
                                    let mut nested = |body: &ExecutionPlan, inputs: &Inputs, s: Scope| self.execute(body, inputs, s);
                                    drive(ctx, &actor, id, None, f, ev_scope, &mut nested)
                                };
                                match out {
                                    Ok(out) => run.deliver(out.sends),
                                    Err(e) => failure = Some(e),
                                }
                                if failure.is_some() {
                                    break;
                                }
                            } else {
                                run.busy[i] = true;
                                run.in_flight += 1;
                                let local = run.cells[i].local.clone();
                                self.dispatch(Task {
                                    id,
                                    idx: i,
                                    actor,
                                    firing: f,
                                    local,
                                    scope: ev_scope,
                                });
                            }
                        }
                        Poll::Drain(list) => {
                            progress = true;
                            for (ch, env) in list {
                                ctx.receive(&actor, ev_scope, None, ch, &env);
                                *run.occ(ch) -= 1;
                            }
                        }
                        Poll::Retire => {
                            progress = true;
                            self.retire(&mut run, i, ev_scope);
                        }
                        Poll::Await => awaiting.push(i),
                        Poll::Idle => {}
                    }
                }
            }
            if run.in_flight > 0 {
                let first = match self.done.recv_timeout(ctx.watchdog()) {
                    Ok(d) => d,
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(Error::Stall(format!("no task finished within {} ms", ctx.cfg.watchdog_ms)).into());
                    }
                    Err(RecvTimeoutError::Disconnected) => return Err(Error::Stall("workers disconnected".into()).into()),
                };
                let mut batch = vec![first];
                batch.extend(self.done.try_iter());
                for d in batch {
                    run.in_flight -= 1;
                    run.busy[d.idx] = false;
                    match d.result {
                        Ok(out) => {
                            run.cells[d.idx].local = out.local;
                            if let Some(t) = out.sink {
                                run.cells[d.idx].sink.push(t);
                            }
                            run.deliver(out.sends);
                        }
                        Err(e) => {
                            failure.get_or_insert(e);
                        }
                    }
                }
                continue;
            }
            if let Some(f) = failure {
                return Err(f);
            }
            if progress {
                continue;
            }
            if run.all_retired() {
                break;
            }
            if !awaiting.is_empty() {
                // Quiescent with only feedback inputs open: close the loops.
                for i in awaiting {
                    let s = Scope {
                        round: run.round_of(i),
                        ..scope
                    };
                    self.retire(&mut run, i, s);
                }
                continue;
            }
            let stuck: Vec<String> = run
                .cells
                .iter()
                .filter(|c| !c.retired)
                .map(|c| format!("{}({})", c.actor.label, c.actor.id))
                .collect();
            let why = if cap.is_some() { " (bounded channels full)" } else { "" };
            return Err(Error::Stall(format!("no actor can fire{why}; waiting: {}", stuck.join(", "))).into());
        }
        let mut outputs: Outputs = BTreeMap::new();
        for c in &mut run.cells {
            if let Some(name) = sink_name(&c.actor) {
                outputs.entry(name.to_string()).or_default().tokens.append(&mut c.sink);
            }
        }
        Ok(outputs)
    }

    fn retire(&mut self, run: &mut Run<'_>, i: usize, scope: Scope) {
        let actor = run.cells[i].actor.clone();
        if let Some(env) = run.cells[i].retire() {
            self.ctx.receive(&actor, scope, None, actor.state.expect("state channel"), &env);
        }
        let eos: Vec<_> = run
            .cells[i]
            .eos_channels(run.plan)
            .into_iter()
            .map(|ch| (ch, self.ctx.send(&actor, scope, None, ch, crate::token::Token::EndOfStream, None)))
            .collect();
        run.deliver(eos);
    }

    /// Open the next barrier while the current stage is complete.
    fn advance(&mut self, run: &mut Run<'_>, scope: Scope) -> bool {
        let mut moved = false;
        loop {
            let Some(cur) = &run.cursor else { return false };
            let (round, stage, stages, tuple) = (cur.round, cur.stage, cur.stages, cur.tuple);
            if run.all_retired() || !run.stage_done(stage, round, tuple) {
                return moved;
            }
            let (next_round, next_stage) = if stage + 1 < stages {
                (round, stage + 1)
            } else if tuple {
                return moved;
            } else {
                (round + 1, 0)
            };
            let mut enter = crate::runtime::TraceEvent::new(EventKind::BarrierEnter);
            enter.stage = Some(stage);
            enter.superstep = scope.superstep;
            enter.round = (!tuple).then_some(round);
            self.ctx.tracer.emit(enter);
            let mut exit = crate::runtime::TraceEvent::new(EventKind::BarrierExit);
            exit.stage = Some(next_stage);
            exit.superstep = scope.superstep;
            exit.round = (!tuple).then_some(next_round);
            self.ctx.tracer.emit(exit);
            let cur = run.cursor.as_mut().expect("cursor");
            cur.round = next_round;
            cur.stage = next_stage;
            moved = true;
        }
    }
}
