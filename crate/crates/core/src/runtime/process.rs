//! Process-based execution: every actor is a long-lived process looping
//! over its firing rule, multiplexed onto a fixed set of executor threads.
//! Producers push straight into their consumers' queues; no master is
//! involved. A coordinator only watches for quiescence and stalls.
//!
//! Stage annotations are ignored here: without a master nothing can hold
//! a stage back, so every plan runs pipelined.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Inputs, Outputs};
use crate::plan::{ChannelId, ChannelKind, ExecutionPlan};
use crate::token::{Envelope, Token};
use crate::Error;

use super::cell::{Cell, Poll};
use super::{drive, run_task, sink_name, source_tokens, Ctx, Failure, Scope};

struct Slot {
    cell: Cell,
    /// In the ready queue or running on an executor.
    scheduled: bool,
    awaiting: bool,
    rng: ChaCha8Rng,
}

struct Net<'a> {
    ctx: &'a Ctx,
    plan: &'a ExecutionPlan,
    scope: Scope,
    slots: Vec<Mutex<Slot>>,
    occupancy: Vec<AtomicUsize>,
    ready: Sender<usize>,
    /// Scheduled slots; zero means quiescent.
    active: AtomicUsize,
    progress: AtomicU64,
    stop: AtomicBool,
    failure: Mutex<Option<Failure>>,
}

pub(crate) fn run(plan: &ExecutionPlan, inputs: &Inputs, ctx: &Ctx) -> Result<Outputs, Failure> {
    execute(ctx, plan, inputs, Scope::default())
}

fn execute(ctx: &Ctx, plan: &ExecutionPlan, inputs: &Inputs, scope: Scope) -> Result<Outputs, Failure> {
    let mut slots = Vec::with_capacity(plan.actors.len());
    for a in &plan.actors {
        let mix = (a.id.0 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        slots.push(Mutex::new(Slot {
            cell: Cell::new(plan, a, source_tokens(plan, a, inputs)?),
            scheduled: true,
            awaiting: false,
            rng: ChaCha8Rng::seed_from_u64(ctx.cfg.seed ^ mix),
        }));
    }
    let (tx, rx) = unbounded::<usize>();
    let net = Net {
        ctx,
        plan,
        scope,
        active: AtomicUsize::new(slots.len()),
        slots,
        occupancy: plan.channels.iter().map(|_| AtomicUsize::new(0)).collect(),
        ready: tx,
        progress: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        failure: Mutex::new(None),
    };
    for a in &plan.actors {
        if let Some((ch, env)) = ctx.seed_state(a) {
            net.lock(net.idx_of(ch)).cell.push(ch, env);
        }
    }
    for i in 0..net.slots.len() {
        net.ready.send(i).expect("ready queue open");
    }
    let result = std::thread::scope(|s| {
        for w in 0..ctx.cfg.workers {
            let (net, rx) = (&net, rx.clone());
            s.spawn(move || executor(net, w, rx));
        }
        let r = net.coordinate();
        net.stop.store(true, Ordering::SeqCst);
        r
    });
    result?;
    let mut outputs: Outputs = BTreeMap::new();
    for slot in net.slots {
        let mut slot = slot.into_inner().expect("slot lock");
        if let Some(name) = sink_name(&slot.cell.actor) {
            outputs
                .entry(name.to_string())
                .or_default()
                .tokens
                .append(&mut slot.cell.sink);
        }
    }
    Ok(outputs)
}

fn executor(net: &Net<'_>, w: usize, rx: Receiver<usize>) {
    while !net.stop.load(Ordering::SeqCst) {
        match rx.recv_timeout(Duration::from_millis(2)) {
            Ok(i) => net.step(i, w),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

impl Net<'_> {
    fn lock(&self, i: usize) -> MutexGuard<'_, Slot> {
        self.slots[i].lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Consumer slot of a channel.
    fn idx_of(&self, ch: ChannelId) -> usize {
        self.plan.channel(ch).to.0 - self.plan.actor_base
    }

    fn occ(&self, ch: ChannelId) -> &AtomicUsize {
        &self.occupancy[ch.0 - self.plan.channel_base]
    }

    fn blocked(&self, cell: &Cell) -> bool {
        let Some(cap) = self.ctx.cfg.channel_capacity else { return false };
        cell.actor
            .outputs
            .iter()
            .flat_map(|g| &g.channels)
            .any(|&c| self.plan.channel(c).kind != ChannelKind::State && self.occ(c).load(Ordering::SeqCst) >= cap)
    }

    fn schedule(&self, i: usize) {
        let mut slot = self.lock(i);
        if !slot.scheduled && !slot.cell.retired {
            slot.scheduled = true;
            self.active.fetch_add(1, Ordering::SeqCst);
            drop(slot);
            let _ = self.ready.send(i);
        }
    }

    fn deliver(&self, sends: Vec<(ChannelId, Envelope)>) {
        for (ch, env) in sends {
            let to = self.idx_of(ch);
            if self.plan.channel(ch).kind != ChannelKind::State {
                self.occ(ch).fetch_add(1, Ordering::SeqCst);
            }
            self.lock(to).cell.push(ch, env);
            self.schedule(to);
        }
    }

    /// After consuming from bounded channels, producers may have room again.
    fn consumed(&self, chans: &[ChannelId]) {
        for &ch in chans {
            self.occ(ch).fetch_sub(1, Ordering::SeqCst);
        }
        if self.ctx.cfg.channel_capacity.is_some() {
            for &ch in chans {
                self.schedule(self.plan.channel(ch).from.0 - self.plan.actor_base);
            }
        }
    }

    fn unschedule(&self, mut slot: MutexGuard<'_, Slot>) {
        slot.scheduled = false;
        self.active.fetch_sub(1, Ordering::SeqCst);
    }

    fn requeue(&self, i: usize) {
        let _ = self.ready.send(i);
    }

    fn fail(&self, f: Failure) {
        self.failure.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(f);
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Retire a slot whose lock is held; returns end-of-stream deliveries
    /// to make once the lock is released.
    fn retire(&self, slot: &mut Slot) -> Vec<(ChannelId, Envelope)> {
        let actor = slot.cell.actor.clone();
        if let Some(env) = slot.cell.retire() {
            self.ctx.receive(&actor, self.scope, None, actor.state.expect("state channel"), &env);
        }
        slot.cell
            .eos_channels(self.plan)
            .into_iter()
            .map(|ch| (ch, self.ctx.send(&actor, self.scope, None, ch, Token::EndOfStream, None)))
            .collect()
    }

    fn step(&self, i: usize, w: usize) {
        if self.stop.load(Ordering::SeqCst) {
            return;
        }
        let mut slot = self.lock(i);
        if slot.cell.retired {
            return self.unschedule(slot);
        }
        let actor = slot.cell.actor.clone();
        let markers = slot.cell.absorb_markers();
        for (ch, env) in &markers {
            self.ctx.receive(&actor, self.scope, Some(w), *ch, env);
        }
        let mut consumed: Vec<ChannelId> = markers.iter().map(|(c, _)| *c).collect();
        let blocked = self.blocked(&slot.cell);
        let Slot { cell, rng, .. } = &mut *slot;
        let polled = cell.poll(blocked, &mut |k| rng.gen_range(0..k));
        slot.awaiting = matches!(polled, Poll::Await);
        match polled {
            Poll::Fire(f) => {
                let local = slot.cell.local.clone();
                let is_driver = slot.cell.is_driver();
                drop(slot);
                consumed.extend(f.inputs.iter().map(|x| x.channel));
                self.consumed(&consumed);
                let task = self.ctx.next_task();
                let out = if is_driver {
                    let mut nested = |body: &ExecutionPlan, inputs: &Inputs, s: Scope| execute(self.ctx, body, inputs, s);
                    drive(self.ctx, &actor, task, Some(w), f, self.scope, &mut nested)
                } else {
                    run_task(self.ctx, &actor, task, Some(w), f, local, self.scope)
                };
                match out {
                    Ok(out) => {
                        {
                            let mut slot = self.lock(i);
                            slot.cell.local = out.local;
                            if let Some(t) = out.sink {
                                slot.cell.sink.push(t);
                            }
                        }
                        self.progress.fetch_add(1, Ordering::SeqCst);
                        self.deliver(out.sends);
                        self.requeue(i);
                    }
                    Err(e) => {
                        self.fail(e);
                        self.unschedule(self.lock(i));
                    }
                }
            }
            Poll::Drain(list) => {
                for (ch, env) in &list {
                    self.ctx.receive(&actor, self.scope, Some(w), *ch, env);
                }
                drop(slot);
                consumed.extend(list.iter().map(|(c, _)| *c));
                self.consumed(&consumed);
                self.progress.fetch_add(1, Ordering::SeqCst);
                self.requeue(i);
            }
            // Deliveries happen while the slot still counts as active, so
            // the coordinator never sees a false quiescence.
            Poll::Retire => {
                let eos = self.retire(&mut slot);
                drop(slot);
                self.consumed(&consumed);
                self.progress.fetch_add(1, Ordering::SeqCst);
                self.deliver(eos);
                self.unschedule(self.lock(i));
            }
            Poll::Await | Poll::Idle if consumed.is_empty() => self.unschedule(slot),
            Poll::Await | Poll::Idle => {
                // Markers were absorbed: go round once more.
                drop(slot);
                self.consumed(&consumed);
                self.progress.fetch_add(1, Ordering::SeqCst);
                self.requeue(i);
            }
        }
    }

    /// Wait for quiescence, closing feedback loops when only they remain
    /// open, and report stalls.
    fn coordinate(&self) -> Result<(), Failure> {
        let watchdog = self.ctx.watchdog();
        let mut seen = self.progress.load(Ordering::SeqCst);
        let mut since = Instant::now();
        loop {
            if let Some(f) = self.failure.lock().unwrap_or_else(|e| e.into_inner()).take() {
                return Err(f);
            }
            if self.active.load(Ordering::SeqCst) == 0 {
                let mut awaiting = Vec::new();
                let mut live = 0;
                for i in 0..self.slots.len() {
                    let slot = self.lock(i);
                    if !slot.cell.retired {
                        live += 1;
                        if slot.awaiting {
                            awaiting.push(i);
                        }
                    }
                }
                // Recheck: a delivery may have raced with the scan.
                if self.active.load(Ordering::SeqCst) != 0 {
                    continue;
                }
                if live == 0 {
                    return Ok(());
                }
                if awaiting.is_empty() {
                    let why = if self.ctx.cfg.channel_capacity.is_some() { " (bounded channels full)" } else { "" };
                    return Err(Error::Stall(format!("no actor can fire{why}; {live} actors waiting")).into());
                }
                for i in awaiting {
                    let eos = {
                        let mut slot = self.lock(i);
                        slot.awaiting = false;
                        self.retire(&mut slot)
                    };
                    self.deliver(eos);
                }
                self.progress.fetch_add(1, Ordering::SeqCst);
                continue;
            }
            let now = self.progress.load(Ordering::SeqCst);
            if now != seen {
                seen = now;
                since = Instant::now();
            } else if since.elapsed() > watchdog {
                return Err(Error::Stall(format!("no progress within {} ms", self.ctx.cfg.watchdog_ms)).into());
            }
            std::thread::sleep(Duration::from_micros(50));
        }
    }
}
