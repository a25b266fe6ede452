//! Per-actor input queues and the firing rules over them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::graph::{ConsumePolicy, Operator};
use crate::plan::{ChannelId, ChannelKind, ExecutionPlan, PlanActor, PlanOp};
use crate::token::{Envelope, Token};
use crate::value::Value;

use super::ops::{Firing, Input};

/// Outcome of evaluating an actor's firing rule.
#[derive(Debug)]
pub enum Poll {
    Fire(Firing),
    /// From-all leftovers that can never be matched because a partner
    /// channel has ended; consumed without firing.
    Drain(Vec<(ChannelId, Envelope)>),
    /// Every input has ended: send end-of-stream and stop.
    Retire,
    /// Only feedback inputs remain open; closable at global quiescence.
    Await,
    Idle,
}

#[derive(Debug)]
pub struct Cell {
    pub actor: Arc<PlanActor>,
    pub queues: BTreeMap<ChannelId, VecDeque<Envelope>>,
    pub ended: BTreeSet<ChannelId>,
    /// Data and loop inputs grouped by port, ports ascending.
    ports: Vec<Vec<ChannelId>>,
    loops: BTreeSet<ChannelId>,
    pub source: VecDeque<Token>,
    pub fired: u64,
    pub local: Value,
    pub retired: bool,
    pub sink: Vec<Token>,
}

impl Cell {
    pub fn new(plan: &ExecutionPlan, actor: &PlanActor, source: Vec<Token>) -> Self {
        let mut by_port: BTreeMap<usize, Vec<ChannelId>> = BTreeMap::new();
        let mut loops = BTreeSet::new();
        let mut queues = BTreeMap::new();
        for &c in &actor.inputs {
            let ch = plan.channel(c);
            by_port.entry(ch.port).or_default().push(c);
            if ch.kind == ChannelKind::Loop {
                loops.insert(c);
            }
            queues.insert(c, VecDeque::new());
        }
        if let Some(s) = actor.state {
            queues.insert(s, VecDeque::new());
        }
        Cell {
            actor: Arc::new(actor.clone()),
            queues,
            ended: BTreeSet::new(),
            ports: by_port.into_values().collect(),
            loops,
            source: source.into(),
            fired: 0,
            local: Value::Int(0),
            retired: false,
            sink: Vec::new(),
        }
    }

    pub fn is_source(&self) -> bool {
        matches!(self.actor.op, PlanOp::Operator(Operator::Source { .. }))
    }

    pub fn is_driver(&self) -> bool {
        matches!(self.actor.op, PlanOp::Driver { .. })
    }

    pub fn push(&mut self, ch: ChannelId, env: Envelope) {
        self.queues.get_mut(&ch).expect("channel feeds this actor").push_back(env);
    }

    fn head_is_data(&self, ch: ChannelId) -> bool {
        self.queues[&ch].front().is_some_and(|e| e.token.is_data())
    }

    fn data_channels(&self) -> impl Iterator<Item = ChannelId> + '_ {
        self.ports.iter().flatten().copied()
    }

    /// Pop end-of-stream and control markers sitting at queue heads.
    pub fn absorb_markers(&mut self) -> Vec<(ChannelId, Envelope)> {
        let mut out = Vec::new();
        let chans: Vec<ChannelId> = self.data_channels().collect();
        for c in chans {
            let q = self.queues.get_mut(&c).expect("queue");
            while q.front().is_some_and(|e| !e.token.is_data()) {
                let env = q.pop_front().expect("non-empty");
                if env.token == Token::EndOfStream {
                    self.ended.insert(c);
                }
                out.push((c, env));
            }
        }
        out
    }

    fn state_ready(&self) -> bool {
        self.actor.state.is_none_or(|s| !self.queues[&s].is_empty())
    }

    fn take_state(&mut self) -> Option<Envelope> {
        let s = self.actor.state?;
        self.queues.get_mut(&s).and_then(VecDeque::pop_front)
    }

    /// Pending data tokens on non-state inputs.
    pub fn pending(&self) -> usize {
        self.data_channels().map(|c| self.queues[&c].len()).sum()
    }

    fn port_of(&self, ch: ChannelId) -> usize {
        self.ports.iter().position(|p| p.contains(&ch)).expect("channel on a port")
    }

    /// Evaluate the firing rule. `blocked` is true when an output channel
    /// is at capacity; `choose(n)` picks one of `n` ready channels for
    /// from-any actors.
    pub fn poll(&mut self, blocked: bool, choose: &mut dyn FnMut(usize) -> usize) -> Poll {
        if self.retired {
            return Poll::Idle;
        }
        if self.is_source() {
            if self.source.is_empty() {
                return Poll::Retire;
            }
            if blocked {
                return Poll::Idle;
            }
            let f = Firing {
                index: self.fired,
                source: self.source.pop_front(),
                ..Firing::default()
            };
            self.fired += 1;
            return Poll::Fire(f);
        }
        if !self.state_ready() {
            return Poll::Idle;
        }
        let all_inputs: Vec<ChannelId> = self.data_channels().collect();
        match self.actor.consume {
            ConsumePolicy::FromAll if !all_inputs.is_empty() => {
                if all_inputs.iter().all(|&c| self.head_is_data(c)) {
                    if blocked {
                        return Poll::Idle;
                    }
                    let mut inputs = Vec::with_capacity(all_inputs.len());
                    for (port, chans) in self.ports.clone().into_iter().enumerate() {
                        for c in chans {
                            let env = self.queues.get_mut(&c).unwrap().pop_front().unwrap();
                            inputs.push(Input { port, channel: c, env });
                        }
                    }
                    return self.fire(inputs);
                }
                let starved = all_inputs.iter().any(|c| self.ended.contains(c) && self.queues[c].is_empty());
                if starved {
                    let mut drained = Vec::new();
                    for &c in &all_inputs {
                        while let Some(env) = self.queues.get_mut(&c).unwrap().pop_front() {
                            drained.push((c, env));
                        }
                    }
                    if !drained.is_empty() {
                        return Poll::Drain(drained);
                    }
                }
            }
            _ => {
                let ready: Vec<ChannelId> = all_inputs.iter().copied().filter(|&c| self.head_is_data(c)).collect();
                if !ready.is_empty() {
                    if blocked {
                        return Poll::Idle;
                    }
                    let c = ready[if ready.len() == 1 { 0 } else { choose(ready.len()) }];
                    let env = self.queues.get_mut(&c).unwrap().pop_front().unwrap();
                    let port = self.port_of(c);
                    return self.fire(vec![Input { port, channel: c, env }]);
                }
            }
        }
        let open = all_inputs.iter().any(|c| !self.loops.contains(c) && !self.ended.contains(c));
        if open || self.pending() > 0 {
            Poll::Idle
        } else if self.loops.is_empty() {
            Poll::Retire
        } else {
            Poll::Await
        }
    }

    fn fire(&mut self, inputs: Vec<Input>) -> Poll {
        let f = Firing {
            index: self.fired,
            inputs,
            state: self.take_state(),
            source: None,
        };
        self.fired += 1;
        Poll::Fire(f)
    }

    /// Mark retired; returns the final state token, if any, for the
    /// caller to record as received.
    pub fn retire(&mut self) -> Option<Envelope> {
        self.retired = true;
        self.take_state()
    }

    /// Channels that carry end-of-stream when this actor retires.
    pub fn eos_channels(&self, plan: &ExecutionPlan) -> Vec<ChannelId> {
        self.actor
            .outputs
            .iter()
            .flat_map(|g| g.channels.iter().copied())
            .filter(|&c| plan.channel(c).kind == ChannelKind::Data)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ActorId, ElementOp};
    use crate::kernel::lookup;
    use crate::plan::{Channel, PlanActorId, PlanMode, Role};
    use crate::token::Granularity;
    use crate::value::Record;

    fn plan_with(consume: ConsumePolicy) -> ExecutionPlan {
        let actor = PlanActor {
            id: PlanActorId(0),
            origin: ActorId(0),
            replica: 0,
            role: Role::Worker,
            label: "t".into(),
            op: PlanOp::Operator(Operator::Elementwise(vec![ElementOp::Map(lookup("identity").unwrap())])),
            granularity: Granularity::Tuple,
            consume,
            inputs: vec![ChannelId(0), ChannelId(1)],
            outputs: vec![],
            state: None,
            initial_state: None,
            stage: None,
        };
        let ch = |id, port| Channel {
            id: ChannelId(id),
            from: PlanActorId(0),
            to: PlanActorId(0),
            port,
            kind: ChannelKind::Data,
            shuffle: false,
        };
        ExecutionPlan {
            name: "t".into(),
            mode: PlanMode::Pipelined,
            granularity: Granularity::Tuple,
            batch_size: 1,
            actors: vec![actor],
            channels: vec![ch(0, 0), ch(1, 1)],
            stages: None,
            parallelism: BTreeMap::new(),
            actor_base: 0,
            channel_base: 0,
        }
    }

    fn env(id: u64, v: i64) -> Envelope {
        Envelope { id, token: Token::Tuple(Record::unkeyed(v)), tag: None }
    }

    #[test]
    fn from_all_needs_every_channel() {
        let plan = plan_with(ConsumePolicy::FromAll);
        let mut cell = Cell::new(&plan, &plan.actors[0], vec![]);
        cell.push(ChannelId(0), env(0, 1));
        assert!(matches!(cell.poll(false, &mut |_| 0), Poll::Idle));
        cell.push(ChannelId(1), env(1, 2));
        match cell.poll(false, &mut |_| 0) {
            Poll::Fire(f) => {
                let got: Vec<(usize, u64)> = f.inputs.iter().map(|i| (i.port, i.env.id)).collect();
                assert_eq!(got, vec![(0, 0), (1, 1)]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn from_any_takes_one_token() {
        let plan = plan_with(ConsumePolicy::FromAny);
        let mut cell = Cell::new(&plan, &plan.actors[0], vec![]);
        cell.push(ChannelId(1), env(7, 2));
        match cell.poll(false, &mut |_| unreachable!()) {
            Poll::Fire(f) => {
                assert_eq!(f.inputs.len(), 1);
                assert_eq!(f.inputs[0].channel, ChannelId(1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn end_of_stream_retires_and_drains() {
        let plan = plan_with(ConsumePolicy::FromAll);
        let mut cell = Cell::new(&plan, &plan.actors[0], vec![]);
        cell.push(ChannelId(0), env(0, 1));
        cell.push(ChannelId(1), Envelope { id: 1, token: Token::EndOfStream, tag: None });
        assert_eq!(cell.absorb_markers().len(), 1);
        assert!(matches!(cell.poll(false, &mut |_| 0), Poll::Drain(ref d) if d.len() == 1));
        cell.push(ChannelId(0), Envelope { id: 2, token: Token::EndOfStream, tag: None });
        cell.absorb_markers();
        assert!(matches!(cell.poll(false, &mut |_| 0), Poll::Retire));
    }
}
