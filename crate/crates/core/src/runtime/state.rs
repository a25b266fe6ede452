use crate::graph::{ActorId, ConsumePolicy, Operator};
use crate::plan::{ChannelId, OutputGroup, PlanActor, PlanActorId, PlanOp, Role, Routing};
use crate::token::{Envelope, Granularity, Token};
use crate::value::{Record, Value};
use crate::{Error, Result};

use super::ops::{execute, Firing, Input};

const IN: ChannelId = ChannelId(0);
const OUT: ChannelId = ChannelId(1);
const STATE: ChannelId = ChannelId(2);

/// Drives a single actor in isolation through the same firing engine the
/// runtimes use, with its state token kept here between firings.
#[derive(Debug, Clone)]
pub struct ActorHarness {
    actor: PlanActor,
    state: Option<Value>,
    local: Value,
    fired: u64,
}

fn initial_state(op: &Operator) -> Option<Value> {
    match op {
        Operator::MapWithState { .. } => Some(Value::List(Vec::new())),
        Operator::Window(_) => Some(Value::pair(Value::Int(0), Value::List(Vec::new()))),
        Operator::Bolt { initial_state, .. } => initial_state.clone(),
        _ => None,
    }
}

impl ActorHarness {
    /// Wrap an operator as a one-input, one-output actor.
    pub fn new(op: Operator, granularity: Granularity) -> Self {
        let state = initial_state(&op);
        let target = match &op {
            Operator::Bolt { kernel, .. } => format!("after:{}", kernel.name()),
            _ => "out".to_string(),
        };
        let actor = PlanActor {
            id: PlanActorId(0),
            origin: ActorId(0),
            replica: 0,
            role: Role::Worker,
            label: op.kind_name().to_string(),
            op: PlanOp::Operator(op),
            granularity,
            consume: ConsumePolicy::FromAll,
            inputs: vec![IN],
            outputs: vec![OutputGroup {
                channels: vec![OUT],
                routing: Routing::Single,
                target,
            }],
            state: state.as_ref().map(|_| STATE),
            initial_state: state.clone(),
            stage: None,
        };
        ActorHarness {
            actor,
            state,
            local: Value::Int(0),
            fired: 0,
        }
    }

    pub fn is_stateful(&self) -> bool {
        self.state.is_some()
    }

    pub fn checkpoint_state(&self) -> Result<Value> {
        self.state
            .clone()
            .ok_or_else(|| Error::invalid(format!("actor `{}` is stateless", self.actor.label)))
    }

    pub fn restore_state(&mut self, v: Value) -> Result<()> {
        if self.state.is_none() {
            return Err(Error::invalid(format!("actor `{}` is stateless", self.actor.label)));
        }
        self.state = Some(v);
        Ok(())
    }

    /// Fire once on `token`, returning the emitted data tokens.
    pub fn fire(&mut self, token: Token) -> Result<Vec<Token>> {
        let f = Firing {
            index: self.fired,
            inputs: vec![Input {
                port: 0,
                channel: IN,
                env: Envelope { id: self.fired, token, tag: None },
            }],
            state: self.state.clone().map(|v| Envelope {
                id: self.fired,
                token: Token::Tuple(Record::unkeyed(v)),
                tag: None,
            }),
            source: None,
        };
        self.fired += 1;
        let out = execute(&self.actor, &f, &mut self.local)?;
        if let (Some(cur), Some(next)) = (self.state.as_mut(), out.state) {
            *cur = next;
        }
        Ok(out.sends.into_iter().map(|(_, t, _)| t).collect())
    }

    /// Fire once per record (as tuples) and collect emitted records.
    pub fn feed(&mut self, records: impl IntoIterator<Item = Record>) -> Result<Vec<Record>> {
        let mut out = Vec::new();
        for r in records {
            for t in self.fire(Token::Tuple(r))? {
                out.extend(t.into_records());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::lookup;
    use crate::topology::lookup_bolt;

    fn counter() -> ActorHarness {
        ActorHarness::new(
            Operator::Bolt {
                kernel: lookup_bolt("count_words").unwrap(),
                initial_state: Some(Value::List(Vec::new())),
            },
            Granularity::Tuple,
        )
    }

    #[test]
    fn counting_bolt_checkpoint_and_restore() {
        let mut h = counter();
        assert_eq!(h.checkpoint_state().unwrap(), Value::List(Vec::new()));
        h.feed([Record::unkeyed("a"), Record::unkeyed("a")]).unwrap();
        let snap = h.checkpoint_state().unwrap();
        assert_eq!(snap, Value::List(vec![Value::pair(Value::text("a"), Value::Int(2))]));

        let mut fresh = counter();
        fresh.restore_state(snap).unwrap();
        let out = fresh.feed([Record::unkeyed("a")]).unwrap();
        assert_eq!(out, vec![Record::keyed("a", 3)]);
    }

    #[test]
    fn stateless_actor_rejects_checkpoint() {
        let mut h = ActorHarness::new(
            Operator::Elementwise(vec![crate::graph::ElementOp::Map(lookup("double").unwrap())]),
            Granularity::Tuple,
        );
        assert!(matches!(h.checkpoint_state(), Err(Error::InvalidArgument(_))));
        assert!(h.restore_state(Value::Int(1)).is_err());
    }
}
