//! Runtime trace: a totally ordered stream of timestamped events.

use std::io::{BufRead, Write};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    TaskStart,
    TaskEnd,
    /// The task's kernel raised an error; the run aborts.
    TaskFailed,
    Send,
    Receive,
    BarrierEnter,
    BarrierExit,
    SuperstepBegin,
    SuperstepEnd,
}

/// One trace line. `seq` is assigned at emission and strictly increases;
/// `wall_ns` is nanoseconds since the run started and never decreases
/// along `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub wall_ns: u64,
    pub kind: EventKind,
    pub actor: Option<usize>,
    pub channel: Option<usize>,
    pub worker: Option<usize>,
    pub stage: Option<usize>,
    pub superstep: Option<u64>,
    pub tag: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<u64>,
    /// Run-unique token id on send/receive events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<u64>,
    /// Set on send/receive of control markers (`eos`, `control`, `state`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
    /// Dispatch policy for scheduler decisions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    /// Barrier round (chunk index) in stage-by-stage runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u64>,
}

impl TraceEvent {
    pub fn new(kind: EventKind) -> Self {
        TraceEvent {
            seq: 0,
            wall_ns: 0,
            kind,
            actor: None,
            channel: None,
            worker: None,
            stage: None,
            superstep: None,
            tag: None,
            task: None,
            token: None,
            marker: None,
            policy: None,
            round: None,
        }
    }

    pub fn actor(mut self, a: usize) -> Self {
        self.actor = Some(a);
        self
    }

    pub fn channel(mut self, c: usize) -> Self {
        self.channel = Some(c);
        self
    }

    pub fn worker(mut self, w: Option<usize>) -> Self {
        self.worker = w;
        self
    }

    pub fn task(mut self, t: u64) -> Self {
        self.task = Some(t);
        self
    }

    pub fn token(mut self, t: u64) -> Self {
        self.token = Some(t);
        self
    }

    pub fn tag(mut self, t: Option<u64>) -> Self {
        self.tag = t;
        self
    }

    pub fn marker(mut self, m: &str) -> Self {
        self.marker = Some(m.to_string());
        self
    }

    pub fn is_marker(&self) -> bool {
        self.marker.is_some()
    }
}

/// Thread-safe event sink; the only shared mutable structure of a run.
#[derive(Debug)]
pub struct Tracer {
    start: Instant,
    events: Mutex<Vec<TraceEvent>>,
}

impl Default for Tracer {
    fn default() -> Self {
        Tracer {
            start: Instant::now(),
            events: Mutex::new(Vec::new()),
        }
    }
}

impl Tracer {
    /// Stamp and append. Sequence numbers and timestamps are taken under
    /// the lock so both are monotone in append order.
    pub fn emit(&self, mut ev: TraceEvent) {
        let mut events = self.events.lock().expect("tracer lock");
        ev.seq = events.len() as u64;
        ev.wall_ns = self.start.elapsed().as_nanos() as u64;
        events.push(ev);
    }

    pub fn finish(self) -> Trace {
        Trace {
            events: self.events.into_inner().expect("tracer lock"),
        }
    }

    pub fn snapshot(&self) -> Trace {
        Trace {
            events: self.events.lock().expect("tracer lock").clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e).map_err(|e| Error::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parse JSONL, checking every line against the event schema and the
    /// ordering rules. Errors carry the offending line.
    pub fn read_jsonl(r: impl BufRead) -> Result<Trace> {
        let mut events: Vec<TraceEvent> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: TraceEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            if let Some(prev) = events.last() {
                if ev.seq <= prev.seq || ev.wall_ns < prev.wall_ns {
                    return Err(Error::Parse {
                        line: i + 1,
                        column: 1,
                        message: "events out of order".into(),
                    });
                }
            }
            events.push(ev);
        }
        Ok(Trace { events })
    }
}
