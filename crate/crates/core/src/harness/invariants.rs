//! Properties every runtime trace must satisfy, checked from events alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::runtime::{EventKind, Trace, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: String,
    pub detail: String,
}

impl Violation {
    fn new(invariant: &str, detail: String) -> Self {
        Violation {
            invariant: invariant.to_string(),
            detail,
        }
    }
}

type Scope = (Option<u64>, Option<u64>);

fn scope(e: &TraceEvent) -> Scope {
    (e.superstep, e.round)
}

/// Within each (superstep, round), every task of stage `s` ends before any
/// task of stage `s + 1` starts.
pub fn check_barrier(trace: &Trace) -> Vec<Violation> {
    // (scope, stage) -> (last end (seq, wall), first start (seq, wall))
    let mut last_end: BTreeMap<(Scope, usize), (u64, u64)> = BTreeMap::new();
    let mut first_start: BTreeMap<(Scope, usize), (u64, u64)> = BTreeMap::new();
    for e in &trace.events {
        let Some(stage) = e.stage else { continue };
        let key = (scope(e), stage);
        match e.kind {
            EventKind::TaskEnd | EventKind::TaskFailed => {
                let v = last_end.entry(key).or_insert((e.seq, e.wall_ns));
                *v = (*v).max((e.seq, e.wall_ns));
            }
            EventKind::TaskStart => {
                let v = first_start.entry(key).or_insert((e.seq, e.wall_ns));
                *v = (*v).min((e.seq, e.wall_ns));
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (&(sc, stage), &(end_seq, end_wall)) in &last_end {
        if let Some(&(start_seq, start_wall)) = first_start.get(&(sc, stage + 1)) {
            if start_seq < end_seq || start_wall < end_wall {
                out.push(Violation::new(
                    "barrier",
                    format!(
                        "superstep {:?} round {:?}: stage {} starts at seq {start_seq} before stage {stage} ends at seq {end_seq}",
                        sc.0,
                        sc.1,
                        stage + 1
                    ),
                ));
            }
        }
    }
    out
}

fn is_token_event(e: &TraceEvent) -> bool {
    matches!(e.kind, EventKind::Send | EventKind::Receive) && e.channel.is_some()
}

/// Per channel, tokens are received in the order they were sent.
pub fn check_fifo(trace: &Trace) -> Vec<Violation> {
    let mut sent: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut received: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for e in trace.events.iter().filter(|e| is_token_event(e)) {
        let (ch, tok) = (e.channel.expect("filtered"), e.token.unwrap_or(u64::MAX));
        let list = if e.kind == EventKind::Send { &mut sent } else { &mut received };
        list.entry(ch).or_default().push(tok);
    }
    let mut out = Vec::new();
    for (ch, recv) in &received {
        let sends = sent.get(ch).map(Vec::as_slice).unwrap_or(&[]);
        if let Some(i) = recv.iter().zip(sends).position(|(r, s)| r != s) {
            out.push(Violation::new(
                "fifo",
                format!("channel {ch}: receive #{i} is token {} but send #{i} was token {}", recv[i], sends[i]),
            ));
        } else if recv.len() > sends.len() {
            out.push(Violation::new("fifo", format!("channel {ch}: {} receives for {} sends", recv.len(), sends.len())));
        }
    }
    out
}

/// Per channel, as many data tokens are received as were sent.
pub fn check_conservation(trace: &Trace) -> Vec<Violation> {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for e in trace.events.iter().filter(|e| is_token_event(e) && !e.is_marker()) {
        let c = counts.entry(e.channel.expect("filtered")).or_default();
        if e.kind == EventKind::Send {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    counts
        .into_iter()
        .filter(|(_, (s, r))| s != r)
        .map(|(ch, (s, r))| Violation::new("conservation", format!("channel {ch}: {s} sent, {r} received")))
        .collect()
}

/// Supersteps of one driver never overlap, and body tasks of superstep n
/// run strictly between its begin and end events.
pub fn check_supersteps(trace: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut open: BTreeMap<usize, u64> = BTreeMap::new();
    let mut windows: BTreeMap<u64, Vec<(u64, u64)>> = BTreeMap::new();
    let mut begin_seq: BTreeMap<(usize, u64), u64> = BTreeMap::new();
    for e in &trace.events {
        let (Some(actor), Some(n)) = (e.actor, e.superstep) else { continue };
        match e.kind {
            EventKind::SuperstepBegin => {
                if let Some(prev) = open.insert(actor, n) {
                    out.push(Violation::new(
                        "superstep",
                        format!("actor {actor}: superstep {n} begins while {prev} is open"),
                    ));
                }
                begin_seq.insert((actor, n), e.seq);
            }
            EventKind::SuperstepEnd => {
                if open.remove(&actor) != Some(n) {
                    out.push(Violation::new("superstep", format!("actor {actor}: unmatched end of superstep {n}")));
                }
                if let Some(b) = begin_seq.remove(&(actor, n)) {
                    windows.entry(n).or_default().push((b, e.seq));
                }
            }
            _ => {}
        }
    }
    for e in trace.events.iter().filter(|e| matches!(e.kind, EventKind::TaskStart | EventKind::TaskEnd)) {
        let Some(n) = e.superstep else { continue };
        let inside = windows.get(&n).is_some_and(|ws| ws.iter().any(|&(b, end)| b < e.seq && e.seq < end));
        if !inside {
            out.push(Violation::new(
                "superstep",
                format!("task event seq {} tagged superstep {n} outside its superstep", e.seq),
            ));
        }
    }
    out
}

/// All trace invariants.
pub fn check_all(trace: &Trace) -> Vec<Violation> {
    let mut v = check_barrier(trace);
    v.extend(check_fifo(trace));
    v.extend(check_conservation(trace));
    v.extend(check_supersteps(trace));
    v
}

/// Some task of `down` starts before the last task of `up` ends.
pub fn pipeline_witness(trace: &Trace, up: usize, down: usize) -> bool {
    let last_up_end = trace
        .of_kind(EventKind::TaskEnd)
        .filter(|e| e.actor == Some(up))
        .map(|e| e.seq)
        .max();
    let first_down_start = trace
        .of_kind(EventKind::TaskStart)
        .filter(|e| e.actor == Some(down))
        .map(|e| e.seq)
        .min();
    matches!((first_down_start, last_up_end), (Some(d), Some(u)) if d < u)
}

/// Two tasks carrying different loop tags were running at the same time.
pub fn concurrent_tags(trace: &Trace) -> bool {
    let mut running: BTreeMap<u64, u64> = BTreeMap::new();
    for e in &trace.events {
        let (Some(task), Some(tag)) = (e.task, e.tag) else { continue };
        match e.kind {
            EventKind::TaskStart => {
                if running.values().any(|&t| t != tag) {
                    return true;
                }
                running.insert(task, tag);
            }
            EventKind::TaskEnd | EventKind::TaskFailed => {
                running.remove(&task);
            }
            _ => {}
        }
    }
    false
}

/// Distinct loop tags seen in task events.
pub fn tags(trace: &Trace) -> BTreeSet<u64> {
    trace.of_kind(EventKind::TaskStart).filter_map(|e| e.tag).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Tracer;

    fn ev(kind: EventKind) -> TraceEvent {
        TraceEvent::new(kind)
    }

    fn staged(kind: EventKind, stage: usize, task: u64) -> TraceEvent {
        let mut e = ev(kind).task(task).actor(stage);
        e.stage = Some(stage);
        e
    }

    #[test]
    fn barrier_detects_overlap() {
        let t = Tracer::default();
        t.emit(staged(EventKind::TaskStart, 0, 0));
        t.emit(staged(EventKind::TaskStart, 1, 1));
        t.emit(staged(EventKind::TaskEnd, 0, 0));
        t.emit(staged(EventKind::TaskEnd, 1, 1));
        assert_eq!(check_barrier(&t.finish()).len(), 1);

        let ok = Tracer::default();
        ok.emit(staged(EventKind::TaskStart, 0, 0));
        ok.emit(staged(EventKind::TaskEnd, 0, 0));
        ok.emit(staged(EventKind::TaskStart, 1, 1));
        ok.emit(staged(EventKind::TaskEnd, 1, 1));
        assert!(check_barrier(&ok.finish()).is_empty());
    }

    #[test]
    fn fifo_and_conservation() {
        let t = Tracer::default();
        t.emit(ev(EventKind::Send).channel(0).token(1));
        t.emit(ev(EventKind::Send).channel(0).token(2));
        t.emit(ev(EventKind::Receive).channel(0).token(2));
        let trace = t.finish();
        assert_eq!(check_fifo(&trace).len(), 1);
        assert_eq!(check_conservation(&trace).len(), 1);

        let t = Tracer::default();
        t.emit(ev(EventKind::Send).channel(0).token(1));
        t.emit(ev(EventKind::Send).channel(0).token(2).marker("eos"));
        t.emit(ev(EventKind::Receive).channel(0).token(1));
        let trace = t.finish();
        assert!(check_fifo(&trace).is_empty());
        assert!(check_conservation(&trace).is_empty());
    }

    #[test]
    fn tag_overlap() {
        let t = Tracer::default();
        t.emit(ev(EventKind::TaskStart).task(0).tag(Some(0)));
        t.emit(ev(EventKind::TaskStart).task(1).tag(Some(1)));
        t.emit(ev(EventKind::TaskEnd).task(0).tag(Some(0)));
        assert!(concurrent_tags(&t.finish()));
        let t = Tracer::default();
        t.emit(ev(EventKind::TaskStart).task(0).tag(Some(0)));
        t.emit(ev(EventKind::TaskEnd).task(0).tag(Some(0)));
        t.emit(ev(EventKind::TaskStart).task(1).tag(Some(1)));
        assert!(!concurrent_tags(&t.finish()));
    }
}
