//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero if any fails. Every check compares the engine against an oracle
//! written here, from the trace events or from first principles.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use flowdeck::corpus::{self, AnyProgram};
use flowdeck::graph::{fuse, FusionHints};
use flowdeck::harness::{sweep, RunMatrix};
use flowdeck::plan::{expand, expand_iteration, IterationStrategy, Parallelism, PlanMode};
use flowdeck::runtime::{run, EventKind, RunConfig, RunOutput, RuntimeKind, Trace};
use flowdeck::{
    Dispatch, ExecutionPlan, InputData, Inputs, LogicalProgram, Multiset, Outputs, ProgramMode, Record, SemanticGraph, Token,
    Value,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

// Every trace from criteria 1-9 is audited as it is produced; criterion 11
// reports the tally. (traces audited, failures)
static AUDIT: Mutex<(usize, Vec<String>)> = Mutex::new((0, Vec::new()));

fn keep(label: impl Into<String>, trace: Trace) {
    let result = audit(&trace);
    let mut a = AUDIT.lock().unwrap();
    a.0 += 1;
    if let Err(e) = result {
        a.1.push(format!("{}: {e}", label.into()));
    }
}

// #Send = #Receive per channel for data tokens, and each channel's receives
// are a prefix of its sends.
fn audit(t: &Trace) -> Result<(), String> {
    let mut sent: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut recv: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut data: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for e in &t.events {
        let (Some(ch), Some(tok)) = (e.channel, e.token) else { continue };
        // End-of-stream markers are sent but may never be read.
        let is_data = e.marker.is_none();
        match e.kind {
            EventKind::Send => {
                sent.entry(ch).or_default().push(tok);
                data.entry(ch).or_default().0 += is_data as usize;
            }
            EventKind::Receive => {
                recv.entry(ch).or_default().push(tok);
                data.entry(ch).or_default().1 += is_data as usize;
            }
            _ => {}
        }
    }
    if let Some((ch, (s, r))) = data.iter().find(|(_, (s, r))| s != r) {
        return Err(format!("channel {ch}: {s} sends, {r} receives"));
    }
    for (ch, r) in &recv {
        let s = sent.get(ch).map(Vec::as_slice).unwrap_or(&[]);
        ensure(r.len() <= s.len() && r[..] == s[..r.len()], || format!("channel {ch} out of order"))?;
    }
    Ok(())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn plan(g: &SemanticGraph, p: usize, mode: PlanMode) -> Result<ExecutionPlan, String> {
    expand(g, &Parallelism::uniform(p), mode).map_err(|e| e.to_string())
}

fn exec(plan: &ExecutionPlan, inputs: &Inputs, cfg: &RunConfig) -> Result<RunOutput, String> {
    run(plan, inputs, cfg).map_err(|f| f.to_string())
}

fn one_input(name: &str, records: Vec<Record>) -> Inputs {
    [(name.to_string(), InputData::Records(records))].into_iter().collect()
}

fn sorted(mut v: Vec<Record>) -> Vec<Record> {
    v.sort();
    v
}

fn bag_equal(a: &Outputs, b: &Outputs) -> bool {
    a.len() == b.len()
        && a.iter().all(|(k, x)| b.get(k).is_some_and(|y| sorted(x.records()) == sorted(y.records())))
}

fn kernel(name: &str) -> flowdeck::Kernel {
    flowdeck::kernel::require(name).unwrap()
}

// 1. Every (mode, workers, dispatch) run is bag-equal to the reference.
fn oracle_equivalence() -> Check {
    let mut runs = 0;
    for p in corpus::all() {
        let g = p.semantic_graph().map_err(|e| e.to_string())?;
        for seed in 0..50 {
            let data = corpus::random_inputs(p.name(), seed, 1000).map_err(|e| e.to_string())?;
            let want = p.reference(&data).map_err(|e| e.to_string())?;
            for mode in [PlanMode::Bsp, PlanMode::Pipelined] {
                for workers in [1, 2, 4, 8] {
                    let pl = plan(&g, workers, mode)?;
                    for dispatch in [Dispatch::RoundRobin, Dispatch::OnDemand] {
                        let cfg = RunConfig { mode, workers, dispatch, seed, ..RunConfig::default() };
                        let label = format!("{} seed {seed} {mode:?} x{workers} {dispatch:?}", p.name());
                        let out = exec(&pl, &data, &cfg).map_err(|e| format!("{label}: {e}"))?;
                        ensure(bag_equal(&out.outputs, &want), || format!("{label}: outputs differ from reference"))?;
                        keep(label, out.trace);
                        runs += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{runs} runs bag-equal to the reference"))
}

fn random_pairs(rng: &mut ChaCha8Rng, max: usize) -> Vec<Record> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| Record::keyed(rng.gen_range(0..5i64), rng.gen_range(0..10i64))).collect()
}

fn single_op_graph(build: impl FnOnce(&mut LogicalProgram) -> flowdeck::OpId) -> SemanticGraph {
    let mut prog = LogicalProgram::new("op", ProgramMode::Batch);
    let out = build(&mut prog);
    prog.sink(out, "out").unwrap();
    flowdeck::translate(&prog).unwrap()
}

// 2. groupByKey, join and map against their multiset comprehensions.
fn operator_comprehensions() -> Check {
    let gbk = single_op_graph(|p| {
        let s = p.source("a").unwrap();
        p.group_by_key(s).unwrap()
    });
    let join = single_op_graph(|p| {
        let a = p.source("a").unwrap();
        let b = p.source("b").unwrap();
        p.join(a, b).unwrap()
    });
    let map = single_op_graph(|p| {
        let s = p.source("a").unwrap();
        p.map(s, kernel("add_one")).unwrap()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let workers = 1 + i % 3;
        let cfg = RunConfig { workers, seed: i as u64, ..RunConfig::default() };

        // {(k, {v : (k, v) in a})}
        let a = random_pairs(&mut rng, 12);
        let keys: BTreeSet<&Value> = a.iter().map(|r| r.key.as_ref().unwrap()).collect();
        let want = sorted(
            keys.iter()
                .map(|&k| {
                    let mut vs: Vec<Value> = a.iter().filter(|r| r.key.as_ref() == Some(k)).map(|r| r.payload.clone()).collect();
                    vs.sort();
                    Record::keyed(k.clone(), Value::List(vs))
                })
                .collect(),
        );
        let out = exec(&plan(&gbk, workers, PlanMode::Pipelined)?, &one_input("a", a.clone()), &cfg)?;
        ensure(sorted(out.outputs["out"].records()) == want, || format!("group_by_key differs on {a:?}"))?;
        keep(format!("group_by_key #{i}"), out.trace);

        // {(k, (va, vb)) : (k, va) in a and (k, vb) in b}
        let b = random_pairs(&mut rng, 12);
        let mut want = Vec::new();
        for x in &a {
            for y in &b {
                if x.key == y.key {
                    want.push(Record::keyed(x.key.clone().unwrap(), Value::pair(x.payload.clone(), y.payload.clone())));
                }
            }
        }
        let data: Inputs = [("a".to_string(), InputData::Records(a.clone())), ("b".to_string(), InputData::Records(b.clone()))]
            .into_iter()
            .collect();
        let out = exec(&plan(&join, workers, PlanMode::Pipelined)?, &data, &cfg)?;
        ensure(sorted(out.outputs["out"].records()) == sorted(want), || format!("join differs on {a:?} {b:?}"))?;
        keep(format!("join #{i}"), out.trace);

        // {f(v) : v in a}, f = +1 on the payload
        let want: Vec<Record> = a
            .iter()
            .map(|r| Record { key: r.key.clone(), payload: Value::Int(r.payload.as_int().unwrap() + 1) })
            .collect();
        let out = exec(&plan(&map, workers, PlanMode::Bsp)?, &one_input("a", a.clone()), &cfg)?;
        ensure(sorted(out.outputs["out"].records()) == sorted(want), || format!("map differs on {a:?}"))?;
        keep(format!("map #{i}"), out.trace);
    }
    Ok("1000 multisets each for group_by_key, join, map".into())
}

fn chunked(records: Vec<Record>, rng: &mut ChaCha8Rng) -> Vec<Multiset> {
    let mut chunks = Vec::new();
    let mut rest = records.as_slice();
    while !rest.is_empty() {
        let n = rng.gen_range(1..=rest.len().min(25));
        chunks.push(rest[..n].iter().cloned().collect());
        rest = &rest[n..];
    }
    chunks
}

// 3. Chunk i of a lifted program equals the batch program on chunk i.
fn micro_batch_translation() -> Check {
    let programs = [corpus::wordcount().unwrap(), corpus::map_reduce().unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut chunks_checked = 0;
    for i in 0..100u64 {
        let batch = &programs[i as usize % 2];
        let input = batch.input_names()[0].to_string();
        let sink = batch.output_names()[0].to_string();
        let records = corpus::random_inputs(&batch.name, i, 200).unwrap()[&input].records();
        let chunks = chunked(records, &mut rng);
        let lifted = flowdeck::lift_to_stream(batch).map_err(|e| e.to_string())?;
        let g = flowdeck::translate(&lifted).map_err(|e| e.to_string())?;
        let workers = 1 + (i as usize % 4);
        let data: Inputs = [(input.clone(), InputData::Batches(chunks.clone()))].into_iter().collect();
        let out = exec(&plan(&g, workers, PlanMode::Pipelined)?, &data, &RunConfig { workers, seed: i, ..RunConfig::default() })?;
        let mut by_seq: BTreeMap<u64, Vec<Record>> = BTreeMap::new();
        for t in &out.outputs[&sink].tokens {
            let Token::MicroBatch(c) = t else { return Err(format!("stream sink got a non-chunk token {t:?}")) };
            by_seq.entry(c.seq).or_default().extend(c.batch.records().iter().cloned());
        }
        ensure(by_seq.keys().all(|&s| (s as usize) < chunks.len()), || "chunk sequence number out of range".into())?;
        for (seq, chunk) in chunks.iter().enumerate() {
            let alone = one_input(&input, chunk.records().to_vec());
            let want = flowdeck::reference::evaluate(batch, &alone).map_err(|e| e.to_string())?;
            let got = sorted(by_seq.remove(&(seq as u64)).unwrap_or_default());
            ensure(got == sorted(want[&sink].records()), || format!("stream {i} chunk {seq} differs from batch"))?;
            chunks_checked += 1;
        }
        keep(format!("lifted stream {i}"), out.trace);
    }
    Ok(format!("100 streams, {chunks_checked} chunks"))
}

// 4. In BSP word count, every stage-s task ends before any stage-(s+1)
// task starts, per round.
fn bsp_barrier() -> Check {
    let g = corpus::wordcount().map(AnyProgram::Declarative).unwrap().semantic_graph().unwrap();
    let pl = plan(&g, 4, PlanMode::Bsp)?;
    let mut ordered = 0;
    for seed in 0..50 {
        let data = corpus::random_inputs("wordcount", seed, 300).unwrap();
        let out = exec(&pl, &data, &RunConfig { mode: PlanMode::Bsp, workers: 4, seed, jitter_us: 50, ..RunConfig::default() })?;
        type Span = (Option<(u64, u64)>, Option<(u64, u64)>);
        let mut spans: BTreeMap<(Option<u64>, usize), Span> = BTreeMap::new();
        for e in &out.trace.events {
            let Some(stage) = e.stage else { continue };
            let s = spans.entry((e.round, stage)).or_default();
            let at = (e.wall_ns, e.seq);
            match e.kind {
                EventKind::TaskStart => s.0 = Some(s.0.map_or(at, |x| x.min(at))),
                EventKind::TaskEnd => s.1 = Some(s.1.map_or(at, |x| x.max(at))),
                _ => {}
            }
        }
        ensure(spans.keys().any(|&(_, st)| st > 0), || "word count has a single stage".into())?;
        for (&(round, stage), &(_, last_end)) in &spans {
            if let (Some(end), Some((Some(first_start), _))) = (last_end, spans.get(&(round, stage + 1))) {
                ensure(end.0 <= first_start.0 && end.1 < first_start.1, || {
                    format!("seed {seed} round {round:?}: stage {} starts before stage {stage} ends", stage + 1)
                })?;
            }
        }
        ordered += 1;
        keep(format!("bsp word count seed {seed}"), out.trace);
    }
    Ok(format!("{ordered}/50 traces ordered"))
}

fn overlaps(trace: &Trace, up: usize, down: usize) -> bool {
    let last_up = trace.events.iter().filter(|e| e.kind == EventKind::TaskEnd && e.actor == Some(up)).map(|e| e.seq).max();
    let first_down = trace.events.iter().filter(|e| e.kind == EventKind::TaskStart && e.actor == Some(down)).map(|e| e.seq).min();
    matches!((first_down, last_up), (Some(d), Some(u)) if d < u)
}

// 5. Downstream starts before upstream finishes in pipelined runs.
fn pipelining_witness() -> Check {
    let mut prog = LogicalProgram::new("pipe", ProgramMode::TupleStream);
    let s = prog.source("in").unwrap();
    let a = prog.map(s, kernel("add_one")).unwrap();
    let b = prog.map(a, kernel("double")).unwrap();
    prog.sink(b, "out").unwrap();
    let g = flowdeck::translate(&prog).unwrap();
    let pl = plan(&g, 1, PlanMode::Pipelined)?;
    let [up, down] = [&g.actors[1].label, &g.actors[2].label].map(|l| pl.actors.iter().find(|x| &x.label == l).unwrap().id.0);
    let data = one_input("in", (0..100).map(Record::unkeyed).collect());
    let mut lines = Vec::new();
    for runtime in [RuntimeKind::Process, RuntimeKind::Scheduled] {
        let mut hits = 0;
        let mut misses = Vec::new();
        for seed in 0..50 {
            let cfg = RunConfig { workers: 2, runtime, seed, ..RunConfig::default() };
            let out = exec(&pl, &data, &cfg)?;
            if overlaps(&out.trace, up, down) {
                hits += 1;
            } else {
                misses.push(seed);
            }
            keep(format!("pipeline {runtime:?} seed {seed}"), out.trace);
        }
        // Re-run the misses with injected delays.
        let mut rescued = 0;
        for &seed in &misses {
            let out = exec(&pl, &data, &RunConfig { workers: 2, runtime, seed, jitter_us: 300, ..RunConfig::default() })?;
            rescued += overlaps(&out.trace, up, down) as usize;
            keep(format!("pipeline {runtime:?} seed {seed} delayed"), out.trace);
        }
        ensure(hits * 100 >= 95 * 50, || format!("{runtime:?}: only {hits}/50 runs overlap"))?;
        ensure(rescued == misses.len(), || format!("{runtime:?}: {rescued}/{} delayed re-runs overlap", misses.len()))?;
        lines.push(format!("{runtime:?} {hits}/50 (+{rescued} with delays)"));
    }
    Ok(lines.join(", "))
}

fn matrix(program: &str) -> RunMatrix {
    RunMatrix {
        program: program.into(),
        dataset: Default::default(),
        workers: vec![1, 2, 4],
        dispatch: vec![Dispatch::RoundRobin, Dispatch::OnDemand],
        modes: vec![PlanMode::Bsp, PlanMode::Pipelined],
        seeds: vec![0, 1],
        repetitions: 1,
        runtimes: vec![RuntimeKind::Scheduled, RuntimeKind::Process],
        parallelism: None,
        jitter_us: 20,
        channel_capacity: None,
        concurrent: false,
    }
}

// 6. Programs without from-any actors give byte-identical sinks everywhere.
fn kahn_determinism() -> Check {
    let mut cells = usize::MAX;
    for p in corpus::all().into_iter().filter(|p| !p.semantic_graph().unwrap().contains_from_any()) {
        let data = corpus::random_inputs(p.name(), 6, 200).unwrap();
        let m = matrix(p.name());
        let g = p.semantic_graph().unwrap();
        let mut first: Option<BTreeMap<String, Vec<u8>>> = None;
        for cfg in m.cells() {
            let out = exec(&plan(&g, cfg.parallelism(), cfg.mode)?, &data, &cfg)?;
            let bytes: BTreeMap<String, Vec<u8>> = out
                .outputs
                .iter()
                .map(|(k, s)| (k.clone(), serde_json::to_vec(&canonical(&s.tokens)).unwrap()))
                .collect();
            match &first {
                None => first = Some(bytes),
                Some(f) => ensure(f == &bytes, || format!("{}: {cfg:?} differs from the first cell", p.name()))?,
            }
            keep(format!("sweep {} {cfg:?}", p.name()), out.trace);
        }
        let v = sweep(&m, &p, &data).map_err(|e| e.to_string())?;
        ensure(v.deterministic_order && !v.failed(), || v.table())?;
        cells = cells.min(v.cells.len());
    }
    ensure(cells >= 24, || format!("only {cells} cells"))?;
    Ok(format!("5 programs x {cells} cells, zero discrepancies"))
}

// Collections and chunks are unordered; tuples keep their order.
fn canonical(tokens: &[Token]) -> Vec<Vec<Record>> {
    tokens
        .iter()
        .map(|t| match t {
            Token::Tuple(r) => vec![r.clone()],
            other => sorted(other.records().to_vec()),
        })
        .collect()
}

// 7. The from-any merge shows several orders but a single bag.
fn nondeterminism_witness() -> Check {
    let p = corpus::get("from-any-merge").unwrap();
    let g = p.semantic_graph().unwrap();
    let pl = plan(&g, 1, PlanMode::Pipelined)?;
    let data: Inputs = [
        ("left".to_string(), InputData::Records((0..30).map(Record::unkeyed).collect())),
        ("right".to_string(), InputData::Records((100..130).map(Record::unkeyed).collect())),
    ]
    .into_iter()
    .collect();
    let want = sorted(data.values().flat_map(|d| d.records()).collect());
    let mut orders = BTreeSet::new();
    for seed in 0..20 {
        let cfg = RunConfig { workers: 2, runtime: RuntimeKind::Process, seed, jitter_us: 300, ..RunConfig::default() };
        let out = exec(&pl, &data, &cfg)?;
        let got = out.outputs["merge"].records();
        ensure(sorted(got.clone()) == want, || format!("seed {seed}: merge lost or invented records"))?;
        orders.insert(got);
        keep(format!("merge seed {seed}"), out.trace);
    }
    ensure(orders.len() >= 2, || "every seed gave the same order".into())?;
    Ok(format!("{} distinct orders over 20 seeds, all bag-equal", orders.len()))
}

// 8. map_with_state through the state channel equals a per-key left fold.
fn stateful_emulation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..200u64 {
        let (kname, init) = if i % 2 == 0 { ("running_sum", 0) } else { ("count", 0) };
        let mut prog = LogicalProgram::new("state", ProgramMode::TupleStream);
        let s = prog.source("in").unwrap();
        let m = prog.map_with_state(s, kernel(kname), Value::Int(init)).unwrap();
        prog.sink(m, "out").unwrap();
        let g = flowdeck::translate(&prog).unwrap();
        let n = rng.gen_range(0..120);
        let stream: Vec<Record> = (0..n).map(|_| Record::keyed(rng.gen_range(0..6i64), rng.gen_range(-50..50i64))).collect();

        let mut acc: BTreeMap<Value, i64> = BTreeMap::new();
        let mut want: BTreeMap<Value, Vec<i64>> = BTreeMap::new();
        for r in &stream {
            let k = r.key.clone().unwrap();
            let s = acc.entry(k.clone()).or_insert(init);
            *s = if kname == "count" { *s + 1 } else { *s + r.payload.as_int().unwrap() };
            want.entry(k).or_default().push(*s);
        }

        let workers = [1, 2, 4][i as usize % 3];
        let runtime = if i % 4 < 2 { RuntimeKind::Scheduled } else { RuntimeKind::Process };
        let cfg = RunConfig { workers, runtime, seed: i, ..RunConfig::default() };
        let out = exec(&plan(&g, workers, PlanMode::Pipelined)?, &one_input("in", stream), &cfg)?;
        let mut got: BTreeMap<Value, Vec<i64>> = BTreeMap::new();
        for r in out.outputs["out"].records() {
            got.entry(r.key.clone().unwrap()).or_default().push(r.payload.as_int().unwrap());
        }
        ensure(got == want, || format!("stream {i} ({kname}, x{workers}, {runtime:?}): per-key fold differs"))?;
        keep(format!("map_with_state {i}"), out.trace);
    }
    Ok("200 keyed streams".into())
}

// Supersteps of the driver are disjoint and contain their body tasks.
fn supersteps_nest(trace: &Trace) -> Result<u64, String> {
    let mut windows: Vec<(u64, u64, u64)> = Vec::new();
    let mut open: Option<(u64, u64)> = None;
    for e in &trace.events {
        match e.kind {
            EventKind::SuperstepBegin => {
                ensure(open.is_none(), || format!("superstep {:?} begins inside another", e.superstep))?;
                open = Some((e.superstep.unwrap(), e.seq));
            }
            EventKind::SuperstepEnd => {
                let (n, b) = open.take().ok_or("superstep end without begin")?;
                ensure(e.superstep == Some(n), || "mismatched superstep end".into())?;
                windows.push((n, b, e.seq));
            }
            _ => {}
        }
    }
    for e in trace.events.iter().filter(|e| matches!(e.kind, EventKind::TaskStart | EventKind::TaskEnd)) {
        if let Some(n) = e.superstep {
            ensure(windows.iter().any(|&(m, b, end)| m == n && b < e.seq && e.seq < end), || {
                format!("task event {} of superstep {n} outside it", e.seq)
            })?;
        }
    }
    Ok(windows.len() as u64)
}

fn tags_overlap(trace: &Trace) -> bool {
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
            EventKind::TaskEnd => {
                running.remove(&task);
            }
            _ => {}
        }
    }
    false
}

// 9. Halving: {8} -> {0.5} in four supersteps; tagged tokens overlap.
fn iteration() -> Check {
    let p = corpus::get("halving").unwrap();
    let g = p.semantic_graph().unwrap();
    for runtime in [RuntimeKind::Scheduled, RuntimeKind::Process] {
        let out = exec(&plan(&g, 2, PlanMode::Pipelined)?, &one_input("values", vec![Record::unkeyed(8)]), &RunConfig {
            workers: 2,
            runtime,
            ..RunConfig::default()
        })?;
        let got = out.outputs["result"].records();
        ensure(got == vec![Record::unkeyed(0.5)], || format!("{runtime:?}: halving gave {got:?}"))?;
        let n = supersteps_nest(&out.trace)?;
        ensure(n == 4 && out.stats.supersteps == 4, || format!("{runtime:?}: {n} supersteps in the trace"))?;
        keep(format!("halving {runtime:?}"), out.trace);
    }
    let it = g.actors.iter().find(|a| a.hierarchical_body.is_some()).unwrap();
    let tagged = expand_iteration(it, 3, IterationStrategy::TaggedToken).map_err(|e| e.to_string())?;
    let batches: Vec<Multiset> = [8, 40, 3].iter().map(|&v| std::iter::once(Record::unkeyed(v)).collect()).collect();
    let data: Inputs = [("in".to_string(), InputData::Batches(batches))].into_iter().collect();
    let want = sorted(vec![Record::unkeyed(0.5), Record::unkeyed(0.625), Record::unkeyed(0.75)]);
    let mut concurrent = 0;
    for seed in 0..10 {
        let cfg = RunConfig { workers: 4, runtime: RuntimeKind::Process, seed, jitter_us: 200, ..RunConfig::default() };
        let out = exec(&tagged, &data, &cfg)?;
        ensure(sorted(out.outputs["out"].records()) == want, || format!("tagged seed {seed}: wrong result"))?;
        concurrent += tags_overlap(&out.trace) as usize;
        keep(format!("tagged seed {seed}"), out.trace);
    }
    ensure(concurrent >= 1, || "no trace shows two tags in flight".into())?;
    Ok(format!("4 supersteps, nested; concurrent tags in {concurrent}/10 traces"))
}

// 10. Fusion keeps results and removes exactly the flat_map/map seam.
fn fusion_soundness() -> Check {
    let mut runs = 0;
    for p in corpus::all() {
        let g = p.semantic_graph().unwrap();
        let fused = fuse(&g, &FusionHints::default());
        if p.name() == "wordcount" {
            ensure(fused.actors.len() + 1 == g.actors.len(), || {
                format!("word count: {} actors fused vs {} unfused", fused.actors.len(), g.actors.len())
            })?;
        }
        let (a, b) = (plan(&g, 2, PlanMode::Pipelined)?, plan(&fused, 2, PlanMode::Pipelined)?);
        for seed in 0..50 {
            let data = corpus::random_inputs(p.name(), 100 + seed, 300).unwrap();
            let cfg = RunConfig { workers: 2, seed, ..RunConfig::default() };
            let (x, y) = (exec(&a, &data, &cfg)?, exec(&b, &data, &cfg)?);
            ensure(bag_equal(&x.outputs, &y.outputs), || format!("{} seed {seed}: fused output differs", p.name()))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} input pairs bag-equal"))
}

// 11. Every kept trace: #Send = #Receive and FIFO order per channel.
fn conservation_and_fifo() -> Check {
    let a = AUDIT.lock().unwrap();
    ensure(a.0 > 0, || "no traces were produced".into())?;
    match a.1.first() {
        Some(first) => Err(format!("{} of {} traces fail; first: {first}", a.1.len(), a.0)),
        None => Ok(format!("{} traces", a.0)),
    }
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 reference equivalence", oracle_equivalence, Duration::from_secs(300)),
        ("2 operator comprehensions", operator_comprehensions, Duration::from_secs(30)),
        ("3 micro-batch translation", micro_batch_translation, Duration::from_secs(30)),
        ("4 bsp barrier", bsp_barrier, Duration::MAX),
        ("5 pipelining witness", pipelining_witness, Duration::MAX),
        ("6 kahn determinism", kahn_determinism, Duration::MAX),
        ("7 nondeterminism witness", nondeterminism_witness, Duration::MAX),
        ("8 stateful emulation", stateful_emulation, Duration::from_secs(30)),
        ("9 iteration", iteration, Duration::MAX),
        ("10 fusion soundness", fusion_soundness, Duration::MAX),
        ("11 conservation and fifo", conservation_and_fifo, Duration::MAX),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check, budget) in criteria {
        if only.as_ref().is_some_and(|o| !name.contains(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        let result = result.and_then(|msg| {
            if took > budget {
                Err(format!("{msg}; took {took:.1?}, budget {budget:?}"))
            } else {
                Ok(msg)
            }
        });
        match result {
            Ok(msg) => println!("PASS criterion {name}: {msg} ({took:.1?})"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg} ({took:.1?})");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
