use proptest::prelude::*;

use flowdeck::corpus;
use flowdeck::graph::{fuse, FusionHints};
use flowdeck::harness::check_all;
use flowdeck::plan::{Parallelism, PlanMode};
use flowdeck::runtime::Trace;
use flowdeck::{discretize, Dispatch, InputData, Inputs, Record, RunConfig, RuntimeKind};

fn ints() -> impl Strategy<Value = Vec<Record>> {
    prop::collection::vec(-500i64..500, 0..120).prop_map(|v| v.into_iter().map(Record::unkeyed).collect())
}

fn sorted(mut v: Vec<Record>) -> Vec<Record> {
    v.sort();
    v
}

fn config() -> impl Strategy<Value = RunConfig> {
    (
        1usize..5,
        prop_oneof![Just(Dispatch::RoundRobin), Just(Dispatch::OnDemand)],
        prop_oneof![Just(PlanMode::Bsp), Just(PlanMode::Pipelined)],
        prop_oneof![Just(RuntimeKind::Scheduled), Just(RuntimeKind::Process)],
        any::<u64>(),
        prop::option::of(1usize..4),
    )
        .prop_map(|(workers, dispatch, mode, runtime, seed, channel_capacity)| RunConfig {
            workers,
            dispatch,
            mode,
            runtime,
            seed,
            channel_capacity,
            ..RunConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn map_reduce_sums_per_residue(xs in ints(), cfg in config()) {
        let p = corpus::get("map-reduce").unwrap();
        let plan = flowdeck::expand(&p.semantic_graph().unwrap(), &Parallelism::uniform(cfg.workers), cfg.mode).unwrap();
        let mut want = std::collections::BTreeMap::new();
        for r in &xs {
            let n = r.payload.as_int().unwrap();
            *want.entry(n.rem_euclid(4)).or_insert(0i64) += n;
        }
        let want: Vec<Record> = want.into_iter().map(|(k, v)| Record::keyed(k, v)).collect();
        let inputs: Inputs = [("numbers".to_string(), InputData::Records(xs))].into_iter().collect();
        let out = flowdeck::run(&plan, &inputs, &cfg).unwrap();
        prop_assert_eq!(sorted(out.outputs["sums"].records()), want);
        prop_assert!(check_all(&out.trace).is_empty());
    }

    #[test]
    fn fusion_never_changes_results(seed in 0u64..1000, p in 1usize..4) {
        for prog in corpus::all() {
            let g = prog.semantic_graph().unwrap();
            let f = fuse(&g, &FusionHints::default());
            prop_assert!(f.actors.len() <= g.actors.len());
            let inputs = corpus::random_inputs(prog.name(), seed, 80).unwrap();
            let cfg = RunConfig { workers: p, ..RunConfig::default() };
            let a = flowdeck::run(&flowdeck::expand(&g, &Parallelism::uniform(p), PlanMode::Pipelined).unwrap(), &inputs, &cfg).unwrap();
            let b = flowdeck::run(&flowdeck::expand(&f, &Parallelism::uniform(p), PlanMode::Pipelined).unwrap(), &inputs, &cfg).unwrap();
            prop_assert!(flowdeck::dataset::outputs_bag_equal(&a.outputs, &b.outputs), "{}", prog.name());
        }
    }

    #[test]
    fn discretize_preserves_order_and_content(xs in ints(), size in 1usize..20) {
        let chunks = discretize(xs.clone(), size).unwrap();
        let joined: Vec<Record> = chunks.iter().flat_map(|c| c.batch.records().to_vec()).collect();
        prop_assert_eq!(joined, xs.clone());
        prop_assert!(chunks.iter().all(|c| !c.batch.is_empty() && c.batch.len() <= size));
        prop_assert!(chunks.iter().enumerate().all(|(i, c)| c.seq == i as u64));
    }

    #[test]
    fn traces_round_trip_through_jsonl(seed in 0u64..500, workers in 1usize..4) {
        let p = corpus::get("wordcount").unwrap();
        let plan = flowdeck::expand(&p.semantic_graph().unwrap(), &Parallelism::uniform(workers), PlanMode::Bsp).unwrap();
        let inputs = corpus::random_inputs("wordcount", seed, 40).unwrap();
        let out = flowdeck::run(&plan, &inputs, &RunConfig { workers, mode: PlanMode::Bsp, ..RunConfig::default() }).unwrap();
        let mut buf = Vec::new();
        out.trace.write_jsonl(&mut buf).unwrap();
        let back = Trace::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        prop_assert_eq!(back.events, out.trace.events);
    }
}

#[test]
fn shuffled_trace_is_rejected() {
    let p = corpus::get("wordcount").unwrap();
    let plan = flowdeck::expand(&p.semantic_graph().unwrap(), &Parallelism::uniform(2), PlanMode::Bsp).unwrap();
    let inputs = corpus::random_inputs("wordcount", 1, 40).unwrap();
    let mut trace = flowdeck::run(&plan, &inputs, &RunConfig { workers: 2, ..RunConfig::default() }).unwrap().trace;
    trace.events.swap(1, 2);
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).unwrap();
    assert!(Trace::read_jsonl(std::io::Cursor::new(buf)).is_err());
}
