use flowdeck::corpus::{self, AnyProgram};
use flowdeck::harness::{check_all, concurrent_tags, pipeline_witness};
use flowdeck::plan::{expand, expand_iteration, IterationStrategy, Parallelism, PlanMode};
use flowdeck::runtime::{run, run_process_based, run_scheduled, EventKind, RunConfig, RuntimeKind};
use flowdeck::{Dispatch, Error, InputData, Inputs, Record, Value};

fn inputs(pairs: Vec<(&str, Vec<Record>)>) -> Inputs {
    pairs.into_iter().map(|(k, v)| (k.to_string(), InputData::Records(v))).collect()
}

fn plan_for(p: &AnyProgram, par: usize, mode: PlanMode) -> flowdeck::ExecutionPlan {
    expand(&p.semantic_graph().unwrap(), &Parallelism::uniform(par), mode).unwrap()
}

#[test]
fn every_program_matches_reference_on_both_runtimes() {
    for p in corpus::all() {
        let data = corpus::random_inputs(p.name(), 11, 120).unwrap();
        let want = p.reference(&data).unwrap();
        for mode in [PlanMode::Pipelined, PlanMode::Bsp] {
            for (workers, runtime) in [(1, RuntimeKind::Scheduled), (3, RuntimeKind::Scheduled), (3, RuntimeKind::Process)] {
                let plan = plan_for(&p, workers, mode);
                let cfg = RunConfig { workers, runtime, mode, ..RunConfig::default() };
                let out = run(&plan, &data, &cfg).unwrap_or_else(|f| panic!("{} {mode:?} {runtime:?}: {f}", p.name()));
                assert!(
                    flowdeck::dataset::outputs_bag_equal(&out.outputs, &want),
                    "{} {mode:?} {runtime:?} x{workers}",
                    p.name()
                );
                let v = check_all(&out.trace);
                assert!(v.is_empty(), "{} {mode:?} {runtime:?}: {v:?}", p.name());
            }
        }
    }
}

#[test]
fn round_robin_assigns_task_i_to_worker_i_mod_n() {
    // Four independent tuples through one actor: tasks alternate workers.
    let p = corpus::get("map-reduce").unwrap();
    let g = p.semantic_graph().unwrap();
    let plan = expand(&g, &Parallelism::uniform(1), PlanMode::Pipelined).unwrap();
    let data = inputs(vec![("numbers", (0..4).map(Record::unkeyed).collect())]);
    let out = run_scheduled(&plan, &data, 2, Dispatch::RoundRobin, 0).unwrap();
    for e in out.trace.of_kind(EventKind::TaskStart) {
        assert_eq!(e.worker, Some((e.task.unwrap() % 2) as usize));
    }
}

#[test]
fn kernel_failure_names_the_task() {
    // split_words on integers is a type error inside the kernel.
    let p = corpus::get("wordcount").unwrap();
    let plan = plan_for(&p, 2, PlanMode::Pipelined);
    let data = inputs(vec![("lines", vec![Record::unkeyed(3)])]);
    let err = run_scheduled(&plan, &data, 2, Dispatch::OnDemand, 0).unwrap_err();
    let task = err.task.expect("failing task");
    assert!(matches!(err.error, Error::Kernel { .. }), "{:?}", err.error);
    let failed: Vec<_> = err.trace.of_kind(EventKind::TaskFailed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].task, Some(task));
}

#[test]
fn process_runtime_overlaps_a_two_actor_pipeline() {
    let mut prog = flowdeck::LogicalProgram::new("pipe", flowdeck::ProgramMode::TupleStream);
    let s = prog.source("in").unwrap();
    let a = prog.map(s, flowdeck::kernel::require("add_one").unwrap()).unwrap();
    let b = prog.map(a, flowdeck::kernel::require("double").unwrap()).unwrap();
    prog.sink(b, "out").unwrap();
    let g = flowdeck::translate(&prog).unwrap();
    let plan = expand(&g, &Parallelism::uniform(1), PlanMode::Pipelined).unwrap();
    let data = inputs(vec![("in", (0..100).map(Record::unkeyed).collect())]);
    let out = run_process_based(&plan, &data, 2, 1).unwrap();
    let (up, down) = (plan.actors[1].id.0, plan.actors[2].id.0);
    assert!(pipeline_witness(&out.trace, up, down));
    let got: Vec<Value> = out.outputs["out"].records().into_iter().map(|r| r.payload).collect();
    let want: Vec<Value> = (0..100).map(|i| Value::Int((i + 1) * 2)).collect();
    assert_eq!(got, want);
}

#[test]
fn bounded_channels_keep_results() {
    let p = corpus::get("windowed-count").unwrap();
    let data = corpus::random_inputs("windowed-count", 5, 200).unwrap();
    let want = p.reference(&data).unwrap();
    for runtime in [RuntimeKind::Scheduled, RuntimeKind::Process] {
        let plan = plan_for(&p, 2, PlanMode::Pipelined);
        let cfg = RunConfig { workers: 2, runtime, channel_capacity: Some(1), ..RunConfig::default() };
        let out = run(&plan, &data, &cfg).unwrap();
        assert_eq!(out.outputs, want, "{runtime:?}");
    }
}

#[test]
fn halving_runs_four_supersteps() {
    let p = corpus::get("halving").unwrap();
    let data = inputs(vec![("values", vec![Record::unkeyed(8)])]);
    for runtime in [RuntimeKind::Scheduled, RuntimeKind::Process] {
        let plan = plan_for(&p, 2, PlanMode::Pipelined);
        let out = run(&plan, &data, &RunConfig { workers: 2, runtime, ..RunConfig::default() }).unwrap();
        assert_eq!(out.outputs["result"].records(), vec![Record::unkeyed(0.5)]);
        assert_eq!(out.stats.supersteps, 4);
        assert!(check_all(&out.trace).is_empty());
    }
}

#[test]
fn tagged_token_iteration_matches_barrier_iteration() {
    let g = corpus::get("halving").unwrap().semantic_graph().unwrap();
    let it = g.actors.iter().find(|a| a.hierarchical_body.is_some()).unwrap();
    // Three collections, each its own tagged token.
    let batches = [8, 40, 3].map(|v| std::iter::once(Record::unkeyed(v)).collect());
    let data: Inputs = [("in".to_string(), InputData::Batches(batches.to_vec()))].into_iter().collect();
    let barrier = run(
        &expand_iteration(it, 3, IterationStrategy::BarrierPerSuperstep).unwrap(),
        &data,
        &RunConfig { workers: 4, ..RunConfig::default() },
    )
    .unwrap();
    assert_eq!(barrier.stats.supersteps, 4 + 6 + 2);
    let mut seen_concurrent = false;
    for seed in 0..10 {
        let plan = expand_iteration(it, 3, IterationStrategy::TaggedToken).unwrap();
        let cfg = RunConfig {
            workers: 4,
            seed,
            runtime: RuntimeKind::Process,
            jitter_us: 200,
            ..RunConfig::default()
        };
        let out = run(&plan, &data, &cfg).unwrap();
        assert!(check_all(&out.trace).is_empty());
        assert_eq!(out.outputs["out"].bag(), barrier.outputs["out"].bag());
        seen_concurrent |= concurrent_tags(&out.trace);
    }
    assert!(seen_concurrent);
}
