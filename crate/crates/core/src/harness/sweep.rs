//! Differential execution across worker counts, dispatch policies, modes
//! and seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, AnyProgram};
use crate::dataset::{InputData, Inputs, Outputs};
use crate::ingest;
use crate::plan::{expand, Parallelism, PlanMode};
use crate::runtime::{run, Dispatch, RunConfig, RuntimeKind};
use crate::{Error, Result};

use super::invariants::{check_all, Violation};

fn one() -> usize {
    1
}

fn default_runtimes() -> Vec<RuntimeKind> {
    vec![RuntimeKind::Scheduled]
}

fn default_modes() -> Vec<PlanMode> {
    vec![PlanMode::Pipelined]
}

/// Where a sweep's input comes from: files bound to source names, or a
/// seeded random dataset from the program's generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_records: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMatrix {
    /// Built-in program name or a path to a program JSON file.
    pub program: String,
    #[serde(default)]
    pub dataset: DatasetSpec,
    pub workers: Vec<usize>,
    pub dispatch: Vec<Dispatch>,
    #[serde(default = "default_modes")]
    pub modes: Vec<PlanMode>,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default = "default_runtimes")]
    pub runtimes: Vec<RuntimeKind>,
    /// Replicas per actor; defaults to each cell's worker count.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub jitter_us: u64,
    #[serde(default)]
    pub channel_capacity: Option<usize>,
    /// Run cells on parallel threads; they share nothing.
    #[serde(default)]
    pub concurrent: bool,
}

impl RunMatrix {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: RunMatrix = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("workers", self.workers.is_empty()),
            ("dispatch", self.dispatch.is_empty()),
            ("modes", self.modes.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("runtimes", self.runtimes.is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::invalid(format!("matrix axis `{axis}` is empty")));
        }
        if self.workers.contains(&0) || self.repetitions == 0 || self.parallelism == Some(0) {
            return Err(Error::invalid("workers, repetitions and parallelism must be at least 1"));
        }
        Ok(())
    }

    /// Every cell's run configuration, in a fixed order.
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &runtime in &self.runtimes {
            for &mode in &self.modes {
                for &workers in &self.workers {
                    // Dispatch does not apply to process-based runs.
                    let dispatches = match runtime {
                        RuntimeKind::Scheduled => self.dispatch.clone(),
                        RuntimeKind::Process => vec![Dispatch::RoundRobin],
                    };
                    for dispatch in dispatches {
                        for &seed in &self.seeds {
                            for _ in 0..self.repetitions {
                                out.push(RunConfig {
                                    mode,
                                    workers,
                                    dispatch,
                                    seed,
                                    channel_capacity: self.channel_capacity,
                                    runtime,
                                    jitter_us: self.jitter_us,
                                    parallelism: Some(self.parallelism.unwrap_or(workers)),
                                    ..RunConfig::default()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Resolve the program and its inputs; relative paths are taken from
    /// `base` (the matrix file's directory).
    pub fn load(&self, base: &Path) -> Result<(AnyProgram, Inputs)> {
        let program = if corpus::NAMES.contains(&self.program.as_str()) {
            corpus::get(&self.program)?
        } else {
            crate::json::load_program(base.join(&self.program))?
        };
        let inputs = if self.dataset.files.is_empty() {
            let seed = self.dataset.seed.unwrap_or(0);
            corpus::random_inputs(program.name(), seed, self.dataset.max_records.unwrap_or(200))?
        } else {
            self.dataset
                .files
                .iter()
                .map(|(name, path)| Ok((name.clone(), InputData::Records(ingest::read_records(base.join(path))?))))
                .collect::<Result<Inputs>>()?
        };
        Ok((program, inputs))
    }
}

/// Two runs whose outputs differ; re-running both configs (seeds fixed)
/// replays the comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub kind: String,
    pub sink: String,
    pub a: usize,
    pub b: usize,
    pub config_a: RunConfig,
    pub config_b: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub id: usize,
    pub config: RunConfig,
    pub ok: bool,
    pub error: Option<String>,
    pub tasks: u64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub program: String,
    pub cells: Vec<CellReport>,
    pub deterministic_bag: bool,
    pub deterministic_order: bool,
    pub witnesses: Vec<Witness>,
    pub has_from_any: bool,
    /// Stateful stream operators make the result depend on arrival order;
    /// such programs are reported, not judged.
    pub order_dependent: bool,
    pub violations: Vec<(usize, Violation)>,
}

impl Verdict {
    /// Any trace invariant broken, any run aborted, or a from-any-free
    /// program produced differing outputs.
    pub fn failed(&self) -> bool {
        !self.violations.is_empty()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "program          {}", self.program).unwrap();
        writeln!(s, "cells            {}", self.cells.len()).unwrap();
        writeln!(s, "from-any         {}", self.has_from_any).unwrap();
        writeln!(s, "deterministic    bag={} order={}", self.deterministic_bag, self.deterministic_order).unwrap();
        if self.order_dependent {
            writeln!(s, "order-dependent  informational").unwrap();
        }
        writeln!(s).unwrap();
        writeln!(s, "{:>4}  {:<10} {:<10} {:>7} {:<12} {:>6}  {:>6}  status", "cell", "runtime", "mode", "workers", "dispatch", "seed", "tasks")
            .unwrap();
        for c in &self.cells {
            let status = match (&c.error, c.violations.len()) {
                (Some(e), _) => format!("error: {e}"),
                (None, 0) => "ok".to_string(),
                (None, n) => format!("{n} violations"),
            };
            writeln!(
                s,
                "{:>4}  {:<10} {:<10} {:>7} {:<12} {:>6}  {:>6}  {status}",
                c.id,
                format!("{:?}", c.config.runtime).to_lowercase(),
                c.config.mode.name(),
                c.config.workers,
                c.config.dispatch.name(),
                c.config.seed,
                c.tasks
            )
            .unwrap();
        }
        for w in &self.witnesses {
            writeln!(s, "witness: {} differs at sink `{}` between cells {} and {}", w.kind, w.sink, w.a, w.b).unwrap();
        }
        for (cell, v) in &self.violations {
            writeln!(s, "violation: cell {cell}: {}: {}", v.invariant, v.detail).unwrap();
        }
        s
    }
}

struct CellRun {
    report: CellReport,
    outputs: Option<Outputs>,
}

fn run_cell(id: usize, program: &AnyProgram, inputs: &Inputs, cfg: &RunConfig) -> CellRun {
    let fail = |e: String| CellRun {
        report: CellReport {
            id,
            config: cfg.clone(),
            ok: false,
            error: Some(e),
            tasks: 0,
            violations: Vec::new(),
        },
        outputs: None,
    };
    let plan = match program
        .semantic_graph()
        .and_then(|g| expand(&g, &Parallelism::uniform(cfg.parallelism()), cfg.mode))
    {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    match run(&plan, inputs, cfg) {
        Ok(out) => CellRun {
            report: CellReport {
                id,
                config: cfg.clone(),
                ok: true,
                error: None,
                tasks: out.stats.tasks,
                violations: check_all(&out.trace),
            },
            outputs: Some(out.outputs),
        },
        Err(f) => fail(f.to_string()),
    }
}

/// Run every cell and compare outputs: bags on the union of sinks, token
/// sequences per sink.
pub fn sweep(matrix: &RunMatrix, program: &AnyProgram, inputs: &Inputs) -> Result<Verdict> {
    matrix.validate()?;
    let graph = program.semantic_graph()?;
    let configs = matrix.cells();
    let runs: Vec<CellRun> = if matrix.concurrent {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<CellRun>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
        let threads = std::thread::available_parallelism().map_or(2, |n| n.get()).min(configs.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= configs.len() {
                        return;
                    }
                    let r = run_cell(i, program, inputs, &configs[i]);
                    slots.lock().expect("slots")[i] = Some(r);
                });
            }
        });
        slots.into_inner().expect("slots").into_iter().map(|r| r.expect("every cell ran")).collect()
    } else {
        configs.iter().enumerate().map(|(i, c)| run_cell(i, program, inputs, c)).collect()
    };

    let mut witnesses = Vec::new();
    let mut violations = Vec::new();
    let mut bag_ok = true;
    let mut order_ok = true;
    let baseline = runs.iter().find_map(|r| r.outputs.as_ref().map(|o| (r.report.id, o)));
    for r in &runs {
        for v in &r.report.violations {
            violations.push((r.report.id, v.clone()));
        }
        if let Some(e) = &r.report.error {
            violations.push((
                r.report.id,
                Violation {
                    invariant: "run".into(),
                    detail: e.clone(),
                },
            ));
        }
        let (Some((base_id, base)), Some(out)) = (baseline, r.outputs.as_ref()) else { continue };
        if base_id == r.report.id {
            continue;
        }
        let mut sinks: Vec<&String> = base.keys().chain(out.keys()).collect();
        sinks.sort();
        sinks.dedup();
        for sink in sinks {
            let (a, b) = (base.get(sink), out.get(sink));
            let same_bag = matches!((a, b), (Some(a), Some(b)) if a.bag() == b.bag());
            let same_order = matches!((a, b), (Some(a), Some(b)) if a.canonical_bytes() == b.canonical_bytes());
            let witness = |kind: &str| Witness {
                kind: kind.to_string(),
                sink: sink.clone(),
                a: base_id,
                b: r.report.id,
                config_a: configs[base_id].clone(),
                config_b: configs[r.report.id].clone(),
            };
            if !same_bag {
                bag_ok = false;
                witnesses.push(witness("bag"));
            }
            if !same_order {
                order_ok = false;
                // One order witness per sink is enough evidence.
                if !witnesses.iter().any(|w| w.kind == "order" && &w.sink == sink) {
                    witnesses.push(witness("order"));
                }
            }
        }
    }
    let has_from_any = graph.contains_from_any();
    if !has_from_any && !(bag_ok && order_ok) {
        violations.push((
            witnesses.first().map_or(0, |w| w.b),
            Violation {
                invariant: "kahn-determinism".into(),
                detail: "outputs differ across cells of a program without from-any actors".into(),
            },
        ));
    }
    let order_dependent = graph
        .actors
        .iter()
        .any(|a| a.operator.is_order_sensitive() && a.granularity != crate::token::Granularity::Collection);
    Ok(Verdict {
        program: program.name().to_string(),
        cells: runs.into_iter().map(|r| r.report).collect(),
        deterministic_bag: bag_ok,
        deterministic_order: order_ok,
        witnesses,
        has_from_any,
        order_dependent,
        violations,
    })
}
