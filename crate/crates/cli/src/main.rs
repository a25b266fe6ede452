//! `flowdeck`: plan, run, sweep and validate dataflow programs.
//!
//! Exit codes: 0 success (including informational nondeterminism reports),
//! 1 runtime failure or invariant violation, 2 usage or parse failure.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use flowdeck::corpus::{self, AnyProgram};
use flowdeck::graph::{fuse, FusionHints};
use flowdeck::harness::{check_all, sweep, RunMatrix};
use flowdeck::plan::{Parallelism, PlanMode};
use flowdeck::runtime::{Dispatch, RunConfig, RuntimeKind, Trace};
use flowdeck::{ingest, InputData, Inputs};

#[derive(Parser)]
#[command(name = "flowdeck", version, about = "Layered dataflow engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print a program's semantic graph or parallel plan as DOT (or JSON).
    Plan {
        /// Built-in program name or path to a program JSON file.
        program: String,
        #[arg(long, value_enum, default_value = "semantic")]
        layer: Layer,
        #[arg(short = 'p', long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long, default_value = "pipelined", value_parser = parse_mode)]
        mode: PlanMode,
        /// Collapse chains of light element-wise actors first.
        #[arg(long)]
        fuse: bool,
        /// Emit the semantic graph as JSON instead of DOT.
        #[arg(long)]
        json: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Execute a program and print its sink outputs.
    Run {
        program: String,
        /// Input files, `NAME=PATH` or bare paths bound to sources in order.
        /// `.csv` files hold `key,value` rows; anything else is one record
        /// per line. Without inputs, built-in programs use generated data.
        inputs: Vec<String>,
        /// Run configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<PlanMode>,
        #[arg(short, long)]
        workers: Option<usize>,
        #[arg(long, value_parser = parse_dispatch)]
        dispatch: Option<Dispatch>,
        #[arg(long, value_enum)]
        runtime: Option<RuntimeArg>,
        /// Defaults to the config file's seed, then FLOWDECK_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the execution trace as JSONL.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write raw sink outputs (arrival order) as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a matrix of configurations and compare outputs.
    Sweep {
        matrix: PathBuf,
        /// Run cells on parallel threads.
        #[arg(long)]
        concurrent: bool,
        /// Also write the verdict JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check a program, run configuration, run matrix or trace file.
    Validate {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        kind: Kind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Layer {
    Semantic,
    Parallel,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuntimeArg {
    Scheduled,
    Process,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Kind {
    Auto,
    Program,
    Config,
    Matrix,
    Trace,
}

fn parse_mode(s: &str) -> Result<PlanMode, String> {
    PlanMode::parse(s).map_err(|e| e.to_string())
}

fn parse_dispatch(s: &str) -> Result<Dispatch, String> {
    Dispatch::parse(s).map_err(|e| e.to_string())
}

/// Failure classes map to exit codes.
enum Fail {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Fail {
    fn from(e: E) -> Self {
        Fail::Usage(e.into())
    }
}

type Out = Result<(), Fail>;

fn load(program: &str) -> anyhow::Result<AnyProgram> {
    if corpus::NAMES.contains(&program) {
        return Ok(corpus::get(program)?);
    }
    let path = Path::new(program);
    if !path.exists() {
        return Err(anyhow!("unknown program `{program}`; built-ins are {}", corpus::NAMES.join(", ")));
    }
    flowdeck::json::load_program(path).with_context(|| format!("loading {program}"))
}

fn write_out(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_plan(program: &str, layer: Layer, p: usize, mode: PlanMode, fuse_first: bool, json: bool, out: Option<&Path>) -> Out {
    if p == 0 {
        return Err(Fail::Usage(anyhow!("parallelism must be at least 1")));
    }
    let prog = load(program)?;
    let mut g = prog.semantic_graph()?;
    if fuse_first {
        g = fuse(&g, &FusionHints::default());
    }
    let text = match (layer, json) {
        (Layer::Semantic, false) => flowdeck::graph::to_dot(&g),
        (Layer::Semantic, true) => serde_json::to_string_pretty(&g.dump())? + "\n",
        (Layer::Parallel, false) => flowdeck::plan::to_dot(&flowdeck::expand(&g, &Parallelism::uniform(p), mode)?),
        (Layer::Parallel, true) => return Err(Fail::Usage(anyhow!("--json applies to the semantic layer"))),
    };
    write_out(out, &text)?;
    Ok(())
}

fn bind_inputs(prog: &AnyProgram, args: &[String], seed: u64) -> anyhow::Result<Inputs> {
    let names = prog.input_names()?;
    if args.is_empty() {
        if corpus::NAMES.contains(&prog.name()) {
            return Ok(corpus::random_inputs(prog.name(), seed, 200)?);
        }
        return Ok(names.into_iter().map(|n| (n, InputData::Records(Vec::new()))).collect());
    }
    let mut inputs = Inputs::new();
    let mut positional = names.iter();
    for a in args {
        let (name, path) = match a.split_once('=') {
            Some((n, p)) if names.iter().any(|x| x == n) => (n.to_string(), p),
            _ => {
                let n = positional
                    .by_ref()
                    .find(|n| !inputs.contains_key(*n))
                    .ok_or_else(|| anyhow!("more input files than sources ({})", names.join(", ")))?;
                (n.clone(), a.as_str())
            }
        };
        let records = ingest::read_records(path).with_context(|| format!("reading {path}"))?;
        if inputs.insert(name.clone(), InputData::Records(records)).is_some() {
            return Err(anyhow!("source `{name}` bound twice"));
        }
    }
    for n in names {
        inputs.entry(n).or_insert_with(|| InputData::Records(Vec::new()));
    }
    Ok(inputs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    program: &str,
    input_args: &[String],
    config: Option<&Path>,
    mode: Option<PlanMode>,
    workers: Option<usize>,
    dispatch: Option<Dispatch>,
    runtime: Option<RuntimeArg>,
    seed: Option<u64>,
    trace: Option<&Path>,
    output: Option<&Path>,
) -> Out {
    let prog = load(program)?;
    let mut cfg = RunConfig::default();
    let mut config_seed = false;
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = RunConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        config_seed = serde_json::from_str::<serde_json::Value>(&text)?.get("seed").is_some();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    } else if !config_seed {
        if let Ok(v) = std::env::var("FLOWDECK_SEED") {
            cfg.seed = v.trim().parse().with_context(|| format!("FLOWDECK_SEED `{v}` is not an unsigned integer"))?;
        }
    }
    cfg.mode = mode.unwrap_or(cfg.mode);
    cfg.workers = workers.unwrap_or(cfg.workers);
    cfg.dispatch = dispatch.unwrap_or(cfg.dispatch);
    if let Some(r) = runtime {
        cfg.runtime = match r {
            RuntimeArg::Scheduled => RuntimeKind::Scheduled,
            RuntimeArg::Process => RuntimeKind::Process,
        };
    }
    cfg.validate()?;
    let inputs = bind_inputs(&prog, input_args, cfg.seed)?;
    let g = prog.semantic_graph()?;
    let plan = flowdeck::expand(&g, &Parallelism::uniform(cfg.parallelism()), cfg.mode)?;
    let result = flowdeck::run(&plan, &inputs, &cfg);
    let run_trace = match &result {
        Ok(o) => &o.trace,
        Err(f) => &f.trace,
    };
    if let Some(path) = trace {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = std::io::BufWriter::new(file);
        run_trace.write_jsonl(&mut w)?;
        w.flush()?;
    }
    let out = match result {
        Ok(o) => o,
        Err(f) => return Err(Fail::Runtime(anyhow!("{f}"))),
    };
    if let Some(path) = output {
        fs::write(path, serde_json::to_string_pretty(&out.outputs)?)?;
    }
    let mut stdout = std::io::stdout().lock();
    for (sink, s) in &out.outputs {
        // Sorted for display only; `--output` keeps arrival order.
        let mut records = s.records();
        records.sort();
        writeln!(stdout, "== {sink} ({} records)", records.len())?;
        for r in records {
            writeln!(stdout, "{r}")?;
        }
    }
    writeln!(
        stdout,
        "-- tasks {} supersteps {} wall {:.3} ms",
        out.stats.tasks,
        out.stats.supersteps,
        out.stats.wall_ns as f64 / 1e6
    )?;
    Ok(())
}

fn cmd_sweep(path: &Path, concurrent: bool, json: Option<&Path>) -> Out {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut matrix = RunMatrix::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    matrix.concurrent |= concurrent;
    let base = path.parent().unwrap_or(Path::new("."));
    let (prog, inputs) = matrix.load(base)?;
    let verdict = sweep(&matrix, &prog, &inputs)?;
    let report = serde_json::to_string_pretty(&verdict)?;
    print!("{}", verdict.table());
    println!("{report}");
    if let Some(p) = json {
        fs::write(p, &report)?;
    }
    if verdict.failed() {
        return Err(Fail::Runtime(anyhow!("{} invariant violations", verdict.violations.len())));
    }
    Ok(())
}

fn guess_kind(path: &Path) -> anyhow::Result<Kind> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(Kind::Trace);
    }
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let has = |k: &str| v.get(k).is_some();
    Ok(if has("ops") || has("spouts") || has("bolts") {
        Kind::Program
    } else if has("program") {
        Kind::Matrix
    } else {
        Kind::Config
    })
}

fn cmd_validate(path: &Path, kind: Kind) -> Out {
    let kind = if kind == Kind::Auto { guess_kind(path)? } else { kind };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match kind {
        Kind::Program => {
            let p = flowdeck::json::parse_program(&text)?;
            let g = p.semantic_graph()?;
            println!("program `{}`: {} actors, {} edges", p.name(), g.actors.len(), g.edges.len());
        }
        Kind::Config => {
            RunConfig::from_json(&text)?;
            println!("run configuration ok");
        }
        Kind::Matrix => {
            let m = RunMatrix::from_json(&text)?;
            m.load(path.parent().unwrap_or(Path::new(".")))?;
            println!("run matrix ok: {} cells", m.cells().len());
        }
        Kind::Trace => {
            let file = fs::File::open(path)?;
            let trace = Trace::read_jsonl(BufReader::new(file))?;
            let violations = check_all(&trace);
            for v in &violations {
                println!("{}: {}", v.invariant, v.detail);
            }
            if !violations.is_empty() {
                return Err(Fail::Runtime(anyhow!("{} invariant violations", violations.len())));
            }
            println!("trace ok: {} events", trace.events.len());
        }
        Kind::Auto => unreachable!("resolved above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Plan { program, layer, parallelism, mode, fuse, json, out } => {
            cmd_plan(program, *layer, *parallelism, *mode, *fuse, *json, out.as_deref())
        }
        Cmd::Run { program, inputs, config, mode, workers, dispatch, runtime, seed, trace, output } => cmd_run(
            program,
            inputs,
            config.as_deref(),
            *mode,
            *workers,
            *dispatch,
            *runtime,
            *seed,
            trace.as_deref(),
            output.as_deref(),
        ),
        Cmd::Sweep { matrix, concurrent, json } => cmd_sweep(matrix, *concurrent, json.as_deref()),
        Cmd::Validate { path, kind } => cmd_validate(path, *kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Fail::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
