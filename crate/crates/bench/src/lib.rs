//! Fixed workloads shared by the benchmarks.

use flowdeck::corpus;
use flowdeck::plan::{Parallelism, PlanMode};
use flowdeck::{ExecutionPlan, Inputs};

/// A built-in program expanded at parallelism `p`, with seeded inputs of at
/// most `records` records.
pub struct Workload {
    pub plan: ExecutionPlan,
    pub inputs: Inputs,
}

impl Workload {
    pub fn new(program: &str, p: usize, mode: PlanMode, records: usize) -> flowdeck::Result<Self> {
        let prog = corpus::get(program)?;
        let plan = flowdeck::expand(&prog.semantic_graph()?, &Parallelism::uniform(p), mode)?;
        // The generator draws the size uniformly; pick a seed that lands
        // near the requested bound so workloads are comparable.
        let inputs = (0..64)
            .map(|seed| corpus::random_inputs(program, seed, records))
            .collect::<flowdeck::Result<Vec<_>>>()?
            .into_iter()
            .max_by_key(|i| i.values().map(|d| d.len()).sum::<usize>())
            .expect("at least one seed");
        Ok(Workload { plan, inputs })
    }

    pub fn records(&self) -> usize {
        self.inputs.values().map(|d| d.len()).sum()
    }
}
