use crate::program::{LogicalProgram, OpParams, ProgramMode};
use crate::token::Granularity;
use crate::Result;

use super::{ActorId, ElementOp, Operator, OutputPolicy, SemanticActor, SemanticEdge, SemanticGraph};

fn granularity_of(mode: ProgramMode) -> Granularity {
    match mode {
        ProgramMode::Batch => Granularity::Collection,
        ProgramMode::MicroBatchStream => Granularity::MicroBatch,
        ProgramMode::TupleStream => Granularity::Tuple,
    }
}

/// One actor per operator, edges following the operator DAG. Shuffle
/// operators receive hash-partitioned input; single-consumer edges are
/// forwards and fan-out edges broadcast. `Iterate` becomes a hierarchical
/// actor whose body is translated recursively.
pub fn translate(prog: &LogicalProgram) -> Result<SemanticGraph> {
    prog.validate()?;
    let granularity = granularity_of(prog.mode);
    let mut g = SemanticGraph::new(prog.name.clone());
    g.batch_size = prog.batch_size;

    for op in prog.ops() {
        let id = ActorId(op.id.0);
        let mut body = None;
        let operator = match &op.params {
            OpParams::Source { input } => Operator::Source { input: input.clone() },
            OpParams::Sink { output } => Operator::Sink { output: output.clone() },
            OpParams::Map(k) => Operator::Elementwise(vec![ElementOp::Map(k.clone())]),
            OpParams::FlatMap(k) => Operator::Elementwise(vec![ElementOp::FlatMap(k.clone())]),
            OpParams::Filter(k) => Operator::Elementwise(vec![ElementOp::Filter(k.clone())]),
            OpParams::GroupByKey => Operator::GroupByKey,
            OpParams::ReduceByKey(k) => Operator::ReduceByKey(k.clone()),
            OpParams::Reduce(k) => Operator::Reduce(k.clone()),
            OpParams::Join => Operator::Join,
            OpParams::MapWithState { kernel, init } => Operator::MapWithState {
                kernel: kernel.clone(),
                init: init.clone(),
            },
            OpParams::Window(spec) => Operator::Window(*spec),
            OpParams::Iterate(spec) => {
                body = Some(Box::new(translate(&spec.body)?));
                Operator::Iterate {
                    terminate: spec.terminate.clone(),
                    max_iterations: spec.max_iterations,
                }
            }
        };
        let mut actor = SemanticActor::new(id, op.label.clone(), operator, granularity);
        actor.hierarchical_body = body;
        g.actors.push(actor);
    }

    for op in prog.ops() {
        for (port, up) in op.inputs.iter().enumerate() {
            let fan_out = prog.successors(*up).len();
            let policy = if op.kind().is_shuffle() {
                OutputPolicy::HashPartition
            } else if fan_out == 1 {
                OutputPolicy::Forward
            } else {
                OutputPolicy::Broadcast
            };
            g.edges.push(SemanticEdge {
                from: ActorId(up.0),
                to: ActorId(op.id.0),
                port,
                policy,
                is_loop: false,
            });
        }
    }
    g.check()?;
    Ok(g)
}
