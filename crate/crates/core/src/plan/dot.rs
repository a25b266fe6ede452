use std::fmt::Write;

use crate::graph::escape;

use super::{ChannelKind, ExecutionPlan, PlanOp, Role};

/// Render an execution plan as DOT. BSP stages become cluster subgraphs,
/// replicated actors get a double border, shuffle channels are bold and
/// feedback channels dashed. Driver bodies are nested clusters.
pub fn to_dot(plan: &ExecutionPlan) -> String {
    let mut out = String::new();
    writeln!(out, "digraph \"{}\" {{", escape(&plan.name)).unwrap();
    writeln!(out, "  rankdir=LR;").unwrap();
    writeln!(out, "  node [shape=box];").unwrap();
    write_plan(&mut out, plan, 1);
    out.push_str("}\n");
    out
}

fn write_plan(out: &mut String, plan: &ExecutionPlan, depth: usize) {
    let pad = "  ".repeat(depth);
    match &plan.stages {
        Some(stages) => {
            for s in stages {
                writeln!(out, "{pad}subgraph cluster_stage_{}_{} {{", plan.actor_base, s.id).unwrap();
                writeln!(out, "{pad}  label=\"stage {}\";", s.id).unwrap();
                for id in &s.members {
                    write_actor(out, plan, plan.actor(*id), depth + 1);
                }
                writeln!(out, "{pad}}}").unwrap();
            }
        }
        None => {
            for a in &plan.actors {
                write_actor(out, plan, a, depth);
            }
        }
    }
    for c in plan.channels.iter().filter(|c| c.kind != ChannelKind::State) {
        let mut attrs = vec![format!("label=\"{}\"", c.id)];
        if c.shuffle {
            attrs.push("style=bold".into());
        }
        if c.kind == ChannelKind::Loop {
            attrs.push("style=dashed".into());
            attrs.push("constraint=false".into());
        }
        writeln!(out, "{pad}n{} -> n{} [{}];", c.from.0, c.to.0, attrs.join(", ")).unwrap();
    }
}

fn write_actor(out: &mut String, plan: &ExecutionPlan, a: &super::PlanActor, depth: usize) {
    let pad = "  ".repeat(depth);
    let replicated = plan.parallelism.get(&a.origin).copied().unwrap_or(1) > 1 && a.role == Role::Worker;
    let shape = match a.role {
        Role::Scatter => "shape=invtrapezium",
        Role::Gather => "shape=trapezium",
        Role::Driver => "shape=doubleoctagon",
        Role::Worker => "shape=box",
    };
    let mut label = format!("{}\\n{}", escape(&a.label), escape(&a.op.name()));
    if a.state.is_some() {
        label.push_str("\\nstateful");
    }
    let periph = if replicated { ", peripheries=2" } else { "" };
    writeln!(out, "{pad}n{} [label=\"{label}\", {shape}{periph}];", a.id.0).unwrap();
    if let PlanOp::Driver { body, .. } = &a.op {
        writeln!(out, "{pad}subgraph cluster_body_{} {{", a.id.0).unwrap();
        writeln!(out, "{pad}  label=\"superstep body of {}\";", escape(&a.label)).unwrap();
        writeln!(out, "{pad}  style=rounded;").unwrap();
        write_plan(out, body, depth + 1);
        writeln!(out, "{pad}}}").unwrap();
    }
}
