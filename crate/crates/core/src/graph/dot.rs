use std::fmt::Write;

use super::SemanticGraph;

pub fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Render as a DOT digraph. Node labels carry granularity and policies;
/// loop edges are dashed; hierarchical bodies become cluster subgraphs.
pub fn to_dot(g: &SemanticGraph) -> String {
    let mut out = String::new();
    writeln!(out, "digraph \"{}\" {{", escape(&g.name)).unwrap();
    writeln!(out, "  rankdir=LR;").unwrap();
    writeln!(out, "  node [shape=box];").unwrap();
    write_body(&mut out, g, "", 1);
    out.push_str("}\n");
    out
}

fn write_body(out: &mut String, g: &SemanticGraph, prefix: &str, depth: usize) {
    let pad = "  ".repeat(depth);
    for a in &g.actors {
        let label = format!(
            "{}\\n{} | {} | {}{}",
            escape(&a.label),
            a.granularity.name(),
            a.consume_policy.name(),
            g.output_policy(a.id).name(),
            if a.stateful { " | stateful" } else { "" }
        );
        writeln!(out, "{pad}{prefix}a{} [label=\"{label}\"];", a.id.0).unwrap();
        if let Some(body) = &a.hierarchical_body {
            let inner = format!("{prefix}a{}_", a.id.0);
            writeln!(out, "{pad}subgraph cluster_{inner}body {{").unwrap();
            writeln!(out, "{pad}  label=\"body of {}\";", escape(&a.label)).unwrap();
            writeln!(out, "{pad}  style=rounded;").unwrap();
            write_body(out, body, &inner, depth + 1);
            writeln!(out, "{pad}}}").unwrap();
        }
    }
    for e in &g.edges {
        let mut attrs = vec![format!("label=\"{}\"", e.policy.name())];
        if e.is_loop {
            attrs.push("style=dashed".into());
            attrs.push("constraint=false".into());
        }
        writeln!(out, "{pad}{prefix}a{} -> {prefix}a{} [{}];", e.from.0, e.to.0, attrs.join(", ")).unwrap();
    }
}
