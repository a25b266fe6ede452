use std::collections::BTreeMap;

use super::{ActorId, Operator, OutputPolicy, SemanticActor, SemanticEdge, SemanticGraph};

/// Per-actor intensity flags. Actors without an entry fall back to the
/// default: element-wise operators are light, everything else is intensive.
#[derive(Debug, Clone, Default)]
pub struct FusionHints {
    pub intensive: BTreeMap<ActorId, bool>,
}

impl FusionHints {
    pub fn all_intensive(g: &SemanticGraph) -> Self {
        FusionHints {
            intensive: g.actors.iter().map(|a| (a.id, true)).collect(),
        }
    }

    fn is_intensive(&self, a: &SemanticActor) -> bool {
        self.intensive
            .get(&a.id)
            .copied()
            .unwrap_or(!matches!(a.operator, Operator::Elementwise(_)))
    }
}

fn fusible(g: &SemanticGraph, hints: &FusionHints, a: &SemanticActor) -> bool {
    matches!(a.operator, Operator::Elementwise(_))
        && !hints.is_intensive(a)
        && !a.stateful
        && a.hierarchical_body.is_none()
        && g.incoming(a.id).all(|e| !e.is_loop)
}

/// Collapse maximal chains of light, stateless element-wise actors joined by
/// single forward edges into one actor running the composed kernels.
/// Shuffle edges, loop edges, stateful and hierarchical actors are never
/// fused across. Actor ids are renumbered densely in original order.
pub fn fuse(g: &SemanticGraph, hints: &FusionHints) -> SemanticGraph {
    let n = g.actors.len();
    // merge_into[v] = u when v is absorbed by its predecessor u.
    let mut head: Vec<usize> = (0..n).collect();
    for e in &g.edges {
        let (u, v) = (g.actor(e.from), g.actor(e.to));
        let single_link = g.outgoing(u.id).count() == 1 && g.incoming(v.id).count() == 1;
        if single_link
            && !e.is_loop
            && e.policy != OutputPolicy::HashPartition
            && u.granularity == v.granularity
            && u.consume_policy == v.consume_policy
            && u.parallelism_hint == v.parallelism_hint
            && fusible(g, hints, u)
            && fusible(g, hints, v)
        {
            head[v.id.0] = u.id.0;
        }
    }
    let root = |mut i: usize| {
        while head[i] != i {
            i = head[i];
        }
        i
    };

    // Chain members in order: the edge structure guarantees each chain is a path.
    let mut chains: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in g.topo_order().expect("checked graph").into_iter().map(|a| a.0) {
        chains.entry(root(i)).or_default().push(i);
    }

    let mut renumber = vec![0usize; n];
    let mut out = SemanticGraph::new(g.name.clone());
    out.batch_size = g.batch_size;
    for (new_id, (r, members)) in chains.iter().enumerate() {
        for &m in members {
            renumber[m] = new_id;
        }
        let first = g.actor(ActorId(*r));
        let mut actor = first.clone();
        actor.id = ActorId(new_id);
        if members.len() > 1 {
            let mut ops = Vec::new();
            for &m in members {
                if let Operator::Elementwise(chain) = &g.actor(ActorId(m)).operator {
                    ops.extend(chain.iter().cloned());
                }
            }
            actor.label = members.iter().map(|&m| g.actor(ActorId(m)).label.as_str()).collect::<Vec<_>>().join("+");
            actor.operator = Operator::Elementwise(ops);
        }
        out.actors.push(actor);
    }
    for e in &g.edges {
        let (from, to) = (renumber[e.from.0], renumber[e.to.0]);
        if from == to && !e.is_loop {
            continue;
        }
        out.edges.push(SemanticEdge {
            from: ActorId(from),
            to: ActorId(to),
            ..e.clone()
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::translate;
    use crate::kernel::lookup;
    use crate::program::{LogicalProgram, ProgramMode};

    fn chain(kernels: &[&str]) -> SemanticGraph {
        let mut p = LogicalProgram::new("chain", ProgramMode::Batch);
        let mut cur = p.source("in").unwrap();
        for k in kernels {
            let kernel = lookup(k).unwrap();
            cur = match kernel.func() {
                crate::kernel::KernelFn::FlatMap(_) => p.flat_map(cur, kernel).unwrap(),
                crate::kernel::KernelFn::Reduce(_) => p.reduce_by_key(cur, kernel).unwrap(),
                _ => p.map(cur, kernel).unwrap(),
            };
        }
        p.sink(cur, "out").unwrap();
        translate(&p).unwrap()
    }

    #[test]
    fn three_maps_become_one() {
        let g = chain(&["add_one", "double", "square"]);
        let f = fuse(&g, &FusionHints::default());
        assert_eq!(f.actors.len(), 3);
        assert_eq!(f.edges.len(), 2);
        match &f.actors[1].operator {
            Operator::Elementwise(ops) => assert_eq!(ops.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
        f.check().unwrap();
    }

    #[test]
    fn all_intensive_is_a_no_op() {
        let g = chain(&["split_words", "pair_one", "sum"]);
        let f = fuse(&g, &FusionHints::all_intensive(&g));
        assert_eq!(f.actors.len(), g.actors.len());
        assert_eq!(f.edges, g.edges);
    }

    #[test]
    fn shuffle_boundary_is_kept() {
        let g = chain(&["split_words", "pair_one", "sum"]);
        let f = fuse(&g, &FusionHints::default());
        assert_eq!(f.actors.len(), g.actors.len() - 1);
        assert!(f.actors.iter().any(|a| matches!(a.operator, Operator::ReduceByKey(_))));
    }
}
