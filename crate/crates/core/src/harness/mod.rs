//! Determinism checks: trace invariants, differential sweeps and the
//! algebraic contract of reduce kernels.

pub mod invariants;
pub mod sweep;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::kernel::{Kernel, KernelFn};
use crate::value::Value;

pub use invariants::{check_all, concurrent_tags, pipeline_witness, Violation};
pub use sweep::{sweep, DatasetSpec, RunMatrix, Verdict, Witness};

/// A triple on which a binary kernel breaks associativity or
/// commutativity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractWitness {
    pub property: &'static str,
    pub a: Value,
    pub b: Value,
    pub c: Value,
}

/// First counterexample to `f(a, f(b, c)) = f(f(a, b), c)` or
/// `f(a, b) = f(b, a)` over `samples` random integer triples. Kernel
/// errors count as counterexamples.
pub fn kernel_contract_witness(f: &Kernel, samples: usize, seed: u64) -> Option<ContractWitness> {
    if !matches!(f.func(), KernelFn::Reduce(_)) {
        return Some(ContractWitness {
            property: "binary",
            a: Value::Int(0),
            b: Value::Int(0),
            c: Value::Int(0),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let (a, b, c) = (
            Value::Int(rng.gen_range(-100..=100)),
            Value::Int(rng.gen_range(-100..=100)),
            Value::Int(rng.gen_range(-100..=100)),
        );
        let assoc = f
            .combine(&a, &b)
            .and_then(|ab| f.combine(&ab, &c))
            .and_then(|l| Ok((l, f.combine(&b, &c).and_then(|bc| f.combine(&a, &bc))?)));
        if !matches!(assoc, Ok((ref l, ref r)) if l == r) {
            return Some(ContractWitness { property: "associative", a, b, c });
        }
        let comm = f.combine(&a, &b).and_then(|x| Ok((x, f.combine(&b, &a)?)));
        if !matches!(comm, Ok((ref x, ref y)) if x == y) {
            return Some(ContractWitness { property: "commutative", a, b, c });
        }
    }
    None
}

pub fn kernel_contract_check(f: &Kernel, samples: usize, seed: u64) -> bool {
    kernel_contract_witness(f, samples, seed).is_none()
}
