//! Kernel functions and the built-in kernel library.
//!
//! Programs loaded from JSON reference kernels by name only; the library
//! below is the closed set of names they may use. Programs built in code can
//! wrap any closure with the `Kernel::*` constructors.

use std::fmt;
use std::sync::Arc;

use crate::collection::Multiset;
use crate::value::{Record, Value};
use crate::{Error, Result};

pub type KernelResult<T> = std::result::Result<T, String>;

pub type MapFn = Arc<dyn Fn(&Record) -> KernelResult<Record> + Send + Sync>;
pub type FlatMapFn = Arc<dyn Fn(&Record) -> KernelResult<Vec<Record>> + Send + Sync>;
pub type FilterFn = Arc<dyn Fn(&Record) -> KernelResult<bool> + Send + Sync>;
pub type ReduceFn = Arc<dyn Fn(&Value, &Value) -> KernelResult<Value> + Send + Sync>;
pub type StateFn = Arc<dyn Fn(&Value, &Record) -> KernelResult<(Value, Record)> + Send + Sync>;

#[derive(Clone)]
pub enum KernelFn {
    Map(MapFn),
    FlatMap(FlatMapFn),
    Filter(FilterFn),
    /// Must be associative and commutative.
    Reduce(ReduceFn),
    Stateful(StateFn),
}

impl KernelFn {
    pub fn kind_name(&self) -> &'static str {
        match self {
            KernelFn::Map(_) => "map",
            KernelFn::FlatMap(_) => "flat_map",
            KernelFn::Filter(_) => "filter",
            KernelFn::Reduce(_) => "reduce",
            KernelFn::Stateful(_) => "stateful",
        }
    }
}

/// A named pure function.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    func: KernelFn,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.func.kind_name(), self.name)
    }
}

impl Kernel {
    pub fn new(name: impl Into<String>, func: KernelFn) -> Self {
        Kernel { name: name.into(), func }
    }

    pub fn map(name: &str, f: impl Fn(&Record) -> KernelResult<Record> + Send + Sync + 'static) -> Self {
        Self::new(name, KernelFn::Map(Arc::new(f)))
    }

    pub fn flat_map(name: &str, f: impl Fn(&Record) -> KernelResult<Vec<Record>> + Send + Sync + 'static) -> Self {
        Self::new(name, KernelFn::FlatMap(Arc::new(f)))
    }

    pub fn filter(name: &str, f: impl Fn(&Record) -> KernelResult<bool> + Send + Sync + 'static) -> Self {
        Self::new(name, KernelFn::Filter(Arc::new(f)))
    }

    pub fn reduce(name: &str, f: impl Fn(&Value, &Value) -> KernelResult<Value> + Send + Sync + 'static) -> Self {
        Self::new(name, KernelFn::Reduce(Arc::new(f)))
    }

    pub fn stateful(
        name: &str,
        f: impl Fn(&Value, &Record) -> KernelResult<(Value, Record)> + Send + Sync + 'static,
    ) -> Self {
        Self::new(name, KernelFn::Stateful(Arc::new(f)))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn func(&self) -> &KernelFn {
        &self.func
    }

    fn fail(&self, message: String) -> Error {
        Error::Kernel {
            kernel: self.name.clone(),
            message,
        }
    }

    fn expect(&self, kind: &str) -> Error {
        self.fail(format!("kernel is {}, expected {kind}", self.func.kind_name()))
    }

    pub fn apply_map(&self, r: &Record) -> Result<Record> {
        match &self.func {
            KernelFn::Map(f) => f(r).map_err(|m| self.fail(m)),
            _ => Err(self.expect("map")),
        }
    }

    pub fn apply_flat_map(&self, r: &Record) -> Result<Vec<Record>> {
        match &self.func {
            KernelFn::FlatMap(f) => f(r).map_err(|m| self.fail(m)),
            _ => Err(self.expect("flat_map")),
        }
    }

    pub fn apply_filter(&self, r: &Record) -> Result<bool> {
        match &self.func {
            KernelFn::Filter(f) => f(r).map_err(|m| self.fail(m)),
            _ => Err(self.expect("filter")),
        }
    }

    pub fn combine(&self, a: &Value, b: &Value) -> Result<Value> {
        match &self.func {
            KernelFn::Reduce(f) => f(a, b).map_err(|m| self.fail(m)),
            _ => Err(self.expect("reduce")),
        }
    }

    pub fn step(&self, state: &Value, r: &Record) -> Result<(Value, Record)> {
        match &self.func {
            KernelFn::Stateful(f) => f(state, r).map_err(|m| self.fail(m)),
            _ => Err(self.expect("stateful")),
        }
    }

    /// Left fold of `values` with a reduce kernel; `None` for no values.
    pub fn fold<'a>(&self, values: impl IntoIterator<Item = &'a Value>) -> Result<Option<Value>> {
        let mut acc: Option<Value> = None;
        for v in values {
            acc = Some(match acc {
                None => v.clone(),
                Some(a) => self.combine(&a, v)?,
            });
        }
        Ok(acc)
    }
}

/// Termination predicate over a whole intermediate collection.
#[derive(Clone)]
pub struct Predicate {
    name: String,
    func: Arc<dyn Fn(&Multiset) -> bool + Send + Sync>,
}

impl fmt::Debug for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "predicate:{}", self.name)
    }
}

impl Predicate {
    pub fn new(name: &str, f: impl Fn(&Multiset) -> bool + Send + Sync + 'static) -> Self {
        Predicate {
            name: name.to_string(),
            func: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn test(&self, m: &Multiset) -> bool {
        (self.func)(m)
    }
}

fn num(v: &Value) -> KernelResult<f64> {
    v.as_f64().ok_or_else(|| format!("expected a number, got {} `{v}`", v.kind_name()))
}

fn arith(
    a: &Value,
    b: &Value,
    int_op: fn(i64, i64) -> i64,
    float_op: fn(f64, f64) -> f64,
) -> KernelResult<Value> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Ok(Value::Int(int_op(*x, *y))),
        _ => Ok(Value::Float(float_op(num(a)?, num(b)?))),
    }
}

fn map_payload(r: &Record, f: impl Fn(&Value) -> KernelResult<Value>) -> KernelResult<Record> {
    Ok(Record {
        key: r.key.clone(),
        payload: f(&r.payload)?,
    })
}

fn text_of(v: &Value) -> KernelResult<&str> {
    v.as_text().ok_or_else(|| format!("expected text, got {} `{v}`", v.kind_name()))
}

/// Look up a built-in kernel by name.
pub fn lookup(name: &str) -> Option<Kernel> {
    let k = match name {
        // map
        "identity" => Kernel::map(name, |r| Ok(r.clone())),
        "add_one" => Kernel::map(name, |r| map_payload(r, |v| arith(v, &Value::Int(1), i64::wrapping_add, |a, b| a + b))),
        "double" => Kernel::map(name, |r| map_payload(r, |v| arith(v, &Value::Int(2), i64::wrapping_mul, |a, b| a * b))),
        "square" => Kernel::map(name, |r| map_payload(r, |v| arith(v, v, i64::wrapping_mul, |a, b| a * b))),
        "negate" => Kernel::map(name, |r| map_payload(r, |v| arith(&Value::Int(0), v, i64::wrapping_sub, |a, b| a - b))),
        "halve" => Kernel::map(name, |r| map_payload(r, |v| Ok(Value::Float(num(v)? / 2.0)))),
        "const_zero" => Kernel::map(name, |r| map_payload(r, |_| Ok(Value::Int(0)))),
        "pair_one" => Kernel::map(name, |r| Ok(Record::keyed(r.payload.clone(), 1))),
        "key_mod_4" => Kernel::map(name, |r| {
            let n = r.payload.as_int().ok_or_else(|| format!("expected int, got `{}`", r.payload))?;
            Ok(Record::keyed(n.rem_euclid(4), n))
        }),
        "list_len" => Kernel::map(name, |r| {
            let items = r.payload.as_list().ok_or_else(|| format!("expected list, got `{}`", r.payload))?;
            Ok(Record { key: r.key.clone(), payload: Value::Int(items.len() as i64) })
        }),
        "unkey" => Kernel::map(name, |r| Ok(Record::unkeyed(r.to_value()))),
        // flat_map
        "split_words" => Kernel::flat_map(name, |r| {
            Ok(text_of(&r.payload)?.split_whitespace().map(|w| Record::unkeyed(w.to_string())).collect())
        }),
        "duplicate" => Kernel::flat_map(name, |r| Ok(vec![r.clone(), r.clone()])),
        "explode" => Kernel::flat_map(name, |r| {
            let items = r.payload.as_list().ok_or_else(|| format!("expected list, got `{}`", r.payload))?;
            Ok(items.iter().map(|v| Record { key: r.key.clone(), payload: v.clone() }).collect())
        }),
        // filter
        "is_odd" => Kernel::filter(name, |r| Ok(r.payload.as_int().is_some_and(|n| n.rem_euclid(2) == 1))),
        "is_even" => Kernel::filter(name, |r| Ok(r.payload.as_int().is_some_and(|n| n.rem_euclid(2) == 0))),
        "positive" => Kernel::filter(name, |r| Ok(num(&r.payload)? > 0.0)),
        "non_empty" => Kernel::filter(name, |r| Ok(r.payload.as_text().is_none_or(|s| !s.is_empty()))),
        // reduce
        "sum" => Kernel::reduce(name, |a, b| arith(a, b, i64::wrapping_add, |x, y| x + y)),
        "mul" => Kernel::reduce(name, |a, b| arith(a, b, i64::wrapping_mul, |x, y| x * y)),
        "max" => Kernel::reduce(name, |a, b| Ok(a.max(b).clone())),
        "min" => Kernel::reduce(name, |a, b| Ok(a.min(b).clone())),
        // Not associative; exists to exercise the contract checker.
        "sub" => Kernel::reduce(name, |a, b| arith(a, b, i64::wrapping_sub, |x, y| x - y)),
        // stateful: (state, record) -> (state', emitted)
        "count" => Kernel::stateful(name, |s, r| {
            let n = s.as_int().ok_or_else(|| format!("count state must be int, got `{s}`"))? + 1;
            Ok((Value::Int(n), Record { key: r.key.clone(), payload: Value::Int(n) }))
        }),
        "running_sum" => Kernel::stateful(name, |s, r| {
            let next = arith(s, &r.payload, i64::wrapping_add, |x, y| x + y)?;
            Ok((next.clone(), Record { key: r.key.clone(), payload: next }))
        }),
        _ => return None,
    };
    Some(k)
}

pub const KERNEL_NAMES: &[&str] = &[
    "identity", "add_one", "double", "square", "negate", "halve", "const_zero", "pair_one", "key_mod_4",
    "list_len", "unkey", "split_words", "duplicate", "explode", "is_odd", "is_even", "positive",
    "non_empty", "sum", "mul", "max", "min", "sub", "count", "running_sum",
];

pub fn lookup_predicate(name: &str) -> Option<Predicate> {
    let p = match name {
        "all_lt_1" => Predicate::new(name, |m| m.iter().all(|r| r.payload.as_f64().is_some_and(|x| x < 1.0))),
        "is_empty" => Predicate::new(name, |m| m.is_empty()),
        "never" => Predicate::new(name, |_| false),
        "always" => Predicate::new(name, |_| true),
        _ => return None,
    };
    Some(p)
}

pub fn require(name: &str) -> Result<Kernel> {
    lookup(name).ok_or_else(|| Error::invalid(format!("unknown kernel `{name}`")))
}

pub fn require_predicate(name: &str) -> Result<Predicate> {
    lookup_predicate(name).ok_or_else(|| Error::invalid(format!("unknown predicate `{name}`")))
}
