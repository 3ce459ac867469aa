//! Dense reference interpreter.
//!
//! Evaluates programs over concrete sizes by enumerating, for each
//! product, every assignment of its variables that satisfies its
//! comparisons and lies inside the dimensions of the tensors it accesses.
//! Unique-set and redundancy-map rules are evaluated as sets (values 0/1).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_traits::{Num, NumCast};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ir::*;
use crate::linear::Lin;

pub type Sizes = BTreeMap<String, i64>;

/// Element type of dense tensors.
pub trait Scalar: Num + NumCast + Copy + PartialOrd + fmt::Debug + fmt::Display + FromStr + Send + Sync + 'static {
    const MODE: &'static str;

    fn from_i64(v: i64) -> Self {
        <Self as NumCast>::from(v).expect("representable")
    }
}

impl Scalar for i64 {
    const MODE: &'static str = "int";
}

impl Scalar for f64 {
    const MODE: &'static str = "float";
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<S> {
    pub dims: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> DenseTensor<S> {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        DenseTensor { dims, data: vec![S::zero(); n] }
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[i64]) -> S) -> Self {
        let mut t = Self::zeros(dims);
        let data: Vec<S> = t.indices().map(|idx| f(&idx)).collect();
        t.data = data;
        t
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn offset(&self, idx: &[i64]) -> Option<usize> {
        if idx.len() != self.dims.len() {
            return None;
        }
        let mut off = 0usize;
        for (&i, &d) in idx.iter().zip(&self.dims) {
            if i < 0 || i as usize >= d {
                return None;
            }
            off = off * d + i as usize;
        }
        Some(off)
    }

    /// Value at `idx`; zero outside the dimensions.
    pub fn get(&self, idx: &[i64]) -> S {
        self.offset(idx).map_or(S::zero(), |o| self.data[o])
    }

    pub fn set(&mut self, idx: &[i64], v: S) -> bool {
        match self.offset(idx) {
            Some(o) => {
                self.data[o] = v;
                true
            }
            None => false,
        }
    }

    /// All index tuples in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        let total: usize = self.dims.iter().product();
        (0..total).map(move |mut off| {
            let mut idx = vec![0i64; self.dims.len()];
            for p in (0..self.dims.len()).rev() {
                idx[p] = (off % self.dims[p]) as i64;
                off /= self.dims[p];
            }
            idx
        })
    }

    /// Positions holding a nonzero value.
    pub fn support(&self) -> BTreeSet<Vec<i64>> {
        self.indices()
            .zip(&self.data)
            .filter(|(_, v)| !v.is_zero())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> DenseTensor<T> {
        DenseTensor { dims: self.dims.clone(), data: self.data.iter().map(|v| f(*v)).collect() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub mults: u64,
    pub adds: u64,
    pub iters: u64,
}

impl std::ops::AddAssign for OpCounter {
    fn add_assign(&mut self, o: Self) {
        self.mults += o.mults;
        self.adds += o.adds;
        self.iters += o.iters;
    }
}

pub fn eval_dims(dims: &[IndexExpr], sizes: &Sizes) -> Result<Vec<usize>> {
    dims.iter()
        .map(|d| {
            let v = d.eval_sizes(sizes).ok_or_else(|| {
                let mut s = BTreeSet::new();
                d.collect_syms(&mut s);
                let missing = s.into_iter().find(|n| !sizes.contains_key(n)).unwrap_or_else(|| d.to_string());
                Error::UnboundSize(missing)
            })?;
            Ok(v.max(0) as usize)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Enumeration of one product's satisfying assignments

struct Constraint {
    lin: Lin,
    op: CmpOp,
    vars: Vec<usize>,
}

/// The satisfying assignments of a conjunction of comparisons within a
/// per-variable static box.
pub(crate) struct Space<'a> {
    pub vars: Vec<String>,
    cons: Vec<Constraint>,
    boxes: Vec<Option<(i64, i64)>>,
    sizes: &'a Sizes,
    trivially_false: bool,
}

type Iv = (Option<i64>, Option<i64>);

fn add(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    a?.checked_add(b?)
}

fn sub(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    a?.checked_sub(b?)
}

fn mul(a: Option<i64>, k: i64) -> Option<i64> {
    a?.checked_mul(k)
}

fn floor_div(a: i64, b: i64) -> i64 {
    ArithOp::Div.apply(a, b).unwrap_or(0)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -floor_div(-a, b)
}

impl<'a> Space<'a> {
    /// `boxes` bounds variables by `[lo, hi)`; variables without a box
    /// must be bounded by the comparisons.
    pub fn new(vars: Vec<String>, cmps: &[&Comparison], boxes: &BTreeMap<String, (i64, i64)>, sizes: &'a Sizes) -> Result<Self> {
        let pos: BTreeMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        let mut cons = Vec::new();
        let mut trivially_false = false;
        for c in cmps {
            let lin = Lin::of(&bind_sizes(&c.lhs, sizes)).sub(&Lin::of(&bind_sizes(&c.rhs, sizes)));
            let vs: BTreeSet<String> = c.vars();
            if vs.is_empty() {
                let v = eval_lin(&lin, &|_| None, sizes)
                    .ok_or_else(|| Error::UnboundSize(c.to_string()))?;
                if !c.op.holds(v, 0) {
                    trivially_false = true;
                }
                continue;
            }
            let idx = vs.iter().map(|v| pos[v.as_str()]).collect();
            cons.push(Constraint { lin, op: c.op, vars: idx });
        }
        let b = vars.iter().map(|v| boxes.get(v).copied()).collect();
        Ok(Space { vars, cons, boxes: b, sizes, trivially_false })
    }

    /// Calls `f` on every satisfying assignment (indexed like `vars`).
    pub fn for_each(&self, rule: &str, f: &mut dyn FnMut(&[i64]) -> Result<()>) -> Result<()> {
        if self.trivially_false {
            return Ok(());
        }
        let mut assign = vec![None; self.vars.len()];
        self.rec(&mut assign, rule, f)
    }

    fn value(&self, assign: &[Option<i64>]) -> impl Fn(&str) -> Option<i64> + '_ {
        let vars = &self.vars;
        let assign = assign.to_vec();
        move |v: &str| vars.iter().position(|x| x == v).and_then(|i| assign[i])
    }

    /// Inclusive interval of an expression under the current variable
    /// intervals.
    fn interval(&self, e: &IndexExpr, doms: &[Iv]) -> Iv {
        match e {
            IndexExpr::Var(v) => match self.vars.iter().position(|x| x == v) {
                Some(i) => doms[i],
                None => (None, None),
            },
            IndexExpr::Sym(s) => {
                let v = self.sizes.get(s).copied();
                (v, v)
            }
            IndexExpr::Const(c) => (Some(*c), Some(*c)),
            IndexExpr::Arith(op, a, b) => {
                let (x, y) = (self.interval(a, doms), self.interval(b, doms));
                match op {
                    ArithOp::Add => (add(x.0, y.0), add(x.1, y.1)),
                    ArithOp::Sub => (sub(x.0, y.1), sub(x.1, y.0)),
                    ArithOp::Mul => match (x, y) {
                        ((Some(a0), Some(a1)), (Some(b0), Some(b1))) => {
                            let p = [a0 * b0, a0 * b1, a1 * b0, a1 * b1];
                            (p.iter().min().copied(), p.iter().max().copied())
                        }
                        _ => (None, None),
                    },
                    _ => match (x, y) {
                        ((Some(a0), Some(a1)), (Some(b0), Some(b1))) if a0 == a1 && b0 == b1 => {
                            let v = op.apply(a0, b0);
                            (v, v)
                        }
                        _ => (None, None),
                    },
                }
            }
        }
    }

    /// Propagates interval bounds through the constraints until stable.
    /// `None` when some variable has an empty interval.
    fn propagate(&self, assign: &[Option<i64>]) -> Option<Vec<Iv>> {
        let mut doms: Vec<Iv> = (0..self.vars.len())
            .map(|i| match assign[i] {
                Some(v) => (Some(v), Some(v)),
                None => self.boxes[i].map_or((None, None), |(l, h)| (Some(l), Some(h - 1))),
            })
            .collect();
        for _ in 0..(2 * self.vars.len() + 2) {
            let mut changed = false;
            for c in &self.cons {
                let (lin, eq) = match c.op {
                    CmpOp::Ne => continue,
                    CmpOp::Eq => (c.lin.clone(), true),
                    CmpOp::Le => (c.lin.clone(), false),
                    CmpOp::Lt => (c.lin.add(&Lin::constant(1)), false),
                    CmpOp::Ge => (c.lin.scale(-1), false),
                    CmpOp::Gt => (c.lin.scale(-1).add(&Lin::constant(1)), false),
                };
                for &vi in &c.vars {
                    if assign[vi].is_some() {
                        continue;
                    }
                    let name = &self.vars[vi];
                    let a = lin.coeff_of_var(name);
                    if a == 0 {
                        continue;
                    }
                    let rest = lin.sub(&Lin::atom(IndexExpr::var(name.clone())).scale(a));
                    if rest.terms.keys().any(|t| t.mentions(name)) {
                        continue;
                    }
                    // a*v + rest (op) 0
                    let (mut rlo, mut rhi) = (Some(rest.constant), Some(rest.constant));
                    for (t, k) in &rest.terms {
                        let (lo, hi) = self.interval(t, &doms);
                        let (lo, hi) = if *k >= 0 { (mul(lo, *k), mul(hi, *k)) } else { (mul(hi, *k), mul(lo, *k)) };
                        rlo = add(rlo, lo);
                        rhi = add(rhi, hi);
                    }
                    let (mut lo, mut hi) = (None, None);
                    if let Some(rl) = rlo {
                        if a > 0 {
                            hi = Some(floor_div(-rl, a));
                        } else {
                            lo = Some(ceil_div(-rl, a));
                        }
                    }
                    if eq {
                        if let Some(rh) = rhi {
                            if a > 0 {
                                lo = Some(ceil_div(-rh, a));
                            } else {
                                hi = Some(floor_div(-rh, a));
                            }
                        }
                    }
                    let d = &mut doms[vi];
                    if let Some(l) = lo {
                        if d.0.map_or(true, |x| l > x) {
                            d.0 = Some(l);
                            changed = true;
                        }
                    }
                    if let Some(h) = hi {
                        if d.1.map_or(true, |x| h < x) {
                            d.1 = Some(h);
                            changed = true;
                        }
                    }
                    if let (Some(l), Some(h)) = *d {
                        if l > h {
                            return None;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Some(doms)
    }

    fn rec(&self, assign: &mut Vec<Option<i64>>, rule: &str, f: &mut dyn FnMut(&[i64]) -> Result<()>) -> Result<()> {
        let Some(doms) = self.propagate(assign) else { return Ok(()) };
        let mut best: Option<(usize, i64, i64)> = None;
        let mut unbounded = None;
        for vi in 0..self.vars.len() {
            if assign[vi].is_some() {
                continue;
            }
            match doms[vi] {
                (Some(l), Some(h)) => {
                    if best.map_or(true, |(_, bl, bh)| h - l < bh - bl) {
                        best = Some((vi, l, h));
                    }
                }
                _ => {
                    unbounded.get_or_insert(vi);
                }
            }
        }
        let Some((vi, lo, hi)) = best else {
            if let Some(vi) = unbounded {
                return Err(Error::Unbounded { var: self.vars[vi].clone(), rule: rule.to_string() });
            }
            let full: Vec<i64> = assign.iter().map(|v| v.expect("assigned")).collect();
            return f(&full);
        };
        for v in lo..=hi {
            assign[vi] = Some(v);
            if self.consistent(vi, assign) {
                self.rec(assign, rule, f)?;
            }
        }
        assign[vi] = None;
        Ok(())
    }

    fn consistent(&self, vi: usize, assign: &[Option<i64>]) -> bool {
        let val = self.value(assign);
        self.cons.iter().all(|c| {
            if !c.vars.contains(&vi) || c.vars.iter().any(|&u| assign[u].is_none()) {
                return true;
            }
            eval_lin(&c.lin, &val, self.sizes).is_some_and(|v| c.op.holds(v, 0))
        })
    }
}

/// Replaces bound size constants by their values, so that products with
/// sizes become integer coefficients.
fn bind_sizes(e: &IndexExpr, sizes: &Sizes) -> IndexExpr {
    match e {
        IndexExpr::Sym(s) => sizes.get(s).map_or_else(|| e.clone(), |v| IndexExpr::Const(*v)),
        IndexExpr::Arith(op, a, b) => IndexExpr::arith(*op, bind_sizes(a, sizes), bind_sizes(b, sizes)),
        _ => e.clone(),
    }
}

fn eval_lin(l: &Lin, var: &dyn Fn(&str) -> Option<i64>, sizes: &Sizes) -> Option<i64> {
    let sym = |s: &str| sizes.get(s).copied();
    let mut acc = l.constant;
    for (t, c) in &l.terms {
        acc = acc.checked_add(c.checked_mul(t.eval(var, &sym)?)?)?;
    }
    Some(acc)
}

// ---------------------------------------------------------------------------
// Program evaluation

fn label(tensor: &str, kind: Kind) -> String {
    format!("{tensor}{}", kind.marker())
}

/// Interpreter state: evaluated tensors keyed by name and kind.
pub struct Evaluator<'a, S> {
    pub sizes: &'a Sizes,
    pub dims: &'a BTreeMap<String, Vec<IndexExpr>>,
    pub values: BTreeMap<(String, Kind), DenseTensor<S>>,
    pub counter: OpCounter,
}

impl<'a, S: Scalar> Evaluator<'a, S> {
    pub fn new(sizes: &'a Sizes, dims: &'a BTreeMap<String, Vec<IndexExpr>>) -> Self {
        Evaluator { sizes, dims, values: BTreeMap::new(), counter: OpCounter::default() }
    }

    pub fn insert(&mut self, tensor: &str, kind: Kind, t: DenseTensor<S>) {
        self.values.insert((tensor.to_string(), kind), t);
    }

    pub fn get(&self, tensor: &str, kind: Kind) -> Option<&DenseTensor<S>> {
        self.values.get(&(tensor.to_string(), kind))
    }

    /// Dimensions of the plain tensor `t`: declared, or from its value.
    pub fn tensor_dims(&self, t: &str) -> Result<Option<Vec<usize>>> {
        if let Some(d) = self.dims.get(t) {
            return eval_dims(d, self.sizes).map(Some);
        }
        Ok(self.get(t, Kind::Plain).map(|v| v.dims.clone()))
    }

    fn access_dims(&self, a: &Access) -> Result<Option<Vec<usize>>> {
        let base = self.tensor_dims(&a.tensor)?;
        Ok(match (a.kind, base) {
            (Kind::Redundancy, Some(d)) => Some(d.iter().chain(&d).copied().collect()),
            (_, Some(d)) => Some(d),
            (_, None) => self.get(&a.tensor, a.kind).map(|v| v.dims.clone()),
        })
    }

    fn access_value(&self, a: &Access, idx: &[i64]) -> Result<S> {
        if let Some(t) = self.get(&a.tensor, a.kind) {
            return Ok(t.get(idx));
        }
        if a.kind == Kind::Compressed {
            let t = self.get(&a.tensor, Kind::Plain).ok_or_else(|| Error::MissingInput(a.tensor.clone()))?;
            let u = self
                .get(&a.tensor, Kind::Unique)
                .ok_or_else(|| Error::MissingInput(label(&a.tensor, Kind::Unique)))?;
            return Ok(if u.get(idx).is_zero() { S::zero() } else { t.get(idx) });
        }
        Err(Error::MissingInput(label(&a.tensor, a.kind)))
    }

    fn head_dims(&self, r: &Rule) -> Result<Option<Vec<usize>>> {
        match r.head.kind {
            Kind::Plain => self.tensor_dims(&r.head.tensor),
            _ => self.access_dims(&r.head),
        }
    }

    /// All satisfying assignments of the rule as (head index, value),
    /// with values multiplied out.
    pub fn rule_terms(&mut self, r: &Rule, head_dims: Option<&[usize]>) -> Result<Vec<(Vec<i64>, S)>> {
        let numeric = !r.head.kind.is_set();
        let rule_label = label(&r.head.tensor, r.head.kind);
        let mut out = Vec::new();
        for prod in &r.body.0 {
            let vars = {
                let mut v = r.head.args.clone();
                for x in prod.ordered_vars() {
                    if !v.contains(&x) {
                        v.push(x);
                    }
                }
                v
            };
            let mut boxes: BTreeMap<String, (i64, i64)> = BTreeMap::new();
            let mut clamp = |v: &String, d: usize| {
                let e = boxes.entry(v.clone()).or_insert((0, d as i64));
                e.1 = e.1.min(d as i64);
            };
            let accesses: Vec<&Access> = prod.accesses().collect();
            for a in &accesses {
                if let Some(d) = self.access_dims(a)? {
                    for (v, dd) in a.args.iter().zip(d) {
                        clamp(v, dd);
                    }
                }
            }
            if let Some(hd) = head_dims {
                for (v, d) in r.head.args.iter().zip(hd) {
                    clamp(v, *d);
                }
            }
            let cmps: Vec<&Comparison> = prod.comparisons().collect();
            let space = Space::new(vars.clone(), &cmps, &boxes, self.sizes)?;
            let pos: Vec<Vec<usize>> = accesses
                .iter()
                .map(|a| a.args.iter().map(|x| vars.iter().position(|v| v == x).unwrap()).collect())
                .collect();
            let k = r.head.args.len();
            let mut counter = OpCounter::default();
            let this = &*self;
            space.for_each(&rule_label, &mut |asg| {
                let mut val = S::one();
                for (a, p) in accesses.iter().zip(&pos) {
                    let idx: Vec<i64> = p.iter().map(|&i| asg[i]).collect();
                    val = val * this.access_value(a, &idx)?;
                }
                if numeric {
                    counter.iters += 1;
                    counter.mults += accesses.len().saturating_sub(1) as u64;
                    counter.adds += 1;
                }
                out.push((asg[..k].to_vec(), val));
                Ok(())
            })?;
            self.counter += counter;
        }
        Ok(out)
    }

    pub fn eval_rule(&mut self, r: &Rule) -> Result<DenseTensor<S>> {
        let declared = self.head_dims(r)?;
        let terms = self.rule_terms(r, declared.as_deref())?;
        let dims = match declared {
            Some(d) => d,
            None => {
                let mut d = vec![0usize; r.head.args.len()];
                for (idx, _) in &terms {
                    for (p, &i) in idx.iter().enumerate() {
                        d[p] = d[p].max(i as usize + 1);
                    }
                }
                d
            }
        };
        let mut t = DenseTensor::zeros(dims);
        let set = r.head.kind.is_set();
        for (idx, v) in terms {
            let Some(o) = t.offset(&idx) else {
                return Err(Error::Shape(format!(
                    "rule for `{}` writes {idx:?} outside {:?}",
                    label(&r.head.tensor, r.head.kind),
                    t.dims
                )));
            };
            if set {
                if !v.is_zero() {
                    t.data[o] = S::one();
                }
            } else {
                t.data[o] = t.data[o] + v;
            }
        }
        Ok(t)
    }

    pub fn run(&mut self, p: &Program) -> Result<()> {
        for r in &p.rules {
            let t = self.eval_rule(r)?;
            self.insert(&r.head.tensor, r.head.kind, t);
        }
        Ok(())
    }
}

fn load_inputs<S: Scalar>(ev: &mut Evaluator<S>, p: &Program, inputs: &BTreeMap<String, DenseTensor<S>>) -> Result<()> {
    for name in p.inputs() {
        let t = inputs.get(&name).ok_or_else(|| Error::MissingInput(name.clone()))?;
        if let Some(want) = ev.tensor_dims(&name)? {
            if want != t.dims {
                return Err(Error::DimensionMismatch { tensor: name, expected: want, found: t.dims.clone() });
            }
        }
        ev.insert(&name, Kind::Plain, t.clone());
    }
    for (name, t) in inputs {
        let (base, kind) = split_label(name);
        if ev.get(base, kind).is_none() && p.defines(base, kind).is_none() {
            ev.insert(base, kind, t.clone());
        }
    }
    Ok(())
}

/// Splits `T:U` into (`T`, Unique).
pub fn split_label(s: &str) -> (&str, Kind) {
    for (m, k) in [(":U", Kind::Unique), (":R", Kind::Redundancy), (":C", Kind::Compressed)] {
        if let Some(b) = s.strip_suffix(m) {
            return (b, k);
        }
    }
    (s, Kind::Plain)
}

/// Evaluates every rule in order. The result maps each defined access
/// (`T`, `T:U`, `T:R`, ...) to its value. Inputs may also carry unique
/// sets and redundancy maps keyed as `T:U` / `T:R`.
pub fn eval_program<S: Scalar>(p: &Program, sizes: &Sizes, inputs: &BTreeMap<String, DenseTensor<S>>) -> Result<BTreeMap<String, DenseTensor<S>>> {
    Ok(run_program(p, sizes, inputs)?.0)
}

pub fn count_ops<S: Scalar>(p: &Program, sizes: &Sizes, inputs: &BTreeMap<String, DenseTensor<S>>) -> Result<OpCounter> {
    Ok(run_program(p, sizes, inputs)?.1)
}

pub fn run_program<S: Scalar>(
    p: &Program,
    sizes: &Sizes,
    inputs: &BTreeMap<String, DenseTensor<S>>,
) -> Result<(BTreeMap<String, DenseTensor<S>>, OpCounter)> {
    let mut ev = Evaluator::new(sizes, &p.dims);
    load_inputs(&mut ev, p, inputs)?;
    ev.run(p)?;
    let mut out = BTreeMap::new();
    for r in &p.rules {
        if let Some(t) = ev.get(&r.head.tensor, r.head.kind) {
            out.insert(label(&r.head.tensor, r.head.kind), t.clone());
        }
    }
    Ok((out, ev.counter))
}

/// The denotation of a set rule whose body holds only comparisons (and
/// no accesses), bounded by `head_dims` when given.
pub fn eval_set(r: &Rule, head_dims: Option<&[usize]>, sizes: &Sizes) -> Result<BTreeSet<Vec<i64>>> {
    let dims = BTreeMap::new();
    let mut ev: Evaluator<i64> = Evaluator::new(sizes, &dims);
    let terms = ev.rule_terms(r, head_dims)?;
    Ok(terms.into_iter().filter(|(_, v)| *v != 0).map(|(i, _)| i).collect())
}

// ---------------------------------------------------------------------------
// Structures: enumeration, random inputs, properties

/// Enumerated unique set and redundancy pairs of a structure.
#[derive(Clone, Debug, Default)]
pub struct StructureSets {
    pub dims: Vec<usize>,
    pub unique: BTreeSet<Vec<i64>>,
    /// `(x, x')` pairs.
    pub redundancy: Vec<(Vec<i64>, Vec<i64>)>,
}

pub fn structure_sets(info: &StructureInfo, sizes: &Sizes) -> Result<StructureSets> {
    let dims = eval_dims(&info.dims, sizes)?;
    let u = eval_set(&info.unique, Some(&dims), sizes)?;
    let rd: Vec<usize> = dims.iter().chain(&dims).copied().collect();
    let k = dims.len();
    let r = eval_set(&info.redundancy, Some(&rd), sizes)?
        .into_iter()
        .map(|mut v| {
            let xp = v.split_off(k);
            (v, xp)
        })
        .collect();
    Ok(StructureSets { dims, unique: u, redundancy: r })
}

/// Uniformly random integers in `[-range, range]`.
pub fn random_tensor<S: Scalar, R: Rng>(dims: Vec<usize>, range: i64, rng: &mut R) -> DenseTensor<S> {
    DenseTensor::from_fn(dims, |_| S::from_i64(rng.gen_range(-range..=range)))
}

/// A random tensor carrying the given structure: random values on the
/// unique set, copies along the redundancy map, zero elsewhere.
pub fn random_structured<S: Scalar, R: Rng>(sets: &StructureSets, range: i64, rng: &mut R) -> DenseTensor<S> {
    let mut t = DenseTensor::zeros(sets.dims.clone());
    for x in &sets.unique {
        t.set(x, S::from_i64(rng.gen_range(-range..=range)));
    }
    for (x, xp) in &sets.redundancy {
        let v = t.get(xp);
        t.set(x, v);
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub witness: Option<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyReport {
    pub tensor: String,
    pub results: Vec<PropertyResult>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&PropertyResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            write!(f, "{} {} {}", self.tensor, r.name, if r.passed { "ok" } else { "FAIL" })?;
            if let Some(w) = &r.witness {
                write!(f, " at {w:?}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn check(name: &'static str, witness: Option<Vec<i64>>) -> PropertyResult {
    PropertyResult { name, passed: witness.is_none(), witness }
}

/// Checks the unique set / redundancy map of `tensor` against its value
/// by enumeration.
pub fn check_properties<S: Scalar>(tensor: &str, info: &StructureInfo, sizes: &Sizes, value: &DenseTensor<S>) -> Result<PropertyReport> {
    let sets = structure_sets(info, sizes)?;
    Ok(check_sets(tensor, &sets, value))
}

pub fn check_sets<S: Scalar>(tensor: &str, sets: &StructureSets, value: &DenseTensor<S>) -> PropertyReport {
    let u = &sets.unique;
    let compressed = |x: &[i64]| if u.contains(x) { value.get(x) } else { S::zero() };
    let mut results = Vec::new();

    // 1: U(x) * R(x, x') is empty
    let w = sets.redundancy.iter().find(|(x, _)| u.contains(x)).map(|(x, _)| x.clone());
    results.push(check("P1 unique-redundant disjoint", w));

    // 2: T_C = T_U * T, and T_C agrees with T on T_U
    let w = u.iter().find(|x| compressed(x) != value.get(x) || value.offset(x).is_none()).cloned();
    results.push(check("P2 compressed", w));

    // 3: T_C(x) * R(x, x') is empty, and R only targets unique positions
    let w = sets
        .redundancy
        .iter()
        .find(|(x, xp)| !compressed(x).is_zero() || !u.contains(xp))
        .map(|(x, xp)| [x.clone(), xp.clone()].concat());
    results.push(check("P3 compressed-redundant disjoint", w));

    // 4: U * U = U
    let w = u.iter().find(|x| !(u.contains(*x) && u.contains(*x))).cloned();
    results.push(check("P4 idempotent", w));

    // 5: T = T_C + sum R(x, x') T_C(x')
    let mut recon: DenseTensor<S> = DenseTensor::zeros(value.dims.clone());
    for x in u {
        recon.set(x, value.get(x));
    }
    for (x, xp) in &sets.redundancy {
        if let Some(o) = recon.offset(x) {
            recon.data[o] = recon.data[o] + compressed(xp);
        }
    }
    let w = value.indices().find(|x| recon.get(x) != value.get(x));
    results.push(check("P5 reconstruction", w));

    // at most one x' per x
    let mut seen = BTreeSet::new();
    let w = sets.redundancy.iter().find(|(x, _)| !seen.insert(x.clone())).map(|(x, _)| x.clone());
    results.push(check("functional", w));

    PropertyReport { tensor: tensor.to_string(), results }
}

/// Reconstructs the full tensor from its compressed part and redundancy
/// pairs.
pub fn reconstruct<S: Scalar>(compressed: &DenseTensor<S>, redundancy: &[(Vec<i64>, Vec<i64>)]) -> DenseTensor<S> {
    let mut out = compressed.clone();
    for (x, xp) in redundancy {
        let v = compressed.get(xp);
        if let Some(o) = out.offset(x) {
            out.data[o] = out.data[o] + v;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tensor exchange files

/// `name order d1 .. dk` on the first line, then the values in row-major
/// order.
pub fn write_tensor<S: Scalar>(name: &str, t: &DenseTensor<S>) -> String {
    let mut s = format!("{name} {}", t.order());
    for d in &t.dims {
        s.push_str(&format!(" {d}"));
    }
    s.push('\n');
    let last = t.dims.last().copied().unwrap_or(1).max(1);
    for (i, v) in t.data.iter().enumerate() {
        s.push_str(&v.to_string());
        s.push(if (i + 1) % last == 0 { '\n' } else { ' ' });
    }
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

pub fn read_tensor<S: Scalar>(text: &str) -> Result<(String, DenseTensor<S>)> {
    let bad = |m: String| Error::TensorFile(m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let mut h = header.split_whitespace();
    let name = h.next().ok_or_else(|| bad("missing name".into()))?.to_string();
    let order: usize = h
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("missing or invalid order".into()))?;
    let dims: Vec<usize> = h
        .map(|s| s.parse().map_err(|_| bad(format!("invalid dimension `{s}`"))))
        .collect::<Result<_>>()?;
    if dims.len() != order {
        return Err(bad(format!("order {order} but {} dimensions", dims.len())));
    }
    let data: Vec<S> = lines
        .flat_map(|l| l.split_whitespace())
        .map(|s| s.parse::<S>().map_err(|_| bad(format!("invalid value `{s}`"))))
        .collect::<Result<_>>()?;
    let want: usize = dims.iter().product();
    if data.len() != want {
        return Err(bad(format!("expected {want} values, found {}", data.len())));
    }
    Ok((name, DenseTensor { dims, data }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::{parse, parse_rule};
    use rand::SeedableRng;
    use rand_xoshiro::SplitMix64;

    fn sizes(kv: &[(&str, i64)]) -> Sizes {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn diagonal_of_hadamard() {
        let p = parse("@size n\n@dim T1(n,n)\n@dim T2(n,n)\nT3(x,y) := T1(x,y) * T2(x,y)\nT4(x) := T3(x,y) * (x = y)\n").unwrap();
        let mut rng = SplitMix64::seed_from_u64(1);
        let t1: DenseTensor<i64> = random_tensor(vec![3, 3], 5, &mut rng);
        let t2: DenseTensor<i64> = random_tensor(vec![3, 3], 5, &mut rng);
        let inputs = BTreeMap::from([("T1".to_string(), t1.clone()), ("T2".to_string(), t2.clone())]);
        let out = eval_program(&p, &sizes(&[("n", 3)]), &inputs).unwrap();
        let t4 = &out["T4"];
        assert_eq!(t4.dims, vec![3]);
        for i in 0..3 {
            assert_eq!(t4.get(&[i]), t1.get(&[i, i]) * t2.get(&[i, i]));
        }
    }

    #[test]
    fn chess_pattern_set() {
        let r = parse_rule(
            "T:U(i,j) := (i = 2 * i' + 1) * (j = 2 * j') * (0 <= i < n) * (0 <= j < m) + (i = 2 * i') * (j = 2 * j' + 1) * (0 <= i < n) * (0 <= j < m)",
            &["n".into(), "m".into()],
        )
        .unwrap();
        let s = eval_set(&r, None, &sizes(&[("n", 4), ("m", 4)])).unwrap();
        // brute force over the 16 cells: odd row and even column, or the reverse
        let mut want = BTreeSet::new();
        for i in 0..4i64 {
            for j in 0..4i64 {
                if (i % 2 == 1 && j % 2 == 0) || (i % 2 == 0 && j % 2 == 1) {
                    want.insert(vec![i, j]);
                }
            }
        }
        assert_eq!(s.len(), 8);
        assert_eq!(s, want);
    }

    #[test]
    fn symmetric_set_and_empty_rule() {
        let r = parse_rule("S:U(i,j) := (0 <= i <= j < n)", &["n".into()]).unwrap();
        let s = eval_set(&r, None, &sizes(&[("n", 3)])).unwrap();
        let want: BTreeSet<Vec<i64>> = [[0, 0], [0, 1], [0, 2], [1, 1], [1, 2], [2, 2]].iter().map(|v| v.to_vec()).collect();
        assert_eq!(s, want);
        let e = parse_rule("Z:U(i,j) := 0", &[]).unwrap();
        assert!(eval_set(&e, Some(&[3, 3]), &Sizes::new()).unwrap().is_empty());
    }

    #[test]
    fn empty_body_is_zero_tensor() {
        let p = parse("@size n\n@dim A(n)\nA(i) := 0\n").unwrap();
        let out: BTreeMap<String, DenseTensor<i64>> = eval_program(&p, &sizes(&[("n", 4)]), &BTreeMap::new()).unwrap();
        assert_eq!(out["A"].data, vec![0; 4]);
    }

    #[test]
    fn identical_row_reconstruction() {
        let n = ["n".to_string(), "m".to_string()];
        let u = parse_rule("T:U(i,j) := (i = 0) * (0 <= j < m)", &n).unwrap();
        let r = parse_rule("T:R(i,j,i',j') := (0 < i < n) * (0 <= j < m) * (i' = 0) * (j' = j)", &n).unwrap();
        let info = StructureInfo { unique: u, redundancy: r, dims: vec![IndexExpr::sym("n"), IndexExpr::sym("m")] };
        let sz = sizes(&[("n", 4), ("m", 5)]);
        let mut rng = SplitMix64::seed_from_u64(3);
        let row: Vec<i64> = (0..5).map(|_| rng.gen_range(-9..=9)).collect();
        let t = DenseTensor::from_fn(vec![4, 5], |x| row[x[1] as usize]);
        let report = check_properties("T", &info, &sz, &t).unwrap();
        assert!(report.all_passed(), "{report}");
        let sets = structure_sets(&info, &sz).unwrap();
        let comp = DenseTensor::from_fn(vec![4, 5], |x| if sets.unique.contains(x) { t.get(x) } else { 0 });
        assert_eq!(reconstruct(&comp, &sets.redundancy), t);
    }

    #[test]
    fn self_mapping_redundancy_fails_reconstruction() {
        let n = ["n".to_string()];
        let u = parse_rule("y:U(i,j) := (0 <= i <= j < n)", &n).unwrap();
        let r = parse_rule("y:R(i,j,i',j') := (0 <= j < i < n) * (i' = i) * (j' = j)", &n).unwrap();
        let info = StructureInfo { unique: u, redundancy: r, dims: vec![IndexExpr::sym("n"); 2] };
        let sz = sizes(&[("n", 4)]);
        let t = DenseTensor::from_fn(vec![4, 4], |x| x[0] * 10 + x[1] + 1);
        let rep = check_properties("y", &info, &sz, &t).unwrap();
        assert!(!rep.all_passed());
        assert!(rep.failures().iter().any(|f| f.name.starts_with("P5") && f.witness.is_some()));
    }

    #[test]
    fn op_counts_and_unbounded() {
        let p = parse("@size n\n@dim A(n)\n@dim B(n)\nC(i,j) := A(i) * B(j)\n").unwrap();
        let inputs = BTreeMap::from([
            ("A".to_string(), DenseTensor::<i64>::zeros(vec![5])),
            ("B".to_string(), DenseTensor::<i64>::zeros(vec![5])),
        ]);
        let c = count_ops(&p, &sizes(&[("n", 5)]), &inputs).unwrap();
        assert_eq!(c, OpCounter { mults: 25, adds: 25, iters: 25 });
        let r = parse_rule("X:U(i) := (0 <= i)", &[]).unwrap();
        assert!(matches!(eval_set(&r, None, &Sizes::new()), Err(Error::Unbounded { .. })));
        let empty = Program::default();
        assert_eq!(count_ops::<i64>(&empty, &Sizes::new(), &BTreeMap::new()).unwrap(), OpCounter::default());
    }

    #[test]
    fn missing_input_and_dim_mismatch() {
        let p = parse("@size n\n@dim A(n)\nC(i) := A(i)\n").unwrap();
        let r: Result<BTreeMap<String, DenseTensor<i64>>> = eval_program(&p, &sizes(&[("n", 3)]), &BTreeMap::new());
        assert!(matches!(r, Err(Error::MissingInput(_))));
        let inputs = BTreeMap::from([("A".to_string(), DenseTensor::<i64>::zeros(vec![4]))]);
        assert!(matches!(eval_program(&p, &sizes(&[("n", 3)]), &inputs), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn tensor_file_round_trip() {
        let t = DenseTensor::from_fn(vec![2, 3], |x| (x[0] * 3 + x[1]) as f64 * 0.5 - 1.0);
        let text = write_tensor("A", &t);
        assert!(text.starts_with("A 2 2 3\n"));
        let (name, back): (String, DenseTensor<f64>) = read_tensor(&text).unwrap();
        assert_eq!(name, "A");
        assert_eq!(back, t);
        let s = DenseTensor::<i64>::from_fn(vec![], |_| 7);
        assert_eq!(read_tensor::<i64>(&write_tensor("s", &s)).unwrap().1, s);
        assert!(read_tensor::<i64>("A 1 3\n1 2\n").is_err());
    }
}
