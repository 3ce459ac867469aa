//! Loop nests from optimized rules.
//!
//! Every product of a rule becomes one [`LoopNest`]: variables are visited
//! in syntactic order, comparisons become loop bounds or let-bindings,
//! and whatever cannot be absorbed stays as a guard. A [`KernelUnit`]
//! groups the compute nests of an output tensor (over its unique set) with
//! the reconstruction nests derived from its redundancy map.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::inference::InferenceContext;
use crate::interp::{eval_dims, DenseTensor, OpCounter, Scalar, Sizes};
use crate::ir::*;
use crate::linear::{implied_by, isolate, Lin};
use crate::optimizer::{canonicalize, inline_program, optimize_rule};

/// A read of an input array or of a hoisted partial product.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Read { tensor: String, args: Vec<String> },
    Temp(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    /// `for var in max(lower) .. min(upper)`, upper bounds exclusive.
    Loop { var: String, lower: Vec<IndexExpr>, upper: Vec<IndexExpr> },
    Let { var: String, value: IndexExpr },
    Guard(Comparison),
    /// Partial product computed once per iteration of the enclosing loops.
    Temp { name: String, operands: Vec<Operand> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stmt {
    /// `target[index] += operands[0] * operands[1] * ...`
    Accumulate { target: String, index: Vec<String>, operands: Vec<Operand> },
    /// `target[index] = target[from]`
    Copy { target: String, index: Vec<String>, from: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopNest {
    pub steps: Vec<Step>,
    pub stmt: Stmt,
}

impl LoopNest {
    pub fn guards(&self) -> impl Iterator<Item = &Comparison> {
        self.steps.iter().filter_map(|s| match s {
            Step::Guard(c) => Some(c),
            _ => None,
        })
    }

    /// Guards evaluated inside some loop.
    pub fn loop_guards(&self) -> impl Iterator<Item = &Comparison> {
        let first = self.steps.iter().position(|s| matches!(s, Step::Loop { .. })).unwrap_or(self.steps.len());
        self.steps[first..].iter().filter_map(|s| match s {
            Step::Guard(c) => Some(c),
            _ => None,
        })
    }

    pub fn loop_vars(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Loop { var, .. } => Some(var.as_str()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorParam {
    pub name: String,
    pub dims: Vec<IndexExpr>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelUnit {
    pub name: String,
    pub inputs: Vec<TensorParam>,
    pub output: TensorParam,
    /// Size constants in declaration order.
    pub sizes: Vec<String>,
    pub compute: Vec<LoopNest>,
    pub reconstruct: Vec<LoopNest>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelOptions {
    pub hoist: bool,
    /// Restrict inputs and output to their unique sets. Off gives the
    /// naive dense kernel.
    pub structured: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { hoist: true, structured: true }
    }
}

// ---------------------------------------------------------------------------
// Variable order and bounds

/// Head variables in head order, then body-only variables in order of
/// first occurrence.
pub fn order_variables(r: &Rule) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in &r.head.args {
        if !out.contains(v) {
            out.push(v.clone());
        }
    }
    for p in &r.body.0 {
        for v in p.ordered_vars() {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out
}

fn bound_of(op: CmpOp, e: IndexExpr) -> Option<(bool, IndexExpr)> {
    // (is_lower, inclusive lower or exclusive upper)
    let one = Lin::constant(1);
    match op {
        CmpOp::Lt => Some((false, e)),
        CmpOp::Le => Some((false, Lin::of(&e).add(&one).to_expr())),
        CmpOp::Ge => Some((true, e)),
        CmpOp::Gt => Some((true, Lin::of(&e).add(&one).to_expr())),
        _ => None,
    }
}

fn lower_cmp(v: &str, e: &IndexExpr) -> Comparison {
    Comparison::new(e.clone(), CmpOp::Le, IndexExpr::var(v))
}

fn upper_cmp(v: &str, e: &IndexExpr) -> Comparison {
    Comparison::new(IndexExpr::var(v), CmpOp::Lt, e.clone())
}

/// Largest (or smallest) value of `l` when each variable ranges over
/// `iv`; `None` when some variable or product term has no usable bound.
fn extreme(l: &Lin, iv: &BTreeMap<String, (IndexExpr, IndexExpr)>, max: bool) -> Option<Lin> {
    let mut out = Lin::constant(l.constant);
    for (t, &c) in &l.terms {
        let want_max = max == (c > 0);
        let v = extreme_atom(t, iv, want_max)?;
        out = out.add(&v.scale(c));
    }
    Some(out)
}

fn extreme_atom(t: &IndexExpr, iv: &BTreeMap<String, (IndexExpr, IndexExpr)>, max: bool) -> Option<Lin> {
    match t {
        IndexExpr::Var(v) => {
            // bounds mention only outer variables, so this terminates
            let (lo, hi) = iv.get(v)?;
            Some(if max {
                extreme(&Lin::of(hi), iv, true)?.sub(&Lin::constant(1))
            } else {
                extreme(&Lin::of(lo), iv, false)?
            })
        }
        IndexExpr::Sym(_) | IndexExpr::Const(_) => Some(Lin::of(t)),
        // products of nonnegative factors only
        IndexExpr::Arith(ArithOp::Mul, a, b) => {
            let (la, lb) = (Lin::of(a), Lin::of(b));
            let lo_a = extreme(&la, iv, false)?;
            let lo_b = extreme(&lb, iv, false)?;
            if lo_a.as_const().map_or(true, |c| c < 0) && !nonneg_syms(&lo_a) {
                return None;
            }
            if lo_b.as_const().map_or(true, |c| c < 0) && !nonneg_syms(&lo_b) {
                return None;
            }
            let (x, y) = (extreme(&la, iv, max)?, extreme(&lb, iv, max)?);
            Some(Lin::of(&IndexExpr::arith(ArithOp::Mul, x.to_expr(), y.to_expr())))
        }
        _ => None,
    }
}

/// Upper bound of a size polynomial, taking every size monomial to be at least 1.
fn sym_upper(l: &Lin) -> Option<i64> {
    let mut k = l.constant;
    for (t, &c) in &l.terms {
        if c > 0 || t.has_vars() {
            return None;
        }
        k += c;
    }
    Some(k)
}

fn nonneg_syms(l: &Lin) -> bool {
    l.constant >= 0 && l.terms.iter().all(|(t, &c)| c > 0 && !t.has_vars())
}

/// Whether `y op e`-style range facts follow from the variable intervals.
fn interval_implies(c: &Comparison, iv: &BTreeMap<String, (IndexExpr, IndexExpr)>) -> bool {
    // lhs - rhs op 0
    let l = Lin::of(&c.lhs).sub(&Lin::of(&c.rhs));
    let check_max = |l: &Lin, strict: bool| {
        extreme(l, iv, true).and_then(|m| sym_upper(&m)).is_some_and(|k| if strict { k < 0 } else { k <= 0 })
    };
    match c.op {
        CmpOp::Lt => check_max(&l, true),
        CmpOp::Le => check_max(&l, false),
        CmpOp::Gt => check_max(&l.scale(-1), true),
        CmpOp::Ge => check_max(&l.scale(-1), false),
        _ => false,
    }
}

struct BoundsBuilder<'a> {
    rule: &'a str,
    hard: Vec<Comparison>,
    used: Vec<bool>,
    enforced: Vec<Comparison>,
    intervals: BTreeMap<String, (IndexExpr, IndexExpr)>,
    bound: BTreeSet<String>,
    steps: Vec<Step>,
}

impl BoundsBuilder<'_> {
    fn candidates(&self, v: &str) -> Vec<usize> {
        (0..self.hard.len())
            .filter(|&i| {
                !self.used[i]
                    && self.hard[i].mentions(v)
                    && self.hard[i].vars().iter().all(|w| w == v || self.bound.contains(w))
            })
            .collect()
    }

    fn implied(&self, c: &Comparison) -> bool {
        implied_by(&self.enforced, c) || interval_implies(c, &self.intervals)
    }

    fn guard(&mut self, c: Comparison) {
        if !self.implied(&c) {
            self.enforced.push(c.clone());
            self.steps.push(Step::Guard(c));
        }
    }

    /// A defining equality for `v` over bound variables.
    fn let_value(&self, v: &str) -> Option<(usize, IndexExpr)> {
        self.candidates(v).into_iter().find_map(|i| match isolate(&self.hard[i], v) {
            Some((CmpOp::Eq, e)) => Some((i, e)),
            _ => None,
        })
    }

    fn place_let(&mut self, v: &str, i: usize, e: IndexExpr, soft: &[Comparison]) {
        self.used[i] = true;
        self.enforced.push(self.hard[i].clone());
        let iv = (extreme(&Lin::of(&e), &self.intervals, false), extreme(&Lin::of(&e), &self.intervals, true));
        if let (Some(lo), Some(hi)) = iv {
            self.intervals.insert(v.to_string(), (lo.to_expr(), hi.add(&Lin::constant(1)).to_expr()));
        }
        self.steps.push(Step::Let { var: v.to_string(), value: e });
        self.bound.insert(v.to_string());
        self.flush_guards(v);
        for c in soft {
            self.guard(c.clone());
        }
    }

    fn place_loop(&mut self, v: &str, soft: &[Comparison]) -> Result<()> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for i in self.candidates(v) {
            if let Some((op, e)) = isolate(&self.hard[i], v) {
                if let Some((is_lower, b)) = bound_of(op, e) {
                    self.used[i] = true;
                    self.enforced.push(self.hard[i].clone());
                    if is_lower { lower.push(b) } else { upper.push(b) }
                }
            }
        }
        for c in soft {
            if self.implied(c) {
                continue;
            }
            if let Some((op, e)) = isolate(c, v) {
                if let Some((is_lower, b)) = bound_of(op, e) {
                    if is_lower { lower.push(b) } else { upper.push(b) }
                    self.enforced.push(c.clone());
                }
            }
        }
        // bounds that only follow through later variables
        let consts: Vec<IndexExpr> = std::iter::once(IndexExpr::Const(0))
            .chain(self.hard.iter().flat_map(|c| [c.lhs.clone(), c.rhs.clone()]).filter(|e| !e.has_vars()))
            .collect();
        if lower.is_empty() {
            lower.extend(consts.iter().find(|e| implied_by(&self.hard, &lower_cmp(v, e))).cloned());
        }
        if upper.is_empty() {
            upper.extend(consts.iter().find(|e| implied_by(&self.hard, &upper_cmp(v, e))).cloned());
        }
        if lower.is_empty() || upper.is_empty() {
            return Err(Error::Unbounded { var: v.to_string(), rule: self.rule.to_string() });
        }
        dedup(&mut lower);
        dedup(&mut upper);
        if let ([lo], [hi]) = (&lower[..], &upper[..]) {
            self.intervals.insert(v.to_string(), (lo.clone(), hi.clone()));
        } else if let Some(hi) = upper.iter().find(|e| !e.has_vars()) {
            self.intervals.insert(v.to_string(), (lower[0].clone(), hi.clone()));
        }
        self.steps.push(Step::Loop { var: v.to_string(), lower, upper });
        self.bound.insert(v.to_string());
        self.flush_guards(v);
        Ok(())
    }

    /// Turns the remaining comparisons whose innermost variable is `v`
    /// into guards.
    fn flush_guards(&mut self, v: &str) {
        for i in self.candidates(v) {
            if self.hard[i].vars().iter().all(|w| self.bound.contains(w)) {
                self.used[i] = true;
                let c = self.hard[i].clone();
                self.guard(c);
            }
        }
    }
}

fn dedup(v: &mut Vec<IndexExpr>) {
    let mut seen = BTreeSet::new();
    v.retain(|e| seen.insert(e.clone()));
}

/// Range facts from declared dimensions: every index of an access (and of
/// the head) lies in `[0, dim)`.
fn dim_facts(p: &Product, head: Option<(&[String], &[IndexExpr])>, dims: &BTreeMap<String, Vec<IndexExpr>>) -> BTreeMap<String, Vec<Comparison>> {
    let mut out: BTreeMap<String, Vec<Comparison>> = BTreeMap::new();
    let mut add = |v: &String, d: &IndexExpr| {
        let e = out.entry(v.clone()).or_default();
        for c in [lower_cmp(v, &IndexExpr::Const(0)), upper_cmp(v, d)] {
            if !e.contains(&c) {
                e.push(c);
            }
        }
    };
    for a in p.accesses() {
        if let Some(d) = dims.get(&a.tensor) {
            let d: Vec<&IndexExpr> = if a.kind == Kind::Redundancy { d.iter().chain(d).collect() } else { d.iter().collect() };
            for (v, e) in a.args.iter().zip(d) {
                add(v, e);
            }
        }
    }
    if let Some((args, d)) = head {
        for (v, e) in args.iter().zip(d) {
            add(v, e);
        }
    }
    out
}

/// Loop nest skeleton (steps only) of one product under `order`.
/// `head` supplies the head variables and their extents, which bound the
/// head variables like an access would.
pub fn compute_bounds(
    rule: &str,
    p: &Product,
    order: &[String],
    head: Option<(&[String], &[IndexExpr])>,
    dims: &BTreeMap<String, Vec<IndexExpr>>,
) -> Result<Vec<Step>> {
    let hard: Vec<Comparison> = p.comparisons().cloned().collect();
    let soft = dim_facts(p, head, dims);
    let mut vars: Vec<String> = order.iter().filter(|v| p.mentions_var(v) || head.is_some_and(|(h, _)| h.contains(v))).cloned().collect();
    for v in p.ordered_vars() {
        if !vars.contains(&v) {
            vars.push(v);
        }
    }
    let mut b = BoundsBuilder {
        rule,
        used: vec![false; hard.len()],
        hard,
        enforced: Vec::new(),
        intervals: BTreeMap::new(),
        bound: BTreeSet::new(),
        steps: Vec::new(),
    };
    // equality-determined variables without range comparisons of their own
    // wait for their defining variables
    let deferrable = |b: &BoundsBuilder, v: &str| {
        let own_range = b.hard.iter().any(|c| c.op != CmpOp::Eq && c.op != CmpOp::Ne && c.mentions(v));
        !own_range && b.hard.iter().enumerate().any(|(i, c)| !b.used[i] && c.op == CmpOp::Eq && matches!(isolate(c, v), Some((CmpOp::Eq, _))))
    };
    let mut pending: Vec<String> = Vec::new();
    let none = Vec::new();
    // deferred variables whose definition became available
    let resolve = |b: &mut BoundsBuilder, pending: &mut Vec<String>| loop {
        let ready = pending.iter().position(|w| b.let_value(w).is_some());
        let Some(k) = ready else { break };
        let w = pending.remove(k);
        let (i, e) = b.let_value(&w).expect("ready");
        b.place_let(&w, i, e, soft.get(&w).unwrap_or(&none));
    };
    for v in &vars {
        if let Some((i, e)) = b.let_value(v) {
            b.place_let(v, i, e, soft.get(v).unwrap_or(&none));
        } else if deferrable(&b, v) {
            pending.push(v.clone());
            continue;
        } else {
            b.place_loop(v, soft.get(v).unwrap_or(&none))?;
        }
        resolve(&mut b, &mut pending);
    }
    // equalities defining each other: loop over the latest deferred
    // variable, usually the narrowest, and solve the rest
    while let Some(w) = pending.pop() {
        b.place_loop(&w, soft.get(&w).unwrap_or(&none))?;
        resolve(&mut b, &mut pending);
    }
    for i in 0..b.hard.len() {
        if !b.used[i] {
            let c = b.hard[i].clone();
            b.guard(c);
        }
    }
    Ok(b.steps)
}

trait MentionsVar {
    fn mentions_var(&self, v: &str) -> bool;
}

impl MentionsVar for Product {
    fn mentions_var(&self, v: &str) -> bool {
        self.0.iter().any(|f| f.mentions(v))
    }
}

// ---------------------------------------------------------------------------
// Hoisting

fn step_deps(s: &Step) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    match s {
        Step::Loop { lower, upper, .. } => lower.iter().chain(upper).for_each(|e| e.collect_vars(&mut out)),
        Step::Let { value, .. } => value.collect_vars(&mut out),
        Step::Guard(c) => out = c.vars(),
        Step::Temp { operands, .. } => operands.iter().for_each(|o| operand_deps(o, &mut out)),
    }
    out
}

fn operand_deps(o: &Operand, out: &mut BTreeSet<String>) {
    match o {
        Operand::Read { args, .. } => out.extend(args.iter().cloned()),
        Operand::Temp(t) => {
            out.insert(t.clone());
        }
    }
}

fn binds(s: &Step) -> Option<&str> {
    match s {
        Step::Loop { var, .. } | Step::Let { var, .. } => Some(var),
        Step::Temp { name, .. } => Some(name),
        Step::Guard(_) => None,
    }
}

/// Moves lets and guards up to the outermost point where their variables
/// are bound.
fn hoist_steps(steps: Vec<Step>) -> Vec<Step> {
    let mut out: Vec<Step> = Vec::new();
    for s in steps {
        if matches!(s, Step::Loop { .. }) {
            out.push(s);
            continue;
        }
        let deps = step_deps(&s);
        let after = out.iter().rposition(|t| binds(t).is_some_and(|b| deps.contains(b)) || matches!(t, Step::Guard(_)) && matches!(s, Step::Guard(_)));
        // keep non-loop steps in their original relative order
        let mut at = after.map_or(0, |k| k + 1);
        while at < out.len() && !matches!(out[at], Step::Loop { .. }) {
            at += 1;
        }
        out.insert(at, s);
    }
    out
}

/// Splits the statement's operands into partial products computed right
/// before the first loop that does not affect them.
fn hoist_operands(steps: &mut Vec<Step>, operands: Vec<Operand>) -> Vec<Operand> {
    let bound_at = |steps: &[Step], o: &Operand| -> Option<usize> {
        let mut deps = BTreeSet::new();
        operand_deps(o, &mut deps);
        steps.iter().rposition(|t| binds(t).is_some_and(|b| deps.contains(b)))
    };
    let last_loop = steps.iter().rposition(|s| matches!(s, Step::Loop { .. }));
    let Some(last_loop) = last_loop else { return operands };
    // group operands by the loop they must be computed inside
    let mut groups: BTreeMap<usize, Vec<Operand>> = BTreeMap::new();
    let mut inner = Vec::new();
    for o in operands {
        let at = bound_at(steps, &o);
        let next_loop = steps
            .iter()
            .enumerate()
            .skip(at.map_or(0, |k| k + 1))
            .find(|(_, s)| matches!(s, Step::Loop { .. }))
            .map(|(k, _)| k);
        match next_loop {
            Some(k) if k <= last_loop && at.map_or(true, |a| a < last_loop) => groups.entry(k).or_default().push(o),
            _ => inner.push(o),
        }
    }
    let mut prev: Option<Operand> = None;
    let mut inserted = 0;
    let mut counter = 0;
    let taken: BTreeSet<String> = steps.iter().filter_map(binds).map(str::to_string).collect();
    for (k, group) in groups {
        let mut ops: Vec<Operand> = prev.take().into_iter().collect();
        ops.extend(group);
        if ops.len() == 1 && matches!(ops[0], Operand::Temp(_)) {
            prev = ops.pop();
            continue;
        }
        let mut name;
        loop {
            name = format!("t{counter}");
            counter += 1;
            if !taken.contains(&name) {
                break;
            }
        }
        steps.insert(k + inserted, Step::Temp { name: name.clone(), operands: ops });
        inserted += 1;
        prev = Some(Operand::Temp(name));
    }
    prev.into_iter().chain(inner).collect()
}

/// Moves guards that only constrain size constants, once let-bound
/// variables are substituted, in front of every loop.
fn hoist_size_guards(steps: Vec<Step>) -> Vec<Step> {
    let mut lets: Vec<(String, IndexExpr)> = Vec::new();
    let (mut front, mut rest) = (Vec::new(), Vec::new());
    for st in steps {
        match &st {
            Step::Let { var, value } => lets.push((var.clone(), value.clone())),
            Step::Guard(c) => {
                let mut g = c.clone();
                for (v, e) in lets.iter().rev() {
                    g = g.replace_var(v, e);
                }
                if g.vars().is_empty() {
                    front.push(Step::Guard(g));
                    continue;
                }
            }
            _ => {}
        }
        rest.push(st);
    }
    front.extend(rest);
    front
}

fn finish_nest(steps: Vec<Step>, stmt: Stmt, hoist: bool) -> LoopNest {
    let steps = hoist_size_guards(steps);
    if !hoist {
        return LoopNest { steps, stmt };
    }
    let mut steps = hoist_steps(steps);
    let stmt = match stmt {
        Stmt::Accumulate { target, index, operands } => {
            let operands = hoist_operands(&mut steps, operands);
            Stmt::Accumulate { target, index, operands }
        }
        s => s,
    };
    LoopNest { steps, stmt }
}

// ---------------------------------------------------------------------------
// Kernels

fn is_dense(info: &StructureInfo) -> bool {
    if !info.redundancy.body.is_empty() {
        return false;
    }
    let (x, _) = StructureInfo::head_vars(info.order());
    let dense = StructureInfo::dense(info.tensor(), info.dims.clone());
    let u = instantiate(&info.unique, &x, &mut x.iter().cloned().collect()).map(|b| canonicalize(&b));
    let d = instantiate(&dense.unique, &x, &mut x.iter().cloned().collect()).map(|b| canonicalize(&b));
    matches!((u, d), (Ok(u), Ok(d)) if u == d)
}

/// Replaces the plain access at `pos` by its compressed form:
/// `T(x) = T:U(x) * T:C(x) + T:R(x, x') * T:C(x')`.
fn expand_access(p: &Product, pos: usize, info: &StructureInfo, avoid: &mut BTreeSet<String>) -> Result<Vec<Product>> {
    let Factor::Access(a) = &p.0[pos] else { unreachable!("access position") };
    let rest: Vec<Factor> = p.0.iter().enumerate().filter(|(k, _)| *k != pos).map(|(_, f)| f.clone()).collect();
    let mut out = Vec::new();
    let u = instantiate(&info.unique, &a.args, avoid)?;
    for q in &u.0 {
        let mut fs = rest.clone();
        fs.push(Factor::Access(Access::new(a.tensor.clone(), Kind::Compressed, a.args.clone())));
        fs.extend(q.0.iter().cloned());
        out.push(Product::new(fs));
    }
    if !info.redundancy.body.is_empty() {
        let primes: Vec<String> = a.args.iter().map(|v| fresh_name(&format!("{v}'"), avoid)).collect();
        avoid.extend(primes.iter().cloned());
        let args: Vec<String> = a.args.iter().chain(&primes).cloned().collect();
        let r = instantiate(&info.redundancy, &args, avoid)?;
        for q in &r.0 {
            let mut fs = rest.clone();
            fs.push(Factor::Access(Access::new(a.tensor.clone(), Kind::Compressed, primes.clone())));
            fs.extend(q.0.iter().cloned());
            out.push(Product::new(fs));
        }
    }
    Ok(out)
}

/// The compute rule of a kernel: inputs read through their compressed
/// form and the output restricted to its unique set.
pub fn compressed_rule(target: &Rule, ctx: &InferenceContext) -> Result<Rule> {
    let mut avoid = target.all_vars();
    let mut products: Vec<Product> = target.body.0.clone();
    loop {
        let found = products.iter().enumerate().find_map(|(k, p)| {
            p.0.iter().enumerate().find_map(|(pos, f)| match f {
                Factor::Access(a) if a.kind == Kind::Plain => ctx.get(&a.tensor).filter(|i| !is_dense(i)).map(|i| (k, pos, i)),
                _ => None,
            })
        });
        let Some((k, pos, info)) = found else { break };
        let expanded = expand_access(&products[k], pos, info, &mut avoid)?;
        products.splice(k..=k, expanded);
    }
    // ranges of accessed indices let the optimizer match digits
    for p in &mut products {
        let mut facts = Vec::new();
        for a in p.accesses() {
            if let Some(d) = ctx.dims.get(&a.tensor) {
                facts.extend(box_factors(&a.args, d));
            }
        }
        p.0.extend(facts);
    }
    let mut body = Body(products);
    if let Some(info) = ctx.get(&target.head.tensor) {
        body = body.mul(&instantiate(&info.unique, &target.head.args, &mut avoid)?);
    }
    Ok(optimize_rule(&Rule::new(target.head.clone(), body)))
}

fn head_dims<'a>(dims: &'a BTreeMap<String, Vec<IndexExpr>>, t: &str) -> Result<&'a [IndexExpr]> {
    dims.get(t).map(Vec::as_slice).ok_or_else(|| Error::Shape(format!("no declared dimensions for `{t}`")))
}

/// Kernel for one target rule whose body reads only inputs.
pub fn build_kernel(p: &Program, target: &Rule, ctx: &InferenceContext, opts: KernelOptions) -> Result<KernelUnit> {
    let out = target.head.tensor.clone();
    let out_dims = head_dims(&p.dims, &out)?.to_vec();
    let rule = if opts.structured { compressed_rule(target, ctx)? } else { target.clone() };
    let order = order_variables(&rule);
    let mut compute = Vec::new();
    for prod in &rule.body.0 {
        if prod.accesses().any(|a| a.kind.is_set()) {
            return Err(Error::Shape(format!("kernel for `{out}` reads a set-valued access")));
        }
        let steps = compute_bounds(&out, prod, &order, Some((&rule.head.args, &out_dims)), &p.dims)?;
        let operands = prod.accesses().map(|a| Operand::Read { tensor: a.tensor.clone(), args: a.args.clone() }).collect();
        let stmt = Stmt::Accumulate { target: out.clone(), index: rule.head.args.clone(), operands };
        compute.push(finish_nest(steps, stmt, opts.hoist));
    }
    let mut reconstruct = Vec::new();
    if opts.structured {
        if let Some(info) = ctx.get(&out) {
            let r = optimize_rule(&info.redundancy);
            let k = info.order();
            let (x, xp) = (&r.head.args[..k], &r.head.args[k..]);
            let order = order_variables(&r);
            let both: Vec<IndexExpr> = out_dims.iter().chain(&out_dims).cloned().collect();
            for prod in &r.body.0 {
                let steps = compute_bounds(&format!("{out}:R"), prod, &order, Some((&r.head.args, &both)), &p.dims)?;
                let stmt = Stmt::Copy { target: out.clone(), index: x.to_vec(), from: xp.to_vec() };
                reconstruct.push(finish_nest(steps, stmt, opts.hoist));
            }
        }
    }
    let mut inputs: Vec<TensorParam> = Vec::new();
    for a in target.body.accesses() {
        if !inputs.iter().any(|t| t.name == a.tensor) {
            inputs.push(TensorParam { name: a.tensor.clone(), dims: head_dims(&p.dims, &a.tensor)?.to_vec() });
        }
    }
    let order_of = |n: &str| p.inputs().iter().position(|i| i == n).unwrap_or(usize::MAX);
    inputs.sort_by_key(|t| order_of(&t.name));
    Ok(KernelUnit {
        name: out.clone(),
        inputs,
        output: TensorParam { name: out, dims: out_dims },
        sizes: p.sizes.clone(),
        compute,
        reconstruct,
    })
}

/// One kernel per output of `p`, after inlining every intermediate.
pub fn build_program(p: &Program, ctx: &InferenceContext, opts: KernelOptions) -> Result<Vec<KernelUnit>> {
    let outputs = p.outputs();
    let keep: BTreeSet<String> = outputs.iter().cloned().collect();
    let inlined = inline_program(p, &keep)?;
    outputs
        .iter()
        .filter_map(|o| inlined.rule(o, Kind::Plain))
        .map(|r| build_kernel(&inlined, r, ctx, opts))
        .collect()
}

// ---------------------------------------------------------------------------
// Evaluation

enum CExpr {
    Slot(usize),
    Const(i64),
    Bin(ArithOp, Box<CExpr>, Box<CExpr>),
}

impl CExpr {
    fn eval(&self, env: &[i64]) -> i64 {
        match self {
            CExpr::Slot(s) => env[*s],
            CExpr::Const(c) => *c,
            CExpr::Bin(op, a, b) => op.apply(a.eval(env), b.eval(env)).unwrap_or(0),
        }
    }
}

enum COp {
    Read { tensor: usize, slots: Vec<usize> },
    Temp(usize),
}

enum CStep {
    Loop { slot: usize, lower: Vec<CExpr>, upper: Vec<CExpr> },
    Let { slot: usize, value: CExpr },
    Guard { lhs: CExpr, op: CmpOp, rhs: CExpr },
    Temp { temp: usize, ops: Vec<COp> },
}

enum CStmt {
    Acc { index: Vec<usize>, ops: Vec<COp> },
    Copy { index: Vec<usize>, from: Vec<usize> },
}

struct Compiled {
    steps: Vec<CStep>,
    stmt: CStmt,
    slots: usize,
    temps: usize,
}

struct Compiler<'a> {
    sizes: &'a Sizes,
    slots: BTreeMap<String, usize>,
    temps: BTreeMap<String, usize>,
    tensors: &'a [String],
}

impl Compiler<'_> {
    fn slot(&mut self, v: &str) -> usize {
        let n = self.slots.len();
        *self.slots.entry(v.to_string()).or_insert(n)
    }

    fn expr(&mut self, e: &IndexExpr) -> Result<CExpr> {
        Ok(match e {
            IndexExpr::Var(v) => CExpr::Slot(self.slot(v)),
            IndexExpr::Sym(s) => CExpr::Const(*self.sizes.get(s).ok_or_else(|| Error::UnboundSize(s.clone()))?),
            IndexExpr::Const(c) => CExpr::Const(*c),
            IndexExpr::Arith(op, a, b) => CExpr::Bin(*op, Box::new(self.expr(a)?), Box::new(self.expr(b)?)),
        })
    }

    fn operand(&mut self, o: &Operand) -> Result<COp> {
        Ok(match o {
            Operand::Read { tensor, args } => COp::Read {
                tensor: self.tensors.iter().position(|t| t == tensor).ok_or_else(|| Error::MissingInput(tensor.clone()))?,
                slots: args.iter().map(|a| self.slot(a)).collect(),
            },
            Operand::Temp(t) => COp::Temp(self.temps[t]),
        })
    }

    fn compile(mut self, n: &LoopNest) -> Result<Compiled> {
        let mut steps = Vec::new();
        for s in &n.steps {
            steps.push(match s {
                Step::Loop { var, lower, upper } => CStep::Loop {
                    lower: lower.iter().map(|e| self.expr(e)).collect::<Result<_>>()?,
                    upper: upper.iter().map(|e| self.expr(e)).collect::<Result<_>>()?,
                    slot: self.slot(var),
                },
                Step::Let { var, value } => CStep::Let { value: self.expr(value)?, slot: self.slot(var) },
                Step::Guard(c) => CStep::Guard { lhs: self.expr(&c.lhs)?, op: c.op, rhs: self.expr(&c.rhs)? },
                Step::Temp { name, operands } => {
                    let ops = operands.iter().map(|o| self.operand(o)).collect::<Result<_>>()?;
                    let k = self.temps.len();
                    self.temps.insert(name.clone(), k);
                    CStep::Temp { temp: k, ops }
                }
            });
        }
        let stmt = match &n.stmt {
            Stmt::Accumulate { index, operands, .. } => CStmt::Acc {
                index: index.iter().map(|v| self.slot(v)).collect(),
                ops: operands.iter().map(|o| self.operand(o)).collect::<Result<_>>()?,
            },
            Stmt::Copy { index, from, .. } => CStmt::Copy {
                index: index.iter().map(|v| self.slot(v)).collect(),
                from: from.iter().map(|v| self.slot(v)).collect(),
            },
        };
        Ok(Compiled { steps, stmt, slots: self.slots.len(), temps: self.temps.len() })
    }
}

fn offset(dims: &[usize], env: &[i64], slots: &[usize]) -> Option<usize> {
    let mut o = 0usize;
    for (d, s) in dims.iter().zip(slots) {
        let i = env[*s];
        if i < 0 || i as usize >= *d {
            return None;
        }
        o = o * d + i as usize;
    }
    Some(o)
}

struct Machine<'a, S> {
    code: &'a Compiled,
    inputs: &'a [&'a DenseTensor<S>],
    out: &'a mut DenseTensor<S>,
    env: Vec<i64>,
    temps: Vec<S>,
    counter: OpCounter,
    /// Count iterations only, with innermost loops summed in closed form.
    count_only: bool,
}

impl<S: Scalar> Machine<'_, S> {
    fn product(&mut self, ops: &[COp]) -> S {
        let mut v = S::one();
        for (k, o) in ops.iter().enumerate() {
            let x = match o {
                COp::Read { tensor, slots } => {
                    let t = self.inputs[*tensor];
                    offset(&t.dims, &self.env, slots).map_or(S::zero(), |i| t.data[i])
                }
                COp::Temp(t) => self.temps[*t],
            };
            v = if k == 0 { x } else { v * x };
        }
        self.counter.mults += ops.len().saturating_sub(1) as u64;
        v
    }

    fn run(&mut self, at: usize) {
        let code = self.code;
        let Some(step) = code.steps.get(at) else {
            self.body();
            return;
        };
        match step {
            CStep::Loop { slot, lower, upper } => {
                let lo = lower.iter().map(|e| e.eval(&self.env)).max().unwrap_or(0);
                let hi = upper.iter().map(|e| e.eval(&self.env)).min().unwrap_or(0);
                if self.count_only && code.steps[at + 1..].iter().all(|s| matches!(s, CStep::Let { .. })) {
                    self.counter.iters += (hi - lo).max(0) as u64;
                    return;
                }
                for i in lo..hi {
                    self.env[*slot] = i;
                    self.run(at + 1);
                }
            }
            CStep::Let { slot, value } => {
                self.env[*slot] = value.eval(&self.env);
                self.run(at + 1);
            }
            CStep::Guard { lhs, op, rhs } => {
                if op.holds(lhs.eval(&self.env), rhs.eval(&self.env)) {
                    self.run(at + 1);
                }
            }
            CStep::Temp { temp, ops } => {
                if !self.count_only {
                    self.temps[*temp] = self.product(ops);
                }
                self.run(at + 1);
            }
        }
    }

    fn body(&mut self) {
        self.counter.iters += 1;
        if self.count_only {
            return;
        }
        let code = self.code;
        match &code.stmt {
            CStmt::Acc { index, ops } => {
                let v = self.product(ops);
                if let Some(o) = offset(&self.out.dims.clone(), &self.env, index) {
                    self.out.data[o] = self.out.data[o] + v;
                    self.counter.adds += 1;
                }
            }
            CStmt::Copy { index, from } => {
                let dims = self.out.dims.clone();
                if let (Some(o), Some(f)) = (offset(&dims, &self.env, index), offset(&dims, &self.env, from)) {
                    self.out.data[o] = self.out.data[f];
                }
            }
        }
    }
}

fn exec_nest<S: Scalar>(n: &LoopNest, sizes: &Sizes, names: &[String], inputs: &[&DenseTensor<S>], out: &mut DenseTensor<S>, count_only: bool) -> Result<OpCounter> {
    let c = Compiler { sizes, slots: BTreeMap::new(), temps: BTreeMap::new(), tensors: names };
    let code = c.compile(n)?;
    let mut m = Machine {
        code: &code,
        inputs,
        out,
        env: vec![0; code.slots],
        temps: vec![S::zero(); code.temps],
        counter: OpCounter::default(),
        count_only,
    };
    m.run(0);
    Ok(m.counter)
}

/// Runs the compute nests on a zeroed output, then the reconstruction
/// nests.
pub fn run_kernel<S: Scalar>(k: &KernelUnit, sizes: &Sizes, inputs: &BTreeMap<String, DenseTensor<S>>) -> Result<(DenseTensor<S>, OpCounter)> {
    let names: Vec<String> = k.inputs.iter().map(|t| t.name.clone()).collect();
    let mut ins = Vec::new();
    for t in &k.inputs {
        let v = inputs.get(&t.name).ok_or_else(|| Error::MissingInput(t.name.clone()))?;
        let want = eval_dims(&t.dims, sizes)?;
        if want != v.dims {
            return Err(Error::DimensionMismatch { tensor: t.name.clone(), expected: want, found: v.dims.clone() });
        }
        ins.push(v);
    }
    let mut out = DenseTensor::zeros(eval_dims(&k.output.dims, sizes)?);
    let mut total = OpCounter::default();
    for n in &k.compute {
        total += exec_nest(n, sizes, &names, &ins, &mut out, false)?;
    }
    for n in &k.reconstruct {
        exec_nest(n, sizes, &names, &ins, &mut out, false)?;
    }
    Ok((out, total))
}

/// Number of statement executions of a nest, without touching data.
pub fn count_points(n: &LoopNest, sizes: &Sizes) -> Result<u64> {
    let names: Vec<String> = Vec::new();
    let mut out: DenseTensor<i64> = DenseTensor::zeros(vec![]);
    let n = LoopNest { steps: n.steps.iter().filter(|s| !matches!(s, Step::Temp { .. })).cloned().collect(), stmt: n.stmt.clone() };
    let n = match n.stmt {
        Stmt::Accumulate { target, index, .. } => LoopNest { steps: n.steps, stmt: Stmt::Accumulate { target, index, operands: vec![] } },
        s => LoopNest { steps: n.steps, stmt: s },
    };
    Ok(exec_nest(&n, sizes, &names, &[], &mut out, true)?.iters)
}

/// Size of the set denoted by `r` (products taken as disjoint), counted
/// over loop bounds without enumerating the innermost loop.
pub fn count_set(r: &Rule, dims: &BTreeMap<String, Vec<IndexExpr>>, sizes: &Sizes) -> Result<u64> {
    let r = optimize_rule(r);
    let head_dims = dims.get(&r.head.tensor).cloned();
    let order = order_variables(&r);
    let mut total = 0;
    for p in &r.body.0 {
        let head = head_dims.as_ref().map(|d| (r.head.args.as_slice(), d.as_slice()));
        let steps = compute_bounds(&r.head.tensor, p, &order, head, dims)?;
        let stmt = Stmt::Accumulate { target: r.head.tensor.clone(), index: r.head.args.clone(), operands: vec![] };
        total += count_points(&LoopNest { steps, stmt }, sizes)?;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// C rendering

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemType {
    Int,
    Float,
}

impl ElemType {
    pub fn c_name(self) -> &'static str {
        match self {
            ElemType::Int => "int64_t",
            ElemType::Float => "double",
        }
    }
}

pub fn c_ident(v: &str) -> String {
    let mut s = String::new();
    for ch in v.chars() {
        match ch {
            '\'' => s.push_str("_p"),
            '%' => s.push_str("v_"),
            c if c.is_ascii_alphanumeric() || c == '_' => s.push(c),
            _ => s.push('_'),
        }
    }
    s
}

fn c_expr(e: &IndexExpr) -> String {
    match e {
        IndexExpr::Var(v) => c_ident(v),
        IndexExpr::Sym(s) => c_ident(s),
        IndexExpr::Const(c) if *c < 0 => format!("({c})"),
        IndexExpr::Const(c) => c.to_string(),
        IndexExpr::Arith(ArithOp::Div, a, b) => format!("st_div({}, {})", c_expr(a), c_expr(b)),
        IndexExpr::Arith(ArithOp::Mod, a, b) => format!("st_mod({}, {})", c_expr(a), c_expr(b)),
        IndexExpr::Arith(op, a, b) => format!("({} {} {})", c_expr(a), op.symbol(), c_expr(b)),
    }
}

fn c_flat(name: &str, dims: &[IndexExpr], args: &[String]) -> String {
    let mut idx = String::new();
    for (k, a) in args.iter().enumerate() {
        if k == 0 {
            idx = c_ident(a);
        } else {
            idx = format!("({idx}) * {} + {}", c_expr(&dims[k]), c_ident(a));
        }
    }
    if args.is_empty() {
        idx = "0".into();
    }
    format!("{}[{idx}]", c_ident(name))
}

fn c_bound(es: &[IndexExpr], f: &str) -> String {
    let mut it = es.iter().map(c_expr);
    let first = it.next().unwrap_or_else(|| "0".into());
    it.fold(first, |acc, e| format!("{f}({acc}, {e})"))
}

fn c_operand(o: &Operand, k: &KernelUnit) -> String {
    match o {
        Operand::Temp(t) => t.clone(),
        Operand::Read { tensor, args } => {
            let dims = k.inputs.iter().find(|t| &t.name == tensor).map(|t| t.dims.as_slice()).unwrap_or(&[]);
            c_flat(tensor, dims, args)
        }
    }
}

fn render_nest(out: &mut String, n: &LoopNest, k: &KernelUnit, ty: ElemType) {
    let mut depth = 1;
    let pad = |d: usize| "    ".repeat(d);
    for s in &n.steps {
        match s {
            Step::Loop { var, lower, upper } => {
                let v = c_ident(var);
                let _ = writeln!(out, "{}for (int64_t {v} = {}; {v} < {}; ++{v}) {{", pad(depth), c_bound(lower, "st_max"), c_bound(upper, "st_min"));
                depth += 1;
            }
            Step::Let { var, value } => {
                let _ = writeln!(out, "{}const int64_t {} = {};", pad(depth), c_ident(var), c_expr(value));
            }
            Step::Guard(c) => {
                let op = match c.op {
                    CmpOp::Eq => "==",
                    o => o.symbol(),
                };
                let _ = writeln!(out, "{}if ({} {op} {}) {{", pad(depth), c_expr(&c.lhs), c_expr(&c.rhs));
                depth += 1;
            }
            Step::Temp { name, operands } => {
                let e: Vec<String> = operands.iter().map(|o| c_operand(o, k)).collect();
                let _ = writeln!(out, "{}const {} {name} = {};", pad(depth), ty.c_name(), e.join(" * "));
            }
        }
    }
    let o = &k.output;
    match &n.stmt {
        Stmt::Accumulate { index, operands, .. } => {
            let e: Vec<String> = operands.iter().map(|x| c_operand(x, k)).collect();
            let rhs = if e.is_empty() { "1".to_string() } else { e.join(" * ") };
            let _ = writeln!(out, "{}{} += {rhs};", pad(depth), c_flat(&o.name, &o.dims, index));
        }
        Stmt::Copy { index, from, .. } => {
            let _ = writeln!(out, "{}{} = {};", pad(depth), c_flat(&o.name, &o.dims, index), c_flat(&o.name, &o.dims, from));
        }
    }
    while depth > 1 {
        depth -= 1;
        let _ = writeln!(out, "{}}}", pad(depth));
    }
}

const PRELUDE: &str = "#include <stdint.h>

static inline int64_t st_max(int64_t a, int64_t b) { return a > b ? a : b; }
static inline int64_t st_min(int64_t a, int64_t b) { return a < b ? a : b; }
static inline int64_t st_div(int64_t a, int64_t b) { int64_t q = a / b; return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q; }
static inline int64_t st_mod(int64_t a, int64_t b) { return a - st_div(a, b) * b; }
";

/// Parameter list shared by the compute function: inputs, output, sizes.
pub fn compute_signature(k: &KernelUnit, ty: ElemType) -> String {
    let t = ty.c_name();
    let mut ps: Vec<String> = k.inputs.iter().map(|i| format!("const {t} *{}", c_ident(&i.name))).collect();
    ps.push(format!("{t} *{}", c_ident(&k.output.name)));
    ps.extend(k.sizes.iter().map(|s| format!("int64_t {}", c_ident(s))));
    format!("void {}_compute({})", c_ident(&k.name), ps.join(", "))
}

pub fn reconstruct_signature(k: &KernelUnit, ty: ElemType) -> String {
    let mut ps = vec![format!("{} *{}", ty.c_name(), c_ident(&k.output.name))];
    ps.extend(k.sizes.iter().map(|s| format!("int64_t {}", c_ident(s))));
    format!("void {}_reconstruct({})", c_ident(&k.name), ps.join(", "))
}

/// C source for a set of kernels.
pub fn render(kernels: &[KernelUnit], ty: ElemType) -> String {
    let mut out = String::from(PRELUDE);
    for k in kernels {
        let total = k.output.dims.iter().map(c_expr).collect::<Vec<_>>();
        let total = if total.is_empty() { "1".to_string() } else { total.join(" * ") };
        let _ = writeln!(out, "\n{} {{", compute_signature(k, ty));
        let _ = writeln!(out, "    for (int64_t z = 0; z < {total}; ++z) {}[z] = 0;", c_ident(&k.output.name));
        for n in &k.compute {
            render_nest(&mut out, n, k, ty);
        }
        out.push_str("}\n");
        let _ = writeln!(out, "\n{} {{", reconstruct_signature(k, ty));
        for n in &k.reconstruct {
            render_nest(&mut out, n, k, ty);
        }
        out.push_str("}\n");
    }
    out
}
