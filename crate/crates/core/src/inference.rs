//! Unique-set and redundancy-map inference.
//!
//! Every plain rule of a (binarized) program gets a [`StructureInfo`]
//! computed from the structures of the tensors it reads. Special cases are
//! tried before general ones; see [`Case`].

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;

use crate::ir::*;
use crate::linear::{isolate, Lin};
use crate::optimizer::{canonicalize, optimize_rule, simplify_body, Semantics};
use crate::{Error, Result};

/// Which inference case produced a structure, in priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Case {
    /// `M(y1) * M(y2) * ...` over disjoint variables.
    SelfPower,
    /// Product of accesses over pairwise disjoint variables.
    DisjointProduct,
    /// A single access whose indices are a permutation of the head.
    Relabel,
    /// `M(x) + V(x)` with equal structures.
    EqualAddition,
    /// `M(x) + V(y) * (y = x - d)` with `d = dims(M)`.
    DirectSum,
    /// A body made only of constant ranges `b <= x < c`.
    ConstantRange,
    GeneralProduct,
    GeneralAddition,
    Projection,
    /// Full box of the declared dimensions.
    Default,
}

/// Structures known so far, by tensor name.
#[derive(Clone, Debug, Default)]
pub struct InferenceContext {
    pub structures: BTreeMap<String, StructureInfo>,
    pub dims: BTreeMap<String, Vec<IndexExpr>>,
    pub cases: BTreeMap<String, Case>,
    /// Defining rules with earlier definitions substituted in.
    pub definitions: BTreeMap<String, Rule>,
}

impl InferenceContext {
    pub fn new(dims: BTreeMap<String, Vec<IndexExpr>>) -> Self {
        InferenceContext { dims, ..Default::default() }
    }

    pub fn get(&self, tensor: &str) -> Option<&StructureInfo> {
        self.structures.get(tensor)
    }

    pub fn insert(&mut self, info: StructureInfo) {
        self.dims.insert(info.tensor().to_string(), info.dims.clone());
        self.structures.insert(info.tensor().to_string(), info);
    }

    /// The unique-set and redundancy-map rules of `tensors`, in order.
    pub fn rules_for(&self, tensors: &[String]) -> Vec<Rule> {
        let mut out = Vec::new();
        for t in tensors {
            if let Some(s) = self.structures.get(t) {
                out.push(s.unique.clone());
                out.push(s.redundancy.clone());
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Binarization

fn fresh_tensor(taken: &mut BTreeSet<String>) -> String {
    let n = fresh_name("%b", taken);
    taken.insert(n.clone());
    n
}

fn distinct(args: &[String]) -> bool {
    args.iter().collect::<BTreeSet<_>>().len() == args.len()
}

/// Whether every variable occurs in exactly one access position.
fn disjoint_accesses(accs: &[&Access]) -> bool {
    let all: Vec<String> = accs.iter().flat_map(|a| a.args.iter().cloned()).collect();
    distinct(&all)
}

fn is_self_power(accs: &[&Access]) -> bool {
    accs.len() >= 2
        && accs.iter().all(|a| a.same_target(accs[0]) && !a.kind.is_set())
        && disjoint_accesses(accs)
}

fn push_product(head: Access, p: Product, taken: &mut BTreeSet<String>, out: &mut Vec<Rule>) {
    let extra: Vec<String> = p.ordered_vars().into_iter().filter(|v| !head.args.contains(v)).collect();
    let accs: Vec<&Access> = p.accesses().collect();
    if !extra.is_empty() {
        if accs.len() == 1 && p.comparisons().next().is_none() {
            out.push(Rule::new(head, Body(vec![p])));
            return;
        }
        let mut args = head.args.clone();
        args.extend(extra);
        let inner = Access::plain(fresh_tensor(taken), args);
        push_product(inner.clone(), p, taken, out);
        out.push(Rule::new(head, Body::single(vec![Factor::Access(inner)])));
        return;
    }
    if accs.len() <= 2 || is_self_power(&accs) {
        out.push(Rule::new(head, Body(vec![p])));
        return;
    }
    let mut args = accs[0].args.clone();
    for v in &accs[1].args {
        if !args.contains(v) {
            args.push(v.clone());
        }
    }
    let pair = Access::plain(fresh_tensor(taken), args);
    out.push(Rule::new(
        pair.clone(),
        Body::single(vec![Factor::Access(accs[0].clone()), Factor::Access(accs[1].clone())]),
    ));
    let mut rest = vec![Factor::Access(pair)];
    rest.extend(accs[2..].iter().map(|a| Factor::Access((*a).clone())));
    rest.extend(p.comparisons().cloned().map(Factor::Cmp));
    push_product(head, Product(rest), taken, out);
}

/// Splits rules so that every plain body is a product of at most two
/// accesses (or a self-power), a sum of two single accesses, a direct sum,
/// or a projection of one access. Intermediates are named `%b0, %b1, ...`.
pub fn binarize(p: &Program) -> Program {
    let mut taken: BTreeSet<String> = p.rules.iter().map(|r| r.head.tensor.clone()).collect();
    taken.extend(p.dims.keys().cloned());
    for r in &p.rules {
        taken.extend(r.body.accesses().map(|a| a.tensor.clone()));
    }
    let mut rules = Vec::new();
    for r in &p.rules {
        if r.head.kind != Kind::Plain || r.body.0.len() < 2 {
            match r.body.0.first() {
                Some(prod) if r.head.kind == Kind::Plain => push_product(r.head.clone(), prod.clone(), &mut taken, &mut rules),
                _ => rules.push(r.clone()),
            }
            continue;
        }
        if r.body.0.len() == 2 && direct_sum_parts(r).is_some() {
            rules.push(r.clone());
            continue;
        }
        let x = &r.head.args;
        let mut terms = Vec::new();
        for prod in &r.body.0 {
            let accs: Vec<&Access> = prod.accesses().collect();
            if accs.len() == 1 && prod.0.len() == 1 && &accs[0].args == x {
                terms.push(accs[0].clone());
            } else {
                let t = Access::plain(fresh_tensor(&mut taken), x.clone());
                push_product(t.clone(), prod.clone(), &mut taken, &mut rules);
                terms.push(t);
            }
        }
        let mut acc = terms[0].clone();
        for (n, t) in terms.iter().enumerate().skip(1) {
            let target = if n + 1 == terms.len() {
                r.head.clone()
            } else {
                Access::plain(fresh_tensor(&mut taken), x.clone())
            };
            rules.push(Rule::new(
                target.clone(),
                Body(vec![Product(vec![Factor::Access(acc)]), Product(vec![Factor::Access(t.clone())])]),
            ));
            acc = target;
        }
    }
    Program { sizes: p.sizes.clone(), dims: p.dims.clone(), rules }
}

// ---------------------------------------------------------------------------
// Shape matching

/// `M(x) + V(y) * (y = x - d)`: returns (M, V, per-position offsets).
fn direct_sum_parts(r: &Rule) -> Option<(Access, Access, Vec<Lin>)> {
    let x = &r.head.args;
    let [p1, p2] = &r.body.0[..] else { return None };
    for (a, b) in [(p1, p2), (p2, p1)] {
        let [Factor::Access(m)] = &a.0[..] else { continue };
        if &m.args != x || m.kind.is_set() {
            continue;
        }
        let accs: Vec<&Access> = b.accesses().collect();
        let cmps: Vec<&Comparison> = b.comparisons().collect();
        let [v] = accs[..] else { continue };
        if v.kind.is_set() || v.args.len() != x.len() || !distinct(&v.args) || cmps.len() != x.len() {
            continue;
        }
        if v.args.iter().any(|y| x.contains(y)) {
            continue;
        }
        let mut offsets = Vec::new();
        for (y, xv) in v.args.iter().zip(x) {
            let found = cmps.iter().find_map(|c| {
                let (CmpOp::Eq, e) = isolate(c, y)? else { return None };
                let l = Lin::of(&e).sub(&Lin::of(&IndexExpr::var(xv.clone())));
                let d = l.scale(-1);
                (!d.has_vars()).then_some(d)
            });
            match found {
                Some(d) => offsets.push(d),
                None => break,
            }
        }
        if offsets.len() == x.len() {
            return Some((m.clone(), v.clone(), offsets));
        }
    }
    None
}

/// Inclusive lower and exclusive upper bounds per head variable when the
/// body is only constant ranges.
fn constant_ranges(p: &Product, x: &[String]) -> Option<Vec<(Lin, Lin)>> {
    if p.accesses().next().is_some() {
        return None;
    }
    let mut lo: Vec<Option<Lin>> = vec![None; x.len()];
    let mut hi: Vec<Option<Lin>> = vec![None; x.len()];
    for c in p.comparisons() {
        let vars = c.vars();
        if vars.len() != 1 {
            return None;
        }
        let v = vars.into_iter().next()?;
        let pos = x.iter().position(|h| *h == v)?;
        let (op, e) = isolate(c, &v)?;
        let e = Lin::of(&e);
        if e.has_vars() {
            return None;
        }
        let one = Lin::constant(1);
        let (l, h) = match op {
            CmpOp::Lt => (None, Some(e)),
            CmpOp::Le => (None, Some(e.add(&one))),
            CmpOp::Gt => (Some(e.add(&one)), None),
            CmpOp::Ge => (Some(e), None),
            CmpOp::Eq => (Some(e.clone()), Some(e.add(&one))),
            CmpOp::Ne => return None,
        };
        for (slot, val) in [(&mut lo[pos], l), (&mut hi[pos], h)] {
            if let Some(val) = val {
                if slot.is_some() {
                    return None;
                }
                *slot = Some(val);
            }
        }
    }
    lo.into_iter().zip(hi).map(|(l, h)| Some((l?, h?))).collect()
}

// ---------------------------------------------------------------------------
// Body construction helpers

fn var(v: &str) -> IndexExpr {
    IndexExpr::var(v.to_string())
}

fn eqs(a: &[String], b: &[String]) -> Vec<Factor> {
    a.iter().zip(b).map(|(u, v)| Factor::cmp(var(u), CmpOp::Eq, var(v))).collect()
}

/// Lexicographic `a < b` (or `a <= b`) as a disjoint sum of products.
fn lex(a: &[String], b: &[String], strict: bool) -> Body {
    let mut out = Vec::new();
    for p in 0..a.len() {
        let op = if p + 1 == a.len() && !strict { CmpOp::Le } else { CmpOp::Lt };
        let mut f = eqs(&a[..p], &b[..p]);
        f.push(Factor::cmp(var(&a[p]), op, var(&b[p])));
        out.push(Product(f));
    }
    Body(out)
}

fn negated(c: &Comparison) -> Vec<Comparison> {
    let mk = |op| Comparison::new(c.lhs.clone(), op, c.rhs.clone());
    match c.op {
        CmpOp::Eq => vec![mk(CmpOp::Lt), mk(CmpOp::Gt)],
        CmpOp::Ne => vec![mk(CmpOp::Eq)],
        CmpOp::Lt => vec![mk(CmpOp::Ge)],
        CmpOp::Le => vec![mk(CmpOp::Gt)],
        CmpOp::Gt => vec![mk(CmpOp::Le)],
        CmpOp::Ge => vec![mk(CmpOp::Lt)],
    }
}

/// The complement of a conjunction as a disjoint sum.
fn negate_conjunction(cs: &[Comparison]) -> Body {
    let mut out = Vec::new();
    for (p, c) in cs.iter().enumerate() {
        for alt in negated(c) {
            let mut f: Vec<Factor> = cs[..p].iter().cloned().map(Factor::Cmp).collect();
            f.push(Factor::Cmp(alt));
            out.push(Product(f));
        }
    }
    Body(out)
}

fn cmp_factors(cs: &[Comparison]) -> Vec<Factor> {
    cs.iter().cloned().map(Factor::Cmp).collect()
}

struct Scope<'a> {
    ctx: &'a InferenceContext,
    avoid: BTreeSet<String>,
    x: Vec<String>,
    xp: Vec<String>,
}

impl<'a> Scope<'a> {
    fn info(&self, a: &Access) -> Result<&'a StructureInfo> {
        self.ctx.structures.get(&a.tensor).ok_or_else(|| Error::InferenceOrder(a.tensor.clone()))
    }

    fn prime(&self, v: &str) -> String {
        let pos = self.x.iter().position(|h| h == v).expect("head variable");
        self.xp[pos].clone()
    }

    fn primes(&self, vs: &[String]) -> Vec<String> {
        vs.iter().map(|v| self.prime(v)).collect()
    }

    fn fresh(&mut self, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| {
                let v = fresh_name("u", &self.avoid);
                self.avoid.insert(v.clone());
                v
            })
            .collect()
    }

    fn unique(&mut self, a: &Access, args: &[String]) -> Result<Body> {
        let info = self.info(a)?;
        instantiate(&info.unique, args, &mut self.avoid)
    }

    fn has_redundancy(&self, a: &Access) -> Result<bool> {
        Ok(a.kind != Kind::Compressed && !self.info(a)?.redundancy.body.is_empty())
    }

    fn redundancy(&mut self, a: &Access, args: &[String], primed: &[String]) -> Result<Body> {
        if !self.has_redundancy(a)? {
            return Ok(Body::empty());
        }
        let info = self.info(a)?;
        let mut all = args.to_vec();
        all.extend(primed.iter().cloned());
        instantiate(&info.redundancy, &all, &mut self.avoid)
    }

    /// `M(y)` maps to `u`: `M_U(y) * (u = y)` if `unique`, else `M_R(y, u)`.
    fn maps_to(&mut self, a: &Access, y: &[String], u: &[String], unique: bool) -> Result<Body> {
        if unique {
            Ok(self.unique(a, y)?.mul_factors(&eqs(u, y)))
        } else {
            self.redundancy(a, y, u)
        }
    }

    /// Non-zero positions of an access: its unique set plus the domain of
    /// its redundancy map.
    fn support(&mut self, a: &Access) -> Result<Body> {
        match a.kind {
            Kind::Unique => self.unique(a, &a.args),
            Kind::Redundancy => {
                let info = self.info(a)?;
                instantiate(&info.redundancy, &a.args, &mut self.avoid)
            }
            _ => {
                let mut b = self.unique(a, &a.args)?;
                if self.has_redundancy(a)? {
                    let u = self.fresh(a.args.len());
                    b = b.add(&self.redundancy(a, &a.args, &u)?);
                }
                Ok(b)
            }
        }
    }

    fn product_support(&mut self, p: &Product) -> Result<Body> {
        let mut b = Body::single(cmp_factors(&p.comparisons().cloned().collect::<Vec<_>>()));
        for a in p.accesses() {
            b = b.mul(&self.support(a)?);
        }
        Ok(b)
    }

    /// Restricts a product structure to the comparisons `phi`: positions
    /// whose representative falls outside `phi` become unique.
    fn restrict(&self, u: Body, r: Body, phi: &[Comparison], free: &[String]) -> (Body, Body) {
        let mut r = r;
        let map: BTreeMap<String, String> = self.x.iter().cloned().zip(self.xp.iter().cloned()).collect();
        if !r.is_empty() {
            // a variable defined by phi follows its definition, others stay put
            for w in free {
                let def = phi.iter().find_map(|c| match isolate(c, w) {
                    Some((CmpOp::Eq, e)) if !free.iter().any(|f| e.mentions(f)) => Some(e),
                    _ => None,
                });
                let wp = IndexExpr::var(self.prime(w));
                let f = match def {
                    Some(e) => Factor::cmp(wp, CmpOp::Eq, e.rename(&map)),
                    None => Factor::cmp(wp, CmpOp::Eq, IndexExpr::var(w.clone())),
                };
                r = r.mul_factors(&[f]);
            }
        }
        if phi.is_empty() {
            return (u, r);
        }
        let phi_p: Vec<Comparison> = phi.iter().map(|c| c.rename(&map)).collect();
        let here = cmp_factors(phi);
        let mut unique = u.mul_factors(&here);
        if !r.is_empty() {
            let r_here = r.mul_factors(&here);
            unique = unique.add(&r_here.mul(&negate_conjunction(&phi_p)));
            r = r_here.mul_factors(&cmp_factors(&phi_p));
        }
        (unique, r)
    }

    fn self_power(&mut self, accs: &[&Access]) -> Result<(Body, Body)> {
        let m = accs[0];
        let ys: Vec<Vec<String>> = accs.iter().map(|a| a.args.clone()).collect();
        let mut u = Body::unit();
        for y in &ys {
            u = u.mul(&self.unique(m, y)?);
        }
        for w in ys.windows(2) {
            u = u.mul(&lex(&w[0], &w[1], false));
        }
        let with_r = self.has_redundancy(m)?;
        let n = ys.len();
        let mut r = Body::empty();
        for sigma in (0..n).permutations(n) {
            let identity = sigma.iter().enumerate().all(|(a, s)| a == *s);
            let mut order = Body::unit();
            for a in 0..n.saturating_sub(1) {
                let (lhs, rhs) = (self.primes(&ys[a]), self.primes(&ys[a + 1]));
                order = order.mul(&lex(&lhs, &rhs, sigma[a] > sigma[a + 1]));
            }
            let choices: Vec<Vec<bool>> = if with_r {
                (0..n).map(|_| [true, false]).multi_cartesian_product().map(|c| c.to_vec()).collect()
            } else {
                vec![vec![true; n]]
            };
            for choice in choices {
                if identity && choice.iter().all(|c| *c) {
                    continue;
                }
                let mut term = order.clone();
                for a in 0..n {
                    let dst = self.primes(&ys[a]);
                    term = term.mul(&self.maps_to(m, &ys[sigma[a]], &dst, choice[a])?);
                }
                r = r.add(&term);
            }
        }
        Ok((u, r))
    }

    fn disjoint_product(&mut self, accs: &[&Access]) -> Result<(Body, Body)> {
        let mut u = Body::unit();
        for a in accs {
            u = u.mul(&self.unique(a, &a.args)?);
        }
        let mut options = Vec::new();
        for a in accs {
            let mut o = vec![true];
            if self.has_redundancy(a)? {
                o.push(false);
            }
            options.push(o);
        }
        let mut r = Body::empty();
        for choice in options.into_iter().multi_cartesian_product() {
            if choice.iter().all(|c| *c) {
                continue;
            }
            let mut term = Body::unit();
            for (a, unique) in accs.iter().zip(choice) {
                let dst = self.primes(&a.args);
                term = term.mul(&self.maps_to(a, &a.args, &dst, unique)?);
            }
            r = r.add(&term);
        }
        Ok((u, r))
    }
}

// ---------------------------------------------------------------------------
// Rule inference

/// Dimensions of a rule's head, from the accesses that bind each head
/// variable or from constant upper bounds.
pub fn derive_dims(r: &Rule, ctx: &InferenceContext) -> Result<Vec<IndexExpr>> {
    if let Some(d) = ctx.dims.get(&r.head.tensor) {
        return Ok(d.clone());
    }
    if let Some((m, v, _)) = direct_sum_parts(r) {
        let (dm, dv) = (ctx.dims.get(&m.tensor), ctx.dims.get(&v.tensor));
        if let (Some(dm), Some(dv)) = (dm, dv) {
            return Ok(dm
                .iter()
                .zip(dv)
                .map(|(a, b)| Lin::of(a).add(&Lin::of(b)).to_expr())
                .collect());
        }
    }
    let mut out = Vec::new();
    'vars: for x in &r.head.args {
        for p in &r.body.0 {
            for a in p.accesses() {
                if let Some(pos) = a.args.iter().position(|v| v == x) {
                    let d = ctx.dims.get(&a.tensor).ok_or_else(|| Error::InferenceOrder(a.tensor.clone()))?;
                    if let Some(e) = d.get(pos % d.len().max(1)) {
                        out.push(e.clone());
                        continue 'vars;
                    }
                }
            }
            for c in p.comparisons() {
                if c.vars().len() != 1 {
                    continue;
                }
                match isolate(c, x) {
                    Some((CmpOp::Lt, e)) if !e.has_vars() => {
                        out.push(Lin::of(&e).to_expr());
                        continue 'vars;
                    }
                    Some((CmpOp::Le, e)) if !e.has_vars() => {
                        out.push(Lin::of(&e).add(&Lin::constant(1)).to_expr());
                        continue 'vars;
                    }
                    _ => {}
                }
            }
        }
        for p in &r.body.0 {
            for c in p.comparisons() {
                if let Some((CmpOp::Eq, e)) = isolate(c, x) {
                    if let Some(m) = max_value(&e, &|v| access_extent(r, v, ctx)) {
                        out.push(Lin::of(&m).add(&Lin::constant(1)).to_expr());
                        continue 'vars;
                    }
                }
            }
        }
        return Err(Error::Shape(format!("cannot derive the extent of `{x}` in `{}`", r.head.tensor)));
    }
    Ok(out)
}

fn access_extent(r: &Rule, v: &str, ctx: &InferenceContext) -> Option<IndexExpr> {
    r.body.0.iter().flat_map(|p| p.accesses()).find_map(|a| {
        let pos = a.args.iter().position(|w| w == v)?;
        ctx.dims.get(&a.tensor)?.get(pos).cloned()
    })
}

/// Largest value of a nonnegative index expression over the box given by `ext`.
fn max_value(e: &IndexExpr, ext: &dyn Fn(&str) -> Option<IndexExpr>) -> Option<IndexExpr> {
    Some(match e {
        IndexExpr::Var(v) => ext(v)?.sub(IndexExpr::Const(1)),
        IndexExpr::Sym(_) | IndexExpr::Const(_) => e.clone(),
        IndexExpr::Arith(ArithOp::Add, a, b) => max_value(a, ext)?.add(max_value(b, ext)?),
        IndexExpr::Arith(ArithOp::Mul, a, b) => max_value(a, ext)?.mul(max_value(b, ext)?),
        IndexExpr::Arith(ArithOp::Sub, a, b) if !b.has_vars() => max_value(a, ext)?.sub((**b).clone()),
        _ => return None,
    })
}

/// A projection whose dropped variables are determined by the kept ones
/// (on the support) keeps the unique set and redundancy map of the
/// unprojected product.
fn injective_projection(r: &Rule, p: &Product, s: &mut Scope, ctx: &InferenceContext) -> Result<Option<(Body, Body)>> {
    let ys: Vec<String> = p.ordered_vars().into_iter().filter(|v| !s.x.contains(v)).collect();
    let mut args = s.x.clone();
    args.extend(ys.iter().cloned());
    let lifted = Rule::new(Access::plain(format!("{}'", r.head.tensor), args.clone()), Body(vec![p.clone()]));
    let Ok((info, _)) = infer_rule_case(&lifted, ctx) else { return Ok(None) };
    if info.redundancy.body.is_empty() {
        return Ok(None);
    }
    // injective on the comparisons of `p` and of single-product
    // definitions it reads (a superset of the support)
    let mut dom: Vec<Factor> = p.comparisons().cloned().map(Factor::Cmp).collect();
    for a in p.accesses() {
        if let Some(d) = ctx.dims.get(&a.tensor) {
            dom.extend(box_factors(&a.args, d));
        }
        let Some(def) = ctx.definitions.get(&a.tensor) else { continue };
        if def.body.0.len() != 1 || a.kind != Kind::Plain {
            continue;
        }
        let inst = instantiate(def, &a.args, &mut s.avoid)?;
        for q in &inst.0 {
            dom.extend(q.comparisons().cloned().map(Factor::Cmp));
            for b in q.accesses() {
                if let Some(d) = ctx.dims.get(&b.tensor) {
                    dom.extend(box_factors(&b.args, d));
                }
            }
        }
    }
    let y2 = s.fresh(ys.len());
    let map: BTreeMap<String, String> = ys.iter().cloned().zip(y2.iter().cloned()).collect();
    let mut both = dom.clone();
    both.extend(dom.iter().map(|f| f.rename(&map)));
    for (a, b) in ys.iter().zip(&y2) {
        for (lo, hi) in [(a, b), (b, a)] {
            let mut q = both.clone();
            q.push(Factor::cmp(IndexExpr::var(lo.clone()), CmpOp::Lt, IndexExpr::var(hi.clone())));
            if !simplify_body(&Body::single(q), &s.x, Semantics::Set).is_empty() {
                return Ok(None);
            }
        }
    }
    let u = instantiate(&info.unique, &args, &mut s.avoid)?;
    let mut all = args;
    all.extend(s.xp.clone());
    all.extend(s.fresh(ys.len()));
    Ok(Some((u, instantiate(&info.redundancy, &all, &mut s.avoid)?)))
}

/// Renames `r` so that its head uses the default variables of
/// [`StructureInfo::head_vars`] and no body variable clashes with them or
/// their primes.
fn standardize(r: &Rule) -> (Rule, Vec<String>, Vec<String>) {
    let (x, xp) = StructureInfo::head_vars(r.head.args.len());
    let all = r.all_vars();
    let mut taken: BTreeSet<String> = all.iter().chain(&x).chain(&xp).cloned().collect();
    let mut map = BTreeMap::new();
    for v in &all {
        if !r.head.args.contains(v) && (x.contains(v) || xp.contains(v)) {
            let f = fresh_name("v", &taken);
            taken.insert(f.clone());
            map.insert(v.clone(), f);
        }
    }
    for (h, d) in r.head.args.iter().zip(&x) {
        map.insert(h.clone(), d.clone());
    }
    (r.rename(&map), x, xp)
}

/// Infers the structure of the tensor defined by `r`. The result is not
/// simplified; see [`infer_program`].
pub fn infer_rule(r: &Rule, ctx: &InferenceContext) -> Result<StructureInfo> {
    Ok(infer_rule_case(r, ctx)?.0)
}

/// Like [`infer_rule`], also reporting the case that applied.
pub fn infer_rule_case(r: &Rule, ctx: &InferenceContext) -> Result<(StructureInfo, Case)> {
    let tensor = r.head.tensor.clone();
    let dims = derive_dims(r, ctx)?;
    if !distinct(&r.head.args) {
        return Ok((StructureInfo::dense(&tensor, dims), Case::Default));
    }
    let (r, x, xp) = standardize(r);
    let mut s = Scope { ctx, avoid: r.all_vars().into_iter().chain(x.clone()).chain(xp.clone()).collect(), x: x.clone(), xp };
    let build = |u: Body, rd: Body| StructureInfo::with_vars(&tensor, dims.clone(), &x, u, rd);

    match r.body.0.len() {
        0 => return Ok((build(Body::empty(), Body::empty()), Case::Default)),
        1 => {}
        n => {
            if n == 2 {
                if let Some(res) = equal_addition(&r, &mut s)? {
                    return Ok((build(res.0, res.1), Case::EqualAddition));
                }
                if let Some((m, v, d)) = direct_sum_parts(&r) {
                    if blocks_disjoint(ctx, &m, &d) {
                        let (u, rd) = direct_sum(&r, &mut s, &m, &v, &d)?;
                        return Ok((build(u, rd), Case::DirectSum));
                    }
                }
            }
            let mut u = Body::empty();
            for p in &r.body.0 {
                u = u.add(&s.product_support(p)?);
            }
            return Ok((build(u, Body::empty()), Case::GeneralAddition));
        }
    }

    let p = &r.body.0[0];
    let accs: Vec<&Access> = p.accesses().collect();
    let phi: Vec<Comparison> = p.comparisons().cloned().collect();
    let vars = p.ordered_vars();
    if vars.iter().any(|v| !x.contains(v)) {
        if let Some((u, rd)) = injective_projection(&r, p, &mut s, ctx)? {
            return Ok((build(u, rd), Case::Projection));
        }
        let u = s.product_support(p)?;
        return Ok((build(u, Body::empty()), Case::Projection));
    }
    if accs.is_empty() {
        if let Some(ranges) = constant_ranges(p, &x) {
            let (u, rd) = constant_range(&s, &ranges);
            return Ok((build(u, rd), Case::ConstantRange));
        }
        return Ok((build(Body::single(cmp_factors(&phi)), Body::empty()), Case::GeneralProduct));
    }
    let plain = accs.iter().all(|a| !a.kind.is_set());
    if plain && disjoint_accesses(&accs) {
        let free: Vec<String> = x.iter().filter(|v| !accs.iter().any(|a| a.args.contains(v))).cloned().collect();
        let (u, rd, case) = if is_self_power(&accs) {
            let (u, rd) = s.self_power(&accs)?;
            (u, rd, Case::SelfPower)
        } else {
            let (u, rd) = s.disjoint_product(&accs)?;
            (u, rd, if accs.len() == 1 { Case::Relabel } else { Case::DisjointProduct })
        };
        let (u, rd) = s.restrict(u, rd, &phi, &free);
        return Ok((build(u, rd), case));
    }
    let u = s.product_support(p)?;
    Ok((build(u, Body::empty()), Case::GeneralProduct))
}

fn equal_addition(r: &Rule, s: &mut Scope) -> Result<Option<(Body, Body)>> {
    let mut accs = Vec::new();
    for p in &r.body.0 {
        match &p.0[..] {
            [Factor::Access(a)] if a.args == r.head.args && !a.kind.is_set() => accs.push(a),
            _ => return Ok(None),
        }
    }
    let (m, v) = (s.info(accs[0])?, s.info(accs[1])?);
    let compressed = accs.iter().any(|a| a.kind == Kind::Compressed);
    let same = m.dims == v.dims
        && canonicalize(&m.unique.body) == canonicalize(&v.unique.body)
        && canonicalize(&m.redundancy.body) == canonicalize(&v.redundancy.body);
    if !same || (compressed && !m.redundancy.body.is_empty()) {
        return Ok(None);
    }
    let x = s.x.clone();
    let xp = s.xp.clone();
    let u = s.unique(accs[0], &x)?;
    let rd = s.redundancy(accs[0], &x, &xp)?;
    Ok(Some((u, rd)))
}

/// The second block starts past the first one along some axis, and every
/// offset is either zero or the full extent of the first block.
fn blocks_disjoint(ctx: &InferenceContext, m: &Access, d: &[Lin]) -> bool {
    let Some(dm) = ctx.dims.get(&m.tensor) else { return false };
    let full: Vec<bool> = dm.iter().zip(d).map(|(e, o)| Lin::of(e) == *o).collect();
    full.iter().any(|f| *f) && d.iter().zip(&full).all(|(o, f)| *f || *o == Lin::constant(0))
}

fn direct_sum(r: &Rule, s: &mut Scope, m: &Access, v: &Access, d: &[Lin]) -> Result<(Body, Body)> {
    let x = s.x.clone();
    let xp = s.xp.clone();
    let link: Vec<Factor> = r
        .body
        .0
        .iter()
        .find(|p| p.accesses().any(|a| a == v))
        .map(|p| p.comparisons().cloned().map(Factor::Cmp).collect())
        .unwrap_or_default();
    let u = s.unique(m, &x)?.add(&s.unique(v, &v.args)?.mul_factors(&link));
    let mut rd = s.redundancy(m, &x, &xp)?;
    if s.has_redundancy(v)? {
        let yp = s.fresh(v.args.len());
        let shift: Vec<Factor> = yp
            .iter()
            .zip(&xp)
            .zip(d)
            .map(|((y, xv), off)| Factor::cmp(var(y), CmpOp::Eq, Lin::of(&var(xv)).sub(off).to_expr()))
            .collect();
        let vr = s.redundancy(v, &v.args, &yp)?.mul_factors(&link).mul_factors(&shift);
        rd = rd.add(&vr);
    }
    Ok((u, rd))
}

fn constant_range(s: &Scope, ranges: &[(Lin, Lin)]) -> (Body, Body) {
    let x = &s.x;
    let nonempty: Vec<Factor> = ranges
        .iter()
        .map(|(b, c)| Factor::cmp(b.to_expr(), CmpOp::Lt, c.to_expr()))
        .collect();
    let at_base: Vec<Factor> = x
        .iter()
        .zip(ranges)
        .map(|(v, (b, _))| Factor::cmp(var(v), CmpOp::Eq, b.to_expr()))
        .collect();
    let mut u = at_base.clone();
    u.extend(nonempty.iter().cloned());
    let to_base: Vec<Factor> = s
        .xp
        .iter()
        .zip(ranges)
        .map(|(v, (b, _))| Factor::cmp(var(v), CmpOp::Eq, b.to_expr()))
        .collect();
    let mut r = Vec::new();
    for a in 0..x.len() {
        let mut f: Vec<Factor> = at_base[..a].to_vec();
        let (b, c) = &ranges[a];
        f.push(Factor::cmp(b.to_expr(), CmpOp::Lt, var(&x[a])));
        f.push(Factor::cmp(var(&x[a]), CmpOp::Lt, c.to_expr()));
        for q in a + 1..x.len() {
            let (b, c) = &ranges[q];
            f.push(Factor::cmp(b.to_expr(), CmpOp::Le, var(&x[q])));
            f.push(Factor::cmp(var(&x[q]), CmpOp::Lt, c.to_expr()));
        }
        f.extend(nonempty.iter().cloned());
        f.extend(to_base.iter().cloned());
        r.push(Product(f));
    }
    (Body::single(u), Body(r))
}

// ---------------------------------------------------------------------------
// Symmetry

/// Canonical form of a body up to renaming of its non-head variables.
fn canonical_up_to_renaming(b: &Body, head: &[String]) -> Body {
    let mut out = Vec::new();
    for p in &canonicalize(b).0 {
        let blind = |f: &Factor| {
            let map: BTreeMap<String, String> = p
                .ordered_vars()
                .into_iter()
                .filter(|v| !head.contains(v))
                .map(|v| (v, "_".to_string()))
                .collect();
            f.rename(&map)
        };
        let mut fs = p.0.clone();
        fs.sort_by_key(|f| (blind(f), f.clone()));
        let tmp = Product(fs);
        let map: BTreeMap<String, String> = tmp
            .ordered_vars()
            .into_iter()
            .filter(|v| !head.contains(v))
            .enumerate()
            .map(|(n, v)| (v, format!("_{n}")))
            .collect();
        out.push(tmp.rename(&map));
    }
    canonicalize(&Body(out))
}

/// If the value body is invariant under swapping two equally sized head
/// positions, splits the unique set along that diagonal and maps the other
/// half onto it. Only applies to structures without redundancy.
pub fn symmetrize(info: &StructureInfo, value: &Rule) -> Result<Option<StructureInfo>> {
    if !info.redundancy.body.is_empty() || info.unique.body.is_empty() || !distinct(&value.head.args) {
        return Ok(None);
    }
    let h = &value.head.args;
    let k = h.len();
    let base = canonical_up_to_renaming(&value.body, h);
    for (p, q) in (0..k).tuple_combinations() {
        if canonicalize(&Body::single(vec![Factor::cmp(info.dims[p].clone(), CmpOp::Eq, info.dims[q].clone())])) != Body::unit() {
            continue;
        }
        let swap = BTreeMap::from([(h[p].clone(), h[q].clone()), (h[q].clone(), h[p].clone())]);
        if canonical_up_to_renaming(&value.body.rename(&swap), h) != base {
            continue;
        }
        let (x, xp) = StructureInfo::head_vars(k);
        let mut avoid: BTreeSet<String> = x.iter().chain(&xp).cloned().collect();
        let mut sx = x.clone();
        sx.swap(p, q);
        let u_old = instantiate(&info.unique, &x, &mut avoid)?;
        let u = u_old.mul_factors(&[Factor::cmp(var(&x[p]), CmpOp::Le, var(&x[q]))]);
        let mut f = vec![Factor::cmp(var(&x[q]), CmpOp::Lt, var(&x[p]))];
        f.extend(eqs(&xp, &sx));
        let rd = u_old.mul(&instantiate(&info.unique, &sx, &mut avoid)?).mul_factors(&f);
        let tensor = info.tensor().to_string();
        return Ok(Some(StructureInfo::with_vars(&tensor, info.dims.clone(), &x, u, rd)));
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Programs

/// Simplifies both rules of a structure to their canonical fixpoint.
pub fn simplify_info(info: &StructureInfo) -> StructureInfo {
    StructureInfo {
        unique: optimize_rule(&info.unique),
        redundancy: optimize_rule(&info.redundancy),
        dims: info.dims.clone(),
    }
}

/// Rewrites a user-given structure so that it uses the default head
/// variables.
pub fn normalize_info(tensor: &str, dims: Vec<IndexExpr>, unique: &Rule, redundancy: Option<&Rule>) -> Result<StructureInfo> {
    let (x, xp) = StructureInfo::head_vars(dims.len());
    let mut avoid: BTreeSet<String> = x.iter().chain(&xp).cloned().collect();
    let u = instantiate(unique, &x, &mut avoid)?;
    let r = match redundancy {
        Some(r) => {
            let args: Vec<String> = x.iter().chain(&xp).cloned().collect();
            instantiate(r, &args, &mut avoid)?
        }
        None => Body::empty(),
    };
    Ok(StructureInfo::with_vars(tensor, dims, &x, u, r))
}

const SYMMETRY_LIMIT: usize = 64;

/// Binarizes `p` and infers a simplified structure for every plain rule.
/// Input structures come from `inputs`, then from unique-set and
/// redundancy-map rules in `p`, and default to dense for declared inputs.
pub fn infer_program(p: &Program, inputs: &BTreeMap<String, StructureInfo>) -> Result<InferenceContext> {
    let b = binarize(p);
    let mut ctx = InferenceContext::new(b.dims.clone());
    for (name, info) in inputs {
        let s = normalize_info(name, info.dims.clone(), &info.unique, Some(&info.redundancy))?;
        ctx.insert(simplify_info(&s));
    }
    for name in b.inputs() {
        if ctx.structures.contains_key(&name) {
            continue;
        }
        let Some(dims) = b.dims.get(&name).cloned() else { continue };
        let info = match b.rule(&name, Kind::Unique) {
            Some(u) => normalize_info(&name, dims, u, b.rule(&name, Kind::Redundancy))?,
            None => StructureInfo::dense(&name, dims),
        };
        ctx.insert(simplify_info(&info));
    }
    let mut values: Vec<Rule> = Vec::new();
    for r in &b.rules {
        if r.head.kind != Kind::Plain {
            continue;
        }
        let (info, case) = infer_rule_case(r, &ctx)?;
        let mut info = simplify_info(&info);
        let mut value = r.clone();
        for d in &values {
            if value.body.accesses().any(|a| a.same_target(&d.head)) {
                value = substitute(&value, d)?;
            }
        }
        if value.body.0.len() <= SYMMETRY_LIMIT {
            if let Some(sym) = symmetrize(&info, &value)? {
                info = simplify_info(&sym);
            }
        }
        ctx.definitions.insert(r.head.tensor.clone(), value.clone());
        values.push(value);
        ctx.cases.insert(r.head.tensor.clone(), case);
        ctx.insert(info);
    }
    Ok(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::{parse, parse_body};

    fn info(t: &str, dims: &[&str], u: &str, r: &str, sizes: &[&str]) -> StructureInfo {
        let sizes: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
        let dims: Vec<IndexExpr> = dims.iter().map(|d| IndexExpr::sym(*d)).collect();
        StructureInfo::from_bodies(t, dims, parse_body(u, &sizes).unwrap(), parse_body(r, &sizes).unwrap())
    }

    fn ubody(ctx: &InferenceContext, t: &str) -> String {
        ctx.get(t).unwrap().unique.body.to_string()
    }

    #[test]
    fn binarize_splits_products_sums_and_projections() {
        let p = parse("@size n\n@dim B(n, n, n)\n@dim C(n, n)\n@dim D(n, n)\n@dim E(n, n)\nA(i, j, k) := B(i, j, l) * C(l, k) + D(j, k) * E(i, j)\n").unwrap();
        let b = binarize(&p);
        assert_eq!(b.rules.len(), 4, "{b}");
        let m = parse("@size n\n@dim B(n, n, n)\n@dim C(n, n)\n@dim D(n, n)\nA(i, j) := B(i, k, l) * C(k, j) * D(l, j)\n").unwrap();
        assert_eq!(binarize(&m).rules.len(), 3);
        assert_eq!(binarize(&binarize(&m)), binarize(&m));
    }

    #[test]
    fn outer_product_of_a_vector_with_itself() {
        let p = parse("@size n\n@dim x(n)\ny(i, j) := x(i) * x(j)\n").unwrap();
        let ctx = infer_program(&p, &BTreeMap::new()).unwrap();
        let s = ctx.get("y").unwrap();
        assert_eq!(ctx.cases["y"], Case::SelfPower);
        assert_eq!(s.unique.body.to_string(), "(0 <= i <= j < n)");
        assert_eq!(s.redundancy.body.to_string(), "(0 <= j < i < n) * (i' = j) * (i = j')");
    }

    #[test]
    fn uhs_rmd_dttv() {
        let uhs = parse("@size n\n@dim M(n, n)\n@dim N(n, n)\nA(i, j) := M(i, j) * N(i, j)\n").unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("M".into(), info("M", &["n", "n"], "(0 <= i <= j < n)", "0", &["n"]));
        inputs.insert("N".into(), info("N", &["n", "n"], "(0 <= i <= j < n)", "(0 <= j < i < n) * (i' = j) * (j' = i)", &["n"]));
        let ctx = infer_program(&uhs, &inputs).unwrap();
        assert_eq!(ubody(&ctx, "A"), "(0 <= i <= j < n)");

        let rmd = parse("@size m n r\n@dim M(m, n)\n@dim N(n, n)\nA(i, j) := M(i, k) * N(k, j)\n").unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("M".into(), info("M", &["m", "n"], "(i = r) * (0 <= j < n)", "0", &["m", "n", "r"]));
        inputs.insert("N".into(), info("N", &["n", "n"], "(i = j) * (0 <= i < n)", "0", &["n"]));
        let ctx = infer_program(&rmd, &inputs).unwrap();
        assert_eq!(ubody(&ctx, "A"), "(i = r) * (0 <= j < n)");

        let dttv = parse("@size m\n@dim M(m, m, m)\n@dim N(m)\nB(i, j, k) := M(i, j, k) * N(k)\nA(i, j) := B(i, j, k)\n").unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("M".into(), info("M", &["m", "m", "m"], "(i = j) * (j = k) * (0 <= i < m) * (0 <= j < m) * (0 <= k < m)", "0", &["m"]));
        let ctx = infer_program(&dttv, &inputs).unwrap();
        assert_eq!(ubody(&ctx, "A"), "(0 <= i < m) * (i = j)");
        assert_eq!(ctx.cases["A"], Case::Projection);
    }

    #[test]
    fn missing_operand_is_an_order_error() {
        let p = crate::textio::parse_unchecked("@size n\nA(i) := B(i) * (0 <= i < n)\n").unwrap();
        assert!(matches!(infer_program(&p, &BTreeMap::new()), Err(Error::InferenceOrder(_))));
    }

    #[test]
    fn constant_range_maps_everything_to_the_base() {
        let p = parse("@size n\nO(i, j) := (0 <= i < n) * (0 <= j < n)\n").unwrap();
        let ctx = infer_program(&p, &BTreeMap::new()).unwrap();
        assert_eq!(ctx.cases["O"], Case::ConstantRange);
        assert_eq!(ubody(&ctx, "O"), "(i = 0) * (j = 0)");
    }

    #[test]
    fn transpose_relabels() {
        let p = parse("@size n\n@dim S(n, n)\nT(i, j) := S(j, i)\n").unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("S".into(), info("S", &["n", "n"], "(0 <= i <= j < n)", "0", &["n"]));
        let ctx = infer_program(&p, &inputs).unwrap();
        assert_eq!(ctx.cases["T"], Case::Relabel);
        assert_eq!(ubody(&ctx, "T"), "(0 <= j <= i < n)");
    }

    #[test]
    fn inference_is_deterministic() {
        let p = parse("@size n\n@dim x(n)\ny(i, j, k) := x(i) * x(j) * x(k)\n").unwrap();
        let b = binarize(&p);
        let mut ctx = InferenceContext::new(b.dims.clone());
        ctx.insert(StructureInfo::dense("x", vec![IndexExpr::sym("n")]));
        assert_eq!(infer_rule(&b.rules[0], &ctx).unwrap(), infer_rule(&b.rules[0], &ctx).unwrap());
    }
}
