//! Rule inlining and logical simplification.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::*;
use crate::linear::{contradictory, factors, gcd, implied_by, isolate, monomial, normalize_cmp, split_signs, Lin, Norm};

/// How a body is read: as a relation (sums are unions, products are
/// intersections) or as a tensor (sums and products are arithmetic).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Semantics {
    Set,
    Numeric,
}

impl Semantics {
    pub fn of(kind: Kind) -> Self {
        if kind.is_set() {
            Semantics::Set
        } else {
            Semantics::Numeric
        }
    }
}

pub const MAX_ITERATIONS: usize = 64;

// ---------------------------------------------------------------------------
// Canonical form

fn norm_all(cmps: impl IntoIterator<Item = Comparison>) -> Option<Vec<Comparison>> {
    let mut out = Vec::new();
    for c in cmps {
        match normalize_cmp(&c) {
            Norm::True => {}
            Norm::False => return None,
            Norm::Cmp(c) => {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
    }
    Some(out)
}

/// The variable a normalized comparison is "about", and its class:
/// lower bound, upper bound / difference, equality, other.
fn sort_key(c: &Comparison) -> (Option<String>, u8) {
    match (&c.lhs, c.op, &c.rhs) {
        (l, CmpOp::Lt | CmpOp::Le, IndexExpr::Var(x)) if !l.has_vars() => (Some(x.clone()), 0),
        (IndexExpr::Var(x), CmpOp::Lt | CmpOp::Le, _) => (Some(x.clone()), 1),
        (IndexExpr::Var(x), CmpOp::Eq, _) => (Some(x.clone()), 2),
        _ => (c.vars().into_iter().next(), 3),
    }
}

/// Orders variables so that `a` precedes `b` whenever `a < b + c` is one
/// of the comparisons, breaking ties by name.
fn var_ranks(cmps: &[Comparison]) -> BTreeMap<String, usize> {
    let mut vars: BTreeSet<String> = BTreeSet::new();
    let mut edges: BTreeSet<(String, String)> = BTreeSet::new();
    for c in cmps {
        vars.extend(c.vars());
        if let (IndexExpr::Var(a), CmpOp::Lt | CmpOp::Le) = (&c.lhs, c.op) {
            for b in c.rhs.free_vars() {
                if &b != a {
                    edges.insert((a.clone(), b));
                }
            }
        }
    }
    let mut ranks = BTreeMap::new();
    let mut left = vars.clone();
    while !left.is_empty() {
        let primes = |v: &&String| (v.matches('\'').count(), (*v).clone());
        let next = left
            .iter()
            .filter(|v| !edges.iter().any(|(a, b)| b == *v && left.contains(a) && a != *v))
            .min_by_key(primes)
            .or_else(|| left.iter().min_by_key(primes))
            .cloned()
            .unwrap();
        left.remove(&next);
        ranks.insert(next, ranks.len());
    }
    ranks
}

fn sort_cmps(cmps: &mut [Comparison]) {
    let ranks = var_ranks(cmps);
    // an equality between variables belongs to the later one
    let key = |c: &Comparison| match sort_key(c) {
        (_, 2) if c.rhs.has_vars() => (c.vars().into_iter().max_by_key(|v| ranks.get(v).copied()), 2),
        k => k,
    };
    cmps.sort_by(|a, b| {
        let (va, ca) = key(a);
        let (vb, cb) = key(b);
        let ra = va.as_ref().and_then(|v| ranks.get(v)).copied().unwrap_or(usize::MAX);
        let rb = vb.as_ref().and_then(|v| ranks.get(v)).copied().unwrap_or(usize::MAX);
        (ra, ca, a).cmp(&(rb, cb, b))
    });
}

fn build_product(mut accesses: Vec<Access>, mut cmps: Vec<Comparison>) -> Product {
    accesses.sort();
    sort_cmps(&mut cmps);
    let mut f: Vec<Factor> = accesses.into_iter().map(Factor::Access).collect();
    f.extend(cmps.into_iter().map(Factor::Cmp));
    Product(f)
}

fn canonical_product(p: &Product) -> Option<Product> {
    let cmps = norm_all(p.comparisons().cloned())?;
    Some(build_product(p.accesses().cloned().collect(), cmps))
}

/// Normalizes every comparison, sorts factors and products. Constant
/// comparisons fold; a product with a false comparison is dropped.
pub fn canonicalize(b: &Body) -> Body {
    let mut ps: Vec<Product> = b.0.iter().filter_map(canonical_product).collect();
    ps.sort();
    Body(ps)
}

pub fn canonicalize_rule(r: &Rule) -> Rule {
    Rule::new(r.head.clone(), canonicalize(&r.body))
}

// ---------------------------------------------------------------------------
// Product simplification

struct Prod {
    accesses: Vec<Access>,
    cmps: Vec<Comparison>,
}

impl Prod {
    fn in_access(&self, v: &str) -> bool {
        self.accesses.iter().any(|a| a.args.iter().any(|x| x == v))
    }

    fn rename(&mut self, from: &str, to: &str) {
        let map = BTreeMap::from([(from.to_string(), to.to_string())]);
        for a in &mut self.accesses {
            *a = a.rename(&map);
        }
        for c in &mut self.cmps {
            *c = c.rename(&map);
        }
    }

    /// Variables in order of first occurrence, head variables first.
    fn var_order(&self, head: &[String]) -> Vec<String> {
        let mut out: Vec<String> = head.to_vec();
        let p = Product(
            self.accesses
                .iter()
                .cloned()
                .map(Factor::Access)
                .chain(self.cmps.iter().cloned().map(Factor::Cmp))
                .collect(),
        );
        for v in p.ordered_vars() {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }
}

/// Removes one body-only variable defined by an equality. Returns whether
/// anything changed.
fn eliminate_equality(p: &mut Prod, head: &[String], vars_only: bool) -> bool {
    let order = p.var_order(head);
    let rank = |v: &str| order.iter().position(|x| x == v).unwrap_or(usize::MAX);
    let mut best: Option<(usize, usize, String, IndexExpr)> = None;
    for (ci, c) in p.cmps.iter().enumerate() {
        if c.op != CmpOp::Eq {
            continue;
        }
        for x in c.vars() {
            if head.contains(&x) {
                continue;
            }
            let Some((CmpOp::Eq, e)) = isolate(c, &x) else { continue };
            let is_var = matches!(e, IndexExpr::Var(_));
            if !is_var && (vars_only || p.in_access(&x) || scales_existential(&e)) {
                continue;
            }
            let r = rank(&x);
            if best.as_ref().map_or(true, |(_, br, _, _)| r > *br) {
                best = Some((ci, r, x, e));
            }
        }
    }
    let Some((ci, _, x, e)) = best else { return false };
    p.cmps.remove(ci);
    match &e {
        IndexExpr::Var(y) => p.rename(&x, y),
        _ => {
            for c in &mut p.cmps {
                *c = c.replace_var(&x, &e);
            }
        }
    }
    true
}

/// Size of a comparison `l op 0` for [`fold_by_equalities`]: variables,
/// then non-unit coefficients once the gcd is divided out. An equality
/// that cannot hold is smallest.
fn weight(l: &Lin, op: CmpOp) -> (usize, usize) {
    let mut vars = BTreeSet::new();
    for t in l.terms.keys() {
        t.collect_vars(&mut vars);
    }
    let g = l.terms.values().fold(0i64, |a, &b| gcd(a, b)).max(1);
    if op == CmpOp::Eq && l.constant % g != 0 {
        return (0, 0);
    }
    let scaled = if op == CmpOp::Eq { l.terms.values().filter(|c| (*c / g).abs() != 1).count() } else { 0 };
    (vars.len(), scaled)
}

/// A comparison is replaced by its difference with an equality when that
/// is smaller (see [`weight`]): `(i = 2 * a + 1) * (i = 2 * b)` gives
/// `2 * a + 1 = 2 * b`, which cannot hold.
fn fold_by_equalities(p: &mut Prod) -> bool {
    for i in 0..p.cmps.len() {
        if p.cmps[i].op != CmpOp::Eq {
            continue;
        }
        let le = Lin::of(&p.cmps[i].lhs).sub(&Lin::of(&p.cmps[i].rhs));
        for j in 0..p.cmps.len() {
            if i == j {
                continue;
            }
            let op = p.cmps[j].op;
            let l = Lin::of(&p.cmps[j].lhs).sub(&Lin::of(&p.cmps[j].rhs));
            if !l.has_vars() {
                continue;
            }
            let w = weight(&l, op);
            for d in [l.sub(&le), l.add(&le)] {
                let smaller = if op == CmpOp::Eq { weight(&d, op) < w } else { !d.has_vars() };
                if smaller {
                    p.cmps[j] = Comparison::new(d.to_expr(), op, IndexExpr::Const(0));
                    return true;
                }
            }
        }
    }
    false
}

/// Whether `e` holds a variable with a non-unit factor, as the digit of a
/// mixed-radix index does; such definitions are kept.
fn scales_existential(e: &IndexExpr) -> bool {
    Lin::of(e).terms.iter().any(|(t, c)| match t {
        IndexExpr::Var(_) => c.abs() > 1,
        IndexExpr::Arith(ArithOp::Mul, _, _) => t.has_vars(),
        _ => false,
    })
}

/// `(x = E) * (y = E)` becomes `(x = E) * (y = x)`: an equality is
/// replaced by its difference with another when that difference relates
/// two variables directly.
fn share_equalities(p: &mut Prod) -> bool {
    for i in 0..p.cmps.len() {
        for j in 0..p.cmps.len() {
            let (a, b) = (&p.cmps[i], &p.cmps[j]);
            if i == j || a.op != CmpOp::Eq || b.op != CmpOp::Eq {
                continue;
            }
            let la = Lin::of(&a.lhs).sub(&Lin::of(&a.rhs));
            let lb = Lin::of(&b.lhs).sub(&Lin::of(&b.rhs));
            if lb.terms.len() <= 2 {
                continue;
            }
            for d in [lb.sub(&la), lb.add(&la)] {
                let vars: Vec<(&IndexExpr, &i64)> = d.terms.iter().collect();
                if let [(IndexExpr::Var(x), cx), (IndexExpr::Var(y), cy)] = vars[..] {
                    if d.constant == 0 && *cx == -*cy && cx.abs() == 1 {
                        p.cmps[j] = Comparison::new(IndexExpr::var(x.clone()), CmpOp::Eq, IndexExpr::var(y.clone()));
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Lower (inclusive) and upper (exclusive) bound of `x` from a normalized
/// single-variable comparison.
fn bound_of(c: &Comparison, x: &str) -> Option<(bool, Lin)> {
    let (op, e) = isolate(c, x)?;
    if e.mentions(x) {
        return None;
    }
    let l = Lin::of(&e);
    match op {
        CmpOp::Lt => Some((false, l)),
        CmpOp::Le => Some((false, l.add(&Lin::constant(1)))),
        CmpOp::Gt => Some((true, l.add(&Lin::constant(1)))),
        CmpOp::Ge => Some((true, l)),
        _ => None,
    }
}

/// The only lower and upper bound of body-only `x`, if it has exactly
/// those two comparisons besides `skip`.
fn sole_range(p: &Prod, x: &str, skip: usize) -> Option<(usize, Lin, usize, Lin)> {
    let mut lo = None;
    let mut hi = None;
    for (i, c) in p.cmps.iter().enumerate() {
        if i == skip || !c.mentions(x) {
            continue;
        }
        match bound_of(c, x) {
            Some((true, l)) if lo.is_none() && !l.has_vars() => lo = Some((i, l)),
            Some((false, h)) if hi.is_none() && !h.has_vars() => hi = Some((i, h)),
            _ => return None,
        }
    }
    let (li, l) = lo?;
    let (hi_i, h) = hi?;
    Some((li, l, hi_i, h))
}

/// `(0 <= a < N) * (0 <= b < M) * (v = a * M + b)` with `a`, `b` used
/// nowhere else becomes `(0 <= v < N * M)`.
fn recombine_radix(p: &mut Prod, head: &[String]) -> bool {
    for ci in 0..p.cmps.len() {
        let c = &p.cmps[ci];
        if c.op != CmpOp::Eq {
            continue;
        }
        let l = Lin::of(&c.lhs).sub(&Lin::of(&c.rhs));
        if l.constant != 0 || l.terms.len() != 3 {
            continue;
        }
        // find the v, a*M and b terms
        for (v_term, v_coef) in &l.terms {
            let IndexExpr::Var(v) = v_term else { continue };
            if v_coef.abs() != 1 {
                continue;
            }
            let others: Vec<(&IndexExpr, i64)> = l.terms.iter().filter(|(t, _)| *t != v_term).map(|(t, k)| (t, *k)).collect();
            for (ai, bi) in [(0, 1), (1, 0)] {
                let (a_term, a_coef) = others[ai];
                let (b_term, b_coef) = others[bi];
                if b_coef != -v_coef {
                    continue;
                }
                let IndexExpr::Var(b) = b_term else { continue };
                let (a, m): (String, Lin) = match a_term {
                    IndexExpr::Var(a) if a_coef == -v_coef * a_coef.abs() && a_coef.abs() > 1 => {
                        (a.clone(), Lin::constant(a_coef.abs()))
                    }
                    IndexExpr::Arith(ArithOp::Mul, x, y) if a_coef == -v_coef => match (&**x, &**y) {
                        (IndexExpr::Var(a), s) | (s, IndexExpr::Var(a)) if !s.has_vars() => (a.clone(), Lin::of(s)),
                        _ => continue,
                    },
                    _ => continue,
                };
                if a == *b || head.contains(&a) || head.contains(b) || p.in_access(&a) || p.in_access(b) {
                    continue;
                }
                let Some((la, lo_a, ha, hi_a)) = sole_range(p, &a, ci) else { continue };
                let Some((lb, lo_b, hb, hi_b)) = sole_range(p, b, ci) else { continue };
                if lo_a != Lin::constant(0) || lo_b != Lin::constant(0) || hi_b != m {
                    continue;
                }
                let total = Lin::of(&IndexExpr::arith(ArithOp::Mul, hi_a.to_expr(), m.to_expr()));
                let v = IndexExpr::var(v.clone());
                let mut drop = vec![ci, la, ha, lb, hb];
                drop.sort_unstable();
                drop.dedup();
                for i in drop.into_iter().rev() {
                    p.cmps.remove(i);
                }
                p.cmps.push(Comparison::new(IndexExpr::Const(0), CmpOp::Le, v.clone()));
                p.cmps.push(Comparison::new(v, CmpOp::Lt, total.to_expr()));
                return true;
            }
        }
    }
    false
}

/// Mixed-radix digits: an equality `M * q + b - b2 = 0` (alone, or as the
/// difference of two equalities) with both `b` and `b2` in `[0, M)` splits
/// into `b = b2` and `q = 0`.
fn unify_radix(p: &mut Prod) -> bool {
    let lin = |c: &Comparison| Lin::of(&c.lhs).sub(&Lin::of(&c.rhs));
    let zero = IndexExpr::Const(0);
    for ci in 0..p.cmps.len() {
        if p.cmps[ci].op != CmpOp::Eq {
            continue;
        }
        let li = lin(&p.cmps[ci]);
        let mut cands = vec![(ci, li.clone())];
        for cj in 0..p.cmps.len() {
            if cj != ci && p.cmps[cj].op == CmpOp::Eq {
                let lj = lin(&p.cmps[cj]);
                cands.push((cj, li.sub(&lj)));
                cands.push((cj, li.add(&lj)));
            }
        }
        for (replace, d) in cands {
            for (q, b, b2, m) in radix_splits(&d) {
                let in_range = |v: &str| {
                    let x = IndexExpr::var(v);
                    implied_by(&p.cmps, &Comparison::new(zero.clone(), CmpOp::Le, x.clone()))
                        && implied_by(&p.cmps, &Comparison::new(x, CmpOp::Lt, m.clone()))
                };
                if !in_range(&b) || !in_range(&b2) {
                    continue;
                }
                p.cmps.remove(replace);
                p.cmps.push(Comparison::new(IndexExpr::var(b), CmpOp::Eq, IndexExpr::var(b2)));
                let (lhs, rhs) = split_signs(&q);
                p.cmps.push(Comparison::new(lhs.to_expr(), CmpOp::Eq, rhs.to_expr()));
                return true;
            }
        }
    }
    false
}

/// Ways to read `d` as `M * q + s * (b - b2)` for unit digits `b`, `b2`
/// and a nonzero `q`.
fn radix_splits(d: &Lin) -> Vec<(Lin, String, String, IndexExpr)> {
    let units: Vec<(&String, i64)> = d
        .terms
        .iter()
        .filter_map(|(t, &c)| match t {
            IndexExpr::Var(v) if c.abs() == 1 => Some((v, c)),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for &(b, sb) in &units {
        for &(b2, sb2) in &units {
            if b == b2 || sb + sb2 != 0 || sb < 0 {
                continue;
            }
            let rest = d.sub(&Lin::atom(IndexExpr::var(b.clone()))).add(&Lin::atom(IndexExpr::var(b2.clone())));
            if !rest.has_vars() {
                continue;
            }
            for m in radices(&rest) {
                if let Some(q) = divide(&rest, &m) {
                    out.push((q, b.clone(), b2.clone(), m));
                }
            }
        }
    }
    out
}

fn radices(l: &Lin) -> Vec<IndexExpr> {
    let mut out = Vec::new();
    let g = l.terms.values().fold(l.constant, |a, &b| gcd(a, b));
    if g > 1 {
        out.push(IndexExpr::Const(g));
    }
    let mut syms = BTreeSet::new();
    for t in l.terms.keys() {
        t.collect_syms(&mut syms);
    }
    out.extend(syms.into_iter().map(IndexExpr::Sym));
    out
}

/// `l / m` when every term is a multiple of `m`.
fn divide(l: &Lin, m: &IndexExpr) -> Option<Lin> {
    match m {
        IndexExpr::Const(k) => {
            if l.constant % k != 0 || l.terms.values().any(|c| c % k != 0) {
                return None;
            }
            Some(Lin { terms: l.terms.iter().map(|(t, c)| (t.clone(), c / k)).collect(), constant: l.constant / k })
        }
        _ => {
            if l.constant != 0 {
                return None;
            }
            let mut out = Lin::default();
            for (t, &c) in &l.terms {
                let mut f = factors(t);
                let pos = f.iter().position(|x| x == m)?;
                f.remove(pos);
                out = out.add(&Lin::of(&monomial(f)).scale(c));
            }
            Some(out)
        }
    }
}

/// Set semantics: eliminates an existential variable that occurs only in
/// unit-coefficient inequalities (Fourier-Motzkin over the integers).
fn eliminate_existential(p: &mut Prod, head: &[String]) -> bool {
    let order = p.var_order(head);
    for x in order.iter().rev() {
        if head.contains(x) || p.in_access(x) {
            continue;
        }
        let mut lowers = Vec::new();
        let mut uppers = Vec::new();
        let mut ok = true;
        let mut involved = Vec::new();
        for (i, c) in p.cmps.iter().enumerate() {
            if !c.mentions(x) {
                continue;
            }
            involved.push(i);
            match bound_of(c, x) {
                Some((true, l)) => lowers.push(l),
                Some((false, h)) => uppers.push(h),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || involved.is_empty() {
            continue;
        }
        for i in involved.into_iter().rev() {
            p.cmps.remove(i);
        }
        // lo <= x < hi is satisfiable iff lo < hi
        for l in &lowers {
            for h in &uppers {
                p.cmps.push(Comparison::new(l.to_expr(), CmpOp::Lt, h.to_expr()));
            }
        }
        return true;
    }
    false
}

/// `(u = v)` between variables: every other comparison mentioning the
/// later of the two is rewritten in terms of the earlier one.
fn propagate_equalities(p: &mut Prod, head: &[String]) -> bool {
    let order = p.var_order(head);
    let rank = |v: &str| order.iter().position(|x| x == v).unwrap_or(usize::MAX);
    for i in 0..p.cmps.len() {
        let c = &p.cmps[i];
        let (IndexExpr::Var(a), CmpOp::Eq, IndexExpr::Var(b)) = (&c.lhs, c.op, &c.rhs) else { continue };
        let (late, early) = if rank(a) > rank(b) { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        let map = BTreeMap::from([(late.clone(), early)]);
        let mut changed = false;
        for j in 0..p.cmps.len() {
            if j != i && p.cmps[j].op != CmpOp::Eq && p.cmps[j].mentions(&late) {
                p.cmps[j] = p.cmps[j].rename(&map);
                changed = true;
            }
        }
        if changed {
            return true;
        }
    }
    false
}

/// Drops comparisons implied by the others, later variables first.
fn remove_implied(p: &mut Prod, head: &[String]) {
    let order = p.var_order(head);
    let rank = |c: &Comparison| {
        c.vars()
            .iter()
            .map(|v| order.iter().position(|x| x == v).unwrap_or(usize::MAX))
            .max()
            .unwrap_or(0)
    };
    let mut idx: Vec<usize> = (0..p.cmps.len()).collect();
    idx.sort_by(|&a, &b| (rank(&p.cmps[b]), &p.cmps[b]).cmp(&(rank(&p.cmps[a]), &p.cmps[a])));
    let mut keep = vec![true; p.cmps.len()];
    for i in idx {
        let others = p.cmps.iter().enumerate().filter(|(j, _)| *j != i && keep[*j]).map(|(_, c)| c);
        if implied_by(others, &p.cmps[i]) {
            keep[i] = false;
        }
    }
    let mut k = keep.into_iter();
    p.cmps.retain(|_| k.next().unwrap());
}

fn simplify_product(prod: &Product, head: &[String], sem: Semantics) -> Option<Product> {
    let mut accesses: Vec<Access> = prod.accesses().cloned().collect();
    if sem == Semantics::Set {
        let mut seen = BTreeSet::new();
        accesses.retain(|a| seen.insert(a.clone()));
    }
    let mut p = Prod { accesses, cmps: prod.comparisons().cloned().collect() };
    for _ in 0..MAX_ITERATIONS {
        p.cmps = norm_all(p.cmps.drain(..))?;
        if contradictory(&p.cmps) {
            return None;
        }
        if fold_by_equalities(&mut p)
            || eliminate_equality(&mut p, head, true)
            || propagate_equalities(&mut p, head)
            || share_equalities(&mut p)
            || recombine_radix(&mut p, head)
            || unify_radix(&mut p)
            || eliminate_equality(&mut p, head, false)
        {
            continue;
        }
        if sem == Semantics::Set && eliminate_existential(&mut p, head) {
            continue;
        }
        break;
    }
    remove_implied(&mut p, head);
    let cmps = norm_all(p.cmps)?;
    Some(build_product(p.accesses, cmps))
}

/// Exclusive range `[lo, hi)` of `x` and the remaining comparisons, when
/// `x` has exactly one lower and one upper bound.
fn split_range(p: &Product, x: &str) -> Option<(Lin, Lin, Vec<Comparison>)> {
    let mut lo = None;
    let mut hi = None;
    let mut rest = Vec::new();
    for c in p.comparisons() {
        if !c.mentions(x) {
            rest.push(c.clone());
            continue;
        }
        match bound_of(c, x) {
            Some((true, l)) if lo.is_none() => lo = Some(l),
            Some((false, h)) if hi.is_none() => hi = Some(h),
            _ => rest.push(c.clone()),
        }
    }
    Some((lo?, hi?, rest))
}

/// Merges two products that differ only in adjacent ranges of one
/// variable.
fn merge_ranges(a: &Product, b: &Product) -> Option<Product> {
    let acc_a: Vec<&Access> = a.accesses().collect();
    let acc_b: Vec<&Access> = b.accesses().collect();
    if acc_a != acc_b {
        return None;
    }
    // only a variable shared by every differing comparison can merge
    let ca: BTreeSet<&Comparison> = a.comparisons().collect();
    let cb: BTreeSet<&Comparison> = b.comparisons().collect();
    let mut vars: Option<BTreeSet<String>> = None;
    for c in ca.symmetric_difference(&cb) {
        let v = c.vars();
        vars = Some(match vars {
            None => v,
            Some(acc) => acc.intersection(&v).cloned().collect(),
        });
    }
    for x in vars.unwrap_or_default() {
        let (Some((la, ha, ra)), Some((lb, hb, rb))) = (split_range(a, &x), split_range(b, &x)) else { continue };
        if ra != rb {
            continue;
        }
        let (lo, hi) = if ha == lb {
            (la, hb)
        } else if hb == la {
            (lb, ha)
        } else {
            continue;
        };
        let v = IndexExpr::var(x.clone());
        let mut cmps = ra;
        cmps.push(Comparison::new(lo.to_expr(), CmpOp::Le, v.clone()));
        cmps.push(Comparison::new(v, CmpOp::Lt, hi.to_expr()));
        let cmps = norm_all(cmps)?;
        return Some(build_product(acc_a.into_iter().cloned().collect(), cmps));
    }
    None
}

/// Simplifies every product of `b`; `head` lists the variables that must
/// stay free.
pub fn simplify_body(b: &Body, head: &[String], sem: Semantics) -> Body {
    let mut ps: Vec<Product> = b.0.iter().filter_map(|p| simplify_product(p, head, sem)).collect();
    if sem == Semantics::Set {
        let mut seen = BTreeSet::new();
        ps.retain(|p| seen.insert(p.clone()));
    }
    'merge: loop {
        for i in 0..ps.len() {
            for j in i + 1..ps.len() {
                if let Some(m) = merge_ranges(&ps[i], &ps[j]) {
                    if let Some(m) = simplify_product(&m, head, sem) {
                        ps[i] = m;
                    }
                    ps.remove(j);
                    continue 'merge;
                }
            }
        }
        break;
    }
    ps.sort();
    Body(ps)
}

pub fn simplify_rule(r: &Rule) -> Rule {
    Rule::new(r.head.clone(), simplify_body(&r.body, &r.head.args, Semantics::of(r.head.kind)))
}

// ---------------------------------------------------------------------------
// Inlining and fixpoint

/// Substitutes every rule whose tensor is not in `keep` into its uses and
/// removes it.
pub fn inline_program(p: &Program, keep: &BTreeSet<String>) -> crate::Result<Program> {
    let mut defs: Vec<Rule> = Vec::new();
    let mut out = Program { sizes: p.sizes.clone(), dims: p.dims.clone(), rules: Vec::new() };
    for r in &p.rules {
        let mut r = r.clone();
        for d in &defs {
            if r.body.accesses().any(|a| a.same_target(&d.head)) {
                r = substitute(&r, d)?;
            }
        }
        if keep.contains(&r.head.tensor) {
            out.rules.push(r);
        } else {
            defs.push(bound_head(r, &p.dims));
        }
    }
    Ok(out)
}

/// Adds the declared box of the head to every product that does not read
/// a head variable, so the definition keeps its extent once inlined.
fn bound_head(r: Rule, dims: &BTreeMap<String, Vec<IndexExpr>>) -> Rule {
    let Some(d) = dims.get(&r.head.tensor).filter(|_| r.head.kind == Kind::Plain) else { return r };
    let products = r
        .body
        .0
        .iter()
        .map(|p| {
            let mut p = p.clone();
            for (v, e) in r.head.args.iter().zip(d) {
                if !p.accesses().any(|a| a.args.contains(v)) {
                    p.0.extend(box_factors(std::slice::from_ref(v), std::slice::from_ref(e)));
                }
            }
            p
        })
        .collect();
    Rule::new(r.head.clone(), Body(products))
}

/// inline, simplify, canonicalize until nothing changes. Returns the
/// program and the number of rounds.
pub fn optimize_program(p: &Program, keep: &BTreeSet<String>) -> crate::Result<(Program, usize)> {
    let mut cur = p.clone();
    for round in 1..=MAX_ITERATIONS {
        let mut next = inline_program(&cur, keep)?;
        for r in &mut next.rules {
            *r = canonicalize_rule(&simplify_rule(r));
        }
        if next == cur {
            return Ok((next, round));
        }
        cur = next;
    }
    Ok((cur, MAX_ITERATIONS))
}

/// Simplifies and canonicalizes a single rule.
pub fn optimize_rule(r: &Rule) -> Rule {
    let mut cur = r.clone();
    for _ in 0..MAX_ITERATIONS {
        let next = canonicalize_rule(&simplify_rule(&cur));
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::{parse_body, parse_rule};

    fn sz() -> Vec<String> {
        ["n", "m", "r"].iter().map(|s| s.to_string()).collect()
    }

    fn body(s: &str) -> Body {
        parse_body(s, &sz()).unwrap()
    }

    fn simp(head: &[&str], s: &str) -> Body {
        let h: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        canonicalize(&simplify_body(&body(s), &h, Semantics::Set))
    }

    #[test]
    fn rmd_simplification() {
        let got = simp(&["i", "j"], "(i = r) * (0 <= j < n) * (k = j) * (0 <= k < n)");
        assert_eq!(got, canonicalize(&body("(i = r) * (0 <= j < n)")));
    }

    #[test]
    fn uhs_contradiction() {
        let got = simp(&["i", "j"], "(0 <= i <= j < n) * (0 <= j < i < n) * (i' = j) * (j' = i)");
        assert!(got.is_empty());
    }

    #[test]
    fn empty_factor_product_never_materializes() {
        let r = parse_rule("T:R(a,b) := Z:U(a) * (a <= b) * (0 <= a < n)", &sz()).unwrap();
        let z = Rule::new(Access::new("Z", Kind::Unique, ["a"]), Body::empty());
        let inl = substitute(&r, &z).unwrap();
        assert!(simplify_rule(&inl).body.is_empty());
    }

    #[test]
    fn dttv_simplification() {
        let got = simp(&["i", "j", "k"], "(i = j) * (j = k) * (0 <= i < m) * (0 <= j < m) * (0 <= k < m) * (0 <= k < m)");
        assert_eq!(got, canonicalize(&body("(i = j) * (j = k) * (0 <= i < m)")));
        let got = simp(&["i", "j"], "(i = j) * (j = k) * (0 <= i < m)");
        assert_eq!(got, canonicalize(&body("(i = j) * (0 <= i < m)")));
    }

    #[test]
    fn direction_and_permutation() {
        assert_eq!(canonicalize(&body("(j >= i)")), body("(i <= j)"));
        let a = canonicalize(&body("A(i) * (i < n) * (0 <= i)"));
        let b = canonicalize(&body("(0 <= i) * A(i) * (i < n)"));
        assert_eq!(a, b);
        assert_eq!(canonicalize(&a), a);
    }

    #[test]
    fn chains_print_in_order() {
        let c = canonicalize(&body("(j' = i) * (i' = j) * (i < n) * (j < i) * (0 <= j)"));
        assert_eq!(c.to_string(), "(0 <= j < i < n) * (i' = j) * (i = j')");
        let c = canonicalize(&body("(j < n) * (i <= j) * (0 <= i)"));
        assert_eq!(c.to_string(), "(0 <= i <= j < n)");
    }

    #[test]
    fn numeric_mode_keeps_repeated_accesses_and_products() {
        let h = vec!["i".to_string()];
        let b = body("A(i) * A(i) + A(i) * A(i)");
        let s = simplify_body(&b, &h, Semantics::Numeric);
        assert_eq!(s.0.len(), 2);
        assert_eq!(s.0[0].0.len(), 2);
        let s = simplify_body(&b, &h, Semantics::Set);
        assert_eq!(s, body("A(i)"));
    }

    #[test]
    fn radix_and_sharing() {
        let got = simp(
            &["i", "j"],
            "(i' = j') * (0 <= i' < n) * (i'' = j'') * (0 <= i'' < m) * (i = i' * m + i'') * (j = j' * m + j'')",
        );
        assert_eq!(got, canonicalize(&body("(i = j) * (0 <= i < n * m)")));
    }

    #[test]
    fn adjacent_ranges_merge() {
        let got = simp(&["i", "j"], "(i = j) * (0 <= i < n) + (i = j) * (n <= i < n + m)");
        assert_eq!(got, canonicalize(&body("(i = j) * (0 <= i < n + m)")));
    }

    #[test]
    fn existentials_drop_in_set_mode() {
        let got = simp(&["i"], "(0 <= i < n) * (0 <= k < m)");
        assert_eq!(got, canonicalize(&body("(0 <= i < n)")));
        let got = simp(&["i"], "(0 <= i <= k < n)");
        assert_eq!(got, canonicalize(&body("(0 <= i < n)")));
    }

    #[test]
    fn inlining_with_keep() {
        let p = crate::textio::parse(
            "@size n\n@dim M(n,n)\n@dim N(n,n)\nM:U(i,j) := (0 <= i <= j < n)\nN:U(i,j) := (0 <= i <= j < n)\nN:R(i,j,i',j') := (0 <= j < i < n) * (i' = j) * (j' = i)\nM:R(i,j,i',j') := 0\nA:U(i,j) := M:U(i,j) * N:U(i,j) + M:U(i,j) * N:R(i,j,i',j') + M:R(i,j,i',j') * N:U(i,j)\n",
        )
        .unwrap();
        let keep = BTreeSet::from(["A".to_string()]);
        let (out, rounds) = optimize_program(&p, &keep).unwrap();
        assert_eq!(out.rules.len(), 1);
        assert!(rounds < 10);
        assert_eq!(out.rules[0].body, canonicalize(&body("(0 <= i <= j < n)")));
        let all: BTreeSet<String> = ["M", "N", "A"].iter().map(|s| s.to_string()).collect();
        assert_eq!(inline_program(&p, &all).unwrap(), p);
    }
}
