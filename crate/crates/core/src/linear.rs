//! Linear normal forms of index expressions and a difference-constraint
//! solver over one product's comparisons.
//!
//! An expression is read as `Σ c·atom + k` where an atom is a variable, a
//! size constant, or any non-additive subterm (`i' * m`, `i / 2`, ...).

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{ArithOp, CmpOp, Comparison, IndexExpr};

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lin {
    pub terms: BTreeMap<IndexExpr, i64>,
    pub constant: i64,
}

pub(crate) fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Factors of a product atom.
pub(crate) fn factors(t: &IndexExpr) -> Vec<IndexExpr> {
    match t {
        IndexExpr::Arith(ArithOp::Mul, a, b) => {
            let mut f = factors(a);
            f.extend(factors(b));
            f
        }
        _ => vec![t.clone()],
    }
}

/// Product atom of sorted factors, left-nested; `1` when empty.
pub(crate) fn monomial(mut f: Vec<IndexExpr>) -> IndexExpr {
    f.sort();
    let mut it = f.into_iter();
    let Some(first) = it.next() else { return IndexExpr::Const(1) };
    it.fold(first, |acc, x| IndexExpr::arith(ArithOp::Mul, acc, x))
}

impl Lin {
    pub fn constant(c: i64) -> Self {
        Lin { terms: BTreeMap::new(), constant: c }
    }

    pub fn atom(e: IndexExpr) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(e, 1);
        Lin { terms, constant: 0 }
    }

    pub fn of(e: &IndexExpr) -> Self {
        match e {
            IndexExpr::Var(_) | IndexExpr::Sym(_) => Lin::atom(e.clone()),
            IndexExpr::Const(c) => Lin::constant(*c),
            IndexExpr::Arith(op, a, b) => {
                let (la, lb) = (Lin::of(a), Lin::of(b));
                match op {
                    ArithOp::Add => la.add(&lb),
                    ArithOp::Sub => la.sub(&lb),
                    ArithOp::Mul => match (la.as_const(), lb.as_const()) {
                        (Some(x), _) => lb.scale(x),
                        (_, Some(y)) => la.scale(y),
                        _ => {
                            let mut out = Lin::constant(la.constant * lb.constant);
                            for (t, c) in &la.terms {
                                out = out.add(&Lin::atom(t.clone()).scale(c * lb.constant));
                            }
                            for (t, c) in &lb.terms {
                                out = out.add(&Lin::atom(t.clone()).scale(c * la.constant));
                            }
                            for (x, cx) in &la.terms {
                                for (y, cy) in &lb.terms {
                                    let mut f = factors(x);
                                    f.extend(factors(y));
                                    out = out.add(&Lin::atom(monomial(f)).scale(cx * cy));
                                }
                            }
                            out
                        }
                    },
                    ArithOp::Div | ArithOp::Mod => {
                        if let (Some(x), Some(y)) = (la.as_const(), lb.as_const()) {
                            if let Some(v) = op.apply(x, y) {
                                return Lin::constant(v);
                            }
                        }
                        Lin::atom(IndexExpr::arith(*op, la.to_expr(), lb.to_expr()))
                    }
                }
            }
        }
    }

    pub fn as_const(&self) -> Option<i64> {
        self.terms.is_empty().then_some(self.constant)
    }

    pub fn add(&self, o: &Lin) -> Lin {
        let mut out = self.clone();
        for (t, c) in &o.terms {
            *out.terms.entry(t.clone()).or_insert(0) += c;
        }
        out.terms.retain(|_, c| *c != 0);
        out.constant += o.constant;
        out
    }

    pub fn sub(&self, o: &Lin) -> Lin {
        self.add(&o.scale(-1))
    }

    pub fn scale(&self, k: i64) -> Lin {
        if k == 0 {
            return Lin::default();
        }
        Lin {
            terms: self.terms.iter().map(|(t, c)| (t.clone(), c * k)).collect(),
            constant: self.constant * k,
        }
    }

    pub fn coeff_of_var(&self, v: &str) -> i64 {
        self.terms.get(&IndexExpr::var(v)).copied().unwrap_or(0)
    }

    pub fn has_vars(&self) -> bool {
        self.terms.keys().any(|t| t.has_vars())
    }

    /// Splits into the part with variables and the variable-free part.
    pub fn split_vars(&self) -> (Lin, Lin) {
        let mut v = Lin::default();
        let mut r = Lin::constant(self.constant);
        for (t, c) in &self.terms {
            if t.has_vars() {
                v.terms.insert(t.clone(), *c);
            } else {
                r.terms.insert(t.clone(), *c);
            }
        }
        (v, r)
    }

    pub fn to_expr(&self) -> IndexExpr {
        let term = |t: &IndexExpr, c: i64| {
            if c == 1 {
                t.clone()
            } else {
                IndexExpr::arith(ArithOp::Mul, IndexExpr::Const(c), t.clone())
            }
        };
        let mut acc: Option<IndexExpr> = None;
        for (t, c) in self.terms.iter().filter(|(_, c)| **c > 0) {
            let e = term(t, *c);
            acc = Some(match acc {
                None => e,
                Some(a) => IndexExpr::arith(ArithOp::Add, a, e),
            });
        }
        for (t, c) in self.terms.iter().filter(|(_, c)| **c < 0) {
            acc = Some(match acc {
                None => term(t, *c),
                Some(a) => IndexExpr::arith(ArithOp::Sub, a, term(t, -c)),
            });
        }
        match acc {
            None => IndexExpr::Const(self.constant),
            Some(a) if self.constant > 0 => IndexExpr::arith(ArithOp::Add, a, IndexExpr::Const(self.constant)),
            Some(a) if self.constant < 0 => IndexExpr::arith(ArithOp::Sub, a, IndexExpr::Const(-self.constant)),
            Some(a) => a,
        }
    }
}

/// Rewrites an expression into its linear normal form.
pub fn normalize_expr(e: &IndexExpr) -> IndexExpr {
    Lin::of(e).to_expr()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Norm {
    True,
    False,
    Cmp(Comparison),
}

fn lower_to_le(l: Lin, op: CmpOp) -> Lin {
    // every inequality becomes `l' <= 0`
    match op {
        CmpOp::Le => l,
        CmpOp::Lt => l.add(&Lin::constant(1)),
        CmpOp::Ge => l.scale(-1),
        CmpOp::Gt => l.scale(-1).add(&Lin::constant(1)),
        _ => unreachable!(),
    }
}

/// `t <= k` for var-free `k`, written with the strictness that keeps the
/// constant smallest.
fn upper(t: IndexExpr, k: Lin) -> Comparison {
    if k.constant < 0 || k.terms.is_empty() {
        Comparison::new(t, CmpOp::Lt, k.add(&Lin::constant(1)).to_expr())
    } else {
        Comparison::new(t, CmpOp::Le, k.to_expr())
    }
}

/// `m <= t`.
fn lower(m: Lin, t: IndexExpr) -> Comparison {
    if m.constant > 0 {
        Comparison::new(m.sub(&Lin::constant(1)).to_expr(), CmpOp::Lt, t)
    } else {
        Comparison::new(m.to_expr(), CmpOp::Le, t)
    }
}

fn unit_vars(l: &Lin) -> Vec<(String, i64)> {
    l.terms
        .iter()
        .filter_map(|(t, c)| match t {
            IndexExpr::Var(v) if c.abs() == 1 => Some((v.clone(), *c)),
            _ => None,
        })
        .collect()
}

/// Normal form of a comparison: constant comparisons fold, coefficients
/// are divided by their gcd, and the result is oriented as
/// `x op rhs` / `lhs op x` (one variable), `a op b + c` (two unit
/// variables of opposite sign) or `vars op rest` otherwise, with only
/// `<` and `<=` as inequalities.
pub fn normalize_cmp(c: &Comparison) -> Norm {
    let l = Lin::of(&c.lhs).sub(&Lin::of(&c.rhs));
    if let Some(k) = l.as_const() {
        return if c.op.holds(k, 0) { Norm::True } else { Norm::False };
    }
    match c.op {
        CmpOp::Eq | CmpOp::Ne => {
            let g = l.terms.values().fold(0, |a, b| gcd(a, *b));
            let mut l = l;
            if l.constant % g != 0 {
                return if c.op == CmpOp::Eq { Norm::False } else { Norm::True };
            }
            if g > 1 {
                l.terms.values_mut().for_each(|v| *v /= g);
                l.constant /= g;
            }
            let (vars, rest) = l.split_vars();
            if vars.terms.is_empty() {
                // size-only equation, e.g. `n = m`
                let (a, b) = split_signs(&l);
                return Norm::Cmp(Comparison::new(a.to_expr(), c.op, b.to_expr()));
            }
            let units = unit_vars(&vars);
            if let Some((x, cx)) = units.first() {
                // x = -(l - cx*x)/cx
                let others = l.sub(&Lin::atom(IndexExpr::var(x.clone())).scale(*cx));
                let rhs = others.scale(-cx);
                return Norm::Cmp(Comparison::new(IndexExpr::var(x.clone()), c.op, rhs.to_expr()));
            }
            let sign = vars.terms.values().next().map(|v| v.signum()).unwrap_or(1);
            Norm::Cmp(Comparison::new(
                vars.scale(sign).to_expr(),
                c.op,
                rest.scale(-sign).to_expr(),
            ))
        }
        _ => {
            let mut l = lower_to_le(l, c.op);
            let g = l.terms.values().fold(0, |a, b| gcd(a, *b));
            if g > 1 {
                l.terms.values_mut().for_each(|v| *v /= g);
                l.constant = l.constant.div_euclid(g) + i64::from(l.constant.rem_euclid(g) != 0);
            }
            let (vars, rest) = l.split_vars();
            if vars.terms.is_empty() {
                let (a, b) = split_signs(&l);
                // a - b <= 0
                return Norm::Cmp(upper_general(a, b));
            }
            let k = rest.scale(-1);
            let units = unit_vars(&vars);
            if vars.terms.len() == 1 && units.len() == 1 {
                let (x, cx) = &units[0];
                let x = IndexExpr::var(x.clone());
                return Norm::Cmp(if *cx > 0 { upper(x, k) } else { lower(k.scale(-1), x) });
            }
            if vars.terms.len() == 2 && units.len() == 2 && units[0].1 != units[1].1 {
                let (a, b) = if units[0].1 > 0 { (&units[0].0, &units[1].0) } else { (&units[1].0, &units[0].0) };
                // a - b <= k  ->  a <= b + k
                let rhs = Lin::atom(IndexExpr::var(b.clone())).add(&k);
                return Norm::Cmp(if k.constant < 0 {
                    Comparison::new(IndexExpr::var(a.clone()), CmpOp::Lt, rhs.add(&Lin::constant(1)).to_expr())
                } else {
                    Comparison::new(IndexExpr::var(a.clone()), CmpOp::Le, rhs.to_expr())
                });
            }
            let sign = vars.terms.values().next().map(|v| v.signum()).unwrap_or(1);
            Norm::Cmp(if sign > 0 {
                upper(vars.to_expr(), k)
            } else {
                lower(k.scale(-1), vars.scale(-1).to_expr())
            })
        }
    }
}

pub(crate) fn split_signs(l: &Lin) -> (Lin, Lin) {
    let mut a = Lin::default();
    let mut b = Lin::default();
    for (t, c) in &l.terms {
        if *c > 0 {
            a.terms.insert(t.clone(), *c);
        } else {
            b.terms.insert(t.clone(), -c);
        }
    }
    if l.constant > 0 {
        a.constant = l.constant;
    } else {
        b.constant = -l.constant;
    }
    (a, b)
}

fn upper_general(a: Lin, b: Lin) -> Comparison {
    // a <= b, written `a < b + 1` when b has a positive constant
    if b.constant > 0 {
        Comparison::new(a.to_expr(), CmpOp::Lt, b.add(&Lin::constant(1)).to_expr())
    } else {
        Comparison::new(a.to_expr(), CmpOp::Le, b.to_expr())
    }
}

/// Solves `c` for `var` when `var` occurs as a unit-coefficient term and
/// nowhere else: returns `(op, rhs)` with `var op rhs`.
pub fn isolate(c: &Comparison, var: &str) -> Option<(CmpOp, IndexExpr)> {
    let l = Lin::of(&c.lhs).sub(&Lin::of(&c.rhs));
    let cx = l.coeff_of_var(var);
    if cx.abs() != 1 {
        return None;
    }
    let x = IndexExpr::var(var);
    let others = l.sub(&Lin::atom(x).scale(cx));
    if others.terms.keys().any(|t| t.mentions(var)) {
        return None;
    }
    // cx*var + others op 0
    let rhs = others.scale(-cx).to_expr();
    let op = if cx > 0 { c.op } else { c.op.flipped() };
    Some((op, rhs))
}

// ---------------------------------------------------------------------------
// Difference constraints

const ZERO: usize = 0;

/// Shortest-path closure of the difference constraints `u - v <= c` found
/// in a set of comparisons. Size constants and products of sizes are
/// assumed to be at least 1.
#[derive(Clone, Debug)]
pub struct DiffGraph {
    nodes: BTreeMap<IndexExpr, usize>,
    dist: Vec<Vec<Option<i64>>>,
}

/// One difference constraint `u - v <= c` (node `None` is zero).
type Edge = (Option<IndexExpr>, Option<IndexExpr>, i64);

fn is_size_atom(e: &IndexExpr) -> bool {
    match e {
        IndexExpr::Sym(_) => true,
        IndexExpr::Arith(ArithOp::Mul, a, b) => is_size_atom(a) && is_size_atom(b),
        _ => false,
    }
}

fn is_node(e: &IndexExpr) -> bool {
    matches!(e, IndexExpr::Var(_)) || is_size_atom(e)
}

/// `l <= 0` as difference constraints, when representable.
fn le_edges(l: &Lin) -> Option<Vec<Edge>> {
    if !l.terms.keys().all(is_node) {
        return None;
    }
    let t: Vec<(&IndexExpr, i64)> = l.terms.iter().map(|(e, c)| (e, *c)).collect();
    match t.as_slice() {
        [] => None,
        [(u, 1)] => Some(vec![(Some((*u).clone()), None, -l.constant)]),
        [(u, -1)] => Some(vec![(None, Some((*u).clone()), -l.constant)]),
        [(a, ca), (b, cb)] if *ca == 1 && *cb == -1 => Some(vec![(Some((*a).clone()), Some((*b).clone()), -l.constant)]),
        [(a, ca), (b, cb)] if *ca == -1 && *cb == 1 => Some(vec![(Some((*b).clone()), Some((*a).clone()), -l.constant)]),
        _ => None,
    }
}

fn cmp_edges(c: &Comparison) -> Option<Vec<Edge>> {
    let l = Lin::of(&c.lhs).sub(&Lin::of(&c.rhs));
    match c.op {
        CmpOp::Eq => {
            let mut e = le_edges(&l)?;
            e.extend(le_edges(&l.scale(-1))?);
            Some(e)
        }
        CmpOp::Ne => None,
        op => le_edges(&lower_to_le(l, op)),
    }
}

impl DiffGraph {
    pub fn new<'a>(cmps: impl IntoIterator<Item = &'a Comparison>) -> Self {
        Self::with_atoms(cmps, &[])
    }

    /// Like [`DiffGraph::new`], also registering the size atoms of
    /// `extra` without adding their constraints.
    pub fn with_atoms<'a>(cmps: impl IntoIterator<Item = &'a Comparison>, extra: &[&Comparison]) -> Self {
        let cmps: Vec<&Comparison> = cmps.into_iter().collect();
        let mut nodes: BTreeMap<IndexExpr, usize> = BTreeMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut sizes: BTreeSet<IndexExpr> = BTreeSet::new();
        for c in cmps.iter().chain(extra) {
            for side in [&c.lhs, &c.rhs] {
                for t in Lin::of(side).terms.keys() {
                    if is_size_atom(t) {
                        sizes.insert(t.clone());
                    }
                }
            }
        }
        for c in &cmps {
            if let Some(e) = cmp_edges(c) {
                edges.extend(e);
            }
        }
        for s in sizes {
            edges.push((None, Some(s), -1));
        }
        for (u, v, _) in &edges {
            for n in [u, v].into_iter().flatten() {
                let k = nodes.len() + 1;
                nodes.entry(n.clone()).or_insert(k);
            }
        }
        let n = nodes.len() + 1;
        let mut dist = vec![vec![None; n]; n];
        for (i, row) in dist.iter_mut().enumerate() {
            row[i] = Some(0);
        }
        let idx = |x: &Option<IndexExpr>| x.as_ref().map(|e| nodes[e]).unwrap_or(ZERO);
        for (u, v, c) in &edges {
            // u - v <= c : edge v -> u with weight c
            let (iu, iv) = (idx(u), idx(v));
            let cur = &mut dist[iv][iu];
            *cur = Some(cur.map_or(*c, |d| d.min(*c)));
        }
        for k in 0..n {
            for i in 0..n {
                let Some(dik) = dist[i][k] else { continue };
                for j in 0..n {
                    if let Some(dkj) = dist[k][j] {
                        let s = dik.saturating_add(dkj);
                        if dist[i][j].map_or(true, |d| s < d) {
                            dist[i][j] = Some(s);
                        }
                    }
                }
            }
        }
        DiffGraph { nodes, dist }
    }

    pub fn infeasible(&self) -> bool {
        (0..self.dist.len()).any(|i| self.dist[i][i].is_some_and(|d| d < 0))
    }

    fn node(&self, e: &Option<IndexExpr>) -> Option<usize> {
        match e {
            None => Some(ZERO),
            Some(x) => self.nodes.get(x).copied(),
        }
    }

    /// Tightest known `c` with `u - v <= c`.
    fn bound(&self, u: &Option<IndexExpr>, v: &Option<IndexExpr>) -> Option<i64> {
        if u == v {
            return Some(0);
        }
        self.dist[self.node(v)?][self.node(u)?]
    }

    fn edges_hold(&self, edges: &[Edge]) -> bool {
        edges
            .iter()
            .all(|(u, v, c)| self.bound(u, v).is_some_and(|b| b <= *c))
    }

    /// Whether `c` follows from the constraints.
    pub fn implies(&self, c: &Comparison) -> bool {
        if self.infeasible() {
            return true;
        }
        let l = Lin::of(&c.lhs).sub(&Lin::of(&c.rhs));
        if let Some(k) = l.as_const() {
            return c.op.holds(k, 0);
        }
        if c.op == CmpOp::Ne {
            let lt = le_edges(&l.add(&Lin::constant(1)));
            let gt = le_edges(&l.scale(-1).add(&Lin::constant(1)));
            return lt.is_some_and(|e| self.edges_hold(&e)) || gt.is_some_and(|e| self.edges_hold(&e));
        }
        match cmp_edges(c) {
            Some(e) => self.edges_hold(&e),
            None => false,
        }
    }

    /// Whether `c` is false under the constraints.
    pub fn refutes(&self, c: &Comparison) -> bool {
        if self.infeasible() {
            return true;
        }
        let l = Lin::of(&c.lhs).sub(&Lin::of(&c.rhs));
        if let Some(k) = l.as_const() {
            return !c.op.holds(k, 0);
        }
        let neg = |op| Comparison::new(c.lhs.clone(), op, c.rhs.clone());
        match c.op {
            CmpOp::Eq => self.implies(&neg(CmpOp::Ne)),
            CmpOp::Ne => self.implies(&neg(CmpOp::Eq)),
            CmpOp::Lt => self.implies(&neg(CmpOp::Ge)),
            CmpOp::Le => self.implies(&neg(CmpOp::Gt)),
            CmpOp::Gt => self.implies(&neg(CmpOp::Le)),
            CmpOp::Ge => self.implies(&neg(CmpOp::Lt)),
        }
    }
}

/// Whether `c` follows from `others` (disequalities among `others` are
/// ignored).
pub fn implied_by<'a>(others: impl IntoIterator<Item = &'a Comparison>, c: &Comparison) -> bool {
    DiffGraph::with_atoms(others.into_iter().filter(|o| o.op != CmpOp::Ne), &[c]).implies(c)
}

/// Whether a conjunction of comparisons is unsatisfiable, as far as the
/// difference constraints can tell.
pub fn contradictory(cmps: &[Comparison]) -> bool {
    let g = DiffGraph::new(cmps.iter().filter(|c| c.op != CmpOp::Ne));
    if g.infeasible() {
        return true;
    }
    cmps.iter().filter(|c| c.op == CmpOp::Ne).any(|c| g.refutes(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::{parse_body, parse_expr};

    fn sizes() -> Vec<String> {
        vec!["n".into(), "m".into()]
    }

    fn cmp(s: &str) -> Comparison {
        let b = parse_body(s, &sizes()).unwrap();
        b.0[0].0[0].as_cmp().unwrap().clone()
    }

    fn norm(s: &str) -> String {
        match normalize_cmp(&cmp(s)) {
            Norm::True => "true".into(),
            Norm::False => "false".into(),
            Norm::Cmp(c) => c.to_string(),
        }
    }

    #[test]
    fn size_only_bounds_keep_their_value() {
        assert_eq!(norm("(n <= 2)"), "(n < 3)");
        assert_eq!(norm("(0 >= n - 1)"), "(n < 2)");
        assert_eq!(norm("(n + 1 <= m)"), "(n + 1 <= m)");
    }

    #[test]
    fn linear_forms() {
        let e = parse_expr("2 * (i + 1) - i + n - 2", &sizes()).unwrap();
        assert_eq!(normalize_expr(&e).to_string(), "i + n");
        let e = parse_expr("m * i' + i''", &sizes()).unwrap();
        assert_eq!(normalize_expr(&e).to_string(), "i'' + i' * m");
    }

    #[test]
    fn comparison_normal_forms() {
        assert_eq!(norm("(j >= i)"), "(i <= j)");
        assert_eq!(norm("(i > j)"), "(j < i)");
        assert_eq!(norm("(n > i)"), "(i < n)");
        assert_eq!(norm("(i >= 0)"), "(0 <= i)");
        assert_eq!(norm("(i > 0)"), "(0 < i)");
        assert_eq!(norm("(i <= n - 1)"), "(i < n)");
        assert_eq!(norm("(2 * i < 5)"), "(i < 3)");
        assert_eq!(norm("(3 < 4)"), "true");
        assert_eq!(norm("(2 * i = 3)"), "false");
        assert_eq!(norm("(i = 2 * i' + 1)"), "(i = 2 * i' + 1)");
        assert_eq!(norm("(j' = i)"), "(i = j')");
    }

    #[test]
    fn normal_form_is_idempotent() {
        for s in ["(j >= i)", "(i > 0)", "(2 * i < 5)", "(i = 2 * i' + 1)", "(i + j < n)", "(n - i > j)"] {
            let once = match normalize_cmp(&cmp(s)) {
                Norm::Cmp(c) => c,
                _ => continue,
            };
            assert_eq!(normalize_cmp(&once), Norm::Cmp(once.clone()), "{s}");
        }
    }

    #[test]
    fn contradictions() {
        let b = parse_body("(0 <= i <= j < n) * (0 <= j < i < n)", &sizes()).unwrap();
        let cs: Vec<Comparison> = b.0[0].comparisons().cloned().collect();
        assert!(contradictory(&cs));
        let b = parse_body("(0 <= i < n) * (i = j) * (i != j)", &sizes()).unwrap();
        let cs: Vec<Comparison> = b.0[0].comparisons().cloned().collect();
        assert!(contradictory(&cs));
        let b = parse_body("(0 <= i < n) * (j < i)", &sizes()).unwrap();
        let cs: Vec<Comparison> = b.0[0].comparisons().cloned().collect();
        assert!(!contradictory(&cs));
    }

    #[test]
    fn sizes_are_positive() {
        let g = DiffGraph::new(std::iter::empty());
        assert!(!g.infeasible());
        let c = cmp("(n < 1)");
        assert!(contradictory(&[c]));
    }

    #[test]
    fn implication() {
        let b = parse_body("(0 <= i <= j < n)", &sizes()).unwrap();
        let cs: Vec<Comparison> = b.0[0].comparisons().cloned().collect();
        let g = DiffGraph::new(cs.iter());
        assert!(g.implies(&cmp("(0 <= j)")));
        assert!(g.implies(&cmp("(i < n)")));
        assert!(!g.implies(&cmp("(i < j)")));
        assert!(g.refutes(&cmp("(j < i)")));
    }

    #[test]
    fn isolation() {
        let c = cmp("(i = j * m + k)");
        assert_eq!(isolate(&c, "k").map(|(o, e)| (o, e.to_string())), Some((CmpOp::Eq, "i - j * m".into())));
        assert!(isolate(&c, "j").is_none());
        let c = cmp("(n - i > j)");
        assert_eq!(isolate(&c, "i").map(|(o, e)| (o, e.to_string())), Some((CmpOp::Lt, "n - j".into())));
    }
}
