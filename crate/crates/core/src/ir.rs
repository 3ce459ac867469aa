//! Sum-of-products rule IR.
//!
//! A [`Program`] is an ordered list of [`Rule`]s. Each rule defines one
//! access (a plain tensor, a compressed tensor, a unique set or a
//! redundancy map) as a sum of products of factors, where a factor is
//! either another access or an integer comparison between index
//! expressions. The empty sum is the empty relation / the zero tensor.
//!
//! Size constants (`n`, `m`, fixed indices such as `r`) are [`IndexExpr::Sym`]
//! and are never free variables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
            ArithOp::Mod => "%",
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul | ArithOp::Div | ArithOp::Mod => 2,
        }
    }

    /// Floor division; modulo is the nonnegative remainder.
    pub fn apply(self, a: i64, b: i64) -> Option<i64> {
        match self {
            ArithOp::Add => a.checked_add(b),
            ArithOp::Sub => a.checked_sub(b),
            ArithOp::Mul => a.checked_mul(b),
            ArithOp::Div => {
                if b == 0 {
                    return None;
                }
                let q = a / b;
                if a % b != 0 && ((a < 0) != (b < 0)) {
                    Some(q - 1)
                } else {
                    Some(q)
                }
            }
            ArithOp::Mod => {
                if b == 0 {
                    None
                } else {
                    Some(a.rem_euclid(b))
                }
            }
        }
    }
}

/// Integer index expression.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IndexExpr {
    Var(String),
    /// Named size constant, bound to an integer only at evaluation time.
    Sym(String),
    Const(i64),
    Arith(ArithOp, Box<IndexExpr>, Box<IndexExpr>),
}

impl IndexExpr {
    pub fn var(name: impl Into<String>) -> Self {
        IndexExpr::Var(name.into())
    }

    pub fn sym(name: impl Into<String>) -> Self {
        IndexExpr::Sym(name.into())
    }

    pub fn arith(op: ArithOp, lhs: IndexExpr, rhs: IndexExpr) -> Self {
        IndexExpr::Arith(op, Box::new(lhs), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: IndexExpr) -> Self {
        Self::arith(ArithOp::Add, self, rhs)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: IndexExpr) -> Self {
        Self::arith(ArithOp::Sub, self, rhs)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: IndexExpr) -> Self {
        Self::arith(ArithOp::Mul, self, rhs)
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            IndexExpr::Var(v) => {
                out.insert(v.clone());
            }
            IndexExpr::Sym(_) | IndexExpr::Const(_) => {}
            IndexExpr::Arith(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn collect_syms(&self, out: &mut BTreeSet<String>) {
        match self {
            IndexExpr::Sym(s) => {
                out.insert(s.clone());
            }
            IndexExpr::Var(_) | IndexExpr::Const(_) => {}
            IndexExpr::Arith(_, a, b) => {
                a.collect_syms(out);
                b.collect_syms(out);
            }
        }
    }

    pub fn mentions(&self, var: &str) -> bool {
        match self {
            IndexExpr::Var(v) => v == var,
            IndexExpr::Sym(_) | IndexExpr::Const(_) => false,
            IndexExpr::Arith(_, a, b) => a.mentions(var) || b.mentions(var),
        }
    }

    pub fn has_vars(&self) -> bool {
        match self {
            IndexExpr::Var(_) => true,
            IndexExpr::Sym(_) | IndexExpr::Const(_) => false,
            IndexExpr::Arith(_, a, b) => a.has_vars() || b.has_vars(),
        }
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Self {
        match self {
            IndexExpr::Var(v) => IndexExpr::Var(map.get(v).cloned().unwrap_or_else(|| v.clone())),
            IndexExpr::Arith(op, a, b) => Self::arith(*op, a.rename(map), b.rename(map)),
            other => other.clone(),
        }
    }

    /// Replaces every occurrence of variable `var` with `with`.
    pub fn replace_var(&self, var: &str, with: &IndexExpr) -> Self {
        match self {
            IndexExpr::Var(v) if v == var => with.clone(),
            IndexExpr::Arith(op, a, b) => {
                Self::arith(*op, a.replace_var(var, with), b.replace_var(var, with))
            }
            other => other.clone(),
        }
    }

    /// Evaluates with the given lookups; `None` on an unbound name or a
    /// division by zero.
    pub fn eval(
        &self,
        var: &dyn Fn(&str) -> Option<i64>,
        sym: &dyn Fn(&str) -> Option<i64>,
    ) -> Option<i64> {
        match self {
            IndexExpr::Var(v) => var(v),
            IndexExpr::Sym(s) => sym(s),
            IndexExpr::Const(c) => Some(*c),
            IndexExpr::Arith(op, a, b) => op.apply(a.eval(var, sym)?, b.eval(var, sym)?),
        }
    }

    pub fn eval_sizes(&self, sizes: &BTreeMap<String, i64>) -> Option<i64> {
        self.eval(&|_| None, &|s| sizes.get(s).copied())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }

    /// The operator obtained by swapping the two sides.
    pub fn flipped(self) -> Self {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Comparison {
    pub lhs: IndexExpr,
    pub op: CmpOp,
    pub rhs: IndexExpr,
}

impl Comparison {
    pub fn new(lhs: IndexExpr, op: CmpOp, rhs: IndexExpr) -> Self {
        Comparison { lhs, op, rhs }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.lhs.collect_vars(&mut out);
        self.rhs.collect_vars(&mut out);
        out
    }

    pub fn mentions(&self, var: &str) -> bool {
        self.lhs.mentions(var) || self.rhs.mentions(var)
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Self {
        Comparison::new(self.lhs.rename(map), self.op, self.rhs.rename(map))
    }

    pub fn replace_var(&self, var: &str, with: &IndexExpr) -> Self {
        Comparison::new(
            self.lhs.replace_var(var, with),
            self.op,
            self.rhs.replace_var(var, with),
        )
    }

    pub fn eval(
        &self,
        var: &dyn Fn(&str) -> Option<i64>,
        sym: &dyn Fn(&str) -> Option<i64>,
    ) -> Option<bool> {
        Some(self.op.holds(self.lhs.eval(var, sym)?, self.rhs.eval(var, sym)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Plain,
    Compressed,
    Unique,
    Redundancy,
}

impl Kind {
    pub fn is_set(self) -> bool {
        matches!(self, Kind::Unique | Kind::Redundancy)
    }

    pub fn marker(self) -> &'static str {
        match self {
            Kind::Plain => "",
            Kind::Compressed => ":C",
            Kind::Unique => ":U",
            Kind::Redundancy => ":R",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Access {
    pub tensor: String,
    pub kind: Kind,
    pub args: Vec<String>,
}

impl Access {
    pub fn new<S: Into<String>>(tensor: impl Into<String>, kind: Kind, args: impl IntoIterator<Item = S>) -> Self {
        Access {
            tensor: tensor.into(),
            kind,
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn plain<S: Into<String>>(tensor: impl Into<String>, args: impl IntoIterator<Item = S>) -> Self {
        Self::new(tensor, Kind::Plain, args)
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Self {
        Access {
            tensor: self.tensor.clone(),
            kind: self.kind,
            args: self
                .args
                .iter()
                .map(|a| map.get(a).cloned().unwrap_or_else(|| a.clone()))
                .collect(),
        }
    }

    pub fn same_target(&self, other: &Access) -> bool {
        self.tensor == other.tensor && self.kind == other.kind
    }
}

/// Accesses sort before comparisons.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Factor {
    Access(Access),
    Cmp(Comparison),
}

impl Factor {
    pub fn cmp(lhs: IndexExpr, op: CmpOp, rhs: IndexExpr) -> Self {
        Factor::Cmp(Comparison::new(lhs, op, rhs))
    }

    pub fn as_access(&self) -> Option<&Access> {
        match self {
            Factor::Access(a) => Some(a),
            Factor::Cmp(_) => None,
        }
    }

    pub fn as_cmp(&self) -> Option<&Comparison> {
        match self {
            Factor::Cmp(c) => Some(c),
            Factor::Access(_) => None,
        }
    }

    pub fn mentions(&self, var: &str) -> bool {
        match self {
            Factor::Access(a) => a.args.iter().any(|x| x == var),
            Factor::Cmp(c) => c.mentions(var),
        }
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Self {
        match self {
            Factor::Access(a) => Factor::Access(a.rename(map)),
            Factor::Cmp(c) => Factor::Cmp(c.rename(map)),
        }
    }
}

/// A product of factors. The empty product is the multiplicative unit.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Product(pub Vec<Factor>);

impl Product {
    pub fn new(factors: Vec<Factor>) -> Self {
        Product(factors)
    }

    pub fn accesses(&self) -> impl Iterator<Item = &Access> {
        self.0.iter().filter_map(Factor::as_access)
    }

    pub fn comparisons(&self) -> impl Iterator<Item = &Comparison> {
        self.0.iter().filter_map(Factor::as_cmp)
    }

    /// Variables in order of first occurrence.
    pub fn ordered_vars(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for f in &self.0 {
            let vars: Vec<String> = match f {
                Factor::Access(a) => a.args.clone(),
                Factor::Cmp(c) => {
                    let mut v = Vec::new();
                    collect_ordered(&c.lhs, &mut v);
                    collect_ordered(&c.rhs, &mut v);
                    v
                }
            };
            for v in vars {
                if seen.insert(v.clone()) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Self {
        Product(self.0.iter().map(|f| f.rename(map)).collect())
    }

    pub fn mul(&self, other: &Product) -> Product {
        let mut f = self.0.clone();
        f.extend(other.0.iter().cloned());
        Product(f)
    }
}

fn collect_ordered(e: &IndexExpr, out: &mut Vec<String>) {
    match e {
        IndexExpr::Var(v) => {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        IndexExpr::Arith(_, a, b) => {
            collect_ordered(a, out);
            collect_ordered(b, out);
        }
        _ => {}
    }
}

/// A sum of products. The empty sum is the empty set / zero tensor.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Body(pub Vec<Product>);

impl Body {
    pub fn empty() -> Self {
        Body(Vec::new())
    }

    /// The body `1`: one empty product.
    pub fn unit() -> Self {
        Body(vec![Product::default()])
    }

    pub fn single(factors: Vec<Factor>) -> Self {
        Body(vec![Product(factors)])
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add(&self, other: &Body) -> Body {
        let mut p = self.0.clone();
        p.extend(other.0.iter().cloned());
        Body(p)
    }

    /// Distributes the product of two sums.
    pub fn mul(&self, other: &Body) -> Body {
        let mut out = Vec::with_capacity(self.0.len() * other.0.len());
        for a in &self.0 {
            for b in &other.0 {
                out.push(a.mul(b));
            }
        }
        Body(out)
    }

    pub fn mul_factors(&self, factors: &[Factor]) -> Body {
        self.mul(&Body::single(factors.to_vec()))
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Self {
        Body(self.0.iter().map(|p| p.rename(map)).collect())
    }

    pub fn accesses(&self) -> impl Iterator<Item = &Access> {
        self.0.iter().flat_map(|p| p.accesses())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub head: Access,
    pub body: Body,
}

impl Rule {
    pub fn new(head: Access, body: Body) -> Self {
        Rule { head, body }
    }

    /// Every variable occurring in head or body.
    pub fn all_vars(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.head.args.iter().cloned().collect();
        for p in &self.body.0 {
            for f in &p.0 {
                match f {
                    Factor::Access(a) => out.extend(a.args.iter().cloned()),
                    Factor::Cmp(c) => out.extend(c.vars()),
                }
            }
        }
        out
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Self {
        Rule::new(self.head.rename(map), self.body.rename(map))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    /// Declared size constants, in declaration order.
    pub sizes: Vec<String>,
    /// Dimension table: tensor name to one size expression per mode.
    pub dims: BTreeMap<String, Vec<IndexExpr>>,
    pub rules: Vec<Rule>,
}

impl Program {
    pub fn defines(&self, tensor: &str, kind: Kind) -> Option<usize> {
        self.rules
            .iter()
            .position(|r| r.head.tensor == tensor && r.head.kind == kind)
    }

    pub fn rule(&self, tensor: &str, kind: Kind) -> Option<&Rule> {
        self.defines(tensor, kind).map(|i| &self.rules[i])
    }

    /// Tensors accessed as `Plain` without a defining rule.
    pub fn inputs(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rules {
            for a in r.body.accesses() {
                if matches!(a.kind, Kind::Plain | Kind::Compressed)
                    && self.defines(&a.tensor, Kind::Plain).is_none()
                    && !out.contains(&a.tensor)
                {
                    out.push(a.tensor.clone());
                }
            }
        }
        out
    }

    /// Plain tensors that are defined but never used by a later rule.
    pub fn outputs(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, r) in self.rules.iter().enumerate() {
            if r.head.kind != Kind::Plain {
                continue;
            }
            let used = self.rules[i + 1..]
                .iter()
                .any(|s| s.body.accesses().any(|a| a.tensor == r.head.tensor && !a.kind.is_set()));
            if !used {
                out.push(r.head.tensor.clone());
            }
        }
        out
    }

    /// Order of a tensor: from its declared dims, else from its accesses.
    pub fn order_of(&self, tensor: &str) -> Option<usize> {
        if let Some(d) = self.dims.get(tensor) {
            return Some(d.len());
        }
        let mut from_r = None;
        for r in &self.rules {
            for a in std::iter::once(&r.head).chain(r.body.accesses()) {
                if a.tensor != tensor {
                    continue;
                }
                match a.kind {
                    Kind::Redundancy => {
                        if from_r.is_none() {
                            from_r = Some(a.args.len() / 2);
                        }
                    }
                    _ => return Some(a.args.len()),
                }
            }
        }
        from_r
    }
}

/// Symbolic structure of one tensor: its unique set, its redundancy map
/// and its dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructureInfo {
    pub unique: Rule,
    pub redundancy: Rule,
    pub dims: Vec<IndexExpr>,
}

impl StructureInfo {
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn tensor(&self) -> &str {
        &self.unique.head.tensor
    }

    /// Default head variables: `i, j, k, l` up to order four, `x1..xk`
    /// beyond, and their primed copies for the redundancy map.
    pub fn head_vars(k: usize) -> (Vec<String>, Vec<String>) {
        let x: Vec<String> = if k <= 4 {
            ["i", "j", "k", "l"][..k].iter().map(|s| s.to_string()).collect()
        } else {
            (0..k).map(|p| format!("x{}", p + 1)).collect()
        };
        let xp: Vec<String> = x.iter().map(|v| format!("{v}'")).collect();
        (x, xp)
    }

    /// Builds a structure for `tensor` from bodies over the default head
    /// variables of [`StructureInfo::head_vars`].
    pub fn from_bodies(tensor: &str, dims: Vec<IndexExpr>, unique: Body, redundancy: Body) -> Self {
        let (x, _) = Self::head_vars(dims.len());
        Self::with_vars(tensor, dims, &x, unique, redundancy)
    }

    /// Builds a structure whose unique set has head `x` and whose
    /// redundancy map has head `x ++ x'`.
    pub fn with_vars(tensor: &str, dims: Vec<IndexExpr>, x: &[String], unique: Body, redundancy: Body) -> Self {
        let x = x.to_vec();
        let mut r_args = x.clone();
        r_args.extend(x.iter().map(|v| format!("{v}'")));
        StructureInfo {
            unique: Rule::new(Access::new(tensor, Kind::Unique, x), unique),
            redundancy: Rule::new(Access::new(tensor, Kind::Redundancy, r_args), redundancy),
            dims,
        }
    }

    /// The whole box as unique set, no redundancy.
    pub fn dense(tensor: &str, dims: Vec<IndexExpr>) -> Self {
        let (x, _) = Self::head_vars(dims.len());
        let factors = box_factors(&x, &dims);
        Self::from_bodies(tensor, dims, Body::single(factors), Body::empty())
    }

    /// Renames the tensor in both heads.
    pub fn renamed(&self, tensor: &str) -> Self {
        let mut s = self.clone();
        s.unique.head.tensor = tensor.to_string();
        s.redundancy.head.tensor = tensor.to_string();
        s
    }
}

/// `(0 <= x_p < d_p)` for every position.
pub fn box_factors(vars: &[String], dims: &[IndexExpr]) -> Vec<Factor> {
    let mut out = Vec::new();
    for (v, d) in vars.iter().zip(dims) {
        out.push(Factor::cmp(IndexExpr::Const(0), CmpOp::Le, IndexExpr::var(v.clone())));
        out.push(Factor::cmp(IndexExpr::var(v.clone()), CmpOp::Lt, d.clone()));
    }
    out
}

// ---------------------------------------------------------------------------
// Free variables

pub trait FreeVars {
    fn free_vars(&self) -> BTreeSet<String>;
}

impl FreeVars for IndexExpr {
    fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }
}

impl FreeVars for Comparison {
    fn free_vars(&self) -> BTreeSet<String> {
        self.vars()
    }
}

impl FreeVars for Access {
    fn free_vars(&self) -> BTreeSet<String> {
        self.args.iter().cloned().collect()
    }
}

impl FreeVars for Factor {
    fn free_vars(&self) -> BTreeSet<String> {
        match self {
            Factor::Access(a) => a.free_vars(),
            Factor::Cmp(c) => c.free_vars(),
        }
    }
}

impl FreeVars for Product {
    fn free_vars(&self) -> BTreeSet<String> {
        self.0.iter().flat_map(|f| f.free_vars()).collect()
    }
}

/// A sum binds only the variables bound by every summand.
impl FreeVars for Body {
    fn free_vars(&self) -> BTreeSet<String> {
        let mut it = self.0.iter();
        let Some(first) = it.next() else {
            return BTreeSet::new();
        };
        it.fold(first.free_vars(), |acc, p| {
            acc.intersection(&p.free_vars()).cloned().collect()
        })
    }
}

// ---------------------------------------------------------------------------
// Well-formedness

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    UnboundHeadVar(String),
    ArityMismatch { tensor: String, expected: usize, found: usize },
    RedundancyArity { tensor: String, expected: usize, found: usize },
    UndefinedTensor(String),
    UseBeforeDefinition(String),
    Recursive(String),
    DuplicateDefinition(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub rule: usize,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {}: ", self.rule)?;
        match &self.kind {
            DiagnosticKind::UnboundHeadVar(v) => write!(f, "head variable `{v}` is not bound by the body"),
            DiagnosticKind::ArityMismatch { tensor, expected, found } => {
                write!(f, "`{tensor}` has order {expected} but is accessed with {found} indices")
            }
            DiagnosticKind::RedundancyArity { tensor, expected, found } => {
                write!(f, "redundancy map of `{tensor}` needs {expected} indices, found {found}")
            }
            DiagnosticKind::UndefinedTensor(t) => write!(f, "`{t}` is neither an input nor defined"),
            DiagnosticKind::UseBeforeDefinition(t) => write!(f, "`{t}` is used before its definition"),
            DiagnosticKind::Recursive(t) => write!(f, "`{t}` is defined recursively"),
            DiagnosticKind::DuplicateDefinition(t) => write!(f, "`{t}` is defined more than once"),
        }
    }
}

fn access_label(a: &Access) -> String {
    format!("{}{}", a.tensor, a.kind.marker())
}

pub fn check_well_formed(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut defined: BTreeSet<(String, Kind)> = BTreeSet::new();
    for (idx, rule) in p.rules.iter().enumerate() {
        let mut push = |kind| diags.push(Diagnostic { rule: idx, kind });

        for prod in &rule.body.0 {
            let fv = prod.free_vars();
            for v in &rule.head.args {
                if !fv.contains(v) {
                    push(DiagnosticKind::UnboundHeadVar(v.clone()));
                }
            }
        }

        for a in std::iter::once(&rule.head).chain(rule.body.accesses()) {
            let Some(k) = p.order_of(&a.tensor) else { continue };
            if a.kind == Kind::Redundancy {
                if a.args.len() != 2 * k {
                    push(DiagnosticKind::RedundancyArity {
                        tensor: a.tensor.clone(),
                        expected: 2 * k,
                        found: a.args.len(),
                    });
                }
            } else if a.args.len() != k {
                push(DiagnosticKind::ArityMismatch {
                    tensor: a.tensor.clone(),
                    expected: k,
                    found: a.args.len(),
                });
            }
        }

        for a in rule.body.accesses() {
            let key = (a.tensor.clone(), a.kind);
            if a.same_target(&rule.head) {
                push(DiagnosticKind::Recursive(access_label(a)));
            } else if defined.contains(&key) {
            } else if p.rules[idx + 1..].iter().any(|r| r.head.same_target(a)) {
                push(DiagnosticKind::UseBeforeDefinition(access_label(a)));
            } else {
                let plain_known = p.dims.contains_key(&a.tensor)
                    || defined.contains(&(a.tensor.clone(), Kind::Plain));
                let ok = match a.kind {
                    Kind::Plain | Kind::Compressed => plain_known,
                    Kind::Unique | Kind::Redundancy => false,
                };
                if !ok {
                    push(DiagnosticKind::UndefinedTensor(access_label(a)));
                }
            }
        }

        let key = (rule.head.tensor.clone(), rule.head.kind);
        if !defined.insert(key) {
            push(DiagnosticKind::DuplicateDefinition(access_label(&rule.head)));
        }
    }
    diags
}

// ---------------------------------------------------------------------------
// Renaming and substitution

/// `base0`, `base1`, ... : the first name not in `taken`.
pub fn fresh_name(base: &str, taken: &BTreeSet<String>) -> String {
    (0..)
        .map(|c| format!("{base}{c}"))
        .find(|n| !taken.contains(n))
        .expect("unbounded counter")
}

/// Renames every variable of `r` that occurs in `avoid` to a fresh name.
pub fn alpha_rename(r: &Rule, avoid: &BTreeSet<String>) -> Rule {
    let vars = r.all_vars();
    let mut taken: BTreeSet<String> = vars.union(avoid).cloned().collect();
    let mut map = BTreeMap::new();
    for v in vars.iter().filter(|v| avoid.contains(*v)) {
        let fresh = fresh_name(v, &taken);
        taken.insert(fresh.clone());
        map.insert(v.clone(), fresh);
    }
    if map.is_empty() {
        r.clone()
    } else {
        r.rename(&map)
    }
}

/// Body of `def` with its head variables bound to `args`. Every other
/// variable of `def` is renamed away from `avoid`, which must contain the
/// variables of the context the body is spliced into. Newly introduced
/// names are added to `avoid`.
pub fn instantiate(def: &Rule, args: &[String], avoid: &mut BTreeSet<String>) -> Result<Body> {
    if def.head.args.len() != args.len() {
        return Err(Error::Substitution(format!(
            "`{}` has {} head indices but is accessed with {}",
            access_label(&def.head),
            def.head.args.len(),
            args.len()
        )));
    }
    let mut all_avoid = avoid.clone();
    all_avoid.extend(args.iter().cloned());
    let renamed = alpha_rename(def, &all_avoid);
    avoid.extend(renamed.all_vars());

    let mut map: BTreeMap<String, String> = BTreeMap::new();
    let mut extra = Vec::new();
    for (h, a) in renamed.head.args.iter().zip(args) {
        match map.get(h) {
            // repeated head variable: the bound arguments must coincide
            Some(prev) if prev != a => extra.push(Factor::cmp(
                IndexExpr::var(a.clone()),
                CmpOp::Eq,
                IndexExpr::var(prev.clone()),
            )),
            Some(_) => {}
            None => {
                map.insert(h.clone(), a.clone());
            }
        }
    }
    let body = renamed.body.rename(&map);
    Ok(if extra.is_empty() { body } else { body.mul_factors(&extra) })
}

/// Inlines `def` into `target`: every body occurrence of `def`'s head
/// access is replaced by `def`'s body and the result is distributed back
/// into sum-of-products form.
pub fn substitute(target: &Rule, def: &Rule) -> Result<Rule> {
    let mut avoid = target.all_vars();
    let mut products = Vec::new();
    for prod in &target.body.0 {
        let mut partial = Body::unit();
        for f in &prod.0 {
            match f {
                Factor::Access(a) if a.same_target(&def.head) => {
                    let inst = instantiate(def, &a.args, &mut avoid)?;
                    partial = partial.mul(&inst);
                }
                other => partial = partial.mul_factors(std::slice::from_ref(other)),
            }
        }
        products.extend(partial.0);
    }
    Ok(Rule::new(target.head.clone(), Body(products)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> IndexExpr {
        IndexExpr::var(s)
    }

    fn acc(t: &str, args: &[&str]) -> Factor {
        Factor::Access(Access::plain(t, args.iter().copied()))
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn free_vars_of_product_is_union() {
        let body = Body::single(vec![acc("B", &["i", "j", "l"]), acc("C", &["l", "k"])]);
        assert_eq!(body.free_vars(), set(&["i", "j", "k", "l"]));
    }

    #[test]
    fn free_vars_of_sum_is_intersection() {
        let n = IndexExpr::sym("n");
        let p1 = Product(vec![
            Factor::cmp(IndexExpr::Const(0), CmpOp::Le, v("i")),
            Factor::cmp(v("i"), CmpOp::Lt, n.clone()),
        ]);
        let p2 = Product(vec![
            Factor::cmp(IndexExpr::Const(0), CmpOp::Le, v("j")),
            Factor::cmp(v("j"), CmpOp::Lt, n),
        ]);
        assert!(Body(vec![p1, p2]).free_vars().is_empty());
    }

    #[test]
    fn free_vars_of_comparison() {
        let c = Comparison::new(
            v("x"),
            CmpOp::Eq,
            v("y").mul(IndexExpr::Const(2)).add(IndexExpr::Const(1)),
        );
        assert_eq!(c.free_vars(), set(&["x", "y"]));
    }

    #[test]
    fn free_vars_monotone_under_extension() {
        let p = Product(vec![acc("A", &["i"])]);
        let q = p.mul(&Product(vec![acc("B", &["j"])]));
        assert!(p.free_vars().is_subset(&q.free_vars()));
    }

    #[test]
    fn division_floors_and_modulo_is_nonnegative() {
        assert_eq!(ArithOp::Div.apply(7, 2), Some(3));
        assert_eq!(ArithOp::Div.apply(-7, 2), Some(-4));
        assert_eq!(ArithOp::Mod.apply(-7, 2), Some(1));
        assert_eq!(ArithOp::Div.apply(1, 0), None);
    }

    #[test]
    fn unbound_head_var_is_reported() {
        let mut p = Program::default();
        p.dims.insert("B".into(), vec![IndexExpr::sym("n")]);
        p.rules.push(Rule::new(Access::plain("A", ["i", "j"]), Body::single(vec![acc("B", &["i"])])));
        let d = check_well_formed(&p);
        assert_eq!(d, vec![Diagnostic { rule: 0, kind: DiagnosticKind::UnboundHeadVar("j".into()) }]);
    }

    #[test]
    fn redundancy_arity_is_checked() {
        let mut p = Program::default();
        let n = IndexExpr::sym("n");
        p.dims.insert("T".into(), vec![n.clone(), n]);
        p.rules.push(Rule::new(
            Access::new("T", Kind::Redundancy, ["i", "j", "ip"]),
            Body::single(vec![Factor::cmp(v("i"), CmpOp::Eq, v("ip")), Factor::cmp(v("j"), CmpOp::Eq, v("j"))]),
        ));
        let d = check_well_formed(&p);
        assert!(d.iter().any(|d| matches!(
            d.kind,
            DiagnosticKind::RedundancyArity { expected: 4, found: 3, .. }
        )));
    }

    #[test]
    fn use_before_definition_and_recursion() {
        let mut p = Program::default();
        p.rules.push(Rule::new(Access::plain("A", ["i"]), Body::single(vec![acc("B", &["i"])])));
        p.rules.push(Rule::new(Access::plain("B", ["i"]), Body::single(vec![acc("B", &["i"])])));
        let kinds: Vec<_> = check_well_formed(&p).into_iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::UseBeforeDefinition("B".into())));
        assert!(kinds.contains(&DiagnosticKind::Recursive("B".into())));
    }

    #[test]
    fn alpha_rename_avoids_and_is_consistent() {
        let r = Rule::new(
            Access::new("S", Kind::Unique, ["i", "j"]),
            Body::single(vec![Factor::cmp(v("i"), CmpOp::Le, v("j"))]),
        );
        let renamed = alpha_rename(&r, &set(&["i"]));
        assert_eq!(renamed.head.args, vec!["i0".to_string(), "j".to_string()]);
        assert_eq!(renamed.body, Body::single(vec![Factor::cmp(v("i0"), CmpOp::Le, v("j"))]));
        assert_eq!(alpha_rename(&r, &set(&["x"])), r);
    }

    #[test]
    fn substitute_inlines_with_head_binding() {
        // B_U(i,j,k) := (i=j)*(j=k)*(0<=i<m) inlined into A_U(i,j) := B_U(i,j,k)
        let m = IndexExpr::sym("m");
        let def = Rule::new(
            Access::new("B", Kind::Unique, ["i", "j", "k"]),
            Body::single(vec![
                Factor::cmp(v("i"), CmpOp::Eq, v("j")),
                Factor::cmp(v("j"), CmpOp::Eq, v("k")),
                Factor::cmp(IndexExpr::Const(0), CmpOp::Le, v("i")),
                Factor::cmp(v("i"), CmpOp::Lt, m),
            ]),
        );
        let target = Rule::new(
            Access::new("A", Kind::Unique, ["i", "j"]),
            Body::single(vec![Factor::Access(Access::new("B", Kind::Unique, ["i", "j", "k"]))]),
        );
        let out = substitute(&target, &def).unwrap();
        assert_eq!(out.body, def.body);
    }

    #[test]
    fn substitute_empty_def_annihilates_product() {
        let def = Rule::new(Access::new("D", Kind::Unique, ["j"]), Body::empty());
        let target = Rule::new(
            Access::new("A", Kind::Unique, ["j"]),
            Body(vec![
                Product(vec![Factor::Access(Access::new("D", Kind::Unique, ["j"]))]),
                Product(vec![Factor::cmp(v("j"), CmpOp::Eq, IndexExpr::Const(0))]),
            ]),
        );
        let out = substitute(&target, &def).unwrap();
        assert_eq!(out.body.0.len(), 1);
    }

    #[test]
    fn substitute_distributes_and_renames_body_only_vars() {
        // def: D(i) := E(i,k) + F(i); target: A(i,k) := D(i) * G(k)
        let def = Rule::new(
            Access::plain("D", ["i"]),
            Body(vec![Product(vec![acc("E", &["i", "k"])]), Product(vec![acc("F", &["i"])])]),
        );
        let target = Rule::new(
            Access::plain("A", ["i", "k"]),
            Body::single(vec![acc("D", &["i"]), acc("G", &["k"])]),
        );
        let out = substitute(&target, &def).unwrap();
        assert_eq!(out.body.0.len(), 2);
        assert_eq!(out.body.0[0], Product(vec![acc("E", &["i", "k0"]), acc("G", &["k"])]));
        assert_eq!(out.body.0[1], Product(vec![acc("F", &["i"]), acc("G", &["k"])]));
    }

    #[test]
    fn substitute_arity_mismatch_errors() {
        let def = Rule::new(Access::plain("D", ["i", "j"]), Body::single(vec![acc("E", &["i", "j"])]));
        let target = Rule::new(Access::plain("A", ["i"]), Body::single(vec![acc("D", &["i"])]));
        assert!(matches!(substitute(&target, &def), Err(Error::Substitution(_))));
    }
}
