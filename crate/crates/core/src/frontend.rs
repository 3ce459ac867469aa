//! Structured linear algebra: a small expression language, its
//! translation to rules, the catalog of matrix structures and the inverse
//! mapping from inferred structures back to catalog tags.
//!
//! ```text
//! @size n m
//! @input A(n, n)
//! @input x(n)
//! @struct A = S
//! y = A . x
//! K = (A kron A^T) dsum A
//! ```
//!
//! Operators, loosest first: `+`; then the left-associative binary
//! operators `.` (matrix product), `had` (elementwise), `kron` (Kronecker
//! / outer product), `dsum` (direct sum), `hcat`, `vcat`; then prefix
//! `vec`; then postfix `^T`.

use std::collections::BTreeMap;
use std::fmt;

pub use crate::ir::StructureInfo;
use crate::error::{Error, Result};
use crate::inference::simplify_info;
use crate::ir::*;
use crate::linear::Lin;
use crate::optimizer::canonicalize;
use crate::textio::{parse_body, parse_expr};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LAExpr {
    /// A named vector (one dim) or matrix (two dims).
    Input { name: String, dims: Vec<IndexExpr> },
    Transpose(Box<LAExpr>),
    Add(Box<LAExpr>, Box<LAExpr>),
    MatMul(Box<LAExpr>, Box<LAExpr>),
    Hadamard(Box<LAExpr>, Box<LAExpr>),
    Kronecker(Box<LAExpr>, Box<LAExpr>),
    DirectSum(Box<LAExpr>, Box<LAExpr>),
    Vectorize(Box<LAExpr>),
    ConcatH(Box<LAExpr>, Box<LAExpr>),
    ConcatV(Box<LAExpr>, Box<LAExpr>),
}

impl LAExpr {
    pub fn input(name: &str, dims: Vec<IndexExpr>) -> Self {
        LAExpr::Input { name: name.to_string(), dims }
    }

    pub fn t(self) -> Self {
        LAExpr::Transpose(Box::new(self))
    }

    pub fn add(self, o: LAExpr) -> Self {
        LAExpr::Add(Box::new(self), Box::new(o))
    }

    pub fn dot(self, o: LAExpr) -> Self {
        LAExpr::MatMul(Box::new(self), Box::new(o))
    }

    pub fn had(self, o: LAExpr) -> Self {
        LAExpr::Hadamard(Box::new(self), Box::new(o))
    }

    pub fn kron(self, o: LAExpr) -> Self {
        LAExpr::Kronecker(Box::new(self), Box::new(o))
    }

    pub fn dsum(self, o: LAExpr) -> Self {
        LAExpr::DirectSum(Box::new(self), Box::new(o))
    }

    pub fn vec(self) -> Self {
        LAExpr::Vectorize(Box::new(self))
    }

    pub fn hcat(self, o: LAExpr) -> Self {
        LAExpr::ConcatH(Box::new(self), Box::new(o))
    }

    pub fn vcat(self, o: LAExpr) -> Self {
        LAExpr::ConcatV(Box::new(self), Box::new(o))
    }
}

impl fmt::Display for LAExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bin = |f: &mut fmt::Formatter<'_>, a: &LAExpr, op: &str, b: &LAExpr| write!(f, "({a} {op} {b})");
        match self {
            LAExpr::Input { name, .. } => f.write_str(name),
            LAExpr::Transpose(e) => write!(f, "{e}^T"),
            LAExpr::Add(a, b) => bin(f, a, "+", b),
            LAExpr::MatMul(a, b) => bin(f, a, ".", b),
            LAExpr::Hadamard(a, b) => bin(f, a, "had", b),
            LAExpr::Kronecker(a, b) => bin(f, a, "kron", b),
            LAExpr::DirectSum(a, b) => bin(f, a, "dsum", b),
            LAExpr::Vectorize(e) => write!(f, "vec({e})"),
            LAExpr::ConcatH(a, b) => bin(f, a, "hcat", b),
            LAExpr::ConcatV(a, b) => bin(f, a, "vcat", b),
        }
    }
}

// ---------------------------------------------------------------------------
// Structure catalog

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StructureTag {
    /// General dense.
    G,
    /// Symmetric.
    S,
    /// Diagonal.
    D,
    /// Only row `r` is non-zero.
    Row(IndexExpr),
    /// Only column `c` is non-zero.
    Col(IndexExpr),
    /// Only the element `(r, c)` is non-zero.
    Singular(IndexExpr, IndexExpr),
    /// All zeros.
    Z,
    UpperTriangular,
    Custom,
}

impl fmt::Display for StructureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureTag::G => f.write_str("G"),
            StructureTag::S => f.write_str("S"),
            StructureTag::D => f.write_str("D"),
            StructureTag::Row(r) => write!(f, "Row({r})"),
            StructureTag::Col(c) => write!(f, "Col({c})"),
            StructureTag::Singular(r, c) => write!(f, "H({r}, {c})"),
            StructureTag::Z => f.write_str("Z"),
            StructureTag::UpperTriangular => f.write_str("UT"),
            StructureTag::Custom => f.write_str("Custom"),
        }
    }
}

/// Parses `G`, `S`, `D`, `Z`, `UT`, `Row(r)`, `Col(c)`, `H(r, c)`.
pub fn parse_tag(text: &str, sizes: &[String]) -> Result<StructureTag> {
    let text = text.trim();
    let err = || Error::Parse { line: 1, col: 1, msg: format!("unknown structure `{text}`") };
    let (name, args) = match text.find('(') {
        Some(p) if text.ends_with(')') => {
            let inner = &text[p + 1..text.len() - 1];
            let args = inner.split(',').map(|a| parse_expr(a.trim(), sizes)).collect::<Result<Vec<_>>>()?;
            (&text[..p], args)
        }
        _ => (text, Vec::new()),
    };
    Ok(match (name.trim(), &args[..]) {
        ("G", []) => StructureTag::G,
        ("S", []) => StructureTag::S,
        ("D", []) => StructureTag::D,
        ("Z", []) => StructureTag::Z,
        ("UT" | "UpperTriangular", []) => StructureTag::UpperTriangular,
        ("Row" | "R", [r]) => StructureTag::Row(r.clone()),
        ("Col" | "C", [c]) => StructureTag::Col(c.clone()),
        ("H" | "Singular", [r, c]) => StructureTag::Singular(r.clone(), c.clone()),
        _ => return Err(err()),
    })
}

fn same_extent(a: &IndexExpr, b: &IndexExpr) -> bool {
    Lin::of(a) == Lin::of(b)
}

fn in_range(v: &IndexExpr, hi: &IndexExpr) -> bool {
    match (Lin::of(v).as_const(), Lin::of(hi).as_const()) {
        (Some(v), Some(h)) => 0 <= v && v < h,
        (Some(v), None) => v >= 0,
        _ => true,
    }
}

/// The catalog template for `tag` at the given dims, simplified.
pub fn instantiate_structure(tensor: &str, tag: &StructureTag, dims: &[IndexExpr]) -> Result<StructureInfo> {
    let dims = dims.to_vec();
    let side = |msg: String| Err(Error::SideCondition(format!("{tag} for `{tensor}`: {msg}")));
    let names: Vec<String> = dims.iter().flat_map(|d| {
        let mut s = std::collections::BTreeSet::new();
        d.collect_syms(&mut s);
        s
    }).collect();
    let mut sizes = names;
    for e in match tag {
        StructureTag::Row(a) | StructureTag::Col(a) => vec![a.clone()],
        StructureTag::Singular(a, b) => vec![a.clone(), b.clone()],
        _ => vec![],
    } {
        let mut s = std::collections::BTreeSet::new();
        e.collect_syms(&mut s);
        sizes.extend(s);
    }
    let body = |text: String| parse_body(&text, &sizes);
    let (u, r) = match (tag, &dims[..]) {
        (StructureTag::G, _) => {
            let (x, _) = StructureInfo::head_vars(dims.len());
            (Body::single(box_factors(&x, &dims)), Body::empty())
        }
        (StructureTag::Z, _) => (Body::empty(), Body::empty()),
        (_, [m, n]) => match tag {
            StructureTag::D => {
                if !same_extent(m, n) {
                    return side(format!("needs a square matrix, got {m} x {n}"));
                }
                (body(format!("(0 <= i < {n}) * (i = j)"))?, Body::empty())
            }
            StructureTag::S => {
                if !same_extent(m, n) {
                    return side(format!("needs a square matrix, got {m} x {n}"));
                }
                (body(format!("(0 <= i <= j < {n})"))?, body(format!("(0 <= j < i < {n}) * (i' = j) * (j' = i)"))?)
            }
            StructureTag::UpperTriangular => (body(format!("(0 <= i <= j < {n}) * (i < {m})"))?, Body::empty()),
            StructureTag::Row(r) => {
                if !in_range(r, m) {
                    return side(format!("row {r} outside 0..{m}"));
                }
                (body(format!("(i = {r}) * (0 <= j < {n})"))?, Body::empty())
            }
            StructureTag::Col(c) => {
                if !in_range(c, n) {
                    return side(format!("column {c} outside 0..{n}"));
                }
                (body(format!("(0 <= i < {m}) * (j = {c})"))?, Body::empty())
            }
            StructureTag::Singular(r, c) => {
                if !in_range(r, m) || !in_range(c, n) {
                    return side(format!("element ({r}, {c}) outside {m} x {n}"));
                }
                (body(format!("(i = {r}) * (j = {c})"))?, Body::empty())
            }
            _ => return side("no template".into()),
        },
        _ => return side(format!("needs a matrix, got order {}", dims.len())),
    };
    Ok(simplify_info(&StructureInfo::from_bodies(tensor, dims, u, r)))
}

fn same_structure(a: &StructureInfo, b: &StructureInfo) -> bool {
    canonicalize(&a.unique.body) == canonicalize(&b.unique.body)
        && canonicalize(&a.redundancy.body) == canonicalize(&b.redundancy.body)
}

fn drop_size_facts(b: &Body) -> Body {
    let keep = |f: &Factor| f.as_cmp().map_or(true, |c| !c.vars().is_empty());
    Body(b.0.iter().map(|p| Product::new(p.0.iter().filter(|f| keep(f)).cloned().collect())).collect())
}

/// Matches a simplified structure against the catalog; `Custom` if no
/// template fits. Conditions on the sizes alone are ignored, so a
/// structure that only holds for large enough sizes still matches.
pub fn classify_structure(s: &StructureInfo) -> StructureTag {
    let mut s = simplify_info(s);
    s.unique.body = drop_size_facts(&s.unique.body);
    s.redundancy.body = drop_size_facts(&s.redundancy.body);
    let t = s.tensor().to_string();
    let mut candidates = vec![StructureTag::Z, StructureTag::G, StructureTag::D, StructureTag::S, StructureTag::UpperTriangular];
    if s.order() == 2 {
        let (x, _) = StructureInfo::head_vars(2);
        let mut fixed: [Option<IndexExpr>; 2] = [None, None];
        if let [p] = &s.unique.body.0[..] {
            for c in p.comparisons() {
                for (pos, v) in x.iter().enumerate() {
                    if c.op == CmpOp::Eq && c.lhs == IndexExpr::var(v.clone()) && !c.rhs.has_vars() {
                        fixed[pos] = Some(c.rhs.clone());
                    }
                }
            }
        }
        match fixed {
            [Some(r), Some(c)] => candidates.push(StructureTag::Singular(r, c)),
            [Some(r), None] => candidates.push(StructureTag::Row(r)),
            [None, Some(c)] => candidates.push(StructureTag::Col(c)),
            _ => {}
        }
    }
    for tag in candidates {
        if let Ok(tmpl) = instantiate_structure(&t, &tag, &s.dims) {
            if same_structure(&tmpl, &s) {
                return tag;
            }
        }
    }
    StructureTag::Custom
}

// ---------------------------------------------------------------------------
// Translation

/// A translated expression: the program, and for every named input its
/// declared structure.
#[derive(Clone, Debug)]
pub struct Translation {
    pub program: Program,
    pub structures: BTreeMap<String, StructureInfo>,
    /// Target names of the assignments, in order.
    pub outputs: Vec<String>,
}

struct Translator {
    rules: Vec<Rule>,
    dims: BTreeMap<String, Vec<IndexExpr>>,
    counter: usize,
}

fn acc(t: &str, args: &[&str]) -> Factor {
    Factor::Access(Access::plain(t, args.iter().map(|s| s.to_string())))
}

fn v(name: &str) -> IndexExpr {
    IndexExpr::var(name)
}

fn eq(a: IndexExpr, b: IndexExpr) -> Factor {
    Factor::cmp(a, CmpOp::Eq, b)
}

fn sum(a: &IndexExpr, b: &IndexExpr) -> IndexExpr {
    Lin::of(a).add(&Lin::of(b)).to_expr()
}

/// `hi * m + lo`
fn radix(hi: &str, m: &IndexExpr, lo: &str) -> IndexExpr {
    IndexExpr::arith(ArithOp::Add, IndexExpr::arith(ArithOp::Mul, v(hi), m.clone()), v(lo))
}

fn prod(a: &IndexExpr, b: &IndexExpr) -> IndexExpr {
    Lin::of(&IndexExpr::arith(ArithOp::Mul, a.clone(), b.clone())).to_expr()
}

impl Translator {
    fn shape_error(&self, what: &str, a: &[IndexExpr], b: &[IndexExpr]) -> Error {
        let show = |d: &[IndexExpr]| d.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" x ");
        Error::Shape(format!("{what}: {} vs {}", show(a), show(b)))
    }

    fn emit(&mut self, name: Option<&str>, head: &[&str], dims: Vec<IndexExpr>, body: Body) -> (String, Vec<IndexExpr>) {
        let t = match name {
            Some(n) => n.to_string(),
            None => {
                let n = format!("%t{}", self.counter);
                self.counter += 1;
                n
            }
        };
        self.rules.push(Rule::new(Access::plain(&t, head.iter().map(|s| s.to_string())), body));
        self.dims.insert(t.clone(), dims.clone());
        (t, dims)
    }

    fn node(&mut self, e: &LAExpr, name: Option<&str>) -> Result<(String, Vec<IndexExpr>)> {
        use LAExpr::*;
        let single = |f: Vec<Factor>| Body::single(f);
        match e {
            Input { name: n, dims } => {
                if !(1..=2).contains(&dims.len()) {
                    return Err(Error::Shape(format!("`{n}` must be a vector or a matrix")));
                }
                if let Some(prev) = self.dims.get(n) {
                    if prev != dims {
                        return Err(self.shape_error(&format!("`{n}` redeclared"), prev, dims));
                    }
                }
                self.dims.insert(n.clone(), dims.clone());
                match name {
                    Some(target) => {
                        let head: Vec<&str> = ["i", "j"][..dims.len()].to_vec();
                        Ok(self.emit(Some(target), &head, dims.clone(), single(vec![acc(n, &head)])))
                    }
                    None => Ok((n.clone(), dims.clone())),
                }
            }
            Transpose(a) => {
                let (a, d) = self.node(a, None)?;
                Ok(match &d[..] {
                    [m, n] => self.emit(name, &["i", "j"], vec![n.clone(), m.clone()], single(vec![acc(&a, &["j", "i"])])),
                    _ => self.emit(name, &["i"], d.clone(), single(vec![acc(&a, &["i"])])),
                })
            }
            Add(a, b) | Hadamard(a, b) => {
                let (a, da) = self.node(a, None)?;
                let (b, db) = self.node(b, None)?;
                if da.len() != db.len() || !da.iter().zip(&db).all(|(x, y)| same_extent(x, y)) {
                    return Err(self.shape_error("elementwise operands differ", &da, &db));
                }
                let head: Vec<&str> = ["i", "j"][..da.len()].to_vec();
                let body = if matches!(e, Add(..)) {
                    Body(vec![Product(vec![acc(&a, &head)]), Product(vec![acc(&b, &head)])])
                } else {
                    single(vec![acc(&a, &head), acc(&b, &head)])
                };
                Ok(self.emit(name, &head, da, body))
            }
            MatMul(a, b) => {
                let (a, da) = self.node(a, None)?;
                let (b, db) = self.node(b, None)?;
                let inner = (da.last().cloned(), db.first().cloned());
                if !matches!(&inner, (Some(x), Some(y)) if same_extent(x, y)) {
                    return Err(self.shape_error("inner dimensions differ", &da, &db));
                }
                Ok(match (da.len(), db.len()) {
                    (2, 2) => self.emit(name, &["i", "j"], vec![da[0].clone(), db[1].clone()], single(vec![acc(&a, &["i", "k"]), acc(&b, &["k", "j"])])),
                    (2, 1) => self.emit(name, &["i"], vec![da[0].clone()], single(vec![acc(&a, &["i", "k"]), acc(&b, &["k"])])),
                    (1, 2) => self.emit(name, &["j"], vec![db[1].clone()], single(vec![acc(&a, &["k"]), acc(&b, &["k", "j"])])),
                    _ => self.emit(name, &[], vec![], single(vec![acc(&a, &["i"]), acc(&b, &["i"])])),
                })
            }
            Kronecker(a, b) => {
                let (a, da) = self.node(a, None)?;
                let (b, db) = self.node(b, None)?;
                Ok(match (&da[..], &db[..]) {
                    ([m1, n1], [m2, n2]) => {
                        let body = single(vec![
                            acc(&a, &["i'", "j'"]),
                            acc(&b, &["i''", "j''"]),
                            eq(v("i"), radix("i'", m2, "i''")),
                            eq(v("j"), radix("j'", n2, "j''")),
                        ]);
                        self.emit(name, &["i", "j"], vec![prod(m1, m2), prod(n1, n2)], body)
                    }
                    ([m], [n]) => self.emit(name, &["i", "j"], vec![m.clone(), n.clone()], single(vec![acc(&a, &["i"]), acc(&b, &["j"])])),
                    _ => return Err(self.shape_error("kron needs two vectors or two matrices", &da, &db)),
                })
            }
            DirectSum(a, b) | ConcatH(a, b) | ConcatV(a, b) => {
                let (a, da) = self.node(a, None)?;
                let (b, db) = self.node(b, None)?;
                if da.len() != db.len() {
                    return Err(self.shape_error("operands differ in order", &da, &db));
                }
                let zero = IndexExpr::Const(0);
                // per-position offset of the second operand, and result dims
                let (offsets, dims): (Vec<IndexExpr>, Vec<IndexExpr>) = match (e, &da[..], &db[..]) {
                    (DirectSum(..), _, _) | (ConcatH(..) | ConcatV(..), [_], [_]) => {
                        (da.clone(), da.iter().zip(&db).map(|(x, y)| sum(x, y)).collect())
                    }
                    (ConcatH(..), [m1, n1], [m2, n2]) => {
                        if !same_extent(m1, m2) {
                            return Err(self.shape_error("hcat needs equal row counts", &da, &db));
                        }
                        (vec![zero.clone(), n1.clone()], vec![m1.clone(), sum(n1, n2)])
                    }
                    (ConcatV(..), [m1, n1], [m2, n2]) => {
                        if !same_extent(n1, n2) {
                            return Err(self.shape_error("vcat needs equal column counts", &da, &db));
                        }
                        (vec![m1.clone(), zero.clone()], vec![sum(m1, m2), n1.clone()])
                    }
                    _ => unreachable!(),
                };
                let (x, y): (&[&str], &[&str]) = if da.len() == 2 { (&["i", "j"], &["i'", "j'"]) } else { (&["i"], &["i'"]) };
                let mut second = vec![acc(&b, y)];
                for ((xv, yv), d) in x.iter().zip(y).zip(&offsets) {
                    second.push(eq(v(yv), Lin::of(&v(xv)).sub(&Lin::of(d)).to_expr()));
                }
                let body = Body(vec![Product(vec![acc(&a, x)]), Product(second)]);
                Ok(self.emit(name, x, dims, body))
            }
            Vectorize(a) => {
                let (a, d) = self.node(a, None)?;
                Ok(match &d[..] {
                    [m, n] => {
                        let body = single(vec![acc(&a, &["i'", "j'"]), eq(v("i"), radix("i'", n, "j'"))]);
                        self.emit(name, &["i"], vec![prod(m, n)], body)
                    }
                    _ => self.emit(name, &["i"], d.clone(), single(vec![acc(&a, &["i"])])),
                })
            }
        }
    }
}

fn collect_sizes(dims: &BTreeMap<String, Vec<IndexExpr>>) -> Vec<String> {
    let mut s = std::collections::BTreeSet::new();
    for d in dims.values().flatten() {
        d.collect_syms(&mut s);
    }
    s.into_iter().collect()
}

/// Translates one expression; the result tensor is named `target`.
/// Intermediates are named `%t0, %t1, ...`.
pub fn translate(e: &LAExpr, target: &str) -> Result<Program> {
    let mut t = Translator { rules: Vec::new(), dims: BTreeMap::new(), counter: 0 };
    t.node(e, Some(target))?;
    Ok(Program { sizes: collect_sizes(&t.dims), dims: t.dims, rules: t.rules })
}

/// A parsed LA source file.
#[derive(Clone, Debug, Default)]
pub struct LaProgram {
    pub sizes: Vec<String>,
    pub inputs: Vec<(String, Vec<IndexExpr>)>,
    pub structs: BTreeMap<String, StructureTag>,
    pub assigns: Vec<(String, LAExpr)>,
}

impl LaProgram {
    /// Translates every assignment into one program; declared structures
    /// are instantiated for the inputs.
    pub fn translate(&self) -> Result<Translation> {
        let mut t = Translator { rules: Vec::new(), dims: BTreeMap::new(), counter: 0 };
        for (name, dims) in &self.inputs {
            t.dims.insert(name.clone(), dims.clone());
        }
        let mut outputs = Vec::new();
        for (name, e) in &self.assigns {
            t.node(e, Some(name))?;
            outputs.push(name.clone());
        }
        let mut structures = BTreeMap::new();
        for (name, tag) in &self.structs {
            let dims = t.dims.get(name).ok_or_else(|| Error::MissingInput(name.clone()))?;
            structures.insert(name.clone(), instantiate_structure(name, tag, dims)?);
        }
        let mut sizes = self.sizes.clone();
        for s in collect_sizes(&t.dims) {
            if !sizes.contains(&s) {
                sizes.push(s);
            }
        }
        Ok(Translation { program: Program { sizes, dims: t.dims, rules: t.rules }, structures, outputs })
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Plus,
    Op(&'static str),
    Vec,
    Transpose,
}

fn lex(line: &str, lineno: usize) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let err = |col: usize, msg: String| Error::Parse { line: lineno, col: col + 1, msg };
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            '+' => {
                out.push(Tok::Plus);
                i += 1
            }
            '.' | '·' => {
                out.push(Tok::Op("."));
                i += 1
            }
            '⊙' => {
                out.push(Tok::Op("had"));
                i += 1
            }
            '⊗' => {
                out.push(Tok::Op("kron"));
                i += 1
            }
            '⊕' => {
                out.push(Tok::Op("dsum"));
                i += 1
            }
            '^' if chars.get(i + 1) == Some(&'T') => {
                out.push(Tok::Transpose);
                i += 2
            }
            c if c.is_alphabetic() || c == '_' || c == '%' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '%') {
                    i += 1;
                }
                let w: String = chars[start..i].iter().collect();
                out.push(match w.as_str() {
                    "had" => Tok::Op("had"),
                    "kron" => Tok::Op("kron"),
                    "dsum" => Tok::Op("dsum"),
                    "hcat" => Tok::Op("hcat"),
                    "vcat" => Tok::Op("vcat"),
                    "vec" => Tok::Vec,
                    _ => Tok::Ident(w),
                });
            }
            _ => return Err(err(i, format!("unexpected `{c}`"))),
        }
    }
    Ok(out)
}

struct ExprParser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    line: usize,
    env: &'a BTreeMap<String, Vec<IndexExpr>>,
}

impl ExprParser<'_> {
    fn err(&self, msg: String) -> Error {
        Error::Parse { line: self.line, col: self.pos + 1, msg }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn sum(&mut self) -> Result<LAExpr> {
        let mut e = self.mul()?;
        while self.peek() == Some(&Tok::Plus) {
            self.pos += 1;
            e = e.add(self.mul()?);
        }
        Ok(e)
    }

    fn mul(&mut self) -> Result<LAExpr> {
        let mut e = self.unary()?;
        while let Some(Tok::Op(op)) = self.peek().cloned() {
            self.pos += 1;
            let r = self.unary()?;
            e = match op {
                "." => e.dot(r),
                "had" => e.had(r),
                "kron" => e.kron(r),
                "dsum" => e.dsum(r),
                "hcat" => e.hcat(r),
                _ => e.vcat(r),
            };
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<LAExpr> {
        if self.peek() == Some(&Tok::Vec) {
            self.pos += 1;
            return Ok(self.unary()?.vec());
        }
        let mut e = self.atom()?;
        while self.peek() == Some(&Tok::Transpose) {
            self.pos += 1;
            e = e.t();
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<LAExpr> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.sum()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.err("expected `)`".into()));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Tok::Ident(n)) => {
                self.pos += 1;
                let dims = self.env.get(&n).ok_or_else(|| self.err(format!("unknown operand `{n}`")))?;
                Ok(LAExpr::input(&n, dims.clone()))
            }
            other => Err(self.err(format!("expected an operand, found {other:?}"))),
        }
    }
}

fn dims_of(e: &LAExpr) -> Result<Vec<IndexExpr>> {
    let p = translate(e, "%probe")?;
    Ok(p.dims["%probe"].clone())
}

/// Parses an LA source file (see the module docs).
pub fn parse_la(text: &str) -> Result<LaProgram> {
    let mut out = LaProgram::default();
    let mut env: BTreeMap<String, Vec<IndexExpr>> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: lineno, col: 1, msg };
        if let Some(rest) = line.strip_prefix("@size") {
            out.sizes.extend(rest.split_whitespace().map(|s| s.to_string()));
        } else if let Some(rest) = line.strip_prefix("@input") {
            let rest = rest.trim();
            let open = rest.find('(').ok_or_else(|| perr("expected `name(dims)`".into()))?;
            let name = rest[..open].trim().to_string();
            let inner = rest[open + 1..].strip_suffix(')').ok_or_else(|| perr("expected `)`".into()))?;
            let dims = inner
                .split(',')
                .map(|d| {
                    let e = parse_expr(d.trim(), &out.sizes)?;
                    if e.has_vars() {
                        return Err(perr(format!("`{}` is not a declared size", d.trim())));
                    }
                    Ok(e)
                })
                .collect::<Result<Vec<_>>>()?;
            env.insert(name.clone(), dims.clone());
            out.inputs.push((name, dims));
        } else if let Some(rest) = line.strip_prefix("@struct") {
            let (name, tag) = rest.split_once('=').ok_or_else(|| perr("expected `@struct A = TAG`".into()))?;
            let tag = parse_tag(tag, &out.sizes).map_err(|e| perr(e.to_string()))?;
            out.structs.insert(name.trim().to_string(), tag);
        } else if let Some((name, rhs)) = line.split_once('=') {
            let name = name.trim().to_string();
            let mut p = ExprParser { toks: lex(rhs, lineno)?, pos: 0, line: lineno, env: &env };
            let e = p.sum()?;
            if p.pos != p.toks.len() {
                return Err(p.err("trailing input".into()));
            }
            env.insert(name.clone(), dims_of(&e)?);
            out.assigns.push((name, e));
        } else {
            return Err(perr(format!("cannot parse `{line}`")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::print;

    fn sym(s: &str) -> IndexExpr {
        IndexExpr::sym(s)
    }

    #[test]
    fn transpose_swaps_indices() {
        let a = LAExpr::input("A", vec![sym("m"), sym("n")]);
        let p = translate(&a.t(), "T").unwrap();
        assert_eq!(p.rules[0].to_string(), "T(i,j) := A(j,i)");
        assert_eq!(p.dims["T"], vec![sym("n"), sym("m")]);
    }

    #[test]
    fn intermediates_are_numbered() {
        let a = LAExpr::input("A", vec![sym("n"), sym("n")]);
        let p = translate(&a.clone().dot(a.clone()).add(a.t()), "R").unwrap();
        let heads: Vec<&str> = p.rules.iter().map(|r| r.head.tensor.as_str()).collect();
        assert_eq!(heads, ["%t0", "%t1", "R"]);
        assert!(check_well_formed(&p).is_empty(), "{}", print(&p));
    }

    #[test]
    fn kronecker_multiplies() {
        let a = LAExpr::input("A", vec![sym("m"), sym("n")]);
        let b = LAExpr::input("B", vec![sym("p"), sym("q")]);
        let p = translate(&a.kron(b), "K").unwrap();
        assert_eq!(p.rules[0].to_string(), "K(i,j) := A(i',j') * B(i'',j'') * (i = i' * p + i'') * (j = j' * q + j'')");
        assert_eq!(p.dims["K"][0].to_string(), "m * p");
    }

    #[test]
    fn catalog_templates() {
        let n = vec![sym("n"), sym("n")];
        let s = instantiate_structure("A", &StructureTag::S, &n).unwrap();
        assert_eq!(s.unique.body.to_string(), "(0 <= i <= j < n)");
        let z = instantiate_structure("A", &StructureTag::Z, &n).unwrap();
        assert!(z.unique.body.is_empty() && z.redundancy.body.is_empty());
        let h = instantiate_structure("A", &StructureTag::Singular(IndexExpr::Const(2), IndexExpr::Const(3)), &[IndexExpr::Const(4), IndexExpr::Const(5)]).unwrap();
        assert_eq!(h.unique.body.to_string(), "(i = 2) * (j = 3)");
        let bad = instantiate_structure("A", &StructureTag::D, &[sym("m"), sym("n")]);
        assert!(matches!(bad, Err(Error::SideCondition(_))));
    }

    #[test]
    fn classify_round_trips_the_catalog() {
        let n = vec![sym("n"), sym("n")];
        for tag in [StructureTag::G, StructureTag::S, StructureTag::D, StructureTag::Z, StructureTag::UpperTriangular, StructureTag::Row(IndexExpr::Const(1)), StructureTag::Col(sym("c"))] {
            let s = instantiate_structure("A", &tag, &n).unwrap();
            assert_eq!(classify_structure(&s), tag);
        }
    }

    #[test]
    fn la_source_parses() {
        let src = "@size n\n@input A(n, n)\n@input x(n)\n@struct A = S\ny = A . x\nK = (A kron A^T) dsum A\n";
        let la = parse_la(src).unwrap();
        assert_eq!(la.assigns.len(), 2);
        let tr = la.translate().unwrap();
        assert_eq!(tr.outputs, ["y", "K"]);
        assert!(tr.structures.contains_key("A"));
        assert!(check_well_formed(&tr.program).is_empty());
        assert!(parse_la("@size n\n@input A(n, n)\nB = A . C\n").is_err());
    }
}
