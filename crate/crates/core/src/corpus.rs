//! Built-in programs: the covariance terms, the Table 1 style kernels, the
//! structure catalog used by the property suite and the structured linear
//! algebra classification suite.
//!
//! Every entry is plain `.stur` (or LA) text so it can be written to disk
//! and fed back through the CLI.

use crate::error::{Error, Result};
use crate::frontend::{parse_la, StructureTag};
use crate::interp::Sizes;
use crate::ir::Program;
use crate::textio::parse;

/// One named program.
#[derive(Clone, Debug)]
pub struct Entry {
    pub id: String,
    pub source: String,
}

impl Entry {
    fn new(id: &str, source: String) -> Self {
        Entry { id: id.to_string(), source }
    }

    pub fn program(&self) -> Result<Program> {
        parse(&self.source)
    }

    /// Binds `n` and the fixed coordinates `I`, `J` used by the kernels.
    pub fn sizes(&self, n: i64) -> Sizes {
        let p = match self.program() {
            Ok(p) => p,
            Err(_) => return Sizes::new(),
        };
        p.sizes
            .iter()
            .map(|s| {
                let v = match s.as_str() {
                    "I" => 1.min(n - 1).max(0),
                    "J" => 2.min(n - 1).max(0),
                    _ => n,
                };
                (s.clone(), v)
            })
            .collect()
    }
}

const M1: &str = "M1(i, j) := f(i) * f(j)\n";
const M2: &str = "M2(i, c) := f(i) * f(j) * f(k) * (c = j * n + k)\n";
const M3: &str = "M3(a, b) := f(i) * f(j) * f(k) * f(l) * (a = i * n + j) * (b = k * n + l)\n";

fn cov(head: &str, dims: &str, rule: &str) -> String {
    format!("@size n\n@dim f(n)\n@dim {head}({dims})\n{rule}")
}

/// Covariance terms of polynomial regression over one feature vector `f`.
pub fn covariance() -> Vec<Entry> {
    vec![
        Entry::new("M1", cov("M1", "n, n", M1)),
        Entry::new("M2", cov("M2", "n, n * n", M2)),
        Entry::new("M3", cov("M3", "n * n, n * n", M3)),
    ]
}

const M4: &str = "M4(i, c) := f(i) * f(j) * f(k) * f(l) * (c = j * n * n + k * n + l)\n";
const M5: &str = "M5(a, c) := f(i) * f(j) * f(k) * f(l) * f(o) * (a = i * n + j) * (c = k * n * n + l * n + o)\n";
const M6: &str =
    "M6(a, c) := f(i) * f(j) * f(h) * f(k) * f(l) * f(o) * (a = i * n * n + j * n + h) * (c = k * n * n + l * n + o)\n";

/// The remaining terms of the degree-3 covariance. Slower to infer.
pub fn covariance_degree3() -> Vec<Entry> {
    vec![
        Entry::new("M4", cov("M4", "n, n * n * n", M4)),
        Entry::new("M5", cov("M5", "n * n, n * n * n", M5)),
        Entry::new("M6", cov("M6", "n * n * n, n * n * n", M6)),
    ]
}

/// Kernel bodies and the structures of `B` they are paired with.
const TTM: &str = "@dim B(n, n, n)\n@dim C(n, n)\n@dim A(n, n, n)\nA(i, j, k) := B(i, j, l) * C(k, l)\n";
const THP: &str = "@dim B(n, n, n)\n@dim C(n, n, n)\n@dim A(n, n, n)\nA(i, j, k) := B(i, j, k) * C(i, j, k)\n";
const MTTKRP: &str =
    "@dim B(n, n, n)\n@dim C(n, n)\n@dim D(n, n)\n@dim A(n, n)\nA(i, j) := B(i, k, l) * C(k, j) * D(l, j)\n";

const DIAG_PLANE: &str = "(0 <= p < n) * (p = q) * (0 <= r < n)";
const FIXED_I: &str = "(p = I) * (0 <= q < n) * (0 <= r < n)";
const FIXED_J: &str = "(0 <= p < n) * (q = J) * (0 <= r < n)";
const UPPER_HALF: &str = "(0 <= p < n) * (p <= q < n) * (0 <= r < n)";
const FIXED_IJ: &str = "(p = I) * (q = J) * (0 <= r < n)";

fn kernel(body: &str, b_unique: &str) -> String {
    format!("@size n I J\n{body}B:U(p, q, r) := {b_unique}\n")
}

/// The three kernels, each with every structure of `B` it is evaluated
/// under. `B`'s unique set is read over its three positions.
pub fn table1() -> Vec<Entry> {
    let rows: [(&str, &str, &str); 9] = [
        ("ttm-diag-plane", TTM, DIAG_PLANE),
        ("ttm-fixed-j", TTM, FIXED_J),
        ("ttm-upper-half", TTM, UPPER_HALF),
        ("thp-diag-plane", THP, DIAG_PLANE),
        ("thp-fixed-i", THP, FIXED_I),
        ("thp-fixed-j", THP, FIXED_J),
        ("mttkrp-fixed-ij", MTTKRP, FIXED_IJ),
        ("mttkrp-fixed-i", MTTKRP, FIXED_I),
        ("mttkrp-fixed-j", MTTKRP, FIXED_J),
    ];
    rows.iter().map(|(id, body, u)| Entry::new(id, kernel(body, u))).collect()
}

/// Dense versions of the three kernels.
pub fn table1_dense() -> Vec<Entry> {
    [("ttm", TTM), ("thp", THP), ("mttkrp", MTTKRP)]
        .iter()
        .map(|(id, body)| Entry::new(id, format!("@size n\n{body}")))
        .collect()
}

/// The outer product of a vector with itself.
pub fn outer() -> Entry {
    Entry::new("outer", "@size n\n@dim x(n)\n@dim y(n, n)\ny(i, j) := x(i) * x(j)\n".to_string())
}

/// Every kernel checked for loop-nest equivalence.
pub fn kernels() -> Vec<Entry> {
    let mut out = covariance();
    out.extend(table1());
    out.push(outer());
    out
}

pub fn find(id: &str) -> Result<Entry> {
    kernels()
        .into_iter()
        .chain(table1_dense())
        .chain(covariance_degree3())
        .find(|e| e.id == id)
        .ok_or_else(|| Error::Usage(format!("unknown kernel `{id}`")))
}

/// Structures whose unique sets and redundancy maps are given directly.
/// Each declares one input `T` with its structure rules and reads it
/// once.
pub fn structures() -> Vec<Entry> {
    let mut out = Vec::new();
    let mat = "@size n m\n@dim T(n, m)\n@dim V(n, m)\n";
    let sq = "@size n\n@dim T(n, n)\n@dim V(n, n)\n@dim TC(n, n)\n";
    let catalog: [(&str, &str, &str); 8] = [
        ("G", mat, "T:U(i, j) := (0 <= i < n) * (0 <= j < m)\n"),
        (
            "S",
            sq,
            "T:U(i, j) := (0 <= i <= j < n)\nT:R(i, j, i', j') := (0 <= j < i < n) * (i' = j) * (j' = i)\n",
        ),
        ("D", sq, "T:U(i, j) := (i = j) * (0 <= i < n)\n"),
        ("Row", mat, "T:U(i, j) := (i = 1) * (0 <= j < m)\n"),
        ("Col", mat, "T:U(i, j) := (0 <= i < n) * (j = 2)\n"),
        ("H", mat, "T:U(i, j) := (i = 1) * (j = 2)\n"),
        ("Z", mat, "T:U(i, j) := 0\n"),
        ("UT", sq, "T:U(i, j) := (0 <= i <= j < n)\n"),
    ];
    let copy = "V(i, j) := T(i, j)\n";
    for (id, dims, rules) in catalog {
        out.push(Entry::new(id, format!("{dims}{rules}{copy}")));
    }
    out.push(Entry::new(
        "chess",
        format!(
            "{mat}T:U(i, j) := (0 <= i2 < n / 2) * (0 <= j2 < m / 2) * (i = i2 * 2) * (j = j2 * 2 + 1) \
             + (0 <= i2 < n / 2) * (0 <= j2 < m / 2) * (i = i2 * 2 + 1) * (j = j2 * 2)\n{copy}"
        ),
    ));
    out.push(Entry::new(
        "identical-row",
        format!(
            "{mat}T:U(i, j) := (i = 0) * (0 <= j < m)\n\
             T:R(i, j, i', j') := (0 < i < n) * (0 <= j < m) * (i' = 0) * (j' = j)\n{copy}"
        ),
    ));
    out.push(Entry::new("ut-compressed", format!("{sq}TC(i, j) := T(i, j) * (0 <= i <= j < n)\n")));
    for e in table1() {
        out.push(Entry::new(&format!("{}-input", e.id), e.source.clone()));
    }
    out
}

/// One structure-inference conclusion for structured linear algebra.
#[derive(Clone, Debug)]
pub struct Classification {
    pub id: &'static str,
    pub source: String,
    pub output: &'static str,
    pub expected: StructureTag,
}

fn la(a: &str, b: &str, expr: &str) -> String {
    format!("@size n\n@input A(n, n)\n@input B(n, n)\n@struct A = {a}\n@struct B = {b}\nE = {expr}\n")
}

/// The ten conclusions listed for structured linear algebra, each as an
/// LA source whose output `E` must classify as `expected`.
pub fn classification_suite() -> Vec<Classification> {
    use crate::ir::IndexExpr::Const;
    use StructureTag::*;
    let cases = [
        ("col-times-own-transpose", "C(2)", "G", "A . A^T", S),
        ("col-times-other-row", "C(2)", "R(1)", "A . B", Z),
        ("col-times-same-row", "C(2)", "R(2)", "A . B", G),
        ("row-times-col", "R(1)", "C(2)", "A . B", Singular(Const(1), Const(2))),
        ("row-times-row", "R(1)", "R(2)", "A . B", Row(Const(1))),
        ("col-times-col", "C(1)", "C(2)", "A . B", Col(Const(2))),
        ("diag-hadamard", "D", "D", "A had B", D),
        ("diag-kron", "D", "D", "A kron B", D),
        ("diag-product", "D", "D", "A . B", D),
        ("diag-dsum", "D", "D", "A dsum B", D),
    ];
    cases
        .into_iter()
        .map(|(id, a, b, expr, expected)| Classification { id, source: la(a, b, expr), output: "E", expected })
        .collect()
}

/// Parses a classification source, for callers that want the LA program.
pub fn classification_program(c: &Classification) -> Result<crate::frontend::LaProgram> {
    parse_la(&c.source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::check_well_formed;

    #[test]
    fn every_entry_parses() {
        for e in kernels().iter().chain(&structures()).chain(&table1_dense()) {
            let p = e.program().unwrap_or_else(|err| panic!("{}: {err}", e.id));
            assert!(check_well_formed(&p).is_empty(), "{}", e.id);
            assert!(!e.sizes(8).is_empty(), "{}", e.id);
        }
        for c in classification_suite() {
            classification_program(&c).unwrap_or_else(|err| panic!("{}: {err}", c.id));
        }
    }

    #[test]
    fn fixed_coordinates_stay_in_range() {
        let s = find("mttkrp-fixed-ij").unwrap().sizes(2);
        assert_eq!((s["I"], s["J"]), (1, 1));
    }
}
