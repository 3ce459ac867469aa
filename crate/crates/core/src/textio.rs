//! `.stur` text syntax.
//!
//! ```text
//! @size n m
//! @dim A(n, m)
//! # comment
//! B(i,j) := A(i,j) * (0 <= i <= j < n) + A(j,i) * (i > j)
//! S:U(i,j) := (0 <= i <= j < n)
//! Z:U(i,j) := 0
//! ```
//!
//! `0` is the empty body and `1` the empty product. Names declared with
//! `@size` are size constants everywhere in the file.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::ir::*;

// ---------------------------------------------------------------------------
// Printing

fn write_expr(f: &mut fmt::Formatter<'_>, e: &IndexExpr, min_prec: u8) -> fmt::Result {
    match e {
        IndexExpr::Var(v) | IndexExpr::Sym(v) => f.write_str(v),
        IndexExpr::Const(c) => write!(f, "{c}"),
        IndexExpr::Arith(op, a, b) => {
            let p = op.precedence();
            let paren = p < min_prec;
            if paren {
                f.write_str("(")?;
            }
            write_expr(f, a, p)?;
            write!(f, " {} ", op.symbol())?;
            write_expr(f, b, p + 1)?;
            if paren {
                f.write_str(")")?;
            }
            Ok(())
        }
    }
}

impl fmt::Display for IndexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, 0)
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} {} {})", self.lhs, self.op, self.rhs)
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}({})", self.tensor, self.kind.marker(), self.args.join(","))
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Access(a) => a.fmt(f),
            Factor::Cmp(c) => c.fmt(f),
        }
    }
}

impl fmt::Display for Product {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        let mut parts: Vec<String> = Vec::new();
        let mut i = 0;
        while i < self.0.len() {
            match &self.0[i] {
                Factor::Access(a) => {
                    parts.push(a.to_string());
                    i += 1;
                }
                Factor::Cmp(c) => {
                    // chain consecutive comparisons that share an operand
                    let mut s = format!("({} {} {}", c.lhs, c.op, c.rhs);
                    let mut last = &c.rhs;
                    i += 1;
                    while let Some(Factor::Cmp(d)) = self.0.get(i) {
                        if &d.lhs != last {
                            break;
                        }
                        s.push_str(&format!(" {} {}", d.op, d.rhs));
                        last = &d.rhs;
                        i += 1;
                    }
                    s.push(')');
                    parts.push(s);
                }
            }
        }
        f.write_str(&parts.join(" * "))
    }
}

impl fmt::Display for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        f.write_str(&parts.join(" + "))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} := {}", self.head, self.body)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.sizes.is_empty() {
            writeln!(f, "@size {}", self.sizes.join(" "))?;
        }
        for (t, d) in &self.dims {
            let ds: Vec<String> = d.iter().map(|e| e.to_string()).collect();
            writeln!(f, "@dim {}({})", t, ds.join(", "))?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

pub fn print(p: &Program) -> String {
    p.to_string()
}

// ---------------------------------------------------------------------------
// Lexing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Define,
    Colon,
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Cmp(CmpOp),
    At(String),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

fn lex_line(text: &str, line: usize, out: &mut Vec<Token>) -> Result<()> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let err = |col: usize, msg: String| Error::Parse { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let operand_before = matches!(
            out.last().filter(|t| t.line == line).map(|t| &t.tok),
            Some(Tok::Ident(_) | Tok::Int(_) | Tok::RParen)
        );
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line, col });
        match c {
            '#' => break,
            c if c.is_whitespace() => i += 1,
            '@' => {
                let start = i + 1;
                i += 1;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                push(out, Tok::At(chars[start..i].iter().collect()));
            }
            c if c.is_alphabetic() || c == '_' || (c == '%' && !operand_before) => {
                let start = i;
                i += 1;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                push(out, Tok::Ident(chars[start..i].iter().collect()));
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse().map_err(|_| err(col, format!("integer `{s}` out of range")))?;
                push(out, Tok::Int(v));
            }
            ':' => {
                if chars.get(i + 1) == Some(&'=') {
                    push(out, Tok::Define);
                    i += 2;
                } else {
                    push(out, Tok::Colon);
                    i += 1;
                }
            }
            '<' | '>' | '!' | '=' | '≤' | '≥' | '≠' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', _) => (CmpOp::Gt, 1),
                    ('=', _) => (CmpOp::Eq, 1),
                    ('≤', _) => (CmpOp::Le, 1),
                    ('≥', _) => (CmpOp::Ge, 1),
                    ('≠', _) => (CmpOp::Ne, 1),
                    _ => return Err(err(col, format!("unexpected `{c}`"))),
                };
                push(out, Tok::Cmp(op));
                i += len;
            }
            '(' | ')' | ',' | '+' | '-' | '*' | '/' | '%' => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    _ => Tok::Percent,
                };
                push(out, tok);
                i += 1;
            }
            _ => return Err(err(col, format!("unexpected character `{c}`"))),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    line: usize,
    sizes: &'a BTreeSet<String>,
}

impl<'a> Parser<'a> {
    fn new(toks: Vec<Token>, line: usize, sizes: &'a BTreeSet<String>) -> Self {
        Parser { toks, pos: 0, line, sizes }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        let col = self
            .toks
            .get(self.pos)
            .map(|t| t.col)
            .or_else(|| self.toks.last().map(|t| t.col + 1))
            .unwrap_or(1);
        Error::Parse { line: self.line, col, msg: msg.into() }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<()> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn finish(&self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing input"))
        }
    }

    fn access(&mut self) -> Result<Access> {
        let tensor = self.ident()?;
        let kind = if self.peek() == Some(&Tok::Colon) {
            self.pos += 1;
            match self.ident()?.as_str() {
                "U" => Kind::Unique,
                "R" => Kind::Redundancy,
                "C" => Kind::Compressed,
                other => return Err(self.error(format!("unknown kind marker `{other}`"))),
            }
        } else {
            Kind::Plain
        };
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                let a = self.ident()?;
                if self.sizes.contains(&a) {
                    return Err(self.error(format!("size constant `{a}` used as an access index")));
                }
                args.push(a);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok(Access { tensor, kind, args })
    }

    pub fn expr(&mut self) -> Result<IndexExpr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => ArithOp::Add,
                Some(Tok::Minus) => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = IndexExpr::arith(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<IndexExpr> {
        let mut lhs = self.atom()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => ArithOp::Mul,
                Some(Tok::Slash) => ArithOp::Div,
                Some(Tok::Percent) => ArithOp::Mod,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.atom()?;
            lhs = IndexExpr::arith(op, lhs, rhs);
        }
    }

    fn atom(&mut self) -> Result<IndexExpr> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(if self.sizes.contains(&s) { IndexExpr::Sym(s) } else { IndexExpr::Var(s) }),
            Some(Tok::Int(v)) => Ok(IndexExpr::Const(v)),
            Some(Tok::Minus) => match self.next() {
                Some(Tok::Int(v)) => Ok(IndexExpr::Const(-v)),
                _ => {
                    self.pos -= 1;
                    Err(self.error("expected integer after unary `-`"))
                }
            },
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => {
                self.pos -= 1;
                Err(self.error("expected index expression"))
            }
        }
    }

    /// `e1 op e2 op e3 ...` up to but excluding the closing parenthesis.
    fn chain(&mut self) -> Result<Vec<Factor>> {
        let mut lhs = self.expr()?;
        let mut out = Vec::new();
        while let Some(Tok::Cmp(op)) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.expr()?;
            out.push(Factor::Cmp(Comparison::new(lhs, op, rhs.clone())));
            lhs = rhs;
        }
        if out.is_empty() {
            return Err(self.error("expected comparison operator"));
        }
        Ok(out)
    }

    fn body(&mut self) -> Result<Body> {
        if self.peek() == Some(&Tok::Int(0))
            && matches!(self.peek_at(1), None | Some(Tok::RParen))
        {
            self.pos += 1;
            return Ok(Body::empty());
        }
        let mut body = self.product()?;
        while self.peek() == Some(&Tok::Plus) {
            self.pos += 1;
            body = body.add(&self.product()?);
        }
        Ok(body)
    }

    fn product(&mut self) -> Result<Body> {
        let mut body = self.factor()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            body = body.mul(&self.factor()?);
        }
        Ok(body)
    }

    fn factor(&mut self) -> Result<Body> {
        match self.peek() {
            Some(Tok::Ident(_)) => Ok(Body::single(vec![Factor::Access(self.access()?)])),
            Some(Tok::Int(1)) => {
                self.pos += 1;
                Ok(Body::unit())
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let save = self.pos;
                match self.chain() {
                    Ok(f) if self.peek() == Some(&Tok::RParen) => {
                        self.pos += 1;
                        Ok(Body::single(f))
                    }
                    chain_result => {
                        let chain_err = chain_result.err();
                        let chain_pos = self.pos;
                        self.pos = save;
                        match self.body() {
                            Ok(b) if self.peek() == Some(&Tok::RParen) => {
                                self.pos += 1;
                                Ok(b)
                            }
                            _ => {
                                self.pos = chain_pos;
                                Err(chain_err.unwrap_or_else(|| self.error("expected `)`")))
                            }
                        }
                    }
                }
            }
            _ => Err(self.error("expected access, comparison or `(`")),
        }
    }
}

fn directive(name: &str, toks: Vec<Token>, line: usize, prog: &mut Program, sizes: &mut BTreeSet<String>) -> Result<()> {
    let mut p = Parser::new(toks, line, sizes);
    match name {
        "size" => {
            let mut names = Vec::new();
            while !p.at_end() {
                names.push(p.ident()?);
                if p.peek() == Some(&Tok::Comma) {
                    p.pos += 1;
                }
            }
            if names.is_empty() {
                return Err(p.error("`@size` needs at least one name"));
            }
            for n in names {
                if sizes.insert(n.clone()) {
                    prog.sizes.push(n);
                }
            }
        }
        "dim" => {
            let t = p.ident()?;
            p.expect(&Tok::LParen, "`(`")?;
            let mut d = Vec::new();
            if p.peek() != Some(&Tok::RParen) {
                loop {
                    let e = p.expr()?;
                    let mut vars = BTreeSet::new();
                    e.collect_vars(&mut vars);
                    if let Some(v) = vars.into_iter().next() {
                        return Err(p.error(format!("`{v}` in a dimension is not a declared size")));
                    }
                    d.push(e);
                    if p.peek() == Some(&Tok::Comma) {
                        p.pos += 1;
                    } else {
                        break;
                    }
                }
            }
            p.expect(&Tok::RParen, "`)`")?;
            p.finish()?;
            prog.dims.insert(t, d);
        }
        other => {
            return Err(Error::Parse { line, col: 1, msg: format!("unknown directive `@{other}`") });
        }
    }
    Ok(())
}

/// Parses without the well-formedness check. Also returns the source line
/// of every rule.
pub fn parse_with_lines(text: &str) -> Result<(Program, Vec<usize>)> {
    let mut prog = Program::default();
    let mut sizes = BTreeSet::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut toks = Vec::new();
        lex_line(raw, line, &mut toks)?;
        if toks.is_empty() {
            continue;
        }
        if let Tok::At(name) = &toks[0].tok {
            let name = name.clone();
            directive(&name, toks[1..].to_vec(), line, &mut prog, &mut sizes)?;
            continue;
        }
        let mut p = Parser::new(toks, line, &sizes);
        let head = p.access()?;
        p.expect(&Tok::Define, "`:=`")?;
        if p.at_end() {
            return Err(p.error("empty body; write `0` for the empty set"));
        }
        let body = p.body()?;
        p.finish()?;
        prog.rules.push(Rule::new(head, body));
        lines.push(line);
    }
    Ok((prog, lines))
}

pub fn parse_unchecked(text: &str) -> Result<Program> {
    parse_with_lines(text).map(|(p, _)| p)
}

/// Parses and checks well-formedness. The first diagnostic is reported
/// with the line of the offending rule.
pub fn parse(text: &str) -> Result<Program> {
    let (prog, lines) = parse_with_lines(text)?;
    if let Some(diag) = check_well_formed(&prog).into_iter().next() {
        return Err(Error::IllFormed { line: lines[diag.rule], diag });
    }
    Ok(prog)
}

/// Parses a single body, with `sizes` treated as size constants.
pub fn parse_body(text: &str, sizes: &[String]) -> Result<Body> {
    let mut toks = Vec::new();
    lex_line(text, 1, &mut toks)?;
    let set: BTreeSet<String> = sizes.iter().cloned().collect();
    let mut p = Parser::new(toks, 1, &set);
    let b = p.body()?;
    p.finish()?;
    Ok(b)
}

/// Parses a single rule, with `sizes` treated as size constants.
pub fn parse_rule(text: &str, sizes: &[String]) -> Result<Rule> {
    let mut toks = Vec::new();
    lex_line(text, 1, &mut toks)?;
    let set: BTreeSet<String> = sizes.iter().cloned().collect();
    let mut p = Parser::new(toks, 1, &set);
    let head = p.access()?;
    p.expect(&Tok::Define, "`:=`")?;
    let b = p.body()?;
    p.finish()?;
    Ok(Rule::new(head, b))
}

/// Parses one index expression.
pub fn parse_expr(text: &str, sizes: &[String]) -> Result<IndexExpr> {
    let mut toks = Vec::new();
    lex_line(text, 1, &mut toks)?;
    let set: BTreeSet<String> = sizes.iter().cloned().collect();
    let mut p = Parser::new(toks, 1, &set);
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHESS: &str = "@size n m\n\
        @dim T(n, m)\n\
        T:U(i,j) := (i = 2 * i' + 1) * (j = 2 * j') * (0 <= i < n) * (0 <= j < m) + (i = 2 * i') * (j = 2 * j' + 1) * (0 <= i < n) * (0 <= j < m)\n";

    #[test]
    fn simple_tensor_operation() {
        let p = parse("@size n\n@dim T1(n,n)\n@dim T2(n,n)\nT3(x,y) := T1(x,y) * T2(x,y)\nT4(x) := T3(x,y) * (x = y)\n").unwrap();
        assert_eq!(p.rules.len(), 2);
        assert_eq!(p.rules[1].body.0[0].0.len(), 2);
    }

    #[test]
    fn chains_desugar() {
        let p = parse("@size n\n@dim A(n,n)\nA:U(i,j) := (0 <= i <= j < n)\n").unwrap();
        let prod = &p.rules[0].body.0[0];
        assert_eq!(prod.0.len(), 3);
        assert_eq!(
            prod.0[2],
            Factor::cmp(IndexExpr::var("j"), CmpOp::Lt, IndexExpr::sym("n"))
        );
    }

    #[test]
    fn empty_body_is_an_error_and_zero_is_empty() {
        assert!(matches!(parse("@size n\n@dim B(n)\nA(i) := "), Err(Error::Parse { line: 3, .. })));
        let p = parse("@size n\n@dim A(n)\nA:U(i) := 0\n").unwrap();
        assert!(p.rules[0].body.is_empty());
        assert!(print(&p).contains("A:U(i) := 0"));
    }

    #[test]
    fn chess_pattern_round_trips() {
        let p = parse(CHESS).unwrap();
        assert_eq!(parse(&print(&p)).unwrap(), p);
    }

    #[test]
    fn identical_row_redundancy_round_trips() {
        let src = "@size n m\n@dim T(n, m)\nT:R(i,j,i',j') := (0 < i < n) * (0 <= j < m) * (i' = 0) * (j' = j)\n";
        let p = parse(src).unwrap();
        assert_eq!(print(&p), src);
    }

    #[test]
    fn grouping_distributes() {
        let p = parse_unchecked("@size n\n@dim A(n)\n@dim B(n)\n@dim C(n)\nD(i) := (A(i) + B(i)) * C(i)\n").unwrap();
        assert_eq!(p.rules[0].body.0.len(), 2);
    }

    #[test]
    fn arithmetic_precedence() {
        let e = parse_expr("a + b * c - (d - e)", &[]).unwrap();
        assert_eq!(e.to_string(), "a + b * c - (d - e)");
        let e = parse_expr("(a + b) * c % 4", &[]).unwrap();
        assert_eq!(e.to_string(), "(a + b) * c % 4");
    }

    #[test]
    fn percent_names_and_unicode_ops() {
        let p = parse_unchecked("@size n\n@dim A(n)\n%t0(i) := A(i) * (i ≤ 3) * (i % 2 = 0)\n").unwrap();
        assert_eq!(p.rules[0].head.tensor, "%t0");
        assert_eq!(p.rules[0].body.0[0].0.len(), 3);
    }

    #[test]
    fn diagnostics_carry_lines() {
        let err = parse("@size n\n@dim B(n)\n\nA(i,j) := B(i)\n").unwrap_err();
        assert!(matches!(err, Error::IllFormed { line: 4, .. }), "{err}");
    }

    #[test]
    fn print_is_deterministic() {
        let p = parse(CHESS).unwrap();
        assert_eq!(print(&p), print(&p.clone()));
    }
}
