//! Recurrence-relation systems and the regular-iterative-algorithm test.
//!
//! A system is RIA when (a) every variable is indexed, (b) every index point
//! is assigned once and no relation reads the point it writes, and (c) every
//! right-hand-side reference sits at a constant offset from the point being
//! written.
//!
//! Source format, one statement per line, `#` starts a comment:
//!
//! ```text
//! var A[3]                 # variable name and arity
//! param K = 3              # named integer constant
//! C[i,j,k] = C[i,j,k-1] + A[i,j,k] * B[i,j,k]
//! ```
//!
//! Left-hand indices are distinct loop indices. A right-hand index is a sum
//! of signed atoms: an integer, a parameter, `n*idx`, `floor(idx/N)` or
//! `idx % N`, where `N` is an integer or parameter of at least 2.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Matrix multiply as a systolic algorithm: A moves along j, B along i, C accumulates along k.
pub const MATMUL: &str = "\
# C = A x B on an i-j grid, k is time
var A[3]
var B[3]
var C[3]
A[i,j,k] = A[i,j-1,k]
B[i,j,k] = B[i-1,j,k]
C[i,j,k] = C[i,j,k-1] + A[i,j,k] * B[i,j,k]
";

/// 2D convolution with the K×K window flattened onto k.
pub const CONV2D: &str = "\
# 2D convolution, window position (floor(k/K), k%K)
param K = 3
var A[3]
var B[3]
var C[3]
C[i,j,k] = C[i,j,k-1] + A[i + floor(k/K), j + k%K, k] * B[floor(k/K), k%K, k]
";

/// 1D convolution: weights move down, inputs move diagonally, outputs accumulate.
pub const CONV1D: &str = "\
# Y[i] = sum_k W[k] * X[i+k]
var W[2]
var X[2]
var Y[2]
W[i,k] = W[i-1,k]
X[i,k] = X[i+1,k-1]
Y[i,k] = Y[i,k-1] + W[i,k] * X[i,k]
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum NonLinearOp {
    FloorDiv,
    Mod,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NonLinearTerm {
    pub coefficient: i64,
    pub op: NonLinearOp,
    pub index: String,
    /// At least 2.
    pub modulus: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IndexKind {
    Affine,
    FloorDiv,
    Mod,
}

/// `Σ coeffs[idx]·idx + constant + Σ nonlinear`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
pub struct IndexExpr {
    pub coefficients: BTreeMap<String, i64>,
    pub constant: i64,
    pub nonlinear: Vec<NonLinearTerm>,
}

impl IndexExpr {
    pub fn kind(&self) -> IndexKind {
        match self.nonlinear.first() {
            None => IndexKind::Affine,
            Some(t) if t.op == NonLinearOp::FloorDiv => IndexKind::FloorDiv,
            Some(_) => IndexKind::Mod,
        }
    }

    /// `own + c`, for some constant `c`.
    pub fn constant_offset(&self, own: &str) -> Option<i64> {
        let identity = self.coefficients.len() == 1 && self.coefficients.get(own) == Some(&1);
        (identity && self.nonlinear.is_empty()).then_some(self.constant)
    }

    fn identity(index: &str) -> Self {
        IndexExpr {
            coefficients: BTreeMap::from([(index.to_string(), 1)]),
            ..IndexExpr::default()
        }
    }
}

impl fmt::Display for IndexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<(i64, String)> = Vec::new();
        for (idx, &c) in &self.coefficients {
            match c {
                1 | -1 => parts.push((c, idx.clone())),
                _ => parts.push((c.signum(), format!("{}*{idx}", c.abs()))),
            }
        }
        for t in &self.nonlinear {
            let body = match t.op {
                NonLinearOp::FloorDiv => format!("floor({}/{})", t.index, t.modulus),
                NonLinearOp::Mod => format!("{}%{}", t.index, t.modulus),
            };
            match t.coefficient {
                1 | -1 => parts.push((t.coefficient, body)),
                c => parts.push((c.signum(), format!("{}*{body}", c.abs()))),
            }
        }
        if self.constant != 0 || parts.is_empty() {
            parts.push((self.constant.signum(), self.constant.abs().to_string()));
        }
        for (i, (sign, body)) in parts.iter().enumerate() {
            match (i, *sign < 0) {
                (0, true) => write!(f, "-{body}")?,
                (0, false) => write!(f, "{body}")?,
                (_, true) => write!(f, "-{body}")?,
                (_, false) => write!(f, "+{body}")?,
            }
        }
        Ok(())
    }
}

/// One right-hand-side operand.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Term {
    Ref { variable: String, indices: Vec<IndexExpr> },
    /// A declared variable used without indices.
    Bare(String),
    Literal(i64),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Ref { variable, indices } => {
                let idx: Vec<String> = indices.iter().map(|e| e.to_string()).collect();
                write!(f, "{variable}[{}]", idx.join(","))
            }
            Term::Bare(v) => f.write_str(v),
            Term::Literal(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Op {
    Add,
    Mul,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Relation {
    pub variable: String,
    /// Loop indices, in the order of the variable's dimensions.
    pub indices: Vec<String>,
    pub terms: Vec<Term>,
    /// `ops[i]` joins `terms[i]` and `terms[i + 1]`.
    pub ops: Vec<Op>,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}] = {}", self.variable, self.indices.join(","), self.terms[0])?;
        for (op, t) in self.ops.iter().zip(&self.terms[1..]) {
            let sym = if *op == Op::Add { '+' } else { '*' };
            write!(f, " {sym} {t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecurrenceSystem {
    /// Name to arity.
    pub variables: BTreeMap<String, usize>,
    pub relations: Vec<Relation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Condition {
    Indexed,
    SingleAssignment,
    ConstantOffset,
}

/// One violated condition, located by relation text and term text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Witness {
    pub condition: Condition,
    pub relation: String,
    pub term: Option<String>,
    pub dimension: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RiaVerdict {
    pub indexed: bool,
    pub single_assignment: bool,
    pub constant_offsets: bool,
    pub is_ria: bool,
    /// Sorted, so the verdict does not depend on relation order.
    pub witnesses: Vec<Witness>,
}

/// Offset of one right-hand reference from the point being written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Offset {
    Constant(Vec<i64>),
    NonConstant,
}

impl Serialize for Offset {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Offset::Constant(v) => v.serialize(s),
            Offset::NonConstant => s.serialize_str("non-constant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OffsetEntry {
    pub relation: usize,
    /// Index into the relation's `terms`.
    pub term: usize,
    pub text: String,
    pub offset: Offset,
}

fn term_offset(rel: &Relation, indices: &[IndexExpr]) -> Offset {
    if indices.len() != rel.indices.len() {
        return Offset::NonConstant;
    }
    indices
        .iter()
        .zip(&rel.indices)
        .map(|(e, own)| e.constant_offset(own))
        .collect::<Option<Vec<i64>>>()
        .map_or(Offset::NonConstant, Offset::Constant)
}

/// Offsets of every indexed right-hand reference, in source order.
pub fn offset_table(sys: &RecurrenceSystem) -> Vec<OffsetEntry> {
    let mut out = Vec::new();
    for (ri, rel) in sys.relations.iter().enumerate() {
        for (ti, term) in rel.terms.iter().enumerate() {
            if let Term::Ref { indices, .. } = term {
                out.push(OffsetEntry {
                    relation: ri,
                    term: ti,
                    text: term.to_string(),
                    offset: term_offset(rel, indices),
                });
            }
        }
    }
    out
}

pub fn classify(sys: &RecurrenceSystem) -> RiaVerdict {
    let mut witnesses = Vec::new();
    let mut assigned: BTreeMap<&str, usize> = BTreeMap::new();
    for rel in &sys.relations {
        *assigned.entry(&rel.variable).or_default() += 1;
    }
    for (var, n) in &assigned {
        if *n > 1 {
            // Every relation writes its whole index space, so the same points are written n times.
            for rel in sys.relations.iter().filter(|r| r.variable == *var) {
                witnesses.push(Witness {
                    condition: Condition::SingleAssignment,
                    relation: rel.to_string(),
                    term: None,
                    dimension: None,
                    detail: format!("{var} is assigned by {n} relations"),
                });
            }
        }
    }
    for rel in &sys.relations {
        let rel_text = rel.to_string();
        for term in &rel.terms {
            let witness = |condition, dimension, detail: String| Witness {
                condition,
                relation: rel_text.clone(),
                term: Some(term.to_string()),
                dimension,
                detail,
            };
            match term {
                Term::Literal(_) => {}
                Term::Bare(v) => witnesses.push(witness(Condition::Indexed, None, format!("{v} is used without indices"))),
                Term::Ref { variable, indices } => {
                    if indices.len() != rel.indices.len() {
                        witnesses.push(witness(
                            Condition::ConstantOffset,
                            None,
                            format!(
                                "{} indices against a {}-deep loop nest",
                                indices.len(),
                                rel.indices.len()
                            ),
                        ));
                        continue;
                    }
                    let mut all_zero = true;
                    for (d, (e, own)) in indices.iter().zip(&rel.indices).enumerate() {
                        match e.constant_offset(own) {
                            Some(c) => all_zero &= c == 0,
                            None => {
                                all_zero = false;
                                witnesses.push(witness(Condition::ConstantOffset, Some(d), non_constant_reason(e, own)));
                            }
                        }
                    }
                    if all_zero && *variable == rel.variable {
                        witnesses.push(witness(
                            Condition::SingleAssignment,
                            None,
                            "reads the point it assigns".to_string(),
                        ));
                    }
                }
            }
        }
    }
    witnesses.sort();
    witnesses.dedup();
    let holds = |c: Condition| !witnesses.iter().any(|w| w.condition == c);
    let (indexed, single_assignment, constant_offsets) = (
        holds(Condition::Indexed),
        holds(Condition::SingleAssignment),
        holds(Condition::ConstantOffset),
    );
    RiaVerdict {
        indexed,
        single_assignment,
        constant_offsets,
        is_ria: indexed && single_assignment && constant_offsets,
        witnesses,
    }
}

fn non_constant_reason(e: &IndexExpr, own: &str) -> String {
    if let Some(t) = e.nonlinear.first() {
        let what = match t.op {
            NonLinearOp::FloorDiv => format!("floor({}/{})", t.index, t.modulus),
            NonLinearOp::Mod => format!("{}%{}", t.index, t.modulus),
        };
        return format!("offset `{e}` - `{own}` varies with {} through {what}", t.index);
    }
    let others: Vec<&str> = e
        .coefficients
        .iter()
        .filter(|(k, &c)| (k.as_str() == own && c != 1) || (k.as_str() != own && c != 0))
        .map(|(k, _)| k.as_str())
        .collect();
    if e.coefficients.get(own).copied().unwrap_or(0) != 1 && !others.contains(&own) {
        return format!("offset `{e}` - `{own}` varies with {own}");
    }
    format!("offset `{e}` - `{own}` varies with {}", others.join(", "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(char),
    Newline,
}

struct Lexer {
    toks: Vec<(Tok, usize, usize)>,
}

fn lex(source: &str) -> Result<Lexer> {
    let mut toks = Vec::new();
    for (ln, line) in source.lines().enumerate() {
        let line_no = ln + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c == '#' {
                break;
            } else if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), line_no, col));
            } else if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = text
                    .parse()
                    .map_err(|_| Error::parse(line_no, col, format!("integer `{text}` out of range")))?;
                toks.push((Tok::Int(n), line_no, col));
            } else if "[],=+-*/%()".contains(c) {
                toks.push((Tok::Sym(c), line_no, col));
                i += 1;
            } else {
                return Err(Error::parse(line_no, col, format!("unexpected character `{c}`")));
            }
        }
        toks.push((Tok::Newline, line_no, chars.len() + 1));
    }
    Ok(Lexer { toks })
}

struct Parser<'a> {
    toks: &'a [(Tok, usize, usize)],
    pos: usize,
    params: BTreeMap<String, i64>,
    variables: BTreeMap<String, usize>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or((1, 1), |t| (t.1, t.2))
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        let (l, c) = self.here();
        Err(Error::parse(l, c, message))
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, sym: char) -> Result<()> {
        if self.peek() == Some(&Tok::Sym(sym)) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{sym}`"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn int(&mut self) -> Result<i64> {
        match self.peek() {
            Some(Tok::Int(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => self.err("expected an integer"),
        }
    }

    fn end_of_statement(&mut self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(Tok::Newline) => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => self.err("expected end of line"),
        }
    }

    /// Integer or parameter of at least 2, as a modulus.
    fn modulus(&mut self) -> Result<u64> {
        let at = self.pos;
        let n = match self.peek() {
            Some(Tok::Ident(name)) => match self.params.get(name) {
                Some(&v) => {
                    self.pos += 1;
                    v
                }
                None => return self.err(format!("`{name}` is not a parameter")),
            },
            _ => self.int()?,
        };
        if n < 2 {
            self.pos = at;
            return self.err(format!("modulus must be at least 2, found {n}"));
        }
        Ok(n as u64)
    }

    fn index(&mut self, loop_indices: &[String]) -> Result<IndexExpr> {
        let mut e = IndexExpr::default();
        let mut sign = 1;
        if self.peek() == Some(&Tok::Sym('-')) {
            self.pos += 1;
            sign = -1;
        }
        loop {
            self.atom(loop_indices, sign, &mut e)?;
            match self.peek() {
                Some(Tok::Sym('+')) => sign = 1,
                Some(Tok::Sym('-')) => sign = -1,
                _ => break,
            }
            self.pos += 1;
        }
        e.coefficients.retain(|_, c| *c != 0);
        e.nonlinear.sort();
        Ok(e)
    }

    fn loop_index(&mut self, loop_indices: &[String]) -> Result<String> {
        let name = self.ident("a loop index")?;
        if !loop_indices.contains(&name) {
            self.pos -= 1;
            return self.err(format!("`{name}` is not a loop index of this relation"));
        }
        Ok(name)
    }

    fn atom(&mut self, loop_indices: &[String], sign: i64, e: &mut IndexExpr) -> Result<()> {
        let mut coeff = sign;
        if let Some(Tok::Int(n)) = self.peek() {
            let n = *n;
            self.pos += 1;
            if self.peek() != Some(&Tok::Sym('*')) {
                e.constant += sign * n;
                return Ok(());
            }
            self.pos += 1;
            coeff *= n;
        }
        match self.peek() {
            Some(Tok::Ident(name)) if name == "floor" => {
                self.pos += 1;
                self.expect('(')?;
                let index = self.loop_index(loop_indices)?;
                self.expect('/')?;
                let modulus = self.modulus()?;
                self.expect(')')?;
                e.nonlinear.push(NonLinearTerm {
                    coefficient: coeff,
                    op: NonLinearOp::FloorDiv,
                    index,
                    modulus,
                });
            }
            Some(Tok::Ident(name)) if self.params.contains_key(name) => {
                e.constant += coeff * self.params[name];
                self.pos += 1;
            }
            Some(Tok::Ident(_)) => {
                let index = self.loop_index(loop_indices)?;
                if self.peek() == Some(&Tok::Sym('%')) {
                    self.pos += 1;
                    let modulus = self.modulus()?;
                    e.nonlinear.push(NonLinearTerm {
                        coefficient: coeff,
                        op: NonLinearOp::Mod,
                        index,
                        modulus,
                    });
                } else {
                    *e.coefficients.entry(index).or_default() += coeff;
                }
            }
            _ => return self.err("expected an index term"),
        }
        Ok(())
    }

    fn reference(&mut self, name: &str, loop_indices: &[String]) -> Result<Vec<IndexExpr>> {
        self.expect('[')?;
        let mut out = vec![self.index(loop_indices)?];
        while self.peek() == Some(&Tok::Sym(',')) {
            self.pos += 1;
            out.push(self.index(loop_indices)?);
        }
        self.expect(']')?;
        let arity = self.variables[name];
        if out.len() != arity {
            self.pos -= 1;
            return self.err(format!("{name} has arity {arity} but {} indices were given", out.len()));
        }
        Ok(out)
    }

    fn declared(&mut self, name: &str) -> Result<()> {
        if self.variables.contains_key(name) {
            Ok(())
        } else {
            self.pos -= 1;
            self.err(format!("undeclared variable `{name}`"))
        }
    }

    fn relation(&mut self) -> Result<Relation> {
        let variable = self.ident("a variable")?;
        self.declared(&variable)?;
        self.expect('[')?;
        let mut indices = vec![self.ident("a loop index")?];
        while self.peek() == Some(&Tok::Sym(',')) {
            self.pos += 1;
            indices.push(self.ident("a loop index")?);
        }
        self.expect(']')?;
        let unique: BTreeSet<&String> = indices.iter().collect();
        if unique.len() != indices.len() || indices.iter().any(|i| self.params.contains_key(i) || i == "floor") {
            self.pos -= 1;
            return self.err("left-hand indices must be distinct loop indices");
        }
        if indices.len() != self.variables[&variable] {
            self.pos -= 1;
            return self.err(format!(
                "{variable} has arity {} but {} indices were given",
                self.variables[&variable],
                indices.len()
            ));
        }
        self.expect('=')?;
        let mut terms = Vec::new();
        let mut ops = Vec::new();
        loop {
            let start = self.pos;
            let term = match self.next() {
                Some(Tok::Int(n)) => Term::Literal(n),
                Some(Tok::Ident(name)) => {
                    self.declared(&name)?;
                    if self.peek() == Some(&Tok::Sym('[')) {
                        let idx = self.reference(&name, &indices)?;
                        Term::Ref {
                            variable: name,
                            indices: idx,
                        }
                    } else {
                        Term::Bare(name)
                    }
                }
                _ => {
                    self.pos = start;
                    return self.err("expected a variable reference or literal");
                }
            };
            if let Term::Ref { variable: v, indices: idx } = &term {
                let self_point = *v == variable
                    && idx.iter().zip(&indices).all(|(e, own)| e.constant_offset(own) == Some(0));
                if self_point {
                    self.pos = start;
                    return self.err(format!(
                        "{variable} reads the point it assigns, violating single assignment"
                    ));
                }
            }
            terms.push(term);
            match self.peek() {
                Some(Tok::Sym('+')) => ops.push(Op::Add),
                Some(Tok::Sym('*')) => ops.push(Op::Mul),
                _ => break,
            }
            self.pos += 1;
        }
        self.end_of_statement()?;
        Ok(Relation {
            variable,
            indices,
            terms,
            ops,
        })
    }
}

pub fn parse_recurrences(source: &str) -> Result<RecurrenceSystem> {
    let lexed = lex(source)?;
    let mut p = Parser {
        toks: &lexed.toks,
        pos: 0,
        params: BTreeMap::new(),
        variables: BTreeMap::new(),
    };
    let mut relations = Vec::new();
    while let Some(tok) = p.peek().cloned() {
        match tok {
            Tok::Newline => p.pos += 1,
            Tok::Ident(kw) if kw == "var" => {
                p.pos += 1;
                let name = p.ident("a variable name")?;
                p.expect('[')?;
                let arity = p.int()?;
                if arity < 1 {
                    p.pos -= 1;
                    return p.err("arity must be at least 1");
                }
                p.expect(']')?;
                if p.variables.insert(name.clone(), arity as usize).is_some() {
                    return p.err(format!("variable `{name}` declared twice"));
                }
                p.end_of_statement()?;
            }
            Tok::Ident(kw) if kw == "param" => {
                p.pos += 1;
                let name = p.ident("a parameter name")?;
                p.expect('=')?;
                let sign = if p.peek() == Some(&Tok::Sym('-')) {
                    p.pos += 1;
                    -1
                } else {
                    1
                };
                let v = p.int()?;
                p.params.insert(name, sign * v);
                p.end_of_statement()?;
            }
            Tok::Ident(_) => relations.push(p.relation()?),
            _ => return p.err("expected `var`, `param` or a relation"),
        }
    }
    if relations.is_empty() {
        return p.err("no relations");
    }
    Ok(RecurrenceSystem {
        variables: p.variables,
        relations,
    })
}

/// The identity index expression for `index`, for building systems in code.
pub fn index(name: &str) -> IndexExpr {
    IndexExpr::identity(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shape_and_verdict() {
        let sys = parse_recurrences(MATMUL).unwrap();
        assert_eq!((sys.variables.len(), sys.relations.len()), (3, 3));
        let v = classify(&sys);
        assert!(v.is_ria, "{v:?}");
        assert!(v.witnesses.is_empty());
    }

    #[test]
    fn matmul_c_offsets() {
        let sys = parse_recurrences(MATMUL).unwrap();
        let offs: Vec<Offset> = offset_table(&sys)
            .into_iter()
            .filter(|e| e.relation == 2)
            .map(|e| e.offset)
            .collect();
        assert_eq!(
            offs,
            vec![
                Offset::Constant(vec![0, 0, -1]),
                Offset::Constant(vec![0, 0, 0]),
                Offset::Constant(vec![0, 0, 0])
            ]
        );
    }

    #[test]
    fn conv2d_is_not_ria() {
        let sys = parse_recurrences(CONV2D).unwrap();
        let a = match &sys.relations[0].terms[1] {
            Term::Ref { indices, .. } => indices.clone(),
            t => panic!("{t:?}"),
        };
        assert_eq!(a[0].kind(), IndexKind::FloorDiv);
        assert_eq!(a[1].kind(), IndexKind::Mod);
        let v = classify(&sys);
        assert!(!v.is_ria && !v.constant_offsets && v.single_assignment && v.indexed);
        let a_witness = v
            .witnesses
            .iter()
            .find(|w| w.term.as_deref().is_some_and(|t| t.starts_with("A[")))
            .expect("A term witness");
        assert_eq!(a_witness.dimension, Some(0));
        assert!(a_witness.detail.contains("varies with k"), "{}", a_witness.detail);
        let table = offset_table(&sys);
        assert!(table.iter().any(|e| e.text.starts_with("A[") && e.offset == Offset::NonConstant));
    }

    #[test]
    fn conv1d_is_ria() {
        let v = classify(&parse_recurrences(CONV1D).unwrap());
        assert!(v.is_ria, "{v:?}");
    }

    #[test]
    fn self_assignment_is_a_parse_error() {
        let err = parse_recurrences("var X[1]\nX[i] = X[i]\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: 8, .. }), "{err:?}");
    }

    #[test]
    fn single_affine_term_offset() {
        let sys = parse_recurrences("var A[2]\nA[i,j] = A[i-1,j]\n").unwrap();
        let t = offset_table(&sys);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].offset, Offset::Constant(vec![-1, 0]));
    }

    #[test]
    fn syntax_errors_are_positioned() {
        let cases = [
            ("var A[2]\nA[i,j] = B[i,j]\n", 2, 10),
            ("var A[2]\nA[i] = A[i-1]\n", 2, 4),
            ("var A[1]\nA[i] = A[i-1] + A[i, i]\n", 2, 23),
            ("var A[1]\nA[i] = A[floor(i/1)]\n", 2, 18),
            ("var A[1]\nA[i] = A[q]\n", 2, 10),
            ("var A[1]\nA[i] = A[i-1] $\n", 2, 15),
            ("var A[1]\n", 1, 9),
        ];
        for (src, line, column) in cases {
            match parse_recurrences(src) {
                Err(Error::Parse { line: l, column: c, .. }) => assert_eq!((l, c), (line, column), "{src:?}"),
                other => panic!("{src:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn cross_index_terms_are_non_constant() {
        let sys = parse_recurrences("var A[2]\nA[i,j] = A[i+j,j-1]\n").unwrap();
        let v = classify(&sys);
        assert!(!v.constant_offsets);
        assert_eq!(v.witnesses.len(), 1);
        assert_eq!(v.witnesses[0].dimension, Some(0));
    }

    #[test]
    fn unindexed_and_duplicate_assignments() {
        let sys = parse_recurrences("var A[1]\nvar B[1]\nA[i] = A[i-1] + B\nA[i] = 1\n").unwrap();
        let v = classify(&sys);
        assert!(!v.indexed && !v.single_assignment && v.constant_offsets && !v.is_ria);
    }

    #[test]
    fn display_round_trips() {
        let sys = parse_recurrences(CONV2D).unwrap();
        let text = format!("param K = 3\nvar A[3]\nvar B[3]\nvar C[3]\n{}\n", sys.relations[0]);
        assert_eq!(parse_recurrences(&text).unwrap(), sys);
    }
}
