//! The line-oriented model format.
//!
//! ```text
//! apta scheduler
//! actions submit, start, finish, cancel
//! clocks x
//! props idle, busy
//! init l0
//! location l0 {idle}
//! location l1 {idle}, {busy}
//! must l0 submit [true] -> l1 reset {x}
//! must l1 start [x < 1] -> p1: l2, p2: l3
//!     where 1/4 <= p1 <= 3/4, 1/4 <= p2 <= 3/4
//! ```
//!
//! A statement ends at the end of a line; indented lines continue the previous statement and
//! `#` starts a comment. Names are runs of letters, digits and `_ ' . | /`, or double-quoted
//! strings. Event-clock kinds (`peca`, `apeca`) declare no clocks: every action `a` owns the
//! clock `x_a`, which branches reset unless they say otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use apta_core::constraint::{LinConstraint, Piece, Polytope, ProbConstraint, ProductPiece, Rel};
use apta_core::guard::{Atom, Comparator, Guard, Modality};
use apta_core::model::{Apta, Branch, ClockId, Edge, Kind, Location, LocationId, PropSet};
use apta_core::num::Q;
use num_traits::{One, Signed, Zero};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Word(String),
    Quoted(String),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const SYMBOLS: [&str; 17] = ["->", "<=", ">=", "[", "]", "{", "}", "(", ")", ",", ":", ";", "&", "+", "-", "*", "="];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '\'' | '.' | '|' | '/')
}

fn lex_line(text: &str, line: usize, out: &mut Vec<Token>) -> Result<(), ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '"' {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && chars[j] != '"' {
                j += 1;
            }
            if j == chars.len() {
                return Err(ParseError { line, column, message: "unterminated string".into() });
            }
            out.push(Token { tok: Tok::Quoted(chars[start..j].iter().collect()), line, column });
            i = j + 1;
            continue;
        }
        if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            out.push(Token { tok: Tok::Word(chars[start..i].iter().collect()), line, column });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        if let Some(s) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            out.push(Token { tok: Tok::Sym(s), line, column });
            i += s.len();
            continue;
        }
        if c == '<' || c == '>' {
            out.push(Token { tok: Tok::Sym(if c == '<' { "<" } else { ">" }), line, column });
            i += 1;
            continue;
        }
        return Err(ParseError { line, column, message: format!("unexpected character `{c}`") });
    }
    Ok(())
}

/// Splits the text into statements, each a token list.
fn statements(text: &str) -> Result<Vec<Vec<Token>>, ParseError> {
    let mut out: Vec<Vec<Token>> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let mut toks = Vec::new();
        lex_line(raw, n + 1, &mut toks)?;
        if toks.is_empty() {
            continue;
        }
        let continues = raw.starts_with([' ', '\t']);
        match out.last_mut() {
            Some(last) if continues => last.extend(toks),
            _ => out.push(toks),
        }
    }
    Ok(out)
}

pub fn parse_rational(s: &str) -> Option<Q> {
    if s.is_empty() || !s.chars().next().unwrap().is_ascii_digit() {
        return None;
    }
    if let Some((int, frac)) = s.split_once('.') {
        if int.is_empty() || frac.is_empty() || !(int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())) {
            return None;
        }
        let denom = format!("1{}", "0".repeat(frac.len()));
        return Q::from_str(&format!("{int}{frac}/{denom}")).ok();
    }
    if !s.chars().all(|c| c.is_ascii_digit() || c == '/') {
        return None;
    }
    let q = Q::from_str(s).ok()?;
    if s.contains('/') && q.denom().is_zero() {
        return None;
    }
    Some(q)
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token]) -> Cursor<'a> {
        Cursor { toks, pos: 0 }
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let t = self.toks.get(self.pos).or(self.toks.last()).expect("nonempty statement");
        let column = if self.pos >= self.toks.len() { t.column + 1 } else { t.column };
        ParseError { line: t.line, column, message: message.into() }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(x)) if x == w)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{s}`")))
        }
    }

    fn name(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) | Some(Tok::Quoted(w)) => {
                self.pos += 1;
                Ok(w.clone())
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn number(&mut self) -> Result<Q, ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) => match parse_rational(w) {
                Some(q) => {
                    self.pos += 1;
                    Ok(q)
                }
                None => Err(self.error(format!("`{w}` is not a number"))),
            },
            _ => Err(self.error("expected a number")),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing input"))
        }
    }

    fn name_list(&mut self, what: &str) -> Result<Vec<String>, ParseError> {
        let mut out = vec![self.name(what)?];
        while self.eat_sym(",") {
            out.push(self.name(what)?);
        }
        Ok(out)
    }

    /// `{a, b}` with possibly no names.
    fn braced_names(&mut self, what: &str) -> Result<Vec<String>, ParseError> {
        self.expect_sym("{")?;
        if self.eat_sym("}") {
            return Ok(Vec::new());
        }
        let names = self.name_list(what)?;
        self.expect_sym("}")?;
        Ok(names)
    }
}

/// A linear expression: coefficients by variable name plus a constant.
#[derive(Default)]
struct Linear {
    coeffs: BTreeMap<String, Q>,
    constant: Q,
}

fn parse_linear(c: &mut Cursor) -> Result<Linear, ParseError> {
    let mut out = Linear::default();
    let mut sign = Q::one();
    if c.eat_sym("-") {
        sign = -Q::one();
    }
    loop {
        let term_pos = c.pos;
        let coeff = match c.peek() {
            Some(Tok::Word(w)) if parse_rational(w).is_some() => {
                let q = c.number()?;
                c.eat_sym("*");
                Some(q)
            }
            _ => None,
        };
        let var = match c.peek() {
            Some(Tok::Word(w)) if parse_rational(w).is_none() && !matches!(w.as_str(), "or" | "cells" | "product") => {
                c.pos += 1;
                Some(w.clone())
            }
            _ => None,
        };
        match (coeff, var) {
            (None, None) => {
                c.pos = term_pos;
                return Err(c.error("expected a term"));
            }
            (Some(k), None) => out.constant += sign.clone() * k,
            (k, Some(v)) => *out.coeffs.entry(v).or_insert_with(Q::zero) += sign.clone() * k.unwrap_or_else(Q::one),
        }
        if c.eat_sym("+") {
            sign = Q::one();
        } else if c.eat_sym("-") {
            sign = -Q::one();
        } else {
            return Ok(out);
        }
    }
}

fn relation(c: &mut Cursor) -> Result<Option<&'static str>, ParseError> {
    for s in ["<=", ">=", "="] {
        if c.eat_sym(s) {
            return Ok(Some(s));
        }
    }
    if c.is_sym("<") || c.is_sym(">") {
        return Err(c.error("strict inequalities are not supported in constraints"));
    }
    Ok(None)
}

fn row_of(lhs: &Linear, rel: &str, rhs: &Linear, vars: &[String], c: &Cursor) -> Result<LinConstraint, ParseError> {
    // lhs - rhs (rel) 0
    let mut coeffs = vec![Q::zero(); vars.len()];
    for (side, sign) in [(lhs, Q::one()), (rhs, -Q::one())] {
        for (v, k) in &side.coeffs {
            let i = vars.iter().position(|x| x == v).ok_or_else(|| c.error(format!("unknown variable `{v}`")))?;
            coeffs[i] += sign.clone() * k;
        }
    }
    let constant = rhs.constant.clone() - lhs.constant.clone();
    Ok(match rel {
        "<=" => LinConstraint::new(coeffs, Rel::Le, constant),
        ">=" => LinConstraint::new(coeffs.into_iter().map(|k| -k).collect(), Rel::Le, -constant),
        _ => LinConstraint::new(coeffs, Rel::Eq, constant),
    })
}

fn parse_rows(c: &mut Cursor, vars: &[String]) -> Result<Vec<LinConstraint>, ParseError> {
    let mut rows = Vec::new();
    loop {
        let mut lhs = parse_linear(c)?;
        let mut any = false;
        while let Some(rel) = relation(c)? {
            let rhs = parse_linear(c)?;
            rows.push(row_of(&lhs, rel, &rhs, vars, c)?);
            lhs = rhs;
            any = true;
        }
        if !any {
            return Err(c.error("expected `<=`, `>=` or `=`"));
        }
        if !c.eat_sym(",") {
            return Ok(rows);
        }
    }
}

fn parse_piece(c: &mut Cursor, vars: &[String]) -> Result<Piece, ParseError> {
    if c.eat_word("true") {
        return Ok(Piece::Poly(Polytope::full(vars.len())));
    }
    if c.eat_word("product") {
        c.expect_sym("(")?;
        let (lvars, left) = parse_factor(c)?;
        c.expect_sym(";")?;
        let (rvars, right) = parse_factor(c)?;
        c.expect_sym(")")?;
        if !c.eat_word("cells") {
            return Err(c.error("expected `cells`"));
        }
        let mut cells: Vec<Option<usize>> = vec![None; lvars.len() * rvars.len()];
        loop {
            let target = c.name("variable")?;
            let k = vars.iter().position(|v| *v == target).ok_or_else(|| c.error(format!("unknown variable `{target}`")))?;
            c.expect_sym("=")?;
            loop {
                let a = c.name("factor variable")?;
                c.expect_sym("*")?;
                let b = c.name("factor variable")?;
                let i = lvars.iter().position(|v| *v == a).ok_or_else(|| c.error(format!("unknown factor variable `{a}`")))?;
                let j = rvars.iter().position(|v| *v == b).ok_or_else(|| c.error(format!("unknown factor variable `{b}`")))?;
                cells[i * rvars.len() + j] = Some(k);
                if !c.eat_sym("+") {
                    break;
                }
            }
            if !c.eat_sym(",") {
                break;
            }
        }
        let piece = ProductPiece { dim: vars.len(), left, right, cells };
        return Ok(Piece::Product(Box::new(piece)));
    }
    Ok(Piece::Poly(Polytope { dim: vars.len(), rows: parse_rows(c, vars)? }))
}

fn parse_factor(c: &mut Cursor) -> Result<(Vec<String>, Piece), ParseError> {
    let vars = c.name_list("factor variable")?;
    c.expect_sym(":")?;
    let piece = parse_piece(c, &vars)?;
    Ok((vars, piece))
}

/// Parses a constraint over the named variables, as written after `where`.
fn parse_constraint(c: &mut Cursor, vars: &[String]) -> Result<ProbConstraint, ParseError> {
    if c.eat_word("false") {
        return Ok(ProbConstraint::falsity(vars.len()));
    }
    if !c.is_sym("(") {
        let piece = parse_piece(c, vars)?;
        return Ok(ProbConstraint { dim: vars.len(), pieces: vec![piece] });
    }
    let mut pieces = Vec::new();
    loop {
        c.expect_sym("(")?;
        pieces.push(parse_piece(c, vars)?);
        c.expect_sym(")")?;
        if !c.eat_word("or") {
            return Ok(ProbConstraint { dim: vars.len(), pieces });
        }
    }
}

fn comparator(c: &mut Cursor) -> Option<Comparator> {
    for (s, cmp) in [("<=", Comparator::Le), (">=", Comparator::Ge), ("<", Comparator::Lt), (">", Comparator::Gt)] {
        if c.eat_sym(s) {
            return Some(cmp);
        }
    }
    None
}

fn flip(cmp: Comparator) -> Comparator {
    match cmp {
        Comparator::Lt => Comparator::Gt,
        Comparator::Le => Comparator::Ge,
        Comparator::Gt => Comparator::Lt,
        Comparator::Ge => Comparator::Le,
    }
}

fn parse_guard(c: &mut Cursor, clocks: &[String]) -> Result<Guard, ParseError> {
    c.expect_sym("[")?;
    if c.eat_word("true") {
        c.expect_sym("]")?;
        return Ok(Guard::truth());
    }
    if c.eat_word("false") {
        c.expect_sym("]")?;
        return Ok(Guard::falsity());
    }
    let clock_index = |c: &Cursor, name: &str| clocks.iter().position(|x| x == name).ok_or_else(|| c.error(format!("unknown clock `{name}`")));
    let mut atoms = Vec::new();
    loop {
        let first_is_number = matches!(c.peek(), Some(Tok::Word(w)) if parse_rational(w).is_some());
        if first_is_number {
            let bound = c.number()?;
            let cmp = comparator(c).ok_or_else(|| c.error("expected a comparison"))?;
            let pos = c.pos;
            let name = c.name("clock")?;
            let clock = clock_index(&Cursor { toks: c.toks, pos }, &name)?;
            atoms.push(Atom::new(clock, flip(cmp), bound));
            if let Some(cmp2) = comparator(c) {
                atoms.push(Atom::new(clock, cmp2, c.number()?));
            }
        } else {
            let pos = c.pos;
            let name = c.name("clock")?;
            let clock = clock_index(&Cursor { toks: c.toks, pos }, &name)?;
            let cmp = comparator(c).ok_or_else(|| c.error("expected a comparison"))?;
            atoms.push(Atom::new(clock, cmp, c.number()?));
        }
        if !c.eat_sym("&") {
            break;
        }
    }
    c.expect_sym("]")?;
    Ok(Guard::from_atoms(atoms))
}

enum Label {
    None,
    Var(String),
    Prob(Q),
}

struct RawBranch {
    label: Label,
    target: String,
    resets: Option<Vec<String>>,
    pos: usize,
}

fn kind_of(word: &str) -> Option<Kind> {
    [Kind::Pta, Kind::Apta, Kind::Peca, Kind::Apeca].into_iter().find(|k| k.keyword() == word)
}

/// Parses a model document.
pub fn parse_model(text: &str) -> Result<Apta, ParseError> {
    let stmts = statements(text)?;
    let Some(first) = stmts.first() else {
        return Err(ParseError { line: 1, column: 1, message: "expected a model header such as `apta name`".into() });
    };
    let mut c = Cursor::new(first);
    let kind = match c.peek() {
        Some(Tok::Word(w)) => kind_of(w).ok_or_else(|| c.error("expected one of `pta`, `apta`, `peca`, `apeca`"))?,
        _ => return Err(c.error("expected a model header such as `apta name`")),
    };
    c.pos += 1;
    let name = c.name("model name")?;
    c.finish()?;
    let mut m = Apta::new(&name, kind);
    let mut init: Option<(String, usize, Vec<Token>)> = None;
    let mut edge_stmts = Vec::new();
    let mut location_stmts = Vec::new();
    for stmt in &stmts[1..] {
        let mut c = Cursor::new(stmt);
        let keyword = c.name("a statement")?;
        match keyword.as_str() {
            "actions" => {
                m.actions.extend(c.name_list("action")?);
                c.finish()?;
            }
            "clocks" => {
                if kind.is_event_clock() {
                    return Err(c.error("event-clock models declare no clocks"));
                }
                m.clocks.extend(c.name_list("clock")?);
                c.finish()?;
            }
            "props" => {
                m.props.extend(c.name_list("proposition")?);
                c.finish()?;
            }
            "init" => {
                if init.is_some() {
                    return Err(c.error("initial location declared twice"));
                }
                let n = c.name("location")?;
                c.finish()?;
                init = Some((n, 1, stmt.clone()));
            }
            "location" => location_stmts.push(stmt),
            "must" | "may" => edge_stmts.push(stmt),
            other => {
                c.pos -= 1;
                return Err(c.error(format!("unknown statement `{other}`")));
            }
        }
    }
    if kind.is_event_clock() {
        m.clocks = m.actions.iter().map(|a| Apta::event_clock_name(a)).collect();
    }
    for stmt in location_stmts {
        let mut c = Cursor::new(stmt);
        c.pos = 1;
        let name = c.name("location name")?;
        let mut valuation = BTreeSet::new();
        if !c.at_end() {
            loop {
                let names = c.braced_names("proposition")?;
                let mut set = PropSet::new();
                for n in names {
                    let p = m.prop_named(&n).ok_or_else(|| c.error(format!("unknown proposition `{n}`")))?;
                    set.insert(p);
                }
                valuation.insert(set);
                if !c.eat_sym(",") {
                    break;
                }
            }
        }
        c.finish()?;
        m.locations.push(Location { name, valuation });
    }
    match init {
        Some((n, _, toks)) => {
            let c = Cursor { toks: &toks, pos: 1 };
            m.initial = m.location_named(&n).ok_or_else(|| c.error(format!("unknown location `{n}`")))?;
        }
        None if m.locations.is_empty() => {
            return Err(ParseError { line: first[0].line, column: 1, message: "model has no locations".into() });
        }
        None => m.initial = LocationId(0),
    }
    for stmt in edge_stmts {
        let edge = parse_edge(stmt, &m)?;
        m.edges.push(edge);
    }
    Ok(m)
}

fn parse_edge(stmt: &[Token], m: &Apta) -> Result<Edge, ParseError> {
    let mut c = Cursor::new(stmt);
    let modality = if c.eat_word("must") { Modality::Must } else { c.pos = 1; Modality::May };
    let at = c.pos;
    let src = c.name("source location")?;
    let source = m.location_named(&src).ok_or_else(|| Cursor { toks: stmt, pos: at }.error(format!("unknown location `{src}`")))?;
    let at = c.pos;
    let act = c.name("action")?;
    let action = m.action_named(&act).ok_or_else(|| Cursor { toks: stmt, pos: at }.error(format!("unknown action `{act}`")))?;
    let guard = parse_guard(&mut c, &m.clocks)?;
    c.expect_sym("->")?;
    let mut raw = Vec::new();
    if !c.eat_word("none") {
        loop {
            let pos = c.pos;
            let first = c.name("branch")?;
            let (label, target) = if c.eat_sym(":") {
                let label = match parse_rational(&first) {
                    Some(q) => Label::Prob(q),
                    None => Label::Var(first),
                };
                (label, c.name("target location")?)
            } else {
                (Label::None, first)
            };
            let resets = if c.eat_word("reset") { Some(c.braced_names("clock")?) } else { None };
            raw.push(RawBranch { label, target, resets, pos });
            if !c.eat_sym(",") {
                break;
            }
        }
    }
    let mut branches = Vec::new();
    for b in &raw {
        let here = Cursor { toks: stmt, pos: b.pos };
        let target = m.location_named(&b.target).ok_or_else(|| here.error(format!("unknown location `{}`", b.target)))?;
        let resets: BTreeSet<ClockId> = match &b.resets {
            Some(names) => names
                .iter()
                .map(|n| m.clock_named(n).ok_or_else(|| here.error(format!("unknown clock `{n}`"))))
                .collect::<Result<_, _>>()?,
            None if m.kind.is_event_clock() => m.clock_named(&Apta::event_clock_name(&act)).into_iter().collect(),
            None => BTreeSet::new(),
        };
        branches.push(Branch { resets, target });
    }
    let n = raw.len();
    let constraint = if raw.iter().all(|b| matches!(b.label, Label::Prob(_))) && n > 0 {
        if c.is_word("where") {
            return Err(c.error("literal probabilities take no `where` clause"));
        }
        let probs: Vec<Q> = raw.iter().map(|b| if let Label::Prob(q) = &b.label { q.clone() } else { unreachable!() }).collect();
        ProbConstraint::point(&probs)
    } else if raw.iter().all(|b| matches!(b.label, Label::Var(_))) || n == 0 {
        let vars: Vec<String> = raw.iter().map(|b| if let Label::Var(v) = &b.label { v.clone() } else { unreachable!() }).collect();
        let distinct: BTreeSet<&String> = vars.iter().collect();
        if distinct.len() != vars.len() {
            return Err(c.error("branch variables must be distinct"));
        }
        if c.eat_word("where") {
            parse_constraint(&mut c, &vars)?
        } else if n == 0 {
            ProbConstraint::falsity(0)
        } else {
            ProbConstraint::truth(n)
        }
    } else if n == 1 && matches!(raw[0].label, Label::None) {
        if c.is_word("where") {
            return Err(c.error("an unlabeled branch takes no `where` clause"));
        }
        ProbConstraint::point(&[Q::one()])
    } else {
        return Err(c.error("branches must be all variables or all probabilities"));
    };
    c.finish()?;
    Ok(Edge { source, guard, action, modality, branches, constraint })
}

/// Parses `concrete -> abstract` lines.
pub fn parse_abstraction_map(text: &str) -> Result<Vec<(String, String)>, ParseError> {
    let mut out = Vec::new();
    for stmt in statements(text)? {
        let mut c = Cursor::new(&stmt);
        let a = c.name("concrete location")?;
        c.expect_sym("->")?;
        let b = c.name("abstract location")?;
        c.finish()?;
        out.push((a, b));
    }
    Ok(out)
}

pub fn format_rational(q: &Q) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

fn name_token(s: &str) -> String {
    let plain = !s.is_empty()
        && s.chars().all(is_word_char)
        && parse_rational(s).is_none()
        && !matches!(s, "true" | "false" | "none" | "reset" | "where" | "or" | "product" | "cells");
    if plain {
        s.to_string()
    } else {
        format!("\"{s}\"")
    }
}

pub fn format_guard(g: &Guard, clocks: &[String]) -> String {
    if g.is_false() {
        return "false".into();
    }
    if g.is_true() {
        return "true".into();
    }
    g.atoms()
        .iter()
        .map(|a| format!("{} {} {}", name_token(&clocks[a.clock]), a.cmp.symbol(), format_rational(&a.bound)))
        .collect::<Vec<_>>()
        .join(" & ")
}

fn format_row(r: &LinConstraint, vars: &[String]) -> String {
    let negate = r.rel == Rel::Le && r.coeffs.iter().all(|k| !k.is_positive()) && !r.rhs.is_positive() && r.coeffs.iter().any(|k| !k.is_zero());
    let sign = if negate { -Q::one() } else { Q::one() };
    let mut lhs = String::new();
    for (k, v) in r.coeffs.iter().zip(vars) {
        let k = k * &sign;
        if k.is_zero() {
            continue;
        }
        let mag = k.abs();
        let term = if mag.is_one() { v.clone() } else { format!("{}*{}", format_rational(&mag), v) };
        if lhs.is_empty() {
            lhs = if k.is_negative() { format!("-{term}") } else { term };
        } else {
            let _ = write!(lhs, " {} {}", if k.is_negative() { "-" } else { "+" }, term);
        }
    }
    if lhs.is_empty() {
        lhs.push('0');
    }
    let rel = match (r.rel, negate) {
        (Rel::Eq, _) => "=",
        (Rel::Le, false) => "<=",
        (Rel::Le, true) => ">=",
    };
    let rhs = &r.rhs * &sign;
    let rhs = if rhs.is_negative() { format!("-{}", format_rational(&rhs.abs())) } else { format_rational(&rhs) };
    format!("{lhs} {rel} {rhs}")
}

fn format_piece(p: &Piece, vars: &[String], counter: &mut usize) -> String {
    match p {
        Piece::Poly(poly) if poly.rows.is_empty() => "true".into(),
        Piece::Poly(poly) => poly.rows.iter().map(|r| format_row(r, vars)).collect::<Vec<_>>().join(", "),
        Piece::Product(pp) => {
            let factor = |piece: &Piece, counter: &mut usize| {
                *counter += 1;
                let names: Vec<String> = (1..=piece.dim()).map(|i| format!("f{}_{}", counter, i)).collect();
                let body = format_piece(piece, &names, counter);
                (names, body)
            };
            let (ln, lb) = factor(&pp.left, counter);
            let (rn, rb) = factor(&pp.right, counter);
            let rd = pp.right.dim();
            let mut cells: BTreeMap<usize, Vec<String>> = BTreeMap::new();
            for (idx, cell) in pp.cells.iter().enumerate() {
                if let Some(k) = cell {
                    cells.entry(*k).or_default().push(format!("{}*{}", ln[idx / rd], rn[idx % rd]));
                }
            }
            let cells: Vec<String> = cells.into_iter().map(|(k, ts)| format!("{} = {}", vars[k], ts.join(" + "))).collect();
            format!("product({}: {}; {}: {}) cells {}", ln.join(", "), lb, rn.join(", "), rb, cells.join(", "))
        }
    }
}

/// The `where` clause body, or `None` when the constraint is trivially true.
pub fn format_constraint(c: &ProbConstraint, vars: &[String]) -> Option<String> {
    let mut counter = 0;
    match c.pieces.len() {
        0 => Some("false".into()),
        1 => match &c.pieces[0] {
            Piece::Poly(p) if p.rows.is_empty() => None,
            piece => Some(format_piece(piece, vars, &mut counter)),
        },
        _ => Some(c.pieces.iter().map(|p| format!("({})", format_piece(p, vars, &mut counter))).collect::<Vec<_>>().join(" or ")),
    }
}

fn format_edge(m: &Apta, e: &Edge) -> String {
    let mut s = format!(
        "{} {} {} [{}] -> ",
        if e.modality == Modality::Must { "must" } else { "may" },
        name_token(&m.locations[e.source.0].name),
        name_token(&m.actions[e.action.0]),
        format_guard(&e.guard, &m.clocks)
    );
    if e.branches.is_empty() {
        s.push_str("none");
        return s;
    }
    let own: BTreeSet<ClockId> =
        if m.kind.is_event_clock() { m.clock_named(&Apta::event_clock_name(&m.actions[e.action.0])).into_iter().collect() } else { BTreeSet::new() };
    let point = if e.constraint.is_product_form() { None } else { e.constraint.as_point() };
    let vars: Vec<String> = (1..=e.branches.len()).map(|i| format!("p{i}")).collect();
    let single = e.branches.len() == 1 && point.is_some();
    let parts: Vec<String> = e
        .branches
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let mut part = String::new();
            if !single {
                match &point {
                    Some(values) => part.push_str(&format!("{}: ", format_rational(&values[k]))),
                    None => part.push_str(&format!("{}: ", vars[k])),
                }
            }
            part.push_str(&name_token(&m.locations[b.target.0].name));
            if b.resets != own {
                let names: Vec<String> = b.resets.iter().map(|c| name_token(&m.clocks[c.0])).collect();
                part.push_str(&format!(" reset {{{}}}", names.join(", ")));
            }
            part
        })
        .collect();
    s.push_str(&parts.join(", "));
    if point.is_none() {
        if let Some(w) = format_constraint(&e.constraint, &vars) {
            s.push_str("\n    where ");
            s.push_str(&w);
        }
    }
    s
}

/// Canonical text of a model.
pub fn serialize_model(m: &Apta) -> String {
    let mut s = String::new();
    let list = |v: &[String]| v.iter().map(|x| name_token(x)).collect::<Vec<_>>().join(", ");
    let _ = writeln!(s, "{} {}", m.kind.keyword(), name_token(&m.name));
    if !m.actions.is_empty() {
        let _ = writeln!(s, "actions {}", list(&m.actions));
    }
    if !m.clocks.is_empty() && !m.kind.is_event_clock() {
        let _ = writeln!(s, "clocks {}", list(&m.clocks));
    }
    if !m.props.is_empty() {
        let _ = writeln!(s, "props {}", list(&m.props));
    }
    if let Some(l) = m.locations.get(m.initial.0) {
        let _ = writeln!(s, "init {}", name_token(&l.name));
    }
    for l in &m.locations {
        let sets: Vec<String> = l
            .valuation
            .iter()
            .map(|set| format!("{{{}}}", set.iter().map(|p| name_token(&m.props[p.0])).collect::<Vec<_>>().join(", ")))
            .collect();
        if sets.is_empty() {
            let _ = writeln!(s, "location {}", name_token(&l.name));
        } else {
            let _ = writeln!(s, "location {} {}", name_token(&l.name), sets.join(", "));
        }
    }
    for e in &m.edges {
        let _ = writeln!(s, "{}", format_edge(m, e));
    }
    s
}
