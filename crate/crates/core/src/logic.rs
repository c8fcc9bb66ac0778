//! Temporal-logic formulas over scenario states: parser, printer, fragment
//! classification and state labeling.
//!
//! Concrete syntax (ASCII):
//!
//! ```text
//! formula  := implies
//! implies  := or_expr [ "->" implies ]
//! or_expr  := and_expr { "|" and_expr }
//! and_expr := until { "&" until }
//! until    := unary [ "U" [ "<=" int ] until ]
//! unary    := "!" unary | ("G" | "F") [ "<=" int ] unary | "X" unary
//!           | "(" implies ")" | atom | "true" | "false"
//! atom     := ("cell" | "speed") op int | "env" "=" ident | ident
//! op       := "=" | "<=" | ">=" | "<" | ">"
//! ```
//!
//! A bare identifier refers to a named state label such as `stopped`.

use std::fmt;

use thiserror::Error;

use crate::chain::MarkovChain;
use crate::scenario::{EnvClass, ScenarioParams, SystemState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogicError {
    #[error("parse error at byte {offset}: expected {}, found {found}", expected.join(" or "))]
    Parse {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unsupported formula shape: {location}")]
    Unsupported { location: String },
    #[error("unknown state label `{0}`")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cmp {
    Eq,
    Le,
    Ge,
    Lt,
    Gt,
}

impl Cmp {
    pub fn apply(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Cmp::Eq => lhs == rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Gt => lhs > rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::Eq => "=",
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Lt => "<",
            Cmp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AtomicPredicate {
    Cell(Cmp, i64),
    Speed(Cmp, i64),
    Env(EnvClass),
    /// A label attached to chain states (e.g. `stopped`, `road_end`).
    Label(String),
}

impl fmt::Display for AtomicPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomicPredicate::Cell(op, n) => write!(f, "cell{}{}", op.symbol(), n),
            AtomicPredicate::Speed(op, n) => write!(f, "speed{}{}", op.symbol(), n),
            AtomicPredicate::Env(e) => write!(f, "env={e}"),
            AtomicPredicate::Label(name) => f.write_str(name),
        }
    }
}

/// Evaluates a state-level atom. Named labels are not a property of the bare
/// state and yield `None`; they are resolved against a chain in
/// [`state_set`].
pub fn eval_atom(s: &SystemState, a: &AtomicPredicate) -> Option<bool> {
    match a {
        AtomicPredicate::Cell(op, n) => Some(op.apply(s.agent.cell as i64, *n)),
        AtomicPredicate::Speed(op, n) => Some(op.apply(s.agent.speed as i64, *n)),
        AtomicPredicate::Env(e) => Some(s.env == *e),
        AtomicPredicate::Label(_) => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Atom(AtomicPredicate),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Always(Box<Formula>),
    Eventually(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    BoundedAlways(u32, Box<Formula>),
    BoundedEventually(u32, Box<Formula>),
    BoundedUntil(u32, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(a: AtomicPredicate) -> Self {
        Formula::Atom(a)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn always(f: Formula) -> Self {
        Formula::Always(Box::new(f))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn is_temporal(&self) -> bool {
        matches!(
            self,
            Formula::Next(_)
                | Formula::Always(_)
                | Formula::Eventually(_)
                | Formula::Until(..)
                | Formula::BoundedAlways(..)
                | Formula::BoundedEventually(..)
                | Formula::BoundedUntil(..)
        )
    }

    /// True when no temporal operator occurs anywhere in the formula.
    pub fn is_propositional(&self) -> bool {
        self.first_temporal().is_none()
    }

    fn children(&self) -> Vec<&Formula> {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) => vec![],
            Formula::Not(a)
            | Formula::Next(a)
            | Formula::Always(a)
            | Formula::Eventually(a)
            | Formula::BoundedAlways(_, a)
            | Formula::BoundedEventually(_, a) => vec![a],
            Formula::And(a, b)
            | Formula::Or(a, b)
            | Formula::Until(a, b)
            | Formula::BoundedUntil(_, a, b) => vec![a, b],
        }
    }

    /// Child-index path to the first temporal subformula, if any.
    fn first_temporal(&self) -> Option<(Vec<usize>, &Formula)> {
        if self.is_temporal() {
            return Some((vec![], self));
        }
        self.children().into_iter().enumerate().find_map(|(i, c)| {
            c.first_temporal().map(|(mut path, f)| {
                path.insert(0, i);
                (path, f)
            })
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Or(..) => 1,
            Formula::And(..) => 2,
            Formula::Until(..) | Formula::BoundedUntil(..) => 3,
            _ => 4,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let wrap = self.precedence() < min_prec;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Formula::True => f.write_str("true")?,
            Formula::False => f.write_str("false")?,
            Formula::Atom(a) => write!(f, "{a}")?,
            Formula::Not(a) => {
                f.write_str("!")?;
                a.write_at(f, 4)?;
            }
            Formula::And(a, b) => {
                a.write_at(f, 2)?;
                f.write_str(" & ")?;
                b.write_at(f, 3)?;
            }
            Formula::Or(a, b) => {
                a.write_at(f, 1)?;
                f.write_str(" | ")?;
                b.write_at(f, 2)?;
            }
            Formula::Until(a, b) => {
                a.write_at(f, 4)?;
                f.write_str(" U ")?;
                b.write_at(f, 3)?;
            }
            Formula::BoundedUntil(n, a, b) => {
                a.write_at(f, 4)?;
                write!(f, " U<={n} ")?;
                b.write_at(f, 3)?;
            }
            Formula::Next(a) => write!(f, "X({a})")?,
            Formula::Always(a) => write!(f, "G({a})")?,
            Formula::Eventually(a) => write!(f, "F({a})")?,
            Formula::BoundedAlways(n, a) => write!(f, "G<={n}({a})")?,
            Formula::BoundedEventually(n, a) => write!(f, "F<={n}({a})")?,
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

impl std::str::FromStr for Formula {
    type Err = LogicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Bang,
    Amp,
    Pipe,
    Arrow,
    Op(Cmp),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Bang => f.write_str("`!`"),
            Tok::Amp => f.write_str("`&`"),
            Tok::Pipe => f.write_str("`|`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Op(c) => write!(f, "`{}`", c.symbol()),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, LogicError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, expected: &str| LogicError::Parse {
        offset,
        expected: vec![expected.to_string()],
        found: text[offset..].chars().next().map_or("end of input".into(), |c| format!("`{c}`")),
    };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'!' => {
                i += 1;
                Tok::Bang
            }
            b'&' => {
                i += if bytes.get(i + 1) == Some(&b'&') { 2 } else { 1 };
                Tok::Amp
            }
            b'|' => {
                i += if bytes.get(i + 1) == Some(&b'|') { 2 } else { 1 };
                Tok::Pipe
            }
            b'=' => {
                i += if bytes.get(i + 1) == Some(&b'=') { 2 } else { 1 };
                Tok::Op(Cmp::Eq)
            }
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                i += 1 + eq as usize;
                Tok::Op(match (c, eq) {
                    (b'<', true) => Cmp::Le,
                    (b'<', false) => Cmp::Lt,
                    (_, true) => Cmp::Ge,
                    _ => Cmp::Gt,
                })
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                i += 2;
                Tok::Arrow
            }
            b'-' | b'0'..=b'9' => {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let digits = &text[start..i];
                Tok::Int(digits.parse().map_err(|_| err(start, "integer"))?)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Tok::Ident(text[start..i].to_string())
            }
            _ => return Err(err(start, "token")),
        };
        out.push((tok, start));
    }
    out.push((Tok::Eof, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, LogicError> {
        Err(LogicError::Parse {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().to_string(),
        })
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect(&mut self, tok: Tok, name: &str) -> Result<(), LogicError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(&[name])
        }
    }

    fn implies(&mut self) -> Result<Formula, LogicError> {
        let lhs = self.or_expr()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let rhs = self.implies()?;
            return Ok(Formula::or(Formula::not(lhs), rhs));
        }
        Ok(lhs)
    }

    fn or_expr(&mut self) -> Result<Formula, LogicError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Pipe {
            self.bump();
            lhs = Formula::or(lhs, self.and_expr()?);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Formula, LogicError> {
        let mut lhs = self.until()?;
        while *self.peek() == Tok::Amp {
            self.bump();
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, LogicError> {
        let lhs = self.unary()?;
        if self.is_keyword("U") {
            self.bump();
            let bound = self.bound()?;
            let rhs = self.until()?;
            return Ok(match bound {
                Some(n) => Formula::BoundedUntil(n, Box::new(lhs), Box::new(rhs)),
                None => Formula::Until(Box::new(lhs), Box::new(rhs)),
            });
        }
        Ok(lhs)
    }

    fn bound(&mut self) -> Result<Option<u32>, LogicError> {
        if *self.peek() != Tok::Op(Cmp::Le) {
            return Ok(None);
        }
        self.bump();
        match self.peek().clone() {
            Tok::Int(n) if n >= 0 && n <= u32::MAX as i64 => {
                self.bump();
                Ok(Some(n as u32))
            }
            _ => self.fail(&["non-negative bound"]),
        }
    }

    fn unary(&mut self) -> Result<Formula, LogicError> {
        match self.peek().clone() {
            Tok::Bang => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.implies()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(id) => match id.as_str() {
                "G" | "F" => {
                    self.bump();
                    let bound = self.bound()?;
                    let body = Box::new(self.unary()?);
                    Ok(match (id.as_str(), bound) {
                        ("G", None) => Formula::Always(body),
                        ("G", Some(n)) => Formula::BoundedAlways(n, body),
                        (_, None) => Formula::Eventually(body),
                        (_, Some(n)) => Formula::BoundedEventually(n, body),
                    })
                }
                "X" => {
                    self.bump();
                    Ok(Formula::Next(Box::new(self.unary()?)))
                }
                "U" => self.fail(&["formula"]),
                "true" => {
                    self.bump();
                    Ok(Formula::True)
                }
                "false" => {
                    self.bump();
                    Ok(Formula::False)
                }
                "cell" | "speed" => {
                    self.bump();
                    let op = match self.peek() {
                        Tok::Op(op) => *op,
                        _ => return self.fail(&["`=`", "`<=`", "`>=`", "`<`", "`>`"]),
                    };
                    self.bump();
                    let n = match self.peek() {
                        Tok::Int(n) => *n,
                        _ => return self.fail(&["integer"]),
                    };
                    self.bump();
                    Ok(Formula::Atom(if id == "cell" {
                        AtomicPredicate::Cell(op, n)
                    } else {
                        AtomicPredicate::Speed(op, n)
                    }))
                }
                "env" => {
                    self.bump();
                    self.expect(Tok::Op(Cmp::Eq), "`=`")?;
                    match self.peek().clone() {
                        Tok::Ident(name) => match name.parse::<EnvClass>() {
                            Ok(e) => {
                                self.bump();
                                Ok(Formula::Atom(AtomicPredicate::Env(e)))
                            }
                            Err(_) => self.fail(&["`ped`", "`obj`", "`empty`"]),
                        },
                        _ => self.fail(&["`ped`", "`obj`", "`empty`"]),
                    }
                }
                _ => {
                    self.bump();
                    Ok(Formula::Atom(AtomicPredicate::Label(id)))
                }
            },
            _ => self.fail(&["`!`", "`(`", "`G`", "`F`", "`X`", "atom"]),
        }
    }
}

pub fn parse(text: &str) -> Result<Formula, LogicError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let f = p.implies()?;
    if *p.peek() != Tok::Eof {
        return p.fail(&["`&`", "`|`", "`->`", "`U`", "end of input"]);
    }
    Ok(f)
}

/// Negation normal form for propositional formulas.
pub fn push_negations(f: &Formula) -> Formula {
    fn go(f: &Formula, neg: bool) -> Formula {
        match (f, neg) {
            (Formula::Not(a), _) => go(a, !neg),
            (Formula::And(a, b), false) => Formula::and(go(a, false), go(b, false)),
            (Formula::And(a, b), true) => Formula::or(go(a, true), go(b, true)),
            (Formula::Or(a, b), false) => Formula::or(go(a, false), go(b, false)),
            (Formula::Or(a, b), true) => Formula::and(go(a, true), go(b, true)),
            (Formula::True, true) => Formula::False,
            (Formula::False, true) => Formula::True,
            (other, false) => other.clone(),
            (other, true) => Formula::not(other.clone()),
        }
    }
    go(f, false)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FragmentClass {
    Invariant,
    Reach,
    Until,
    Next,
    BoundedInvariant,
    BoundedReach,
    BoundedUntil,
    Unsupported { location: String },
}

/// A formula decomposed into a checkable shape over propositional parts.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Invariant(Formula),
    Reach(Formula),
    Until(Formula, Formula),
    Next(Formula),
    BoundedInvariant(Formula, u32),
    BoundedReach(Formula, u32),
    BoundedUntil(Formula, Formula, u32),
}

impl Shape {
    pub fn class(&self) -> FragmentClass {
        match self {
            Shape::Invariant(_) => FragmentClass::Invariant,
            Shape::Reach(_) => FragmentClass::Reach,
            Shape::Until(..) => FragmentClass::Until,
            Shape::Next(_) => FragmentClass::Next,
            Shape::BoundedInvariant(..) => FragmentClass::BoundedInvariant,
            Shape::BoundedReach(..) => FragmentClass::BoundedReach,
            Shape::BoundedUntil(..) => FragmentClass::BoundedUntil,
        }
    }

    pub fn bound(&self) -> Option<u32> {
        match self {
            Shape::BoundedInvariant(_, n) | Shape::BoundedReach(_, n) | Shape::BoundedUntil(_, _, n) => {
                Some(*n)
            }
            _ => None,
        }
    }
}

fn location(path: &[usize], sub: &Formula) -> String {
    let path = if path.is_empty() {
        "root".to_string()
    } else {
        path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".")
    };
    format!("`{sub}` at child path {path}")
}

fn prop(f: &Formula, base: &[usize]) -> Result<Formula, LogicError> {
    match f.first_temporal() {
        None => Ok(push_negations(f)),
        Some((rel, sub)) => {
            let mut path = base.to_vec();
            path.extend(rel);
            Err(LogicError::Unsupported {
                location: location(&path, sub),
            })
        }
    }
}

/// Splits `f` into a top-level temporal operator over propositional operands.
/// A leading negation is moved inside by duality (`!G p = F !p`, ...).
pub fn decompose(f: &Formula) -> Result<Shape, LogicError> {
    let mut negated = false;
    let mut cur = f;
    let mut path = Vec::new();
    while let Formula::Not(inner) = cur {
        negated = !negated;
        cur = inner;
        path.push(0);
    }
    let neg = |g: &Formula| if negated { push_negations(&Formula::not(g.clone())) } else { g.clone() };
    let child = |i: usize| {
        let mut p = path.clone();
        p.push(i);
        p
    };
    let shape = match cur {
        Formula::Always(a) => {
            let a = neg(&prop(a, &child(0))?);
            if negated { Shape::Reach(a) } else { Shape::Invariant(a) }
        }
        Formula::Eventually(a) => {
            let a = neg(&prop(a, &child(0))?);
            if negated { Shape::Invariant(a) } else { Shape::Reach(a) }
        }
        Formula::BoundedAlways(n, a) => {
            let a = neg(&prop(a, &child(0))?);
            if negated { Shape::BoundedReach(a, *n) } else { Shape::BoundedInvariant(a, *n) }
        }
        Formula::BoundedEventually(n, a) => {
            let a = neg(&prop(a, &child(0))?);
            if negated { Shape::BoundedInvariant(a, *n) } else { Shape::BoundedReach(a, *n) }
        }
        Formula::Next(a) => Shape::Next(neg(&prop(a, &child(0))?)),
        Formula::Until(a, b) | Formula::BoundedUntil(_, a, b) if !negated => {
            let (a, b) = (prop(a, &child(0))?, prop(b, &child(1))?);
            match cur {
                Formula::BoundedUntil(n, ..) => Shape::BoundedUntil(a, b, *n),
                _ => Shape::Until(a, b),
            }
        }
        other => {
            let location = match other.first_temporal() {
                None => format!("`{other}` has no top-level temporal operator"),
                Some(_) if other.is_temporal() => {
                    format!("negated until `{other}` is outside the fragment")
                }
                Some((rel, sub)) => {
                    let mut p = path.clone();
                    p.extend(rel);
                    location(&p, sub)
                }
            };
            return Err(LogicError::Unsupported { location });
        }
    };
    Ok(shape)
}

pub fn classify(f: &Formula) -> FragmentClass {
    match decompose(f) {
        Ok(shape) => shape.class(),
        Err(LogicError::Unsupported { location }) => FragmentClass::Unsupported { location },
        Err(e) => FragmentClass::Unsupported {
            location: e.to_string(),
        },
    }
}

/// Membership vector of the states satisfying propositional formula `p`.
pub fn state_set(chain: &MarkovChain, p: &Formula) -> Result<Vec<bool>, LogicError> {
    fn eval(chain: &MarkovChain, i: usize, f: &Formula) -> Result<bool, LogicError> {
        Ok(match f {
            Formula::True => true,
            Formula::False => false,
            Formula::Atom(AtomicPredicate::Label(name)) => chain
                .label(name)
                .ok_or_else(|| LogicError::UnknownLabel(name.clone()))?
                .binary_search(&i)
                .is_ok(),
            Formula::Atom(a) => eval_atom(&chain.state(i), a).unwrap_or(false),
            Formula::Not(a) => !eval(chain, i, a)?,
            Formula::And(a, b) => eval(chain, i, a)? && eval(chain, i, b)?,
            Formula::Or(a, b) => eval(chain, i, a)? || eval(chain, i, b)?,
            other => {
                return Err(LogicError::Unsupported {
                    location: format!("temporal operator `{other}` inside a state formula"),
                })
            }
        })
    }
    (0..chain.len()).map(|i| eval(chain, i, p)).collect()
}

/// The state sets a checker needs, one variant per fragment shape.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Invariant { safe: Vec<bool> },
    Reach { target: Vec<bool> },
    Until { hold: Vec<bool>, goal: Vec<bool> },
    Next { target: Vec<bool> },
    BoundedInvariant { safe: Vec<bool>, bound: u32 },
    BoundedReach { target: Vec<bool>, bound: u32 },
    BoundedUntil { hold: Vec<bool>, goal: Vec<bool>, bound: u32 },
}

impl Query {
    pub fn is_bounded(&self) -> bool {
        matches!(
            self,
            Query::BoundedInvariant { .. } | Query::BoundedReach { .. } | Query::BoundedUntil { .. }
        )
    }
}

pub fn label_shape(chain: &MarkovChain, shape: &Shape) -> Result<Query, LogicError> {
    Ok(match shape {
        Shape::Invariant(p) => Query::Invariant {
            safe: state_set(chain, p)?,
        },
        Shape::Reach(p) => Query::Reach {
            target: state_set(chain, p)?,
        },
        Shape::Until(p, q) => Query::Until {
            hold: state_set(chain, p)?,
            goal: state_set(chain, q)?,
        },
        Shape::Next(p) => Query::Next {
            target: state_set(chain, p)?,
        },
        Shape::BoundedInvariant(p, n) => Query::BoundedInvariant {
            safe: state_set(chain, p)?,
            bound: *n,
        },
        Shape::BoundedReach(p, n) => Query::BoundedReach {
            target: state_set(chain, p)?,
            bound: *n,
        },
        Shape::BoundedUntil(p, q, n) => Query::BoundedUntil {
            hold: state_set(chain, p)?,
            goal: state_set(chain, q)?,
            bound: *n,
        },
    })
}

/// Labels `chain` with the state sets required to check `f`.
pub fn label_chain(chain: &MarkovChain, f: &Formula) -> Result<Query, LogicError> {
    label_shape(chain, &decompose(f)?)
}

/// The car must not stop in front of the sidewalk unless a pedestrian is there.
pub fn phi1(params: &ScenarioParams) -> Formula {
    let k1 = params.sidewalk() - 1;
    parse(&format!("G(env=ped | !(cell={k1} & speed=0))")).expect("phi1 parses")
}

/// With a pedestrian present, every state from `C_{k-1}` on is the stop.
pub fn phi2(params: &ScenarioParams) -> Formula {
    let k1 = params.sidewalk() - 1;
    parse(&format!("G(!(env=ped) | !(cell>={k1}) | (cell={k1} & speed=0))")).expect("phi2 parses")
}

/// No stop anywhere before `C_{k-1}`.
pub fn phi3(params: &ScenarioParams) -> Formula {
    let k2 = params.sidewalk() as i64 - 2;
    parse(&format!("G(!(cell<={k2} & speed=0))")).expect("phi3 parses")
}

/// Resolves `phi1`/`phi2`/`phi3` against `params`; anything else is parsed.
pub fn resolve_formula(text: &str, params: &ScenarioParams) -> Result<Formula, LogicError> {
    match text.trim() {
        "phi1" => Ok(phi1(params)),
        "phi2" => Ok(phi2(params)),
        "phi3" => Ok(phi3(params)),
        other => parse(other),
    }
}
