//! Boolean predicate language over symbolic observations.
//!
//! A `.lbl` file maps each event name to an expression:
//!
//! ```text
//! # comment
//! has_key: carrying(type=key)
//! lost_y_key: !carrying(type=key, color=yellow)
//! door_unlocked: count(type=door, op=ge, n=1) && !door_locked()
//! ```
//!
//! `!` binds tightest, then `&&`, then `||`; parentheses group.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, Color, Object, ObjectKind};
use crate::machine::{EventId, Larm, StateId};

/// Frozen snapshot of the environment after a step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub width: usize,
    pub height: usize,
    pub agent_pos: (usize, usize),
    /// 0 east, 1 south, 2 west, 3 north.
    pub agent_dir: u8,
    pub carrying: Option<Object>,
    /// Row-major; the cell under the agent keeps whatever the agent stands on.
    pub cells: Vec<Option<Object>>,
    pub last_action: Option<Action>,
    pub step_count: u32,
}

impl ObservationRecord {
    pub fn cell(&self, x: usize, y: usize) -> Option<&Object> {
        if x < self.width && y < self.height {
            self.cells[y * self.width + x].as_ref()
        } else {
            None
        }
    }

    pub fn objects(&self) -> impl Iterator<Item = ((usize, usize), &Object)> {
        self.cells.iter().enumerate().filter_map(move |(i, c)| {
            c.as_ref().map(|o| ((i % self.width, i / self.width), o))
        })
    }

    pub fn under_agent(&self) -> Option<&Object> {
        self.cell(self.agent_pos.0, self.agent_pos.1)
    }

    pub fn neighbours(&self) -> impl Iterator<Item = &Object> {
        let (x, y) = (self.agent_pos.0 as isize, self.agent_pos.1 as isize);
        [(1, 0), (0, 1), (-1, 0), (0, -1)]
            .into_iter()
            .filter_map(move |(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 {
                    return None;
                }
                self.cell(nx as usize, ny as usize)
            })
    }
}

/// Object type with an optional color filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectPattern {
    pub kind: ObjectKind,
    pub color: Option<Color>,
}

impl ObjectPattern {
    pub fn matches(&self, o: &Object) -> bool {
        o.kind == self.kind && self.color.is_none_or(|c| c == o.color)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CountOp {
    fn apply(self, a: usize, b: usize) -> bool {
        match self {
            CountOp::Eq => a == b,
            CountOp::Ne => a != b,
            CountOp::Lt => a < b,
            CountOp::Le => a <= b,
            CountOp::Gt => a > b,
            CountOp::Ge => a >= b,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            CountOp::Eq => "eq",
            CountOp::Ne => "ne",
            CountOp::Lt => "lt",
            CountOp::Le => "le",
            CountOp::Gt => "gt",
            CountOp::Ge => "ge",
        }
    }
}

impl FromStr for CountOp {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "eq" => CountOp::Eq,
            "ne" => CountOp::Ne,
            "lt" => CountOp::Lt,
            "le" => CountOp::Le,
            "gt" => CountOp::Gt,
            "ge" => CountOp::Ge,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Atom {
    Carrying(ObjectPattern),
    DoorOpen(Option<Color>),
    DoorLocked(Option<Color>),
    OnCell(ObjectPattern),
    AtGoal,
    Adjacent(ObjectPattern),
    Count {
        pattern: ObjectPattern,
        op: CountOp,
        n: usize,
    },
}

pub const ATOM_NAMES: [&str; 7] = [
    "carrying",
    "door_open",
    "door_locked",
    "on_cell",
    "at_goal",
    "adjacent",
    "count",
];

impl Atom {
    pub fn name(&self) -> &'static str {
        match self {
            Atom::Carrying(_) => "carrying",
            Atom::DoorOpen(_) => "door_open",
            Atom::DoorLocked(_) => "door_locked",
            Atom::OnCell(_) => "on_cell",
            Atom::AtGoal => "at_goal",
            Atom::Adjacent(_) => "adjacent",
            Atom::Count { .. } => "count",
        }
    }

    pub fn eval(&self, obs: &ObservationRecord) -> bool {
        let door = |color: Option<Color>, want: fn(&Object) -> bool| {
            obs.objects().any(|(_, o)| {
                o.kind == ObjectKind::Door && color.is_none_or(|c| c == o.color) && want(o)
            })
        };
        match self {
            Atom::Carrying(p) => obs.carrying.as_ref().is_some_and(|o| p.matches(o)),
            Atom::DoorOpen(c) => door(*c, |o| o.is_open),
            Atom::DoorLocked(c) => door(*c, |o| o.is_locked),
            Atom::OnCell(p) => obs.under_agent().is_some_and(|o| p.matches(o)),
            Atom::AtGoal => obs.under_agent().is_some_and(|o| o.kind == ObjectKind::Goal),
            Atom::Adjacent(p) => obs.neighbours().any(|o| p.matches(o)),
            Atom::Count { pattern, op, n } => {
                op.apply(obs.objects().filter(|(_, o)| pattern.matches(o)).count(), *n)
            }
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pat = |p: &ObjectPattern| match p.color {
            Some(c) => format!("type={}, color={}", p.kind, c),
            None => format!("type={}", p.kind),
        };
        let color = |c: &Option<Color>| c.map(|c| format!("color={c}")).unwrap_or_default();
        let args = match self {
            Atom::Carrying(p) | Atom::OnCell(p) | Atom::Adjacent(p) => pat(p),
            Atom::DoorOpen(c) | Atom::DoorLocked(c) => color(c),
            Atom::AtGoal => String::new(),
            Atom::Count { pattern, op, n } => {
                let mut s = format!("type={}, op={}, n={n}", pattern.kind, op.as_str());
                if let Some(c) = pattern.color {
                    s.push_str(&format!(", color={c}"));
                }
                s
            }
        };
        write!(f, "{}({args})", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredicateExpr {
    Atom(Atom),
    Not(Box<PredicateExpr>),
    And(Box<PredicateExpr>, Box<PredicateExpr>),
    Or(Box<PredicateExpr>, Box<PredicateExpr>),
}

impl PredicateExpr {
    pub fn eval(&self, obs: &ObservationRecord) -> bool {
        match self {
            PredicateExpr::Atom(a) => a.eval(obs),
            PredicateExpr::Not(e) => !e.eval(obs),
            PredicateExpr::And(a, b) => a.eval(obs) && b.eval(obs),
            PredicateExpr::Or(a, b) => a.eval(obs) || b.eval(obs),
        }
    }
}

impl fmt::Display for PredicateExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredicateExpr::Atom(a) => write!(f, "{a}"),
            PredicateExpr::Not(e) => match **e {
                PredicateExpr::Atom(_) | PredicateExpr::Not(_) => write!(f, "!{e}"),
                _ => write!(f, "!({e})"),
            },
            PredicateExpr::And(a, b) => {
                let side = |e: &PredicateExpr| match e {
                    PredicateExpr::Or(..) => format!("({e})"),
                    _ => e.to_string(),
                };
                write!(f, "{} && {}", side(a), side(b))
            }
            PredicateExpr::Or(a, b) => write!(f, "{a} || {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelingError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown predicate `{name}`")]
    UnknownAtom { line: usize, name: String },
    #[error("line {line}: bad argument `{key}` for `{atom}`")]
    BadArg {
        line: usize,
        atom: String,
        key: String,
    },
    #[error("line {line}: event `{event}` defined twice")]
    DuplicateEvent { line: usize, event: String },
    #[error("line {line}: the else event takes no predicate")]
    ElseEntry { line: usize },
    #[error("no predicate for event `{0}`")]
    UnknownEvent(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelingMap {
    entries: Vec<(String, PredicateExpr)>,
    index: HashMap<String, usize>,
}

impl LabelingMap {
    pub fn from_entries(entries: Vec<(String, PredicateExpr)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (e, _))| (e.clone(), i))
            .collect();
        Self { entries, index }
    }

    pub fn entries(&self) -> &[(String, PredicateExpr)] {
        &self.entries
    }

    pub fn get(&self, event: &str) -> Option<&PredicateExpr> {
        self.index.get(event).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Events of `larm` that have no predicate here.
    pub fn missing_events(&self, larm: &Larm) -> Vec<String> {
        larm.events()
            .iter()
            .filter(|e| !self.index.contains_key(*e))
            .cloned()
            .collect()
    }
}

impl fmt::Display for LabelingMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (event, expr) in &self.entries {
            writeln!(f, "{event}: {expr}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Eq,
    Not,
    And,
    Or,
}

fn tokenize(src: &str, line: usize) -> Result<Vec<Token>, LabelingError> {
    let err = |message: String| LabelingError::Syntax { line, message };
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' | ')' | ',' | '=' | '!' => {
                chars.next();
                out.push(match c {
                    '(' => Token::LParen,
                    ')' => Token::RParen,
                    ',' => Token::Comma,
                    '=' => Token::Eq,
                    _ => Token::Not,
                });
            }
            '&' | '|' => {
                chars.next();
                if chars.next() != Some(c) {
                    return Err(err(format!("expected `{c}{c}`")));
                }
                out.push(if c == '&' { Token::And } else { Token::Or });
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Token::Ident(s));
            }
            other => return Err(err(format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn syntax(&self, message: impl Into<String>) -> LabelingError {
        LabelingError::Syntax {
            line: self.line,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Token) -> Result<(), LabelingError> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(self.syntax(format!("expected {want:?}, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<PredicateExpr, LabelingError> {
        let mut lhs = self.term()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            lhs = PredicateExpr::Or(Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<PredicateExpr, LabelingError> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            lhs = PredicateExpr::And(Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<PredicateExpr, LabelingError> {
        match self.next() {
            Some(Token::Not) => Ok(PredicateExpr::Not(Box::new(self.factor()?))),
            Some(Token::LParen) => {
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some(Token::Ident(name)) => self.atom(name),
            other => Err(self.syntax(format!("expected a predicate, found {other:?}"))),
        }
    }

    fn atom(&mut self, name: String) -> Result<PredicateExpr, LabelingError> {
        if !ATOM_NAMES.contains(&name.as_str()) {
            return Err(LabelingError::UnknownAtom {
                line: self.line,
                name,
            });
        }
        self.expect(Token::LParen)?;
        let mut args: Vec<(String, String)> = Vec::new();
        if self.peek() != Some(&Token::RParen) {
            loop {
                let key = match self.next() {
                    Some(Token::Ident(k)) => k,
                    other => return Err(self.syntax(format!("expected argument name, found {other:?}"))),
                };
                self.expect(Token::Eq)?;
                let value = match self.next() {
                    Some(Token::Ident(v)) => v,
                    other => return Err(self.syntax(format!("expected argument value, found {other:?}"))),
                };
                if args.iter().any(|(k, _)| *k == key) {
                    return Err(self.bad_arg(&name, &key));
                }
                args.push((key, value));
                match self.peek() {
                    Some(Token::Comma) => self.pos += 1,
                    _ => break,
                }
            }
        }
        self.expect(Token::RParen)?;
        Ok(PredicateExpr::Atom(self.build_atom(&name, &args)?))
    }

    fn bad_arg(&self, atom: &str, key: &str) -> LabelingError {
        LabelingError::BadArg {
            line: self.line,
            atom: atom.to_string(),
            key: key.to_string(),
        }
    }

    fn build_atom(&self, name: &str, args: &[(String, String)]) -> Result<Atom, LabelingError> {
        let allowed: &[&str] = match name {
            "carrying" | "on_cell" | "adjacent" => &["type", "color"],
            "door_open" | "door_locked" => &["color"],
            "at_goal" => &[],
            _ => &["type", "op", "n", "color"],
        };
        if let Some((k, _)) = args.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(self.bad_arg(name, k));
        }
        let get = |k: &str| args.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let required = |k: &str| get(k).ok_or_else(|| self.bad_arg(name, k));
        let color = || -> Result<Option<Color>, LabelingError> {
            get("color")
                .map(|v| v.parse().map_err(|_| self.bad_arg(name, "color")))
                .transpose()
        };
        let pattern = || -> Result<ObjectPattern, LabelingError> {
            let kind = required("type")?
                .parse()
                .map_err(|_| self.bad_arg(name, "type"))?;
            Ok(ObjectPattern {
                kind,
                color: color()?,
            })
        };
        Ok(match name {
            "carrying" => Atom::Carrying(pattern()?),
            "on_cell" => Atom::OnCell(pattern()?),
            "adjacent" => Atom::Adjacent(pattern()?),
            "door_open" => Atom::DoorOpen(color()?),
            "door_locked" => Atom::DoorLocked(color()?),
            "at_goal" => Atom::AtGoal,
            _ => Atom::Count {
                pattern: pattern()?,
                op: required("op")?
                    .parse()
                    .map_err(|_| self.bad_arg(name, "op"))?,
                n: required("n")?
                    .parse()
                    .map_err(|_| self.bad_arg(name, "n"))?,
            },
        })
    }
}

/// Parses a single expression (no `event:` prefix).
pub fn parse_expr(src: &str) -> Result<PredicateExpr, LabelingError> {
    parse_expr_at(src, 1)
}

fn parse_expr_at(src: &str, line: usize) -> Result<PredicateExpr, LabelingError> {
    let mut p = Parser {
        tokens: tokenize(src, line)?,
        pos: 0,
        line,
    };
    let e = p.expr()?;
    if p.pos < p.tokens.len() {
        return Err(p.syntax(format!("unexpected trailing {:?}", p.tokens[p.pos])));
    }
    Ok(e)
}

pub fn parse_labeling(text: &str) -> Result<LabelingMap, LabelingError> {
    let mut entries: Vec<(String, PredicateExpr)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (event, expr) = content.split_once(':').ok_or_else(|| LabelingError::Syntax {
            line,
            message: "expected `event: expression`".into(),
        })?;
        let event = event.trim();
        if event == "else" {
            return Err(LabelingError::ElseEntry { line });
        }
        if !crate::rm_dsl::is_identifier(event) {
            return Err(LabelingError::Syntax {
                line,
                message: format!("`{event}` is not a valid event name"),
            });
        }
        if entries.iter().any(|(e, _)| e == event) {
            return Err(LabelingError::DuplicateEvent {
                line,
                event: event.to_string(),
            });
        }
        entries.push((event.to_string(), parse_expr_at(expr, line)?));
    }
    Ok(LabelingMap::from_entries(entries))
}

pub fn eval_event(
    map: &LabelingMap,
    event: &str,
    obs: &ObservationRecord,
) -> Result<bool, LabelingError> {
    map.get(event)
        .map(|e| e.eval(obs))
        .ok_or_else(|| LabelingError::UnknownEvent(event.to_string()))
}

/// First event, in transition declaration order, whose predicate holds among
/// the events with an explicit transition out of `u`.
pub fn resolve_event(
    larm: &Larm,
    map: &LabelingMap,
    u: StateId,
    obs: &ObservationRecord,
) -> Result<Option<EventId>, LabelingError> {
    resolve_event_inspect(larm, map, u, obs, |_| {})
}

/// [`resolve_event`] that reports every event name it evaluates.
pub fn resolve_event_inspect(
    larm: &Larm,
    map: &LabelingMap,
    u: StateId,
    obs: &ObservationRecord,
    mut on_eval: impl FnMut(&str),
) -> Result<Option<EventId>, LabelingError> {
    for edge in larm.outgoing(u) {
        let name = larm.event_name(edge.event);
        on_eval(name);
        if eval_event(map, name, obs)? {
            return Ok(Some(edge.event));
        }
    }
    Ok(None)
}
