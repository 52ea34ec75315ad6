//! Plaintext reward-machine language.
//!
//! ```text
//! REWARD_MACHINE:
//! STATES: u0, u1
//! INITIAL_STATE: u0
//! TRANSITION_FUNCTION:
//! (u0, has_key) -> u1
//! (u0, else) -> u0
//! (u1, else) -> u1
//! REWARD_FUNCTION:
//! (u0, has_key, u1) -> 0.2
//! ```
//!
//! Parsing only checks shape. Semantic checks (declared states, determinism,
//! `else` coverage, reward/transition agreement) live in [`validate_rm`] so
//! that a malformed machine can still be inspected and reported on.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::Serialize;

/// Event position of a transition or reward line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum EventLabel {
    Named(String),
    Else,
}

impl EventLabel {
    pub fn name(&self) -> Option<&str> {
        match self {
            EventLabel::Named(n) => Some(n),
            EventLabel::Else => None,
        }
    }

    pub fn is_else(&self) -> bool {
        matches!(self, EventLabel::Else)
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventLabel::Named(n) => f.write_str(n),
            EventLabel::Else => f.write_str("else"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub from: String,
    pub event: EventLabel,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardEntry {
    pub from: String,
    pub event: EventLabel,
    pub to: String,
    pub reward: f64,
}

/// Parsed reward machine, in declaration order.
///
/// Source line numbers are kept alongside for diagnostics but are not part of
/// structural equality.
#[derive(Debug, Clone, Serialize)]
pub struct RewardMachineSpec {
    pub states: Vec<String>,
    pub initial: String,
    pub transitions: Vec<Transition>,
    pub rewards: Vec<RewardEntry>,
    #[serde(skip)]
    pub lines: SourceLines,
}

/// 1-based source lines of each parsed item; all zero for hand-built specs.
#[derive(Debug, Clone, Default)]
pub struct SourceLines {
    pub states: usize,
    pub initial: usize,
    pub transitions: Vec<usize>,
    pub rewards: Vec<usize>,
}

impl PartialEq for RewardMachineSpec {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
            && self.initial == other.initial
            && self.transitions == other.transitions
            && self.rewards == other.rewards
    }
}

impl RewardMachineSpec {
    /// Builds a spec programmatically. Line information is left empty.
    pub fn new(
        states: Vec<String>,
        initial: impl Into<String>,
        transitions: Vec<Transition>,
        rewards: Vec<RewardEntry>,
    ) -> Self {
        Self {
            states,
            initial: initial.into(),
            transitions,
            rewards,
            lines: SourceLines::default(),
        }
    }

    /// Distinct non-`else` events in order of first appearance in the
    /// transition function.
    pub fn events(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in &self.transitions {
            if let EventLabel::Named(n) = &t.event {
                if seen.insert(n.clone()) {
                    out.push(n.clone());
                }
            }
        }
        out
    }

    fn transition_line(&self, i: usize) -> usize {
        self.lines.transitions.get(i).copied().unwrap_or(0)
    }

    fn reward_line(&self, i: usize) -> usize {
        self.lines.rewards.get(i).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    RewardMachine,
    States,
    InitialState,
    TransitionFunction,
    RewardFunction,
}

impl Section {
    const ORDER: [Section; 5] = [
        Section::RewardMachine,
        Section::States,
        Section::InitialState,
        Section::TransitionFunction,
        Section::RewardFunction,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Section::RewardMachine => "REWARD_MACHINE:",
            Section::States => "STATES:",
            Section::InitialState => "INITIAL_STATE:",
            Section::TransitionFunction => "TRANSITION_FUNCTION:",
            Section::RewardFunction => "REWARD_FUNCTION:",
        }
    }

    fn index(self) -> usize {
        Self::ORDER.iter().position(|s| *s == self).unwrap()
    }

    fn of_line(line: &str) -> Option<Section> {
        Self::ORDER.into_iter().find(|s| line.starts_with(s.header()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyntaxErrorKind {
    #[error("missing section `{}`", .0.header())]
    MissingSection(Section),
    #[error("section `{}` out of order", .0.header())]
    OutOfOrder(Section),
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("invalid identifier `{0}`")]
    BadIdentifier(String),
    #[error("non-numeric reward `{0}`")]
    BadReward(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct SyntaxError {
    pub line: usize,
    pub kind: SyntaxErrorKind,
}

fn syntax(line: usize, kind: SyntaxErrorKind) -> SyntaxError {
    SyntaxError { line, kind }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn ident(s: &str, line: usize) -> Result<String, SyntaxError> {
    let s = s.trim();
    if is_identifier(s) {
        Ok(s.to_string())
    } else {
        Err(syntax(line, SyntaxErrorKind::BadIdentifier(s.to_string())))
    }
}

fn event_label(s: &str, line: usize) -> Result<EventLabel, SyntaxError> {
    let s = s.trim();
    if s == "else" {
        Ok(EventLabel::Else)
    } else {
        ident(s, line).map(EventLabel::Named)
    }
}

/// Splits `(a, b[, c]) -> rhs` into the tuple fields and the right-hand side.
fn split_arrow(text: &str, line: usize) -> Result<(Vec<&str>, &str), SyntaxError> {
    let malformed = || syntax(line, SyntaxErrorKind::Malformed(text.to_string()));
    let (lhs, rhs) = text.split_once("->").ok_or_else(malformed)?;
    let lhs = lhs.trim();
    let inner = lhs
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(malformed)?;
    let rhs = rhs.trim();
    if rhs.is_empty() {
        return Err(malformed());
    }
    Ok((inner.split(',').collect(), rhs))
}

fn parse_transition(text: &str, line: usize) -> Result<Transition, SyntaxError> {
    let (fields, rhs) = split_arrow(text, line)?;
    if fields.len() != 2 {
        return Err(syntax(line, SyntaxErrorKind::Malformed(text.to_string())));
    }
    Ok(Transition {
        from: ident(fields[0], line)?,
        event: event_label(fields[1], line)?,
        to: ident(rhs, line)?,
    })
}

fn parse_reward(text: &str, line: usize) -> Result<RewardEntry, SyntaxError> {
    let (fields, rhs) = split_arrow(text, line)?;
    if fields.len() != 3 {
        return Err(syntax(line, SyntaxErrorKind::Malformed(text.to_string())));
    }
    let reward: f64 = rhs
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite())
        .ok_or_else(|| syntax(line, SyntaxErrorKind::BadReward(rhs.to_string())))?;
    Ok(RewardEntry {
        from: ident(fields[0], line)?,
        event: event_label(fields[1], line)?,
        to: ident(fields[2], line)?,
        reward,
    })
}

/// Parses reward-machine text. Blank lines and horizontal whitespace are
/// ignored; the five section headers must appear exactly once, in order.
pub fn parse_rm(text: &str) -> Result<RewardMachineSpec, SyntaxError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let eof_line = text.lines().count() + 1;

    let mut states = Vec::new();
    let mut initial = None;
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    let mut src = SourceLines::default();
    let mut current: Option<Section> = None;

    for &(line_no, line) in &lines {
        if let Some(section) = Section::of_line(line) {
            let expected = current.map_or(0, |c| c.index() + 1);
            if section.index() > expected {
                return Err(syntax(
                    line_no,
                    SyntaxErrorKind::MissingSection(Section::ORDER[expected]),
                ));
            }
            if section.index() < expected {
                return Err(syntax(line_no, SyntaxErrorKind::OutOfOrder(section)));
            }
            let rest = line[section.header().len()..].trim();
            match section {
                Section::States => {
                    if rest.is_empty() {
                        return Err(syntax(line_no, SyntaxErrorKind::Malformed(line.into())));
                    }
                    for s in rest.split(',') {
                        states.push(ident(s, line_no)?);
                    }
                    src.states = line_no;
                }
                Section::InitialState => {
                    initial = Some(ident(rest, line_no)?);
                    src.initial = line_no;
                }
                _ if !rest.is_empty() => {
                    return Err(syntax(line_no, SyntaxErrorKind::Malformed(line.into())));
                }
                _ => {}
            }
            current = Some(section);
            continue;
        }
        match current {
            Some(Section::TransitionFunction) => {
                transitions.push(parse_transition(line, line_no)?);
                src.transitions.push(line_no);
            }
            Some(Section::RewardFunction) => {
                rewards.push(parse_reward(line, line_no)?);
                src.rewards.push(line_no);
            }
            None => {
                return Err(syntax(
                    line_no,
                    SyntaxErrorKind::MissingSection(Section::RewardMachine),
                ))
            }
            Some(_) => {
                return Err(syntax(line_no, SyntaxErrorKind::Malformed(line.to_string())));
            }
        }
    }

    match current {
        Some(Section::RewardFunction) => {}
        other => {
            let next = other.map_or(0, |c| c.index() + 1);
            return Err(syntax(
                eof_line,
                SyntaxErrorKind::MissingSection(Section::ORDER[next]),
            ));
        }
    }

    Ok(RewardMachineSpec {
        states,
        initial: initial.expect("initial section was parsed"),
        transitions,
        rewards,
        lines: src,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Code {
    #[serde(rename = "E_UNDECLARED_STATE")]
    UndeclaredState,
    #[serde(rename = "E_DUP_TRANSITION")]
    DupTransition,
    #[serde(rename = "E_MISSING_ELSE")]
    MissingElse,
    #[serde(rename = "E_ELSE_NOT_SELF")]
    ElseNotSelf,
    #[serde(rename = "E_REWARD_NO_TRANSITION")]
    RewardNoTransition,
    #[serde(rename = "E_INITIAL_UNDECLARED")]
    InitialUndeclared,
    #[serde(rename = "E_DUP_STATE")]
    DupState,
    #[serde(rename = "W_UNREACHABLE_STATE")]
    UnreachableState,
    #[serde(rename = "W_DUP_REWARD")]
    DupReward,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::UndeclaredState => "E_UNDECLARED_STATE",
            Code::DupTransition => "E_DUP_TRANSITION",
            Code::MissingElse => "E_MISSING_ELSE",
            Code::ElseNotSelf => "E_ELSE_NOT_SELF",
            Code::RewardNoTransition => "E_REWARD_NO_TRANSITION",
            Code::InitialUndeclared => "E_INITIAL_UNDECLARED",
            Code::DupState => "E_DUP_STATE",
            Code::UnreachableState => "W_UNREACHABLE_STATE",
            Code::DupReward => "W_DUP_REWARD",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub code: Code,
    /// 1-based source line, 0 when the spec was not parsed from text.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (line {}): {}", self.code, self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has(&self, code: Code) -> bool {
        self.errors
            .iter()
            .chain(&self.warnings)
            .any(|f| f.code == code)
    }

    fn error(&mut self, code: Code, line: usize, message: String) {
        self.errors.push(Finding { code, line, message });
    }

    fn warn(&mut self, code: Code, line: usize, message: String) {
        self.warnings.push(Finding { code, line, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant and collects all findings.
pub fn validate_rm(spec: &RewardMachineSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut declared = HashSet::new();
    for s in &spec.states {
        if !declared.insert(s.as_str()) {
            report.error(
                Code::DupState,
                spec.lines.states,
                format!("state `{s}` declared more than once"),
            );
        }
    }

    if !declared.contains(spec.initial.as_str()) {
        report.error(
            Code::InitialUndeclared,
            spec.lines.initial,
            format!("initial state `{}` is not declared", spec.initial),
        );
    }

    let mut seen: HashMap<(&str, &EventLabel), usize> = HashMap::new();
    for (i, t) in spec.transitions.iter().enumerate() {
        let line = spec.transition_line(i);
        for s in [&t.from, &t.to] {
            if !declared.contains(s.as_str()) {
                report.error(
                    Code::UndeclaredState,
                    line,
                    format!("state `{s}` is not declared in STATES"),
                );
            }
        }
        if let Some(first) = seen.insert((t.from.as_str(), &t.event), line) {
            report.error(
                Code::DupTransition,
                line,
                format!(
                    "second transition for ({}, {}); first at line {first}",
                    t.from, t.event
                ),
            );
        }
        if t.event.is_else() && t.from != t.to {
            report.error(
                Code::ElseNotSelf,
                line,
                format!("({}, else) must target `{}`, not `{}`", t.from, t.from, t.to),
            );
        }
    }

    for s in &spec.states {
        if !spec
            .transitions
            .iter()
            .any(|t| t.event.is_else() && &t.from == s)
        {
            report.error(
                Code::MissingElse,
                spec.lines.states,
                format!("state `{s}` has no ({s}, else) -> {s} transition"),
            );
        }
    }

    let mut reward_seen: HashMap<(&str, &EventLabel, &str), usize> = HashMap::new();
    for (i, r) in spec.rewards.iter().enumerate() {
        let line = spec.reward_line(i);
        let matches = !r.event.is_else()
            && spec
                .transitions
                .iter()
                .any(|t| t.from == r.from && t.event == r.event && t.to == r.to);
        if !matches {
            report.error(
                Code::RewardNoTransition,
                line,
                format!(
                    "reward ({}, {}, {}) has no matching explicit transition",
                    r.from, r.event, r.to
                ),
            );
        }
        if let Some(first) =
            reward_seen.insert((r.from.as_str(), &r.event, r.to.as_str()), line)
        {
            report.warn(
                Code::DupReward,
                line,
                format!(
                    "reward ({}, {}, {}) repeated (first at line {first}); last one wins",
                    r.from, r.event, r.to
                ),
            );
        }
    }

    if declared.contains(spec.initial.as_str()) {
        let reachable = reachable_names(spec);
        for s in &spec.states {
            if !reachable.contains(s.as_str()) {
                report.warn(
                    Code::UnreachableState,
                    spec.lines.states,
                    format!("state `{s}` is unreachable from `{}`", spec.initial),
                );
            }
        }
    }

    report
}

fn reachable_names(spec: &RewardMachineSpec) -> HashSet<&str> {
    let mut seen = HashSet::from([spec.initial.as_str()]);
    let mut queue = VecDeque::from([spec.initial.as_str()]);
    while let Some(s) = queue.pop_front() {
        for t in spec.transitions.iter().filter(|t| t.from == s && !t.event.is_else()) {
            if seen.insert(t.to.as_str()) {
                queue.push_back(t.to.as_str());
            }
        }
    }
    seen
}

/// Integral rewards keep one decimal (`1.0`); everything else uses the
/// shortest representation that parses back to the same value.
pub fn format_reward(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// Canonical text: fixed section order, one entry per line, single spaces.
pub fn serialize_rm(spec: &RewardMachineSpec) -> Result<String, ValidationReport> {
    let report = validate_rm(spec);
    if !report.is_ok() {
        return Err(report);
    }
    Ok(write_canonical(spec))
}

pub(crate) fn write_canonical(spec: &RewardMachineSpec) -> String {
    let mut out = String::new();
    out.push_str("REWARD_MACHINE:\n");
    out.push_str(&format!("STATES: {}\n", spec.states.join(", ")));
    out.push_str(&format!("INITIAL_STATE: {}\n", spec.initial));
    out.push_str("TRANSITION_FUNCTION:\n");
    for t in &spec.transitions {
        out.push_str(&format!("({}, {}) -> {}\n", t.from, t.event, t.to));
    }
    out.push_str("REWARD_FUNCTION:\n");
    for r in &spec.rewards {
        out.push_str(&format!(
            "({}, {}, {}) -> {}\n",
            r.from,
            r.event,
            r.to,
            format_reward(r.reward)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn codes(report: &ValidationReport) -> Vec<Code> {
        report.errors.iter().map(|f| f.code).collect()
    }

    #[test]
    fn doorkey_counts() {
        let spec = parse_rm(fixtures::DOORKEY_RM).unwrap();
        assert_eq!(spec.states.len(), 4);
        assert_eq!(spec.transitions.len(), 8);
        assert_eq!(spec.rewards.len(), 4);
        assert_eq!(spec.transitions[0].event, EventLabel::Named("has_key".into()));
        assert_eq!(spec.rewards[0].reward, 0.2);
    }

    #[test]
    fn metaworld_counts() {
        let spec = parse_rm(fixtures::METAWORLD_RM).unwrap();
        assert_eq!(
            (spec.states.len(), spec.transitions.len(), spec.rewards.len()),
            (5, 14, 9)
        );
    }

    #[test]
    fn missing_initial_state_section() {
        let text = "REWARD_MACHINE:\nSTATES: u0\nTRANSITION_FUNCTION:\n(u0, else) -> u0\nREWARD_FUNCTION:\n";
        let err = parse_rm(text).unwrap_err();
        assert_eq!(err.line, 3);
        assert_eq!(
            err.kind,
            SyntaxErrorKind::MissingSection(Section::InitialState)
        );
        assert!(err.to_string().contains("INITIAL_STATE:"));
    }

    #[test]
    fn out_of_order_and_truncated() {
        let text = "REWARD_MACHINE:\nSTATES: u0\nINITIAL_STATE: u0\nTRANSITION_FUNCTION:\nSTATES: u1\n";
        let err = parse_rm(text).unwrap_err();
        assert_eq!(err.line, 5);
        assert!(matches!(err.kind, SyntaxErrorKind::OutOfOrder(Section::States)));

        let text = "REWARD_MACHINE:\nSTATES: u0\nINITIAL_STATE: u0\nTRANSITION_FUNCTION:\n(u0, else) -> u0\n";
        let err = parse_rm(text).unwrap_err();
        assert_eq!(err.line, 6);
        assert!(matches!(
            err.kind,
            SyntaxErrorKind::MissingSection(Section::RewardFunction)
        ));
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let base = "REWARD_MACHINE:\nSTATES: u0, u1\nINITIAL_STATE: u0\nTRANSITION_FUNCTION:\n";
        let err = parse_rm(&format!("{base}(u0, e) => u1\nREWARD_FUNCTION:\n")).unwrap_err();
        assert_eq!(err.line, 5);
        let err = parse_rm(&format!(
            "{base}(u0, e) -> u1\nREWARD_FUNCTION:\n(u0, e, u1) -> lots\n"
        ))
        .unwrap_err();
        assert_eq!(err.line, 7);
        assert!(matches!(err.kind, SyntaxErrorKind::BadReward(_)));
        let err = parse_rm(&format!("{base}(u0, 9e) -> u1\nREWARD_FUNCTION:\n")).unwrap_err();
        assert!(matches!(err.kind, SyntaxErrorKind::BadIdentifier(_)));
    }

    #[test]
    fn whitespace_is_tolerated() {
        let text = "  REWARD_MACHINE:\n\n STATES:u0 ,\tu1\nINITIAL_STATE:   u0\nTRANSITION_FUNCTION:\n(  u0 ,e )->u1\n(u0,else) -> u0\n(u1, else)->u1\n\nREWARD_FUNCTION:\n( u0, e, u1 )  ->  -0.5\n";
        let spec = parse_rm(text).unwrap();
        assert_eq!(spec.states, vec!["u0", "u1"]);
        assert_eq!(spec.rewards[0].reward, -0.5);
        assert!(validate_rm(&spec).is_ok());
    }

    #[test]
    fn craftium_defects() {
        let spec = parse_rm(fixtures::CRAFTIUM_RM).unwrap();
        let report = validate_rm(&spec);
        let mut c = codes(&report);
        c.sort_by_key(|c| c.as_str());
        assert_eq!(
            c,
            vec![
                Code::RewardNoTransition,
                Code::RewardNoTransition,
                Code::RewardNoTransition,
                Code::UndeclaredState
            ]
        );
        let undeclared = report
            .errors
            .iter()
            .find(|f| f.code == Code::UndeclaredState)
            .unwrap();
        assert!(undeclared.message.contains("`u4`"));
        assert_eq!(undeclared.line, 11);
        assert!(report
            .errors
            .iter()
            .any(|f| f.message.contains("(u0, get_stone, u1)")));
    }

    #[test]
    fn valid_fixtures_are_clean() {
        for (name, text) in fixtures::PUBLISHED_RMS {
            if *name == "craftium" {
                continue;
            }
            let report = validate_rm(&parse_rm(text).unwrap());
            assert!(report.is_ok(), "{name}: {report}");
            assert!(report.warnings.is_empty(), "{name}: {report}");
        }
    }

    fn small(transitions: &[(&str, &str, &str)], rewards: &[(&str, &str, &str, f64)]) -> RewardMachineSpec {
        let label = |e: &str| {
            if e == "else" {
                EventLabel::Else
            } else {
                EventLabel::Named(e.into())
            }
        };
        RewardMachineSpec::new(
            vec!["u0".into(), "u1".into(), "u2".into()],
            "u0",
            transitions
                .iter()
                .map(|(f, e, t)| Transition { from: f.to_string(), event: label(e), to: t.to_string() })
                .collect(),
            rewards
                .iter()
                .map(|(f, e, t, r)| RewardEntry {
                    from: f.to_string(),
                    event: label(e),
                    to: t.to_string(),
                    reward: *r,
                })
                .collect(),
        )
    }

    const ELSES: [(&str, &str, &str); 3] = [("u0", "else", "u0"), ("u1", "else", "u1"), ("u2", "else", "u2")];

    #[test]
    fn duplicate_transition() {
        let mut t = vec![("u0", "e", "u1"), ("u0", "e", "u2")];
        t.extend(ELSES);
        assert_eq!(codes(&validate_rm(&small(&t, &[]))), vec![Code::DupTransition]);
    }

    #[test]
    fn else_rules() {
        let t = vec![("u0", "e", "u1"), ("u0", "else", "u0"), ("u1", "else", "u2"), ("u2", "else", "u2")];
        assert_eq!(codes(&validate_rm(&small(&t, &[]))), vec![Code::ElseNotSelf]);
        let t = vec![("u0", "e", "u1"), ("u0", "else", "u0"), ("u2", "else", "u2")];
        assert_eq!(codes(&validate_rm(&small(&t, &[]))), vec![Code::MissingElse]);
    }

    #[test]
    fn reward_rules() {
        let mut t = vec![("u0", "e", "u1"), ("u1", "f", "u2")];
        t.extend(ELSES);
        // wrong destination, reward on else
        let r = [("u0", "e", "u2", 1.0), ("u1", "else", "u1", 0.5)];
        assert_eq!(
            codes(&validate_rm(&small(&t, &r))),
            vec![Code::RewardNoTransition, Code::RewardNoTransition]
        );
        let r = [("u0", "e", "u1", 1.0), ("u0", "e", "u1", 2.0)];
        let report = validate_rm(&small(&t, &r));
        assert!(report.is_ok());
        assert!(report.has(Code::DupReward));
    }

    #[test]
    fn unreachable_is_a_warning() {
        let mut t = vec![("u0", "e", "u1")];
        t.extend(ELSES);
        let report = validate_rm(&small(&t, &[]));
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].code, Code::UnreachableState);
        assert!(report.warnings[0].message.contains("u2"));
    }

    #[test]
    fn initial_undeclared() {
        let mut spec = small(&ELSES, &[]);
        spec.initial = "u7".into();
        assert_eq!(codes(&validate_rm(&spec)), vec![Code::InitialUndeclared]);
    }

    #[test]
    fn reward_formatting() {
        assert_eq!(format_reward(1.0), "1.0");
        assert_eq!(format_reward(-2.0), "-2.0");
        assert_eq!(format_reward(0.2), "0.2");
        assert_eq!(format_reward(1.25), "1.25");
        assert_eq!(format_reward(-0.1), "-0.1");
    }

    #[test]
    fn serialize_round_trips_fixtures() {
        let spec = parse_rm(fixtures::DOORKEY_RM).unwrap();
        let text = serialize_rm(&spec).unwrap();
        assert_eq!(parse_rm(&text).unwrap(), spec);
        assert!(text.contains("(u2, at_goal, u3) -> 1.0\n"));

        let spec = parse_rm(fixtures::UNLOCK_TO_UNLOCK_RM).unwrap();
        let text = serialize_rm(&spec).unwrap();
        assert!(text.starts_with("REWARD_MACHINE:\nSTATES: u0, u1, u2, u3, u4, u5\n"));
        assert!(!text.contains("\n\n"));
        assert_eq!(parse_rm(&text).unwrap(), spec);
    }

    #[test]
    fn serialize_rejects_invalid() {
        let spec = parse_rm(fixtures::CRAFTIUM_RM).unwrap();
        assert!(serialize_rm(&spec).is_err());
    }
}
