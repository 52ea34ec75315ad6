//! Compiled language-aligned reward machines.
//!
//! A [`Larm`] is built from a validated [`RewardMachineSpec`] plus one
//! instruction per state. Transition lookup is total: any event without an
//! explicit edge out of the current state (including events the machine has
//! never heard of) follows that state's `else` self-loop with reward 0.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use crate::embed::{EmbedError, Embedder, EmbeddingVector};
use crate::rm_dsl::{validate_rm, EventLabel, RewardMachineSpec, ValidationReport};

pub type StateId = usize;
pub type EventId = usize;

/// Above this many states the positive-cycle check stops enumerating every
/// elementary cycle and runs a Bellman-Ford existence check instead.
pub const CYCLE_ENUMERATION_LIMIT: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error("reward machine has validation errors:\n{0}")]
    Invalid(ValidationReport),
    #[error("no instruction for state `{0}`")]
    MissingInstruction(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MachineError {
    #[error("unknown state id {0}")]
    UnknownState(StateId),
    #[error("reward is unbounded: positive cycle through {0:?}")]
    PositiveCycle(Vec<String>),
    #[error("no final state is reachable from the initial state")]
    NoFinalReachable,
}

#[derive(Debug, thiserror::Error)]
pub enum InstructionParseError {
    #[error("line {0}: expected `state: instruction`")]
    Malformed(usize),
    #[error("line {0}: duplicate instruction for `{1}`")]
    Duplicate(usize, String),
}

/// Per-state instruction text, keyed by state name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Instructions(pub HashMap<String, String>);

impl Instructions {
    /// Parses `state: instruction` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, InstructionParseError> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (state, instr) = line
                .split_once(':')
                .ok_or(InstructionParseError::Malformed(i + 1))?;
            let state = state.trim();
            if state.is_empty() {
                return Err(InstructionParseError::Malformed(i + 1));
            }
            if map
                .insert(state.to_string(), instr.trim().to_string())
                .is_some()
            {
                return Err(InstructionParseError::Duplicate(i + 1, state.to_string()));
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, state: &str) -> Option<&str> {
        self.0.get(state).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateId,
    pub reward: f64,
    /// `None` when the `else` transition was taken.
    pub fired_event: Option<EventId>,
    pub is_final: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: StateId,
    pub event: EventId,
    pub to: StateId,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Larm {
    spec: RewardMachineSpec,
    states: Vec<String>,
    state_index: HashMap<String, StateId>,
    events: Vec<String>,
    event_index: HashMap<String, EventId>,
    initial: StateId,
    /// `[state][event]` explicit successor and its reward.
    table: Vec<Vec<Option<(StateId, f64)>>>,
    /// Explicit edges per state, in transition declaration order.
    outgoing: Vec<Vec<Edge>>,
    finals: Vec<bool>,
    instructions: Vec<String>,
    embeddings: Vec<EmbeddingVector>,
}

/// Compiles a validated spec; embeddings are computed once here.
pub fn compile(
    spec: &RewardMachineSpec,
    instructions: &Instructions,
    embedder: &dyn Embedder,
) -> Result<Larm, CompileError> {
    let report = validate_rm(spec);
    if !report.is_ok() {
        return Err(CompileError::Invalid(report));
    }
    let states = spec.states.clone();
    let state_index: HashMap<String, StateId> = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    let events = spec.events();
    let event_index: HashMap<String, EventId> = events
        .iter()
        .enumerate()
        .map(|(i, e)| (e.clone(), i))
        .collect();

    // Last duplicate reward line wins.
    let mut rewards: HashMap<(StateId, EventId, StateId), f64> = HashMap::new();
    for r in &spec.rewards {
        if let EventLabel::Named(e) = &r.event {
            rewards.insert(
                (state_index[&r.from], event_index[e], state_index[&r.to]),
                r.reward,
            );
        }
    }

    let mut table = vec![vec![None; events.len()]; states.len()];
    let mut outgoing = vec![Vec::new(); states.len()];
    for t in &spec.transitions {
        if let EventLabel::Named(e) = &t.event {
            let (from, event, to) = (state_index[&t.from], event_index[e], state_index[&t.to]);
            let reward = rewards.get(&(from, event, to)).copied().unwrap_or(0.0);
            table[from][event] = Some((to, reward));
            outgoing[from].push(Edge { from, event, to, reward });
        }
    }
    let finals = outgoing.iter().map(Vec::is_empty).collect();

    let mut texts = Vec::with_capacity(states.len());
    let mut embeddings = Vec::with_capacity(states.len());
    for s in &states {
        let text = instructions
            .get(s)
            .ok_or_else(|| CompileError::MissingInstruction(s.clone()))?;
        embeddings.push(embedder.embed(text)?);
        texts.push(text.to_string());
    }

    Ok(Larm {
        spec: spec.clone(),
        initial: state_index[&spec.initial],
        states,
        state_index,
        events,
        event_index,
        table,
        outgoing,
        finals,
        instructions: texts,
        embeddings,
    })
}

impl Larm {
    pub fn spec(&self) -> &RewardMachineSpec {
        &self.spec
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn state_name(&self, u: StateId) -> &str {
        &self.states[u]
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.state_index.get(name).copied()
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn event_name(&self, e: EventId) -> &str {
        &self.events[e]
    }

    /// Undeclared event names have no id and behave like `else`.
    pub fn event_id(&self, name: &str) -> Option<EventId> {
        self.event_index.get(name).copied()
    }

    pub fn is_final(&self, u: StateId) -> bool {
        self.finals[u]
    }

    pub fn finals(&self) -> BTreeSet<StateId> {
        (0..self.states.len()).filter(|&u| self.finals[u]).collect()
    }

    pub fn instruction(&self, u: StateId) -> &str {
        &self.instructions[u]
    }

    pub fn embedding(&self, u: StateId) -> &EmbeddingVector {
        &self.embeddings[u]
    }

    /// Explicit edges leaving `u`, in declaration order.
    pub fn outgoing(&self, u: StateId) -> &[Edge] {
        &self.outgoing[u]
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.outgoing.iter().flatten()
    }

    /// Applies one event (or no event) to state `u`.
    pub fn step(&self, u: StateId, event: Option<EventId>) -> Result<StepOutcome, MachineError> {
        let row = self.table.get(u).ok_or(MachineError::UnknownState(u))?;
        let hit = event.and_then(|e| row.get(e).copied().flatten().map(|(to, r)| (e, to, r)));
        let (next_state, reward, fired_event) = match hit {
            Some((e, to, r)) => (to, r, Some(e)),
            None => (u, 0.0, None),
        };
        Ok(StepOutcome {
            next_state,
            reward,
            fired_event,
            is_final: self.finals[next_state],
        })
    }
}

pub fn rm_step(larm: &Larm, u: StateId, event: Option<EventId>) -> Result<StepOutcome, MachineError> {
    larm.step(u, event)
}

/// BFS over explicit transitions from the initial state.
pub fn reachable_states(larm: &Larm) -> BTreeSet<StateId> {
    let mut seen = BTreeSet::from([larm.initial]);
    let mut queue = VecDeque::from([larm.initial]);
    while let Some(u) = queue.pop_front() {
        for e in larm.outgoing(u) {
            if seen.insert(e.to) {
                queue.push_back(e.to);
            }
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardCycle {
    /// States in cycle order, rotated so the smallest id comes first.
    pub states: Vec<StateId>,
    /// Best total reward around the cycle (parallel edges contribute their maximum).
    pub total: f64,
}

/// Strongest reward on any explicit edge `from -> to`.
fn best_edge_rewards(larm: &Larm) -> HashMap<(StateId, StateId), f64> {
    let mut best: HashMap<(StateId, StateId), f64> = HashMap::new();
    for e in larm.edges() {
        best.entry((e.from, e.to))
            .and_modify(|r| *r = r.max(e.reward))
            .or_insert(e.reward);
    }
    best
}

fn successors(n: usize, best: &HashMap<(StateId, StateId), f64>) -> Vec<Vec<(StateId, f64)>> {
    let mut adj = vec![Vec::new(); n];
    for (&(a, b), &r) in best {
        adj[a].push((b, r));
    }
    adj.iter_mut().for_each(|v| v.sort_by_key(|(b, _)| *b));
    adj
}

/// Every elementary cycle of explicit transitions whose reward sum is
/// positive, each reported once up to rotation. Empty means the machine
/// cannot be farmed for unbounded reward.
///
/// Machines larger than [`CYCLE_ENUMERATION_LIMIT`] states get a
/// Bellman-Ford existence check that returns at most one witness cycle.
pub fn detect_positive_cycles(larm: &Larm) -> Vec<RewardCycle> {
    let n = larm.num_states();
    let best = best_edge_rewards(larm);
    let adj = successors(n, &best);
    if n > CYCLE_ENUMERATION_LIMIT {
        return bellman_ford_witness(n, &adj).into_iter().collect();
    }

    let mut found = Vec::new();
    let mut path = Vec::new();
    let mut on_path = vec![false; n];
    // Cycles are rooted at their smallest state, so each is visited once.
    for start in 0..n {
        path.push(start);
        on_path[start] = true;
        extend_cycles(start, start, 0.0, &adj, &mut path, &mut on_path, &mut found);
        on_path[start] = false;
        path.pop();
    }
    found
}

fn extend_cycles(
    start: StateId,
    u: StateId,
    sum: f64,
    adj: &[Vec<(StateId, f64)>],
    path: &mut Vec<StateId>,
    on_path: &mut [bool],
    found: &mut Vec<RewardCycle>,
) {
    for &(v, r) in &adj[u] {
        if v == start {
            let total = sum + r;
            if total > 0.0 {
                found.push(RewardCycle {
                    states: path.clone(),
                    total,
                });
            }
        } else if v > start && !on_path[v] {
            path.push(v);
            on_path[v] = true;
            extend_cycles(start, v, sum + r, adj, path, on_path, found);
            on_path[v] = false;
            path.pop();
        }
    }
}

/// Longest-path relaxation from a virtual source; a relaxation in round `n`
/// proves a positive cycle, which is recovered from the predecessor chain.
fn bellman_ford_witness(n: usize, adj: &[Vec<(StateId, f64)>]) -> Option<RewardCycle> {
    let mut dist = vec![0.0; n];
    let mut pred: Vec<Option<StateId>> = vec![None; n];
    let mut last = None;
    for _ in 0..n {
        last = None;
        for u in 0..n {
            for &(v, r) in &adj[u] {
                if dist[u] + r > dist[v] + 1e-12 {
                    dist[v] = dist[u] + r;
                    pred[v] = Some(u);
                    last = Some(v);
                }
            }
        }
        last?;
    }
    let mut x = last?;
    for _ in 0..n {
        x = pred[x]?;
    }
    let mut cycle = vec![x];
    let mut y = pred[x]?;
    while y != x {
        cycle.push(y);
        y = pred[y]?;
    }
    cycle.reverse();
    let best: HashMap<(StateId, StateId), f64> = adj
        .iter()
        .enumerate()
        .flat_map(|(u, vs)| vs.iter().map(move |&(v, r)| ((u, v), r)))
        .collect();
    let total = (0..cycle.len())
        .map(|i| best[&(cycle[i], cycle[(i + 1) % cycle.len()])])
        .sum();
    let min_pos = (0..cycle.len()).min_by_key(|&i| cycle[i]).unwrap_or(0);
    cycle.rotate_left(min_pos);
    Some(RewardCycle { states: cycle, total })
}

/// Tarjan's strongly connected components, returned in reverse topological
/// order of the condensation (sinks first).
fn tarjan_scc(n: usize, adj: &[Vec<(StateId, f64)>]) -> Vec<Vec<StateId>> {
    struct Tarjan<'a> {
        adj: &'a [Vec<(StateId, f64)>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<StateId>,
        next: usize,
        out: Vec<Vec<StateId>>,
    }
    impl Tarjan<'_> {
        fn visit(&mut self, u: StateId) {
            self.index[u] = Some(self.next);
            self.low[u] = self.next;
            self.next += 1;
            self.stack.push(u);
            self.on_stack[u] = true;
            for i in 0..self.adj[u].len() {
                let v = self.adj[u][i].0;
                match self.index[v] {
                    None => {
                        self.visit(v);
                        self.low[u] = self.low[u].min(self.low[v]);
                    }
                    Some(iv) if self.on_stack[v] => self.low[u] = self.low[u].min(iv),
                    _ => {}
                }
            }
            if Some(self.low[u]) == self.index[u] {
                let mut comp = Vec::new();
                while let Some(w) = self.stack.pop() {
                    self.on_stack[w] = false;
                    comp.push(w);
                    if w == u {
                        break;
                    }
                }
                self.out.push(comp);
            }
        }
    }
    let mut t = Tarjan {
        adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for u in 0..n {
        if t.index[u].is_none() {
            t.visit(u);
        }
    }
    t.out
}

/// Largest total reward of any walk from the initial state to a final state.
///
/// Runs longest-path dynamic programming forward from the initial state over
/// the condensation of the explicit-transition graph; inside each strongly
/// connected component the values are relaxed until stable, which terminates
/// because no cycle has positive reward. Rewards accumulate in walk order, so
/// the result is the exact floating-point sum along the best path.
pub fn max_path_reward(larm: &Larm) -> Result<f64, MachineError> {
    if let Some(c) = detect_positive_cycles(larm).into_iter().next() {
        return Err(MachineError::PositiveCycle(
            c.states.iter().map(|&u| larm.state_name(u).to_string()).collect(),
        ));
    }
    let n = larm.num_states();
    let adj = successors(n, &best_edge_rewards(larm));
    let mut components = tarjan_scc(n, &adj);
    // Tarjan emits components in reverse topological order.
    components.reverse();
    let mut comp_of = vec![0; n];
    for (i, comp) in components.iter().enumerate() {
        for &u in comp {
            comp_of[u] = i;
        }
    }

    // best[u] = max reward of a walk from the initial state to u.
    let mut best: Vec<Option<f64>> = vec![None; n];
    best[larm.initial()] = Some(0.0);
    let relax = |best: &mut Vec<Option<f64>>, u: usize, v: usize, r: f64| -> bool {
        let Some(bu) = best[u] else { return false };
        let cand = bu + r;
        if best[v].is_none_or(|bv| cand > bv + 1e-12) {
            best[v] = Some(cand);
            return true;
        }
        false
    };
    for (i, comp) in components.iter().enumerate() {
        for _ in 0..comp.len() {
            let mut changed = false;
            for &u in comp {
                for &(v, r) in &adj[u] {
                    if comp_of[v] == i {
                        changed |= relax(&mut best, u, v, r);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for &u in comp {
            for &(v, r) in &adj[u] {
                if comp_of[v] != i {
                    relax(&mut best, u, v, r);
                }
            }
        }
    }
    (0..n)
        .filter(|&u| larm.is_final(u))
        .filter_map(|u| best[u])
        .reduce(f64::max)
        .ok_or(MachineError::NoFinalReachable)
}

#[derive(Debug, Clone, Copy)]
pub struct DotOptions {
    pub include_else: bool,
}

impl Default for DotOptions {
    fn default() -> Self {
        Self { include_else: false }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz digraph: explicit edges labeled `event/reward`, negative rewards
/// in red, final states double-circled, initial state bold.
pub fn to_dot(larm: &Larm, opts: DotOptions) -> String {
    let mut out = String::from("digraph reward_machine {\n    rankdir=LR;\n");
    for u in 0..larm.num_states() {
        let shape = if larm.is_final(u) { "doublecircle" } else { "circle" };
        let style = if u == larm.initial() { ", style=bold" } else { "" };
        let _ = writeln!(
            out,
            "    \"{}\" [shape={shape}{style}, tooltip=\"{}\"];",
            dot_escape(larm.state_name(u)),
            dot_escape(larm.instruction(u))
        );
    }
    for e in larm.edges() {
        let color = if e.reward < 0.0 { ", color=red, fontcolor=red" } else { "" };
        let _ = writeln!(
            out,
            "    \"{}\" -> \"{}\" [label=\"{}/{}\"{color}];",
            dot_escape(larm.state_name(e.from)),
            dot_escape(larm.state_name(e.to)),
            dot_escape(larm.event_name(e.event)),
            crate::rm_dsl::format_reward(e.reward)
        );
    }
    if opts.include_else {
        for u in 0..larm.num_states() {
            let name = dot_escape(larm.state_name(u));
            let _ = writeln!(out, "    \"{name}\" -> \"{name}\" [label=\"else/0\", style=dashed];");
        }
    }
    out.push_str("}\n");
    out
}
