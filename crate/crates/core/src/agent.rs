//! Q-learning over the product of environment and reward-machine states.
//!
//! Each step: ε-greedy action, environment step, event resolution, RM step,
//! total reward `R_env + R_rm` (the RM part is dropped in modes without RM
//! rewards), store the transition, update the value function. Episodes cycle
//! round-robin over the task list and always restart the RM in its initial
//! state.
//!
//! Two value-function backends:
//!
//! * tabular — a table keyed by a hash of the symbolic observation and an id
//!   for the RM state (0 when conditioning is off), updated online on the
//!   newest transition;
//! * linear — `Q(s, u, a) = w_a · [f(s) ⊕ f(s)⊗c(u)]` trained on replay
//!   minibatches against a periodically refreshed target copy. `f(s)` is a
//!   sparse binary vector: one-hot `(x, y, dir)`, one-hot
//!   `(x, y, dir, carried type)`, carried color, open/locked bits for up to
//!   [`MAX_DOORS`] doors, and a one-hot of the object in front of the agent.
//!   `c(u)` is the state's instruction embedding, a one-hot state id, or
//!   zero. The outer product lets the conditioning pick a different policy
//!   per sub-goal. There is deliberately no bias or `c(u)`-only term: such
//!   features are shared by every position, and with replay and bootstrapping
//!   they inflate no-op actions (e.g. `pickup` facing nothing) until greedy
//!   play loops.
//!
//! The linear backend defaults to γ = 0.95. At 0.99 the gap between adjacent
//! actions is about 1% of the value, below the approximation error of the
//! shared features, and greedy policies collapse.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{fnv1a, Embedder};
use crate::gridworld::{env_reset, plan, Action, Color, GridEnv, GridError, ObjectKind, TaskConfig};
use crate::labeling::{parse_labeling, resolve_event, LabelingError, LabelingMap, ObservationRecord};
use crate::machine::{compile, CompileError, EventId, Instructions, Larm, MachineError, StateId};
use crate::par::{self, Execution};
use crate::rm_dsl::parse_rm;

pub const NUM_ACTIONS: usize = Action::COUNT;
pub const MAX_DOORS: usize = 4;
/// Width of one-hot state-id conditioning vectors.
pub const ONE_HOT_DIM: usize = 32;
pub const DEFAULT_TABULAR_ALPHA: f64 = 0.1;
pub const DEFAULT_LINEAR_ALPHA: f64 = 0.05;
pub const DEFAULT_TABULAR_GAMMA: f64 = 0.99;
pub const DEFAULT_LINEAR_GAMMA: f64 = 0.95;

/// Empty, or one of the object kinds in each color.
const FRONT_CODES: usize = 1 + ObjectKind::ALL.len() * Color::ALL.len();

const CARRY_KINDS: [Option<ObjectKind>; 6] = [
    None,
    Some(ObjectKind::Key),
    Some(ObjectKind::Ball),
    Some(ObjectKind::Box),
    Some(ObjectKind::Pyramid),
    Some(ObjectKind::Square),
];

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("task `{task}` has no predicate for events {events:?}")]
    MissingEvents { task: String, events: Vec<String> },
    #[error("zero-shot evaluation needs the linear backend")]
    TabularZeroShot,
    #[error("more than {ONE_HOT_DIM} reward-machine states need one-hot ids")]
    OutOfStateIds,
    #[error("task grid {0}x{1} is larger than the agent's feature grid")]
    GridTooLarge(usize, usize),
    #[error("embedding dimension {got} does not match the agent's {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("{0}")]
    Load(String),
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name { $(#[serde(rename = $text)] $variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| format!("unknown {} `{s}`", stringify!($name)))
            }
        }
    };
}

string_enum!(ConditioningMode {
    Both => "both",
    RewardsOnly => "rewards_only",
    EmbeddingsOnly => "embeddings_only",
    Neither => "neither",
});

string_enum!(Backend {
    Tabular => "tabular",
    Linear => "linear",
});

string_enum!(Conditioning {
    Embedding => "embedding",
    OneHotId => "one_hot_id",
});

impl ConditioningMode {
    pub fn uses_rm_reward(self) -> bool {
        matches!(self, ConditioningMode::Both | ConditioningMode::RewardsOnly)
    }

    pub fn uses_conditioning(self) -> bool {
        matches!(self, ConditioningMode::Both | ConditioningMode::EmbeddingsOnly)
    }
}

/// A task bundled with its compiled reward machine and labeling.
#[derive(Debug, Clone)]
pub struct Task {
    pub name: String,
    pub config: TaskConfig,
    pub larm: Larm,
    pub labeling: LabelingMap,
}

impl Task {
    pub fn new(
        name: impl Into<String>,
        config: TaskConfig,
        larm: Larm,
        labeling: LabelingMap,
    ) -> Result<Self, AgentError> {
        let name = name.into();
        config.validate()?;
        let missing = labeling.missing_events(&larm);
        if !missing.is_empty() {
            return Err(AgentError::MissingEvents { task: name, events: missing });
        }
        Ok(Self { name, config, larm, labeling })
    }

    /// Parses and compiles the text artifacts of one task.
    pub fn from_texts(
        name: impl Into<String>,
        config: TaskConfig,
        rm: &str,
        labeling: &str,
        instructions: &str,
        embedder: &dyn Embedder,
    ) -> Result<Self, AgentError> {
        let spec = parse_rm(rm).map_err(|e| AgentError::Load(e.to_string()))?;
        let instr = Instructions::parse(instructions).map_err(|e| AgentError::Load(e.to_string()))?;
        let larm = compile(&spec, &instr, embedder)?;
        Self::new(name, config, larm, parse_labeling(labeling)?)
    }

    pub fn from_fixture(f: &crate::fixtures::ComposeFixture, embedder: &dyn Embedder) -> Result<Self, AgentError> {
        let config = TaskConfig::parse(f.task_json)?;
        Self::from_texts(f.name, config, f.rm, f.labeling, f.instructions, embedder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Backend default when absent.
    pub alpha: Option<f64>,
    /// Backend default when absent.
    pub gamma: Option<f64>,
    pub eps_start: f64,
    pub eps_end: f64,
    pub exploration_fraction: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Linear backend: steps before the first minibatch update.
    pub learning_starts: u64,
    pub train_frequency: u64,
    /// Linear backend: steps between target refreshes.
    pub target_update_period: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            alpha: None,
            gamma: None,
            eps_start: 1.0,
            eps_end: 0.01,
            exploration_fraction: 0.35,
            replay_capacity: 50_000,
            batch_size: 32,
            learning_starts: 1_000,
            train_frequency: 1,
            target_update_period: 1_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if self.gamma.is_some_and(|g| !(g > 0.0 && g <= 1.0)) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0 <= self.eps_end && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return bad("need 0 <= eps_end <= eps_start <= 1");
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            return bad("exploration_fraction must be in (0, 1]");
        }
        if self.alpha.is_some_and(|a| !(a > 0.0)) {
            return bad("alpha must be positive");
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.train_frequency == 0 || self.target_update_period == 0 {
            return bad("steps, batch size and periods must be positive");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay capacity is smaller than the batch size");
        }
        Ok(())
    }

    pub fn alpha_for(&self, backend: Backend) -> f64 {
        self.alpha.unwrap_or(match backend {
            Backend::Tabular => DEFAULT_TABULAR_ALPHA,
            Backend::Linear => DEFAULT_LINEAR_ALPHA,
        })
    }

    pub fn gamma_for(&self, backend: Backend) -> f64 {
        self.gamma.unwrap_or(match backend {
            Backend::Tabular => DEFAULT_TABULAR_GAMMA,
            Backend::Linear => DEFAULT_LINEAR_GAMMA,
        })
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        let horizon = self.exploration_fraction * self.total_steps as f64;
        let frac = step as f64 / horizon;
        if frac >= 1.0 {
            return self.eps_end;
        }
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

/// Grid extent the linear features are laid out for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub width: usize,
    pub height: usize,
}

impl FeatureSpec {
    pub fn for_tasks(tasks: &[Task]) -> Self {
        let (w, h) = tasks
            .iter()
            .map(|t| t.config.dimensions())
            .fold((0, 0), |(w, h), (tw, th)| (w.max(tw), h.max(th)));
        Self { width: w, height: h }
    }

    fn cells(&self) -> usize {
        self.width * self.height * 4
    }

    /// Length of the unconditioned block `g(s)`.
    pub fn plain_dim(&self) -> usize {
        self.cells() * CARRY_KINDS.len() + 6 + 2 * MAX_DOORS + FRONT_CODES
    }

    /// Length of the block `h(s)` that is multiplied with `c(u)`.
    pub fn skill_dim(&self) -> usize {
        self.cells() + 2 * MAX_DOORS + FRONT_CODES
    }

    /// Active (value 1) indices of `g(s)` and `h(s)`.
    pub fn active(&self, obs: &ObservationRecord) -> (Vec<u32>, Vec<u32>) {
        let p = self.cells();
        let (x, y) = obs.agent_pos;
        let pose = (y * self.width + x) * 4 + obs.agent_dir as usize;
        let carry_kind = CARRY_KINDS
            .iter()
            .position(|k| *k == obs.carrying.map(|o| o.kind))
            .unwrap_or(0);
        let mut plain = vec![(pose * CARRY_KINDS.len() + carry_kind) as u32];
        let mut skill = vec![pose as u32];
        let pbase = p * CARRY_KINDS.len();
        if let Some(o) = obs.carrying {
            plain.push((pbase + o.color as usize) as u32);
        }
        let doors = obs.cells.iter().flatten().filter(|o| o.kind == ObjectKind::Door);
        for (i, d) in doors.take(MAX_DOORS).enumerate() {
            for (bit, on) in [d.is_open, d.is_locked].into_iter().enumerate() {
                if on {
                    plain.push((pbase + 6 + 2 * i + bit) as u32);
                    skill.push((p + 2 * i + bit) as u32);
                }
            }
        }
        let (dx, dy) = [(1, 0), (0, 1), (-1, 0), (0, -1)][obs.agent_dir as usize % 4];
        let front = x.checked_add_signed(dx).zip(y.checked_add_signed(dy));
        let code = match front.and_then(|(fx, fy)| obs.cell(fx, fy)) {
            None => 0,
            Some(o) => 1 + o.kind as usize * 6 + o.color as usize,
        };
        plain.push((pbase + 6 + 2 * MAX_DOORS + code) as u32);
        skill.push((p + 2 * MAX_DOORS + code) as u32);
        (plain, skill)
    }
}

/// Hash of everything an observation says about the world, excluding the
/// step counter and the last action.
pub fn observation_key(obs: &ObservationRecord) -> u64 {
    let mut bytes = Vec::with_capacity(obs.cells.len() + 8);
    let code = |o: &Option<crate::gridworld::Object>| match o {
        None => 0u8,
        Some(o) => 1 + ((((o.kind as u8) * 6 + o.color as u8) * 2 + o.is_open as u8) * 2 + o.is_locked as u8),
    };
    bytes.extend((obs.width as u16).to_le_bytes());
    bytes.extend((obs.agent_pos.0 as u16).to_le_bytes());
    bytes.extend((obs.agent_pos.1 as u16).to_le_bytes());
    bytes.push(obs.agent_dir);
    bytes.push(code(&obs.carrying));
    bytes.extend(obs.cells.iter().map(code));
    fnv1a(0, &bytes)
}

/// What the value function sees of one augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub obs_key: u64,
    /// RM state key for the tabular backend; 0 when conditioning is off.
    pub u_key: u64,
    /// Active indices of `g(s)` (linear backend).
    pub plain: Vec<u32>,
    /// Active indices of `h(s)` (linear backend).
    pub skill: Vec<u32>,
    pub cond: Arc<[f64]>,
    pub cond_sq: f64,
}

impl AugmentedState {
    /// A bare tabular state, handy for hand-built transitions.
    pub fn tabular(obs_key: u64, u_key: u64) -> Self {
        Self {
            obs_key,
            u_key,
            plain: Vec::new(),
            skill: Vec::new(),
            cond: Arc::from(Vec::new()),
            cond_sq: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTransition {
    pub s: AugmentedState,
    pub u: StateId,
    pub a: Action,
    pub r_total: f64,
    pub s_next: AugmentedState,
    pub u_next: StateId,
    /// True only for real termination; running out of steps is not terminal.
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    #[serde(with = "table_entries")]
    table: HashMap<(u64, u64), [f64; NUM_ACTIONS]>,
}

mod table_entries {
    use super::NUM_ACTIONS;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::HashMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        obs: u64,
        u: u64,
        q: [f64; NUM_ACTIONS],
    }

    pub fn serialize<S: Serializer>(t: &HashMap<(u64, u64), [f64; NUM_ACTIONS]>, s: S) -> Result<S::Ok, S::Error> {
        let mut v: Vec<Entry> = t.iter().map(|(&(obs, u), &q)| Entry { obs, u, q }).collect();
        v.sort_by_key(|e| (e.obs, e.u));
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<HashMap<(u64, u64), [f64; NUM_ACTIONS]>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.obs, e.u), e.q)).collect())
    }
}

impl TabularQ {
    pub fn get(&self, obs_key: u64, u_key: u64) -> [f64; NUM_ACTIONS] {
        self.table.get(&(obs_key, u_key)).copied().unwrap_or([0.0; NUM_ACTIONS])
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    g_dim: usize,
    h_dim: usize,
    c_dim: usize,
    weights: Vec<f64>,
    #[serde(skip)]
    target: Vec<f64>,
}

impl LinearQ {
    pub fn new(g_dim: usize, h_dim: usize, c_dim: usize) -> Self {
        let n = NUM_ACTIONS * (g_dim + h_dim * c_dim);
        Self {
            g_dim,
            h_dim,
            c_dim,
            weights: vec![0.0; n],
            target: vec![0.0; n],
        }
    }

    /// Weights per action.
    pub fn stride(&self) -> usize {
        self.g_dim + self.h_dim * self.c_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.c_dim
    }

    fn eval(&self, w: &[f64], s: &AugmentedState, a: usize) -> f64 {
        let w = &w[a * self.stride()..(a + 1) * self.stride()];
        let (g, c) = (self.g_dim, self.c_dim);
        let mut q: f64 = s.plain.iter().map(|&i| w[i as usize]).sum();
        if s.cond_sq > 0.0 {
            for &i in &s.skill {
                let row = g + i as usize * c;
                q += w[row..row + c].iter().zip(s.cond.iter()).map(|(w, c)| w * c).sum::<f64>();
            }
        }
        q
    }

    /// Normalised LMS step: `w += alpha · delta · x / |x|²`.
    fn nudge(&mut self, s: &AugmentedState, a: usize, delta: f64, alpha: f64) {
        let norm = s.plain.len() as f64 + s.skill.len() as f64 * s.cond_sq;
        if norm == 0.0 {
            return;
        }
        let step = alpha * delta / norm;
        let (g, c, stride) = (self.g_dim, self.c_dim, self.stride());
        let w = &mut self.weights[a * stride..(a + 1) * stride];
        for &i in &s.plain {
            w[i as usize] += step;
        }
        if s.cond_sq > 0.0 {
            for &i in &s.skill {
                let row = g + i as usize * c;
                for (w, c) in w[row..row + c].iter_mut().zip(s.cond.iter()) {
                    *w += step * c;
                }
            }
        }
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.weights);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum QFunction {
    Tabular(TabularQ),
    Linear(LinearQ),
}

fn argmax(q: &[f64; NUM_ACTIONS]) -> usize {
    // Strict comparison keeps the lowest id on ties.
    (1..NUM_ACTIONS).fold(0, |best, a| if q[a] > q[best] { a } else { best })
}

impl QFunction {
    pub fn values(&self, s: &AugmentedState) -> [f64; NUM_ACTIONS] {
        match self {
            QFunction::Tabular(t) => t.get(s.obs_key, s.u_key),
            QFunction::Linear(l) => std::array::from_fn(|a| l.eval(&l.weights, s, a)),
        }
    }

    fn target_values(&self, s: &AugmentedState) -> [f64; NUM_ACTIONS] {
        match self {
            QFunction::Tabular(t) => t.get(s.obs_key, s.u_key),
            QFunction::Linear(l) => {
                let w = if l.target.is_empty() { &l.weights } else { &l.target };
                std::array::from_fn(|a| l.eval(w, s, a))
            }
        }
    }

    /// Greedy action, lowest id on ties.
    pub fn greedy(&self, s: &AugmentedState) -> Action {
        Action::ALL[argmax(&self.values(s))]
    }

    pub fn sync_target(&mut self) {
        if let QFunction::Linear(l) = self {
            l.sync_target();
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularQ> {
        match self {
            QFunction::Tabular(t) => Some(t),
            QFunction::Linear(_) => None,
        }
    }
}

/// One TD pass over `batch`. Targets are computed before any update:
/// `y = r` for terminal transitions, else `y = r + γ·max_a' Q_target(s', a')`.
pub fn td_update(q: &mut QFunction, batch: &[AugmentedTransition], gamma: f64, alpha: f64) {
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| {
            if t.done {
                t.r_total
            } else {
                let next = q.target_values(&t.s_next);
                t.r_total + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    for (t, y) in batch.iter().zip(targets) {
        let a = t.a.id();
        match q {
            QFunction::Tabular(tab) => {
                let row = tab.table.entry((t.s.obs_key, t.s.u_key)).or_insert([0.0; NUM_ACTIONS]);
                row[a] += alpha * (y - row[a]);
            }
            QFunction::Linear(lin) => {
                let delta = y - lin.eval(&lin.weights, &t.s, a);
                lin.nudge(&t.s, a, delta, alpha);
            }
        }
    }
}

/// Conditioning vectors and tabular keys for the states of one task.
#[derive(Debug, Clone)]
pub struct Binding {
    cond: Vec<Arc<[f64]>>,
    u_keys: Vec<u64>,
}

impl Binding {
    pub fn cond(&self, u: StateId) -> &[f64] {
        &self.cond[u]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub backend: Backend,
    pub mode: ConditioningMode,
    pub conditioning: Conditioning,
    pub features: FeatureSpec,
    pub cond_dim: usize,
    /// State ids handed out so far, per registered task name.
    state_ids: Vec<(String, Vec<usize>)>,
    next_id: usize,
    pub q: QFunction,
}

impl Agent {
    pub fn new(
        backend: Backend,
        mode: ConditioningMode,
        conditioning: Conditioning,
        features: FeatureSpec,
        embedding_dim: usize,
    ) -> Self {
        let cond_dim = match conditioning {
            Conditioning::Embedding => embedding_dim,
            Conditioning::OneHotId => ONE_HOT_DIM,
        };
        let q = match backend {
            Backend::Tabular => QFunction::Tabular(TabularQ::default()),
            Backend::Linear => QFunction::Linear(LinearQ::new(features.plain_dim(), features.skill_dim(), cond_dim)),
        };
        Self {
            backend,
            mode,
            conditioning,
            features,
            cond_dim,
            state_ids: Vec::new(),
            next_id: 0,
            q,
        }
    }

    /// Agent sized for `tasks` with embedding conditioning of the given width.
    pub fn for_tasks(tasks: &[Task], backend: Backend, mode: ConditioningMode, conditioning: Conditioning) -> Self {
        let dim = tasks
            .first()
            .map(|t| t.larm.embedding(0).dim())
            .unwrap_or(crate::embed::DEFAULT_DIM);
        Self::new(backend, mode, conditioning, FeatureSpec::for_tasks(tasks), dim)
    }

    /// Gives the task's states permanent ids (no-op if already registered).
    pub fn register(&mut self, task: &Task) -> Result<(), AgentError> {
        if self.state_ids.iter().any(|(n, _)| *n == task.name) {
            return Ok(());
        }
        let n = task.larm.num_states();
        if self.conditioning == Conditioning::OneHotId && self.next_id + n > ONE_HOT_DIM {
            return Err(AgentError::OutOfStateIds);
        }
        self.state_ids.push((task.name.clone(), (self.next_id..self.next_id + n).collect()));
        self.next_id += n;
        Ok(())
    }

    /// Registered tasks reuse their ids; unseen tasks get fresh ones that
    /// are not recorded.
    pub fn binding(&self, task: &Task) -> Result<Binding, AgentError> {
        let (w, h) = task.config.dimensions();
        if w > self.features.width || h > self.features.height {
            return Err(AgentError::GridTooLarge(w, h));
        }
        let n = task.larm.num_states();
        let ids: Vec<usize> = match self.state_ids.iter().find(|(name, _)| *name == task.name) {
            Some((_, ids)) => ids.clone(),
            None => (self.next_id..self.next_id + n).collect(),
        };
        let on = self.mode.uses_conditioning();
        let mut cond = Vec::with_capacity(n);
        for (u, &id) in ids.iter().enumerate() {
            let v: Vec<f64> = if !on {
                vec![0.0; self.cond_dim]
            } else {
                match self.conditioning {
                    Conditioning::Embedding => {
                        let e = task.larm.embedding(u);
                        if e.dim() != self.cond_dim {
                            return Err(AgentError::EmbeddingDim { expected: self.cond_dim, got: e.dim() });
                        }
                        e.as_slice().to_vec()
                    }
                    Conditioning::OneHotId => {
                        if id >= ONE_HOT_DIM {
                            return Err(AgentError::OutOfStateIds);
                        }
                        let mut v = vec![0.0; ONE_HOT_DIM];
                        v[id] = 1.0;
                        v
                    }
                }
            };
            cond.push(Arc::from(v));
        }
        let u_keys = ids.iter().map(|&id| if on { id as u64 + 1 } else { 0 }).collect();
        Ok(Binding { cond, u_keys })
    }

    pub fn encode(&self, obs: &ObservationRecord, u: StateId, binding: &Binding) -> AugmentedState {
        let cond = binding.cond[u].clone();
        let cond_sq = cond.iter().map(|c| c * c).sum();
        match self.backend {
            Backend::Tabular => AugmentedState {
                obs_key: observation_key(obs),
                u_key: binding.u_keys[u],
                plain: Vec::new(),
                skill: Vec::new(),
                cond,
                cond_sq,
            },
            Backend::Linear => {
                let (plain, skill) = self.features.active(obs);
                AugmentedState { obs_key: 0, u_key: 0, plain, skill, cond, cond_sq }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("agent serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let mut agent: Agent = serde_json::from_str(text).map_err(|e| AgentError::Load(e.to_string()))?;
        agent.q.sync_target();
        Ok(agent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub env_return: f64,
    pub rm_return: f64,
    pub success: bool,
    pub steps: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub episodes: Vec<EpisodeRecord>,
    pub total_steps: u64,
}

impl TrainReport {
    /// `episode,env_return,rm_return,success,steps`, one row per episode.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["episode", "env_return", "rm_return", "success", "steps"])
            .expect("in-memory write");
        for e in &self.episodes {
            w.write_record([
                e.episode.to_string(),
                e.env_return.to_string(),
                e.rm_return.to_string(),
                u8::from(e.success).to_string(),
                e.steps.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Success rate over the last `n` episodes (fewer if the run was short).
    pub fn final_window_success(&self, n: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|e| e.success).count() as f64 / tail.len() as f64
    }

    /// First episode at which the mean RM return of the trailing `window`
    /// episodes reaches `threshold`.
    pub fn first_rm_mean_at_least(&self, threshold: f64, window: usize) -> Option<usize> {
        (window..=self.episodes.len()).find_map(|end| {
            let w = &self.episodes[end - window..end];
            let mean = w.iter().map(|e| e.rm_return).sum::<f64>() / window as f64;
            (mean >= threshold - 1e-12).then_some(end - 1)
        })
    }

    /// Episode completing the first run of `run` consecutive successes.
    pub fn first_success_streak(&self, run: usize) -> Option<usize> {
        let mut streak = 0;
        for (i, e) in self.episodes.iter().enumerate() {
            streak = if e.success { streak + 1 } else { 0 };
            if streak >= run {
                return Some(i);
            }
        }
        None
    }
}

/// Everything about one training step, for logging and invariant checks.
#[derive(Debug)]
pub struct StepLog<'a> {
    pub episode: usize,
    pub task: usize,
    pub step_in_episode: u32,
    pub event: Option<EventId>,
    pub env_reward: f64,
    /// What the reward machine paid, before the mode is applied.
    pub rm_reward_raw: f64,
    /// What entered `r_total`.
    pub rm_reward: f64,
    pub transition: &'a AugmentedTransition,
}

struct Replay {
    items: Vec<AugmentedTransition>,
    capacity: usize,
    next: usize,
}

impl Replay {
    fn new(capacity: usize) -> Self {
        Self { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, next: 0 }
    }

    fn push(&mut self, t: AugmentedTransition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<AugmentedTransition> {
        (0..n).map(|_| self.items[rng.random_range(0..self.items.len())].clone()).collect()
    }
}

pub fn train(tasks: &[Task], agent: &mut Agent, cfg: &TrainConfig) -> Result<TrainReport, AgentError> {
    train_observed(tasks, agent, cfg, &mut |_| {})
}

pub fn train_observed(
    tasks: &[Task],
    agent: &mut Agent,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepLog),
) -> Result<TrainReport, AgentError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(AgentError::InvalidConfig("no tasks to train on".into()));
    }
    for t in tasks {
        agent.register(t)?;
    }
    let bindings = tasks.iter().map(|t| agent.binding(t)).collect::<Result<Vec<_>, _>>()?;
    let alpha = cfg.alpha_for(agent.backend);
    let gamma = cfg.gamma_for(agent.backend);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut replay = Replay::new(cfg.replay_capacity);
    agent.q.sync_target();
    let mut report = TrainReport::default();
    let mut step: u64 = 0;
    while step < cfg.total_steps {
        let episode = report.episodes.len();
        let ti = episode % tasks.len();
        let (task, binding) = (&tasks[ti], &bindings[ti]);
        let (mut env, obs) = env_reset(&task.config, rng.random())?;
        let mut u = task.larm.initial();
        let mut s = agent.encode(&obs, u, binding);
        let mut rec = EpisodeRecord { episode, env_return: 0.0, rm_return: 0.0, success: false, steps: 0 };
        loop {
            let a = if rng.random::<f64>() < cfg.epsilon(step) {
                Action::ALL[rng.random_range(0..NUM_ACTIONS)]
            } else {
                agent.q.greedy(&s)
            };
            let r = env.step(a)?;
            let event = resolve_event(&task.larm, &task.labeling, u, &r.obs)?;
            let out = task.larm.step(u, event)?;
            let rm_reward = if agent.mode.uses_rm_reward() { out.reward } else { 0.0 };
            let s_next = agent.encode(&r.obs, out.next_state, binding);
            let t = AugmentedTransition {
                s,
                u,
                a,
                r_total: r.reward + rm_reward,
                s_next: s_next.clone(),
                u_next: out.next_state,
                done: r.success,
            };
            step += 1;
            rec.steps += 1;
            rec.env_return += r.reward;
            rec.rm_return += rm_reward;
            rec.success |= r.success;
            observer(&StepLog {
                episode,
                task: ti,
                step_in_episode: rec.steps,
                event,
                env_reward: r.reward,
                rm_reward_raw: out.reward,
                rm_reward,
                transition: &t,
            });
            match agent.backend {
                Backend::Tabular => {
                    td_update(&mut agent.q, std::slice::from_ref(&t), gamma, alpha);
                    replay.push(t);
                }
                Backend::Linear => {
                    replay.push(t);
                    if step >= cfg.learning_starts && step % cfg.train_frequency == 0 {
                        let batch = replay.sample(cfg.batch_size, &mut rng);
                        td_update(&mut agent.q, &batch, gamma, alpha);
                    }
                    if step % cfg.target_update_period == 0 {
                        agent.q.sync_target();
                    }
                }
            }
            s = s_next;
            u = out.next_state;
            if r.done || step >= cfg.total_steps {
                break;
            }
        }
        report.episodes.push(rec);
    }
    report.total_steps = step;
    Ok(report)
}

/// Anything that can pick actions in an episode.
pub trait Policy {
    fn begin_episode(&mut self, _env: &GridEnv) {}
    fn act(&mut self, env: &GridEnv, obs: &ObservationRecord, u: StateId) -> Action;
}

/// ε = 0 policy over a trained value function.
pub struct GreedyPolicy<'a> {
    agent: &'a Agent,
    binding: Binding,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(agent: &'a Agent, task: &Task) -> Result<Self, AgentError> {
        Ok(Self { agent, binding: agent.binding(task)? })
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, _env: &GridEnv, obs: &ObservationRecord, u: StateId) -> Action {
        self.agent.q.greedy(&self.agent.encode(obs, u, &self.binding))
    }
}

/// Follows a breadth-first-search plan to the goal; an oracle for tests.
#[derive(Debug, Default)]
pub struct PlannerPolicy {
    plan: Vec<Action>,
}

impl Policy for PlannerPolicy {
    fn begin_episode(&mut self, env: &GridEnv) {
        self.plan = plan(env, 2_000_000).unwrap_or_default();
        self.plan.reverse();
    }

    fn act(&mut self, _env: &GridEnv, _obs: &ObservationRecord, _u: StateId) -> Action {
        self.plan.pop().unwrap_or(Action::TurnLeft)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_env_return: f64,
    pub mean_rm_return: f64,
}

/// Runs `episodes` episodes; the RM is stepped normally but only the
/// environment goal counts as success.
pub fn evaluate(policy: &mut dyn Policy, task: &Task, episodes: usize, seed: u64) -> Result<EvalReport, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut wins, mut env_total, mut rm_total) = (0usize, 0.0, 0.0);
    for _ in 0..episodes {
        let (mut env, mut obs) = env_reset(&task.config, rng.random())?;
        let mut u = task.larm.initial();
        policy.begin_episode(&env);
        loop {
            let a = policy.act(&env, &obs, u);
            let r = env.step(a)?;
            let event = resolve_event(&task.larm, &task.labeling, u, &r.obs)?;
            let out = task.larm.step(u, event)?;
            env_total += r.reward;
            rm_total += out.reward;
            u = out.next_state;
            obs = r.obs;
            if r.done {
                wins += usize::from(r.success);
                break;
            }
        }
    }
    let n = episodes.max(1) as f64;
    Ok(EvalReport {
        episodes,
        success_rate: wins as f64 / n,
        mean_env_return: env_total / n,
        mean_rm_return: rm_total / n,
    })
}

/// Greedy evaluation on a task the agent never trained on, without updates.
pub fn zero_shot_eval(agent: &Agent, task: &Task, episodes: usize, seed: u64) -> Result<EvalReport, AgentError> {
    if agent.backend == Backend::Tabular {
        return Err(AgentError::TabularZeroShot);
    }
    evaluate(&mut GreedyPolicy::new(agent, task)?, task, episodes, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub mode: ConditioningMode,
    pub seed: u64,
    /// Mean greedy success over the suite's tasks.
    pub success: f64,
    pub per_task: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub k: usize,
    pub runs: Vec<AblationRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub mode: ConditioningMode,
    pub mean: f64,
    pub std: f64,
}

impl AblationReport {
    /// Mean and (population) standard deviation per mode, in mode order.
    pub fn summary(&self) -> Vec<AblationSummary> {
        let mut modes: Vec<ConditioningMode> = Vec::new();
        for r in &self.runs {
            if !modes.contains(&r.mode) {
                modes.push(r.mode);
            }
        }
        modes
            .into_iter()
            .map(|mode| {
                let xs: Vec<f64> = self.runs.iter().filter(|r| r.mode == mode).map(|r| r.success).collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                AblationSummary { mode, mean, std: var.sqrt() }
            })
            .collect()
    }

    pub fn mean(&self, mode: ConditioningMode) -> Option<f64> {
        self.summary().into_iter().find(|s| s.mode == mode).map(|s| s.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["k", "mode", "seed", "success"]).expect("in-memory write");
        for r in &self.runs {
            w.write_record([self.k.to_string(), r.mode.to_string(), r.seed.to_string(), r.success.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub backend: Backend,
    pub conditioning: Conditioning,
    pub train: TrainConfig,
    pub eval_episodes: usize,
}

/// One shared agent per (mode, seed), trained on the whole suite and scored
/// by greedy success averaged over the suite.
pub fn run_ablation(
    suite: &[Task],
    modes: &[ConditioningMode],
    cfg: &AblationConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<AblationReport, AgentError> {
    let jobs: Vec<(ConditioningMode, u64)> =
        modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let runs = par::map(exec, jobs, |(mode, seed)| -> Result<AblationRun, AgentError> {
        let mut agent = Agent::for_tasks(suite, cfg.backend, mode, cfg.conditioning);
        let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
        train(suite, &mut agent, &train_cfg)?;
        let per_task = suite
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut p = GreedyPolicy::new(&agent, t)?;
                Ok(evaluate(&mut p, t, cfg.eval_episodes, seed.wrapping_add(1000 + i as u64))?.success_rate)
            })
            .collect::<Result<Vec<f64>, AgentError>>()?;
        let success = per_task.iter().sum::<f64>() / per_task.len() as f64;
        Ok(AblationRun { mode, seed, success, per_task })
    });
    Ok(AblationReport { k: suite.len(), runs: runs.into_iter().collect::<Result<_, _>>()? })
}

/// Independent training runs, one per seed, merged in seed order.
pub fn train_seeds(
    tasks: &[Task],
    template: &Agent,
    cfg: &TrainConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<(Agent, TrainReport)>, AgentError> {
    par::map(exec, seeds.to_vec(), |seed| {
        let mut agent = template.clone();
        let report = train(tasks, &mut agent, &TrainConfig { seed, ..cfg.clone() })?;
        Ok((agent, report))
    })
    .into_iter()
    .collect()
}
