//! Generator–critic synthesis loop.
//!
//! A session runs three stages in order: the reward machine, its labeling
//! predicates and the per-state instructions. Each stage alternates a
//! generator call and a critic call for at most `max_rounds` rounds. The
//! critic's verdict is combined with deterministic checks (parse, validation,
//! event/state coverage); a stage is approved only when both agree, and the
//! union of their issues is fed to the next generator prompt.
//!
//! Every exchange lands in the transcript, which can be written as JSONL and
//! replayed offline with [`ReplayClient`].

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::labeling::parse_labeling;
use crate::machine::Instructions;
use crate::rm_dsl::{parse_rm, validate_rm, RewardMachineSpec};

pub const DEFAULT_MAX_ROUNDS: usize = 3;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_MAX_RETRIES: u32 = 2;

const APPROVED_TOKEN: &str = "NO CHANGES NEEDED";
const CHANGES_TOKEN: &str = "CHANGES REQUIRED";
const HUMAN_APPROVE: &str = "APPROVE";

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("no ```{0} fenced block in reply")]
    Extraction(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("transcript {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("transcript line {line}: {message}")]
    Transcript { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Approved,
    ChangesRequired(Vec<String>),
}

impl Verdict {
    pub fn is_approved(&self) -> bool {
        matches!(self, Verdict::Approved)
    }
}

/// Reads the verdict from the last verdict token in a critic reply.
pub fn parse_verdict(reply: &str) -> Verdict {
    let approved = reply.rfind(APPROVED_TOKEN);
    let changes = reply.rfind(CHANGES_TOKEN);
    match (approved, changes) {
        (Some(a), Some(c)) if a > c => Verdict::Approved,
        (Some(_), None) => Verdict::Approved,
        (_, Some(c)) => {
            let tail = &reply[c + CHANGES_TOKEN.len()..];
            let issues = tail
                .lines()
                .filter_map(|l| l.trim_start().strip_prefix("- "))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            Verdict::ChangesRequired(issues)
        }
        (None, None) => Verdict::ChangesRequired(vec!["no verdict found".to_string()]),
    }
}

/// Content of the last ```` ```tag ```` block, minus one newline at each end.
pub fn extract_block(reply: &str, tag: &str) -> Result<String, GenError> {
    let mut found = None;
    let mut rest = reply;
    let mut offset = 0;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let line_end = after.find('\n').unwrap_or(after.len());
        let info = after[..line_end].trim();
        let body_start = start + 3 + line_end;
        let Some(close) = rest[body_start..].find("```") else {
            break;
        };
        if info == tag {
            found = Some(offset + body_start..offset + body_start + close);
        }
        let consumed = body_start + close + 3;
        offset += consumed;
        rest = &rest[consumed..];
    }
    let range = found.ok_or_else(|| GenError::Extraction(tag.to_string()))?;
    let body = &reply[range];
    let body = body.strip_prefix('\n').unwrap_or(body);
    let body = body.strip_suffix('\n').unwrap_or(body);
    Ok(body.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Critic,
    Human,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Generator => "generator",
            Role::Critic => "critic",
            Role::Human => "human",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub round: usize,
    pub role: Role,
    pub request: String,
    pub reply: String,
    pub ts: String,
}

pub fn read_transcript(path: &Path) -> Result<Vec<Exchange>, GenError> {
    let io = |source| GenError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| GenError::Transcript {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_transcript(path: &Path, exchanges: &[Exchange]) -> Result<(), GenError> {
    let io = |source| GenError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io)?;
    for e in exchanges {
        let line = serde_json::to_string(e).expect("exchange serializes");
        writeln!(file, "{line}").map_err(io)?;
    }
    Ok(())
}

/// A completed model call; `ts` is set by the client so replays can reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub reply: String,
    pub ts: String,
}

pub trait FmClient {
    fn complete(&self, role: Role, request: &str) -> Result<Completion, GenError>;
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub temperature: f64,
    pub offline_transcript: Option<PathBuf>,
}

impl Default for FmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".to_string(),
            model: "default".to_string(),
            api_key_env: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            temperature: DEFAULT_TEMPERATURE,
            offline_transcript: None,
        }
    }
}

impl FmClientConfig {
    /// A replay client when an offline transcript is set, otherwise HTTP.
    pub fn client(&self) -> Result<Box<dyn FmClient>, GenError> {
        match &self.offline_transcript {
            Some(path) => Ok(Box::new(ReplayClient::open(path)?)),
            None => Ok(Box::new(HttpClient::new(self)?)),
        }
    }
}

/// Blocking OpenAI-compatible chat-completions client.
pub struct HttpClient {
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl HttpClient {
    pub fn new(cfg: &FmClientConfig) -> Result<Self, GenError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GenError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| GenError::Transport(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/')),
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            api_key,
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(500),
            client,
        })
    }

    /// Base delay before the first retry; doubles on each further retry.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &str) -> Result<String, (bool, String)> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": request }],
            "temperature": self.temperature,
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, format!("HTTP {status}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| (false, "response has no choices".to_string()))
    }
}

impl FmClient for HttpClient {
    fn complete(&self, _role: Role, request: &str) -> Result<Completion, GenError> {
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(reply) => return Ok(Completion { reply, ts: now() }),
                Err((retry, msg)) => {
                    if !retry || attempt >= self.max_retries {
                        return Err(GenError::Transport(format!(
                            "{msg} (after {} attempts)",
                            attempt + 1
                        )));
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

/// Serves replies from a recorded transcript, in order, checking that each
/// request is byte-identical to the recorded one.
pub struct ReplayClient {
    entries: Vec<Exchange>,
    cursor: Mutex<usize>,
}

impl ReplayClient {
    pub fn new(entries: Vec<Exchange>) -> Self {
        Self {
            entries,
            cursor: Mutex::new(0),
        }
    }

    pub fn open(path: &Path) -> Result<Self, GenError> {
        Ok(Self::new(read_transcript(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - *self.cursor.lock().unwrap()
    }

    fn next(&self, role: Role, request: &str) -> Result<&Exchange, GenError> {
        let mut cursor = self.cursor.lock().unwrap();
        let entry = self.entries.get(*cursor).ok_or_else(|| {
            GenError::Replay(format!("transcript exhausted at {role} call {}", *cursor + 1))
        })?;
        if entry.role != role {
            return Err(GenError::Replay(format!(
                "entry {} is a {} exchange, expected {role}",
                *cursor + 1,
                entry.role
            )));
        }
        if entry.request != request {
            return Err(GenError::Replay(format!(
                "entry {}: request differs from the recorded one",
                *cursor + 1
            )));
        }
        *cursor += 1;
        Ok(entry)
    }
}

impl FmClient for ReplayClient {
    fn complete(&self, role: Role, request: &str) -> Result<Completion, GenError> {
        let e = self.next(role, request)?;
        Ok(Completion {
            reply: e.reply.clone(),
            ts: e.ts.clone(),
        })
    }
}

/// Canned replies in order; records every request. Useful for tests and for
/// producing transcripts without a model.
pub struct ScriptedClient {
    replies: Mutex<std::vec::IntoIter<String>>,
    pub requests: Mutex<Vec<(Role, String)>>,
}

impl ScriptedClient {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(replies: I) -> Self {
        let replies: Vec<String> = replies.into_iter().map(Into::into).collect();
        Self {
            replies: Mutex::new(replies.into_iter()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl FmClient for ScriptedClient {
    fn complete(&self, role: Role, request: &str) -> Result<Completion, GenError> {
        self.requests
            .lock()
            .unwrap()
            .push((role, request.to_string()));
        let reply = self
            .replies
            .lock()
            .unwrap()
            .next()
            .ok_or_else(|| GenError::Transport("script exhausted".into()))?;
        Ok(Completion {
            reply,
            ts: "1970-01-01T00:00:00.000Z".to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HumanVerdict {
    Approve,
    Feedback(String),
}

pub trait HumanHook {
    /// The verdict and its timestamp.
    fn review(&mut self, artifacts: &Artifacts) -> Result<(HumanVerdict, String), GenError>;
}

impl<F: FnMut(&Artifacts) -> HumanVerdict> HumanHook for F {
    fn review(&mut self, artifacts: &Artifacts) -> Result<(HumanVerdict, String), GenError> {
        Ok((self(artifacts), now()))
    }
}

/// Replays the human decision recorded in a transcript.
pub struct ReplayHuman<'a>(pub &'a ReplayClient);

impl HumanHook for ReplayHuman<'_> {
    fn review(&mut self, artifacts: &Artifacts) -> Result<(HumanVerdict, String), GenError> {
        let e = self.0.next(Role::Human, &artifacts.render())?;
        Ok((human_verdict_from_reply(&e.reply), e.ts.clone()))
    }
}

fn human_verdict_from_reply(reply: &str) -> HumanVerdict {
    if reply.trim() == HUMAN_APPROVE {
        HumanVerdict::Approve
    } else {
        HumanVerdict::Feedback(reply.to_string())
    }
}

fn human_reply(v: &HumanVerdict) -> String {
    match v {
        HumanVerdict::Approve => HUMAN_APPROVE.to_string(),
        HumanVerdict::Feedback(t) => t.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingFormat {
    /// `.lbl` predicate syntax, parsed and checked against the RM events.
    #[default]
    Predicates,
    /// Python functions as in the original protocol, stored verbatim.
    RawPython,
}

/// Prompt templates; `{MISSION}` and `{REWARD_MACHINE}` are substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub rm_generator: String,
    pub rm_critic: String,
    pub labeling_generator: String,
    pub labeling_critic: String,
    pub labeling_generator_python: String,
    pub labeling_critic_python: String,
    pub instructions_generator: String,
    pub instructions_critic: String,
}

macro_rules! prompt_files {
    ($($field:ident),*) => {
        impl Prompts {
            pub fn builtin() -> Self {
                Self {
                    $($field: include_str!(concat!(
                        "../../../fixtures/prompts/", stringify!($field), ".txt"
                    )).to_string(),)*
                }
            }

            /// Loads `<name>.txt` for every template from `dir`.
            pub fn load(dir: &Path) -> Result<Self, GenError> {
                let read = |name: &str| {
                    let path = dir.join(format!("{name}.txt"));
                    fs::read_to_string(&path).map_err(|source| GenError::Io { path, source })
                };
                Ok(Self { $($field: read(stringify!($field))?,)* })
            }
        }
    };
}

prompt_files!(
    rm_generator,
    rm_critic,
    labeling_generator,
    labeling_critic,
    labeling_generator_python,
    labeling_critic_python,
    instructions_generator,
    instructions_critic
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RewardMachine,
    Labeling,
    Instructions,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::RewardMachine, Stage::Labeling, Stage::Instructions];
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    pub rm_text: Option<String>,
    pub labeling_text: Option<String>,
    pub instructions_text: Option<String>,
}

impl Artifacts {
    /// Text shown to (and recorded for) the human reviewer.
    pub fn render(&self) -> String {
        let part = |o: &Option<String>| o.clone().unwrap_or_default();
        format!(
            "Reward machine:\n{}\n\nLabeling:\n{}\n\nInstructions:\n{}\n",
            part(&self.rm_text),
            part(&self.labeling_text),
            part(&self.instructions_text)
        )
    }

    fn slot(&mut self, stage: Stage) -> &mut Option<String> {
        match stage {
            Stage::RewardMachine => &mut self.rm_text,
            Stage::Labeling => &mut self.labeling_text,
            Stage::Instructions => &mut self.instructions_text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    InProgress,
    Approved,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSession {
    pub mission: String,
    pub max_rounds: usize,
    /// Round index reached by the current (or last) stage.
    pub round: usize,
    /// Rounds used by each stage, in stage order; stages not reached are 0.
    pub stage_rounds: [usize; 3],
    /// Extra generator rounds triggered by human feedback.
    pub human_rounds: usize,
    pub labeling_format: LabelingFormat,
    pub transcript: Vec<Exchange>,
    pub artifacts: Artifacts,
    pub status: SessionStatus,
    /// Outstanding issues of the stage that failed, if exhausted.
    pub open_issues: Vec<String>,
}

impl GenSession {
    pub fn rounds_for(&self, stage: Stage) -> usize {
        self.stage_rounds[stage as usize]
    }

    pub fn calls(&self, role: Role) -> usize {
        self.transcript.iter().filter(|e| e.role == role).count()
    }

    pub fn write_transcript(&self, path: &Path) -> Result<(), GenError> {
        write_transcript(path, &self.transcript)
    }
}

/// Everything needed to replay a session, stored next to its transcript as
/// `<name>.session.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub mission: String,
    pub max_rounds: usize,
    #[serde(default)]
    pub labeling_format: LabelingFormat,
    /// Whether a human review is part of the transcript.
    pub human: bool,
    pub status: SessionStatus,
    pub artifacts: Artifacts,
}

impl SessionRecord {
    pub fn sidecar_path(transcript: &Path) -> PathBuf {
        transcript.with_extension("session.json")
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = fs::read_to_string(path).map_err(|source| GenError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| GenError::Transcript {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), GenError> {
        let text = serde_json::to_string_pretty(self).expect("record serializes") + "\n";
        fs::write(path, text).map_err(|source| GenError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn options(&self) -> GenOptions {
        GenOptions {
            max_rounds: self.max_rounds,
            labeling_format: self.labeling_format,
            prompts: Prompts::builtin(),
        }
    }
}

impl GenSession {
    pub fn record(&self) -> SessionRecord {
        SessionRecord {
            mission: self.mission.clone(),
            max_rounds: self.max_rounds,
            labeling_format: self.labeling_format,
            human: self.calls(Role::Human) > 0,
            status: self.status,
            artifacts: self.artifacts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub max_rounds: usize,
    pub labeling_format: LabelingFormat,
    pub prompts: Prompts,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
            labeling_format: LabelingFormat::default(),
            prompts: Prompts::builtin(),
        }
    }
}

struct Loop<'a> {
    opts: &'a GenOptions,
    client: &'a dyn FmClient,
    session: GenSession,
}

fn fenced(tag: &str, body: &str) -> String {
    format!("```{tag}\n{body}\n```")
}

fn bullet_list(issues: &[String]) -> String {
    issues.iter().map(|i| format!("- {i}\n")).collect()
}

impl Loop<'_> {
    fn tag(&self, stage: Stage) -> &'static str {
        match (stage, self.opts.labeling_format) {
            (Stage::RewardMachine, _) => "plaintext",
            (Stage::Labeling, LabelingFormat::Predicates) => "lbl",
            (Stage::Labeling, LabelingFormat::RawPython) => "python",
            (Stage::Instructions, _) => "instructions",
        }
    }

    fn fill(&self, template: &str) -> String {
        template
            .replace("{MISSION}", &self.session.mission)
            .replace(
                "{REWARD_MACHINE}",
                self.session.artifacts.rm_text.as_deref().unwrap_or(""),
            )
    }

    fn generator_prompt(&self, stage: Stage, feedback: Option<(&str, &[String])>) -> String {
        let p = &self.opts.prompts;
        let template = match (stage, self.opts.labeling_format) {
            (Stage::RewardMachine, _) => &p.rm_generator,
            (Stage::Labeling, LabelingFormat::Predicates) => &p.labeling_generator,
            (Stage::Labeling, LabelingFormat::RawPython) => &p.labeling_generator_python,
            (Stage::Instructions, _) => &p.instructions_generator,
        };
        let mut prompt = self.fill(template);
        if let Some((previous, issues)) = feedback {
            prompt.push_str(&format!(
                "\n\nYour previous answer:\n{}\n\nRequired changes:\n{}\nRevise your answer to address every point.\n",
                fenced(self.tag(stage), previous),
                bullet_list(issues)
            ));
        }
        prompt
    }

    fn critic_prompt(&self, stage: Stage, candidate: &str) -> String {
        let p = &self.opts.prompts;
        let tag = self.tag(stage);
        let rm = self.session.artifacts.rm_text.as_deref().unwrap_or("");
        match stage {
            // The RM critic template carries no mission of its own.
            Stage::RewardMachine => format!(
                "Mission:\n\"{}\"\n\n{}\n\nCandidate reward machine:\n{}\n",
                self.session.mission,
                self.fill(&p.rm_critic),
                fenced(tag, candidate)
            ),
            Stage::Labeling => {
                let template = match self.opts.labeling_format {
                    LabelingFormat::Predicates => &p.labeling_critic,
                    LabelingFormat::RawPython => &p.labeling_critic_python,
                };
                format!(
                    "{}\n\nReward machine:\n{}\n\nCandidate:\n{}\n",
                    self.fill(template),
                    fenced("plaintext", rm),
                    fenced(tag, candidate)
                )
            }
            Stage::Instructions => format!(
                "{}\n\nCandidate:\n{}\n",
                self.fill(&p.instructions_critic),
                fenced(tag, candidate)
            ),
        }
    }

    fn call(&mut self, round: usize, role: Role, request: String) -> Result<String, GenError> {
        let c = self.client.complete(role, &request)?;
        self.session.transcript.push(Exchange {
            round,
            role,
            request,
            reply: c.reply.clone(),
            ts: c.ts,
        });
        Ok(c.reply)
    }

    fn approved_rm(&self) -> Option<RewardMachineSpec> {
        self.session
            .artifacts
            .rm_text
            .as_deref()
            .and_then(|t| parse_rm(t).ok())
    }

    /// Deterministic findings for a candidate; empty means it passes the gate.
    fn check(&self, stage: Stage, candidate: &str) -> Vec<String> {
        match stage {
            Stage::RewardMachine => match parse_rm(candidate) {
                Err(e) => vec![format!("reward machine does not parse: {e}")],
                Ok(spec) => validate_rm(&spec)
                    .errors
                    .iter()
                    .map(|f| format!("validator: {f}"))
                    .collect(),
            },
            Stage::Labeling => {
                if self.opts.labeling_format == LabelingFormat::RawPython {
                    return Vec::new();
                }
                let map = match parse_labeling(candidate) {
                    Ok(m) => m,
                    Err(e) => return vec![format!("labeling does not parse: {e}")],
                };
                let events: BTreeSet<String> = self
                    .approved_rm()
                    .map(|s| s.events().into_iter().collect())
                    .unwrap_or_default();
                let defined: BTreeSet<String> =
                    map.entries().iter().map(|(n, _)| n.clone()).collect();
                coverage(&events, &defined, "event", "predicate")
            }
            Stage::Instructions => {
                let instr = match Instructions::parse(candidate) {
                    Ok(i) => i,
                    Err(e) => return vec![format!("instructions do not parse: {e}")],
                };
                let states: BTreeSet<String> = self
                    .approved_rm()
                    .map(|s| s.states.into_iter().collect())
                    .unwrap_or_default();
                let defined: BTreeSet<String> = instr.0.keys().cloned().collect();
                coverage(&states, &defined, "state", "instruction")
            }
        }
    }

    /// One generator + critic round; returns the combined issues.
    fn round(
        &mut self,
        stage: Stage,
        round: usize,
        feedback: Option<(&str, &[String])>,
    ) -> Result<Vec<String>, GenError> {
        let tag = self.tag(stage);
        let prompt = self.generator_prompt(stage, feedback);
        let reply = self.call(round, Role::Generator, prompt)?;
        // Without a fence the critic sees the raw reply and the artifact keeps
        // the last extracted candidate.
        let (candidate, mut issues) = match extract_block(&reply, tag) {
            Ok(body) => {
                let issues = self.check(stage, &body);
                *self.session.artifacts.slot(stage) = Some(body.clone());
                (body, issues)
            }
            Err(e) => (reply, vec![e.to_string()]),
        };
        let critique = self.critic_prompt(stage, &candidate);
        let verdict = parse_verdict(&self.call(round, Role::Critic, critique)?);
        if let Verdict::ChangesRequired(critic_issues) = verdict {
            let mut all = critic_issues;
            if all.is_empty() {
                all.push("the critic requested changes without listing them".to_string());
            }
            all.append(&mut issues);
            issues = all;
        }
        Ok(issues)
    }

    /// Runs a stage to approval or exhaustion; returns whether it was approved.
    fn stage(&mut self, stage: Stage) -> Result<bool, GenError> {
        let mut feedback: Option<(String, Vec<String>)> = None;
        for r in 1..=self.opts.max_rounds {
            self.session.round = r;
            self.session.stage_rounds[stage as usize] = r;
            let fb = feedback.as_ref().map(|(p, i)| (p.as_str(), i.as_slice()));
            let issues = self.round(stage, r, fb)?;
            if issues.is_empty() {
                return Ok(true);
            }
            let previous = self.session.artifacts.slot(stage).clone().unwrap_or_default();
            feedback = Some((previous, issues));
        }
        self.session.open_issues = feedback.map(|(_, i)| i).unwrap_or_default();
        Ok(false)
    }

    fn stages_from(&mut self, first: usize) -> Result<bool, GenError> {
        for &stage in &Stage::ALL[first..] {
            if !self.stage(stage)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn coverage(
    required: &BTreeSet<String>,
    defined: &BTreeSet<String>,
    what: &str,
    item: &str,
) -> Vec<String> {
    let mut out: Vec<String> = required
        .difference(defined)
        .map(|e| format!("{what} `{e}` has no {item}"))
        .collect();
    out.extend(
        defined
            .difference(required)
            .map(|e| format!("{item} `{e}` is not a {what} of the reward machine")),
    );
    out
}

/// Runs the full generator–critic loop for one mission.
///
/// Exhaustion is reported through `status`, not as an error; errors are
/// transport and replay failures only.
pub fn run_generation_loop(
    mission: &str,
    opts: &GenOptions,
    client: &dyn FmClient,
    human: Option<&mut dyn HumanHook>,
) -> Result<GenSession, GenError> {
    if opts.max_rounds == 0 {
        return Err(GenError::Config("max_rounds must be at least 1".into()));
    }
    let mut l = Loop {
        opts,
        client,
        session: GenSession {
            mission: mission.to_string(),
            max_rounds: opts.max_rounds,
            round: 0,
            stage_rounds: [0; 3],
            human_rounds: 0,
            labeling_format: opts.labeling_format,
            transcript: Vec::new(),
            artifacts: Artifacts::default(),
            status: SessionStatus::InProgress,
            open_issues: Vec::new(),
        },
    };
    if !l.stages_from(0)? {
        l.session.status = SessionStatus::Exhausted;
        return Ok(l.session);
    }
    if let Some(hook) = human {
        let request = l.session.artifacts.render();
        let (verdict, ts) = hook.review(&l.session.artifacts)?;
        let round = l.session.stage_rounds[Stage::RewardMachine as usize] + 1;
        l.session.transcript.push(Exchange {
            round,
            role: Role::Human,
            request,
            reply: human_reply(&verdict),
            ts,
        });
        if let HumanVerdict::Feedback(text) = verdict {
            l.session.human_rounds = 1;
            let previous = l.session.artifacts.rm_text.clone().unwrap_or_default();
            let before = previous.clone();
            let issues =
                l.round(Stage::RewardMachine, round, Some((&previous, &[text][..])))?;
            if !issues.is_empty() {
                l.session.open_issues = issues;
                l.session.status = SessionStatus::Exhausted;
                return Ok(l.session);
            }
            if l.session.artifacts.rm_text.as_deref() != Some(before.as_str())
                && !l.stages_from(1)?
            {
                l.session.status = SessionStatus::Exhausted;
                return Ok(l.session);
            }
        }
    }
    l.session.status = SessionStatus::Approved;
    Ok(l.session)
}
