use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use larm::agent::{
    evaluate, run_ablation, train_seeds, zero_shot_eval, AblationConfig, Agent, Backend,
    Conditioning, ConditioningMode, EvalReport, GreedyPolicy, PlannerPolicy, Policy, Task,
    TrainConfig,
};
use larm::embed::{pca_csv, pca_project};
use larm::fm_gen::{
    run_generation_loop, Artifacts, FmClient, FmClientConfig, GenOptions, HttpClient, HumanHook,
    HumanVerdict, LabelingFormat, Prompts, ReplayClient, ReplayHuman, SessionRecord,
    SessionStatus,
};
use larm::machine::{compile, detect_positive_cycles, max_path_reward, reachable_states, to_dot, DotOptions, Instructions};
use larm::par::Execution;
use larm::rm_dsl::{parse_rm, serialize_rm, validate_rm, RewardMachineSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::Run;
use crate::settings::{named_task, EmbedderSettings, Layered, TaskSettings};
use crate::{
    AblateArgs, Cli, Command, EmbedArgs, EvalArgs, GenArgs, LearnArgs, RunArgs, TaskArgs,
    TrainArgs, VizArgs, ZeroshotArgs,
};

/// `Ok(false)` is a negative result (exit 1), `Err` a failure (exit 2).
pub fn run(cli: &Cli) -> Result<bool> {
    let layered = || Layered::from_file(cli.config.as_deref());
    match &cli.command {
        Command::Parse { path } => parse(path, cli.json),
        Command::Validate { path } => validate(path, cli.json),
        Command::Viz(a) => viz(a),
        Command::Train(a) => train(a, layered()?, cli.json),
        Command::Eval(a) => eval(a, layered()?, cli.json),
        Command::Ablate(a) => ablate(a, layered()?, cli.json),
        Command::Zeroshot(a) => zeroshot(a, layered()?, cli.json),
        Command::Gen(a) => gen(a, layered()?, cli.json),
        Command::Embed(a) => embed(a, layered()?, cli.json),
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_spec(path: &Path) -> Result<RewardMachineSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_rm(&text).with_context(|| format!("{}: syntax error", path.display()))
}

fn parse(path: &Path, as_json: bool) -> Result<bool> {
    let spec = load_spec(path)?;
    match serialize_rm(&spec) {
        Ok(canonical) => {
            if as_json {
                print_json(&json!({ "ok": true, "canonical": canonical, "spec": spec }))?;
            } else {
                print!("{canonical}");
            }
            Ok(true)
        }
        Err(report) => {
            if as_json {
                print_json(&json!({ "ok": false, "report": report }))?;
            } else {
                print!("{report}");
            }
            Ok(false)
        }
    }
}

/// State names stand in for instructions when only the structure matters.
fn placeholder_instructions(spec: &RewardMachineSpec) -> Instructions {
    Instructions(spec.states.iter().map(|s| (s.clone(), s.clone())).collect())
}

fn validate(path: &Path, as_json: bool) -> Result<bool> {
    let spec = load_spec(path)?;
    let report = validate_rm(&spec);
    let mut analysis = serde_json::Value::Null;
    if report.is_ok() {
        let larm = compile(&spec, &placeholder_instructions(&spec), &larm::embed::HashEmbedder::default())?;
        let name = |u: usize| larm.state_name(u).to_string();
        let cycles: Vec<_> = detect_positive_cycles(&larm)
            .into_iter()
            .map(|c| json!({ "states": c.states.iter().map(|&u| name(u)).collect::<Vec<_>>(), "total": c.total }))
            .collect();
        let reachable: Vec<String> = reachable_states(&larm).into_iter().map(name).collect();
        let max_reward = max_path_reward(&larm).ok();
        analysis = json!({
            "reachable": reachable,
            "positive_cycles": cycles,
            "max_path_reward": max_reward,
            "finals": larm.finals().into_iter().map(name).collect::<Vec<_>>(),
        });
    }
    if as_json {
        print_json(&json!({
            "ok": report.is_ok(),
            "errors": report.errors,
            "warnings": report.warnings,
            "analysis": analysis,
        }))?;
    } else {
        print!("{report}");
        if report.is_ok() {
            println!("ok: {} states, {} events", spec.states.len(), spec.events().len());
            if let Some(r) = analysis["max_path_reward"].as_f64() {
                println!("max path reward: {r}");
            }
            for c in analysis["positive_cycles"].as_array().into_iter().flatten() {
                println!("positive reward cycle: {}", c["states"]);
            }
        }
    }
    Ok(report.is_ok())
}

fn viz(a: &VizArgs) -> Result<bool> {
    let spec = load_spec(&a.path)?;
    let instructions = match &a.instructions {
        Some(p) => Instructions::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => placeholder_instructions(&spec),
    };
    let larm = compile(&spec, &instructions, &larm::embed::HashEmbedder::default())?;
    let dot = to_dot(&larm, DotOptions { include_else: a.include_else });
    match &a.dot {
        Some(p) => fs::write(p, dot).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{dot}"),
    }
    Ok(true)
}

fn task_overrides(l: &mut Layered, t: &TaskArgs) {
    l.set("task.name", t.task.clone())
        .set("task.size", t.size)
        .set("task.task_config", t.task_config.clone())
        .set("task.rm", t.rm.clone())
        .set("task.labeling", t.labeling.clone())
        .set("task.instructions", t.instructions.clone());
}

fn run_overrides(l: &mut Layered, r: &RunArgs) {
    l.set("out", r.out.clone())
        .set("seeds", r.seed.map(|s| vec![s]))
        .set("seeds", r.seeds.clone());
    if r.sequential {
        l.set("sequential", Some(true));
    }
}

fn learn_overrides(l: &mut Layered, a: &LearnArgs) {
    l.set("backend", a.backend)
        .set("conditioning", a.conditioning)
        .set("train.total_steps", a.steps)
        .set("train.alpha", a.alpha)
        .set("train.gamma", a.gamma);
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSettings {
    task: TaskSettings,
    embedder: EmbedderSettings,
    backend: Backend,
    mode: ConditioningMode,
    conditioning: Conditioning,
    train: TrainConfig,
    eval_episodes: usize,
    seeds: Vec<u64>,
    sequential: bool,
    out: PathBuf,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            task: TaskSettings::default(),
            embedder: EmbedderSettings::default(),
            backend: Backend::Tabular,
            mode: ConditioningMode::Both,
            conditioning: Conditioning::Embedding,
            train: TrainConfig::default(),
            eval_episodes: 100,
            seeds: vec![0],
            sequential: false,
            out: PathBuf::from("out/train"),
        }
    }
}

const FINAL_WINDOW: usize = 100;

fn train(a: &TrainArgs, mut l: Layered, as_json: bool) -> Result<bool> {
    task_overrides(&mut l, &a.task);
    run_overrides(&mut l, &a.run);
    learn_overrides(&mut l, &a.learn);
    l.set("mode", a.mode).set("eval_episodes", a.episodes);
    let s: TrainSettings = l.build()?;
    s.train.validate()?;
    let embedder = s.embedder.build()?;
    let task = s.task.load(embedder.as_ref())?;
    let tasks = std::slice::from_ref(&task);
    let mut run = Run::start(&s.out, "train", &s, &s.seeds)?;
    let template = Agent::for_tasks(tasks, s.backend, s.mode, s.conditioning);
    let results = train_seeds(tasks, &template, &s.train, &s.seeds, execution(s.sequential))?;

    let mut summary = Vec::new();
    for (&seed, (agent, report)) in s.seeds.iter().zip(&results) {
        run.write(&format!("curve_seed{seed}.csv"), report.to_csv())?;
        run.write(&format!("agent_seed{seed}.json"), agent.to_json())?;
        let eval = evaluate(&mut GreedyPolicy::new(agent, &task)?, &task, s.eval_episodes, seed.wrapping_add(1))?;
        summary.push(json!({
            "seed": seed,
            "episodes": report.episodes.len(),
            "total_steps": report.total_steps,
            "final_window_success": report.final_window_success(FINAL_WINDOW),
            "eval": eval,
        }));
        if !as_json {
            println!(
                "seed {seed}: {} episodes, last-{FINAL_WINDOW} success {:.3}, greedy success {:.3}",
                report.episodes.len(),
                report.final_window_success(FINAL_WINDOW),
                eval.success_rate
            );
        }
    }
    run.write("summary.json", serde_json::to_string_pretty(&summary)?)?;
    run.finish()?;
    if as_json {
        print_json(&summary)?;
    }
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSettings {
    task: TaskSettings,
    embedder: EmbedderSettings,
    agent: Option<PathBuf>,
    planner: bool,
    episodes: usize,
    seed: u64,
    out: PathBuf,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            task: TaskSettings::default(),
            embedder: EmbedderSettings::default(),
            agent: None,
            planner: false,
            episodes: 100,
            seed: 0,
            out: PathBuf::from("out/eval"),
        }
    }
}

fn eval(a: &EvalArgs, mut l: Layered, as_json: bool) -> Result<bool> {
    task_overrides(&mut l, &a.task);
    l.set("agent", a.agent.clone())
        .set("episodes", a.episodes)
        .set("seed", a.seed)
        .set("out", a.out.clone());
    if a.planner {
        l.set("planner", Some(true));
    }
    let s: EvalSettings = l.build()?;
    let embedder = s.embedder.build()?;
    let task = s.task.load(embedder.as_ref())?;
    let mut run = Run::start(&s.out, "eval", &s, &[s.seed])?;
    let report: EvalReport = if s.planner {
        evaluate(&mut PlannerPolicy::default(), &task, s.episodes, s.seed)?
    } else {
        let Some(path) = &s.agent else { bail!("pass --agent or --planner") };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let agent = Agent::from_json(&text)?;
        let mut policy: Box<dyn Policy + '_> = Box::new(GreedyPolicy::new(&agent, &task)?);
        evaluate(policy.as_mut(), &task, s.episodes, s.seed)?
    };
    run.write("eval.json", serde_json::to_string_pretty(&report)?)?;
    run.finish()?;
    if as_json {
        print_json(&report)?;
    } else {
        println!(
            "{}: success {:.3} over {} episodes, mean env return {:.3}, mean rm return {:.3}",
            task.name, report.success_rate, report.episodes, report.mean_env_return, report.mean_rm_return
        );
    }
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AblateSettings {
    k: usize,
    modes: Vec<ConditioningMode>,
    embedder: EmbedderSettings,
    backend: Backend,
    conditioning: Conditioning,
    train: TrainConfig,
    eval_episodes: usize,
    seeds: Vec<u64>,
    sequential: bool,
    out: PathBuf,
}

impl Default for AblateSettings {
    fn default() -> Self {
        Self {
            k: 3,
            modes: ConditioningMode::ALL.to_vec(),
            embedder: EmbedderSettings::default(),
            backend: Backend::Linear,
            conditioning: Conditioning::Embedding,
            train: TrainConfig {
                total_steps: 400_000,
                ..TrainConfig::default()
            },
            eval_episodes: 100,
            seeds: vec![0, 1, 2],
            sequential: false,
            out: PathBuf::from("out/ablate"),
        }
    }
}

fn ablate(a: &AblateArgs, mut l: Layered, as_json: bool) -> Result<bool> {
    run_overrides(&mut l, &a.run);
    learn_overrides(&mut l, &a.learn);
    l.set("k", a.k).set("modes", a.modes.clone()).set("eval_episodes", a.episodes);
    let s: AblateSettings = l.build()?;
    let suite_len = larm::fixtures::ABLATION_SUITE.len();
    if s.k == 0 || s.k > suite_len {
        bail!("k must be between 1 and {suite_len}");
    }
    s.train.validate()?;
    let embedder = s.embedder.build()?;
    let suite = larm::fixtures::ABLATION_SUITE[..s.k]
        .iter()
        .map(|f| Task::from_fixture(f, embedder.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut run = Run::start(&s.out, "ablate", &s, &s.seeds)?;
    let cfg = AblationConfig {
        backend: s.backend,
        conditioning: s.conditioning,
        train: s.train.clone(),
        eval_episodes: s.eval_episodes,
    };
    let report = run_ablation(&suite, &s.modes, &cfg, &s.seeds, execution(s.sequential))?;
    let summary = report.summary();
    run.write("ablation.csv", report.to_csv())?;
    run.write("summary.json", serde_json::to_string_pretty(&json!({ "k": s.k, "summary": summary, "runs": report.runs }))?)?;
    run.finish()?;
    if as_json {
        print_json(&json!({ "k": s.k, "summary": summary, "runs": report.runs }))?;
    } else {
        for m in &summary {
            println!("k={} {:>15}: {:.3} ± {:.3}", s.k, m.mode.as_str(), m.mean, m.std);
        }
    }
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ZeroshotSettings {
    train_tasks: Vec<String>,
    target: String,
    conditionings: Vec<Conditioning>,
    embedder: EmbedderSettings,
    backend: Backend,
    train: TrainConfig,
    eval_episodes: usize,
    seeds: Vec<u64>,
    sequential: bool,
    out: PathBuf,
}

impl Default for ZeroshotSettings {
    fn default() -> Self {
        Self {
            train_tasks: vec!["zs_a".into(), "zs_b".into()],
            target: "zs_c".into(),
            conditionings: vec![Conditioning::Embedding, Conditioning::OneHotId],
            embedder: EmbedderSettings::default(),
            backend: Backend::Linear,
            train: TrainConfig {
                total_steps: 200_000,
                ..TrainConfig::default()
            },
            eval_episodes: 100,
            seeds: vec![0, 1, 2],
            sequential: false,
            out: PathBuf::from("out/zeroshot"),
        }
    }
}

#[derive(Serialize)]
struct ZeroshotRow {
    conditioning: Conditioning,
    seed: u64,
    success: f64,
    mean_rm_return: f64,
}

fn zeroshot(a: &ZeroshotArgs, mut l: Layered, as_json: bool) -> Result<bool> {
    run_overrides(&mut l, &a.run);
    learn_overrides(&mut l, &a.learn);
    l.set("eval_episodes", a.episodes);
    if let Some(c) = a.learn.conditioning {
        l.set("conditionings", Some(vec![c]));
    }
    let s: ZeroshotSettings = l.build()?;
    s.train.validate()?;
    let embedder = s.embedder.build()?;
    let tasks = s
        .train_tasks
        .iter()
        .map(|n| named_task(n, embedder.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let target = named_task(&s.target, embedder.as_ref())?;
    let mut run = Run::start(&s.out, "zeroshot", &s, &s.seeds)?;
    let mut rows = Vec::new();
    for &conditioning in &s.conditionings {
        let template = Agent::for_tasks(&tasks, s.backend, ConditioningMode::Both, conditioning);
        let trained = train_seeds(&tasks, &template, &s.train, &s.seeds, execution(s.sequential))?;
        for (&seed, (agent, _)) in s.seeds.iter().zip(&trained) {
            let r = zero_shot_eval(agent, &target, s.eval_episodes, seed.wrapping_add(7))?;
            rows.push(ZeroshotRow { conditioning, seed, success: r.success_rate, mean_rm_return: r.mean_rm_return });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    run.write("zeroshot.csv", w.into_inner()?)?;
    let mut means: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        means.entry(r.conditioning.as_str()).or_default().push(r.success);
    }
    let means: BTreeMap<&str, f64> = means
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    run.write("summary.json", serde_json::to_string_pretty(&json!({ "target": s.target, "mean_success": means, "runs": rows }))?)?;
    run.finish()?;
    if as_json {
        print_json(&json!({ "target": s.target, "mean_success": means, "runs": rows }))?;
    } else {
        for (k, v) in &means {
            println!("{} zero-shot success with {k}: {v:.3}", s.target);
        }
    }
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenSettings {
    mission: Option<String>,
    mission_file: Option<PathBuf>,
    rounds: Option<usize>,
    human: bool,
    raw_labeling: bool,
    /// Directory of prompt templates; the built-in set when absent.
    prompts: Option<PathBuf>,
    client: FmClientConfig,
    out: PathBuf,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            mission: None,
            mission_file: None,
            rounds: None,
            human: false,
            raw_labeling: false,
            prompts: None,
            client: FmClientConfig::default(),
            out: PathBuf::from("out/gen"),
        }
    }
}

/// Asks on the terminal; an empty line or `y` approves, anything else is
/// feedback for one more generator round.
struct TerminalHuman;

impl HumanHook for TerminalHuman {
    fn review(&mut self, artifacts: &Artifacts) -> Result<(HumanVerdict, String), larm::fm_gen::GenError> {
        let mut err = std::io::stderr();
        let _ = writeln!(err, "{}\nApprove? [Y / feedback]: ", artifacts.render());
        let mut line = String::new();
        std::io::stdin()
            .lock()
            .read_line(&mut line)
            .map_err(|e| larm::fm_gen::GenError::Transport(format!("reading terminal: {e}")))?;
        let line = line.trim();
        let verdict = if line.is_empty() || line.eq_ignore_ascii_case("y") || line.eq_ignore_ascii_case("yes") {
            HumanVerdict::Approve
        } else {
            HumanVerdict::Feedback(line.to_string())
        };
        let ts = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        Ok((verdict, ts))
    }
}

fn gen(a: &GenArgs, mut l: Layered, as_json: bool) -> Result<bool> {
    l.set("mission", a.mission.clone())
        .set("mission_file", a.mission_file.clone())
        .set("rounds", a.rounds)
        .set("client.endpoint", a.endpoint.clone())
        .set("client.model", a.model.clone())
        .set("client.offline_transcript", a.offline.clone())
        .set("out", a.out.clone());
    if a.human {
        l.set("human", Some(true));
    }
    if a.raw_labeling {
        l.set("raw_labeling", Some(true));
    }
    let s: GenSettings = l.build()?;

    // A recorded session carries its own mission and options.
    let record = match &s.client.offline_transcript {
        Some(t) => {
            let sidecar = SessionRecord::sidecar_path(t);
            sidecar.exists().then(|| SessionRecord::load(&sidecar)).transpose()?
        }
        None => None,
    };
    let mission = match (&s.mission, &s.mission_file, &record) {
        (Some(m), _, _) => m.clone(),
        (None, Some(p), _) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .trim()
            .to_string(),
        (None, None, Some(r)) => r.mission.clone(),
        (None, None, None) => bail!("pass --mission or --mission-file"),
    };
    let labeling_format = match (s.raw_labeling, &record) {
        (true, _) => LabelingFormat::RawPython,
        (false, Some(r)) => r.labeling_format,
        (false, None) => LabelingFormat::Predicates,
    };
    let opts = GenOptions {
        max_rounds: s.rounds.or(record.as_ref().map(|r| r.max_rounds)).unwrap_or(larm::fm_gen::DEFAULT_MAX_ROUNDS),
        labeling_format,
        prompts: match &s.prompts {
            Some(dir) => Prompts::load(dir)?,
            None => Prompts::builtin(),
        },
    };
    let human = s.human || record.as_ref().is_some_and(|r| r.human);

    let mut run = Run::start(&s.out, "gen", &s, &[])?;
    let session = match &s.client.offline_transcript {
        Some(path) => {
            let client = ReplayClient::open(path)?;
            let mut replay_human = ReplayHuman(&client);
            let hook: Option<&mut dyn HumanHook> = if human { Some(&mut replay_human) } else { None };
            let session = run_generation_loop(&mission, &opts, &client, hook)?;
            if client.remaining() != 0 {
                bail!("{} recorded exchanges were not replayed", client.remaining());
            }
            session
        }
        None => {
            let client: Box<dyn FmClient> = Box::new(HttpClient::new(&s.client)?);
            let mut terminal = TerminalHuman;
            let hook: Option<&mut dyn HumanHook> = if human { Some(&mut terminal) } else { None };
            run_generation_loop(&mission, &opts, client.as_ref(), hook)?
        }
    };

    let transcript = run.dir.join("transcript.jsonl");
    session.write_transcript(&transcript)?;
    session.record().save(&SessionRecord::sidecar_path(&transcript))?;
    let art = &session.artifacts;
    if let Some(t) = &art.rm_text {
        run.write("reward_machine.rm", format!("{t}\n"))?;
    }
    if let Some(t) = &art.labeling_text {
        let name = match labeling_format {
            LabelingFormat::Predicates => "labeling.lbl",
            LabelingFormat::RawPython => "labeling.py",
        };
        run.write(name, format!("{t}\n"))?;
    }
    if let Some(t) = &art.instructions_text {
        run.write("instructions.txt", format!("{t}\n"))?;
    }
    run.finish()?;

    let approved = session.status == SessionStatus::Approved;
    if as_json {
        print_json(&json!({
            "status": session.status,
            "stage_rounds": session.stage_rounds,
            "calls": session.transcript.len(),
            "artifacts": session.artifacts,
            "open_issues": session.open_issues,
        }))?;
    } else {
        println!(
            "status: {:?}, rounds per stage {:?}, {} exchanges",
            session.status,
            session.stage_rounds,
            session.transcript.len()
        );
        for i in &session.open_issues {
            println!("open issue: {i}");
        }
    }
    Ok(approved)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EmbedSettings {
    instructions: PathBuf,
    pca: usize,
    embedder: EmbedderSettings,
    out: Option<PathBuf>,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        Self {
            instructions: PathBuf::new(),
            pca: 2,
            embedder: EmbedderSettings::default(),
            out: None,
        }
    }
}

fn embed(a: &EmbedArgs, mut l: Layered, as_json: bool) -> Result<bool> {
    l.set("instructions", Some(a.instructions.clone()))
        .set("pca", a.pca)
        .set("embedder.dim", a.dim)
        .set("out", a.out.clone());
    let s: EmbedSettings = l.build()?;
    let text = fs::read_to_string(&s.instructions)
        .with_context(|| format!("reading {}", s.instructions.display()))?;
    // Parse for validation, then keep file order.
    let parsed = Instructions::parse(&text)?;
    let mut labels = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let state = line.split_once(':').map(|(s, _)| s.trim()).unwrap_or_default();
        labels.push((state.to_string(), parsed.get(state).unwrap_or_default().to_string()));
    }
    let embedder = s.embedder.build()?;
    let vectors = labels
        .iter()
        .map(|(_, t)| embedder.embed(t))
        .collect::<Result<Vec<_>, _>>()?;
    let projection = pca_project(&vectors, s.pca)?;
    let csv = pca_csv(&labels, &projection);
    match &s.out {
        Some(dir) => {
            let mut run = Run::start(dir, "embed", &s, &[])?;
            run.write("embeddings.csv", &csv)?;
            run.finish()?;
            if as_json {
                print_json(&json!({
                    "rows": labels.len(),
                    "explained_variance": projection.explained_variance,
                    "csv": dir.join("embeddings.csv"),
                }))?;
            }
        }
        None if as_json => print_json(&json!({
            "states": labels.iter().map(|(s, _)| s).collect::<Vec<_>>(),
            "coords": projection.coords,
            "explained_variance": projection.explained_variance,
        }))?,
        None => print!("{csv}"),
    }
    Ok(true)
}
