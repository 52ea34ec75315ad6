//! Trains a tabular agent on DoorKey with and without the reward machine and
//! prints the greedy success rate of each.

use larm::agent::{evaluate, train, Agent, Backend, Conditioning, ConditioningMode, GreedyPolicy, Task, TrainConfig};
use larm::embed::HashEmbedder;
use larm::fixtures;
use larm::gridworld::{TaskConfig, TaskKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let embedder = HashEmbedder::default();
    let task = Task::from_texts(
        "doorkey",
        TaskConfig::new(TaskKind::DoorKey, 5),
        fixtures::DOORKEY_RM,
        fixtures::DOORKEY_LBL,
        fixtures::DOORKEY_INSTRUCTIONS,
        &embedder,
    )?;
    let tasks = std::slice::from_ref(&task);
    for mode in [ConditioningMode::Both, ConditioningMode::Neither] {
        let mut agent = Agent::for_tasks(tasks, Backend::Tabular, mode, Conditioning::Embedding);
        let report = train(tasks, &mut agent, &TrainConfig::default())?;
        let eval = evaluate(&mut GreedyPolicy::new(&agent, &task)?, &task, 100, 1)?;
        println!(
            "{:>8}: {} episodes, last-100 success {:.2}, greedy success {:.2}",
            mode.as_str(),
            report.episodes.len(),
            report.final_window_success(100),
            eval.success_rate
        );
    }
    Ok(())
}
