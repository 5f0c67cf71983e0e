//! Task files, report files and a bounded parallel benchmark runner.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use transit_ask_core::bench::{assemble_report, parse_tasks, run_task, BenchEnv, BenchmarkReport, BenchmarkTask, TaskError};
use transit_ask_core::exec::{ExecutionOutcome, ReplayExecutor};
use transit_ask_core::pipeline::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum BenchIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Task { path: String, source: TaskError },
    #[error("{path}: {source}")]
    Report { path: String, source: serde_json::Error },
}

pub fn load_tasks(path: &Path, known_feeds: Option<&BTreeSet<String>>) -> Result<Vec<BenchmarkTask>, BenchIoError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| BenchIoError::Io { path: p.clone(), source })?;
    parse_tasks(&text, known_feeds).map_err(|source| BenchIoError::Task { path: p, source })
}

pub fn write_report(report: &BenchmarkReport, path: &Path) -> Result<(), BenchIoError> {
    let p = path.display().to_string();
    let json = serde_json::to_string_pretty(report).map_err(|source| BenchIoError::Report { path: p.clone(), source })?;
    std::fs::write(path, json).map_err(|source| BenchIoError::Io { path: p, source })
}

pub fn read_report(path: &Path) -> Result<BenchmarkReport, BenchIoError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| BenchIoError::Io { path: p.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| BenchIoError::Report { path: p, source })
}

/// Mock executor that returns each task's gold output for its gold code.
pub fn gold_executor(tasks: &[BenchmarkTask]) -> ReplayExecutor {
    let mut ex = ReplayExecutor::new();
    for t in tasks {
        ex.insert(&t.gold_code, ExecutionOutcome::success(t.expected(), 0));
    }
    ex
}

/// Runs tasks on up to `jobs` threads. The report is identical to a
/// sequential run whenever the models are stateless.
pub fn run_parallel(
    tasks: &[BenchmarkTask],
    env: &BenchEnv<'_>,
    config: &RunConfig,
    model_id: &str,
    jobs: usize,
) -> BenchmarkReport {
    let next = AtomicUsize::new(0);
    let out = Mutex::new((Vec::with_capacity(tasks.len()), BTreeMap::new()));
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, tasks.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let (r, t) = run_task(task, env, config, model_id);
                let mut guard = out.lock().expect("results poisoned");
                guard.1.insert(r.transcript_ref.clone(), t);
                guard.0.push(r);
            });
        }
    });
    let (results, transcripts) = out.into_inner().expect("results poisoned");
    assemble_report(results, transcripts, config, model_id)
}
