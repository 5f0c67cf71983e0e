use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use transit_ask::bench_io::{gold_executor, load_tasks, read_report, run_parallel, write_report};
use transit_ask::config::ServiceConfig;
use transit_ask::feed_io::{cache_path, load_feeds_dir, parse_feed, save_cache};
use transit_ask::providers::{build_model, load_stub_script, provider_kind, ProviderKind, ProviderSettings};
use transit_ask::sandbox::{SandboxAddr, SocketExecutor};
use transit_ask::server::{router, AppState};
use transit_ask_core::bench::{render_table, BenchEnv, GoldCodeModel};
use transit_ask_core::exec::Executor;
use transit_ask_core::fewshot::{bundled_corpus, parse_corpus, FewShotSelector};
use transit_ask_core::llm::{ChatModel, StubProvider};
use transit_ask_core::pipeline::{Mode, RunConfig};
use transit_ask_core::{preprocess, DistUnits, PrepareOptions};

type Error = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser)]
#[command(name = "transit-ask", version, about = "Ask questions about GTFS feeds in plain language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, clean and cache a GTFS feed (zip or directory).
    PrepareFeed {
        #[arg(long = "in")]
        input: PathBuf,
        /// Cache file, or a directory to write `<feed_id>.feedcache` into.
        #[arg(long)]
        out: PathBuf,
        /// Units of shape_dist_traveled (m, km, mi).
        #[arg(long)]
        dist_units: Option<DistUnits>,
        #[arg(long)]
        feed_id: Option<String>,
    },
    /// Run the HTTP/SSE service.
    Serve {
        #[arg(long)]
        feeds_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Benchmark runs and reports.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a task file through the pipeline.
    Run {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, default_value = "transitgpt-plus")]
        mode: Mode,
        /// Model id, `stub:<script.json>`, or `stub:gold` to replay gold code.
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "feeds")]
        feeds_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sandbox worker address; defaults to the config value.
        #[arg(long)]
        sandbox: Option<String>,
        /// Answer every gold snippet with its gold output instead of running it.
        #[arg(long)]
        mock_executor: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render a saved report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn prepare_feed(input: &Path, out: &Path, dist_units: Option<DistUnits>, feed_id: Option<String>) -> Result<(), Error> {
    let raw = parse_feed(input)?;
    let feed = preprocess(&raw, &PrepareOptions { feed_id, dist_units, prepared_at: now() })?;
    let path = if out.is_dir() { cache_path(out, &feed.meta().feed_id) } else { out.to_path_buf() };
    save_cache(&feed, &path)?;
    let meta = feed.meta();
    println!("{} -> {}", meta.feed_id, path.display());
    for (stem, n) in &meta.row_counts {
        println!("  {stem:<16} {n:>8} rows");
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, Error> {
    Ok(match path {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    })
}

fn selector(config: &ServiceConfig) -> Result<FewShotSelector, Error> {
    let corpus = match &config.few_shot_corpus {
        Some(p) => parse_corpus(&std::fs::read_to_string(p)?)?,
        None => bundled_corpus(),
    };
    Ok(FewShotSelector::new(corpus)?)
}

fn serve(feeds_dir: Option<PathBuf>, config_path: Option<PathBuf>, listen: Option<String>) -> Result<(), Error> {
    let config = load_config(config_path.as_deref())?;
    let feeds_dir = feeds_dir.or(config.feeds_dir.clone()).ok_or("no feeds directory (use --feeds-dir)")?;
    let feeds = load_feeds_dir(&feeds_dir)?;
    if feeds.is_empty() {
        return Err(format!("no .feedcache files in {}", feeds_dir.display()).into());
    }
    let settings = config.providers.settings();
    let aux: Arc<dyn ChatModel> = Arc::from(build_model(&config.run.aux_model_id, &settings)?);
    let addr: SandboxAddr = config.sandbox.parse()?;
    let executor: Arc<dyn Executor> = Arc::new(SocketExecutor::new(addr));
    let factory_settings = settings.clone();
    let state = AppState::new(
        feeds,
        selector(&config)?,
        config.models.clone(),
        aux,
        executor,
        config.run.clone(),
        Box::new(move |id| build_model(id, &factory_settings).map(Arc::from).map_err(|e| e.to_string())),
    );
    let listen = listen.unwrap_or(config.listen.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state))).await
    })?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench_run(
    tasks_path: &Path,
    mode: Mode,
    model: &str,
    out: &Path,
    feeds_dir: &Path,
    config_path: Option<&Path>,
    sandbox: Option<String>,
    mock_executor: bool,
    jobs: usize,
) -> Result<(), Error> {
    let config = load_config(config_path)?;
    let feeds = load_feeds_dir(feeds_dir)?;
    let known: BTreeSet<String> = feeds.keys().cloned().collect();
    let tasks = load_tasks(tasks_path, Some(&known))?;
    let run = RunConfig { mode, ..config.run.clone() };
    let settings: ProviderSettings = config.providers.settings();

    let (main, aux): (Box<dyn ChatModel>, Box<dyn ChatModel>) = if model == "stub:gold" {
        (Box::new(GoldCodeModel::new(&tasks)), Box::new(GoldCodeModel::new(&tasks)))
    } else if let ProviderKind::Stub(path) = provider_kind(model)? {
        // One script serves every role.
        let script = load_stub_script(Path::new(&path))?;
        let stub: Arc<StubProvider> = Arc::new(StubProvider::new(script));
        (Box::new(stub.clone()), Box::new(stub))
    } else {
        (build_model(model, &settings)?, build_model(&run.aux_model_id, &settings)?)
    };
    let executor: Box<dyn Executor> = if mock_executor || (model == "stub:gold" && sandbox.is_none()) {
        Box::new(gold_executor(&tasks))
    } else {
        Box::new(SocketExecutor::new(sandbox.unwrap_or(config.sandbox.clone()).parse()?))
    };
    let few_shot = selector(&config)?;
    let env = BenchEnv {
        feeds: &feeds,
        few_shot: Some(&few_shot),
        main_model: main.as_ref(),
        aux_model: aux.as_ref(),
        executor: executor.as_ref(),
    };
    // Scripted stubs hand out entries in call order, so they run serially.
    let jobs = if model.starts_with("stub:") && model != "stub:gold" { 1 } else { jobs };
    let report = run_parallel(&tasks, &env, &run, model, jobs);
    write_report(&report, out)?;
    print!("{}", render_table(&report));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PrepareFeed { input, out, dist_units, feed_id } => prepare_feed(&input, &out, dist_units, feed_id),
        Command::Serve { feeds_dir, config, listen } => serve(feeds_dir, config, listen),
        Command::Bench { command } => match command {
            BenchCommand::Run { tasks, mode, model, out, feeds_dir, config, sandbox, mock_executor, jobs } => {
                bench_run(&tasks, mode, &model, &out, &feeds_dir, config.as_deref(), sandbox, mock_executor, jobs)
            }
            BenchCommand::Report { input, format } => read_report(&input).map_err(Into::into).map(|r| match format {
                Format::Table => print!("{}", render_table(&r)),
                Format::Json => println!("{}", serde_json::to_string_pretty(&r).expect("report serializes")),
            }),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
