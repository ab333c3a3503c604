use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use automind_core::knowledge::{
    build_index, ingest_corpus, HashEmbedder, KnowledgeIndex, KnowledgeQuery, LabelPath, Taxonomy,
};
use automind_core::llm::{
    Gateway, HttpBackend, ReplayBackend, Role, RoleModelConfig, TARGET_MODEL,
};
use automind_core::orchestrator::{
    load_config, load_task, read_journal, render_dot, render_tree, run, RunServices, SystemClock,
    TARGET_MODEL_ENV,
};
use automind_core::sandbox::{Executor, FakeExecutor, ShimExecutor};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Exit status when the run finished but produced no valid solution.
const EXIT_NO_SOLUTION: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "automind",
    version,
    about = "Tree-search agent for data science tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search for a solution to one task.
    Run(RunArgs),
    /// Build or query the knowledge base.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Inspect a run journal.
    #[command(subcommand)]
    Tree(TreeCommand),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Task directory with description.md and data/.
    #[arg(long)]
    task: PathBuf,
    /// Config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay model replies from a recorded transcript instead of calling the API.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Append every model exchange to this file.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run without the knowledge base.
    #[arg(long)]
    no_knowledge: bool,
    /// Knowledge index directory; overrides `kb.index`.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Execute code with scripted outcomes from a rules file instead of the runner.
    #[arg(long)]
    fake_executor: Option<PathBuf>,
    /// Output directory; defaults to runs/<task>-<unix time>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum KbCommand {
    /// Ingest a corpus and persist its index.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Index entries as written; never call a model to label or summarize.
        #[arg(long)]
        offline: bool,
        /// Taxonomy JSON; the bundled taxonomy is used by default.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        label_rounds: usize,
    },
    /// Show the tricks and papers retrieved for a task description.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// Task description file.
        #[arg(long)]
        task: PathBuf,
        #[arg(short, default_value_t = 3)]
        k: usize,
        /// Task labels in priority order, e.g. "Tabular Data/Feature Engineering; Tabular Data/Tabular Regression".
        #[arg(long)]
        labels: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum TreeCommand {
    /// Print the solution tree with statuses and metrics.
    Show {
        #[arg(long)]
        journal: PathBuf,
    },
    /// Write the solution tree as a Graphviz file.
    Export {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        dot: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run_task(args),
        Command::Kb(KbCommand::Build {
            corpus,
            out,
            offline,
            taxonomy,
            label_rounds,
        }) => kb_build(&corpus, &out, offline, taxonomy.as_deref(), label_rounds),
        Command::Kb(KbCommand::Query {
            index,
            task,
            k,
            labels,
        }) => kb_query(&index, &task, k, labels.as_deref()),
        Command::Tree(TreeCommand::Show { journal }) => {
            let records = read_journal(&journal)?;
            print!("{}", render_tree(&records)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Tree(TreeCommand::Export { journal, dot }) => {
            let records = read_journal(&journal)?;
            fs::write(&dot, render_dot(&records)?)
                .with_context(|| format!("writing {}", dot.display()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn unresolved_roles(models: &RoleModelConfig) -> Vec<Role> {
    Role::ALL
        .into_iter()
        .filter(|r| models.model_for(*r) == Some(TARGET_MODEL))
        .collect()
}

fn live_gateway(models: RoleModelConfig) -> Result<Gateway> {
    let missing = unresolved_roles(&models);
    if !missing.is_empty() {
        bail!(
            "no model configured for {}; set {TARGET_MODEL_ENV} or the agent.<role>.model keys",
            missing
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(Gateway::new(models, HttpBackend::from_env()?))
}

fn run_task(args: RunArgs) -> Result<ExitCode> {
    let env = |k: &str| std::env::var(k).ok();
    let mut config = match &args.config {
        Some(path) => load_config(path, env)?,
        None => {
            let mut c = automind_core::orchestrator::RunConfig::default();
            if let Some(model) = env(TARGET_MODEL_ENV).filter(|m| !m.is_empty()) {
                c.models.resolve_target(&model);
            }
            c
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.no_knowledge {
        config.knowledge_enabled = false;
    }
    let task = load_task(&args.task)?;

    let mut llm = match &args.transcript {
        Some(path) => Gateway::new(config.models.clone(), ReplayBackend::from_file(path)?),
        None => live_gateway(config.models.clone())?,
    };
    if let Some(cap) = config.token_cap {
        llm = llm.with_token_cap(cap);
    }
    if let Some(path) = &args.record {
        llm = llm.record_to(path)?;
    }

    let executor: Box<dyn Executor> = match (&args.fake_executor, &config.runner_cmd) {
        (Some(rules), _) => Box::new(FakeExecutor::from_file(rules)?),
        (None, Some(cmd)) => Box::new(ShimExecutor::from_command_line(cmd)?),
        (None, None) => {
            bail!("no executor: set sandbox.runner_cmd in the config or pass --fake-executor")
        }
    };

    let knowledge = if config.knowledge_enabled {
        let dir = args
            .kb
            .clone()
            .or_else(|| config.paths.index_dir.clone())
            .context("knowledge is enabled but no index was given; pass --kb, set kb.index, or use --no-knowledge")?;
        let index = KnowledgeIndex::load(&dir)?;
        let embedder = HashEmbedder::new(index.dim());
        Some((index, Box::new(embedder) as Box<_>))
    } else {
        None
    };

    let out = match args.out.clone().or_else(|| config.paths.out_dir.clone()) {
        Some(out) => out,
        None => {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            Path::new("runs").join(format!("{}-{secs}", task.spec.task_id))
        }
    };
    let result = run(
        &task,
        &config,
        &out,
        RunServices {
            llm,
            executor,
            knowledge,
            clock: Box::new(SystemClock::start()),
        },
    )?;

    println!("run directory: {}", out.display());
    println!(
        "nodes created: {} (stopped by {:?})",
        result.nodes_created, result.stop_reason
    );
    println!(
        "tokens: {} in, {} out",
        result.tokens.input, result.tokens.output
    );
    match (&result.best, &result.best_metric) {
        (Some(id), Some(m)) => {
            println!("best: {id} metric {}", m.value());
            if let Some(path) = &result.submission_path {
                println!("submission: {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        _ => {
            println!("no valid solution");
            Ok(ExitCode::from(EXIT_NO_SOLUTION))
        }
    }
}

fn kb_build(
    corpus_dir: &Path,
    out: &Path,
    offline: bool,
    taxonomy: Option<&Path>,
    label_rounds: usize,
) -> Result<ExitCode> {
    let taxonomy = match taxonomy {
        Some(path) => Taxonomy::load(path)?,
        None => Taxonomy::builtin(),
    };
    let corpus = ingest_corpus(corpus_dir)?;
    for w in &corpus.warnings {
        eprintln!("skipped {}: {}", w.path.display(), w.reason);
    }
    let needs_model = corpus.tricks.iter().any(|t| t.labels.is_empty())
        || corpus.papers.iter().any(|p| !p.summary.is_complete());
    let llm = if needs_model && !offline {
        let mut models = RoleModelConfig::default();
        if let Some(model) = std::env::var(TARGET_MODEL_ENV)
            .ok()
            .filter(|m| !m.is_empty())
        {
            models.resolve_target(&model);
        }
        Some(live_gateway(models)?)
    } else {
        None
    };
    let embedder = HashEmbedder::default();
    let (index, report) = build_index(corpus, llm.as_ref(), &taxonomy, &embedder, label_rounds)?;
    index.persist(out)?;
    println!(
        "indexed {} tricks and {} papers into {}",
        report.tricks,
        report.papers,
        out.display()
    );
    if !report.labeled.is_empty() || !report.summarized.is_empty() {
        println!(
            "labeled {}, summarized {}",
            report.labeled.len(),
            report.summarized.len()
        );
    }
    for (id, why) in &report.skipped {
        println!("kept without annotations: {id} ({why})");
    }
    Ok(ExitCode::SUCCESS)
}

fn kb_query(
    index_dir: &Path,
    task_file: &Path,
    k: usize,
    labels: Option<&str>,
) -> Result<ExitCode> {
    let index = KnowledgeIndex::load(index_dir)?;
    let embedder = HashEmbedder::new(index.dim());
    let description = fs::read_to_string(task_file)
        .with_context(|| format!("reading {}", task_file.display()))?;
    // A task's description.md is named after its directory.
    let task_id = if task_file.file_name().is_some_and(|n| n == "description.md") {
        task_file
            .canonicalize()?
            .parent()
            .and_then(Path::file_name)
            .map(|n| n.to_string_lossy().into_owned())
    } else {
        task_file
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
    }
    .unwrap_or_default();
    let task_labels = match labels {
        Some(text) => text
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| LabelPath::parse(s).with_context(|| format!("bad label `{}`", s.trim())))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let query = KnowledgeQuery {
        task_id,
        task_labels,
        free_text: description.clone(),
        k,
    };
    println!("tricks:");
    for (i, hit) in index.retrieve(&embedder, &query)?.iter().enumerate() {
        println!(
            "{:>3}. {} (label rank {}, similarity {:.4})",
            i + 1,
            hit.entry.id(),
            hit.label_rank.map_or("-".to_string(), |r| r.to_string()),
            hit.similarity
        );
    }
    println!("papers:");
    for (i, hit) in index
        .retrieve_papers(&embedder, &description, k)?
        .iter()
        .enumerate()
    {
        println!(
            "{:>3}. {} (similarity {:.4})",
            i + 1,
            hit.entry.id(),
            hit.similarity
        );
    }
    Ok(ExitCode::SUCCESS)
}
