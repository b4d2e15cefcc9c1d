use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use stepwise_cli::inspect::{self, Query};
use stepwise_cli::run::{run_scenario, RunOptions, EXIT_PARSE};
use stepwise_cli::gateway;
use stepwise_core::{EventLog, Scenario};

#[derive(Parser)]
#[command(name = "stepwise", version, about = "Step-granular multi-agent runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario deterministically and check its assertions.
    Run {
        scenario: PathBuf,
        /// Round budget; defaults to the scenario's own.
        #[arg(long)]
        ticks: Option<u64>,
        /// Write the event log here as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Shuffle agent order each round with this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario live and serve the HTTP gateway.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Scenario file with agents, tool servers, back ends and tasks.
        #[arg(long)]
        config: PathBuf,
    },
    /// Filter a saved event log or summarise it.
    Inspect {
        log: PathBuf,
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        executor: Option<String>,
        /// Per-stage step counts and lock-wait durations.
        #[arg(long)]
        stats: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            ticks,
            log,
            seed,
        } => run_scenario(&scenario, &RunOptions { ticks, log, seed }, &mut std::io::stdout()),
        Command::Serve { port, config } => match serve(port, config) {
            Ok(()) => 0,
            Err(err) => {
                eprintln!("error: {err:#}");
                1
            }
        },
        Command::Inspect {
            log,
            agent,
            task,
            executor,
            stats,
        } => match run_inspect(log, Query { agent, task, executor }, stats) {
            Ok(report) => {
                print!("{report}");
                0
            }
            Err(err) => {
                eprintln!("error: {err:#}");
                EXIT_PARSE
            }
        },
    };
    ExitCode::from(code as u8)
}

fn run_inspect(path: PathBuf, query: Query, stats: bool) -> anyhow::Result<String> {
    query.validate().map_err(anyhow::Error::msg)?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let events = EventLog::parse_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?;
    let selected = inspect::filter(&events, &query);
    Ok(if stats {
        inspect::render_stats(&inspect::stats(selected))
    } else {
        inspect::render_events(&selected)
    })
}

fn serve(port: u16, config: PathBuf) -> anyhow::Result<()> {
    let scenario = Scenario::load(&config)?;
    let orchestrator = Arc::new(scenario.build(None)?);
    let live = orchestrator.start_live();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port))).await?;
        tracing::info!(port, "gateway listening");
        gateway::serve(orchestrator, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    live.stop();
    Ok(())
}
