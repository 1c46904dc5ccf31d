use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sift_cli::api::{Api, ApiError, ApiResult, CreateProject, DecisionRequest, SimulateRequest};
use sift_core::scenario::Scenario;
use sift_core::FlowConfig;

#[derive(Parser)]
#[command(name = "sift", version, about = "Fairness governance for ML projects")]
struct Cli {
    /// Project database directory.
    #[arg(long, global = true, default_value = "sift-db")]
    db: PathBuf,
    /// Flow configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a new project.
    Init {
        name: String,
        #[arg(long, default_value = "")]
        description: String,
        /// Data location (path or file:// URL).
        #[arg(long)]
        data: String,
        #[arg(long)]
        y: Option<String>,
        /// Feature columns, comma separated.
        #[arg(long, value_delimiter = ',')]
        x: Vec<String>,
        /// Column with outcomes of a deployed model.
        #[arg(long)]
        outcome: Option<String>,
    },
    List,
    Show {
        id: String,
    },
    /// Projects with similar descriptions.
    Similar {
        id: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        min_score: Option<f64>,
    },
    /// Run the next stage of a project.
    Advance {
        id: String,
    },
    Gate {
        #[command(subcommand)]
        command: GateCommand,
    },
    History {
        #[command(subcommand)]
        command: HistoryCommand,
    },
    Simulate {
        #[command(subcommand)]
        command: SimulateCommand,
    },
    /// Delete terminated projects past their retention period.
    Purge {
        /// Reference time (RFC 3339); defaults to now.
        #[arg(long)]
        now: Option<DateTime<Utc>>,
    },
    /// Record `old_id` as an older version of `id`.
    Link {
        id: String,
        old_id: String,
    },
    /// Guide entries relevant to a stage.
    Hog {
        #[arg(long)]
        pipeline: String,
        #[arg(long)]
        stage: String,
    },
    /// Print the stage table.
    Stages,
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

#[derive(Subcommand)]
enum GateCommand {
    Show {
        id: String,
    },
    Decide {
        id: String,
        #[arg(long)]
        decision: String,
        #[arg(long, default_value = "")]
        rationale: String,
        #[arg(long, default_value = "")]
        decider: String,
        /// Selected items (hit ids, sensitive features), comma separated.
        #[arg(long, value_delimiter = ',')]
        select: Vec<String>,
        #[arg(long)]
        data_location: Option<String>,
        #[arg(long)]
        gate_id: Option<String>,
    },
}

#[derive(Subcommand)]
enum HistoryCommand {
    /// Bias history in export format.
    Export {
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Replay one of the marketing projects on generated data.
    Marketing {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenario: Scenario,
        /// Only create the project; leave the gates to a human.
        #[arg(long)]
        no_replay: bool,
        #[arg(long)]
        n_sub: Option<usize>,
        #[arg(long)]
        nonwhite_frac: Option<f64>,
        /// Adult data files; the bundled stand-in if omitted.
        #[arg(long)]
        adult: Vec<PathBuf>,
    },
}

fn print_json<T: Serialize>(v: &T) {
    emit(&serde_json::to_string_pretty(v).expect("serializable"));
}

// a closed pipe (`sift ... | head`) is not an error worth a panic
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(cli: Cli) -> ApiResult<()> {
    let config = match &cli.config {
        Some(path) => FlowConfig::load(path)?,
        None => FlowConfig::default(),
    };
    let mut api = Api::open(&cli.db, config)?;
    match cli.command {
        Command::Init { name, description, data, y, x, outcome } => {
            let p = api.create_project(CreateProject {
                name,
                description,
                data_location: data,
                y,
                x,
                outcome,
                ..CreateProject::default()
            })?;
            emit(&p.project_id);
        }
        Command::List => {
            for p in api.list_projects()? {
                let at = p.open_gate.map(|g| format!("gate {g}")).or(p.next_stage.map(|s| format!("next {s}")));
                emit(&format!("{}\t{}\t{:?}\t{}", p.project_id, p.name, p.status, at.unwrap_or_default()));
            }
        }
        Command::Show { id } => print_json(&api.get_project(&id)?.0),
        Command::Similar { id, k, min_score } => print_json(&api.similar(&id, k, min_score)?),
        Command::Advance { id } => print_json(&api.advance(&id)?.outcome),
        Command::Gate { command: GateCommand::Show { id } } => print_json(&api.gate(&id)?),
        Command::Gate { command: GateCommand::Decide { id, decision, rationale, decider, select, data_location, gate_id } } => {
            let req = DecisionRequest {
                gate_id,
                decision,
                rationale,
                decider,
                selection: select,
                data_location,
                expected_revision: None,
            };
            print_json(&api.decide(&id, req)?.outcome);
        }
        Command::History { command: HistoryCommand::Export { id, out } } => {
            let text = api.bias_history(&id)?;
            match out {
                Some(path) => std::fs::write(&path, text + "\n").map_err(sift_core::Error::from)?,
                None => emit(&text),
            }
        }
        Command::Simulate {
            command: SimulateCommand::Marketing { seed, scenario, no_replay, n_sub, nonwhite_frac, adult },
        } => {
            let out =
                api.simulate(SimulateRequest { seed, scenario, replay: !no_replay, n_sub, nonwhite_frac, adult })?;
            emit(&out.project_id);
        }
        Command::Purge { now } => {
            for id in api.purge(now)? {
                emit(&id);
            }
        }
        Command::Link { id, old_id } => {
            api.link_older_version(&id, &old_id)?;
        }
        Command::Hog { pipeline, stage } => print_json(&api.hog(&pipeline, &stage)?),
        Command::Stages => print_json(&api.stage_table()),
        Command::Serve { port, host } => {
            let addr = SocketAddr::new(host, port);
            let rt = tokio::runtime::Runtime::new().map_err(sift_core::Error::from)?;
            eprintln!("listening on http://{addr}");
            rt.block_on(sift_cli::http::serve(api, addr)).map_err(sift_core::Error::from)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(ApiError { code, message, .. }) => {
            eprintln!("error [{code}]: {message}");
            ExitCode::FAILURE
        }
    }
}
