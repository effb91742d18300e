//! The `radsafe` operator command line. Each subcommand maps to one
//! operation of the core library or the service API; see
//! `docs/radsafe.1.md` for flags, environment variables and exit codes.

pub mod args;
pub mod error;
mod ledger;
mod pki;
mod render;
mod target;
pub mod util;

use std::io::Write;

use radsafe_core::sync::{builtin_scenario, render_transcript, replay, ScenarioFile, BUILTIN_SCENARIOS};
use radsafe_service::Service;
use serde_json::{json, Value};

use args::{CaCommand, CardCommand, CertCommand, Cli, Command, ReplayArgs, ScenarioCommand, ServeArgs, SyncCommand};
use error::{CliError, CliResult};

/// What a command prints: a JSON document for `--json`, text otherwise,
/// or the same raw text in both modes.
pub struct Out {
    pub json: Value,
    pub human: String,
    pub raw: bool,
}

impl Out {
    pub fn new(json: Value, human: String) -> Self {
        Self { json, human, raw: false }
    }

    pub fn raw(text: String) -> Self {
        Self { json: Value::Null, human: text, raw: true }
    }

    pub fn print(&self, json_mode: bool) -> std::io::Result<()> {
        let mut stdout = std::io::stdout().lock();
        if json_mode && !self.raw {
            serde_json::to_writer_pretty(&mut stdout, &self.json)?;
            writeln!(stdout)?;
        } else {
            stdout.write_all(self.human.as_bytes())?;
        }
        stdout.flush()
    }
}

pub async fn run(cli: &Cli) -> CliResult<Out> {
    match &cli.command {
        Command::Serve(a) => serve(a, cli.json).await,
        Command::Card(CardCommand::Personalize(a)) => pki::card_personalize(a),
        Command::Card(CardCommand::Read(a)) => pki::card_read(a),
        Command::Record(a) => ledger::record(a).await,
        Command::Profile(a) => ledger::profile(a).await,
        Command::Whatif(a) => ledger::whatif_cmd(a).await,
        Command::Sync(SyncCommand::Upstream(a)) => ledger::sync_upstream(a).await,
        Command::Sync(SyncCommand::Card(a)) => ledger::sync_card(a).await,
        Command::Report(a) => ledger::report(a).await,
        Command::Scenario(ScenarioCommand::Replay(a)) => scenario_replay(a),
        Command::Scenario(ScenarioCommand::List) => Ok(scenario_list()),
        Command::Ca(CaCommand::Init(a)) => pki::ca_init(a),
        Command::Cert(CertCommand::Issue(a)) => pki::cert_issue(a).await,
        Command::Cert(CertCommand::Revoke(a)) => pki::cert_revoke(a).await,
    }
}

fn scenario_list() -> Out {
    let names: Vec<&str> = BUILTIN_SCENARIOS.iter().map(|(n, _)| *n).collect();
    Out::new(json!(names), names.iter().map(|n| format!("{n}\n")).collect())
}

fn scenario_replay(a: &ReplayArgs) -> CliResult<Out> {
    let file = match (&a.case, &a.file) {
        (Some(name), _) => builtin_scenario(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
            ScenarioFile::from_toml(&text)?
        }
        (None, None) => return Err(CliError::usage("give --case NAME or --file PATH")),
    };
    let (_, reports) = replay(&file)?;
    Ok(Out::new(json!({"name": file.name, "description": file.description, "steps": reports}), render_transcript(&file, &reports)))
}

/// Binds, announces the address on stdout, then serves until SIGINT or
/// SIGTERM.
async fn serve(a: &ServeArgs, json_mode: bool) -> CliResult<Out> {
    radsafe_service::init_logging();
    let config = target::load_config(a.config.as_deref())?;
    let service = Service::start(config).await?;
    let addr = service.local_addr()?;
    let hello = Out::new(json!({"listening": addr.to_string()}), format!("listening on {addr}\n"));
    hello.print(json_mode)?;
    service.run(shutdown_signal()).await?;
    Ok(Out::new(json!({"stopped": true}), String::new()))
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = ctrl_c.await;
}
