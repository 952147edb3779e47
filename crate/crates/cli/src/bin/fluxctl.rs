use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fluxvm_cli::{sites_table, EXIT_UNREACHABLE};
use fluxvm_mgmt::{Client, ClientError};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "fluxctl", version, about = "Inspect and patch a running fluxvm")]
struct Cli {
    /// Management service address.
    #[arg(long, env = "FLUXVM_URL", default_value = "http://127.0.0.1:7070")]
    url: String,
    /// Print raw JSON results.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List bound call sites.
    Sites,
    /// Show registry counters.
    Metrics,
    /// Rebind every site of `old` to `new`.
    Retarget {
        /// static, virtual, special or interface.
        kind: String,
        old: String,
        new: String,
    },
    /// Stack a before advice (`Class.method`, taking and returning A).
    Before { key: String, class: String, method: String },
    /// Stack an after advice (taking and returning O).
    After { key: String, class: String, method: String },
    /// Remove all advices from a key's sites.
    Clear { key: String },
}

fn count(v: &Value, field: &str) -> String {
    format!("{field}: {}", v[field])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = Client::new(&cli.url);
    let result = match &cli.command {
        Command::Sites => c.sites(),
        Command::Metrics => c.metrics(),
        Command::Retarget { kind, old, new } => c.change_call_site_target(kind, old, new),
        Command::Before { key, class, method } => c.apply_before_aspect(key, class, method),
        Command::After { key, class, method } => c.apply_after_aspect(key, class, method),
        Command::Clear { key } => c.remove_aspects(key),
    };
    match result {
        Ok(v) => {
            if cli.json {
                println!("{v}");
            } else {
                match &cli.command {
                    Command::Sites => print!("{}", sites_table(&v)),
                    Command::Metrics => {
                        for (k, n) in v.as_object().into_iter().flatten() {
                            println!("{k}: {n}");
                        }
                    }
                    Command::Retarget { .. } => println!("{}", count(&v, "retargeted")),
                    Command::Before { .. } | Command::After { .. } => println!("{}", count(&v, "adviced")),
                    Command::Clear { .. } => println!("{}", count(&v, "cleared")),
                }
            }
            ExitCode::SUCCESS
        }
        Err(e @ ClientError::Connect { .. }) => {
            eprintln!("fluxctl: {e}");
            ExitCode::from(EXIT_UNREACHABLE as u8)
        }
        Err(e) => {
            eprintln!("fluxctl: {e}");
            ExitCode::FAILURE
        }
    }
}
