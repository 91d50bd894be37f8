use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use escrow_core::contract::Proposal;
use escrow_core::vault::SymmetricKey;
use escrow_core::{ContractId, DataElementId};
use escrow_server::client::{Client, open_released};
use escrow_server::wire::CallResponse;
use serde::Serialize;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "escrow-client", about = "Command-line client for an escrow server; one subcommand per route")]
struct Cli {
    #[arg(long, env = "ESCROW_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Where `login` stores the bearer token and other commands read it.
    #[arg(long, default_value = ".escrow-token")]
    token_file: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// GET /healthz
    Health,
    /// POST /agents
    Register {
        external_id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, env = "ESCROW_PASSWORD", hide_env_values = true)]
        password: String,
    },
    /// POST /login; writes the token file.
    Login {
        external_id: String,
        #[arg(long, env = "ESCROW_PASSWORD", hide_env_values = true)]
        password: String,
    },
    /// GET /agents
    Agents,
    /// POST /keys with the hex key read from a file.
    SubmitKey { key_file: PathBuf },
    /// POST /data
    RegisterData {
        #[arg(long = "type", default_value = "csv")]
        type_tag: String,
        /// Access parameters as JSON, or @file.
        #[arg(long, default_value = "{}")]
        params: String,
        #[arg(long)]
        hidden: bool,
    },
    /// PUT /data/{id}/content
    Upload { id: u64, file: PathBuf },
    /// GET /data/{id}/content
    Download {
        id: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GET /data/discoverable
    Discoverable,
    /// POST /contracts with a proposal JSON file.
    Propose { file: PathBuf },
    /// GET /contracts
    Contracts,
    /// GET /contracts/pending
    Pending,
    /// GET /contracts/{id}
    Contract { id: u64 },
    /// POST /contracts/{id}/approve
    Approve { id: u64 },
    /// POST /contracts/{id}/deny
    Deny {
        id: u64,
        #[arg(long, default_value = "")]
        reason: String,
    },
    /// POST /contracts/{id}/withdraw
    Withdraw { id: u64 },
    /// GET /functions
    Functions,
    /// POST /functions/{name}/call
    Call {
        name: String,
        /// Arguments as a JSON object, or @file.
        #[arg(long, default_value = "{}")]
        args: String,
        /// Open a released output with this hex key file.
        #[arg(long)]
        key_file: Option<PathBuf>,
        /// Write opened output here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GET /audit
    Audit,
}

type Res<T> = Result<T, String>;

fn print(v: &impl Serialize) -> Res<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| e.to_string())?);
    Ok(())
}

fn read_key(p: &Path) -> Res<SymmetricKey> {
    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    let raw = hex::decode(text.trim()).map_err(|_| "key file must hold hex".to_string())?;
    SymmetricKey::try_from_slice(&raw).ok_or_else(|| "key must be 32 bytes".into())
}

/// Inline JSON, or `@path` to read it from a file.
fn json_arg(s: &str) -> Res<Value> {
    let text = match s.strip_prefix('@') {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{p}: {e}"))?,
        None => s.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| format!("bad JSON in {s:?}: {e}"))
}

fn write_private(p: &Path, contents: &str) -> Res<()> {
    std::fs::write(p, contents).map_err(|e| format!("{}: {e}", p.display()))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(p, std::fs::Permissions::from_mode(0o600)).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Res<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes).map_err(|e| e.to_string())
        }
    }
}

fn run(cli: Cli) -> Res<()> {
    let mut c = Client::new(&cli.server);
    if let Ok(t) = std::fs::read_to_string(&cli.token_file) {
        c = c.with_token(t.trim());
    }
    let e = |e: escrow_server::client::ClientError| e.to_string();
    match cli.cmd {
        Cmd::Health => print(&c.health().map_err(e)?),
        Cmd::Register { external_id, name, password } => print(&c.register(&external_id, name.as_deref(), &password).map_err(e)?),
        Cmd::Login { external_id, password } => {
            let r = c.login(&external_id, &password).map_err(e)?;
            write_private(&cli.token_file, &r.token)?;
            print(&serde_json::json!({ "agent_id": r.agent_id, "expires_at": r.expires_at }))
        }
        Cmd::Agents => print(&c.agents().map_err(e)?),
        Cmd::SubmitKey { key_file } => c.submit_key(&read_key(&key_file)?).map_err(e),
        Cmd::RegisterData { type_tag, params, hidden } => {
            print(&serde_json::json!({ "de_id": c.register_data(&type_tag, json_arg(&params)?, !hidden).map_err(e)? }))
        }
        Cmd::Upload { id, file } => {
            let bytes = std::fs::read(&file).map_err(|err| format!("{}: {err}", file.display()))?;
            c.upload(DataElementId(id), bytes).map_err(e)
        }
        Cmd::Download { id, out } => emit(&c.download(DataElementId(id)).map_err(e)?, out.as_deref()),
        Cmd::Discoverable => print(&c.discoverable().map_err(e)?),
        Cmd::Propose { file } => {
            let text = std::fs::read_to_string(&file).map_err(|err| format!("{}: {err}", file.display()))?;
            let p: Proposal = serde_json::from_str(&text).map_err(|err| format!("bad proposal: {err}"))?;
            print(&c.propose(&p).map_err(e)?)
        }
        Cmd::Contracts => print(&c.contracts().map_err(e)?),
        Cmd::Pending => print(&c.pending().map_err(e)?),
        Cmd::Contract { id } => print(&c.contract(ContractId(id)).map_err(e)?),
        Cmd::Approve { id } => print(&c.approve(ContractId(id)).map_err(e)?),
        Cmd::Deny { id, reason } => print(&c.deny(ContractId(id), &reason).map_err(e)?),
        Cmd::Withdraw { id } => print(&c.withdraw(ContractId(id)).map_err(e)?),
        Cmd::Functions => print(&c.functions().map_err(e)?),
        Cmd::Call { name, args, key_file, out } => {
            let resp = c.call(&name, &json_arg(&args)?).map_err(e)?;
            match (&resp, key_file) {
                (CallResponse::Released { output, sealed, .. }, Some(k)) => {
                    emit(&open_released(&read_key(&k)?, *output, sealed)?, out.as_deref())
                }
                _ => print(&resp),
            }
        }
        Cmd::Audit => print(&c.audit().map_err(e)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("escrow-client: {e}");
            ExitCode::FAILURE
        }
    }
}
