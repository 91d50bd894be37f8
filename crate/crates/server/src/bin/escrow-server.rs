use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use escrow_core::EscrowConfig;
use escrow_core::runtime::Enforcement;
use escrow_core::vault::{SymmetricKey, SyncMode};
use escrow_server::{PROGRAMS, ServerOptions, load_program, open, router};

#[derive(Parser)]
#[command(name = "escrow-server", about = "Serve one escrow instance over HTTP")]
struct Args {
    /// Escrow data directory; recovered before the listener opens.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Sharing program to load.
    #[arg(long, default_value = "fraud", value_parser = clap::builder::PossibleValuesParser::new(PROGRAMS))]
    program: String,
    /// Hex of the 32-byte escrow key. Never stored in the data directory.
    #[arg(long, env = "ESCROW_SYSTEM_KEY", hide_env_values = true, conflicts_with = "system_key_file")]
    system_key: Option<String>,
    /// File holding the hex escrow key.
    #[arg(long)]
    system_key_file: Option<PathBuf>,
    /// External id allowed to read the audit log; repeatable.
    #[arg(long = "auditor")]
    auditors: Vec<String>,
    /// External id added as a source agent of every contract; repeatable.
    #[arg(long = "mandatory-approver")]
    mandatory_approvers: Vec<String>,
    /// Let execution continue past an illegal read and refuse the release
    /// afterwards, instead of stopping at once.
    #[arg(long)]
    deferred_check: bool,
    /// Skip fsync on each log record.
    #[arg(long)]
    no_fsync: bool,
    #[arg(long, default_value_t = 3600)]
    token_ttl_secs: u64,
    #[arg(long, default_value_t = 1 << 30)]
    max_upload: usize,
}

fn system_key(a: &Args) -> Result<SymmetricKey, String> {
    let text = match (&a.system_key, &a.system_key_file) {
        (Some(k), _) => k.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        (None, None) => return Err("an escrow key is required (--system-key, ESCROW_SYSTEM_KEY or --system-key-file)".into()),
    };
    let raw = hex::decode(text.trim()).map_err(|_| "escrow key must be hex".to_string())?;
    SymmetricKey::try_from_slice(&raw).ok_or_else(|| "escrow key must be 32 bytes".into())
}

fn run(a: Args) -> Result<(), String> {
    let mut config = EscrowConfig::new(&a.data_dir, system_key(&a)?);
    config.auditors = a.auditors.clone();
    config.mandatory_approvers = a.mandatory_approvers.clone();
    config.sync = if a.no_fsync { SyncMode::OsBuffer } else { SyncMode::Fsync };
    config.enforcement = if a.deferred_check { Enforcement::DeferredCheck } else { Enforcement::ShortCircuit };
    let opts = ServerOptions { token_ttl: Duration::from_secs(a.token_ttl_secs), max_upload: a.max_upload };
    let app = open(config, load_program(&a.program)?, &opts).map_err(|e| format!("{}: {e}", a.data_dir.display()))?;
    let r = app.escrow.recovery_report();
    log::info!("recovered {} log records, {} waiting for keys", r.log_records, r.deferred);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.listen).await.map_err(|e| format!("{}: {e}", a.listen))?;
        log::info!("serving {} on {}", a.program, a.listen);
        axum::serve(listener, router(app))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| e.to_string())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("escrow-server: {e}");
            ExitCode::FAILURE
        }
    }
}
