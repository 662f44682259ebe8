use std::io::Write;

use chrono::Utc;
use serde_json::json;
use tokio::net::TcpListener;
use tracing::info;

use cotloop_core::model::QaDataset;
use cotloop_service::store::Release;
use cotloop_service::{AppState, Secrets};

use crate::config::CliConfig;
use crate::error::CliError;
use crate::{Output, ServeArgs};

/// Serves until Ctrl-C. The listening line goes to stdout first so
/// callers binding port 0 can learn the address.
pub fn run(cfg: &CliConfig, args: &ServeArgs, json_out: bool) -> Result<Output, CliError> {
    let mut config = cfg.service.clone();
    if config.hardcase_queue.is_none() {
        config.hardcase_queue = Some(cfg.queue_path());
    }
    let secrets = Secrets::from_env(&config);
    let state = AppState::new(config.clone(), secrets).map_err(|e| CliError::Other(e.to_string()))?;
    let mut released = None;
    if let Some(path) = &args.release {
        let ds = QaDataset::load(path)?;
        let r = state
            .0
            .store
            .release(&ds, args.supersedes.as_deref(), Utc::now())
            .map_err(|e| CliError::Other(e.to_string()))?;
        info!(version = %ds.version, created = matches!(r, Release::Created(_)), "released");
        released = Some(ds.version);
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    runtime.block_on(async {
        let listener = TcpListener::bind(&config.bind).await.map_err(|e| CliError::Config(format!("bind {}: {e}", config.bind)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Other(e.to_string()))?;
        let line = if json_out {
            json!({"listening": addr.to_string(), "released": released}).to_string()
        } else {
            format!("listening on http://{addr}")
        };
        let mut stdout = std::io::stdout();
        let _ = writeln!(stdout, "{line}");
        let _ = stdout.flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        cotloop_service::serve(listener, state, shutdown).await.map_err(|e| CliError::Other(e.to_string()))?;
        Ok::<_, CliError>(())
    })?;
    Ok(Output { text: "stopped\n".into(), json: json!({"stopped": true}) })
}
