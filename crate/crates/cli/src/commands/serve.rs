use std::io::Write;

use super::Ctx;
use crate::error::{CliError, CliResult};

/// Writes the run manifest at startup, prints the bound address and serves
/// until interrupted.
pub fn serve(mut ctx: Ctx<'_>, listen: Option<String>) -> CliResult<()> {
    let mut config = ctx.settings.service.clone();
    if let Some(l) = listen {
        config.listen = l;
    }
    if let Some(dir) = config.store_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = sensor_service::bind(&config.listen)
            .await
            .map_err(|e| CliError::usage(e.to_string()))?;
        let addr = listener.local_addr()?;
        ctx.manifest
            .output("store", &config.store_path)
            .fact("listen", addr)
            .fact("model", config.model_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        let store = config.store_path.clone();
        ctx.finish(&store)?;
        let mut stdout = std::io::stdout();
        writeln!(stdout, "listening on http://{addr}")?;
        stdout.flush()?;
        sensor_service::serve_on(listener, config, std::future::pending())
            .await
            .map_err(CliError::runtime)
    })
}
