use std::sync::Arc;

use touchguard_authd::{config, router, Service, ServiceConfig};

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run().await {
        log::error!("{e}");
        std::process::exit(1);
    }
}

async fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ServiceConfig::from_env()?;
    let bind = config::bind_address();
    log::info!("model directory {}", cfg.model_dir.display());
    let app = router(Arc::new(Service::new(cfg)?));
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    touchguard_authd::http::serve(listener, app).await?;
    Ok(())
}
