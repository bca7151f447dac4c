use std::net::SocketAddr;

use calidesign_api::{router, ServiceConfig};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(
    name = "calidesign-api",
    version,
    about = "HTTP service for calibration sub-study design"
)]
struct Args {
    #[arg(long, env = "CALIDESIGN_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Computations run at once; defaults to the number of CPUs.
    #[arg(long, env = "CALIDESIGN_WORKERS")]
    workers: Option<usize>,
    /// Allowed cross-origin origin; repeat for several. Any origin when unset.
    #[arg(
        long = "cors-origin",
        env = "CALIDESIGN_CORS_ORIGINS",
        value_delimiter = ','
    )]
    cors_origins: Vec<String>,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let mut config = ServiceConfig {
        cors_origins: args.cors_origins,
        ..ServiceConfig::default()
    };
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    tracing::info!(
        "listening on {} with {} workers",
        listener.local_addr()?,
        config.workers
    );
    axum::serve(listener, router(&config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
