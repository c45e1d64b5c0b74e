use std::net::TcpListener;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Parser;

/// Serve geo-localization episodes over line-delimited JSON on TCP.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// TOML or JSON service configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's listen address.
    #[arg(long)]
    listen: Option<String>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (env, configured) = geoagent_cli::load_service(&cli.config)?;
    let addr = cli
        .listen
        .or(configured)
        .unwrap_or_else(|| geoagent_cli::DEFAULT_LISTEN.to_string());
    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
    let server = geoagent_core::env::server::spawn(listener, env, Duration::from_secs(30))?;
    // tests and scripts read the bound address from this line
    println!("listening on {}", server.local_addr());
    server.join();
    Ok(())
}
