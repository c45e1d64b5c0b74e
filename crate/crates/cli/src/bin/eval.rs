use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use geoagent_core::eval::{render_report, ReportFormat};

/// Accuracy at distance thresholds, coverage and tool usage.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score existing trajectory logs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Repeat to compare several logs in one report.
        #[arg(long, required = true)]
        log: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "json", value_parser = ["json", "csv", "table"])]
        format: String,
    },
    /// Drive a running environment server with a policy.
    Live {
        #[arg(long)]
        manifest: PathBuf,
        /// tcp://host:port
        #[arg(long)]
        endpoint: String,
        /// replay:LOG
        #[arg(long)]
        policy: String,
        /// Comma-separated subset of img,txt,zoom. Server defaults if omitted.
        #[arg(long)]
        tools: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Replay {
            manifest,
            log,
            out,
            format,
        } => {
            let reports = geoagent_cli::replay(&manifest, &log, &out, format.parse()?)?;
            print!("{}", render_report(&reports, ReportFormat::Table));
        }
        Command::Live {
            manifest,
            endpoint,
            policy,
            tools,
            out_dir,
            parallelism,
        } => {
            let report = geoagent_cli::live(&geoagent_cli::LiveArgs {
                manifest: &manifest,
                endpoint: &endpoint,
                policy: &policy,
                tools: tools.as_deref(),
                out_dir: &out_dir,
                parallelism,
            })?;
            print!(
                "{}",
                render_report(&[("live".into(), report)], ReportFormat::Table)
            );
        }
    }
    Ok(())
}
