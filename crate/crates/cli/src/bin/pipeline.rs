use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

/// Filter teacher trajectory logs into training splits and build offline caches.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Keep the records that pass a criteria preset or file.
    Filter {
        #[arg(long = "in")]
        input: PathBuf,
        /// base, coldstart, fullcov, easy, or a TOML/JSON criteria file
        #[arg(long)]
        criteria: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write image and text caches plus a build report.
    BuildCache {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Filter {
            input,
            criteria,
            out,
            report,
        } => {
            let r = geoagent_cli::filter(&input, &criteria, &out, &report)?;
            println!("kept {} of {}", r.kept_count, r.input_count);
            for (reason, n) in &r.rejection_histogram {
                println!(
                    "  {}: {n}",
                    serde_json::to_value(reason)?.as_str().unwrap_or_default()
                );
            }
        }
        Command::BuildCache { input, out_dir } => {
            let r = geoagent_cli::build_cache(&input, &out_dir)?;
            println!(
                "{} image entries over {} images, {} text entries ({} duplicates merged)",
                r.image_entries, r.images, r.text_entries, r.duplicates_merged
            );
        }
    }
    Ok(())
}
