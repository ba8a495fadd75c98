//! Writes a synthetic scene and pipeline config into a directory.
//!
//! cargo run --release -p splatslide-cli --example smoke -- <dir> [--column]
//! cargo run --release -p splatslide-cli -- --config <dir>/pipeline.json run

use std::path::PathBuf;

use splatslide_cli::scenario::{column, slope_smoke, write_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: smoke <dir> [--column]")?);
    std::fs::create_dir_all(&dir)?;
    let config = match args.next().as_deref() {
        Some("--column") => column(&dir, 1300)?,
        _ => slope_smoke(&dir)?,
    };
    let path = dir.join("pipeline.json");
    write_config(&config, &path)?;
    println!("{}", path.display());
    Ok(())
}
