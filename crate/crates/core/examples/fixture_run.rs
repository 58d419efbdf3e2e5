//! Runs every stage over a config file and prints the run report.

use std::path::PathBuf;

use designer_core::pipeline::{Pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "fixtures/pipeline.toml".into());
    let config = PipelineConfig::load(&path)?;
    let report = Pipeline::new(config)?.run_all()?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
