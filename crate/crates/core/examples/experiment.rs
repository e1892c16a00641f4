//! Runs every ranker on a default synthetic world and prints test recall.
//!
//! `cargo run --release -p vqarank-core --example experiment -- [seed]`

use anyhow::{Context, Result};
use vqarank::pipeline::{run_experiment, PipelineConfig};

fn main() -> Result<()> {
    let seed = match std::env::args().nth(1) {
        Some(s) => s.parse().with_context(|| format!("seed must be an integer, got {s:?}"))?,
        None => 0,
    };
    let start = std::time::Instant::now();
    let report = run_experiment(&PipelineConfig {
        seed,
        ..PipelineConfig::default()
    })?;
    println!(
        "held-out head accuracy: image {:.3}, caption {:.3}",
        report.image_head_accuracy, report.caption_head_accuracy
    );
    println!(
        "score fusion weights: alpha {} beta {}",
        report.alpha_beta.alpha, report.alpha_beta.beta
    );
    print!("{}", report.to_tsv());
    println!("{:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
