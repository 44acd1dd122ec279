//! Trains the estimator on the planted-path benchmark and compares its top-1
//! pick on held-out questions with plain embedding similarity.
//!
//! cargo run --release --example planted_recovery [-- epochs lr dim]

use pathmil::embedding::HashingEmbedder;
use pathmil::estimator::EstimatorConfig;
use pathmil::supervision::NegativeSamplingConfig;
use pathmil::synthetic::{planted_benchmark, planted_recovery, PlantedConfig};

fn main() -> anyhow::Result<()> {
    let arg = |i: usize, default: f64| std::env::args().nth(i).map_or(Ok(default), |s| s.parse::<f64>());
    let epochs = arg(1, 120.0)? as usize;
    let learning_rate = arg(2, 1e-3)?;
    let model_dim = arg(3, 32.0)? as usize;
    let bench = planted_benchmark(&PlantedConfig::default());
    let config = EstimatorConfig {
        model_dim,
        layers: 1,
        heads: 2,
        ffn_factor: 2,
        max_positions: 4,
        learning_rate,
        epochs,
        ..Default::default()
    };
    let provider = HashingEmbedder::new(256)?;
    let start = std::time::Instant::now();
    let (_, report) = planted_recovery(&bench, 150, &config, &NegativeSamplingConfig::default(), &provider)?;
    println!(
        "{} held-out questions: estimator {:.1}%, similarity {:.1}% ({:.1}s)",
        report.held_out,
        100.0 * report.estimator,
        100.0 * report.similarity,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
