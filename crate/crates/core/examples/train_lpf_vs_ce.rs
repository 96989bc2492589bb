//! Trains plain cross-entropy and LPF (γ = 5) on the same benchmark and
//! compares accuracy on the in-distribution and prior-shifted test splits.
//!
//! cargo run --release --example train_lpf_vs_ce -- [seed]

use lpf::harness::{evaluate, train, TrainConfig};
use lpf::model::ModelConfig;
use lpf::objectives::LossVariant;
use lpf::synthbench::{generate_benchmark, BenchmarkConfig};

fn main() -> lpf::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let b = generate_benchmark(&BenchmarkConfig { seed, ..BenchmarkConfig::default() })?;

    println!("{:<14} {:>8} {:>8} {:>10}", "variant", "id", "ood", "ood kl");
    for variant in [LossVariant::Ce, LossVariant::lpf(5.0)?] {
        let config = TrainConfig::seeded(variant, ModelConfig::for_benchmark(&b.config, seed), seed);
        let (model, log) = train(&b.train, &config)?;
        let id = evaluate(&model, &b.id_test, Some(&b.train.prior))?;
        let ood = evaluate(&model, &b.ood_test, Some(&b.train.prior))?;
        println!(
            "{:<14} {:>7.2}% {:>7.2}% {:>10.3}",
            variant.to_string(),
            100.0 * id.overall_accuracy,
            100.0 * ood.overall_accuracy,
            ood.mean_kl_to_split
        );
        if let (Some(first), Some(last)) = (log.epochs.first(), log.epochs.last()) {
            println!("    mean β {:.3} -> {:.3}", first.mean_beta, last.mean_beta);
        }
    }
    Ok(())
}
