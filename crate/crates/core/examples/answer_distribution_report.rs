//! Trains one model per loss variant on a small benchmark and prints, for the
//! first question type, the predicted answer distribution next to the
//! training prior and the shifted test distribution. `other` is mass on
//! answers that belong to a different question type.
//!
//! cargo run --release --example answer_distribution_report

use lpf::harness::{evaluate, train, TrainConfig};
use lpf::model::ModelConfig;
use lpf::objectives::LossVariant;
use lpf::synthbench::{generate_benchmark, BenchmarkConfig};

fn main() -> lpf::Result<()> {
    let b = generate_benchmark(&BenchmarkConfig {
        num_qtypes: 4,
        n_train: 4000,
        n_test: 2000,
        ..BenchmarkConfig::default()
    })?;
    let block = b.config.answer_block(0);
    let show = |name: &str, row: &[f64]| {
        let cells: Vec<String> = row[block.clone()].iter().map(|p| format!("{p:5.2}")).collect();
        let other = 1.0 - row[block.clone()].iter().sum::<f64>();
        println!("{name:<16} {}  | other {other:5.2}", cells.join(" "));
    };
    show("train prior", &b.train.prior.rows()[0]);
    show("ood-test", &b.ood_test.prior.rows()[0]);

    for variant in [LossVariant::Ce, LossVariant::Focal, LossVariant::Precomputed, LossVariant::lpf(5.0)?] {
        let config = TrainConfig::seeded(variant, ModelConfig::for_benchmark(&b.config, 3), 3);
        let (model, _) = train(&b.train, &config)?;
        let report = evaluate(&model, &b.ood_test, Some(&b.train.prior))?;
        let q0 = &report.per_qtype[0];
        show(&variant.to_string(), &q0.predicted);
        println!(
            "{:<16} accuracy {:.3}, KL to ood-test {:.3}, KL to train {:.3}",
            "",
            q0.accuracy,
            q0.kl_to_split,
            q0.kl_to_train.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
