//! Sweeps the focusing exponent γ and writes the results as CSV.
//!
//! cargo run --release --example gamma_sweep -- [out.csv]

use lpf::harness::{emit_report, sweep_gamma, sweep_records, ReportFormat, SplitSet, TrainConfig};
use lpf::model::ModelConfig;
use lpf::objectives::LossVariant;
use lpf::synthbench::{generate_benchmark, BenchmarkConfig};

fn main() -> lpf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "gamma_sweep.csv".into());
    let b = generate_benchmark(&BenchmarkConfig::default())?;
    let base = TrainConfig::seeded(LossVariant::Ce, ModelConfig::for_benchmark(&b.config, 0), 0);
    let splits = SplitSet {
        train: &b.train,
        id_test: &b.id_test,
        ood_test: &b.ood_test,
    };

    let rows = sweep_gamma(&[0.0, 1.0, 2.0, 3.0, 5.0], &base, splits)?;
    println!("gamma      id     ood");
    for row in &rows {
        println!("{:>5} {:>7.3} {:>7.3}", row.gamma, row.id.overall_accuracy, row.ood.overall_accuracy);
    }
    emit_report(&sweep_records(&rows, base.seed), &out, ReportFormat::Csv)?;
    println!("wrote {out}");
    Ok(())
}
