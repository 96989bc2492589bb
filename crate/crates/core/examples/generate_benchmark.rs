//! Generates the default changing-priors benchmark, prints the train and
//! rank-reversed test answer tables for one question type, and writes the
//! three splits to a directory.
//!
//! cargo run --example generate_benchmark -- [out_dir]

use lpf::synthbench::{generate_benchmark, question_only_ceiling, question_only_trap_accuracy, write_split, BenchmarkConfig};

fn main() -> lpf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "bench-data".into());
    let config = BenchmarkConfig::default();
    let b = generate_benchmark(&config)?;

    let block = config.answer_block(0);
    println!("qtype 0 answers {:?}", block);
    println!("  train  {:?}", fmt(&b.train.prior.rows()[0][block.clone()]));
    println!("  id     {:?}", fmt(&b.id_test.prior.rows()[0][block.clone()]));
    println!("  ood    {:?}", fmt(&b.ood_test.prior.rows()[0][block]));

    println!(
        "question-only ceiling {:.3}, trap accuracy on ood-test {:.3}",
        question_only_ceiling(&b.train.prior),
        question_only_trap_accuracy(&b.train.prior, &b.ood_test.prior)?
    );

    std::fs::create_dir_all(&out).map_err(|e| lpf::Error::io(&out, e))?;
    for split in [&b.train, &b.id_test, &b.ood_test] {
        let path = format!("{out}/{}.split", split.role);
        write_split(split, &path)?;
        println!("{path}: {} samples", split.len());
    }
    Ok(())
}

fn fmt(row: &[f64]) -> Vec<String> {
    row.iter().map(|p| format!("{p:.3}")).collect()
}
