//! Shows that the two loss terms touch disjoint parameter groups: the
//! reweighted loss never reaches the question-only branch and the
//! question-only loss never reaches the shared encoders or the fusion head.
//! Then finite-difference checks the question-only branch on its own loss.
//!
//! cargo run --example gradient_barrier

use lpf::harness::{Trainer, TrainConfig};
use lpf::model::{ModelConfig, ParamGroup};
use lpf::objectives::{qo_loss, LossVariant};
use lpf::synthbench::{generate_benchmark, BenchmarkConfig};
use lpf::tensorcore::{grad_check_params, Tape, Tensor};

fn main() -> lpf::Result<()> {
    let b = generate_benchmark(&BenchmarkConfig {
        n_train: 512,
        n_test: 64,
        ..BenchmarkConfig::default()
    })?;
    let config = TrainConfig::seeded(LossVariant::lpf(2.0)?, ModelConfig::for_benchmark(&b.config, 1), 1);
    let mut trainer = Trainer::new(&b.train, config)?;
    let order = trainer.epoch_order(0);
    for chunk in order.chunks(64).take(4) {
        trainer.step(chunk)?;
    }

    let batch = &order[256..320];
    let g = trainer.component_gradients(batch)?;
    println!("{:<36} {:>14} {:>14}", "parameter", "|∂L_LPF|", "|∂L_QO|");
    for id in trainer.model.params.ids() {
        let norm = |set: &lpf::tensorcore::ParamSet| set.get(id).grad.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        println!(
            "{:<36} {:>14.3e} {:>14.3e}   {:?}",
            trainer.model.params.get(id).name,
            norm(&g.lpf),
            norm(&g.qo),
            trainer.model.group_of(id)
        );
    }

    // The question-only branch reads a detached question vector, so its own
    // loss is an ordinary function of its weights given that vector.
    let model = trainer.model.clone();
    let samples: Vec<_> = batch[..8].iter().map(|&i| &b.train.samples[i]).collect();
    let tokens: Vec<Vec<usize>> = samples.iter().map(|s| s.question_tokens.clone()).collect();
    let features: Vec<f64> = samples.iter().flat_map(|s| s.visual_feature.iter().copied()).collect();
    let features = Tensor::new(vec![samples.len(), b.config.v_in_dim], features)?;
    let targets: Vec<usize> = samples.iter().map(|s| s.answer_id).collect();
    let mut tape = Tape::new();
    let q = model.forward(&mut tape, &tokens, features)?.q;
    let q = tape.value(q).clone();

    let ids = model.ids_in(ParamGroup::QuestionOnly);
    let mut params = model.params.clone();
    let report = grad_check_params(&mut params, &ids, 1e-6, |p, tape| {
        let input = tape.input(q.clone());
        let logits = model.layout.predict_qo(p, tape, input)?;
        qo_loss(tape, logits, &targets)
    })?;
    println!(
        "question-only gradcheck: {} entries, max relative error {:.2e}",
        report.entries_checked, report.max_rel_error
    );
    Ok(())
}
