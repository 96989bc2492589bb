//! A two-layer classifier written directly against the tape: forward,
//! backward, a stop-gradient, and a few Adam steps.
//!
//! cargo run --example autograd_basics

use lpf::tensorcore::{adam_step, AdamConfig, ParamSet, Tape, Tensor};

fn main() -> lpf::Result<()> {
    let mut params = ParamSet::new();
    let w1 = params.add("w1", Tensor::from_rows(&[vec![0.5, -0.3, 0.2], vec![0.8, -0.6, 0.1]])?);
    let w2 = params.add("w2", Tensor::from_rows(&[vec![0.7, -0.4], vec![0.3, -0.2], vec![0.5, 0.9]])?);
    let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![-1.0, 0.5]])?;
    let targets = [0, 1, 1, 0];
    let adam = AdamConfig { lr: 0.05, ..AdamConfig::default() };

    for step in 0..=40 {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let (v1, v2) = (tape.param(&params, w1), tape.param(&params, w2));
        let hidden = tape.linear(input, v1, None)?;
        let hidden = tape.relu(hidden);
        let logits = tape.linear(hidden, v2, None)?;
        let loss = tape.weighted_ce(logits, &targets, &[1.0; 4])?;
        params.zero_grad();
        tape.backward(loss, &mut params)?;
        if step % 10 == 0 {
            println!("step {step:>2}  loss {:.5}", tape.value(loss).data()[0]);
        }
        adam_step(&mut params, &adam)?;
    }

    // Gradients stop at a detached node: only w2 receives one here.
    let mut tape = Tape::new();
    let input = tape.input(x);
    let (v1, v2) = (tape.param(&params, w1), tape.param(&params, w2));
    let hidden = tape.linear(input, v1, None)?;
    let frozen = tape.detach(hidden);
    let logits = tape.linear(frozen, v2, None)?;
    let loss = tape.weighted_ce(logits, &targets, &[1.0; 4])?;
    params.zero_grad();
    tape.backward(loss, &mut params)?;
    for p in params.iter() {
        println!("{}: grad norm {:.4}", p.name, p.grad.data().iter().map(|g| g * g).sum::<f64>().sqrt());
    }
    Ok(())
}
