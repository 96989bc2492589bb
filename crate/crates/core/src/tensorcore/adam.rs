use super::tensor::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update on every parameter, in place.
///
/// Gradients are left untouched; the caller zeroes them.
pub fn adam_step(params: &mut ParamSet, cfg: &AdamConfig) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::invalid("lr", format!("must be positive, got {}", cfg.lr)));
    }
    if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(Error::invalid("beta", "betas must lie in [0, 1)"));
    }
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let grads = p.grad.data();
        let m = p.adam_m.data_mut();
        for (mi, &g) in m.iter_mut().zip(grads) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        }
        let v = p.adam_v.data_mut();
        for (vi, &g) in v.iter_mut().zip(grads) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (p.adam_m.data(), p.adam_v.data());
        for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::Tensor;

    fn scalar_set(value: f64, grad: f64) -> ParamSet {
        let mut set = ParamSet::new();
        let id = set.add("w", Tensor::scalar(value));
        set.get_mut(id).grad = Tensor::scalar(grad);
        set
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut set = scalar_set(0.0, 0.5);
        adam_step(&mut set, &AdamConfig::default()).unwrap();
        let w = set.iter().next().unwrap();
        assert!((w.value.data()[0] + 2.99999994e-4).abs() < 1e-13);
        assert_eq!(w.step_count, 1);
        assert_eq!(w.grad.data()[0], 0.5);
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut set = scalar_set(1.25, 0.0);
        adam_step(&mut set, &AdamConfig::default()).unwrap();
        assert_eq!(set.iter().next().unwrap().value.data()[0], 1.25);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        let (g, lr, b1, b2, eps) = (0.3, 1e-2, 0.9, 0.999, 1e-8);
        let mut set = scalar_set(1.0, g);
        let cfg = AdamConfig { lr, beta1: b1, beta2: b2, eps };
        adam_step(&mut set, &cfg).unwrap();
        adam_step(&mut set, &cfg).unwrap();

        // m1 = 0.03, v1 = 9e-5; m2 = 0.057, v2 = 1.7991e-4
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let w1 = 1.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let w2 = w1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((m2 - 0.057).abs() < 1e-15);
        assert!((v2 - 1.7991e-4).abs() < 1e-15);
        let got = set.iter().next().unwrap().value.data()[0];
        assert!((got - w2).abs() < 1e-15, "{got} vs {w2}");
        // Constant gradient: both steps are ≈ lr in magnitude.
        assert!((got - (1.0 - 2.0 * lr)).abs() < 1e-8);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut set = scalar_set(0.0, 1.0);
        for lr in [0.0, -1e-3, f64::NAN] {
            let cfg = AdamConfig { lr, ..AdamConfig::default() };
            assert!(adam_step(&mut set, &cfg).is_err());
        }
    }
}
