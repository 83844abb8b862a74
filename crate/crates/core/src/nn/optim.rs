use std::ops::Range;

/// AdamW with bias correction and decoupled weight decay.
///
/// Only coordinates inside the `trainable` ranges passed to [`AdamW::step`]
/// are touched; frozen coordinates keep their exact bits.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(len: usize, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, trainable: &[Range<usize>]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        assert_eq!(grads.len(), params.len(), "gradient does not match parameters");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for range in trainable {
            for i in range.clone() {
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut opt = AdamW::new(3, (0.9, 0.999), 1e-8, 0.0);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3], 0.1, &[0..3]);
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let mut opt = AdamW::new(2, (0.9, 0.999), 1e-8, 0.5);
        let mut p = vec![2.0, -4.0];
        let lr = 0.1;
        for _ in 0..3 {
            opt.step(&mut p, &[0.0; 2], lr, &[0..2]);
        }
        let f = (1.0f64 - lr * 0.5).powi(3);
        assert!((p[0] - 2.0 * f).abs() < 1e-15);
        assert!((p[1] + 4.0 * f).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut opt = AdamW::new(1, (0.9, 0.999), 1e-8, 0.0);
        let mut p = vec![0.0];
        let lr = 1e-3;
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p[0];
            opt.step(&mut p, &[3.7], lr, &[0..1]);
            last = before - p[0];
        }
        // bias-corrected moments give m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        assert!((last - lr * 3.7 / (3.7 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn frozen_coordinates_untouched() {
        let mut opt = AdamW::new(4, (0.9, 0.999), 1e-8, 0.1);
        let mut p = vec![1.0, 1.0, 1.0, 1.0];
        opt.step(&mut p, &[1.0; 4], 0.1, &[1..3]);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[3], 1.0);
        assert!(p[1] < 1.0 && p[2] < 1.0);
    }
}
