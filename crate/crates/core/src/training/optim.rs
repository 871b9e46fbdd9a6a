use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at `total`.
pub fn lr_at(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    0.5 * peak * (1.0 + (PI * progress).cos())
}

/// Adam with decoupled weight decay over a list of flat parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(sizes: &[usize]) -> Self {
        AdamW {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `names` label parameters in error messages.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        names: &[&str],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::DimMismatch {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() || params[i].len() != g.len() {
                return Err(Error::invalid(format!(
                    "parameter {} has {} values, gradient {}",
                    names.get(i).unwrap_or(&"?"),
                    params[i].len(),
                    g.len()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {}",
                    names.get(i).unwrap_or(&"?")
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.iter_mut().enumerate() {
                let g = grads[i][j];
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + ADAM_EPS);
                *w -= lr * (update + weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_at(0, 1e-5, 200, 1000), 0.0);
        assert!((lr_at(200, 1e-5, 200, 1000) - 1e-5).abs() < 1e-20);
        assert_eq!(lr_at(1000, 1e-5, 200, 1000), 0.0);
        assert!((lr_at(100, 1e-5, 200, 1000) - 0.5e-5).abs() < 1e-20);
        assert!((lr_at(600, 1e-5, 200, 1000) - 0.5e-5).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut opt = AdamW::new(&[3]);
        let mut w = vec![1.0, -2.0, 3.0];
        opt.step(&mut [&mut w], &[&[0.0; 3]], &["w"], 0.1, 0.0)
            .unwrap();
        assert_eq!(w, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let mut opt = AdamW::new(&[2]);
        let mut w = vec![1.0, -4.0];
        opt.step(&mut [&mut w], &[&[0.0; 2]], &["w"], 0.1, 0.01)
            .unwrap();
        assert_eq!(w, vec![1.0 * (1.0 - 0.001), -4.0 * (1.0 - 0.001)]);
    }

    #[test]
    fn quadratic_converges() {
        let mut opt = AdamW::new(&[1]);
        let mut w = vec![1.0];
        for step in 0..500 {
            let g = [2.0 * w[0]];
            let lr = 0.05 * (1.0 - step as f64 / 500.0);
            opt.step(&mut [&mut w], &[&g], &["w"], lr, 0.0).unwrap();
        }
        assert!(w[0].abs() < 1e-3, "{}", w[0]);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut opt = AdamW::new(&[1, 1]);
        let (mut a, mut b) = (vec![0.0], vec![0.0]);
        let err = opt
            .step(
                &mut [&mut a, &mut b],
                &[&[0.0], &[f64::NAN]],
                &["a", "blocks.w"],
                0.1,
                0.0,
            )
            .unwrap_err();
        assert!(err.to_string().contains("blocks.w"), "{err}");
        assert_eq!(opt.steps(), 0);
    }
}
