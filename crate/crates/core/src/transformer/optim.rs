use serde::{Deserialize, Serialize};

use super::params::Real;

/// Adam with bias correction and global gradient-norm clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64, clip: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            clip,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn update<R: Real>(&mut self, params: &mut [R], grad: &[R]) -> f64 {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let norm = grad
            .iter()
            .map(|g| {
                let g = g.to_f64().unwrap_or(f64::NAN);
                g * g
            })
            .sum::<f64>()
            .sqrt();
        let clip_scale = if norm > self.clip { self.clip / norm } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (self.lr / bc1) as f32;
        let (inv_bc2, eps) = ((1.0 / bc2) as f32, self.eps as f32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = (g.to_f64().unwrap_or(f64::NAN) * clip_scale) as f32;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let delta = step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            *p = *p - R::lit(delta as f64);
        }
        norm
    }
}
