//! Deterministic DDIM (eta = 0) scheduler.

use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct DdimScheduler {
    alphas_cumprod: Vec<f64>,
    timesteps: Vec<usize>,
    step_ratio: usize,
}

impl DdimScheduler {
    /// Scaled-linear betas over `train_steps`, sampled at `inference_steps`
    /// evenly spaced timesteps (descending).
    pub fn new(inference_steps: usize, train_steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let (s, e) = (beta_start.sqrt(), beta_end.sqrt());
        let denom = (train_steps.max(2) - 1) as f64;
        let mut prod = 1.0;
        let alphas_cumprod = (0..train_steps)
            .map(|i| {
                let beta = (s + (e - s) * i as f64 / denom).powi(2);
                prod *= 1.0 - beta;
                prod
            })
            .collect();
        let step_ratio = train_steps / inference_steps.max(1);
        let timesteps = (0..inference_steps).map(|i| i * step_ratio).rev().collect();
        Self {
            alphas_cumprod,
            timesteps,
            step_ratio,
        }
    }

    pub fn for_steps(inference_steps: usize) -> Self {
        Self::new(inference_steps, 1000, 0.00085, 0.012)
    }

    /// Timesteps in execution order.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// One DDIM update from `timestep` given the noise prediction.
    pub fn step(&self, noise_pred: &Array2<f32>, timestep: usize, sample: &Array2<f32>) -> Array2<f32> {
        let alpha = self.alphas_cumprod[timestep];
        let alpha_prev = timestep
            .checked_sub(self.step_ratio)
            .map_or(1.0, |t| self.alphas_cumprod[t]);
        let (sa, sb) = (alpha.sqrt() as f32, (1.0 - alpha).sqrt() as f32);
        let (pa, pb) = (alpha_prev.sqrt() as f32, (1.0 - alpha_prev).sqrt() as f32);
        let mut out = sample.clone();
        ndarray::Zip::from(&mut out).and(noise_pred).for_each(|x, &eps| {
            let x0 = (*x - sb * eps) / sa;
            *x = pa * x0 + pb * eps;
        });
        out
    }
}
