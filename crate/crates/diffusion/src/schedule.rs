//! Cosine noise schedule and the forward process.

use crate::error::{Error, Result};

pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;
pub const DEFAULT_T_MAX: usize = 256;

/// `alpha_bar[t]` for `t = 0..=t_max`; step 0 is the clean image.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub t_max: usize,
    pub alpha_bar: Vec<f64>,
    pub betas: Vec<f64>,
}

fn cosine_f(t: f64, t_max: f64) -> f64 {
    let a = (t / t_max + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
    a.cos().powi(2)
}

impl Schedule {
    pub fn cosine(t_max: usize) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::Config(format!("t_max must be at least 2, got {t_max}")));
        }
        let tm = t_max as f64;
        let f0 = cosine_f(0.0, tm);
        let mut betas = vec![0.0; t_max + 1];
        let mut alpha_bar = vec![1.0; t_max + 1];
        for t in 1..=t_max {
            let ratio = cosine_f(t as f64, tm) / cosine_f((t - 1) as f64, tm);
            betas[t] = (1.0 - ratio).min(MAX_BETA);
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - betas[t]);
        }
        debug_assert!((cosine_f(0.0, tm) / f0 - 1.0).abs() < 1e-15);
        Ok(Self { t_max, alpha_bar, betas })
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t > self.t_max {
            Err(Error::TimestepOutOfRange { t, t_max: self.t_max })
        } else {
            Ok(())
        }
    }

    /// `sqrt(alpha_bar_t) · x0 + sqrt(1 - alpha_bar_t) · noise`.
    pub fn q_sample(&self, x0: &[f32], t: usize, noise: &[f32]) -> Result<Vec<f32>> {
        self.check(t)?;
        if x0.len() != noise.len() {
            return Err(Error::Shape(format!("x0 has {} values, noise {}", x0.len(), noise.len())));
        }
        let a = self.alpha_bar[t].sqrt() as f32;
        let s = (1.0 - self.alpha_bar[t]).sqrt() as f32;
        Ok(x0.iter().zip(noise).map(|(&x, &n)| a * x + s * n).collect())
    }

    /// `(sqrt(1 - alpha_bar_t), sqrt(alpha_bar_t))`: the noise estimate is
    /// `skip · x_t + out · F` for raw network output `F`, whose regression
    /// target is then `v = out · ε - skip · x0`.
    pub fn skip_out(&self, t: usize) -> (f32, f32) {
        let ab = self.alpha_bar[t.min(self.t_max)];
        ((1.0 - ab).sqrt() as f32, ab.sqrt() as f32)
    }

    pub fn eps_from_output(&self, x_t: &[f32], out: &[f32], t: usize) -> Vec<f32> {
        let (s, a) = self.skip_out(t);
        x_t.iter().zip(out).map(|(&x, &f)| s * x + a * f).collect()
    }

    /// Evenly spaced timesteps in `1..=t_max`, ascending, always including both ends.
    pub fn respaced(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.t_max {
            return Err(Error::Config(format!("sampler steps must be in 1..={}, got {steps}", self.t_max)));
        }
        if steps == 1 {
            return Ok(vec![self.t_max]);
        }
        let mut ts: Vec<usize> = (0..steps)
            .map(|i| 1 + ((self.t_max - 1) as f64 * i as f64 / (steps - 1) as f64).round() as usize)
            .collect();
        ts.dedup();
        Ok(ts)
    }
}
