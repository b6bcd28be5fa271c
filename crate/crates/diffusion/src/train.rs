//! Training loop: ε-MSE with conditioning dropout, optimized with Adam.
//! An exponential moving average of the weights is kept for sampling.
//!
//! Each optimizer step draws its batch from a generator seeded by
//! `(seed, step)`, so a run resumed from a checkpoint replays exactly the
//! batches an uninterrupted run would have seen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::{AdamState, Checkpoint};
use crate::data::TrainExample;
use crate::error::{Error, Result};
use crate::model::{Arch, Denoiser, Init};
use crate::schedule::Schedule;

pub const DEFAULT_P_DROP: f64 = 0.05;
pub const DEFAULT_LR: f64 = 2e-4;
pub const DEFAULT_EMA_DECAY: f64 = 0.999;
pub const DEFAULT_ANNEAL: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub p_drop: f64,
    pub seed: u64,
    /// Weight-average decay; 0 keeps the average equal to the raw weights.
    pub ema_decay: f64,
    /// Final fraction of `steps` trained at a tenth of `lr`.
    pub anneal: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            batch: 2,
            steps: 20_000,
            p_drop: DEFAULT_P_DROP,
            seed: 0,
            ema_decay: DEFAULT_EMA_DECAY,
            anneal: DEFAULT_ANNEAL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_drop) && self.p_drop != 1.0 {
            return Err(Error::Config(format!("p_drop {} outside [0, 1]", self.p_drop)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay {} outside [0, 1)", self.ema_decay)));
        }
        if !(0.0..=1.0).contains(&self.anneal) {
            return Err(Error::Config(format!("anneal {} outside [0, 1]", self.anneal)));
        }
        if self.batch == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("batch must be positive and lr a positive number".into()));
        }
        Ok(())
    }

    /// Learning rate for the update that completes step `step + 1`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let from = self.steps as f64 * (1.0 - self.anneal);
        if (step as f64) < from {
            self.lr
        } else {
            self.lr * 0.1
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self::with_state(AdamState {
            step: 0,
            weights: Vec::new(),
            m: vec![0.0; n],
            v: vec![0.0; n],
        })
    }

    fn with_state(state: AdamState) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state,
        }
    }

    pub fn update(&mut self, p: &mut [f32], g: &[f32], lr: f64) {
        let s = &mut self.state;
        s.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(s.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(s.step.min(i32::MAX as u64) as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for i in 0..p.len() {
            s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
            s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= step * s.m[i] / (s.v[i].sqrt() + eps);
        }
    }
}

pub struct Trainer {
    pub model: Denoiser,
    pub params: Vec<f32>,
    /// Moving average of `params`.
    pub ema: Vec<f32>,
    pub adam: Adam,
    pub schedule: Schedule,
    last_finite: Option<f64>,
}

impl Trainer {
    pub fn new(arch: Arch, t_max: usize, init_seed: u64) -> Result<Self> {
        let model = Denoiser::new(arch)?;
        let params = model.init(init_seed, Init::Training);
        let adam = Adam::new(params.len());
        Ok(Self {
            model,
            ema: params.clone(),
            params,
            adam,
            schedule: Schedule::cosine(t_max)?,
            last_finite: None,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let model = Denoiser::new(ck.arch)?;
        let n = model.num_params();
        let (params, adam) = match ck.optimizer {
            Some(mut state) => (std::mem::take(&mut state.weights), Adam::with_state(state)),
            None => (ck.params.clone(), Adam::new(n)),
        };
        Ok(Self {
            model,
            params,
            ema: ck.params,
            adam,
            schedule: Schedule::cosine(ck.t_max)?,
            last_finite: None,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.state.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            arch: self.model.arch,
            t_max: self.schedule.t_max,
            params: self.ema.clone(),
            optimizer: Some(AdamState {
                weights: self.params.clone(),
                ..self.adam.state.clone()
            }),
        }
    }

    /// One optimizer step; returns the batch-mean loss.
    pub fn step(&mut self, data: &[TrainExample], cfg: &TrainConfig) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let step = self.adam.state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step);
        let n = self.model.image_len();
        let null = vec![0f32; n];
        let mut grad = vec![0f32; self.params.len()];
        let weight = 1.0 / cfg.batch as f32;
        let mut total = 0.0;
        let mut last_t = 0;
        for _ in 0..cfg.batch {
            let ex = &data[rng.random_range(0..data.len())];
            let t = rng.random_range(1..=self.schedule.t_max);
            last_t = t;
            let noise: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let dropped = rng.random::<f64>() < cfg.p_drop;
            if ex.target.len() != n || ex.conds.len() != self.model.arch.role.n_cond() {
                return Err(Error::Shape("training example does not match the model".into()));
            }
            let mut conds: Vec<&[f32]> = ex.conds.iter().map(|c| c.as_slice()).collect();
            if dropped {
                // Guidance only ever removes the source, so dropout nulls the
                // source and keeps any geometry condition.
                conds[0] = &null;
            }
            let x_t = self.schedule.q_sample(&ex.target, t, &noise)?;
            let input = self.model.assemble(&x_t, &conds)?;
            let (skip, out) = self.schedule.skip_out(t);
            let v: Vec<f32> = ex.target.iter().zip(&noise).map(|(&x, &e)| out * e - skip * x).collect();
            // ‖ε̂ - ε‖² = out² ‖F - v‖²
            let loss = self.model.loss_and_grad(&self.params, &input, t as f64, &v, weight * out * out, &mut grad);
            total += (loss * out * out) as f64;
        }
        let loss = total / cfg.batch as f64;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step,
                loss,
                last_finite: self.last_finite,
                t: last_t,
            });
        }
        self.last_finite = Some(loss);
        self.adam.update(&mut self.params, &grad, cfg.lr_at(step));
        let s = self.adam.state.step as f64;
        let d = cfg.ema_decay.min((1.0 + s) / (10.0 + s)) as f32;
        for (e, &p) in self.ema.iter_mut().zip(&self.params) {
            *e = d * *e + (1.0 - d) * p;
        }
        Ok(loss)
    }

    /// Steps until the optimizer has taken `cfg.steps` steps in total.
    pub fn run(&mut self, data: &[TrainExample], cfg: &TrainConfig, on_step: impl FnMut(u64, f64)) -> Result<Vec<(u64, f64)>> {
        self.run_until(data, cfg, cfg.steps, on_step)
    }

    /// Like `run`, but stops after `until` steps in total (capped at `cfg.steps`).
    pub fn run_until(
        &mut self,
        data: &[TrainExample],
        cfg: &TrainConfig,
        until: u64,
        mut on_step: impl FnMut(u64, f64),
    ) -> Result<Vec<(u64, f64)>> {
        cfg.validate()?;
        let mut curve = Vec::new();
        while self.adam.state.step < until.min(cfg.steps) {
            let loss = self.step(data, cfg)?;
            let s = self.adam.state.step;
            on_step(s, loss);
            curve.push((s, loss));
        }
        Ok(curve)
    }
}

pub fn loss_curve_csv(curve: &[(u64, f64)]) -> String {
    let mut s = String::from("step,loss\n");
    for (step, loss) in curve {
        s.push_str(&format!("{step},{loss}\n"));
    }
    s
}

/// Centered moving average with the given window (shorter at the ends).
pub fn moving_average(curve: &[(u64, f64)], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..curve.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(curve.len());
            curve[lo..hi].iter().map(|c| c.1).sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}
