//! Ancestral sampling with classifier-free guidance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use unpic_core::image::{Image, Pointmap};
use unpic_core::tiling::{self, SuperImage};

use crate::checkpoint::Checkpoint;
use crate::data::{decode_target, encode_condition, snap_foreground};
use crate::error::{Error, Result};
use crate::model::{Denoiser, Role};
use crate::schedule::Schedule;

pub const DEFAULT_GUIDANCE: f64 = 2.0;
pub const DEFAULT_SAMPLER_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Guidance weight `w`; 1 is plain conditional sampling.
    pub guidance: f64,
    /// Number of respaced denoising steps (at most `t_max`).
    pub steps: usize,
    pub seed: u64,
    /// Clip x0 estimates to the data range.
    pub clip: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            guidance: DEFAULT_GUIDANCE,
            steps: DEFAULT_SAMPLER_STEPS,
            seed: 0,
            clip: true,
        }
    }
}

/// A denoiser with its parameters and noise schedule.
#[derive(Debug, Clone)]
pub struct Network {
    pub model: Denoiser,
    pub params: Vec<f32>,
    pub schedule: Schedule,
}

impl Network {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            model: Denoiser::new(ck.arch)?,
            params: ck.params.clone(),
            schedule: Schedule::cosine(ck.t_max)?,
        })
    }

    pub fn role(&self) -> Role {
        self.model.arch.role
    }

    pub fn predict(&self, x_t: &[f32], conds: &[&[f32]], t: usize) -> Result<Vec<f32>> {
        let input = self.model.assemble(x_t, conds)?;
        let out = self.model.predict(&self.params, &input, t as f64);
        Ok(self.schedule.eps_from_output(x_t, &out, t))
    }

    /// Guided noise estimate. The unconditional branch nulls only the source
    /// (condition 0); any geometry condition is kept.
    pub fn guided_eps(&self, x_t: &[f32], conds: &[&[f32]], t: usize, w: f64) -> Result<Vec<f32>> {
        if w == 1.0 {
            return self.predict(x_t, conds, t);
        }
        let null = vec![0f32; x_t.len()];
        let mut unc: Vec<&[f32]> = conds.to_vec();
        if let Some(first) = unc.first_mut() {
            *first = &null;
        }
        let e_unc = self.predict(x_t, &unc, t)?;
        if w == 0.0 {
            return Ok(e_unc);
        }
        let e_cond = self.predict(x_t, conds, t)?;
        Ok(guide(&e_cond, &e_unc, w))
    }
}

/// `cond + (w - 1)(cond - uncond)`, i.e. `uncond + w (cond - uncond)`,
/// written so that `w = 1` returns `cond` bit for bit.
pub fn guide(cond: &[f32], uncond: &[f32], w: f64) -> Vec<f32> {
    let wm1 = (w - 1.0) as f32;
    cond.iter().zip(uncond).map(|(&c, &u)| c + wm1 * (c - u)).collect()
}

/// Draws one model-space sample given model-space conditions.
pub fn sample(net: &Network, conds: &[&[f32]], cfg: &SamplerConfig) -> Result<Vec<f32>> {
    if !(cfg.guidance >= 0.0 && cfg.guidance.is_finite()) {
        return Err(Error::Config(format!("guidance weight {} must be a finite w >= 0", cfg.guidance)));
    }
    let sched = &net.schedule;
    let ts = sched.respaced(cfg.steps)?;
    let n = net.model.image_len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for i in (0..ts.len()).rev() {
        let t = ts[i];
        let ab = sched.alpha_bar[t];
        let ab_prev = if i > 0 { sched.alpha_bar[ts[i - 1]] } else { 1.0 };
        let beta = 1.0 - ab / ab_prev;
        let eps = net.guided_eps(&x, conds, t, cfg.guidance)?;
        let (sa, s1a) = (ab.sqrt(), (1.0 - ab).sqrt());
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).max(0.0).sqrt();
        for j in 0..n {
            let xj = x[j] as f64;
            let mut x0 = (xj - s1a * eps[j] as f64) / sa;
            if cfg.clip {
                x0 = x0.clamp(-1.0, 1.0);
            }
            let mut v = c0 * x0 + ct * xj;
            if i > 0 {
                let z: f64 = rng.sample(StandardNormal);
                v += sigma * z;
            }
            x[j] = v as f32;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0, loss: f64::NAN, last_finite: None, t: 0 });
    }
    Ok(x)
}

/// Turns a model-space sample into a superimage with binary alpha.
pub fn to_superimage(net: &Network, x: &[f32]) -> Result<SuperImage> {
    let a = &net.model.arch;
    let mut img = decode_target(x, a.width(), a.height())?;
    snap_foreground(&mut img);
    Ok(SuperImage::from_image(img, a.k)?)
}

/// Samples a superimage from image-space conditions.
pub fn sample_superimage(net: &Network, conds: &[&SuperImage], cfg: &SamplerConfig) -> Result<SuperImage> {
    let a = &net.model.arch;
    for c in conds {
        if c.k != a.k || c.image.width() != a.width() || c.image.height() != a.height() {
            return Err(Error::Shape(format!(
                "condition is K={} {}x{}, model expects K={} {}x{}",
                c.k,
                c.image.width(),
                c.image.height(),
                a.k,
                a.width(),
                a.height()
            )));
        }
    }
    let enc: Vec<Vec<f32>> = conds.iter().map(|c| encode_condition(&c.image)).collect();
    let refs: Vec<&[f32]> = enc.iter().map(|v| v.as_slice()).collect();
    let x = sample(net, &refs, cfg)?;
    to_superimage(net, &x)
}

#[derive(Debug, Clone)]
pub struct HierarchicalSample {
    pub crocs: SuperImage,
    pub views: SuperImage,
}

impl HierarchicalSample {
    pub fn crocs_views(&self) -> Result<Vec<Pointmap>> {
        Ok(tiling::unpack(&self.crocs)?)
    }

    pub fn image_views(&self) -> Result<Vec<Image>> {
        Ok(tiling::unpack(&self.views)?)
    }
}

/// Seed offset separating the decoder's noise from the prior's.
const DECODER_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Source image → CROCS superimage (prior) → shaded superimage (decoder).
pub fn hierarchical_sample(
    source: &Image,
    prior: &Network,
    decoder: &Network,
    cfg: &SamplerConfig,
) -> Result<HierarchicalSample> {
    if prior.role() != Role::Prior || decoder.role() != Role::Decoder {
        return Err(Error::Config("expected a prior and a decoder checkpoint".into()));
    }
    let (pa, da) = (&prior.model.arch, &decoder.model.arch);
    if (pa.k, pa.tile_h, pa.tile_w) != (da.k, da.tile_h, da.tile_w) {
        return Err(Error::Shape(format!(
            "prior is K={} {}x{} tiles, decoder K={} {}x{}",
            pa.k, pa.tile_w, pa.tile_h, da.k, da.tile_w, da.tile_h
        )));
    }
    if source.width() != pa.tile_w || source.height() != pa.tile_h {
        return Err(Error::Shape(format!(
            "source is {}x{}, models use {}x{} tiles",
            source.width(),
            source.height(),
            pa.tile_w,
            pa.tile_h
        )));
    }
    let src = tiling::source_superimage(source, pa.k)?;
    let crocs = sample_superimage(prior, &[&src], cfg)?;
    let dcfg = SamplerConfig { seed: cfg.seed ^ DECODER_SEED_SALT, ..cfg.clone() };
    let views = sample_superimage(decoder, &[&src, &crocs], &dcfg)?;
    Ok(HierarchicalSample { crocs, views })
}
