//! Checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "UPCK"  u16 version  u8 role  u8 has_optimizer
//! u32 × 11: k, tile_h, tile_w, c0, c1, c2, c3, hidden, temb, groups, t_max
//! u64 n_params, f32 × n_params
//! if has_optimizer: u64 step, f32 × n_params × 3 (raw weights, first moment, second moment)
//! ```
//!
//! The top-level parameters are the ones to sample with (the weight average
//! when the file comes from training); the raw weights live with the
//! optimizer state.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Arch, Denoiser, Role};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UPCK";
pub const CHECKPOINT_VERSION: u16 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    /// Weights the optimizer is updating.
    pub weights: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Arch,
    pub t_max: usize,
    pub params: Vec<f32>,
    pub optimizer: Option<AdamState>,
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let a = &self.arch;
        let mut out = Vec::with_capacity(64 + self.params.len() * 12);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(a.role.tag());
        out.push(u8::from(self.optimizer.is_some()));
        for v in [a.k, a.tile_h, a.tile_w, a.c0, a.c1, a.c2, a.c3, a.hidden, a.temb, a.groups, self.t_max] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        put_f32s(&mut out, &self.params);
        if let Some(opt) = &self.optimizer {
            out.extend_from_slice(&opt.step.to_le_bytes());
            put_f32s(&mut out, &opt.weights);
            put_f32s(&mut out, &opt.m);
            put_f32s(&mut out, &opt.v);
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        let mut r = Reader { bytes, at: 0 };
        if r.take(4).ok_or_else(|| err("truncated header".into()))? != CHECKPOINT_MAGIC {
            return Err(err("bad magic".into()));
        }
        let version = r.u16().ok_or_else(|| err("truncated header".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let role = r.u8().and_then(Role::from_tag).ok_or_else(|| err("bad role tag".into()))?;
        let has_opt = r.u8().ok_or_else(|| err("truncated header".into()))?;
        let mut dims = [0usize; 11];
        for d in &mut dims {
            *d = r.u32().ok_or_else(|| err("truncated header".into()))? as usize;
        }
        let arch = Arch {
            role,
            k: dims[0],
            tile_h: dims[1],
            tile_w: dims[2],
            c0: dims[3],
            c1: dims[4],
            c2: dims[5],
            c3: dims[6],
            hidden: dims[7],
            temb: dims[8],
            groups: dims[9],
        };
        let t_max = dims[10];
        let model = Denoiser::new(arch).map_err(|e| err(e.to_string()))?;
        let n = r.u64().ok_or_else(|| err("truncated header".into()))? as usize;
        if n != model.num_params() {
            return Err(err(format!("{n} parameters, architecture needs {}", model.num_params())));
        }
        let params = r.f32s(n).ok_or_else(|| err("truncated parameters".into()))?;
        let optimizer = if has_opt == 1 {
            let step = r.u64().ok_or_else(|| err("truncated optimizer state".into()))?;
            let weights = r.f32s(n).ok_or_else(|| err("truncated optimizer state".into()))?;
            let m = r.f32s(n).ok_or_else(|| err("truncated optimizer state".into()))?;
            let v = r.f32s(n).ok_or_else(|| err("truncated optimizer state".into()))?;
            Some(AdamState { step, weights, m, v })
        } else {
            None
        };
        if r.at != bytes.len() {
            return Err(err(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(err("non-finite parameter".into()));
        }
        Ok(Self { arch, t_max, params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.at..self.at.checked_add(n)?)?;
        self.at += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let b = self.take(n.checked_mul(4)?)?;
        Some(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
