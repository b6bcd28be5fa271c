//! The ε-prediction denoiser.
//!
//! A four-level encoder/decoder. A thin 3×3 path runs at full resolution; the
//! input is also folded 2×2 into channels and processed by residual blocks at
//! 1/2, 1/4 and 1/8 scale, then unfolded back onto the full-resolution path
//! before the output convolution. The 1/8 scale
//! feature map is small enough for a dense layer across all positions, which
//! lets every tile see every other tile in one hop. A sinusoidal timestep
//! embedding scales and shifts the normalized features of every residual
//! block and of the output layer.
//!
//! Condition channels are fed as offsets from the null condition, so a nulled
//! condition is an all-zero input. Their stem weights start at zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use unpic_core::tiling;

use crate::error::{Error, Result};
use crate::layers::{
    depth_to_space, silu, silu_backward, silu_grad_scalar, silu_scalar, space_to_depth, Conv, Feat, GroupNorm,
    InitRole, Linear, NormCache,
};
use crate::real::Real;

/// Channels of an RGBA superimage.
pub const IMAGE_CHANNELS: usize = 4;
/// Tile-local u, v and the view index.
pub const COORD_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Source superimage → CROCS superimage.
    Prior,
    /// Source + CROCS superimages → shaded superimage.
    Decoder,
}

impl Role {
    pub fn n_cond(self) -> usize {
        match self {
            Role::Prior => 1,
            Role::Decoder => 2,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Role::Prior => 0,
            Role::Decoder => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Role::Prior),
            1 => Some(Role::Decoder),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Prior => "prior",
            Role::Decoder => "decoder",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(Role::Prior),
            "decoder" => Ok(Role::Decoder),
            other => Err(Error::Config(format!("unknown role {other:?} (expected prior or decoder)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub role: Role,
    pub k: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    /// Width of the full-resolution path.
    pub c0: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub hidden: usize,
    pub temb: usize,
    pub groups: usize,
}

impl Arch {
    /// The configuration used for the 24×24-tile experiments.
    pub fn desk(role: Role, k: usize, tile: usize) -> Self {
        Self {
            role,
            k,
            tile_h: tile,
            tile_w: tile,
            c0: 8,
            c1: 24,
            c2: 48,
            c3: 64,
            hidden: 128,
            temb: 64,
            groups: 8,
        }
    }

    /// A few-thousand-parameter network for gradient checks and smoke tests.
    pub fn tiny(role: Role, k: usize, tile: usize) -> Self {
        Self {
            role,
            k,
            tile_h: tile,
            tile_w: tile,
            c0: 4,
            c1: 8,
            c2: 8,
            c3: 8,
            hidden: 8,
            temb: 8,
            groups: 2,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        tiling::grid_for(self.k).unwrap_or((0, 0))
    }

    pub fn height(&self) -> usize {
        self.grid().0 * self.tile_h
    }

    pub fn width(&self) -> usize {
        self.grid().1 * self.tile_w
    }

    pub fn in_channels(&self) -> usize {
        IMAGE_CHANNELS * (1 + self.role.n_cond()) + COORD_CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        tiling::grid_for(self.k).map_err(|e| Error::Config(e.to_string()))?;
        let (h, w) = (self.height(), self.width());
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Config(format!("superimage {h}x{w} must be a nonzero multiple of 8")));
        }
        for c in [self.c0, self.c1, self.c2, self.c3] {
            if c == 0 || self.groups == 0 || c % self.groups != 0 {
                return Err(Error::Config(format!("{c} channels not divisible into {} groups", self.groups)));
            }
        }
        if self.temb < 2 || self.temb % 2 != 0 || self.hidden == 0 {
            return Err(Error::Config("timestep embedding must be even and hidden width nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Residual branch ends, the output layer and condition inputs start at zero.
    Training,
    /// Every parameter random; used to exercise all gradient paths.
    Random,
}

#[derive(Debug, Clone)]
struct ResBlock {
    n1: GroupNorm,
    conv1: Conv,
    proj: Linear,
    n2: GroupNorm,
    conv2: Conv,
}

struct ResCache<T> {
    n1: NormCache<T>,
    a1: Feat<T>,
    cols1: Vec<T>,
    n2: NormCache<T>,
    a2: Feat<T>,
    ss: Vec<T>,
    f2: Feat<T>,
    cols2: Vec<T>,
}

impl ResBlock {
    fn forward<T: Real>(&self, p: &[T], x: &Feat<T>, e_act: &[T]) -> (Feat<T>, ResCache<T>) {
        let (a1, n1) = self.n1.forward(p, x);
        let (h, cols1) = self.conv1.forward(p, &silu(&a1));
        let (a2, n2) = self.n2.forward(p, &h);
        let ss = self.proj.forward(p, e_act);
        let f2 = film(&a2, &ss);
        let (mut out, cols2) = self.conv2.forward(p, &silu(&f2));
        out.add_assign(x);
        (out, ResCache { n1, a1, cols1, n2, a2, ss, f2, cols2 })
    }

    fn backward<T: Real>(
        &self,
        p: &[T],
        cache: &ResCache<T>,
        dy: &Feat<T>,
        e_act: &[T],
        g: &mut [T],
        de_act: &mut [T],
    ) -> Feat<T> {
        let d = self.conv2.backward(p, &cache.cols2, dy, g);
        let d = silu_backward(&cache.f2, &d);
        let (da2, dss) = film_backward(&cache.a2, &cache.ss, &d);
        let de = self.proj.backward(p, e_act, &dss, g);
        de_act.iter_mut().zip(de).for_each(|(a, b)| *a = *a + b);
        let dh = self.n2.backward(p, &cache.n2, &da2, g);
        let d = self.conv1.backward(p, &cache.cols1, &dh, g);
        let d = silu_backward(&cache.a1, &d);
        let mut dx = self.n1.backward(p, &cache.n1, &d, g);
        dx.add_assign(dy);
        dx
    }
}

/// Per-channel `a · (1 + scale) + shift`, with `ss = [scale; shift]` from the timestep embedding.
fn film<T: Real>(a: &Feat<T>, ss: &[T]) -> Feat<T> {
    let hw = a.hw();
    let mut out = a.clone();
    for c in 0..a.c {
        let (k, b) = (T::one() + ss[c], ss[a.c + c]);
        out.data[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = *v * k + b);
    }
    out
}

fn film_backward<T: Real>(a: &Feat<T>, ss: &[T], dy: &Feat<T>) -> (Feat<T>, Vec<T>) {
    let hw = a.hw();
    let mut da = dy.clone();
    let mut dss = vec![T::zero(); 2 * a.c];
    for c in 0..a.c {
        let r = c * hw..(c + 1) * hw;
        dss[c] = a.data[r.clone()].iter().zip(&dy.data[r.clone()]).map(|(&x, &d)| x * d).sum();
        dss[a.c + c] = dy.data[r.clone()].iter().copied().sum();
        let k = T::one() + ss[c];
        da.data[r].iter_mut().for_each(|v| *v = *v * k);
    }
    (da, dss)
}

/// Intermediate values kept for the backward pass.
pub struct Cache<T> {
    e0: Vec<T>,
    th: Vec<T>,
    ta: Vec<T>,
    te: Vec<T>,
    e_act: Vec<T>,
    full_cols: Vec<T>,
    stem_cols: Vec<T>,
    r1: ResCache<T>,
    down1_cols: Vec<T>,
    r2: ResCache<T>,
    down2_cols: Vec<T>,
    r3a: ResCache<T>,
    r3b: ResCache<T>,
    flat: Vec<T>,
    z: Vec<T>,
    za: Vec<T>,
    up2_cols: Vec<T>,
    r4: ResCache<T>,
    up1_cols: Vec<T>,
    r5: ResCache<T>,
    up0_cols: Vec<T>,
    r0: ResCache<T>,
    out_norm: NormCache<T>,
    out_a: Feat<T>,
    out_ss: Vec<T>,
    out_pre: Feat<T>,
    out_cols: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub arch: Arch,
    n_params: usize,
    temb1: Linear,
    temb2: Linear,
    full_in: Conv,
    stem: Conv,
    res1: ResBlock,
    down1: Conv,
    res2: ResBlock,
    down2: Conv,
    res3a: ResBlock,
    res3b: ResBlock,
    dense1: Linear,
    dense2: Linear,
    up2: Conv,
    res4: ResBlock,
    up1: Conv,
    res5: ResBlock,
    up0: Conv,
    res0: ResBlock,
    out_norm: GroupNorm,
    out_film: Linear,
    out_conv: Conv,
    coords: Vec<f64>,
}

struct Alloc {
    next: usize,
}

impl Alloc {
    fn take(&mut self, n: usize) -> usize {
        let at = self.next;
        self.next += n;
        at
    }

    fn conv(&mut self, cin: usize, cout: usize, k: usize, init: InitRole) -> Conv {
        let w = self.take(cout * cin * k * k);
        let b = self.take(cout);
        Conv { cin, cout, k, w, b, init }
    }

    fn norm(&mut self, c: usize, groups: usize) -> GroupNorm {
        let gamma = self.take(c);
        let beta = self.take(c);
        GroupNorm { c, groups, gamma, beta }
    }

    fn linear(&mut self, din: usize, dout: usize, init: InitRole) -> Linear {
        let w = self.take(din * dout);
        let b = self.take(dout);
        Linear { din, dout, w, b, init }
    }

    fn res(&mut self, c: usize, groups: usize, temb: usize) -> ResBlock {
        ResBlock {
            n1: self.norm(c, groups),
            conv1: self.conv(c, c, 3, InitRole::Normal),
            proj: self.linear(temb, 2 * c, InitRole::Normal),
            n2: self.norm(c, groups),
            conv2: self.conv(c, c, 1, InitRole::ZeroAtStart),
        }
    }
}

pub fn timestep_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        e[i] = (t * freq).sin();
        e[half + i] = (t * freq).cos();
    }
    e
}

fn coord_channels(arch: &Arch) -> Vec<f64> {
    let (h, w) = (arch.height(), arch.width());
    let grid = tiling::layout(arch.k).unwrap_or_default();
    let mut out = vec![0.0; COORD_CHANNELS * h * w];
    for y in 0..h {
        for x in 0..w {
            let (r, c) = (y / arch.tile_h, x / arch.tile_w);
            let u = ((x % arch.tile_w) as f64 + 0.5) / arch.tile_w as f64 * 2.0 - 1.0;
            let v = ((y % arch.tile_h) as f64 + 0.5) / arch.tile_h as f64 * 2.0 - 1.0;
            let view = if arch.k > 1 { grid[r][c] as f64 / (arch.k - 1) as f64 * 2.0 - 1.0 } else { 0.0 };
            out[y * w + x] = u;
            out[(h + y) * w + x] = v;
            out[(2 * h + y) * w + x] = view;
        }
    }
    out
}

impl Denoiser {
    pub fn new(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let mut a = Alloc { next: 0 };
        let g = arch.groups;
        let (h3, w3) = (arch.height() / 8, arch.width() / 8);
        let flat = arch.c3 * h3 * w3;
        let temb1 = a.linear(arch.temb, arch.temb, InitRole::Normal);
        let temb2 = a.linear(arch.temb, arch.temb, InitRole::Normal);
        let full_in = a.conv(arch.in_channels(), arch.c0, 3, InitRole::Normal);
        let stem = a.conv(arch.in_channels() * 4, arch.c1, 1, InitRole::Normal);
        let res1 = a.res(arch.c1, g, arch.temb);
        let down1 = a.conv(arch.c1 * 4, arch.c2, 1, InitRole::Normal);
        let res2 = a.res(arch.c2, g, arch.temb);
        let down2 = a.conv(arch.c2 * 4, arch.c3, 1, InitRole::Normal);
        let res3a = a.res(arch.c3, g, arch.temb);
        let res3b = a.res(arch.c3, g, arch.temb);
        let dense1 = a.linear(flat, arch.hidden, InitRole::Normal);
        let dense2 = a.linear(arch.hidden, flat, InitRole::ZeroAtStart);
        let up2 = a.conv(arch.c3, arch.c2 * 4, 1, InitRole::Normal);
        let res4 = a.res(arch.c2, g, arch.temb);
        let up1 = a.conv(arch.c2, arch.c1 * 4, 1, InitRole::Normal);
        let res5 = a.res(arch.c1, g, arch.temb);
        let up0 = a.conv(arch.c1, arch.c0 * 4, 1, InitRole::Normal);
        let res0 = a.res(arch.c0, g, arch.temb);
        let out_norm = a.norm(arch.c0, g);
        let out_film = a.linear(arch.temb, 2 * arch.c0, InitRole::Normal);
        let out_conv = a.conv(arch.c0, IMAGE_CHANNELS, 3, InitRole::ZeroAtStart);
        Ok(Self {
            arch,
            n_params: a.next,
            temb1,
            temb2,
            full_in,
            stem,
            res1,
            down1,
            res2,
            down2,
            res3a,
            res3b,
            dense1,
            dense2,
            up2,
            res4,
            up1,
            res5,
            up0,
            res0,
            out_norm,
            out_film,
            out_conv,
            coords: coord_channels(&arch),
        })
    }

    pub fn num_params(&self) -> usize {
        self.n_params
    }

    /// Number of values in one model-space superimage (4 channels).
    pub fn image_len(&self) -> usize {
        IMAGE_CHANNELS * self.arch.height() * self.arch.width()
    }

    fn convs(&self) -> Vec<&Conv> {
        let mut v = vec![&self.full_in, &self.stem, &self.down1, &self.down2, &self.up2, &self.up1, &self.up0, &self.out_conv];
        for r in self.blocks() {
            v.push(&r.conv1);
            v.push(&r.conv2);
        }
        v
    }

    fn linears(&self) -> Vec<&Linear> {
        let mut v = vec![&self.temb1, &self.temb2, &self.dense1, &self.dense2, &self.out_film];
        v.extend(self.blocks().map(|r| &r.proj));
        v
    }

    fn norms(&self) -> Vec<&GroupNorm> {
        let mut v = vec![&self.out_norm];
        for r in self.blocks() {
            v.push(&r.n1);
            v.push(&r.n2);
        }
        v
    }

    fn blocks(&self) -> impl Iterator<Item = &ResBlock> {
        [&self.res0, &self.res1, &self.res2, &self.res3a, &self.res3b, &self.res4, &self.res5].into_iter()
    }

    /// Offsets of the input weights (both stems) that read condition channels.
    pub fn condition_weight_indices(&self) -> Vec<usize> {
        let cond = IMAGE_CHANNELS..IMAGE_CHANNELS * (1 + self.arch.role.n_cond());
        let mut out = Vec::new();
        let s = &self.stem;
        for co in 0..s.cout {
            for ci in 0..s.cin {
                if cond.contains(&(ci / 4)) {
                    out.push(s.w + co * s.cin + ci);
                }
            }
        }
        let f = &self.full_in;
        let taps = f.k * f.k;
        for co in 0..f.cout {
            for ci in 0..f.cin {
                if cond.contains(&ci) {
                    out.extend((0..taps).map(|j| f.w + (co * f.cin + ci) * taps + j));
                }
            }
        }
        out
    }

    /// Offset of the output layer's bias (one value per output channel).
    pub fn output_bias_offset(&self) -> usize {
        self.out_conv.b
    }

    pub fn output_weight_range(&self) -> std::ops::Range<usize> {
        self.out_conv.w..self.out_conv.w + self.out_conv.weight_len()
    }

    pub fn init<T: Real>(&self, seed: u64, mode: Init) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![T::zero(); self.n_params];
        let random = mode == Init::Random;
        let normal = |std: f64, rng: &mut ChaCha8Rng| T::of(Normal::new(0.0, std).unwrap().sample(rng));
        for c in self.convs() {
            let fan_in = (c.cin * c.k * c.k) as f64;
            if random || c.init == InitRole::Normal {
                let std = if random { (1.0 / fan_in).sqrt() } else { (2.0 / fan_in).sqrt() };
                for i in 0..c.weight_len() {
                    p[c.w + i] = normal(std, &mut rng);
                }
            }
            if random {
                for i in 0..c.cout {
                    p[c.b + i] = normal(0.1, &mut rng);
                }
            }
        }
        for l in self.linears() {
            if random || l.init == InitRole::Normal {
                let std = (1.0 / l.din as f64).sqrt();
                for i in 0..l.din * l.dout {
                    p[l.w + i] = normal(std, &mut rng);
                }
            }
            if random {
                for i in 0..l.dout {
                    p[l.b + i] = normal(0.1, &mut rng);
                }
            }
        }
        for n in self.norms() {
            for i in 0..n.c {
                p[n.gamma + i] = if random { T::one() + normal(0.1, &mut rng) } else { T::one() };
                p[n.beta + i] = if random { normal(0.1, &mut rng) } else { T::zero() };
            }
        }
        if !random {
            for i in self.condition_weight_indices() {
                p[i] = T::zero();
            }
        }
        p
    }

    /// Stacks the noisy target, condition offsets and coordinate channels.
    pub fn assemble<T: Real>(&self, x_t: &[T], conds: &[&[T]]) -> Result<Feat<T>> {
        let n = self.image_len();
        if x_t.len() != n {
            return Err(Error::Shape(format!("noisy input has {} values, expected {n}", x_t.len())));
        }
        if conds.len() != self.arch.role.n_cond() {
            return Err(Error::Shape(format!(
                "{} role takes {} conditions, got {}",
                self.arch.role.name(),
                self.arch.role.n_cond(),
                conds.len()
            )));
        }
        let mut data = Vec::with_capacity(self.arch.in_channels() * self.arch.height() * self.arch.width());
        data.extend_from_slice(x_t);
        for c in conds {
            if c.len() != n {
                return Err(Error::Shape(format!("condition has {} values, expected {n}", c.len())));
            }
            data.extend_from_slice(c);
        }
        data.extend(self.coords.iter().map(|&v| T::of(v)));
        Ok(Feat::from_vec(self.arch.in_channels(), self.arch.height(), self.arch.width(), data))
    }

    pub fn forward<T: Real>(&self, p: &[T], input: &Feat<T>, t: f64) -> (Feat<T>, Cache<T>) {
        assert_eq!(p.len(), self.n_params, "parameter vector length");
        let e0: Vec<T> = timestep_embedding(t, self.arch.temb).into_iter().map(T::of).collect();
        let th = self.temb1.forward(p, &e0);
        let ta: Vec<T> = th.iter().map(|&v| silu_scalar(v)).collect();
        let te = self.temb2.forward(p, &ta);
        let e_act: Vec<T> = te.iter().map(|&v| silu_scalar(v)).collect();

        let (f0, full_cols) = self.full_in.forward(p, input);
        let (h1, stem_cols) = self.stem.forward(p, &space_to_depth(input));
        let (h1, r1) = self.res1.forward(p, &h1, &e_act);
        let (d, down1_cols) = self.down1.forward(p, &space_to_depth(&h1));
        let (h2, r2) = self.res2.forward(p, &d, &e_act);
        let (d, down2_cols) = self.down2.forward(p, &space_to_depth(&h2));
        let (h3, r3a) = self.res3a.forward(p, &d, &e_act);
        let (mut h3, r3b) = self.res3b.forward(p, &h3, &e_act);

        let flat = h3.data.clone();
        let z = self.dense1.forward(p, &flat);
        let za: Vec<T> = z.iter().map(|&v| silu_scalar(v)).collect();
        let gctx = self.dense2.forward(p, &za);
        h3.data.iter_mut().zip(&gctx).for_each(|(a, &b)| *a = *a + b);

        let (u, up2_cols) = self.up2.forward(p, &h3);
        let mut u = depth_to_space(&u);
        u.add_assign(&h2);
        let (u2, r4) = self.res4.forward(p, &u, &e_act);
        let (u, up1_cols) = self.up1.forward(p, &u2);
        let mut u = depth_to_space(&u);
        u.add_assign(&h1);
        let (u1, r5) = self.res5.forward(p, &u, &e_act);
        let (u, up0_cols) = self.up0.forward(p, &u1);
        let mut u = depth_to_space(&u);
        u.add_assign(&f0);
        let (u0, r0) = self.res0.forward(p, &u, &e_act);

        let (out_a, out_norm) = self.out_norm.forward(p, &u0);
        let out_ss = self.out_film.forward(p, &e_act);
        let out_pre = film(&out_a, &out_ss);
        let (eps, out_cols) = self.out_conv.forward(p, &silu(&out_pre));
        let cache = Cache {
            e0,
            th,
            ta,
            te,
            e_act,
            full_cols,
            stem_cols,
            r1,
            down1_cols,
            r2,
            down2_cols,
            r3a,
            r3b,
            flat,
            z,
            za,
            up2_cols,
            r4,
            up1_cols,
            r5,
            up0_cols,
            r0,
            out_norm,
            out_a,
            out_ss,
            out_pre,
            out_cols,
        };
        (eps, cache)
    }

    pub fn predict<T: Real>(&self, p: &[T], input: &Feat<T>, t: f64) -> Vec<T> {
        self.forward(p, input, t).0.data
    }

    /// Accumulates dLoss/dparams into `g` given dLoss/d(output).
    pub fn backward<T: Real>(&self, p: &[T], cache: &Cache<T>, d_eps: &Feat<T>, g: &mut [T]) {
        assert_eq!(g.len(), self.n_params, "gradient vector length");
        let mut de_act = vec![T::zero(); self.arch.temb];
        let e = &cache.e_act;

        let d = self.out_conv.backward(p, &cache.out_cols, d_eps, g);
        let d = silu_backward(&cache.out_pre, &d);
        let (d, dss) = film_backward(&cache.out_a, &cache.out_ss, &d);
        let de = self.out_film.backward(p, e, &dss, g);
        de_act.iter_mut().zip(de).for_each(|(a, b)| *a = *a + b);
        let du0 = self.out_norm.backward(p, &cache.out_norm, &d, g);
        let du = self.res0.backward(p, &cache.r0, &du0, e, g, &mut de_act);
        let df0 = du.clone();
        let du1 = self.up0.backward(p, &cache.up0_cols, &space_to_depth(&du), g);
        let du = self.res5.backward(p, &cache.r5, &du1, e, g, &mut de_act);
        let dh1_skip = du.clone();
        let du2 = self.up1.backward(p, &cache.up1_cols, &space_to_depth(&du), g);
        let du = self.res4.backward(p, &cache.r4, &du2, e, g, &mut de_act);
        let dh2_skip = du.clone();
        let mut dh3 = self.up2.backward(p, &cache.up2_cols, &space_to_depth(&du), g);

        let dza = self.dense2.backward(p, &cache.za, &dh3.data, g);
        let dz: Vec<T> = cache.z.iter().zip(&dza).map(|(&v, &d)| silu_grad_scalar(v, d)).collect();
        let dflat = self.dense1.backward(p, &cache.flat, &dz, g);
        dh3.data.iter_mut().zip(dflat).for_each(|(a, b)| *a = *a + b);

        let d = self.res3b.backward(p, &cache.r3b, &dh3, e, g, &mut de_act);
        let d = self.res3a.backward(p, &cache.r3a, &d, e, g, &mut de_act);
        let d = self.down2.backward(p, &cache.down2_cols, &d, g);
        let mut dh2 = depth_to_space(&d);
        dh2.add_assign(&dh2_skip);
        let d = self.res2.backward(p, &cache.r2, &dh2, e, g, &mut de_act);
        let d = self.down1.backward(p, &cache.down1_cols, &d, g);
        let mut dh1 = depth_to_space(&d);
        dh1.add_assign(&dh1_skip);
        let d = self.res1.backward(p, &cache.r1, &dh1, e, g, &mut de_act);
        self.stem.backward(p, &cache.stem_cols, &d, g);
        self.full_in.backward(p, &cache.full_cols, &df0, g);

        let dte: Vec<T> = cache.te.iter().zip(&de_act).map(|(&v, &d)| silu_grad_scalar(v, d)).collect();
        let dta = self.temb2.backward(p, &cache.ta, &dte, g);
        let dth: Vec<T> = cache.th.iter().zip(&dta).map(|(&v, &d)| silu_grad_scalar(v, d)).collect();
        self.temb1.backward(p, &cache.e0, &dth, g);
    }

    /// Mean squared ε error for one example; adds `weight ·` its gradient to `g`.
    pub fn loss_and_grad<T: Real>(
        &self,
        p: &[T],
        input: &Feat<T>,
        t: f64,
        eps: &[T],
        weight: T,
        g: &mut [T],
    ) -> T {
        let (pred, cache) = self.forward(p, input, t);
        let n = T::from_usize(pred.data.len()).unwrap();
        let mut loss = T::zero();
        let mut d = Feat::zeros(pred.c, pred.h, pred.w);
        for ((dv, &a), &b) in d.data.iter_mut().zip(&pred.data).zip(eps) {
            let r = a - b;
            loss = loss + r * r;
            *dv = T::of(2.0) * r / n * weight;
        }
        self.backward(p, &cache, &d, g);
        loss / n
    }

    pub fn loss<T: Real>(&self, p: &[T], input: &Feat<T>, t: f64, eps: &[T]) -> T {
        let pred = self.predict(p, input, t);
        let n = T::from_usize(pred.len()).unwrap();
        pred.iter().zip(eps).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n
    }
}
