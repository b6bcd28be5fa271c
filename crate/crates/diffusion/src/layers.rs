//! Layer primitives with hand-written backward passes.
//!
//! Parameters live in one flat slice; each layer stores offsets into it and
//! accumulates its gradient into the matching range of a same-sized slice.

use crate::real::{matmul, Real};

/// A single C×H×W feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Feat<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Feat<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![T::zero(); c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "feature size");
        Self { c, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.hw()..(c + 1) * self.hw()]
    }

    pub fn add_assign(&mut self, other: &Feat<T>) {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a = *a + *b);
    }
}

/// Moves each 2×2 block into channels: `(c, 2y+dy, 2x+dx)` → `(4c + 2dy + dx, y, x)`.
pub fn space_to_depth<T: Real>(x: &Feat<T>) -> Feat<T> {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "odd feature size {}x{}", x.h, x.w);
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Feat::zeros(x.c * 4, h, w);
    for c in 0..x.c {
        for dy in 0..2 {
            for dx in 0..2 {
                let oc = c * 4 + dy * 2 + dx;
                for y in 0..h {
                    for xx in 0..w {
                        out.data[(oc * h + y) * w + xx] = x.data[(c * x.h + 2 * y + dy) * x.w + 2 * xx + dx];
                    }
                }
            }
        }
    }
    out
}

pub fn depth_to_space<T: Real>(x: &Feat<T>) -> Feat<T> {
    assert!(x.c % 4 == 0, "channel count {} not divisible by 4", x.c);
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Feat::zeros(x.c / 4, h, w);
    for c in 0..x.c / 4 {
        for dy in 0..2 {
            for dx in 0..2 {
                let ic = c * 4 + dy * 2 + dx;
                for y in 0..x.h {
                    for xx in 0..x.w {
                        out.data[(c * h + 2 * y + dy) * w + 2 * xx + dx] = x.data[(ic * x.h + y) * x.w + xx];
                    }
                }
            }
        }
    }
    out
}

pub fn silu<T: Real>(x: &Feat<T>) -> Feat<T> {
    let data = x.data.iter().map(|&v| silu_scalar(v)).collect();
    Feat::from_vec(x.c, x.h, x.w, data)
}

pub fn silu_scalar<T: Real>(v: T) -> T {
    v / (T::one() + (-v).exp())
}

pub fn silu_grad_scalar<T: Real>(v: T, dy: T) -> T {
    let s = T::one() / (T::one() + (-v).exp());
    dy * s * (T::one() + v * (T::one() - s))
}

/// Gradient of `silu` given its input `x`.
pub fn silu_backward<T: Real>(x: &Feat<T>, dy: &Feat<T>) -> Feat<T> {
    let data = x.data.iter().zip(&dy.data).map(|(&v, &g)| silu_grad_scalar(v, g)).collect();
    Feat::from_vec(x.c, x.h, x.w, data)
}

/// How a layer's weights start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRole {
    /// He-scaled normal.
    Normal,
    /// Zero at training init so residual branches start as the identity.
    ZeroAtStart,
}

/// Square convolution with kernel 1 or 3 (zero padding, stride 1).
#[derive(Debug, Clone)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w: usize,
    pub b: usize,
    pub init: InitRole,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn im2col<T: Real>(&self, x: &Feat<T>) -> Vec<T> {
        let (h, w) = (x.h, x.w);
        let mut cols = vec![T::zero(); self.cin * 9 * h * w];
        for c in 0..self.cin {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut cols[((c * 9) + ky * 3 + kx) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &x.data[(c * h + sy as usize) * w..][..w];
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - 1;
                            if sx >= 0 && sx < w as isize {
                                row[y * w + xx] = src[sx as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T], h: usize, w: usize) -> Feat<T> {
        let mut out = Feat::zeros(self.cin, h, w);
        for c in 0..self.cin {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &cols[((c * 9) + ky * 3 + kx) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut out.data[(c * h + sy as usize) * w..][..w];
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - 1;
                            if sx >= 0 && sx < w as isize {
                                dst[sx as usize] = dst[sx as usize] + row[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the output and the cache needed by `backward` (the im2col
    /// matrix for 3×3 kernels, the input itself for 1×1).
    pub fn forward<T: Real>(&self, p: &[T], x: &Feat<T>) -> (Feat<T>, Vec<T>) {
        assert_eq!(x.c, self.cin, "conv input channels");
        let hw = x.hw();
        let cols = if self.k == 3 { self.im2col(x) } else { x.data.clone() };
        let kk = self.cin * self.k * self.k;
        let mut out = Feat::zeros(self.cout, x.h, x.w);
        for (co, chunk) in out.data.chunks_mut(hw).enumerate() {
            chunk.fill(p[self.b + co]);
        }
        matmul(false, false, self.cout, hw, kk, T::one(), &p[self.w..self.w + self.weight_len()], &cols, T::one(), &mut out.data);
        (out, cols)
    }

    pub fn backward<T: Real>(&self, p: &[T], cols: &[T], dy: &Feat<T>, g: &mut [T]) -> Feat<T> {
        let hw = dy.hw();
        let kk = self.cin * self.k * self.k;
        let wl = self.weight_len();
        matmul(false, true, self.cout, kk, hw, T::one(), &dy.data, cols, T::one(), &mut g[self.w..self.w + wl]);
        for co in 0..self.cout {
            let s: T = dy.channel(co).iter().copied().sum();
            g[self.b + co] = g[self.b + co] + s;
        }
        let mut dcols = vec![T::zero(); kk * hw];
        matmul(true, false, kk, hw, self.cout, T::one(), &p[self.w..self.w + wl], &dy.data, T::zero(), &mut dcols);
        if self.k == 3 {
            self.col2im(&dcols, dy.h, dy.w)
        } else {
            Feat::from_vec(self.cin, dy.h, dy.w, dcols)
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub c: usize,
    pub groups: usize,
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

pub const NORM_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn forward<T: Real>(&self, p: &[T], x: &Feat<T>) -> (Feat<T>, NormCache<T>) {
        let hw = x.hw();
        let per = self.c / self.groups * hw;
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let seg = &x.data[g * per..(g + 1) * per];
            let n = T::from_usize(per).unwrap();
            let mean = seg.iter().copied().sum::<T>() / n;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::of(NORM_EPS)).sqrt();
            inv_std.push(is);
            for (o, &v) in xhat[g * per..(g + 1) * per].iter_mut().zip(seg) {
                *o = (v - mean) * is;
            }
        }
        let mut out = Feat::zeros(x.c, x.h, x.w);
        for c in 0..x.c {
            let (ga, be) = (p[self.gamma + c], p[self.beta + c]);
            for i in c * hw..(c + 1) * hw {
                out.data[i] = xhat[i] * ga + be;
            }
        }
        (out, NormCache { xhat, inv_std })
    }

    pub fn backward<T: Real>(&self, p: &[T], cache: &NormCache<T>, dy: &Feat<T>, g: &mut [T]) -> Feat<T> {
        let hw = dy.hw();
        let mut dxhat = vec![T::zero(); dy.data.len()];
        for c in 0..self.c {
            let ga = p[self.gamma + c];
            let (mut sg, mut sb) = (T::zero(), T::zero());
            for i in c * hw..(c + 1) * hw {
                sg = sg + dy.data[i] * cache.xhat[i];
                sb = sb + dy.data[i];
                dxhat[i] = dy.data[i] * ga;
            }
            g[self.gamma + c] = g[self.gamma + c] + sg;
            g[self.beta + c] = g[self.beta + c] + sb;
        }
        let per = self.c / self.groups * hw;
        let n = T::from_usize(per).unwrap();
        let mut dx = Feat::zeros(dy.c, dy.h, dy.w);
        for gi in 0..self.groups {
            let r = gi * per..(gi + 1) * per;
            let s1: T = dxhat[r.clone()].iter().copied().sum();
            let s2: T = dxhat[r.clone()].iter().zip(&cache.xhat[r.clone()]).map(|(&a, &b)| a * b).sum();
            let k = cache.inv_std[gi] / n;
            for i in r {
                dx.data[i] = k * (n * dxhat[i] - s1 - cache.xhat[i] * s2);
            }
        }
        dx
    }
}

/// Dense layer on a flat vector.
#[derive(Debug, Clone)]
pub struct Linear {
    pub din: usize,
    pub dout: usize,
    pub w: usize,
    pub b: usize,
    pub init: InitRole,
}

impl Linear {
    pub fn forward<T: Real>(&self, p: &[T], x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.din, "linear input size");
        let mut y = p[self.b..self.b + self.dout].to_vec();
        matmul(false, false, self.dout, 1, self.din, T::one(), &p[self.w..self.w + self.din * self.dout], x, T::one(), &mut y);
        y
    }

    pub fn backward<T: Real>(&self, p: &[T], x: &[T], dy: &[T], g: &mut [T]) -> Vec<T> {
        let wl = self.din * self.dout;
        matmul(false, false, self.dout, self.din, 1, T::one(), dy, x, T::one(), &mut g[self.w..self.w + wl]);
        for (gb, &d) in g[self.b..self.b + self.dout].iter_mut().zip(dy) {
            *gb = *gb + d;
        }
        let mut dx = vec![T::zero(); self.din];
        matmul(true, false, self.din, 1, self.dout, T::one(), &p[self.w..self.w + wl], dy, T::zero(), &mut dx);
        dx
    }
}
