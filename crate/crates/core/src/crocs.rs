//! Object coordinate frames.
//!
//! [`NocsFrame`] maps a mesh isotropically into the unit cube. [`CrocsFrame`]
//! additionally turns the ground-plane channels (R, G) about the cube center
//! into the source camera's azimuthal frame and then rescales jointly over
//! everything the K target views observe, so colors stay inside `[0, 1]³` with
//! the widest observed axis tight.
//!
//! Rotation convention: a camera at azimuth `theta` sees the same colors as a
//! camera at azimuth 0 looking at the object turned by `-theta`, so the
//! ground channels are rotated by `-theta_src`.

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::camera::RigSpec;
use crate::error::{Error, Result};
use crate::image::{Image, Pointmap};
use crate::mesh::Mesh;
use crate::raster::{pointmap_from_fragments, rasterize};

type Vec3 = Vector3<f64>;

/// A bijective map between world points and pointmap colors.
pub trait PointFrame {
    fn apply(&self, p: &Vec3) -> Vec3;
    fn invert(&self, c: &Vec3) -> Vec3;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NocsFrame {
    pub scale: f64,
    pub offset: Vec3,
}

impl NocsFrame {
    /// Frame of a unit cube centered at the origin.
    pub fn identity_unit_cube() -> Self {
        Self {
            scale: 1.0,
            offset: Vec3::repeat(0.5),
        }
    }
}

impl PointFrame for NocsFrame {
    fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.offset
    }

    fn invert(&self, c: &Vec3) -> Vec3 {
        (c - self.offset) / self.scale
    }
}

pub fn nocs_frame(mesh: &Mesh) -> Result<NocsFrame> {
    let (lo, hi) = mesh.bbox().ok_or(Error::EmptyMesh)?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::ZeroExtent);
    }
    let scale = 1.0 / extent;
    let center = (lo + hi) * 0.5;
    Ok(NocsFrame {
        scale,
        offset: Vec3::repeat(0.5) - center * scale,
    })
}

/// Rotates the ground channels of a unit-cube color by `angle` about (0.5, 0.5).
pub fn rotate_ground(c: &Vec3, angle: f64) -> Vec3 {
    let (s, co) = angle.sin_cos();
    let x = c.x - 0.5;
    let y = c.y - 0.5;
    Vec3::new(co * x - s * y + 0.5, s * x + co * y + 0.5, c.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrocsFrame {
    pub base: NocsFrame,
    pub theta_src: f64,
    pub rescale_scale: f64,
    pub rescale_offset: Vec3,
}

impl CrocsFrame {
    /// Base NOCS followed by the ground rotation, before rescaling.
    pub fn canonical(&self, p: &Vec3) -> Vec3 {
        rotate_ground(&self.base.apply(p), -self.theta_src)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "base_scale={:?}", self.base.scale);
        let o = self.base.offset;
        let _ = writeln!(s, "base_offset={:?} {:?} {:?}", o.x, o.y, o.z);
        let _ = writeln!(s, "theta_src={:?}", self.theta_src);
        let _ = writeln!(s, "rescale_scale={:?}", self.rescale_scale);
        let r = self.rescale_offset;
        let _ = writeln!(s, "rescale_offset={:?} {:?} {:?}", r.x, r.y, r.z);
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("crocs frame: {m}"));
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let nums: Vec<f64> = v
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(format!("{k}: {e}"))))
                .collect::<Result<_>>()?;
            fields.insert(k.trim().to_string(), nums);
        }
        let mut take = |name: &str, n: usize| -> Result<Vec<f64>> {
            let v = fields.remove(name).ok_or_else(|| bad(format!("missing {name}")))?;
            if v.len() != n {
                return Err(bad(format!("{name} expects {n} values")));
            }
            Ok(v)
        };
        let base_scale = take("base_scale", 1)?[0];
        let base_offset = Vec3::from_vec(take("base_offset", 3)?);
        let theta_src = take("theta_src", 1)?[0];
        let rescale_scale = take("rescale_scale", 1)?[0];
        let rescale_offset = Vec3::from_vec(take("rescale_offset", 3)?);
        if let Some(k) = fields.keys().next() {
            return Err(bad(format!("unknown key {k:?}")));
        }
        Ok(Self {
            base: NocsFrame {
                scale: base_scale,
                offset: base_offset,
            },
            theta_src,
            rescale_scale,
            rescale_offset,
        })
    }
}

impl PointFrame for CrocsFrame {
    fn apply(&self, p: &Vec3) -> Vec3 {
        self.canonical(p) * self.rescale_scale + self.rescale_offset
    }

    fn invert(&self, c: &Vec3) -> Vec3 {
        let q = (c - self.rescale_offset) / self.rescale_scale;
        self.base.invert(&rotate_ground(&q, self.theta_src))
    }
}

/// A fitted frame together with the joint observed range before rescaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameFit {
    pub frame: CrocsFrame,
    pub observed_lo: Vec3,
    pub observed_hi: Vec3,
}

/// Isotropic rescale that maps `[lo, hi]` into the unit cube with the widest axis tight.
fn rescale_for(lo: &Vec3, hi: &Vec3) -> (f64, Vec3) {
    let range = (hi - lo).max();
    let scale = if range > 1e-12 { 1.0 / range } else { 1.0 };
    let mid = (lo + hi) * 0.5;
    (scale, Vec3::repeat(0.5) - mid * scale)
}

fn fit_from_points<'a>(
    points: impl Iterator<Item = &'a Vec3>,
    base: NocsFrame,
    theta_src: f64,
    already_canonical: bool,
) -> Result<FrameFit> {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    for p in points {
        let q = if already_canonical {
            *p
        } else {
            rotate_ground(&base.apply(p), -theta_src)
        };
        lo = lo.inf(&q);
        hi = hi.sup(&q);
        any = true;
    }
    if !any {
        return Err(Error::NoForeground);
    }
    let (rescale_scale, rescale_offset) = rescale_for(&lo, &hi);
    Ok(FrameFit {
        frame: CrocsFrame {
            base,
            theta_src,
            rescale_scale,
            rescale_offset,
        },
        observed_lo: lo,
        observed_hi: hi,
    })
}

/// Renders all rig views once and returns the fitted frame with the K CROCS pointmaps.
pub fn fit_and_render(mesh: &Mesh, rig: &RigSpec, size: usize) -> Result<(FrameFit, Vec<Pointmap>)> {
    if rig.k == 0 || rig.targets.len() != rig.k {
        return Err(Error::InvalidRig(format!("{} targets for k={}", rig.targets.len(), rig.k)));
    }
    let base = nocs_frame(mesh)?;
    let frags: Vec<_> = rig.targets.iter().map(|pose| rasterize(mesh, pose, size)).collect();
    let visible = frags.iter().flat_map(|f| {
        f.triangle
            .iter()
            .zip(&f.world)
            .filter(|(t, _)| t.is_some())
            .map(|(_, w)| w)
    });
    let fit = fit_from_points(visible, base, rig.source.theta, false)?;
    let maps = frags.iter().map(|f| pointmap_from_fragments(f, &fit.frame)).collect();
    Ok((fit, maps))
}

pub fn crocs_frame(mesh: &Mesh, rig: &RigSpec, size: usize) -> Result<CrocsFrame> {
    Ok(fit_and_render(mesh, rig, size)?.0.frame)
}

pub fn render_crocs_set(mesh: &Mesh, rig: &RigSpec, size: usize) -> Result<Vec<Pointmap>> {
    Ok(fit_and_render(mesh, rig, size)?.1)
}

/// Converts static-frame NOCS pointmaps into CROCS by rotating and jointly
/// rescaling pixel colors, without re-rasterizing.
pub fn crocs_from_nocs(nocs: &[Pointmap], base: NocsFrame, theta_src: f64) -> Result<(CrocsFrame, Vec<Pointmap>)> {
    let rotated: Vec<Vec<Option<Vec3>>> = nocs
        .iter()
        .map(|pm| {
            pm.pixels()
                .map(|p| {
                    (p[3] > 0.5).then(|| {
                        rotate_ground(&Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64), -theta_src)
                    })
                })
                .collect()
        })
        .collect();
    let fit = fit_from_points(rotated.iter().flatten().flatten(), base, theta_src, true)?;
    let frame = fit.frame;
    let maps = nocs
        .iter()
        .zip(&rotated)
        .map(|(pm, rot)| {
            let mut out = Image::background(pm.width(), pm.height());
            for (i, q) in rot.iter().enumerate() {
                if let Some(q) = q {
                    let c = q * frame.rescale_scale + frame.rescale_offset;
                    out.set_pixel(i % pm.width(), i / pm.width(), [c.x as f32, c.y as f32, c.z as f32, 1.0]);
                }
            }
            out
        })
        .collect();
    Ok((frame, maps))
}

/// Foreground colors of all pointmaps as one point cloud in the shared frame.
pub fn unproject(pointmaps: &[Pointmap]) -> Vec<Vec3> {
    pointmaps
        .iter()
        .flat_map(|pm| pm.pixels().filter(|p| p[3] > 0.5).map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)))
        .collect()
}
