//! Orbit cameras around the object center.
//!
//! World frame is right-handed with +Z up. A camera at azimuth `theta`,
//! elevation `phi` and distance `radius` sits at
//! `radius * (cos phi cos theta, cos phi sin theta, sin phi)` and looks at the
//! origin along its own -Z axis, with image +Y pointing up (no roll).

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_FOV_Y: f64 = 40.0 * PI / 180.0;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub theta: f64,
    pub phi: f64,
    pub radius: f64,
    pub fov_y: f64,
}

impl CameraPose {
    pub fn new(theta: f64, phi: f64, radius: f64) -> Result<Self> {
        Self::with_fov(theta, phi, radius, DEFAULT_FOV_Y)
    }

    pub fn with_fov(theta: f64, phi: f64, radius: f64, fov_y: f64) -> Result<Self> {
        if !(theta.is_finite() && phi.is_finite() && radius.is_finite() && fov_y.is_finite()) {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        if phi.abs() >= PI / 2.0 {
            return Err(Error::InvalidCamera(format!(
                "elevation {phi} is at or beyond a pole; the look-at up vector is degenerate"
            )));
        }
        if radius <= 0.0 {
            return Err(Error::InvalidCamera(format!("radius must be positive, got {radius}")));
        }
        if !(fov_y > 0.0 && fov_y < PI) {
            return Err(Error::InvalidCamera(format!("fov_y {fov_y} outside (0, π)")));
        }
        Ok(Self {
            theta: wrap_angle(theta),
            phi,
            radius,
            fov_y,
        })
    }

    /// Same pose rotated by `delta` about the world vertical axis.
    pub fn rotate_azimuth(&self, delta: f64) -> Self {
        Self {
            theta: wrap_angle(self.theta + delta),
            ..*self
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(cp * ct, cp * st, sp) * self.radius
    }

    /// Rows are the camera's right, up and backward axes in world coordinates.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        let back = Vector3::new(cp * ct, cp * st, sp);
        // up x back, already unit length because |back_xy| = cos phi > 0
        let right = Vector3::new(-st, ct, 0.0);
        let up = back.cross(&right);
        Matrix3::from_rows(&[right.transpose(), up.transpose(), back.transpose()])
    }

    /// 4×4 world-to-camera transform.
    pub fn look_at(&self) -> Matrix4<f64> {
        let r = self.rotation();
        let t = -(r * self.position());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m
    }

    /// Row-major copy of [`CameraPose::look_at`].
    pub fn look_at_rows(&self) -> [[f64; 4]; 4] {
        let m = self.look_at();
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        out
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * (p - self.position())
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * p + self.position()
    }
}

/// Free-function form of [`CameraPose::world_to_camera`].
pub fn world_to_camera(pose: &CameraPose, point: [f64; 3]) -> [f64; 3] {
    let p = pose.look_at().transform_point(&Point3::from(point));
    [p.x, p.y, p.z]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigSpec {
    pub k: usize,
    pub source: CameraPose,
    pub targets: Vec<CameraPose>,
}

/// Target cameras at azimuth offsets `2π i / k` from the source; target 0 is the source.
pub fn make_rig(source: CameraPose, k: usize) -> Result<RigSpec> {
    if k == 0 {
        return Err(Error::InvalidRig("k must be at least 1".into()));
    }
    // Re-validate: the fields are public and may have been edited after construction.
    let source = CameraPose::with_fov(source.theta, source.phi, source.radius, source.fov_y)?;
    let targets = (0..k)
        .map(|i| {
            if i == 0 {
                source
            } else {
                source.rotate_azimuth(TAU * i as f64 / k as f64)
            }
        })
        .collect();
    Ok(RigSpec { k, source, targets })
}

impl RigSpec {
    /// Plain-text `key=value` block used inside dataset manifests.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "k={}", self.k);
        let _ = writeln!(s, "theta={:?}", self.source.theta);
        let _ = writeln!(s, "phi={:?}", self.source.phi);
        let _ = writeln!(s, "radius={:?}", self.source.radius);
        let _ = writeln!(s, "fov_y={:?}", self.source.fov_y);
        s
    }

    /// Parses the block written by [`RigSpec::to_kv`]. Unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut k = None;
        let mut theta = None;
        let mut phi = None;
        let mut radius = None;
        let mut fov_y = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidRig(format!("expected key=value, got {line:?}")))?;
            let num = || {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidRig(format!("{key}: {e}")))
            };
            match key.trim() {
                "k" => {
                    k = Some(value.trim().parse::<usize>().map_err(|e| Error::InvalidRig(format!("k: {e}")))?)
                }
                "theta" => theta = Some(num()?),
                "phi" => phi = Some(num()?),
                "radius" => radius = Some(num()?),
                "fov_y" => fov_y = Some(num()?),
                other => return Err(Error::InvalidRig(format!("unknown key {other:?}"))),
            }
        }
        let missing = |name: &str| Error::InvalidRig(format!("missing key {name}"));
        let source = CameraPose::with_fov(
            theta.ok_or_else(|| missing("theta"))?,
            phi.ok_or_else(|| missing("phi"))?,
            radius.ok_or_else(|| missing("radius"))?,
            fov_y.ok_or_else(|| missing("fov_y"))?,
        )?;
        make_rig(source, k.ok_or_else(|| missing("k"))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRanges {
    pub phi_min: f64,
    pub phi_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for PoseRanges {
    /// Keeps any object with unit longest edge inside the 40° frustum.
    fn default() -> Self {
        Self {
            phi_min: 0.15,
            phi_max: 0.6,
            r_min: 2.6,
            r_max: 3.0,
        }
    }
}

impl PoseRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.phi_min >= 0.0
            && self.phi_min <= self.phi_max
            && self.phi_max < PI / 2.0
            && self.r_min > 0.0
            && self.r_min <= self.r_max
            && self.r_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRange(format!("{self:?}")))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn sample_source_pose(seed: u64, ranges: &PoseRanges) -> Result<CameraPose> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = rng.random_range(0.0..TAU);
    let phi = uniform(&mut rng, ranges.phi_min, ranges.phi_max);
    let radius = uniform(&mut rng, ranges.r_min, ranges.r_max);
    CameraPose::new(theta, phi, radius)
}
