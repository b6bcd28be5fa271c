//! Triangle meshes and procedural assets.
//!
//! Every generated mesh has its axis-aligned bounding box centered at the
//! origin and its vertical axis along world +Z. Albedo is one flat RGB color
//! per triangle, drawn from a palette seeded by the asset spec.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Azimuthal tessellation of solids of revolution.
pub const REVOLUTION_SEGMENTS: usize = 48;
/// Latitude bands of the UV sphere.
pub const SPHERE_RINGS: usize = 24;
/// Triangles with area at or below this are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;
/// Azimuth at which cup handles are attached.
pub const CUP_HANDLE_AZIMUTH: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub face_albedo: Vec<[f32; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, face_albedo: Vec<[f32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
            face_albedo,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            face_albedo: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.face_albedo.len() != self.triangles.len() {
            return Err(Error::InvalidAsset(format!(
                "{} albedo entries for {} triangles",
                self.face_albedo.len(),
                self.triangles.len()
            )));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= self.vertices.len()) {
                return Err(Error::InvalidAsset(format!("triangle {i} has an out-of-range index")));
            }
            if self.triangle_area(i) <= DEGENERATE_AREA {
                return Err(Error::InvalidAsset(format!("triangle {i} is degenerate")));
            }
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidAsset("non-finite vertex".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[tri];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal following the triangle's winding.
    pub fn triangle_normal(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Bounding box over vertices referenced by at least one triangle.
    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        let mut used = self.triangles.iter().flatten().map(|&i| self.vertices[i as usize]);
        let first = used.next()?;
        Some(used.fold((first, first), |(lo, hi), v| (lo.inf(&v), hi.sup(&v))))
    }

    pub fn translate(&mut self, offset: &Vec3) {
        for v in &mut self.vertices {
            *v += offset;
        }
    }

    /// Moves the bounding box center to the origin.
    pub fn recenter(&mut self) {
        if let Some((lo, hi)) = self.bbox() {
            let c = (lo + hi) * 0.5;
            self.translate(&-c);
        }
    }

    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        self.face_albedo.extend_from_slice(&other.face_albedo);
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssetKind {
    Cuboid { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    Cup { radius: f64, height: f64 },
    CupNoHandle { radius: f64, height: f64 },
    /// Children are generated independently, translated by their offsets and
    /// merged; the union is recentered.
    Composite { children: Vec<(AssetSpec, [f64; 3])> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetSpec {
    pub kind: AssetKind,
    pub seed: u64,
}

impl AssetSpec {
    pub fn new(kind: AssetKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |vals: &[f64]| vals.iter().all(|v| v.is_finite() && *v > 0.0);
        let ok = match &self.kind {
            AssetKind::Cuboid { size } => positive(size),
            AssetKind::Cylinder { radius, height }
            | AssetKind::Cup { radius, height }
            | AssetKind::CupNoHandle { radius, height } => positive(&[*radius, *height]),
            AssetKind::Sphere { radius } => positive(&[*radius]),
            AssetKind::Composite { children } => {
                if !(2..=5).contains(&children.len()) {
                    return Err(Error::InvalidAsset(format!(
                        "composite needs 2-5 children, got {}",
                        children.len()
                    )));
                }
                for (child, offset) in children {
                    if matches!(child.kind, AssetKind::Composite { .. }) {
                        return Err(Error::InvalidAsset("nested composites are not supported".into()));
                    }
                    if offset.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidAsset("non-finite child offset".into()));
                    }
                    child.validate()?;
                }
                true
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidAsset(format!("non-positive dimensions in {:?}", self.kind)))
        }
    }
}

struct Palette {
    rng: ChaCha8Rng,
    base: [f32; 3],
}

impl Palette {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let base = [
            rng.random_range(0.2f32..0.95),
            rng.random_range(0.2f32..0.95),
            rng.random_range(0.2f32..0.95),
        ];
        Self { rng, base }
    }

    fn next(&mut self) -> [f32; 3] {
        let jitter = self.rng.random_range(0.9f32..1.1);
        self.base.map(|c| (c * jitter).clamp(0.0, 1.0))
    }
}

/// Accumulates triangles with palette colors.
struct Builder {
    mesh: Mesh,
    palette: Palette,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self {
            mesh: Mesh::empty(),
            palette: Palette::new(seed),
        }
    }

    fn vertex(&mut self, v: Vec3) -> u32 {
        self.mesh.vertices.push(v);
        (self.mesh.vertices.len() - 1) as u32
    }

    fn tri(&mut self, a: u32, b: u32, c: u32) {
        self.mesh.triangles.push([a, b, c]);
        let color = self.palette.next();
        self.mesh.face_albedo.push(color);
    }

    /// Quad with counter-clockwise winding seen from outside.
    fn quad(&mut self, a: u32, b: u32, c: u32, d: u32) {
        self.tri(a, b, c);
        self.tri(a, c, d);
    }

    /// Box spanned by `center ± u*hu ± v*hv ± w*hw` with a right-handed (u, v, w).
    fn oriented_box(&mut self, center: Vec3, axes: [Vec3; 3], half: [f64; 3]) {
        let [u, v, w] = axes;
        let mut idx = [0u32; 8];
        for (i, slot) in idx.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *slot = self.vertex(center + u * (sx * half[0]) + v * (sy * half[1]) + w * (sz * half[2]));
        }
        // -w, +w, -v, +v, -u, +u
        self.quad(idx[0], idx[2], idx[3], idx[1]);
        self.quad(idx[4], idx[5], idx[7], idx[6]);
        self.quad(idx[0], idx[1], idx[5], idx[4]);
        self.quad(idx[2], idx[6], idx[7], idx[3]);
        self.quad(idx[0], idx[4], idx[6], idx[2]);
        self.quad(idx[1], idx[3], idx[7], idx[5]);
    }

    fn cylinder(&mut self, radius: f64, height: f64) {
        let n = REVOLUTION_SEGMENTS;
        let h = height / 2.0;
        let ring = |b: &mut Builder, z: f64| -> Vec<u32> {
            (0..n)
                .map(|i| {
                    let a = TAU * i as f64 / n as f64;
                    b.vertex(Vec3::new(radius * a.cos(), radius * a.sin(), z))
                })
                .collect()
        };
        let bottom = ring(self, -h);
        let top = ring(self, h);
        for i in 0..n {
            let j = (i + 1) % n;
            self.quad(bottom[i], bottom[j], top[j], top[i]);
        }
        let cb = self.vertex(Vec3::new(0.0, 0.0, -h));
        let ct = self.vertex(Vec3::new(0.0, 0.0, h));
        for i in 0..n {
            let j = (i + 1) % n;
            self.tri(cb, bottom[j], bottom[i]);
            self.tri(ct, top[i], top[j]);
        }
    }

    fn sphere(&mut self, radius: f64) {
        let n = REVOLUTION_SEGMENTS;
        let m = SPHERE_RINGS;
        let south = self.vertex(Vec3::new(0.0, 0.0, -radius));
        let rings: Vec<Vec<u32>> = (1..m)
            .map(|r| {
                let lat = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * r as f64 / m as f64;
                (0..n)
                    .map(|i| {
                        let a = TAU * i as f64 / n as f64;
                        self.vertex(Vec3::new(
                            radius * lat.cos() * a.cos(),
                            radius * lat.cos() * a.sin(),
                            radius * lat.sin(),
                        ))
                    })
                    .collect()
            })
            .collect();
        let north = self.vertex(Vec3::new(0.0, 0.0, radius));
        for i in 0..n {
            let j = (i + 1) % n;
            self.tri(south, rings[0][j], rings[0][i]);
        }
        for band in rings.windows(2) {
            let (lo, hi) = (&band[0], &band[1]);
            for i in 0..n {
                let j = (i + 1) % n;
                self.quad(lo[i], lo[j], hi[j], hi[i]);
            }
        }
        let last = rings.last().expect("sphere has at least one ring");
        for i in 0..n {
            let j = (i + 1) % n;
            self.tri(north, last[i], last[j]);
        }
    }

    /// C-shaped handle at [`CUP_HANDLE_AZIMUTH`]. It reaches out along the
    /// bounding-square diagonal and stays inside the body's bounding box, so
    /// the cup with and without handle share bbox, placement and NOCS frame.
    fn handle(&mut self, radius: f64, height: f64) {
        let thickness = 0.2 * radius;
        let outer = SQRT_2 * radius - thickness / 2.0 - 0.02 * radius;
        let inner = 0.9 * radius;
        let (z_lo, z_hi) = (-0.3 * height, 0.15 * height);
        let arm = 0.12 * height;
        let grip = 0.1 * radius;

        let u = Vec3::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0);
        let w = Vec3::z();
        let v = w.cross(&u);
        let axes = [u, v, w];
        let half_t = thickness / 2.0;
        let radial_mid = (inner + outer) / 2.0;
        let radial_half = (outer - inner) / 2.0;
        // upper and lower arms
        self.oriented_box(u * radial_mid + w * (z_hi - arm / 2.0), axes, [radial_half, half_t, arm / 2.0]);
        self.oriented_box(u * radial_mid + w * (z_lo + arm / 2.0), axes, [radial_half, half_t, arm / 2.0]);
        // vertical grip between the arms
        let grip_h = (z_hi - z_lo - 2.0 * arm) / 2.0;
        self.oriented_box(
            u * (outer - grip / 2.0) + w * ((z_hi + z_lo) / 2.0),
            axes,
            [grip / 2.0, half_t, grip_h],
        );
    }
}

/// Deterministic mesh for an asset spec.
pub fn generate(spec: &AssetSpec) -> Result<Mesh> {
    spec.validate()?;
    let mut b = Builder::new(spec.seed);
    match &spec.kind {
        AssetKind::Cuboid { size } => {
            b.oriented_box(Vec3::zeros(), [Vec3::x(), Vec3::y(), Vec3::z()], size.map(|s| s / 2.0));
        }
        AssetKind::Cylinder { radius, height } => b.cylinder(*radius, *height),
        AssetKind::Sphere { radius } => b.sphere(*radius),
        AssetKind::Cup { radius, height } => {
            b.cylinder(*radius, *height);
            b.handle(*radius, *height);
        }
        AssetKind::CupNoHandle { radius, height } => b.cylinder(*radius, *height),
        AssetKind::Composite { children } => {
            let mut parts = Vec::with_capacity(children.len());
            for (child, offset) in children {
                let mut m = generate(child)?;
                m.translate(&Vec3::from(*offset));
                parts.push(m);
            }
            for i in 0..parts.len() {
                for j in i + 1..parts.len() {
                    let (a_lo, a_hi) = parts[i].bbox().ok_or(Error::EmptyMesh)?;
                    let (b_lo, b_hi) = parts[j].bbox().ok_or(Error::EmptyMesh)?;
                    let overlap = (0..3).all(|ax| a_lo[ax] < b_hi[ax] && b_lo[ax] < a_hi[ax]);
                    if overlap {
                        return Err(Error::InvalidAsset(format!(
                            "composite children {i} and {j} have overlapping bounding boxes"
                        )));
                    }
                }
            }
            for p in &parts {
                b.mesh.append(p);
            }
        }
    }
    let mut mesh = b.mesh;
    mesh.recenter();
    mesh.validate()?;
    Ok(mesh)
}

/// `n` points distributed uniformly by area over the surface.
pub fn surface_sample(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for i in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(i);
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..n)
        .map(|_| {
            let target = rng.random_range(0.0..acc);
            let tri = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
            let [a, b, c] = mesh.corners(tri);
            let s = rng.random::<f64>().sqrt();
            let r = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r)
        })
        .collect();
    Ok(out)
}
