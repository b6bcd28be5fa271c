//! Image and point-cloud metrics.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::Image;

type Vec3 = Vector3<f64>;

pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Above this many points per cloud, Chamfer uses a uniform grid.
pub const CHAMFER_BRUTE_FORCE_LIMIT: usize = 50_000;

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(Error::SizeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

/// Mean squared error over all RGBA values.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for data in `[0, 1]`.
pub fn psnr(mse: f64) -> f64 {
    10.0 * (1.0 / mse).log10()
}

/// IoU of the `alpha > 0.5` masks; 1 when both are empty.
pub fn mask_iou(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, q) in a.pixels().zip(b.pixels()) {
        let (x, y) = (p[3] > 0.5, q[3] > 0.5);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean SSIM over all 8×8 windows (stride 1) of the RGB channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!("{w}x{h} image is smaller than the SSIM window")));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let p = a.data()[(y * w + x) * 4 + ch] as f64;
                        let q = b.data()[(y * w + x) * 4 + ch] as f64;
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Fixed appearance embedding: 8×8 average-pooled luminance followed by
/// 16-bin per-channel foreground color histograms, L2-normalized.
pub fn embed(img: &Image) -> Vec<f64> {
    const POOL: usize = 8;
    const BINS: usize = 16;
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0.0; POOL * POOL + 3 * BINS];
    for by in 0..POOL {
        let (y0, y1) = (by * h / POOL, ((by + 1) * h / POOL).max(by * h / POOL + 1).min(h));
        for bx in 0..POOL {
            let (x0, x1) = (bx * w / POOL, ((bx + 1) * w / POOL).max(bx * w / POOL + 1).min(w));
            let mut sum = 0.0;
            let mut n = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = img.pixel(x, y);
                    sum += 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                    n += 1;
                }
            }
            out[by * POOL + bx] = if n > 0 { sum / n as f64 } else { 0.0 };
        }
    }
    let hist = &mut out[POOL * POOL..];
    let mut fg = 0usize;
    for p in img.pixels().filter(|p| p[3] > 0.5) {
        fg += 1;
        for ch in 0..3 {
            let bin = ((p[ch].clamp(0.0, 1.0) * BINS as f32) as usize).min(BINS - 1);
            hist[ch * BINS + bin] += 1.0;
        }
    }
    if fg > 0 {
        hist.iter_mut().for_each(|v| *v /= fg as f64);
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Mean of the K×K pairwise embedding distance matrix (diagonal included).
pub fn mv_consistency(views: &[Image]) -> Result<f64> {
    if views.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 views, got {}", views.len())));
    }
    let emb: Vec<Vec<f64>> = views.iter().map(embed).collect();
    let k = emb.len();
    let mut total = 0.0;
    for a in &emb {
        for b in &emb {
            total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (k * k) as f64)
}

fn mean_nearest_sq_brute(from: &[Vec3], to: &[Vec3]) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|a| to.iter().map(|b| (a - b).norm_squared()).fold(f64::INFINITY, f64::min))
        .sum();
    sum / from.len() as f64
}

/// Uniform grid over a point set for exact nearest-neighbour queries.
struct Grid<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Vec3]) -> Self {
        let lo = points.iter().fold(Vec3::repeat(f64::INFINITY), |a, b| a.inf(b));
        let hi = points.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, b| a.sup(b));
        let ext = (hi - lo).map(|e| e.max(1e-9));
        // about two points per cell
        let cell = (ext.x * ext.y * ext.z * 2.0 / points.len() as f64).cbrt().max(ext.max() / 256.0);
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).min(1024));
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncell + 1];
        let keys: Vec<usize> = points.iter().map(|p| grid.key(&grid.coords(p))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    fn coords(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor() as i64;
            c.clamp(0, self.dims[a] as i64 - 1)
        })
    }

    fn key(&self, c: &[i64; 3]) -> usize {
        (c[2] as usize * self.dims[1] + c[1] as usize) * self.dims[0] + c[0] as usize
    }

    fn nearest_sq(&self, q: &Vec3) -> f64 {
        let c = self.coords(q);
        let mut best = f64::INFINITY;
        let max_ring = self.dims.iter().copied().max().unwrap_or(1) as i64;
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let cc = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|a| cc[a] < 0 || cc[a] >= self.dims[a] as i64) {
                            continue;
                        }
                        let k = self.key(&cc);
                        for &i in &self.order[self.starts[k]..self.starts[k + 1]] {
                            best = best.min((q - self.points[i]).norm_squared());
                        }
                    }
                }
            }
            // Cells beyond this ring are at least `ring * cell` away from any
            // point inside the query's cell. Queries outside the grid box are
            // clamped, so fall back to the distance to the box itself.
            let outside = (0..3)
                .map(|a| {
                    let lo = self.origin[a];
                    let hi = self.origin[a] + self.dims[a] as f64 * self.cell;
                    (lo - q[a]).max(q[a] - hi).max(0.0)
                })
                .fold(0.0, f64::max);
            let reach = (ring as f64 * self.cell - outside).max(0.0);
            if best <= reach * reach {
                break;
            }
        }
        best
    }
}

fn mean_nearest_sq_grid(from: &[Vec3], to: &[Vec3]) -> f64 {
    let grid = Grid::new(to);
    from.iter().map(|a| grid.nearest_sq(a)).sum::<f64>() / from.len() as f64
}

fn check_clouds(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(Error::InvalidInput("chamfer distance needs two non-empty clouds".into()))
    } else {
        Ok(())
    }
}

/// Symmetric Chamfer distance: the average of both mean nearest-neighbour squared distances.
pub fn chamfer_brute(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check_clouds(a, b)?;
    Ok(0.5 * (mean_nearest_sq_brute(a, b) + mean_nearest_sq_brute(b, a)))
}

pub fn chamfer_grid(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check_clouds(a, b)?;
    Ok(0.5 * (mean_nearest_sq_grid(a, b) + mean_nearest_sq_grid(b, a)))
}

pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len().max(b.len()) <= CHAMFER_BRUTE_FORCE_LIMIT {
        chamfer_brute(a, b)
    } else {
        chamfer_grid(a, b)
    }
}

/// Euclidean distance from `p` to a closed triangle.
pub fn point_triangle_distance(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_image(w: usize, h: usize, on: &[(usize, usize)]) -> Image {
        let mut img = Image::background(w, h);
        for &(x, y) in on {
            img.set_pixel(x, y, [1.0, 1.0, 1.0, 1.0]);
        }
        img
    }

    fn noise_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 4).map(|i| if i % 4 == 3 { 1.0 } else { rng.random::<f32>() }).collect();
        Image::from_data(w, h, data).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = mask_image(2, 2, &[(0, 0), (1, 0)]);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let b = mask_image(2, 2, &[(0, 1), (1, 1)]);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        // A = {(0,0),(0,1)}, B = {(0,1),(1,1)} with (row, col) indexing
        let a = mask_image(2, 2, &[(0, 0), (1, 0)]);
        let b = mask_image(2, 2, &[(1, 0), (1, 1)]);
        assert!((mask_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou(&Image::background(3, 3), &Image::background(3, 3)).unwrap(), 1.0);
        assert!(mask_iou(&a, &Image::background(3, 2)).is_err());
    }

    #[test]
    fn iou_symmetric_and_monotone_under_erosion() {
        let full: Vec<(usize, usize)> = (0..6).flat_map(|x| (0..6).map(move |y| (x, y))).collect();
        let a = mask_image(6, 6, &full);
        let b = mask_image(6, 6, &full[..18]);
        let mut last = mask_iou(&a, &b).unwrap();
        assert_eq!(last, mask_iou(&b, &a).unwrap());
        for n in (0..18).rev() {
            let eroded = mask_image(6, 6, &full[..n]);
            let v = mask_iou(&a, &eroded).unwrap();
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn ssim_cases() {
        let a = noise_image(1, 12, 12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut inv = a.clone();
        for (i, v) in inv.data_mut().iter_mut().enumerate() {
            if i % 4 != 3 {
                *v = 1.0 - *v;
            }
        }
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        let ca = Image::filled(10, 10, [0.2, 0.2, 0.2, 1.0]);
        let cb = Image::filled(10, 10, [0.7, 0.7, 0.7, 1.0]);
        let (ma, mb) = (0.2f32 as f64, 0.7f32 as f64);
        let expect = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        assert!((ssim(&ca, &cb).unwrap() - expect).abs() < 1e-9);
        assert!(ssim(&Image::background(7, 9), &Image::background(7, 9)).is_err());
    }

    #[test]
    fn psnr_identity() {
        let a = noise_image(2, 8, 8);
        let b = noise_image(3, 8, 8);
        let m = mse(&a, &b).unwrap();
        assert!((psnr(m) - 10.0 * (1.0 / m).log10()).abs() < 1e-12);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn consistency_cases() {
        let a = noise_image(4, 16, 16);
        assert_eq!(mv_consistency(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
        let views: Vec<Image> = (0..4)
            .map(|i| Image::filled(16, 16, [0.2 + 0.05 * i as f32, 0.4, 0.5, 1.0]))
            .collect();
        let base = mv_consistency(&views).unwrap();
        let mut rev = views.clone();
        rev.reverse();
        assert!((mv_consistency(&rev).unwrap() - base).abs() < 1e-12);
        let mut noisy = views.clone();
        noisy[2] = noise_image(9, 16, 16);
        assert!(mv_consistency(&noisy).unwrap() > base);
        assert!(mv_consistency(&views[..1]).is_err());
    }

    #[test]
    fn chamfer_of_shifted_corners() {
        let corners: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let d = 0.1;
        let shifted: Vec<Vec3> = corners.iter().map(|c| c + Vec3::new(d, 0.0, 0.0)).collect();
        assert!((chamfer(&corners, &shifted).unwrap() - d * d).abs() < 1e-15);
        assert_eq!(chamfer(&corners, &corners).unwrap(), 0.0);
        assert!(chamfer(&corners, &[]).is_err());
    }

    #[test]
    fn point_triangle_distance_regions() {
        let tri = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!((point_triangle_distance(&Vec3::new(0.2, 0.2, 0.5), &tri) - 0.5).abs() < 1e-15);
        assert!((point_triangle_distance(&Vec3::new(-1.0, -1.0, 0.0), &tri) - 2f64.sqrt()).abs() < 1e-15);
        assert!((point_triangle_distance(&Vec3::new(1.0, 1.0, 0.0), &tri) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((point_triangle_distance(&Vec3::new(0.5, -2.0, 0.0), &tri) - 2.0).abs() < 1e-15);
    }

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::new(rng.random(), rng.random::<f64>() * 0.3, rng.random::<f64>() * 2.0 - 1.0)).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn grid_chamfer_equals_brute_force(seed in any::<u64>(), n in 1usize..2000, m in 1usize..2000) {
            let a = cloud(seed, n);
            let b = cloud(seed ^ 0xabcdef, m);
            let brute = chamfer_brute(&a, &b).unwrap();
            let grid = chamfer_grid(&a, &b).unwrap();
            prop_assert!((brute - grid).abs() <= 1e-12, "{} vs {}", brute, grid);
            prop_assert_eq!(brute, chamfer_brute(&b, &a).unwrap());
        }
    }
}
