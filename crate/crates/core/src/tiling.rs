//! Superimage tiling.
//!
//! K views are laid out clockwise on a 2-row grid: the top row holds views
//! `0..K/2` left to right and the bottom row holds the rest right to left, so
//! walking the grid border visits the cameras in azimuth order. View 0 (the
//! source pose) sits in the top-left tile. K = 1 is a single tile.
//!
//! Only the border walk is azimuth-adjacent. For K = 8, the interior vertical
//! pairs (tiles of views 1/6 and 2/5) are grid neighbours but not camera
//! neighbours; no layout of eight views on a 2×4 grid can make all ten grid
//! adjacencies cyclic neighbours.

use crate::error::{Error, Result};
use crate::image::{Image, BACKGROUND};

#[derive(Debug, Clone, PartialEq)]
pub struct SuperImage {
    pub k: usize,
    pub rows: usize,
    pub cols: usize,
    pub tile_w: usize,
    pub tile_h: usize,
    pub image: Image,
}

pub fn grid_for(k: usize) -> Result<(usize, usize)> {
    match k {
        1 => Ok((1, 1)),
        4 => Ok((2, 2)),
        8 => Ok((2, 4)),
        other => Err(Error::UnsupportedViewCount(other)),
    }
}

/// Grid cell (row, col) holding `view`.
pub fn tile_position(k: usize, view: usize) -> Result<(usize, usize)> {
    let (rows, cols) = grid_for(k)?;
    if view >= k {
        return Err(Error::InvalidInput(format!("view {view} out of range for k={k}")));
    }
    Ok(if rows == 1 || view < cols {
        (0, view)
    } else {
        (1, k - 1 - view)
    })
}

/// View index stored at each grid cell, row-major.
pub fn layout(k: usize) -> Result<Vec<Vec<usize>>> {
    let (rows, cols) = grid_for(k)?;
    let mut grid = vec![vec![0; cols]; rows];
    for v in 0..k {
        let (r, c) = tile_position(k, v)?;
        grid[r][c] = v;
    }
    Ok(grid)
}

/// Grid-adjacent cell pairs that lie on the clockwise border walk.
pub fn cycle_edges(k: usize) -> Result<Vec<((usize, usize), (usize, usize))>> {
    let (rows, cols) = grid_for(k)?;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            edges.push(((r, c), (r, c + 1)));
        }
    }
    if rows == 2 {
        edges.push(((0, 0), (1, 0)));
        if cols > 1 {
            edges.push(((0, cols - 1), (1, cols - 1)));
        }
    }
    Ok(edges)
}

impl SuperImage {
    /// Wraps an existing image whose dimensions must divide evenly into the grid for `k`.
    pub fn from_image(image: Image, k: usize) -> Result<Self> {
        let (rows, cols) = grid_for(k)?;
        if image.width() % cols != 0 || image.height() % rows != 0 {
            return Err(Error::SizeMismatch(format!(
                "{}x{} image does not divide into a {rows}x{cols} grid",
                image.width(),
                image.height()
            )));
        }
        Ok(Self {
            k,
            rows,
            cols,
            tile_w: image.width() / cols,
            tile_h: image.height() / rows,
            image,
        })
    }

    /// All tiles set to the background (the null condition).
    pub fn blank(k: usize, tile_w: usize, tile_h: usize) -> Result<Self> {
        let (rows, cols) = grid_for(k)?;
        Self::from_image(Image::background(tile_w * cols, tile_h * rows), k)
    }

    pub fn tile(&self, view: usize) -> Result<Image> {
        let (r, c) = tile_position(self.k, view)?;
        Ok(self.image.crop(c * self.tile_w, r * self.tile_h, self.tile_w, self.tile_h))
    }

    pub fn set_tile(&mut self, view: usize, img: &Image) -> Result<()> {
        if img.width() != self.tile_w || img.height() != self.tile_h {
            return Err(Error::SizeMismatch(format!(
                "tile is {}x{}, got {}x{}",
                self.tile_w,
                self.tile_h,
                img.width(),
                img.height()
            )));
        }
        let (r, c) = tile_position(self.k, view)?;
        self.image.paste(img, c * self.tile_w, r * self.tile_h);
        Ok(())
    }
}

pub fn pack(views: &[Image]) -> Result<SuperImage> {
    let k = views.len();
    grid_for(k)?;
    let (w, h) = (views[0].width(), views[0].height());
    if let Some(bad) = views.iter().position(|v| v.width() != w || v.height() != h) {
        return Err(Error::SizeMismatch(format!("view {bad} differs in size from view 0")));
    }
    let mut s = SuperImage::blank(k, w, h)?;
    for (i, v) in views.iter().enumerate() {
        s.set_tile(i, v)?;
    }
    Ok(s)
}

pub fn unpack(s: &SuperImage) -> Result<Vec<Image>> {
    let (rows, cols) = grid_for(s.k)?;
    if s.image.width() != cols * s.tile_w || s.image.height() != rows * s.tile_h {
        return Err(Error::SizeMismatch(format!(
            "{}x{} image is not a {rows}x{cols} grid of {}x{} tiles",
            s.image.width(),
            s.image.height(),
            s.tile_w,
            s.tile_h
        )));
    }
    (0..s.k).map(|v| s.tile(v)).collect()
}

/// Source image in the view-0 tile, every other tile empty.
pub fn source_superimage(source: &Image, k: usize) -> Result<SuperImage> {
    let mut s = SuperImage::blank(k, source.width(), source.height())?;
    s.set_tile(0, source)?;
    Ok(s)
}

/// True when the tile holds only background pixels.
pub fn tile_is_empty(s: &SuperImage, view: usize) -> Result<bool> {
    Ok(s.tile(view)?.pixels().all(|p| p == BACKGROUND))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f32, w: usize, h: usize) -> Image {
        Image::filled(w, h, [v, v, v, 1.0])
    }

    #[test]
    fn layout_of_eight_is_clockwise() {
        assert_eq!(layout(8).unwrap(), vec![vec![0, 1, 2, 3], vec![7, 6, 5, 4]]);
        assert_eq!(layout(4).unwrap(), vec![vec![0, 1], vec![3, 2]]);
        assert_eq!(layout(1).unwrap(), vec![vec![0]]);
    }

    #[test]
    fn constant_views_land_in_their_tiles() {
        let views: Vec<Image> = (0..8).map(|k| constant(k as f32 / 8.0, 5, 3)).collect();
        let s = pack(&views).unwrap();
        assert_eq!((s.image.width(), s.image.height()), (20, 6));
        let block = s.image.crop(10, 0, 5, 3);
        assert!(block.pixels().all(|p| p[0] == 2.0 / 8.0));
        let block = s.image.crop(15, 3, 5, 3);
        assert!(block.pixels().all(|p| p[0] == 4.0 / 8.0));
    }

    #[test]
    fn single_view_superimage_is_the_view() {
        let v = constant(0.3, 6, 6);
        assert_eq!(pack(std::slice::from_ref(&v)).unwrap().image, v);
        assert_eq!(source_superimage(&v, 1).unwrap().image, v);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(pack(&[constant(0.1, 4, 4), constant(0.1, 4, 4)]), Err(Error::UnsupportedViewCount(2))));
        let mut views: Vec<Image> = (0..4).map(|_| constant(0.1, 4, 4)).collect();
        views[2] = constant(0.1, 5, 4);
        assert!(matches!(pack(&views), Err(Error::SizeMismatch(_))));
        assert!(SuperImage::from_image(Image::background(10, 4), 8).is_err());
        let mut s = pack(&(0..4).map(|_| constant(0.1, 4, 4)).collect::<Vec<_>>()).unwrap();
        s.tile_w = 3;
        assert!(unpack(&s).is_err());
    }

    #[test]
    fn corrupting_one_tile_changes_one_view() {
        let views: Vec<Image> = (0..8).map(|k| constant(k as f32 / 10.0, 4, 4)).collect();
        let mut s = pack(&views).unwrap();
        let (r, c) = tile_position(8, 6).unwrap();
        s.image.set_pixel(c * 4 + 1, r * 4 + 2, [0.9, 0.9, 0.9, 1.0]);
        let back = unpack(&s).unwrap();
        let changed: Vec<usize> = (0..8).filter(|&i| back[i] != views[i]).collect();
        assert_eq!(changed, vec![6]);
    }

    #[test]
    fn border_walk_steps_one_azimuth_at_a_time() {
        for k in [4, 8] {
            let grid = layout(k).unwrap();
            let edges = cycle_edges(k).unwrap();
            assert_eq!(edges.len(), k);
            for ((r0, c0), (r1, c1)) in edges {
                let (a, b) = (grid[r0][c0], grid[r1][c1]);
                let step = (a + k - b) % k;
                assert!(step == 1 || step == k - 1, "views {a} and {b}");
            }
            // the walk is a Hamiltonian cycle: every view has exactly two cycle neighbours
            let mut degree = vec![0; k];
            for ((r0, c0), (r1, c1)) in cycle_edges(k).unwrap() {
                degree[grid[r0][c0]] += 1;
                degree[grid[r1][c1]] += 1;
            }
            assert!(degree.iter().all(|&d| d == 2));
        }
    }

    #[test]
    fn source_superimage_has_empty_tiles() {
        let src = constant(0.7, 6, 6);
        let s = source_superimage(&src, 8).unwrap();
        let empty = (0..8).filter(|&v| tile_is_empty(&s, v).unwrap()).count();
        assert_eq!(empty, 7);
        assert_eq!(unpack(&s).unwrap()[0], src);
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(k in prop::sample::select(vec![1usize, 4, 8]), w in 1usize..7, h in 1usize..7, seed in any::<u64>()) {
            let views: Vec<Image> = (0..k)
                .map(|v| {
                    let data = (0..w * h * 4)
                        .map(|i| ((seed.wrapping_mul(31).wrapping_add((v * 1000 + i) as u64) % 997) as f32) / 997.0)
                        .collect();
                    Image::from_data(w, h, data).unwrap()
                })
                .collect();
            let back = unpack(&pack(&views).unwrap()).unwrap();
            prop_assert_eq!(back, views);
        }
    }
}
