use crate::error::{Error, Result};

/// Background color shared by shaded images, pointmaps and null conditions.
pub const BACKGROUND: [f32; 4] = [0.5, 0.5, 0.5, 0.0];

/// RGBA float image, row-major, top-left origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Pointmap images share the [`Image`] layout: RGB holds object coordinates
/// and alpha marks the foreground.
pub type Pointmap = Image;

impl Image {
    pub const CHANNELS: usize = 4;

    pub fn filled(width: usize, height: usize, value: [f32; 4]) -> Self {
        let mut data = Vec::with_capacity(width * height * 4);
        for _ in 0..width * height {
            data.extend_from_slice(&value);
        }
        Self { width, height, data }
    }

    pub fn background(width: usize, height: usize) -> Self {
        Self::filled(width, height, BACKGROUND)
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 4 {
            return Err(Error::SizeMismatch(format!(
                "{}x{} RGBA needs {} values, got {}",
                width,
                height,
                width * height * 4,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 4] {
        let i = (y * self.width + x) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: [f32; 4]) {
        let i = (y * self.width + x) * 4;
        self.data[i..i + 4].copy_from_slice(&value);
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(4)
    }

    /// Foreground mask at the 0.5 alpha threshold.
    pub fn mask(&self) -> Vec<bool> {
        self.pixels().map(|p| p[3] > 0.5).collect()
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels().filter(|p| p[3] > 0.5).count()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies a `w`×`h` block starting at (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        let mut out = Vec::with_capacity(w * h * 4);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 4;
            out.extend_from_slice(&self.data[start..start + w * 4]);
        }
        Image {
            width: w,
            height: h,
            data: out,
        }
    }

    pub fn paste(&mut self, src: &Image, x0: usize, y0: usize) {
        for y in 0..src.height {
            let dst = ((y0 + y) * self.width + x0) * 4;
            let s = y * src.width * 4;
            self.data[dst..dst + src.width * 4].copy_from_slice(&src.data[s..s + src.width * 4]);
        }
    }
}
