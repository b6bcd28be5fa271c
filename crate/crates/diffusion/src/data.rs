//! Conversion between RGBA superimages and the model's planar tensors.
//!
//! Targets are mapped from `[0, 1]` to `[-1, 1]`. Conditions are stored as the
//! offset from the background color, so the null condition is all zeros.

use unpic_core::image::{Image, BACKGROUND};

use crate::error::{Error, Result};
use crate::model::IMAGE_CHANNELS;

fn planar(img: &Image, f: impl Fn(usize, f32) -> f32) -> Vec<f32> {
    let hw = img.width() * img.height();
    let mut out = vec![0.0; IMAGE_CHANNELS * hw];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..IMAGE_CHANNELS {
            out[c * hw + i] = f(c, px[c]);
        }
    }
    out
}

pub fn encode_target(img: &Image) -> Vec<f32> {
    planar(img, |_, v| 2.0 * v - 1.0)
}

pub fn encode_condition(img: &Image) -> Vec<f32> {
    planar(img, |c, v| v - BACKGROUND[c])
}

/// Inverse of `encode_target`, clamped to `[0, 1]`.
pub fn decode_target(x: &[f32], width: usize, height: usize) -> Result<Image> {
    let hw = width * height;
    if x.len() != IMAGE_CHANNELS * hw {
        return Err(Error::Shape(format!("{} values for a {width}x{height} image", x.len())));
    }
    let mut data = vec![0.0; IMAGE_CHANNELS * hw];
    for i in 0..hw {
        for c in 0..IMAGE_CHANNELS {
            data[i * IMAGE_CHANNELS + c] = ((x[c * hw + i] + 1.0) * 0.5).clamp(0.0, 1.0);
        }
    }
    Ok(Image::from_data(width, height, data)?)
}

/// Makes alpha binary: foreground pixels get alpha 1, the rest become background.
pub fn snap_foreground(img: &mut Image) {
    for px in img.data_mut().chunks_mut(IMAGE_CHANNELS) {
        if px[3] > 0.5 {
            px[3] = 1.0;
        } else {
            px.copy_from_slice(&BACKGROUND);
        }
    }
}

/// One training pair in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub conds: Vec<Vec<f32>>,
    pub target: Vec<f32>,
}

impl TrainExample {
    pub fn new(conds: &[&Image], target: &Image) -> Result<Self> {
        if let Some(c) = conds.iter().find(|c| !c.same_size(target)) {
            return Err(Error::Shape(format!(
                "condition {}x{} vs target {}x{}",
                c.width(),
                c.height(),
                target.width(),
                target.height()
            )));
        }
        Ok(Self {
            conds: conds.iter().map(|c| encode_condition(c)).collect(),
            target: encode_target(target),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_is_the_zero_condition() {
        assert!(encode_condition(&Image::background(3, 2)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn target_round_trip() {
        let data: Vec<f32> = (0..2 * 3 * 4).map(|i| i as f32 / 24.0).collect();
        let img = Image::from_data(2, 3, data).unwrap();
        let back = decode_target(&encode_target(&img), 2, 3).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(decode_target(&[0.0; 5], 2, 3).is_err());
    }

    #[test]
    fn planar_layout() {
        let mut img = Image::background(2, 1);
        img.set_pixel(1, 0, [0.1, 0.2, 0.3, 1.0]);
        let x = encode_target(&img);
        assert!((x[1] - (-0.8)).abs() < 1e-6);
        assert!((x[7] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn snapping() {
        let mut img = Image::filled(2, 1, [0.2, 0.3, 0.4, 0.7]);
        img.set_pixel(0, 0, [0.9, 0.9, 0.9, 0.2]);
        snap_foreground(&mut img);
        assert_eq!(img.pixel(0, 0), BACKGROUND);
        assert_eq!(img.pixel(1, 0), [0.2, 0.3, 0.4, 1.0]);
    }
}
