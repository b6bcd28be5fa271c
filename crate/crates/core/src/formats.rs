//! On-disk image formats.
//!
//! Float images (`.upic`): ASCII magic `UPIC`, then little-endian `u16`
//! version, width, height and channel count, then `width*height*channels`
//! little-endian `f32` values in row-major order.
//!
//! Previews are binary PAM (`P7`) with 8-bit RGBA samples.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const FLOAT_MAGIC: &[u8; 4] = b"UPIC";
pub const FLOAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 12;

pub fn encode_float_image(img: &Image) -> Result<Vec<u8>> {
    let dim = |v: usize, name: &str| {
        u16::try_from(v).map_err(|_| Error::Format(format!("{name} {v} does not fit in u16")))
    };
    let w = dim(img.width(), "width")?;
    let h = dim(img.height(), "height")?;
    if !img.is_finite() {
        return Err(Error::Format("image contains non-finite values".into()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + img.data().len() * 4);
    out.extend_from_slice(FLOAT_MAGIC);
    out.extend_from_slice(&FLOAT_VERSION.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&(Image::CHANNELS as u16).to_le_bytes());
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_float_image(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != FLOAT_MAGIC {
        return Err(Error::Format("missing UPIC magic".into()));
    }
    let field = |i: usize| u16::from_le_bytes([bytes[4 + 2 * i], bytes[5 + 2 * i]]) as usize;
    let (version, w, h, c) = (field(0), field(1), field(2), field(3));
    if version != FLOAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    if c != Image::CHANNELS {
        return Err(Error::Format(format!("expected 4 channels, got {c}")));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != w * h * c * 4 {
        return Err(Error::Format(format!(
            "payload is {} bytes, header declares {}",
            payload.len(),
            w * h * c * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite pixel value".into()));
    }
    Image::from_data(w, h, data)
}

pub fn write_float_image(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_float_image(img)?)?;
    Ok(())
}

pub fn read_float_image(path: &Path) -> Result<Image> {
    decode_float_image(&fs::read(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads only the header: (width, height, channels).
pub fn float_image_dims(path: &Path) -> Result<(usize, usize, usize)> {
    let bytes = fs::read(path)?;
    let img = decode_float_image(&bytes)?;
    Ok((img.width(), img.height(), Image::CHANNELS))
}

pub fn encode_pam(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    let _ = write!(
        out,
        "P7\nWIDTH {}\nHEIGHT {}\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n",
        img.width(),
        img.height()
    );
    out.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pam(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_pam(img))?;
    Ok(())
}
