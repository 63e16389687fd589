//! Image files (PNG, binary PPM/PGM) and Middlebury `.flo` optical flow.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Image;

/// A two-channel `(u, v)` displacement field.
pub type FlowField = Image;

pub const FLO_MAGIC: f32 = 202021.25;

fn image_err(e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(e) => Error::Io(e),
        other => Error::Format(other.to_string()),
    }
}

/// Reads an 8-bit image into `[0, 1]`. Greyscale files give one channel,
/// everything else three (alpha is dropped).
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let format = image::guess_format(&bytes).map_err(image_err)?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(image_err)?;
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let (w, h) = (img.width() as usize, img.height() as usize);
    if gray {
        let buf = img.to_luma8();
        Image::from_vec(h, w, 1, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
    } else {
        let buf = img.to_rgb8();
        Image::from_vec(h, w, 3, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
    }
}

/// Writes a one- or three-channel image, clamped to `[0, 1]` and quantized
/// to 8 bits. The format follows the extension (`png`, `ppm`, `pgm`).
pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => ImageFormat::Png,
        Some("ppm") | Some("pgm") | Some("pnm") => ImageFormat::Pnm,
        other => return Err(Error::Format(format!("unsupported image extension {other:?}"))),
    };
    let bytes: Vec<u8> = img.as_slice().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("buffer size")),
        3 => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("buffer size")),
        c => return Err(shape_err(format!("cannot write a {c}-channel image"))),
    };
    dynamic.save_with_format(path, format).map_err(image_err)
}

fn truncated(what: &str) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, format!("truncated .flo file: {what}")))
}

/// Parses `.flo` bytes.
pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 {
        return Err(truncated("missing magic"));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!("bad .flo magic {magic}")));
    }
    if bytes.len() < 12 {
        return Err(truncated("missing dimensions"));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w < 0 || h < 0 {
        return Err(Error::Format(format!("negative .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w * h * 2;
    let body = &bytes[12..];
    if body.len() < n * 4 {
        return Err(truncated("missing flow values"));
    }
    let data = body[..n * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Image::from_vec(h, w, 2, data)
}

/// Serializes a flow field to `.flo` bytes (values stored as `f32`).
pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    if flow.channels() != 2 {
        return Err(shape_err(format!("flow needs 2 channels, got {}", flow.channels())));
    }
    let mut out = Vec::with_capacity(12 + flow.as_slice().len() * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for &v in flow.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flo(&fs::read(path)?)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    fs::write(path, encode_flo(flow)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_one_layout() {
        let flow = Image::from_vec(1, 2, 2, vec![1.5, -2.0, 1.5, -2.0]).unwrap();
        let bytes = encode_flo(&flow).unwrap();
        let mut expected = vec![0x50, 0x49, 0x45, 0x48]; // "PIEH"
        expected.extend([2, 0, 0, 0, 1, 0, 0, 0]);
        for _ in 0..2 {
            expected.extend([0x00, 0x00, 0xc0, 0x3f]); // 1.5
            expected.extend([0x00, 0x00, 0x00, 0xc0]); // -2.0
        }
        assert_eq!(bytes.len(), 28);
        assert_eq!(bytes, expected);
        assert_eq!(decode_flo(&bytes).unwrap(), flow);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_flo(&Image::zeros(2, 2, 2)).unwrap();
        assert!(matches!(decode_flo(&bytes[..20]), Err(Error::Io(_))));
        bytes[0] = 0;
        assert!(matches!(decode_flo(&bytes), Err(Error::Format(_))));
    }
}
