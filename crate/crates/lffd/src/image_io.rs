//! Binary PPM (P6) codec, and PNG behind the `png` feature.

use std::fs;
use std::path::Path;

use lffd_core::image::RgbImage;

use crate::{Error, Result};

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Parses a P6 image with an 8-bit maxval. Comments are allowed in the
/// header.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad(path, "truncated PPM header"));
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P6" {
        return Err(bad(path, "not a binary PPM (P6)"));
    }
    let mut number = |what: &str| -> Result<usize> {
        std::str::from_utf8(token()?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, format!("invalid PPM {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(bad(path, format!("unsupported PPM maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(bad(path, "empty image"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| bad(path, "image too large"))?;
    if bytes.len() < start + need {
        return Err(bad(path, "truncated PPM raster"));
    }
    RgbImage::from_raw(width, height, bytes[start..start + need].to_vec()).map_err(Error::from)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_raw());
    out
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| bad(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => px.to_vec(),
        png::ColorType::Rgba => px.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => px.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => px.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(bad(path, "unexpanded palette image")),
    };
    RgbImage::from_raw(w, h, rgb).map_err(Error::from)
}

#[cfg(feature = "png")]
fn encode_png(img: &RgbImage, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| bad(path, e.to_string()))?;
        writer
            .write_image_data(img.as_raw())
            .map_err(|e| bad(path, e.to_string()))?;
    }
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a PPM file, or a PNG when built with the `png` feature.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        #[cfg(feature = "png")]
        return decode_png(&bytes, path);
        #[cfg(not(feature = "png"))]
        return Err(bad(path, "PNG support is not compiled in (enable the `png` feature)"));
    }
    decode_ppm(&bytes, path)
}

/// Writes PPM, or PNG for a `.png` path when the feature is enabled.
pub fn save_image(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = if is_png(path) {
        #[cfg(feature = "png")]
        {
            encode_png(img, path)?
        }
        #[cfg(not(feature = "png"))]
        return Err(bad(path, "PNG support is not compiled in (enable the `png` feature)"));
    } else {
        encode_ppm(img)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
