//! 8-bit RGB raster.

use alloc::vec;
use alloc::vec::Vec;

use crate::assign::FaceBox;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Interleaved RGB, row-major.
    data: Vec<u8>,
}

impl RgbImage {
    /// Black image.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                op: "rgb image",
                expected: vec![height, width, 3],
                got: vec![data.len()],
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous coordinates where pixel `(x, y)` covers
    /// `[x, x+1) × [y, y+1)`. Returns `None` outside the image.
    pub fn sample(&self, x: f32, y: f32) -> Option<[f32; 3]> {
        if !(x >= 0.0 && y >= 0.0 && x < self.width as f32 && y < self.height as f32) {
            return None;
        }
        let fx = (x - 0.5).max(0.0);
        let fy = (y - 0.5).max(0.0);
        let x0 = (fx as usize).min(self.width - 1);
        let y0 = (fy as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
        let mut out = [0.0f32; 3];
        let (p00, p10, p01, p11) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        for c in 0..3 {
            let top = p00[c] as f32 * (1.0 - ax) + p10[c] as f32 * ax;
            let bottom = p01[c] as f32 * (1.0 - ax) + p11[c] as f32 * ax;
            out[c] = top * (1.0 - ay) + bottom * ay;
        }
        Some(out)
    }

    /// One-pixel rectangle outline, clipped to the image.
    pub fn draw_box(&mut self, b: &FaceBox, rgb: [u8; 3]) {
        if self.width == 0 || self.height == 0 {
            return;
        }
        let clamp = |v: f32, hi: usize| (v.max(0.0) as usize).min(hi - 1);
        let (x0, x1) = (clamp(b.x1, self.width), clamp(b.x2 - 1.0, self.width));
        let (y0, y1) = (clamp(b.y1, self.height), clamp(b.y2 - 1.0, self.height));
        for x in x0..=x1 {
            self.put(x, y0, rgb);
            self.put(x, y1, rgb);
        }
        for y in y0..=y1 {
            self.put(x0, y, rgb);
            self.put(x1, y, rgb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_size_checked() {
        assert!(RgbImage::from_raw(2, 2, vec![0; 11]).is_err());
        assert!(RgbImage::from_raw(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn sample_at_pixel_center_is_exact() {
        let mut img = RgbImage::new(3, 2);
        img.put(1, 1, [200, 100, 50]);
        assert_eq!(img.sample(1.5, 1.5), Some([200.0, 100.0, 50.0]));
        assert_eq!(img.sample(3.0, 0.5), None);
        let mid = img.sample(1.0, 1.5).unwrap();
        assert_eq!(mid, [100.0, 50.0, 25.0]);
    }

    #[test]
    fn outline_is_clipped() {
        let mut img = RgbImage::new(8, 8);
        img.draw_box(&FaceBox::new(-3.0, 2.0, 20.0, 5.0), [255, 0, 0]);
        assert_eq!(img.get(0, 2), [255, 0, 0]);
        assert_eq!(img.get(7, 4), [255, 0, 0]);
        assert_eq!(img.get(3, 3), [0, 0, 0]);
    }
}
