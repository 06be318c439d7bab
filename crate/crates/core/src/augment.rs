//! Scale-band sampling, face-centered cropping, flipping and color jitter.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::assign::{gray_bounds, FaceBox};
use crate::image::RgbImage;
use crate::net::{NetworkConfig, MIN_FACE};
use crate::{Error, Result};

/// An image and its face boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub faces: Vec<FaceBox>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorJitter {
    /// Probability of each of the three distortions.
    pub prob: f32,
    /// Additive offset range, in pixel levels.
    pub brightness: f32,
    /// Contrast factor range around mid-gray.
    pub contrast: (f32, f32),
    /// Per-channel multiplicative gain range.
    pub gain: (f32, f32),
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            prob: 0.5,
            brightness: 32.0,
            contrast: (0.8, 1.2),
            gain: (0.9, 1.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    /// `(lo, hi]` scale band of every branch, in branch order.
    pub bands: Vec<(usize, usize)>,
    pub flip_prob: f32,
    pub jitter: ColorJitter,
    /// Faces smaller than this after scaling and clipping are ignored.
    pub min_face: f32,
    /// Faces larger than this after scaling are ignored.
    pub max_face: f32,
    /// Cap on the supersampling factor used when shrinking.
    pub max_supersample: usize,
}

impl AugmentConfig {
    /// Bands from `config`; faces above the last branch's upper gray bound
    /// are ignored.
    pub fn for_network(config: &NetworkConfig, crop: usize) -> Self {
        let bands: Vec<(usize, usize)> = config
            .branches
            .iter()
            .map(|b| (b.scale_lo, b.scale_hi))
            .collect();
        let top = bands.last().map(|&(lo, hi)| gray_bounds(lo, hi).upper.1).unwrap_or(0);
        Self {
            crop,
            bands,
            flip_prob: 0.5,
            jitter: ColorJitter::default(),
            min_face: MIN_FACE as f32,
            max_face: top as f32,
            max_supersample: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    /// `crop × crop` image.
    pub image: RgbImage,
    /// Faces to learn, clipped to the crop.
    pub faces: Vec<FaceBox>,
    /// Regions no branch learns from.
    pub ignored: Vec<FaceBox>,
    /// Index into [`AugmentConfig::bands`] that was sampled.
    pub band: usize,
    /// The sampled face after transformation.
    pub anchor: FaceBox,
    pub flipped: bool,
}

/// Draws one training crop.
pub fn augment_sample<R: Rng + ?Sized>(
    dataset: &[Sample],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Augmented> {
    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].faces.iter().any(|f| f.is_valid()))
        .collect();
    if eligible.is_empty() || cfg.bands.is_empty() || cfg.crop == 0 {
        return Err(Error::EmptyDataset);
    }
    let sample = &dataset[eligible[rng.gen_range(0..eligible.len())]];
    let candidates: Vec<&FaceBox> = sample.faces.iter().filter(|f| f.is_valid()).collect();
    let face = *candidates[rng.gen_range(0..candidates.len())];
    let band = rng.gen_range(0..cfg.bands.len());
    let (lo, hi) = cfg.bands[band];
    let target = rng.gen_range(lo as f32..=hi as f32).min(cfg.crop as f32);
    let scale = target / face.size();

    let half = cfg.crop as f32 / 2.0;
    let cx = (face.x1 + face.x2) / 2.0;
    let cy = (face.y1 + face.y2) / 2.0;
    let (mut image, valid) = resample(&sample.image, cfg, cx, cy, scale);

    let mut faces = Vec::new();
    let mut ignored = Vec::new();
    let mut anchor = face.scale_about(cx, cy, scale, half, half);
    let side = cfg.crop as f32;
    for f in &sample.faces {
        let t = f.scale_about(cx, cy, scale, half, half);
        let Some(c) = t.clip(side, side) else { continue };
        if t.size() > cfg.max_face || c.size() < cfg.min_face || c.area() < 0.5 * t.area() {
            ignored.push(c);
        } else {
            faces.push(c);
        }
    }

    let flipped = rng.gen::<f32>() < cfg.flip_prob;
    if flipped {
        flip_image(&mut image);
        for b in faces.iter_mut().chain(ignored.iter_mut()) {
            *b = b.flip_horizontal(side);
        }
        anchor = anchor.flip_horizontal(side);
    }
    jitter(&mut image, &valid, flipped, &cfg.jitter, rng);

    Ok(Augmented {
        image,
        faces,
        ignored,
        band,
        anchor,
        flipped,
    })
}

/// Crop centered on `(cx, cy)` after scaling by `scale`, black outside the
/// source. Also returns which output pixels saw any source.
fn resample(src: &RgbImage, cfg: &AugmentConfig, cx: f32, cy: f32, scale: f32) -> (RgbImage, Vec<bool>) {
    let n = cfg.crop;
    let ss = (libm::ceilf(1.0 / scale) as usize).clamp(1, cfg.max_supersample.max(1));
    let half = n as f32 / 2.0;
    let coords = |center: f32| -> Vec<f32> {
        (0..n * ss)
            .map(|i| (i as f32 + 0.5) / ss as f32)
            .map(|u| (u - half) / scale + center)
            .collect()
    };
    let xs = coords(cx);
    let ys = coords(cy);
    let norm = 1.0 / (ss * ss) as f32;
    let mut out = RgbImage::new(n, n);
    let mut valid = vec![false; n * n];
    for v in 0..n {
        for u in 0..n {
            let mut acc = [0.0f32; 3];
            let mut any = false;
            for sy in &ys[v * ss..(v + 1) * ss] {
                for sx in &xs[u * ss..(u + 1) * ss] {
                    if let Some(p) = src.sample(*sx, *sy) {
                        any = true;
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
            }
            if any {
                valid[v * n + u] = true;
                out.put(u, v, acc.map(|a| to_u8(a * norm)));
            }
        }
    }
    (out, valid)
}

fn flip_image(img: &mut RgbImage) {
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        for x in 0..w / 2 {
            let a = img.get(x, y);
            let b = img.get(w - 1 - x, y);
            img.put(x, y, b);
            img.put(w - 1 - x, y, a);
        }
    }
}

fn jitter<R: Rng + ?Sized>(
    img: &mut RgbImage,
    valid: &[bool],
    flipped: bool,
    cfg: &ColorJitter,
    rng: &mut R,
) {
    let brightness = (rng.gen::<f32>() < cfg.prob).then(|| rng.gen_range(-cfg.brightness..=cfg.brightness));
    let contrast = (rng.gen::<f32>() < cfg.prob).then(|| rng.gen_range(cfg.contrast.0..=cfg.contrast.1));
    let gain = (rng.gen::<f32>() < cfg.prob)
        .then(|| [0; 3].map(|_| rng.gen_range(cfg.gain.0..=cfg.gain.1)));
    if brightness.is_none() && contrast.is_none() && gain.is_none() {
        return;
    }
    let w = img.width();
    for y in 0..img.height() {
        for x in 0..w {
            let src_x = if flipped { w - 1 - x } else { x };
            if !valid[y * w + src_x] {
                continue;
            }
            let mut p = img.get(x, y).map(f32::from);
            for (c, v) in p.iter_mut().enumerate() {
                if let Some(b) = brightness {
                    *v += b;
                }
                if let Some(k) = contrast {
                    *v = (*v - 127.5) * k + 127.5;
                }
                if let Some(g) = gain {
                    *v *= g[c];
                }
            }
            img.put(x, y, p.map(to_u8));
        }
    }
}

#[inline]
fn to_u8(v: f32) -> u8 {
    libm::roundf(v.clamp(0.0, 255.0)) as u8
}
