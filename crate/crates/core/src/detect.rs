//! Single-pass detection: normalize, forward, decode every branch, NMS.

use alloc::vec::Vec;

use crate::assign::{branch_center, decode_target, FaceBox};
use crate::image::RgbImage;
use crate::loss::face_probability;
use crate::net::{forward, BranchOutput, BranchSpec, ModelWeights, NetworkConfig, FACE_CHANNEL};
use crate::{Error, Result, Tensor};

pub const PAD_VALUE: f32 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: FaceBox,
    /// Face probability in `[0, 1]`.
    pub score: f32,
    /// 1-based branch number.
    pub branch_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub score_thresh: f32,
    pub iou_thresh: f32,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            score_thresh: 0.5,
            iou_thresh: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    /// `3 × H' × W'`, padded right and bottom.
    pub tensor: Tensor<f32>,
    pub width: usize,
    pub height: usize,
}

#[inline]
pub fn normalize_pixel(v: u8) -> f32 {
    (v as f32 - 127.5) / 127.5
}

/// `(v − 127.5) / 127.5` per channel, padded with −1 up to multiples of
/// `multiple`.
pub fn preprocess(image: &RgbImage, multiple: usize) -> Result<Preprocessed> {
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let m = multiple.max(1);
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    let mut data = alloc::vec![PAD_VALUE; 3 * pw * ph];
    let raw = image.as_raw();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(c * ph + y) * pw + x] = normalize_pixel(raw[(y * w + x) * 3 + c]);
            }
        }
    }
    Ok(Preprocessed {
        tensor: Tensor::from_vec(&[3, ph, pw], data)?,
        width: w,
        height: h,
    })
}

/// Boxes of every cell whose face probability reaches `score_thresh`,
/// clipped to a `width × height` image.
pub fn decode_branch(
    out: &BranchOutput<f32>,
    branch: &BranchSpec,
    score_thresh: f32,
    width: usize,
    height: usize,
) -> Result<Vec<Detection>> {
    let (_, h, w) = out.scores.chw()?;
    let (rc, rh, rw) = out.regs.chw()?;
    if (rc, rh, rw) != (4, h, w) {
        return Err(Error::ShapeMismatch {
            op: "decode_branch",
            expected: alloc::vec![4, h, w],
            got: out.regs.shape().to_vec(),
        });
    }
    let mut dets = Vec::new();
    let bg = 1 - FACE_CHANNEL;
    for r in 0..h {
        for c in 0..w {
            let p = face_probability(out.scores.at3(bg, r, c), out.scores.at3(FACE_CHANNEL, r, c));
            if !(p >= score_thresh) {
                continue;
            }
            let t = [0, 1, 2, 3].map(|k| out.regs.at3(k, r, c));
            let b = decode_target(branch_center(branch, r, c), branch.rf_size as f32, &t);
            if let Some(bbox) = b.clip(width as f32, height as f32) {
                dets.push(Detection {
                    bbox,
                    score: p,
                    branch_id: branch.id,
                });
            }
        }
    }
    Ok(dets)
}

/// Greedy suppression in descending score order (stable for ties): a box
/// survives when its IoU with every earlier survivor is below `iou_thresh`.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f32) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut keep: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        if keep.iter().all(|k| k.bbox.iou(&d.bbox) < iou_thresh) {
            keep.push(d);
        }
    }
    keep
}

pub fn detect(
    config: &NetworkConfig,
    weights: &ModelWeights<f32>,
    image: &RgbImage,
    params: &DetectParams,
) -> Result<Vec<Detection>> {
    let pre = preprocess(image, config.input_multiple())?;
    let outputs = forward(config, weights, &pre.tensor)?;
    let mut all = Vec::new();
    for (out, branch) in outputs.iter().zip(&config.branches) {
        all.extend(decode_branch(out, branch, params.score_thresh, pre.width, pre.height)?);
    }
    Ok(nms(all, params.iou_thresh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::encode_target;

    fn det(x: f32, score: f32) -> Detection {
        Detection {
            bbox: FaceBox::new(x, 0.0, x + 10.0, 10.0),
            score,
            branch_id: 1,
        }
    }

    #[test]
    fn normalization_and_padding() {
        let mut img = RgbImage::new(641, 480);
        img.put(0, 0, [255, 0, 128]);
        let p = preprocess(&img, 32).unwrap();
        assert_eq!(p.tensor.shape(), &[3, 480, 672]);
        assert_eq!(p.tensor.at3(0, 0, 0), 1.0);
        assert_eq!(p.tensor.at3(1, 0, 0), -1.0);
        assert_eq!(p.tensor.at3(2, 479, 671), PAD_VALUE);
        assert_eq!((p.width, p.height), (641, 480));
        assert_eq!(preprocess(&RgbImage::new(0, 4), 32), Err(Error::EmptyImage));
    }

    #[test]
    fn identical_boxes_keep_the_higher_score() {
        let out = nms(alloc::vec![det(0.0, 0.8), det(0.0, 0.9)], 0.4);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
        let out = nms(alloc::vec![det(0.0, 0.8), det(20.0, 0.9), det(40.0, 0.7)], 0.4);
        assert_eq!(out.len(), 3);
        assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    }

    fn single_cell(logits: (f32, f32), t: [f32; 4]) -> BranchOutput<f32> {
        BranchOutput {
            scores: Tensor::from_vec(&[2, 1, 1], alloc::vec![logits.0, logits.1]).unwrap(),
            regs: Tensor::from_vec(&[4, 1, 1], t.to_vec()).unwrap(),
        }
    }

    #[test]
    fn decode_inverts_encode_and_clips() {
        let cfg = NetworkConfig::reference();
        let b = &cfg.branches[2];
        let face = FaceBox::new(-6.0, -3.0, 20.0, 25.0);
        let t = encode_target((0.0, 0.0), b.rf_size as f32, &face).unwrap();
        let out = single_cell((-5.0, 5.0), t);
        let dets = decode_branch(&out, b, 0.5, 100, 100).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].branch_id, 3);
        let got = dets[0].bbox;
        assert_eq!((got.x1, got.y1), (0.0, 0.0));
        assert!((got.x2 - 20.0).abs() < 1e-5 && (got.y2 - 25.0).abs() < 1e-5);

        let off = single_cell((20.0, -20.0), t);
        assert!(decode_branch(&off, b, 0.5, 100, 100).unwrap().is_empty());
    }
}
