//! Precision and recall at an IoU threshold, with per-band recall.

use lffd_core::assign::FaceBox;
use lffd_core::detect::Detection;
use lffd_core::net::MIN_FACE;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRecall {
    pub lo: usize,
    pub hi: usize,
    pub faces: usize,
    pub found: usize,
    /// `None` when the band holds no faces.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou: f32,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// 1.0 when there are no detections.
    pub precision: f64,
    /// 0.0 when there are no faces.
    pub recall: f64,
    pub bands: Vec<BandRecall>,
}

/// Band of a face size: the first band is closed at both ends, later ones
/// are `(lo, hi]`.
pub fn band_of(size: f32, bands: &[(usize, usize)]) -> Option<usize> {
    bands.iter().enumerate().position(|(i, &(lo, hi))| {
        let above = if i == 0 { size >= lo as f32 } else { size > lo as f32 };
        above && size <= hi as f32
    })
}

#[derive(Debug, Default, Clone, Copy)]
struct ImageCounts {
    tp: usize,
    fp: usize,
}

/// Greedy one-to-one matching of one image: detections in descending score
/// order each take the unmatched face of highest IoU, if it reaches `iou`.
/// Faces under the minimum size absorb matches without counting either way.
fn match_image(dets: &[Detection], faces: &[FaceBox], iou: f32, matched: &mut [bool]) -> ImageCounts {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut counts = ImageCounts::default();
    for i in order {
        let best = faces
            .iter()
            .enumerate()
            .filter(|(j, _)| !matched[*j])
            .map(|(j, f)| (j, f.iou(&dets[i].bbox)))
            .filter(|&(_, v)| v >= iou)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((j, _)) => {
                matched[j] = true;
                if faces[j].size() >= MIN_FACE as f32 {
                    counts.tp += 1;
                }
            }
            None => counts.fp += 1,
        }
    }
    counts
}

pub fn evaluate(
    detections: &[Vec<Detection>],
    truth: &[Vec<FaceBox>],
    bands: &[(usize, usize)],
    iou: f32,
) -> EvalReport {
    let mut tp = 0;
    let mut fp = 0;
    let mut total = 0;
    let mut band_faces = vec![0usize; bands.len()];
    let mut band_found = vec![0usize; bands.len()];
    for (dets, faces) in detections.iter().zip(truth) {
        let mut matched = vec![false; faces.len()];
        let c = match_image(dets, faces, iou, &mut matched);
        tp += c.tp;
        fp += c.fp;
        for (f, &m) in faces.iter().zip(&matched) {
            if f.size() < MIN_FACE as f32 {
                continue;
            }
            total += 1;
            if let Some(b) = band_of(f.size(), bands) {
                band_faces[b] += 1;
                band_found[b] += m as usize;
            }
        }
    }
    let ratio = |a: usize, b: usize| a as f64 / b as f64;
    EvalReport {
        iou,
        tp,
        fp,
        fn_: total - tp,
        precision: if tp + fp == 0 { 1.0 } else { ratio(tp, tp + fp) },
        recall: if total == 0 { 0.0 } else { ratio(tp, total) },
        bands: bands
            .iter()
            .zip(band_faces.iter().zip(&band_found))
            .map(|(&(lo, hi), (&faces, &found))| BandRecall {
                lo,
                hi,
                faces,
                found,
                recall: (faces > 0).then(|| ratio(found, faces)),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: FaceBox, score: f32) -> Detection {
        Detection {
            bbox: b,
            score,
            branch_id: 1,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let faces = vec![FaceBox::new(0.0, 0.0, 12.0, 12.0), FaceBox::new(30.0, 30.0, 60.0, 60.0)];
        let dets: Vec<Detection> = faces.iter().map(|&f| det(f, 1.0)).collect();
        let bands = [(10, 15), (15, 20), (20, 40)];
        let r = evaluate(&[dets], std::slice::from_ref(&faces), &bands, 0.5);
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 0));
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
        assert_eq!(r.bands[0].recall, Some(1.0));
        assert_eq!(r.bands[1].recall, None);

        let r = evaluate(&[vec![]], &[faces], &bands, 0.5);
        assert_eq!((r.precision, r.recall, r.fp, r.fn_), (1.0, 0.0, 0, 2));
    }

    #[test]
    fn duplicates_count_as_false_positives() {
        let f = FaceBox::new(0.0, 0.0, 20.0, 20.0);
        let r = evaluate(&[vec![det(f, 0.9), det(f, 0.8)]], &[vec![f]], &[(10, 40)], 0.5);
        assert_eq!((r.tp, r.fp), (1, 1));
    }

    #[test]
    fn band_edges() {
        let bands = [(10, 15), (15, 20)];
        assert_eq!(band_of(10.0, &bands), Some(0));
        assert_eq!(band_of(15.0, &bands), Some(0));
        assert_eq!(band_of(15.5, &bands), Some(1));
        assert_eq!(band_of(9.0, &bands), None);
    }
}
