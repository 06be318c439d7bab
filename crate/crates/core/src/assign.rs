//! Receptive-field label assignment.
//!
//! A cell is matched to a face when its receptive-field center lies strictly
//! inside the face box. Each branch only learns faces whose longer side is in
//! its scale band; faces in the gray margins around the band, and cells that
//! land in two or more in-band faces, are ignored.

use alloc::vec;
use alloc::vec::Vec;

use crate::net::BranchSpec;
use crate::{Error, Result};

/// Axis-aligned box in continuous pixel coordinates, `[x1, x2) × [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl FaceBox {
    pub const fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    /// The longer side.
    pub fn size(&self) -> f32 {
        self.width().max(self.height())
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && self.area().is_finite()
    }

    /// Strict containment on all four sides.
    pub fn contains(&self, x: f32, y: f32) -> bool {
        self.x1 < x && x < self.x2 && self.y1 < y && y < self.y2
    }

    pub fn iou(&self, other: &FaceBox) -> f32 {
        let iw = self.x2.min(other.x2) - self.x1.max(other.x1);
        let ih = self.y2.min(other.y2) - self.y1.max(other.y1);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        inter / (self.area() + other.area() - inter)
    }

    /// Intersection with `[0, width) × [0, height)`, or `None` when empty.
    pub fn clip(&self, width: f32, height: f32) -> Option<FaceBox> {
        let b = FaceBox::new(
            self.x1.max(0.0),
            self.y1.max(0.0),
            self.x2.min(width),
            self.y2.min(height),
        );
        b.is_valid().then_some(b)
    }

    /// Mirror about the vertical center line of an image `width` wide.
    pub fn flip_horizontal(&self, width: f32) -> FaceBox {
        FaceBox::new(width - self.x2, self.y1, width - self.x1, self.y2)
    }

    pub fn scale_about(&self, cx: f32, cy: f32, factor: f32, ox: f32, oy: f32) -> FaceBox {
        FaceBox::new(
            (self.x1 - cx) * factor + ox,
            (self.y1 - cy) * factor + oy,
            (self.x2 - cx) * factor + ox,
            (self.y2 - cy) * factor + oy,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    Negative,
    Positive,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchLabelMap {
    pub branch_id: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<Label>,
    /// Regression targets; meaningful only at positive cells.
    pub targets: Vec<[f32; 4]>,
}

impl BranchLabelMap {
    pub fn label(&self, row: usize, col: usize) -> Label {
        self.labels[row * self.width + col]
    }

    pub fn target(&self, row: usize, col: usize) -> [f32; 4] {
        self.targets[row * self.width + col]
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Closed gray intervals `[⌊0.9·lo⌋, lo]` and `[hi, ⌈1.1·hi⌉]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrayBounds {
    pub lower: (usize, usize),
    pub upper: (usize, usize),
}

impl GrayBounds {
    pub fn contains(&self, size: f32) -> bool {
        let within = |(a, b): (usize, usize)| a as f32 <= size && size <= b as f32;
        within(self.lower) || within(self.upper)
    }
}

pub fn gray_bounds(scale_lo: usize, scale_hi: usize) -> GrayBounds {
    // Integer arithmetic: 40 * 1.1 is 44.000000000000007 in binary floating point.
    GrayBounds {
        lower: (scale_lo * 9 / 10, scale_lo),
        upper: (scale_hi, (scale_hi * 11).div_ceil(10)),
    }
}

/// Corner offsets of `face` from a field center, in units of half the field.
pub fn encode_target(center: (f32, f32), rf_size: f32, face: &FaceBox) -> Result<[f32; 4]> {
    if !(rf_size > 0.0) {
        return Err(Error::ZeroRfSize);
    }
    let half = rf_size / 2.0;
    let (cx, cy) = center;
    Ok([
        (cx - face.x1) / half,
        (cy - face.y1) / half,
        (cx - face.x2) / half,
        (cy - face.y2) / half,
    ])
}

/// Inverse of [`encode_target`].
pub fn decode_target(center: (f32, f32), rf_size: f32, t: &[f32; 4]) -> FaceBox {
    let half = rf_size / 2.0;
    let (cx, cy) = center;
    FaceBox::new(
        cx - t[0] * half,
        cy - t[1] * half,
        cx - t[2] * half,
        cy - t[3] * half,
    )
}

/// Flat indices of the cells whose field center lies strictly inside `b`.
fn cells_inside(
    b: &FaceBox,
    branch: &BranchSpec,
    map_height: usize,
    map_width: usize,
) -> Vec<usize> {
    let stride = branch.acc_stride as f32;
    let first = |a: f32| (libm::floorf(a / stride) + 1.0).max(0.0) as usize;
    let last = |a: f32, n: usize| {
        let v = libm::ceilf(a / stride) - 1.0;
        (v >= 0.0 && n > 0).then(|| (v as usize).min(n - 1))
    };
    let mut out = Vec::new();
    if let (Some(r1), Some(c1)) = (last(b.y2, map_height), last(b.x2, map_width)) {
        for r in first(b.y1)..=r1 {
            for c in first(b.x1)..=c1 {
                let (cx, cy) = branch_center(branch, r, c);
                if b.contains(cx, cy) {
                    out.push(r * map_width + c);
                }
            }
        }
    }
    out
}

/// Field center of a cell of `branch`.
#[inline]
pub fn branch_center(branch: &BranchSpec, row: usize, col: usize) -> (f32, f32) {
    let s = branch.acc_stride as f32;
    (s * col as f32, s * row as f32)
}

pub fn assign(
    faces: &[FaceBox],
    branch: &BranchSpec,
    map_height: usize,
    map_width: usize,
) -> BranchLabelMap {
    assign_with_ignored(faces, &[], branch, map_height, map_width)
}

/// [`assign`] plus regions that every branch ignores (faces too small or too
/// large to be learned anywhere).
pub fn assign_with_ignored(
    faces: &[FaceBox],
    ignored: &[FaceBox],
    branch: &BranchSpec,
    map_height: usize,
    map_width: usize,
) -> BranchLabelMap {
    let cells = map_height * map_width;
    let gray = gray_bounds(branch.scale_lo, branch.scale_hi);
    let (lo, hi) = (branch.scale_lo as f32, branch.scale_hi as f32);
    let mut matches = vec![0u32; cells];
    let mut owner = vec![usize::MAX; cells];
    let mut ignore = vec![false; cells];

    for (k, face) in faces.iter().enumerate() {
        let size = face.size();
        if gray.contains(size) {
            for cell in cells_inside(face, branch, map_height, map_width) {
                ignore[cell] = true;
            }
        } else if lo < size && size <= hi {
            for cell in cells_inside(face, branch, map_height, map_width) {
                matches[cell] += 1;
                owner[cell] = k;
            }
        }
    }
    for region in ignored {
        for cell in cells_inside(region, branch, map_height, map_width) {
            ignore[cell] = true;
        }
    }

    let mut labels = vec![Label::Negative; cells];
    let mut targets = vec![[0.0f32; 4]; cells];
    for cell in 0..cells {
        labels[cell] = if ignore[cell] || matches[cell] >= 2 {
            Label::Ignore
        } else if matches[cell] == 1 {
            let (r, c) = (cell / map_width, cell % map_width);
            targets[cell] = encode_target(
                branch_center(branch, r, c),
                branch.rf_size as f32,
                &faces[owner[cell]],
            )
            .expect("rf_size is positive");
            Label::Positive
        } else {
            Label::Negative
        };
    }
    BranchLabelMap {
        branch_id: branch.id,
        height: map_height,
        width: map_width,
        labels,
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;

    #[test]
    fn gray_examples() {
        assert_eq!(
            gray_bounds(20, 40),
            GrayBounds {
                lower: (18, 20),
                upper: (40, 44)
            }
        );
        assert_eq!(
            gray_bounds(10, 15),
            GrayBounds {
                lower: (9, 10),
                upper: (15, 17)
            }
        );
        assert_eq!(
            gray_bounds(400, 560),
            GrayBounds {
                lower: (360, 400),
                upper: (560, 616)
            }
        );
    }

    #[test]
    fn encode_examples() {
        let t = encode_target((100.0, 100.0), 55.0, &FaceBox::new(90.0, 95.0, 120.0, 130.0)).unwrap();
        let want = [0.363636, 0.181818, -0.727273, -1.090909];
        for (a, b) in t.iter().zip(want) {
            assert!((a - b).abs() < 1e-5, "{t:?}");
        }
        let half = 27.5;
        let t = encode_target(
            (100.0, 60.0),
            55.0,
            &FaceBox::new(100.0 - half, 60.0 - half, 100.0 + half, 60.0 + half),
        )
        .unwrap();
        assert_eq!(t, [1.0, 1.0, -1.0, -1.0]);
        let t = encode_target((10.0, 20.0), 71.0, &FaceBox::new(10.0, 20.0, 30.0, 45.0)).unwrap();
        assert_eq!(&t[..2], &[0.0, 0.0]);
        assert!(t[2] < 0.0 && t[3] < 0.0);
        assert_eq!(encode_target((0.0, 0.0), 0.0, &t_box()), Err(Error::ZeroRfSize));
    }

    fn t_box() -> FaceBox {
        FaceBox::new(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn flip_and_clip() {
        let b = FaceBox::new(10.0, 5.0, 30.0, 25.0);
        assert_eq!(b.flip_horizontal(640.0), FaceBox::new(610.0, 5.0, 630.0, 25.0));
        assert_eq!(
            FaceBox::new(-5.0, 2.0, 20.0, 50.0).clip(16.0, 40.0),
            Some(FaceBox::new(0.0, 2.0, 16.0, 40.0))
        );
        assert_eq!(FaceBox::new(-5.0, 2.0, -1.0, 50.0).clip(16.0, 40.0), None);
    }

    #[test]
    fn iou_basics() {
        let a = FaceBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&FaceBox::new(10.0, 0.0, 20.0, 10.0)), 0.0);
        assert!((a.iou(&FaceBox::new(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn single_face_positives() {
        let cfg = NetworkConfig::reference();
        let b1 = &cfg.branches[0];
        let face = FaceBox::new(101.0, 203.0, 113.0, 215.0);
        let map = assign(&[face], b1, 160, 160);
        // centers at multiples of 4 strictly inside (101,113): 104,108,112
        // and (203,215): 204,208,212
        assert_eq!(map.count(Label::Positive), 9);
        assert_eq!(map.count(Label::Ignore), 0);
        assert_eq!(map.label(51, 26), Label::Positive);
    }
}
