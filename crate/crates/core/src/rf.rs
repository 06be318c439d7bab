//! Receptive-field arithmetic.
//!
//! Walking a conv stack front to back, the accumulated stride multiplies by
//! each layer's stride and the receptive field grows by `(k − 1)` times the
//! stride accumulated *before* that layer. With every 3×3 conv padded by 1
//! and every 1×1 conv unpadded, the field of cell `(i, j)` is centered
//! exactly on input pixel `(acc_stride·j, acc_stride·i)`.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use crate::conv::ConvGeometry;
use crate::net::{BranchSpec, NetworkConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn new(name: &str, geometry: ConvGeometry, in_channels: usize, out_channels: usize) -> Self {
        Self {
            name: name.into(),
            geometry,
            in_channels,
            out_channels,
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        let k = self.geometry.kernel;
        k * k * self.in_channels * self.out_channels + self.out_channels
    }
}

/// Receptive field of one layer's output cells, in input pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfInfo {
    pub layer: String,
    pub acc_stride: usize,
    pub rf_size: usize,
    /// Input coordinate of the field center of cell 0 (zero under the
    /// pad-`(k−1)/2` convention).
    pub origin: isize,
}

impl RfInfo {
    /// `(x, y)` of the field center of cell `(row, col)`.
    #[inline]
    pub fn center_of(&self, row: usize, col: usize) -> (f32, f32) {
        let s = self.acc_stride as isize;
        (
            (self.origin + s * col as isize) as f32,
            (self.origin + s * row as isize) as f32,
        )
    }
}

pub fn accumulate(layers: &[LayerSpec]) -> Vec<RfInfo> {
    let mut rf = 1usize;
    let mut stride = 1usize;
    let mut origin = 0isize;
    layers
        .iter()
        .map(|l| {
            let g = l.geometry;
            rf += (g.kernel - 1) * stride;
            origin += ((g.kernel as isize - 1) / 2 - g.pad as isize) * stride as isize;
            stride *= g.stride;
            RfInfo {
                layer: l.name.clone(),
                acc_stride: stride,
                rf_size: rf,
                origin,
            }
        })
        .collect()
}

/// Checked [`RfInfo::center_of`] for a `map_height × map_width` feature map.
pub fn rf_center(
    info: &RfInfo,
    map_height: usize,
    map_width: usize,
    row: usize,
    col: usize,
) -> Result<(f32, f32)> {
    if row >= map_height || col >= map_width {
        return Err(Error::OutOfRange {
            op: "rf_center",
            row,
            col,
            height: map_height,
            width: map_width,
        });
    }
    Ok(info.center_of(row, col))
}

/// How face placements are enumerated by [`coverage_audit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditPlan {
    /// Sizes up to this value are tried at every integer offset.
    pub exhaustive_up_to: usize,
    /// Offset step for larger sizes.
    pub coarse_step: usize,
}

impl Default for AuditPlan {
    fn default() -> Self {
        Self {
            exhaustive_up_to: 64,
            coarse_step: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageReport {
    pub faces_checked: u64,
    /// Faces with no field center strictly inside them in any branch whose
    /// band holds the face size.
    pub uncovered_faces: u64,
    pub min_centers_inside_per_face: usize,
    /// `(size, fewest centers seen for a face of that size)`.
    pub min_centers_by_size: Vec<(usize, usize)>,
}

/// Place square faces of every size in `sizes` at every offset allowed by
/// `plan` inside a `width × height` image and count, for each face, the field
/// centers of its responsible branch that fall strictly inside it. When two
/// branch bands share an endpoint the better-covering branch counts.
pub fn coverage_audit(
    config: &NetworkConfig,
    width: usize,
    height: usize,
    sizes: RangeInclusive<usize>,
    plan: AuditPlan,
) -> CoverageReport {
    let rf = config.rf_table();
    let mut report = CoverageReport {
        faces_checked: 0,
        uncovered_faces: 0,
        min_centers_inside_per_face: usize::MAX,
        min_centers_by_size: Vec::new(),
    };
    for size in sizes {
        if size > width || size > height || size == 0 {
            continue;
        }
        let step = if size <= plan.exhaustive_up_to {
            1
        } else {
            plan.coarse_step.max(1)
        };
        let branches: Vec<&BranchSpec> = config
            .branches
            .iter()
            .filter(|b| b.scale_lo <= size && size <= b.scale_hi)
            .collect();
        // Per-branch counts along each axis, one entry per offset.
        let axis_counts = |info: &RfInfo, extent: usize, cells: usize| -> Vec<usize> {
            (0..=extent - size)
                .step_by(step)
                .map(|lo| centers_inside(info, cells, lo, size))
                .collect()
        };
        let per_branch: Vec<(Vec<usize>, Vec<usize>)> = branches
            .iter()
            .map(|b| {
                let info = &rf[b.tap_layer];
                let (map_h, map_w) = config.map_dims(b.tap_layer, height, width);
                (axis_counts(info, width, map_w), axis_counts(info, height, map_h))
            })
            .collect();
        let nx = (width - size) / step + 1;
        let ny = (height - size) / step + 1;
        let mut size_min = usize::MAX;
        for iy in 0..ny {
            for ix in 0..nx {
                let count = per_branch
                    .iter()
                    .map(|(xs, ys)| xs[ix] * ys[iy])
                    .max()
                    .unwrap_or(0);
                report.faces_checked += 1;
                if count == 0 {
                    report.uncovered_faces += 1;
                }
                size_min = size_min.min(count);
            }
        }
        report.min_centers_inside_per_face = report.min_centers_inside_per_face.min(size_min);
        report.min_centers_by_size.push((size, size_min));
    }
    if report.faces_checked == 0 {
        report.min_centers_inside_per_face = 0;
    }
    report
}

/// Cells along one axis whose center `c` satisfies `lo < c < lo + size`.
fn centers_inside(info: &RfInfo, cells: usize, lo: usize, size: usize) -> usize {
    let (lo, hi) = (lo as isize, (lo + size) as isize);
    let s = info.acc_stride as isize;
    let first = ((lo - info.origin).div_euclid(s)).max(0) as usize;
    (first..cells)
        .map(|j| info.origin + s * j as isize)
        .skip_while(|&c| c <= lo)
        .take_while(|&c| c < hi)
        .count()
}
