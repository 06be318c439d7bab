//! Layer and branch table.

use std::fmt::Write as _;

use lffd_core::net::NetworkConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectRow {
    pub layer: String,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub acc_stride: usize,
    pub rf_size: usize,
    /// Branch tapped at this layer: `(id, lo, hi, rf / mean scale)`.
    pub branch: Option<(usize, usize, usize, f64)>,
}

pub fn inspect_rows(config: &NetworkConfig) -> Vec<InspectRow> {
    config
        .layers
        .iter()
        .zip(config.rf_table())
        .enumerate()
        .map(|(i, (l, rf))| InspectRow {
            layer: l.name.clone(),
            kernel: l.geometry.kernel,
            stride: l.geometry.stride,
            pad: l.geometry.pad,
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            acc_stride: rf.acc_stride,
            rf_size: rf.rf_size,
            branch: config
                .branches
                .iter()
                .find(|b| b.tap_layer == i)
                .map(|b| (b.id, b.scale_lo, b.scale_hi, b.rf_ratio())),
        })
        .collect()
}

pub const CSV_HEADER: &str = "layer,kernel,stride,pad,in_channels,out_channels,acc_stride,rf_size,branch,scale_lo,scale_hi,rf_ratio";

pub fn render_csv(rows: &[InspectRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let branch = r
            .branch
            .map(|(id, lo, hi, ratio)| format!("{id},{lo},{hi},{ratio:.4}"))
            .unwrap_or_else(|| ",,,".into());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{branch}",
            r.layer, r.kernel, r.stride, r.pad, r.in_channels, r.out_channels, r.acc_stride, r.rf_size
        );
    }
    s
}

/// Inverse of [`render_csv`]; ratios come back rounded to four decimals.
pub fn parse_csv(text: &str) -> Option<Vec<InspectRow>> {
    let mut lines = text.lines();
    if lines.next()? != CSV_HEADER {
        return None;
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 12 {
                return None;
            }
            let n = |i: usize| f[i].parse::<usize>().ok();
            let branch = if f[8].is_empty() {
                None
            } else {
                Some((n(8)?, n(9)?, n(10)?, f[11].parse().ok()?))
            };
            Some(InspectRow {
                layer: f[0].to_string(),
                kernel: n(1)?,
                stride: n(2)?,
                pad: n(3)?,
                in_channels: n(4)?,
                out_channels: n(5)?,
                acc_stride: n(6)?,
                rf_size: n(7)?,
                branch,
            })
        })
        .collect()
}

pub fn render_table(rows: &[InspectRow]) -> String {
    let mut s = format!(
        "{:<6} {:>6} {:>4} {:>4} {:>8} {:>8} {:>6} {:>6}  {:<8} {:>9} {:>6}\n",
        "layer", "kernel", "str", "pad", "c_in", "c_out", "acc_s", "rf", "branch", "band", "ratio"
    );
    for r in rows {
        let (branch, band, ratio) = match r.branch {
            Some((id, lo, hi, ratio)) => (format!("{id}"), format!("{lo}-{hi}"), format!("{ratio:.2}")),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{:<6} {:>6} {:>4} {:>4} {:>8} {:>8} {:>6} {:>6}  {:<8} {:>9} {:>6}",
            r.layer,
            format!("{0}x{0}", r.kernel),
            r.stride,
            r.pad,
            r.in_channels,
            r.out_channels,
            r.acc_stride,
            r.rf_size,
            branch,
            band,
            ratio
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rows() {
        let rows = inspect_rows(&NetworkConfig::reference());
        assert_eq!(rows.len(), 25);
        let c8 = rows.iter().find(|r| r.layer == "c8").unwrap();
        assert_eq!((c8.acc_stride, c8.rf_size), (4, 55));
        let ratios: Vec<f64> = rows.iter().filter_map(|r| r.branch.map(|b| b.3)).collect();
        assert!((ratios[0] - 4.4).abs() < 1e-9);
        assert!((ratios[7] - 639.0 / 480.0).abs() < 1e-9);
        assert_eq!(render_csv(&rows).lines().count(), 26);
        let parsed = parse_csv(&render_csv(&rows)).unwrap();
        for (a, b) in parsed.iter().zip(&rows) {
            assert_eq!((&a.layer, a.rf_size, a.branch.map(|x| x.0)), (&b.layer, b.rf_size, b.branch.map(|x| x.0)));
            if let (Some(x), Some(y)) = (a.branch, b.branch) {
                assert!((x.3 - y.3).abs() < 1e-4);
            }
        }
        assert_eq!(render_table(&rows).lines().count(), 26);
    }
}
