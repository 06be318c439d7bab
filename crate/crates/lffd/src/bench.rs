//! Latency benchmark of the network forward pass.

use std::time::Instant;

use lffd_core::detect::preprocess;
use lffd_core::image::RgbImage;
use lffd_core::net::{count_flops, e_net, forward, FlopConvention, ModelWeights, NetworkConfig};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_RUNS: usize = 100;
pub const DEFAULT_LADDER: [(usize, usize); 6] = [
    (160, 120),
    (320, 240),
    (640, 480),
    (1280, 720),
    (1920, 1080),
    (3840, 2160),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    /// Network input after padding.
    pub padded_width: usize,
    pub padded_height: usize,
    pub warmup: usize,
    pub runs: usize,
    pub threads: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Multiply-accumulates of one forward pass at the padded size.
    pub flops: u64,
    /// `flops / mean latency`, in G per ms.
    pub e_net: f64,
}

pub const CSV_HEADER: &str =
    "width,height,padded_width,padded_height,warmup,runs,threads,mean_ms,median_ms,p95_ms,flops,e_net";

impl BenchReport {
    pub fn parse_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return None;
        }
        Some(Self {
            width: f[0].parse().ok()?,
            height: f[1].parse().ok()?,
            padded_width: f[2].parse().ok()?,
            padded_height: f[3].parse().ok()?,
            warmup: f[4].parse().ok()?,
            runs: f[5].parse().ok()?,
            threads: f[6].parse().ok()?,
            mean_ms: f[7].parse().ok()?,
            median_ms: f[8].parse().ok()?,
            p95_ms: f[9].parse().ok()?,
            flops: f[10].parse().ok()?,
            e_net: f[11].parse().ok()?,
        })
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.width,
            self.height,
            self.padded_width,
            self.padded_height,
            self.warmup,
            self.runs,
            self.threads,
            self.mean_ms,
            self.median_ms,
            self.p95_ms,
            self.flops,
            self.e_net
        )
    }
}

/// `WxH`, e.g. `640x480`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("resolution '{s}' is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h) = (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

/// Mean, median and nearest-rank 95th percentile.
pub fn latency_stats(samples_ms: &[f64]) -> (f64, f64, f64) {
    if samples_ms.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut s = samples_ms.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    let rank = (0.95 * n as f64).ceil() as usize;
    (mean, median, s[rank.clamp(1, n) - 1])
}

/// Rejects sizes whose padded input cannot be allocated as one tensor.
pub fn check_representable(config: &NetworkConfig, width: usize, height: usize) -> Result<(usize, usize)> {
    let m = config.input_multiple();
    let pad = |v: usize| v.checked_next_multiple_of(m).filter(|&p| v > 0 && p <= u32::MAX as usize);
    let bad = || Error::Config(format!("resolution {width}x{height} cannot be padded to a multiple of {m}"));
    let (pw, ph) = (pad(width).ok_or_else(bad)?, pad(height).ok_or_else(bad)?);
    let widest = config.layers.iter().map(|l| l.in_channels.max(l.out_channels)).max().unwrap_or(3);
    pw.checked_mul(ph)
        .and_then(|a| a.checked_mul(widest * 9))
        .and_then(|n| n.checked_mul(std::mem::size_of::<f32>()))
        .filter(|&bytes| bytes <= isize::MAX as usize)
        .ok_or_else(bad)?;
    Ok((pw, ph))
}

fn pattern_image(width: usize, height: usize) -> RgbImage {
    let data = (0..width * height * 3)
        .map(|i| (i.wrapping_mul(2_654_435_761) >> 13) as u8)
        .collect();
    RgbImage::from_raw(width, height, data).expect("sized buffer")
}

pub fn bench_resolution(
    config: &NetworkConfig,
    weights: &ModelWeights<f32>,
    width: usize,
    height: usize,
    warmup: usize,
    runs: usize,
) -> Result<BenchReport> {
    if runs == 0 {
        return Err(Error::Config("at least one measured run is required".into()));
    }
    check_representable(config, width, height)?;
    let input = preprocess(&pattern_image(width, height), config.input_multiple())?;
    let (_, ph, pw) = input.tensor.chw()?;
    for _ in 0..warmup {
        forward(config, weights, &input.tensor)?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        let out = forward(config, weights, &input.tensor)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        drop(out);
    }
    let (mean, median, p95) = latency_stats(&times);
    let flops = count_flops(config, pw, ph, FlopConvention::MacIsOne).total();
    Ok(BenchReport {
        width,
        height,
        padded_width: pw,
        padded_height: ph,
        warmup,
        runs,
        threads: 1,
        mean_ms: mean,
        median_ms: median,
        p95_ms: p95,
        flops,
        e_net: e_net(flops, mean)?,
    })
}
