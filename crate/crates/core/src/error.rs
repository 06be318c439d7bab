use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid convolution geometry: kernel {kernel}, stride {stride}, pad {pad}")]
    InvalidGeometry {
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    #[error("{op}: index ({row}, {col}) outside {height}x{width} map")]
    OutOfRange {
        op: &'static str,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("input {width}x{height} is not a multiple of {multiple}; pad it first")]
    NotPadded {
        width: usize,
        height: usize,
        multiple: usize,
    },
    #[error("receptive field size must be positive")]
    ZeroRfSize,
    #[error("latency must be positive")]
    ZeroLatency,
    #[error("image has a zero dimension")]
    EmptyImage,
    #[error("dataset has no usable faces")]
    EmptyDataset,
    #[error("training diverged at iteration {iter}: {what} is not finite")]
    Diverged { iter: u64, what: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
}
