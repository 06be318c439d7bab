//! The detection network: a plain 3×3 conv backbone with side-by-side
//! residual blocks and 1×1 detection heads tapped at increasing depths.
//!
//! ```text
//! tiny   c1 s2, c2 s2, [c3 c4] [c5 c6] [c7 c8]→b1 [c9 c10]→b2
//! small  c11 s2, [c12 c13]→b3 [c14 c15]→b4
//! medium c16 s2, [c17 c18]→b5
//! large  c19 s2, [c20 c21]→b6 [c22 c23]→b7 [c24 c25]→b8
//! ```
//!
//! A residual block computes `relu(x + conv_b(relu(conv_a(x))))`; branches
//! read the post-activation output of their tap layer. Each head is a shared
//! 1×1 conv followed by two 1×1 → 1×1 sub-branches producing 2 class logits
//! (channel 0 background, channel 1 face) and 4 box offsets per cell.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{
    conv2d_backward_impl, conv2d_forward, relu_inplace, ConvGeometry, ConvParams,
};
use crate::rf::{accumulate, LayerSpec, RfInfo};
use crate::{Error, Result, Scalar, Tensor};

pub const FORMAT_VERSION: u32 = 1;

/// Smallest and largest face sizes the reference network is built for.
pub const MIN_FACE: usize = 10;
pub const MAX_FACE: usize = 560;

/// Class channel holding the face logit.
pub const FACE_CHANNEL: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchSpec {
    /// 1-based.
    pub id: usize,
    /// Index into [`NetworkConfig::layers`].
    pub tap_layer: usize,
    pub scale_lo: usize,
    pub scale_hi: usize,
    pub rf_size: usize,
    pub acc_stride: usize,
    pub head_channels: usize,
}

impl BranchSpec {
    /// Receptive field over the mean face size of the band.
    pub fn rf_ratio(&self) -> f64 {
        self.rf_size as f64 / ((self.scale_lo + self.scale_hi) as f64 / 2.0)
    }

    /// The five 1×1 convs of this branch's head, in storage order.
    pub fn head_layers(&self) -> [LayerSpec; 5] {
        let c = self.head_channels;
        let b = self.id;
        let g = ConvGeometry::conv1x1();
        [
            LayerSpec::new(&format!("b{b}_shared"), g, c, c),
            LayerSpec::new(&format!("b{b}_cls1"), g, c, c),
            LayerSpec::new(&format!("b{b}_cls2"), g, c, 2),
            LayerSpec::new(&format!("b{b}_reg1"), g, c, c),
            LayerSpec::new(&format!("b{b}_reg2"), g, c, 4),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub branches: Vec<BranchSpec>,
    /// `(first, last)` layer indices of each residual block; the input of
    /// `first` is added to the pre-activation output of `last`.
    pub residuals: Vec<(usize, usize)>,
}

/// `(tap, acc_stride, rf, lo, hi)` of the reference branches.
const REFERENCE_BRANCHES: [(usize, usize, usize, usize, usize); 8] = [
    (8, 4, 55, 10, 15),
    (10, 4, 71, 15, 20),
    (13, 8, 111, 20, 40),
    (15, 8, 143, 40, 70),
    (18, 16, 223, 70, 110),
    (21, 32, 383, 110, 250),
    (23, 32, 511, 250, 400),
    (25, 32, 639, 400, 560),
];

/// 1-based layers that downsample by two.
const DOWNSAMPLERS: [usize; 5] = [1, 2, 11, 16, 19];

/// 1-based `(first, last)` layers of each residual block.
const RESIDUAL_BLOCKS: [(usize, usize); 10] = [
    (3, 4),
    (5, 6),
    (7, 8),
    (9, 10),
    (12, 13),
    (14, 15),
    (17, 18),
    (20, 21),
    (22, 23),
    (24, 25),
];

impl NetworkConfig {
    /// The full 25-layer, 8-branch network.
    pub fn reference() -> Self {
        Self::build("reference", 25, 8, |layer| if layer <= 15 { 64 } else { 128 })
    }

    /// The tiny and small parts only (c1..c15, branches 1-4), every layer
    /// `width` channels wide.
    pub fn desk(width: usize) -> Self {
        Self::build(&format!("desk-w{width}"), 15, 4, |_| width)
    }

    fn build(name: &str, n_layers: usize, n_branches: usize, width: impl Fn(usize) -> usize) -> Self {
        let layers = (1..=n_layers)
            .map(|i| {
                let stride = if DOWNSAMPLERS.contains(&i) { 2 } else { 1 };
                let cin = if i == 1 { 3 } else { width(i - 1) };
                LayerSpec::new(&format!("c{i}"), ConvGeometry::conv3x3(stride), cin, width(i))
            })
            .collect();
        let branches = REFERENCE_BRANCHES[..n_branches]
            .iter()
            .enumerate()
            .map(|(i, &(tap, acc_stride, rf_size, scale_lo, scale_hi))| BranchSpec {
                id: i + 1,
                tap_layer: tap - 1,
                scale_lo,
                scale_hi,
                rf_size,
                acc_stride,
                head_channels: width(tap),
            })
            .collect();
        let residuals = RESIDUAL_BLOCKS
            .iter()
            .filter(|&&(_, last)| last <= n_layers)
            .map(|&(a, b)| (a - 1, b - 1))
            .collect();
        Self {
            name: name.into(),
            layers,
            branches,
            residuals,
        }
    }

    pub fn rf_table(&self) -> Vec<RfInfo> {
        accumulate(&self.layers)
    }

    /// Largest accumulated stride; input dims must be a multiple of it.
    pub fn input_multiple(&self) -> usize {
        self.rf_table().iter().map(|r| r.acc_stride).max().unwrap_or(1)
    }

    /// Output `(height, width)` of every backbone layer.
    pub fn layer_dims(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layers.len());
        let (mut h, mut w) = (height, width);
        for l in &self.layers {
            h = l.geometry.output_dim(h).unwrap_or(0);
            w = l.geometry.output_dim(w).unwrap_or(0);
            dims.push((h, w));
        }
        dims
    }

    pub fn map_dims(&self, layer: usize, height: usize, width: usize) -> (usize, usize) {
        self.layer_dims(height, width)[layer]
    }

    /// Structural checks: channel chaining, residual shapes, branch taps and
    /// contiguous scale bands consistent with the receptive-field table.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        for l in &self.layers {
            l.geometry.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return bad(format!("{} -> {} channel mismatch", pair[0].name, pair[1].name));
            }
        }
        for &(first, last) in &self.residuals {
            if first >= last || last >= self.layers.len() || first == 0 {
                return bad(format!("bad residual block ({first}, {last})"));
            }
            let span = &self.layers[first..=last];
            if span.iter().any(|l| l.geometry.stride != 1)
                || self.layers[first].in_channels != self.layers[last].out_channels
            {
                return bad(format!("residual block ({first}, {last}) changes shape"));
            }
        }
        let rf = self.rf_table();
        for (i, b) in self.branches.iter().enumerate() {
            if b.id != i + 1 || b.tap_layer >= self.layers.len() {
                return bad(format!("branch {} misnumbered or tapped out of range", b.id));
            }
            if b.scale_lo >= b.scale_hi {
                return bad(format!("branch {} has an empty band", b.id));
            }
            if i > 0 && self.branches[i - 1].scale_hi != b.scale_lo {
                return bad(format!("band gap before branch {}", b.id));
            }
            let info = &rf[b.tap_layer];
            if info.rf_size != b.rf_size || info.acc_stride != b.acc_stride {
                return bad(format!("branch {} disagrees with the RF table", b.id));
            }
            if b.head_channels != self.layers[b.tap_layer].out_channels {
                return bad(format!("branch {} head width differs from its tap", b.id));
            }
        }
        Ok(())
    }

    /// Every conv in storage order: backbone, then each branch head.
    pub fn all_layers(&self) -> Vec<LayerSpec> {
        let mut out = self.layers.clone();
        for b in &self.branches {
            out.extend(b.head_layers());
        }
        out
    }

    /// 64-bit FNV-1a over a canonical description of the topology.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv::new();
        for l in self.all_layers() {
            h.write(l.name.as_bytes());
            for v in [
                l.geometry.kernel,
                l.geometry.stride,
                l.geometry.pad,
                l.in_channels,
                l.out_channels,
            ] {
                h.write(&(v as u64).to_le_bytes());
            }
        }
        for b in &self.branches {
            for v in [b.id, b.tap_layer, b.scale_lo, b.scale_hi, b.rf_size, b.acc_stride] {
                h.write(&(v as u64).to_le_bytes());
            }
        }
        for &(a, b) in &self.residuals {
            h.write(&(a as u64).to_le_bytes());
            h.write(&(b as u64).to_le_bytes());
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Closed-form parameter count: `k²·C_in·C_out + C_out` summed over every conv.
pub fn count_params(config: &NetworkConfig) -> usize {
    config.all_layers().iter().map(LayerSpec::param_count).sum()
}

pub fn count_backbone_params(config: &NetworkConfig) -> usize {
    config.layers.iter().map(LayerSpec::param_count).sum()
}

/// How a multiply-accumulate is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlopConvention {
    /// One FLOP per multiply-accumulate.
    #[default]
    MacIsOne,
    MacIsTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    pub backbone: u64,
    pub heads: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.backbone + self.heads
    }
}

/// Convolution FLOPs at a `width × height` input. Bias adds and ReLUs are
/// not counted.
pub fn count_flops(
    config: &NetworkConfig,
    width: usize,
    height: usize,
    convention: FlopConvention,
) -> FlopCount {
    let factor = match convention {
        FlopConvention::MacIsOne => 1,
        FlopConvention::MacIsTwo => 2,
    };
    let dims = config.layer_dims(height, width);
    let macs = |l: &LayerSpec, (h, w): (usize, usize)| -> u64 {
        let k = l.geometry.kernel as u64;
        k * k * (l.in_channels * l.out_channels) as u64 * (h * w) as u64
    };
    let backbone = config
        .layers
        .iter()
        .zip(&dims)
        .map(|(l, &d)| macs(l, d))
        .sum::<u64>();
    let heads = config
        .branches
        .iter()
        .map(|b| {
            b.head_layers()
                .iter()
                .map(|l| macs(l, dims[b.tap_layer]))
                .sum::<u64>()
        })
        .sum::<u64>();
    FlopCount {
        backbone: backbone * factor,
        heads: heads * factor,
    }
}

/// Computation efficiency: FLOPs per millisecond, in units of 1e9.
pub fn e_net(flops: u64, latency_ms: f64) -> Result<f64> {
    if !(latency_ms > 0.0) {
        return Err(Error::ZeroLatency);
    }
    Ok(flops as f64 / 1e9 / latency_ms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T = f32> {
    pub shared: ConvParams<T>,
    pub cls_hidden: ConvParams<T>,
    pub cls_out: ConvParams<T>,
    pub reg_hidden: ConvParams<T>,
    pub reg_out: ConvParams<T>,
}

impl<T: Scalar> HeadParams<T> {
    fn convs(&self) -> [&ConvParams<T>; 5] {
        [
            &self.shared,
            &self.cls_hidden,
            &self.cls_out,
            &self.reg_hidden,
            &self.reg_out,
        ]
    }

    fn convs_mut(&mut self) -> [&mut ConvParams<T>; 5] {
        [
            &mut self.shared,
            &mut self.cls_hidden,
            &mut self.cls_out,
            &mut self.reg_hidden,
            &mut self.reg_out,
        ]
    }
}

/// Parameters of a network, also used as the container for gradients and
/// optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    pub config_hash: u64,
    pub format_version: u32,
    pub backbone: Vec<ConvParams<T>>,
    pub heads: Vec<HeadParams<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let conv = |l: &LayerSpec| ConvParams::zeros(l.geometry, l.in_channels, l.out_channels);
        let backbone = config.layers.iter().map(conv).collect();
        let heads = config
            .branches
            .iter()
            .map(|b| {
                let [s, c1, c2, r1, r2] = b.head_layers();
                HeadParams {
                    shared: conv(&s),
                    cls_hidden: conv(&c1),
                    cls_out: conv(&c2),
                    reg_hidden: conv(&r1),
                    reg_out: conv(&r2),
                }
            })
            .collect();
        Self {
            config_hash: config.hash(),
            format_version: FORMAT_VERSION,
            backbone,
            heads,
        }
    }

    /// Every conv in the order of [`NetworkConfig::all_layers`].
    pub fn convs(&self) -> Vec<&ConvParams<T>> {
        let mut out: Vec<&ConvParams<T>> = self.backbone.iter().collect();
        for h in &self.heads {
            out.extend(h.convs());
        }
        out
    }

    pub fn convs_mut(&mut self) -> Vec<&mut ConvParams<T>> {
        let mut out: Vec<&mut ConvParams<T>> = self.backbone.iter_mut().collect();
        for h in &mut self.heads {
            out.extend(h.convs_mut());
        }
        out
    }

    /// Sum of allocated weight and bias lengths.
    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|c| c.param_count()).sum()
    }

    /// Checks that every tensor matches `config`.
    pub fn check_against(&self, config: &NetworkConfig) -> Result<()> {
        let specs = config.all_layers();
        let convs = self.convs();
        if specs.len() != convs.len() || self.config_hash != config.hash() {
            return Err(Error::Config(format!(
                "weights do not belong to network '{}'",
                config.name
            )));
        }
        for (s, c) in specs.iter().zip(convs) {
            let k = s.geometry.kernel;
            if c.geometry != s.geometry
                || c.weights.shape() != [s.out_channels, s.in_channels, k, k]
                || c.bias.len() != s.out_channels
            {
                return Err(Error::ShapeMismatch {
                    op: "model weights",
                    expected: vec![s.out_channels, s.in_channels, k, k],
                    got: c.weights.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            config_hash: self.config_hash,
            format_version: self.format_version,
            backbone: self.backbone.iter().map(ConvParams::cast).collect(),
            heads: self
                .heads
                .iter()
                .map(|h| HeadParams {
                    shared: h.shared.cast(),
                    cls_hidden: h.cls_hidden.cast(),
                    cls_out: h.cls_out.cast(),
                    reg_hidden: h.reg_hidden.cast(),
                    reg_out: h.reg_out.cast(),
                })
                .collect(),
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.convs_mut().into_iter().zip(other.convs()) {
            a.weights.add_assign(&b.weights)?;
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.convs()
            .iter()
            .all(|c| c.weights.all_finite() && c.bias.iter().all(|b| b.is_finite()))
    }
}

/// Raw outputs of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput<T = f32> {
    /// `2 × h × w` logits.
    pub scores: Tensor<T>,
    /// `4 × h × w` normalized corner offsets.
    pub regs: Tensor<T>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T = f32> {
    /// Post-activation output of every backbone layer.
    acts: Vec<Tensor<T>>,
    heads: Vec<HeadTrace<T>>,
}

#[derive(Debug, Clone)]
struct HeadTrace<T> {
    shared: Tensor<T>,
    cls_hidden: Tensor<T>,
    reg_hidden: Tensor<T>,
}

fn check_input<T: Scalar>(config: &NetworkConfig, image: &Tensor<T>) -> Result<()> {
    let (c, h, w) = image.chw()?;
    let multiple = config.input_multiple();
    if c != config.layers[0].in_channels {
        return Err(Error::ShapeMismatch {
            op: "network input",
            expected: vec![config.layers[0].in_channels, h, w],
            got: image.shape().to_vec(),
        });
    }
    if h == 0 || w == 0 || h % multiple != 0 || w % multiple != 0 {
        return Err(Error::NotPadded {
            width: w,
            height: h,
            multiple,
        });
    }
    Ok(())
}

fn relu_conv<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let mut y = conv2d_forward(x, p)?;
    relu_inplace(&mut y);
    Ok(y)
}

fn head_forward<T: Scalar>(
    tap: &Tensor<T>,
    head: &HeadParams<T>,
) -> Result<(BranchOutput<T>, HeadTrace<T>)> {
    let shared = relu_conv(tap, &head.shared)?;
    let cls_hidden = relu_conv(&shared, &head.cls_hidden)?;
    let reg_hidden = relu_conv(&shared, &head.reg_hidden)?;
    let out = BranchOutput {
        scores: conv2d_forward(&cls_hidden, &head.cls_out)?,
        regs: conv2d_forward(&reg_hidden, &head.reg_out)?,
    };
    Ok((
        out,
        HeadTrace {
            shared,
            cls_hidden,
            reg_hidden,
        },
    ))
}

/// Backbone walk shared by inference and training. `keep` decides whether
/// an activation stays alive after its last use.
fn run<T: Scalar>(
    config: &NetworkConfig,
    weights: &ModelWeights<T>,
    image: &Tensor<T>,
    keep_all: bool,
) -> Result<(Vec<BranchOutput<T>>, Option<ForwardTrace<T>>)> {
    check_input(config, image)?;
    let mut outputs: Vec<Option<BranchOutput<T>>> = vec![None; config.branches.len()];
    let mut head_traces: Vec<Option<HeadTrace<T>>> = vec![None; config.branches.len()];
    let mut acts: Vec<Tensor<T>> = Vec::new();
    let mut prev: Option<Tensor<T>> = None;
    let mut skip: Option<Tensor<T>> = None;

    for (i, params) in weights.backbone.iter().enumerate() {
        let input = prev.as_ref().unwrap_or(image);
        if config.residuals.iter().any(|&(first, _)| first == i) {
            skip = Some(input.clone());
        }
        let mut y = conv2d_forward(input, params)?;
        if config.residuals.iter().any(|&(_, last)| last == i) {
            y.add_assign(skip.as_ref().expect("residual block entered"))?;
            skip = None;
        }
        relu_inplace(&mut y);
        for (b, branch) in config.branches.iter().enumerate() {
            if branch.tap_layer == i {
                let (out, trace) = head_forward(&y, &weights.heads[b])?;
                outputs[b] = Some(out);
                if keep_all {
                    head_traces[b] = Some(trace);
                }
            }
        }
        if keep_all {
            acts.push(y.clone());
        }
        prev = Some(y);
    }
    let outputs = outputs
        .into_iter()
        .map(|o| o.ok_or_else(|| Error::Config("branch tap never reached".into())))
        .collect::<Result<Vec<_>>>()?;
    let trace = keep_all.then(|| ForwardTrace {
        acts,
        heads: head_traces.into_iter().map(|t| t.unwrap()).collect(),
    });
    Ok((outputs, trace))
}

/// Inference pass. `image` is a normalized `3 × H × W` tensor with `H` and
/// `W` multiples of [`NetworkConfig::input_multiple`].
pub fn forward<T: Scalar>(
    config: &NetworkConfig,
    weights: &ModelWeights<T>,
    image: &Tensor<T>,
) -> Result<Vec<BranchOutput<T>>> {
    Ok(run(config, weights, image, false)?.0)
}

/// Forward pass that also records what [`backward`] needs.
pub fn forward_train<T: Scalar>(
    config: &NetworkConfig,
    weights: &ModelWeights<T>,
    image: &Tensor<T>,
) -> Result<(Vec<BranchOutput<T>>, ForwardTrace<T>)> {
    let (out, trace) = run(config, weights, image, true)?;
    Ok((out, trace.expect("trace requested")))
}

fn mask_by<T: Scalar>(grad: &mut Tensor<T>, act: &Tensor<T>) {
    for (g, &a) in grad.data_mut().iter_mut().zip(act.data()) {
        if !(a > T::ZERO) {
            *g = T::ZERO;
        }
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn store_grads<T: Scalar>(dst: &mut ConvParams<T>, weights: Tensor<T>, bias: Vec<T>) {
    dst.weights = weights;
    dst.bias = bias;
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradients with respect to each branch's outputs.
pub fn backward<T: Scalar>(
    config: &NetworkConfig,
    weights: &ModelWeights<T>,
    image: &Tensor<T>,
    trace: &ForwardTrace<T>,
    grad_outputs: &[BranchOutput<T>],
) -> Result<ModelWeights<T>> {
    let mut grads = ModelWeights::zeros(config);
    let n = config.layers.len();
    let mut grad_acts: Vec<Option<Tensor<T>>> = vec![None; n];

    for (b, branch) in config.branches.iter().enumerate() {
        let head = &weights.heads[b];
        let ht = &trace.heads[b];
        let go = &grad_outputs[b];
        let gh = &mut grads.heads[b];

        let (gw, gb, gin) = conv2d_backward_impl(&ht.cls_hidden, &head.cls_out, &go.scores, true)?;
        store_grads(&mut gh.cls_out, gw, gb);
        let mut g_cls = gin.unwrap();
        mask_by(&mut g_cls, &ht.cls_hidden);
        let (gw, gb, gin) = conv2d_backward_impl(&ht.shared, &head.cls_hidden, &g_cls, true)?;
        store_grads(&mut gh.cls_hidden, gw, gb);
        let mut g_shared = gin.unwrap();

        let (gw, gb, gin) = conv2d_backward_impl(&ht.reg_hidden, &head.reg_out, &go.regs, true)?;
        store_grads(&mut gh.reg_out, gw, gb);
        let mut g_reg = gin.unwrap();
        mask_by(&mut g_reg, &ht.reg_hidden);
        let (gw, gb, gin) = conv2d_backward_impl(&ht.shared, &head.reg_hidden, &g_reg, true)?;
        store_grads(&mut gh.reg_hidden, gw, gb);
        g_shared.add_assign(&gin.unwrap())?;

        mask_by(&mut g_shared, &ht.shared);
        let tap = &trace.acts[branch.tap_layer];
        let (gw, gb, gin) = conv2d_backward_impl(tap, &head.shared, &g_shared, true)?;
        store_grads(&mut gh.shared, gw, gb);
        add_into(&mut grad_acts[branch.tap_layer], gin.unwrap())?;
    }

    for i in (0..n).rev() {
        let Some(mut g) = grad_acts[i].take() else {
            continue;
        };
        mask_by(&mut g, &trace.acts[i]);
        if let Some(&(first, _)) = config.residuals.iter().find(|&&(_, last)| last == i) {
            add_into(&mut grad_acts[first - 1], g.clone())?;
        }
        let input = if i == 0 { image } else { &trace.acts[i - 1] };
        let (gw, gb, gin) = conv2d_backward_impl(input, &weights.backbone[i], &g, i > 0)?;
        store_grads(&mut grads.backbone[i], gw, gb);
        if let Some(gin) = gin {
            add_into(&mut grad_acts[i - 1], gin)?;
        }
    }
    Ok(grads)
}
