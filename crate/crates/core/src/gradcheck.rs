//! Finite-difference checks of the analytic gradients.
//!
//! Each check evaluates the analytic gradient in `f32` and compares it with a
//! central difference of the same loss evaluated in `f64` at the same point
//! (inputs are rounded through `f32` first).

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assign::{assign, FaceBox};
use crate::conv::{conv2d_backward, conv2d_forward, relu_backward, relu_forward, ConvGeometry, ConvParams};
use crate::loss::{branch_loss, cls_loss, reg_loss, total_loss};
use crate::net::{backward, forward, forward_train, BranchOutput, ModelWeights, NetworkConfig};
use crate::optim::xavier_init;
use crate::{Result, Scalar, Tensor};

pub const FD_STEP: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps entries whose true
/// gradient is numerically zero from dividing by noise.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x0: f64) -> f64 {
    (f(x0 + FD_STEP) - f(x0 - FD_STEP)) / (2.0 * FD_STEP)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub name: &'static str,
    /// Largest relative error seen.
    pub worst: f64,
    pub checked: usize,
}

impl GradReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: 0.0,
            checked: 0,
        }
    }

    fn add(&mut self, analytic: f64, numeric: f64, floor: f64) {
        self.worst = self.worst.max(rel_err(analytic, numeric, floor));
        self.checked += 1;
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.worst <= tol
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale) as f32 as f64).collect();
    Tensor::from_vec(shape, data).expect("sized buffer")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn perturbed<'a, C: Clone>(base: &'a C, edit: impl Fn(&mut C, f64) + 'a) -> impl Fn(f64) -> C + 'a {
    move |v| {
        let mut c = base.clone();
        edit(&mut c, v);
        c
    }
}

/// Every input, weight and bias of one convolution under the loss
/// `⟨conv(x), r⟩` for a random `r`.
pub fn check_conv(geometry: ConvGeometry, cin: usize, cout: usize, h: usize, w: usize, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = geometry.kernel;
    let x = random_tensor(&mut rng, &[cin, h, w], 1.0);
    let wt = random_tensor(&mut rng, &[cout, cin, k, k], 0.5);
    let bias: Vec<f64> = (0..cout).map(|_| rng.gen_range(-0.5..0.5f64) as f32 as f64).collect();
    let p = ConvParams::new(geometry, wt, bias)?;
    let out_shape = conv2d_forward(&x, &p)?.shape().to_vec();
    let r = random_tensor(&mut rng, &out_shape, 1.0);
    let g = conv2d_backward(&x.cast::<f32>(), &p.cast::<f32>(), &r.cast::<f32>())?;
    let loss = |x: &Tensor<f64>, p: &ConvParams<f64>| conv2d_forward(x, p).map(|y| dot(&y, &r));

    let mut rep = GradReport::new("conv");
    for i in 0..x.len() {
        let at = perturbed(&x, |t: &mut Tensor<f64>, v| t.data_mut()[i] = v);
        let num = central_difference(|v| loss(&at(v), &p).unwrap_or(f64::NAN), x.data()[i]);
        rep.add(g.input.data()[i] as f64, num, 1e-3);
    }
    for i in 0..p.weights.len() {
        let at = perturbed(&p, |q: &mut ConvParams<f64>, v| q.weights.data_mut()[i] = v);
        let num = central_difference(|v| loss(&x, &at(v)).unwrap_or(f64::NAN), p.weights.data()[i]);
        rep.add(g.weights.data()[i] as f64, num, 1e-3);
    }
    for i in 0..cout {
        let at = perturbed(&p, |q: &mut ConvParams<f64>, v| q.bias[i] = v);
        let num = central_difference(|v| loss(&x, &at(v)).unwrap_or(f64::NAN), p.bias[i]);
        rep.add(g.bias[i] as f64, num, 1e-3);
    }
    Ok(rep)
}

/// ReLU at points at least 0.05 away from the kink.
pub fn check_relu(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = random_tensor(&mut rng, &[3, 5, 5], 1.0);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v = 0.5;
        }
    }
    let r = random_tensor(&mut rng, &[3, 5, 5], 1.0);
    let g = relu_backward(&x.cast::<f32>(), &r.cast::<f32>())?;
    let mut rep = GradReport::new("relu");
    for i in 0..x.len() {
        let at = perturbed(&x, |t: &mut Tensor<f64>, v| t.data_mut()[i] = v);
        let num = central_difference(|v| dot(&relu_forward(&at(v)), &r), x.data()[i]);
        rep.add(g.data()[i] as f64, num, 1e-3);
    }
    Ok(rep)
}

/// Classification and regression losses of branch 1 on an 8×8 map.
pub fn check_losses(seed: u64) -> Result<GradReport> {
    let cfg = NetworkConfig::desk(4);
    let (h, w) = (8, 8);
    let faces = [FaceBox::new(3.0, 5.0, 15.0, 17.0), FaceBox::new(17.0, 13.0, 29.0, 26.0)];
    let labels = assign(&faces, &cfg.branches[0], h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = random_tensor(&mut rng, &[2, h, w], 2.0);
    let t = random_tensor(&mut rng, &[4, h, w], 1.0);
    let cls = cls_loss(&[&z.cast::<f32>()], &[&labels])?;
    let reg = reg_loss(&[&t.cast::<f32>()], &[&labels])?;

    let mut rep = GradReport::new("losses");
    for i in 0..z.len() {
        let at = perturbed(&z, |m: &mut Tensor<f64>, v| m.data_mut()[i] = v);
        let num = central_difference(|v| cls_loss(&[&at(v)], &[&labels]).map_or(f64::NAN, |l| l.loss), z.data()[i]);
        rep.add(cls.grads[0].data()[i] as f64, num, 1e-3);
    }
    for i in 0..t.len() {
        let at = perturbed(&t, |m: &mut Tensor<f64>, v| m.data_mut()[i] = v);
        let num = central_difference(|v| reg_loss(&[&at(v)], &[&labels]).map_or(f64::NAN, |l| l.loss), t.data()[i]);
        rep.add(reg.grads[0].data()[i] as f64, num, 1e-3);
    }
    Ok(rep)
}

fn network_loss<T: Scalar>(
    cfg: &NetworkConfig,
    weights: &ModelWeights<T>,
    x: &Tensor<T>,
    faces: &[FaceBox],
) -> Result<(T, Vec<BranchOutput<T>>)> {
    let outs = forward(cfg, weights, x)?;
    let mut losses = Vec::with_capacity(outs.len());
    for (b, o) in cfg.branches.iter().zip(&outs) {
        let (_, h, w) = o.scores.chw()?;
        losses.push(branch_loss(&[o], &[&assign(faces, b, h, w)])?);
    }
    let grads = losses.iter().map(|l| l.grad_output(0)).collect();
    Ok((total_loss(&losses), grads))
}

/// Full forward/backward of a width-4 desk network on a 32×32 image with two
/// faces: three weights and one bias per layer. Biases are randomized so no
/// pre-activation sits exactly on a ReLU kink.
pub fn check_network(seed: u64) -> Result<GradReport> {
    let cfg = NetworkConfig::desk(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w32 = xavier_init(&cfg, seed);
    for conv in w32.convs_mut() {
        for b in &mut conv.bias {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let w64 = w32.cast::<f64>();
    let x = random_tensor(&mut rng, &[3, 32, 32], 1.0);
    let faces = [FaceBox::new(3.0, 5.0, 15.0, 17.0), FaceBox::new(6.0, 2.0, 30.0, 28.0)];

    let x32 = x.cast::<f32>();
    let (_, trace) = forward_train(&cfg, &w32, &x32)?;
    let (_, grad_out) = network_loss(&cfg, &w32, &x32, &faces)?;
    let grads = backward(&cfg, &w32, &x32, &trace, &grad_out)?;
    let analytic = grads.convs();
    let scale = analytic
        .iter()
        .flat_map(|c| c.weights.data().iter().chain(&c.bias))
        .fold(0.0f64, |m, &v| m.max(libm::fabs(v as f64)));
    let floor = 1e-3 * scale;
    let loss = |w: &ModelWeights<f64>| network_loss(&cfg, w, &x, &faces).map_or(f64::NAN, |l| l.0);

    let mut rep = GradReport::new("network");
    for (layer, a) in analytic.iter().enumerate() {
        for _ in 0..3 {
            let i = rng.gen_range(0..a.weights.len());
            let at = perturbed(&w64, |m: &mut ModelWeights<f64>, v| m.convs_mut()[layer].weights.data_mut()[i] = v);
            let num = central_difference(|v| loss(&at(v)), w64.convs()[layer].weights.data()[i]);
            rep.add(a.weights.data()[i] as f64, num, floor);
        }
        let j = rng.gen_range(0..a.bias.len());
        let at = perturbed(&w64, |m: &mut ModelWeights<f64>, v| m.convs_mut()[layer].bias[j] = v);
        let num = central_difference(|v| loss(&at(v)), w64.convs()[layer].bias[j]);
        rep.add(a.bias[j] as f64, num, floor);
    }
    Ok(rep)
}

/// Every check above at fixed seeds.
pub fn gradient_suite() -> Result<Vec<GradReport>> {
    Ok(alloc::vec![
        check_conv(ConvGeometry::conv3x3(1), 3, 4, 7, 6, 1)?,
        check_conv(ConvGeometry::conv3x3(2), 2, 3, 9, 7, 2)?,
        check_conv(ConvGeometry::conv1x1(), 5, 2, 4, 6, 3)?,
        check_relu(4)?,
        check_losses(5)?,
        check_network(11)?,
    ])
}
