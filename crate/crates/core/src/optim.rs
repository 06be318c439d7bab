//! Learning-rate schedule, SGD with momentum and Xavier initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::{ModelWeights, NetworkConfig};
use crate::rf::LayerSpec;
use crate::{Error, Result, Scalar};

/// `lr0 · factor^n` where `n` counts the drop iterations `≤ iter`.
pub fn lr_at(iter: u64, lr0: f64, drops: &[u64], factor: f64) -> f64 {
    drops
        .iter()
        .filter(|&&d| d <= iter)
        .fold(lr0, |lr, _| lr * factor)
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T = f32> {
    pub velocity: ModelWeights<T>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(config: &NetworkConfig) -> Self {
        Self {
            velocity: ModelWeights::zeros(config),
        }
    }
}

/// `v ← μ·v + g + λ·w`, then `w ← w − lr·v`.
pub fn sgd_step<T: Scalar>(
    weights: &mut ModelWeights<T>,
    grads: &ModelWeights<T>,
    state: &mut SgdState<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    let ws = weights.convs_mut();
    let gs = grads.convs();
    let vs = state.velocity.convs_mut();
    if ws.len() != gs.len() || ws.len() != vs.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            expected: alloc::vec![ws.len()],
            got: alloc::vec![gs.len(), vs.len()],
        });
    }
    for ((w, g), v) in ws.into_iter().zip(gs).zip(vs) {
        w.weights.ensure_same_shape("sgd_step", &g.weights)?;
        w.weights.ensure_same_shape("sgd_step", &v.weights)?;
        update(w.weights.data_mut(), g.weights.data(), v.weights.data_mut(), lr, momentum, weight_decay);
        update(&mut w.bias, &g.bias, &mut v.bias, lr, momentum, weight_decay);
    }
    Ok(())
}

fn update<T: Scalar>(w: &mut [T], g: &[T], v: &mut [T], lr: T, momentum: T, decay: T) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v) {
        *v = momentum * *v + g + decay * *w;
        *w -= lr * *v;
    }
}

/// Uniform Xavier bound `sqrt(6 / (fan_in + fan_out))` with
/// `fan_in = k²·C_in` and `fan_out = k²·C_out`.
pub fn xavier_bound(layer: &LayerSpec) -> f64 {
    let kk = (layer.geometry.kernel * layer.geometry.kernel) as f64;
    let fans = kk * (layer.in_channels + layer.out_channels) as f64;
    libm::sqrt(6.0 / fans)
}

/// Xavier-uniform weights and zero biases, reproducible from `seed`.
pub fn xavier_init(config: &NetworkConfig, seed: u64) -> ModelWeights<f32> {
    let mut weights = ModelWeights::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (spec, conv) in config.all_layers().iter().zip(weights.convs_mut()) {
        let a = xavier_bound(spec) as f32;
        for w in conv.weights.data_mut() {
            *w = rng.gen_range(-a..a);
        }
    }
    weights
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::ConvGeometry;

    #[test]
    fn schedule_table() {
        let drops = [600_000, 1_000_000, 1_200_000, 1_400_000];
        let lr = |i| lr_at(i, 0.1, &drops, 0.1) as f32;
        assert_eq!(lr(0), 0.1);
        assert_eq!(lr(599_999), 0.1);
        assert_eq!(lr(600_000), 0.01);
        assert_eq!(lr(1_000_000), 0.001);
        assert_eq!(lr(1_200_000), 1e-4);
        assert_eq!(lr(1_450_000), 1e-5);
    }

    #[test]
    fn bound_for_64_to_64() {
        let l = LayerSpec::new("c", ConvGeometry::conv3x3(1), 64, 64);
        assert!((xavier_bound(&l) - libm::sqrt(6.0 / 1152.0)).abs() < 1e-15);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = NetworkConfig::desk(8);
        assert_eq!(xavier_init(&cfg, 3), xavier_init(&cfg, 3));
        assert_ne!(xavier_init(&cfg, 3), xavier_init(&cfg, 4));
        let w = xavier_init(&cfg, 3);
        assert!(w.convs().iter().all(|c| c.bias.iter().all(|&b| b == 0.0)));
    }
}
