//! One optimizer step: augment, forward, assign, loss, backward, update.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assign::{assign_with_ignored, BranchLabelMap};
use crate::augment::{augment_sample, AugmentConfig, Augmented, Sample};
use crate::detect::preprocess;
use crate::loss::{branch_loss, BranchLoss};
use crate::net::{backward, forward_train, BranchOutput, ForwardTrace, ModelWeights, NetworkConfig};
use crate::optim::{lr_at, sgd_step, SgdState};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_drop_iters: Vec<u64>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_iters: u64,
    pub crop: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr0: 0.1,
            lr_drop_iters: alloc::vec![600_000, 1_000_000, 1_200_000, 1_400_000],
            lr_drop_factor: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            total_iters: 1_500_000,
            crop: 640,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, iter: u64) -> f64 {
        lr_at(iter, self.lr0, &self.lr_drop_iters, self.lr_drop_factor)
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive".into());
        }
        if self.crop == 0 || !self.crop.is_multiple_of(net.input_multiple()) {
            return bad(alloc::format!(
                "crop {} is not a positive multiple of {}",
                self.crop,
                net.input_multiple()
            ));
        }
        if self.lr_drop_iters.windows(2).any(|w| w[0] > w[1]) {
            return bad("lr_drop_iters must be ascending".into());
        }
        Ok(())
    }
}

/// Maps a function over items. Implementations may run items concurrently
/// but must return results in input order.
pub trait Executor: Sync {
    fn map<I: Sync, O: Send>(&self, items: &[I], f: &(dyn Fn(&I) -> O + Sync)) -> Vec<O>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<I: Sync, O: Send>(&self, items: &[I], f: &(dyn Fn(&I) -> O + Sync)) -> Vec<O> {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iter: u64,
    pub lr: f64,
    pub cls_loss: f32,
    pub reg_loss: f32,
    pub total: f32,
    pub n_pos: usize,
}

/// Generator for sample `slot` of iteration `iter`; a pure function of
/// `(seed, iter, slot)`.
pub fn sample_rng(seed: u64, iter: u64, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (slot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(iter);
    rng
}

pub fn sample_batch<E: Executor>(
    dataset: &[Sample],
    augment: &AugmentConfig,
    train: &TrainConfig,
    iter: u64,
    exec: &E,
) -> Result<Vec<Augmented>> {
    let slots: Vec<usize> = (0..train.batch_size).collect();
    exec.map(&slots, &|&slot| {
        augment_sample(dataset, augment, &mut sample_rng(train.seed, iter, slot))
    })
    .into_iter()
    .collect()
}

/// Labels of every branch for one augmented sample, given output map sizes.
pub fn label_sample(config: &NetworkConfig, sample: &Augmented, outputs: &[BranchOutput<f32>]) -> Result<Vec<BranchLabelMap>> {
    config
        .branches
        .iter()
        .zip(outputs)
        .map(|(branch, out)| {
            let (_, h, w) = out.scores.chw()?;
            Ok(assign_with_ignored(&sample.faces, &sample.ignored, branch, h, w))
        })
        .collect()
}

/// Per-branch losses and summed parameter gradients of one batch.
pub fn batch_gradients<E: Executor>(
    config: &NetworkConfig,
    weights: &ModelWeights<f32>,
    batch: &[Augmented],
    exec: &E,
) -> Result<(Vec<BranchLoss<f32>>, ModelWeights<f32>)> {
    type Fwd = (Tensor<f32>, Vec<BranchOutput<f32>>, ForwardTrace<f32>, Vec<BranchLabelMap>);
    let passes: Vec<Result<Fwd>> = exec.map(batch, &|s| {
        let input = preprocess(&s.image, config.input_multiple())?.tensor;
        let (outputs, trace) = forward_train(config, weights, &input)?;
        let labels = label_sample(config, s, &outputs)?;
        Ok((input, outputs, trace, labels))
    });
    let passes = passes.into_iter().collect::<Result<Vec<_>>>()?;

    let losses = (0..config.branches.len())
        .map(|b| {
            let outs: Vec<&BranchOutput<f32>> = passes.iter().map(|p| &p.1[b]).collect();
            let labels: Vec<&BranchLabelMap> = passes.iter().map(|p| &p.3[b]).collect();
            branch_loss(&outs, &labels)
        })
        .collect::<Result<Vec<_>>>()?;

    let indices: Vec<usize> = (0..batch.len()).collect();
    let per_sample = exec.map(&indices, &|&i| {
        let grad_out: Vec<BranchOutput<f32>> = losses.iter().map(|l| l.grad_output(i)).collect();
        backward(config, weights, &passes[i].0, &passes[i].2, &grad_out)
    });
    let mut grads = ModelWeights::zeros(config);
    for g in per_sample {
        grads.accumulate(&g?)?;
    }
    Ok((losses, grads))
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: NetworkConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub weights: ModelWeights<f32>,
    pub state: SgdState<f32>,
}

impl Trainer {
    pub fn new(net: NetworkConfig, train: TrainConfig, weights: ModelWeights<f32>) -> Result<Self> {
        net.validate()?;
        train.validate(&net)?;
        weights.check_against(&net)?;
        let augment = AugmentConfig::for_network(&net, train.crop);
        let state = SgdState::new(&net);
        Ok(Self {
            net,
            train,
            augment,
            weights,
            state,
        })
    }

    /// Runs iteration `iter`. Fails without touching the weights when the
    /// loss or any gradient is not finite.
    pub fn step<E: Executor>(&mut self, iter: u64, dataset: &[Sample], exec: &E) -> Result<StepStats> {
        let batch = sample_batch(dataset, &self.augment, &self.train, iter, exec)?;
        let (losses, grads) = batch_gradients(&self.net, &self.weights, &batch, exec)?;
        let cls: f32 = losses.iter().map(|l| l.cls_loss).sum();
        let reg: f32 = losses.iter().map(|l| l.reg_loss).sum();
        let total = cls + reg;
        if !total.is_finite() {
            return Err(Error::Diverged { iter, what: "loss" });
        }
        if !grads.all_finite() {
            return Err(Error::Diverged { iter, what: "gradient" });
        }
        let lr = self.train.lr_at(iter);
        sgd_step(
            &mut self.weights,
            &grads,
            &mut self.state,
            lr as f32,
            self.train.momentum as f32,
            self.train.weight_decay as f32,
        )?;
        if !self.weights.all_finite() {
            return Err(Error::Diverged { iter, what: "weights" });
        }
        Ok(StepStats {
            iter,
            lr,
            cls_loss: cls,
            reg_loss: reg,
            total,
            n_pos: losses.iter().map(|l| l.n_pos).sum(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::xavier_init;
    use crate::synth::{synth_dataset, SyntheticSpec};

    #[test]
    fn defaults_match_schedule() {
        let t = TrainConfig::default();
        assert_eq!(t.batch_size, 32);
        assert_eq!(t.lr_at(0) as f32, 0.1);
        assert_eq!(t.lr_at(1_450_000) as f32, 1e-5);
        assert_eq!(t.crop, 640);
    }

    #[test]
    fn crop_must_fit_the_network() {
        let net = NetworkConfig::desk(4);
        let mut t = TrainConfig {
            crop: 100,
            ..TrainConfig::default()
        };
        assert!(t.validate(&net).is_err());
        t.crop = 96;
        assert!(t.validate(&net).is_ok());
    }

    #[test]
    fn first_step_runs_and_is_repeatable() {
        let net = NetworkConfig::desk(4);
        let train = TrainConfig {
            batch_size: 2,
            crop: 64,
            lr0: 0.01,
            seed: 9,
            ..TrainConfig::default()
        };
        let data = synth_dataset(&SyntheticSpec::desk(96), 1, 3).unwrap();
        let w = xavier_init(&net, 2);
        let mut a = Trainer::new(net.clone(), train.clone(), w.clone()).unwrap();
        let mut b = Trainer::new(net, train, w).unwrap();
        let sa = a.step(0, &data, &Sequential).unwrap();
        let sb = b.step(0, &data, &Sequential).unwrap();
        assert_eq!(sa, sb);
        assert!(sa.n_pos > 0 && sa.total.is_finite());
        assert_eq!(a.weights, b.weights);
    }
}
