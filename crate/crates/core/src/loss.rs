//! Per-branch classification and regression losses.
//!
//! Classification is two-class softmax cross-entropy averaged over the
//! positive cells plus the hardest negatives (at most ten per positive).
//! Regression is squared error over the four offsets of positive cells,
//! averaged over `4 · positives`. Both are computed jointly over every sample
//! of a batch, one branch at a time.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::assign::{BranchLabelMap, Label};
use crate::net::BranchOutput;
use crate::{Error, Result, Scalar, Tensor};

/// Negatives kept per positive.
pub const NEG_PER_POS: usize = 10;
/// Negatives kept when a branch has no positives at all.
pub const NEG_FLOOR: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct BranchLoss<T = f32> {
    pub cls_loss: T,
    pub reg_loss: T,
    pub n_pos: usize,
    pub n_neg_selected: usize,
    /// One `2 × h × w` gradient per sample.
    pub grad_scores: Vec<Tensor<T>>,
    /// One `4 × h × w` gradient per sample.
    pub grad_regs: Vec<Tensor<T>>,
}

impl<T: Scalar> BranchLoss<T> {
    pub fn total(&self) -> T {
        self.cls_loss + self.reg_loss
    }

    pub fn grad_output(&self, sample: usize) -> BranchOutput<T> {
        BranchOutput {
            scores: self.grad_scores[sample].clone(),
            regs: self.grad_regs[sample].clone(),
        }
    }
}

/// Cross-entropy of one cell and its gradient w.r.t. `(z_bg, z_face)`.
fn cell_ce<T: Scalar>(z_bg: T, z_face: T, face: bool) -> (T, [T; 2]) {
    let m = z_bg.max(z_face);
    let (e0, e1) = ((z_bg - m).exp(), (z_face - m).exp());
    let sum = e0 + e1;
    let lse = m + sum.ln();
    let (p0, p1) = (e0 / sum, e1 / sum);
    if face {
        (lse - z_face, [p0, p1 - T::ONE])
    } else {
        (lse - z_bg, [p0 - T::ONE, p1])
    }
}

fn quota(n_pos: usize) -> usize {
    if n_pos == 0 {
        NEG_FLOOR
    } else {
        NEG_PER_POS * n_pos
    }
}

/// Picks the `min(quota, n)` negatives with the largest loss, ties broken by
/// the smaller cell id. `losses` holds `(cell id, loss)`; the result is the
/// selected ids in ascending order.
pub fn mine_hard_negatives<T: Scalar>(losses: &[(usize, T)], n_pos: usize) -> Vec<usize> {
    let k = quota(n_pos).min(losses.len());
    if k == 0 {
        return Vec::new();
    }
    let mut order = losses.to_vec();
    let rank = |a: &(usize, T), b: &(usize, T)| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, rank);
    }
    let mut picked: Vec<usize> = order[..k].iter().map(|&(id, _)| id).collect();
    picked.sort_unstable();
    picked
}

fn check_grid<T: Scalar>(
    op: &'static str,
    t: &Tensor<T>,
    channels: usize,
    labels: &BranchLabelMap,
) -> Result<()> {
    let want = [channels, labels.height, labels.width];
    if t.shape() != want {
        return Err(Error::ShapeMismatch {
            op,
            expected: want.to_vec(),
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsLoss<T = f32> {
    pub loss: T,
    pub n_pos: usize,
    pub n_neg_selected: usize,
    pub grads: Vec<Tensor<T>>,
}

/// Mean cross-entropy over positives and mined negatives of a batch.
/// Returns zero loss and zero gradients when no cell contributes.
pub fn cls_loss<T: Scalar>(
    logits: &[&Tensor<T>],
    labels: &[&BranchLabelMap],
) -> Result<ClsLoss<T>> {
    let mut grads = Vec::with_capacity(logits.len());
    let mut n_pos = 0;
    let mut negatives: Vec<(usize, T)> = Vec::new();
    let mut offset = 0;
    for (z, lab) in logits.iter().zip(labels) {
        check_grid("cls_loss logits", z, 2, lab)?;
        let cells = lab.height * lab.width;
        let d = z.data();
        for (cell, &l) in lab.labels.iter().enumerate() {
            match l {
                Label::Positive => n_pos += 1,
                Label::Negative => {
                    let (loss, _) = cell_ce(d[cell], d[cells + cell], false);
                    negatives.push((offset + cell, loss));
                }
                Label::Ignore => {}
            }
        }
        grads.push(Tensor::zeros(z.shape()));
        offset += cells;
    }
    let selected = mine_hard_negatives(&negatives, n_pos);
    let contributing = n_pos + selected.len();
    if contributing == 0 {
        return Ok(ClsLoss {
            loss: T::ZERO,
            n_pos: 0,
            n_neg_selected: 0,
            grads,
        });
    }
    let scale = T::ONE / T::from_f64(contributing as f64);

    let mut total = T::ZERO;
    let mut sel = selected.iter().peekable();
    let mut offset = 0;
    for ((z, lab), g) in logits.iter().zip(labels).zip(&mut grads) {
        let cells = lab.height * lab.width;
        let d = z.data();
        let gd = g.data_mut();
        for (cell, &l) in lab.labels.iter().enumerate() {
            let face = match l {
                Label::Positive => true,
                Label::Negative if sel.peek() == Some(&&(offset + cell)) => {
                    sel.next();
                    false
                }
                _ => continue,
            };
            let (loss, grad) = cell_ce(d[cell], d[cells + cell], face);
            total += loss;
            gd[cell] = grad[0] * scale;
            gd[cells + cell] = grad[1] * scale;
        }
        offset += cells;
    }
    Ok(ClsLoss {
        loss: total * scale,
        n_pos,
        n_neg_selected: selected.len(),
        grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegLoss<T = f32> {
    pub loss: T,
    pub grads: Vec<Tensor<T>>,
}

/// Mean squared offset error over the four channels of positive cells.
pub fn reg_loss<T: Scalar>(regs: &[&Tensor<T>], labels: &[&BranchLabelMap]) -> Result<RegLoss<T>> {
    let mut n_pos = 0;
    for (r, lab) in regs.iter().zip(labels) {
        check_grid("reg_loss regs", r, 4, lab)?;
        n_pos += lab.count(Label::Positive);
    }
    let mut grads: Vec<Tensor<T>> = regs.iter().map(|r| Tensor::zeros(r.shape())).collect();
    if n_pos == 0 {
        return Ok(RegLoss {
            loss: T::ZERO,
            grads,
        });
    }
    let scale = T::ONE / T::from_f64(4.0 * n_pos as f64);
    let two = T::from_f64(2.0);
    let mut total = T::ZERO;
    for ((r, lab), g) in regs.iter().zip(labels).zip(&mut grads) {
        let cells = lab.height * lab.width;
        let d = r.data();
        let gd = g.data_mut();
        for (cell, &l) in lab.labels.iter().enumerate() {
            if l != Label::Positive {
                continue;
            }
            for (c, &t) in lab.targets[cell].iter().enumerate() {
                let diff = d[c * cells + cell] - T::from_f32(t);
                total += diff * diff;
                gd[c * cells + cell] = two * diff * scale;
            }
        }
    }
    Ok(RegLoss {
        loss: total * scale,
        grads,
    })
}

/// Classification plus regression loss of one branch over a batch.
pub fn branch_loss<T: Scalar>(
    outputs: &[&BranchOutput<T>],
    labels: &[&BranchLabelMap],
) -> Result<BranchLoss<T>> {
    if outputs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "branch_loss batch",
            expected: vec![labels.len()],
            got: vec![outputs.len()],
        });
    }
    let scores: Vec<&Tensor<T>> = outputs.iter().map(|o| &o.scores).collect();
    let regs: Vec<&Tensor<T>> = outputs.iter().map(|o| &o.regs).collect();
    let cls = cls_loss(&scores, labels)?;
    let reg = reg_loss(&regs, labels)?;
    Ok(BranchLoss {
        cls_loss: cls.loss,
        reg_loss: reg.loss,
        n_pos: cls.n_pos,
        n_neg_selected: cls.n_neg_selected,
        grad_scores: cls.grads,
        grad_regs: reg.grads,
    })
}

/// Unweighted sum over branches of classification plus regression loss.
pub fn total_loss<T: Scalar>(losses: &[BranchLoss<T>]) -> T {
    losses
        .iter()
        .fold(T::ZERO, |acc, b| acc + b.cls_loss + b.reg_loss)
}

/// Face probability of a cell from its `(background, face)` logits.
pub fn face_probability<T: Scalar>(z_bg: T, z_face: T) -> T {
    T::ONE / (T::ONE + (z_bg - z_face).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(labels: Vec<Label>, h: usize, w: usize) -> BranchLabelMap {
        BranchLabelMap {
            branch_id: 1,
            height: h,
            width: w,
            targets: vec![[0.0; 4]; h * w],
            labels,
        }
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let lab = grid(vec![Label::Positive], 1, 1);
        let z = Tensor::<f64>::zeros(&[2, 1, 1]);
        let out = cls_loss(&[&z], &[&lab]).unwrap();
        assert!((out.loss - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!((out.n_pos, out.n_neg_selected), (1, 0));
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let lab = grid(vec![Label::Positive, Label::Negative], 1, 2);
        let z = Tensor::from_vec(&[2, 1, 2], vec![-10.0f32, 10.0, 10.0, -10.0]).unwrap();
        assert!(cls_loss(&[&z], &[&lab]).unwrap().loss < 1e-6);
    }

    #[test]
    fn nothing_contributes() {
        let lab = grid(vec![Label::Ignore; 4], 2, 2);
        let z = Tensor::full(&[2, 2, 2], 3.0f32);
        let out = cls_loss(&[&z], &[&lab]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mining_quota() {
        let losses: Vec<(usize, f32)> = (0..100).map(|i| (i, ((i * 37) % 100) as f32)).collect();
        let picked = mine_hard_negatives(&losses, 2);
        assert_eq!(picked.len(), 20);
        assert!(picked.iter().all(|&i| (i * 37) % 100 >= 80));
        let few: Vec<(usize, f32)> = (0..5).map(|i| (i, 1.0)).collect();
        assert_eq!(mine_hard_negatives(&few, 1), vec![0, 1, 2, 3, 4]);
        let many: Vec<(usize, f32)> = (0..200).map(|i| (i, 0.5)).collect();
        assert_eq!(mine_hard_negatives(&many, 0), (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn reg_cases() {
        let mut lab = grid(vec![Label::Positive], 1, 1);
        lab.targets[0] = [0.5, 0.25, -0.5, -1.0];
        let exact = Tensor::from_vec(&[4, 1, 1], vec![0.5f32, 0.25, -0.5, -1.0]).unwrap();
        assert_eq!(reg_loss(&[&exact], &[&lab]).unwrap().loss, 0.0);
        let off = Tensor::from_vec(&[4, 1, 1], vec![1.5f32, 0.25, -0.5, -1.0]).unwrap();
        assert_eq!(reg_loss(&[&off], &[&lab]).unwrap().loss, 0.25);
        let neg = grid(vec![Label::Negative], 1, 1);
        assert_eq!(reg_loss(&[&off], &[&neg]).unwrap().loss, 0.0);
    }

    #[test]
    fn total_is_unweighted_sum() {
        let b = BranchLoss::<f32> {
            cls_loss: 1.0,
            reg_loss: 2.0,
            n_pos: 0,
            n_neg_selected: 0,
            grad_scores: vec![],
            grad_regs: vec![],
        };
        assert_eq!(total_loss(core::slice::from_ref(&b)), 3.0);
        assert_eq!(total_loss::<f32>(&[]), 0.0);
    }

    #[test]
    fn probability_matches_softmax() {
        assert!((face_probability(0.0f64, 0.0) - 0.5).abs() < 1e-12);
        assert!(face_probability(20.0f32, -20.0) < 1e-6);
        assert!(face_probability(-20.0f32, 20.0) > 0.999);
    }
}
