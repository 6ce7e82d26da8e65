//! The three stage-two classifier heads and their imbalance-aware losses.
//!
//! Heads 1 and 3 emit two logits `[correct, mistake]`; head 2 emits a single
//! ranking score. All batch losses are means over the batch and return the
//! gradient with respect to the head outputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln, log_softmax, sigmoid, softplus, Mat};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HeadKind {
    ReweightedCe,
    Auc,
    LogitAdjusted,
}

impl HeadKind {
    pub fn id(self) -> usize {
        match self {
            HeadKind::ReweightedCe => 1,
            HeadKind::Auc => 2,
            HeadKind::LogitAdjusted => 3,
        }
    }

    pub fn output_len(self) -> usize {
        match self {
            HeadKind::Auc => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearHead {
    pub kind: HeadKind,
    pub weights: Mat,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(kind: HeadKind, d_in: usize) -> Self {
        let out = kind.output_len();
        LinearHead {
            kind,
            weights: Mat::zeros(out, d_in),
            bias: vec![0.0; out],
        }
    }

    pub fn forward(&self, joint: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.weights.matvec(joint)?;
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and the input gradient
    /// into `d_joint`.
    pub fn backward(
        &self,
        joint: &[f64],
        d_out: &[f64],
        grads: &mut LinearHead,
        d_joint: &mut [f64],
    ) -> Result<()> {
        grads.weights.add_outer(1.0, d_out, joint);
        for (g, d) in grads.bias.iter_mut().zip(d_out) {
            *g += d;
        }
        let back = self.weights.matvec_t(d_out)?;
        for (dj, b) in d_joint.iter_mut().zip(back) {
            *dj += b;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        LinearHead::zeros(self.kind, self.weights.cols())
    }
}

/// Class proportions `[correct, mistake]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "[f64; 2]", into = "[f64; 2]"))]
pub struct ClassFreq([f64; 2]);

impl ClassFreq {
    pub fn new(correct: f64, mistake: f64) -> Result<Self> {
        let ok = correct > 0.0
            && mistake > 0.0
            && correct.is_finite()
            && mistake.is_finite()
            && ((correct + mistake) - 1.0).abs() <= 1e-12;
        if ok {
            Ok(ClassFreq([correct, mistake]))
        } else {
            Err(Error::InvalidFrequency(correct, mistake))
        }
    }

    pub fn from_labels(labels: &[u8]) -> Result<Self> {
        let mut counts = [0usize; 2];
        for (index, &label) in labels.iter().enumerate() {
            match label {
                0 | 1 => counts[label as usize] += 1,
                _ => return Err(Error::InvalidLabel { index, label }),
            }
        }
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::SingleClass("class frequencies"));
        }
        let n = labels.len() as f64;
        let mistake = counts[1] as f64 / n;
        Ok(ClassFreq([1.0 - mistake, mistake]))
    }

    pub fn values(&self) -> [f64; 2] {
        self.0
    }
}

impl TryFrom<[f64; 2]> for ClassFreq {
    type Error = Error;

    fn try_from(f: [f64; 2]) -> Result<Self> {
        ClassFreq::new(f[0], f[1])
    }
}

impl From<ClassFreq> for [f64; 2] {
    fn from(f: ClassFreq) -> Self {
        f.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WeightNorm {
    /// `1/f_y` rescaled to mean one.
    #[default]
    MeanOne,
    /// `1/f_y` as is.
    Raw,
}

/// Inverse-frequency class weights.
pub fn class_weights(freq: &ClassFreq, norm: WeightNorm) -> Result<[f64; 2]> {
    let [f0, f1] = freq.values();
    if !(f0 > 0.0 && f1 > 0.0) {
        return Err(Error::InvalidFrequency(f0, f1));
    }
    let raw = [1.0 / f0, 1.0 / f1];
    Ok(match norm {
        WeightNorm::Raw => raw,
        WeightNorm::MeanOne => {
            let mean = (raw[0] + raw[1]) / 2.0;
            [raw[0] / mean, raw[1] / mean]
        }
    })
}

/// Pairwise surrogate for the AUC objective, applied to `t = s⁺ − s⁻`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Surrogate {
    /// `max(0, margin − t)²`
    SquaredHinge { margin: f64 },
    /// `ln(1 + e^{−t})`
    Logistic,
}

impl Default for Surrogate {
    fn default() -> Self {
        Surrogate::SquaredHinge { margin: 1.0 }
    }
}

impl Surrogate {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Surrogate::SquaredHinge { margin } if !(margin > 0.0 && margin.is_finite()) => {
                Err(Error::config("margin", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Surrogate::SquaredHinge { margin } => {
                let gap = (margin - t).max(0.0);
                gap * gap
            }
            Surrogate::Logistic => softplus(-t),
        }
    }

    /// `dℓ/dt`.
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Surrogate::SquaredHinge { margin } => -2.0 * (margin - t).max(0.0),
            Surrogate::Logistic => -sigmoid(-t),
        }
    }
}

/// Batch loss and gradient with respect to two-logit outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitLoss {
    pub loss: f64,
    pub grad: Vec<[f64; 2]>,
}

fn check_batch(logits: &[[f64; 2]], labels: &[u8]) -> Result<()> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "logits and labels",
            left: logits.len(),
            right: labels.len(),
        });
    }
    if logits.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    if let Some(index) = labels.iter().position(|&l| l > 1) {
        return Err(Error::InvalidLabel {
            index,
            label: labels[index],
        });
    }
    Ok(())
}

/// Mean of `w_y · (−log softmax(z)_y)` with `shift` added to every logit
/// vector first.
fn shifted_weighted_ce(
    logits: &[[f64; 2]],
    labels: &[u8],
    weights: [f64; 2],
    shift: [f64; 2],
) -> Result<LogitLoss> {
    check_batch(logits, labels)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        let y = y as usize;
        let adjusted = [z[0] + shift[0], z[1] + shift[1]];
        let logp = log_softmax(&adjusted);
        let w = weights[y];
        loss -= w * logp[y];
        let mut g = [exp(logp[0]), exp(logp[1])];
        g[y] -= 1.0;
        grad.push([w * g[0] / n, w * g[1] / n]);
    }
    Ok(LogitLoss {
        loss: loss / n,
        grad,
    })
}

/// Class-reweighted cross-entropy, mean over the batch.
pub fn weighted_ce_loss(
    logits: &[[f64; 2]],
    labels: &[u8],
    weights: [f64; 2],
) -> Result<LogitLoss> {
    shifted_weighted_ce(logits, labels, weights, [0.0, 0.0])
}

/// Plain mean cross-entropy.
pub fn cross_entropy_loss(logits: &[[f64; 2]], labels: &[u8]) -> Result<LogitLoss> {
    weighted_ce_loss(logits, labels, [1.0, 1.0])
}

/// Logit-adjusted cross-entropy: `CE(z + ln f, y)`.
pub fn la_loss(logits: &[[f64; 2]], labels: &[u8], freq: &ClassFreq) -> Result<LogitLoss> {
    let [f0, f1] = freq.values();
    shifted_weighted_ce(logits, labels, [1.0, 1.0], [ln(f0), ln(f1)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucLoss {
    pub loss: f64,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

fn check_auc_batch(pos: &[f64], neg: &[f64], s: &Surrogate) -> Result<()> {
    s.validate()?;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass(
            "AUC loss batch (the sampler must supply at least one sample of each class)",
        ));
    }
    Ok(())
}

/// Mean surrogate loss over all positive/negative pairs by direct double
/// loop. `O(n⁺·n⁻)`.
pub fn auc_loss_pairwise(pos: &[f64], neg: &[f64], s: &Surrogate) -> Result<AucLoss> {
    check_auc_batch(pos, neg, s)?;
    let pairs = (pos.len() * neg.len()) as f64;
    let mut loss = 0.0;
    let mut grad_pos = vec![0.0; pos.len()];
    let mut grad_neg = vec![0.0; neg.len()];
    for (i, &sp) in pos.iter().enumerate() {
        for (j, &sn) in neg.iter().enumerate() {
            let t = sp - sn;
            loss += s.value(t);
            let d = s.derivative(t) / pairs;
            grad_pos[i] += d;
            grad_neg[j] -= d;
        }
    }
    Ok(AucLoss {
        loss: loss / pairs,
        grad_pos,
        grad_neg,
    })
}

/// Squared hinge in `O((n⁺ + n⁻) log(n⁺ + n⁻))`.
///
/// With `q_j = s⁻_j + margin`, pair `(i, j)` is active iff `q_j > s⁺_i`, and
/// its loss `(q_j − s⁺_i)²` expands into sums that prefix/suffix totals over
/// the sorted scores provide.
fn squared_hinge_sorted(pos: &[f64], neg: &[f64], margin: f64) -> AucLoss {
    let pairs = (pos.len() * neg.len()) as f64;

    let mut q: Vec<(f64, usize)> = neg.iter().map(|&s| s + margin).zip(0..).collect();
    q.sort_by(|a, b| a.0.total_cmp(&b.0));
    // suffix[k] = (Σ q, Σ q²) over q[k..]
    let mut suffix = vec![(0.0, 0.0); q.len() + 1];
    for k in (0..q.len()).rev() {
        let v = q[k].0;
        suffix[k] = (suffix[k + 1].0 + v, suffix[k + 1].1 + v * v);
    }

    let mut p: Vec<(f64, usize)> = pos.iter().copied().zip(0..).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    // prefix[k] = Σ s⁺ over p[..k]
    let mut prefix = vec![0.0; p.len() + 1];
    for k in 0..p.len() {
        prefix[k + 1] = prefix[k] + p[k].0;
    }

    let mut loss = 0.0;
    let mut grad_pos = vec![0.0; pos.len()];
    for &(sp, i) in &p {
        let start = q.partition_point(|&(v, _)| v <= sp);
        let count = (q.len() - start) as f64;
        let (sum_q, sum_q2) = suffix[start];
        loss += sum_q2 - 2.0 * sp * sum_q + count * sp * sp;
        grad_pos[i] = -2.0 * (sum_q - count * sp) / pairs;
    }

    let mut grad_neg = vec![0.0; neg.len()];
    for &(qj, j) in &q {
        let end = p.partition_point(|&(v, _)| v < qj);
        grad_neg[j] = 2.0 * (end as f64 * qj - prefix[end]) / pairs;
    }

    AucLoss {
        loss: loss / pairs,
        grad_pos,
        grad_neg,
    }
}

/// Pairwise AUC surrogate. Squared hinge uses the sorted fast path, logistic
/// the double loop.
pub fn auc_loss(pos: &[f64], neg: &[f64], s: &Surrogate) -> Result<AucLoss> {
    match *s {
        Surrogate::SquaredHinge { margin } => {
            check_auc_batch(pos, neg, s)?;
            Ok(squared_hinge_sorted(pos, neg, margin))
        }
        Surrogate::Logistic => auc_loss_pairwise(pos, neg, s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_grad, relative_error};
    use proptest::prelude::*;

    const LN2: f64 = core::f64::consts::LN_2;

    #[test]
    fn class_weight_examples() {
        let w = class_weights(&ClassFreq::new(0.5, 0.5).unwrap(), WeightNorm::MeanOne).unwrap();
        assert_eq!(w, [1.0, 1.0]);
        let w = class_weights(&ClassFreq::new(0.9, 0.1).unwrap(), WeightNorm::MeanOne).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-15 && (w[1] - 1.8).abs() < 1e-15);
        let w = class_weights(&ClassFreq::new(0.99, 0.01).unwrap(), WeightNorm::MeanOne).unwrap();
        // (1/f) / mean(1/f) reduces to 2 * f_other.
        assert!((w[0] - 0.02).abs() < 1e-12 && (w[1] - 1.98).abs() < 1e-12);
        let w = class_weights(&ClassFreq::new(0.8, 0.2).unwrap(), WeightNorm::Raw).unwrap();
        assert!((w[0] - 1.25).abs() < 1e-15 && (w[1] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn class_freq_validation() {
        assert!(ClassFreq::new(0.0, 1.0).is_err());
        assert!(ClassFreq::new(0.6, 0.5).is_err());
        assert_eq!(
            ClassFreq::from_labels(&[0, 0, 0, 1]).unwrap().values(),
            [0.75, 0.25]
        );
        assert_eq!(
            ClassFreq::from_labels(&[0, 0]).unwrap_err(),
            Error::SingleClass("class frequencies")
        );
        assert!(ClassFreq::from_labels(&[0, 3]).is_err());
    }

    #[test]
    fn weighted_ce_examples() {
        let out = weighted_ce_loss(&[[0.0, 0.0]], &[1], [1.0, 1.0]).unwrap();
        assert!((out.loss - LN2).abs() < 1e-15);
        let out = weighted_ce_loss(&[[0.0, 0.0]], &[1], [0.2, 1.8]).unwrap();
        assert!((out.loss - 1.8 * LN2).abs() < 1e-15);
        assert!((out.loss - 1.2477).abs() < 1e-4);
        assert_eq!(
            weighted_ce_loss(&[[0.0, 0.0], [1.0, 0.0]], &[0, 2], [1.0, 1.0]).unwrap_err(),
            Error::InvalidLabel { index: 1, label: 2 }
        );
    }

    #[test]
    fn la_loss_examples() {
        let freq = ClassFreq::new(0.9, 0.1).unwrap();
        let out = la_loss(&[[0.0, 0.0]], &[1], &freq).unwrap();
        assert!((out.loss - core::f64::consts::LN_10).abs() < 1e-14);
        assert!(la_loss(&[[0.0, 0.0]], &[7], &freq).is_err());
    }

    #[test]
    fn auc_loss_examples() {
        let hinge = Surrogate::SquaredHinge { margin: 1.0 };
        assert_eq!(auc_loss(&[2.0], &[0.0], &hinge).unwrap().loss, 0.0);
        assert_eq!(auc_loss(&[0.5], &[0.0], &hinge).unwrap().loss, 0.25);
        let out = auc_loss(&[0.0], &[0.0], &Surrogate::Logistic).unwrap();
        assert!((out.loss - LN2).abs() < 1e-15);
        assert!(matches!(
            auc_loss(&[], &[0.0], &hinge),
            Err(Error::SingleClass(_))
        ));
        assert!(matches!(
            auc_loss(&[1.0], &[], &Surrogate::Logistic),
            Err(Error::SingleClass(_))
        ));
        assert!(auc_loss(&[1.0], &[0.0], &Surrogate::SquaredHinge { margin: 0.0 }).is_err());
    }

    #[test]
    fn head_forward_examples() {
        let zero = LinearHead::zeros(HeadKind::ReweightedCe, 3);
        assert_eq!(zero.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            LinearHead::zeros(HeadKind::Auc, 3)
                .forward(&[1.0; 3])
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            LinearHead::zeros(HeadKind::LogitAdjusted, 3)
                .forward(&[1.0; 3])
                .unwrap()
                .len(),
            2
        );
        let head = LinearHead {
            kind: HeadKind::ReweightedCe,
            weights: Mat::identity(2),
            bias: vec![1.0, 1.0],
        };
        assert_eq!(head.forward(&[2.0, 3.0]).unwrap(), vec![3.0, 4.0]);
        assert!(head.forward(&[2.0]).is_err());
    }

    fn flat(logits: &[[f64; 2]]) -> Vec<f64> {
        logits.iter().flat_map(|z| z.iter().copied()).collect()
    }

    fn unflat(x: &[f64]) -> Vec<[f64; 2]> {
        x.chunks(2).map(|c| [c[0], c[1]]).collect()
    }

    fn plain_ce(logits: &[[f64; 2]], labels: &[u8]) -> f64 {
        // independent route: -ln(e^{z_y} / (e^{z_0} + e^{z_1}))
        let total: f64 = logits
            .iter()
            .zip(labels)
            .map(|(z, &y)| {
                let other = z[1 - y as usize];
                softplus(other - z[y as usize])
            })
            .sum();
        total / logits.len() as f64
    }

    fn batch() -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<u8>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b)| [a, b]), n),
                prop::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn balanced_reductions_match_plain_ce((logits, labels) in batch()) {
            let reference = plain_ce(&logits, &labels);
            let w = class_weights(&ClassFreq::new(0.5, 0.5).unwrap(), WeightNorm::MeanOne).unwrap();
            let wce = weighted_ce_loss(&logits, &labels, w).unwrap().loss;
            let la = la_loss(&logits, &labels, &ClassFreq::new(0.5, 0.5).unwrap()).unwrap().loss;
            prop_assert!((wce - reference).abs() <= 1e-12);
            prop_assert!((la - reference).abs() <= 1e-12);
        }

        #[test]
        fn logit_loss_gradients_match_finite_differences(
            (logits, labels) in batch(),
            w1 in 0.1f64..3.0,
            f1 in 0.02f64..0.98,
        ) {
            let w = [1.0, w1];
            let freq = ClassFreq::new(1.0 - f1, f1).unwrap();
            let x = flat(&logits);

            let analytic = flat(&weighted_ce_loss(&logits, &labels, w).unwrap().grad);
            let numeric = finite_diff_grad(
                |x| weighted_ce_loss(&unflat(x), &labels, w).unwrap().loss, &x, 1e-5).unwrap();
            prop_assert!(relative_error(&analytic, &numeric, 1e-8) < 1e-6);

            let analytic = flat(&la_loss(&logits, &labels, &freq).unwrap().grad);
            let numeric = finite_diff_grad(
                |x| la_loss(&unflat(x), &labels, &freq).unwrap().loss, &x, 1e-5).unwrap();
            prop_assert!(relative_error(&analytic, &numeric, 1e-8) < 1e-6);
        }

        #[test]
        fn auc_logistic_is_translation_invariant(
            pos in prop::collection::vec(-2.0f64..2.0, 1..10),
            neg in prop::collection::vec(-2.0f64..2.0, 1..10),
            c in -5.0f64..5.0,
        ) {
            let base = auc_loss(&pos, &neg, &Surrogate::Logistic).unwrap().loss;
            let pos_c: Vec<f64> = pos.iter().map(|s| s + c).collect();
            let neg_c: Vec<f64> = neg.iter().map(|s| s + c).collect();
            let moved = auc_loss(&pos_c, &neg_c, &Surrogate::Logistic).unwrap().loss;
            // shifting both scores by c perturbs t = s⁺ − s⁻ only by rounding
            prop_assert!((base - moved).abs() <= 1e-12);
        }

        #[test]
        fn single_pair_loss_is_monotone_in_positive_score(
            sp in -3.0f64..3.0, sn in -3.0f64..3.0, step in 0.0f64..2.0, margin in 0.1f64..2.0,
        ) {
            for s in [Surrogate::SquaredHinge { margin }, Surrogate::Logistic] {
                let lo = auc_loss(&[sp], &[sn], &s).unwrap().loss;
                let hi = auc_loss(&[sp + step], &[sn], &s).unwrap().loss;
                prop_assert!(hi <= lo);
            }
        }
    }

    #[test]
    fn squared_hinge_ties_at_kink_agree() {
        let hinge = Surrogate::SquaredHinge { margin: 1.0 };
        let pos = [1.0, 1.0, 0.0, 2.0];
        let neg = [0.0, 0.0, 1.0, -1.0, 0.0];
        let fast = auc_loss(&pos, &neg, &hinge).unwrap();
        let slow = auc_loss_pairwise(&pos, &neg, &hinge).unwrap();
        assert!((fast.loss - slow.loss).abs() < 1e-14);
        for (a, b) in fast.grad_pos.iter().zip(&slow.grad_pos) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in fast.grad_neg.iter().zip(&slow.grad_neg) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
