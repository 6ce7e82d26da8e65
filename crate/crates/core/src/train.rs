//! Training schedule.
//!
//! Phase A runs `epochs` passes over stratified minibatches. Each batch
//! computes the joint features once, attributes the reweighted-CE loss to
//! head 1, the pairwise AUC loss to head 2 and the logit-adjusted loss to
//! head 3. Heads 1–2 and the shared expert parameters take an Adam step on
//! the unit-weighted sum; head 3 takes a SAM step on its own loss.
//!
//! Phase B (full model only) freezes everything except the fusion logits
//! `beta_raw` and fits them with plain cross-entropy on the fused logits for
//! `fuse_epochs` passes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Sample};
use crate::experts::{ExpertMode, GateMode};
use crate::heads::{
    auc_loss, class_weights, cross_entropy_loss, la_loss, weighted_ce_loss, ClassFreq, Surrogate,
    WeightNorm,
};
use crate::math::{softmax, Mat};
use crate::model::{fuse, Activation, DrMoeModel, HeadSelection, ModelDims, ModelGrads};
use crate::optim::{sam_step, AdamConfig, AdamState, SamConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rho: f64,
    /// Train head 3 with SAM; when false it takes plain Adam steps.
    pub sam: bool,
    pub lora_rank: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub fuse_epochs: usize,
    pub d_ctx: usize,
    pub d_seg: usize,
    pub d_out: usize,
    pub gate_mode: GateMode,
    pub expert_mode: ExpertMode,
    pub heads: HeadSelection,
    pub surrogate: Surrogate,
    pub weight_norm: WeightNorm,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rho: 0.05,
            sam: true,
            lora_rank: 8,
            batch_size: 128,
            epochs: 10,
            fuse_epochs: 5,
            d_ctx: 16,
            d_seg: 16,
            d_out: 64,
            gate_mode: GateMode::InputConditioned,
            expert_mode: ExpertMode::Fused,
            heads: HeadSelection::Full,
            surrogate: Surrogate::default(),
            weight_norm: WeightNorm::MeanOne,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn sam_config(&self) -> SamConfig {
        SamConfig {
            rho: self.rho,
            enabled: self.sam,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_ctx: self.d_ctx,
            d_seg: self.d_seg,
            d_out: self.d_out,
            lora_rank: self.lora_rank,
        }
    }

    /// Epochs in the whole schedule, fusion phase included.
    pub fn total_epochs(&self) -> usize {
        match self.heads {
            HeadSelection::Full => self.epochs + self.fuse_epochs,
            _ => self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::config("rho", "must be non-negative and finite"));
        }
        for (field, v) in [
            ("d_ctx", self.d_ctx),
            ("d_seg", self.d_seg),
            ("d_out", self.d_out),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        let max_rank = self.d_out.min(self.d_seg);
        if self.lora_rank == 0 || self.lora_rank > max_rank {
            return Err(Error::config(
                "lora_rank",
                format!("must lie in 1..={max_rank} (min of d_out and d_seg)"),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", "must lie in (0, 1)"));
        }
        self.surrogate.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    Heads,
    Fusion,
}

/// Batch-averaged losses of one epoch. Inactive losses are `None`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    /// 1-based position in the whole schedule.
    pub epoch: usize,
    pub phase: Phase,
    pub batches: usize,
    pub loss_wce: Option<f64>,
    pub loss_auc: Option<f64>,
    pub loss_la: Option<f64>,
    pub loss_fusion: Option<f64>,
    pub mean_alpha: f64,
    pub beta: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseALosses {
    pub wce: Option<f64>,
    pub auc: Option<f64>,
    pub la: Option<f64>,
}

impl PhaseALosses {
    pub fn total(&self) -> f64 {
        self.wce.unwrap_or(0.0) + self.auc.unwrap_or(0.0) + self.la.unwrap_or(0.0)
    }
}

/// Loss settings shared by every Phase-A batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSetup {
    pub selection: HeadSelection,
    pub ce_weights: [f64; 2],
    pub freq: ClassFreq,
    pub surrogate: Surrogate,
}

impl LossSetup {
    pub fn new(config: &TrainConfig, freq: ClassFreq) -> Result<Self> {
        let ce_weights = match config.heads {
            HeadSelection::CeBaseline => [1.0, 1.0],
            _ => class_weights(&freq, config.weight_norm)?,
        };
        Ok(LossSetup {
            selection: config.heads,
            ce_weights,
            freq,
            surrogate: config.surrogate,
        })
    }
}

fn labels_of(batch: &[&Sample]) -> Vec<u8> {
    batch.iter().map(|s| s.label).collect()
}

/// Phase-A objective on one batch: the sum of the active head losses, with
/// gradients for every trainable tensor (`beta_raw` receives none).
pub fn phase_a_objective(
    model: &DrMoeModel,
    batch: &[&Sample],
    setup: &LossSetup,
) -> Result<(PhaseALosses, ModelGrads, Vec<Activation>)> {
    let acts = batch
        .iter()
        .map(|s| model.activate(&s.x_ctx, &s.x_seg))
        .collect::<Result<Vec<_>>>()?;
    let labels = labels_of(batch);
    let [use_wce, use_auc, use_la] = setup.selection.active();
    let n = batch.len();
    let mut losses = PhaseALosses::default();

    let mut d_head1 = vec![[0.0; 2]; n];
    if use_wce {
        let logits: Vec<[f64; 2]> = acts.iter().map(|a| a.head_logits[0]).collect();
        let out = weighted_ce_loss(&logits, &labels, setup.ce_weights)?;
        losses.wce = Some(out.loss);
        d_head1 = out.grad;
    }

    let mut d_score = vec![0.0; n];
    if use_auc {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (a, &y) in acts.iter().zip(&labels) {
            if y == 1 {
                pos.push(a.auc_score)
            } else {
                neg.push(a.auc_score)
            }
        }
        let out = auc_loss(&pos, &neg, &setup.surrogate)?;
        losses.auc = Some(out.loss);
        let (mut ip, mut ineg) = (0, 0);
        for (d, &y) in d_score.iter_mut().zip(&labels) {
            if y == 1 {
                *d = out.grad_pos[ip];
                ip += 1;
            } else {
                *d = out.grad_neg[ineg];
                ineg += 1;
            }
        }
    }

    let mut d_head3 = vec![[0.0; 2]; n];
    if use_la {
        let logits: Vec<[f64; 2]> = acts.iter().map(|a| a.head_logits[2]).collect();
        let out = la_loss(&logits, &labels, &setup.freq)?;
        losses.la = Some(out.loss);
        d_head3 = out.grad;
    }

    let mut grads = ModelGrads::zeros_like(model);
    let d_out = model.experts.d_out();
    for (i, (s, act)) in batch.iter().zip(&acts).enumerate() {
        let joint = &act.experts.joint;
        let mut d_joint = vec![0.0; d_out];
        let h = &model.heads;
        h.reweighted.backward(
            joint,
            &d_head1[i],
            &mut grads.heads.reweighted,
            &mut d_joint,
        )?;
        h.auc
            .backward(joint, &[d_score[i]], &mut grads.heads.auc, &mut d_joint)?;
        h.adjusted
            .backward(joint, &d_head3[i], &mut grads.heads.adjusted, &mut d_joint)?;
        model.experts.backward(
            &s.x_ctx,
            &s.x_seg,
            &act.experts,
            &d_joint,
            &mut grads.experts,
        )?;
    }
    Ok((losses, grads, acts))
}

/// Logit-adjusted loss of head 3 as a function of its own parameters, with
/// the joint features held fixed. Returns `[dW, db]`.
pub fn head3_objective(
    params: &[&[f64]],
    joints: &[&[f64]],
    labels: &[u8],
    freq: &ClassFreq,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let d = joints.first().map_or(0, |j| j.len());
    let weights = Mat::from_vec(2, d, params[0].to_vec())?;
    let bias = params[1];
    let logits = joints
        .iter()
        .map(|j| {
            let z = weights.matvec(j)?;
            Ok([z[0] + bias[0], z[1] + bias[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    let out = la_loss(&logits, labels, freq)?;
    let mut d_w = Mat::zeros(2, d);
    let mut d_b = vec![0.0; 2];
    for (g, j) in out.grad.iter().zip(joints) {
        d_w.add_outer(1.0, g, j);
        d_b[0] += g[0];
        d_b[1] += g[1];
    }
    Ok((out.loss, vec![d_w.as_slice().to_vec(), d_b]))
}

/// Plain cross-entropy of the fused logits and its gradient with respect to
/// `beta_raw`, the per-head logits held fixed.
pub fn fusion_objective(
    beta_raw: &[f64; 3],
    head_logits: &[[[f64; 2]; 3]],
    labels: &[u8],
) -> Result<(f64, [f64; 3])> {
    let b = softmax(beta_raw);
    let beta = [b[0], b[1], b[2]];
    let fused: Vec<[f64; 2]> = head_logits.iter().map(|l| fuse(&beta, l)).collect();
    let out = cross_entropy_loss(&fused, labels)?;
    let mut d_beta = [0.0; 3];
    for (g, l) in out.grad.iter().zip(head_logits) {
        for k in 0..3 {
            d_beta[k] += g[0] * l[k][0] + g[1] * l[k][1];
        }
    }
    // softmax Jacobian: ∂β_k/∂raw_j = β_k(δ_kj − β_j)
    let mean: f64 = beta.iter().zip(&d_beta).map(|(b, d)| b * d).sum();
    let d_raw = [0, 1, 2].map(|k| beta[k] * (d_beta[k] - mean));
    Ok((out.loss, d_raw))
}

/// Splits sample indices into shuffled minibatches of about `batch_size`,
/// each holding at least one sample of each class. When a class has fewer
/// members than there are batches, its members are reused.
pub fn stratified_batches(
    labels: &[u8],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass("minibatch sampler"));
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let n_batches = labels.len().div_ceil(batch_size.max(1));
    let slice = |members: &[usize], k: usize| -> Vec<usize> {
        let (lo, hi) = (
            k * members.len() / n_batches,
            (k + 1) * members.len() / n_batches,
        );
        if lo == hi {
            vec![members[k % members.len()]]
        } else {
            members[lo..hi].to_vec()
        }
    };
    let mut batches: Vec<Vec<usize>> = (0..n_batches)
        .map(|k| {
            let mut b = slice(&neg, k);
            b.extend(slice(&pos, k));
            b
        })
        .collect();
    batches.shuffle(rng);
    Ok(batches)
}

/// Position of the per-epoch shuffling stream. Stream 0 seeds
/// initialization; epoch `e` (0-based) shuffles with stream `e + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainerState {
    pub config: TrainConfig,
    pub model: DrMoeModel,
    pub class_freq: ClassFreq,
    pub shared_opt: AdamState,
    pub head3_opt: AdamState,
    pub fusion_opt: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngState,
    pub history: Vec<EpochRecord>,
}

pub struct Trainer {
    state: TrainerState,
}

const SHARED: &str = "shared";
const HEAD3: &str = "head3";
const FUSION: &str = "fusion";

impl Trainer {
    pub fn new(config: TrainConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        check_data(&config, train)?;
        let class_freq = train
            .class_freq()
            .map_err(|_| Error::SingleClass("training data"))?;
        let mut init_rng = RngState {
            seed: config.seed,
            stream: 0,
        }
        .rng();
        let model = DrMoeModel::init(
            config.dims(),
            config.gate_mode,
            config.expert_mode,
            config.heads,
            config.threshold,
            &mut init_rng,
        )?;
        let lens: Vec<usize> = model.trainable().iter().map(|t| t.len()).collect();
        let adam = config.adam();
        Ok(Trainer {
            state: TrainerState {
                shared_opt: AdamState::new(adam, &lens[..8]),
                head3_opt: AdamState::new(adam, &lens[8..10]),
                fusion_opt: AdamState::new(adam, &lens[10..]),
                config,
                model,
                class_freq,
                epoch: 0,
                rng: RngState {
                    seed: config.seed,
                    stream: 1,
                },
                history: Vec::new(),
            },
        })
    }

    pub fn from_state(state: TrainerState) -> Result<Self> {
        state.config.validate()?;
        if state.history.len() != state.epoch || state.epoch > state.config.total_epochs() {
            return Err(Error::config(
                "epoch",
                "inconsistent with the recorded history",
            ));
        }
        Ok(Trainer { state })
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    pub fn model(&self) -> &DrMoeModel {
        &self.state.model
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.state.config.total_epochs()
    }

    /// Runs the next epoch of the schedule.
    pub fn run_epoch(&mut self, train: &Dataset) -> Result<&EpochRecord> {
        if self.is_finished() {
            return Err(Error::config("epochs", "schedule already complete"));
        }
        check_data(&self.state.config, train)?;
        let mut rng = self.state.rng.rng();
        let batches = stratified_batches(&train.labels(), self.state.config.batch_size, &mut rng)?;
        let epoch = self.state.epoch;
        let record = if epoch < self.state.config.epochs {
            self.heads_epoch(train, &batches)?
        } else {
            self.fusion_epoch(train, &batches)?
        };
        self.state.epoch += 1;
        self.state.rng.stream += 1;
        self.state.history.push(record);
        Ok(self.state.history.last().expect("just pushed"))
    }

    pub fn run(&mut self, train: &Dataset) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(train)?;
        }
        Ok(())
    }

    fn heads_epoch(&mut self, train: &Dataset, batches: &[Vec<usize>]) -> Result<EpochRecord> {
        let st = &mut self.state;
        let setup = LossSetup::new(&st.config, st.class_freq)?;
        let sam_cfg = st.config.sam_config();
        let mut sums = [0.0; 3];
        let mut alpha_sum = 0.0;
        let mut alpha_count = 0usize;
        for idx in batches {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train.samples()[i]).collect();
            let (losses, grads, acts) = phase_a_objective(&st.model, &batch, &setup)?;
            for (s, l) in sums.iter_mut().zip([losses.wce, losses.auc, losses.la]) {
                *s += l.unwrap_or(0.0);
            }
            alpha_sum += acts.iter().map(|a| a.experts.alpha).sum::<f64>();
            alpha_count += acts.len();

            let g = grads.flat_parts();
            let [a, b, gw, gb, w1, b1, w2, b2, w3, b3, _] = st.model.trainable_mut();
            st.shared_opt
                .step(SHARED, &mut [a, b, gw, gb, w1, b1, w2, b2], &g[..8])?;

            if setup.selection.active()[2] {
                let joints: Vec<&[f64]> = acts.iter().map(|a| a.experts.joint.as_slice()).collect();
                let labels = labels_of(&batch);
                let freq = setup.freq;
                sam_step(&sam_cfg, &mut st.head3_opt, HEAD3, &mut [w3, b3], |p| {
                    head3_objective(p, &joints, &labels, &freq)
                })?;
            }
        }
        let nb = batches.len() as f64;
        let active = setup.selection.active();
        let mean = |k: usize| active[k].then(|| sums[k] / nb);
        Ok(EpochRecord {
            epoch: st.epoch + 1,
            phase: Phase::Heads,
            batches: batches.len(),
            loss_wce: mean(0),
            loss_auc: mean(1),
            loss_la: mean(2),
            loss_fusion: None,
            mean_alpha: alpha_sum / alpha_count.max(1) as f64,
            beta: st.model.beta(),
        })
    }

    fn fusion_epoch(&mut self, train: &Dataset, batches: &[Vec<usize>]) -> Result<EpochRecord> {
        let st = &mut self.state;
        let acts = train
            .samples()
            .iter()
            .map(|s| st.model.activate(&s.x_ctx, &s.x_seg))
            .collect::<Result<Vec<_>>>()?;
        let mut loss_sum = 0.0;
        for idx in batches {
            let logits: Vec<[[f64; 2]; 3]> = idx.iter().map(|&i| acts[i].head_logits).collect();
            let labels: Vec<u8> = idx.iter().map(|&i| train.samples()[i].label).collect();
            let (loss, d_raw) = fusion_objective(&st.model.beta_raw, &logits, &labels)?;
            loss_sum += loss;
            st.fusion_opt
                .step(FUSION, &mut [&mut st.model.beta_raw[..]], &[&d_raw[..]])?;
        }
        let alpha_mean = acts.iter().map(|a| a.experts.alpha).sum::<f64>() / acts.len() as f64;
        Ok(EpochRecord {
            epoch: st.epoch + 1,
            phase: Phase::Fusion,
            batches: batches.len(),
            loss_wce: None,
            loss_auc: None,
            loss_la: None,
            loss_fusion: Some(loss_sum / batches.len() as f64),
            mean_alpha: alpha_mean,
            beta: st.model.beta(),
        })
    }
}

fn check_data(config: &TrainConfig, data: &Dataset) -> Result<()> {
    let (d_ctx, d_seg) = data.dims();
    if d_ctx != config.d_ctx {
        return Err(Error::config(
            "d_ctx",
            format!(
                "data has {d_ctx} context features, config expects {}",
                config.d_ctx
            ),
        ));
    }
    if d_seg != config.d_seg {
        return Err(Error::config(
            "d_seg",
            format!(
                "data has {d_seg} segment features, config expects {}",
                config.d_seg
            ),
        ));
    }
    Ok(())
}

/// Runs the full schedule from a fresh initialization.
pub fn train(config: TrainConfig, data: &Dataset) -> Result<(DrMoeModel, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(config, data)?;
    trainer.run(data)?;
    let state = trainer.into_state();
    Ok((state.model, state.history))
}
