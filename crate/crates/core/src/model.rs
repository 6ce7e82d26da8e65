//! Full two-stage model: expert bank, three heads and the simplex-weighted
//! fusion of their logits.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

use crate::data::Sample;
use crate::experts::{ExpertBank, ExpertGrads, ExpertMode, FmoeOutput, GateMode};
use crate::heads::{HeadKind, LinearHead};
use crate::math::{sigmoid, softmax};
use crate::{Error, Result};

/// Which heads are trained and how predictions are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HeadSelection {
    /// All three heads, fused with learned weights.
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "full"))]
    Full,
    /// Head 1 trained with unweighted cross-entropy; the baseline.
    #[cfg_attr(feature = "serde", serde(rename = "ce"))]
    CeBaseline,
    #[cfg_attr(feature = "serde", serde(rename = "wce"))]
    ReweightedCe,
    #[cfg_attr(feature = "serde", serde(rename = "auc"))]
    Auc,
    #[cfg_attr(feature = "serde", serde(rename = "la"))]
    LogitAdjusted,
}

impl HeadSelection {
    pub const ALL: [HeadSelection; 5] = [
        HeadSelection::CeBaseline,
        HeadSelection::ReweightedCe,
        HeadSelection::Auc,
        HeadSelection::LogitAdjusted,
        HeadSelection::Full,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|h| h.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadSelection::Full => "full",
            HeadSelection::CeBaseline => "ce",
            HeadSelection::ReweightedCe => "wce",
            HeadSelection::Auc => "auc",
            HeadSelection::LogitAdjusted => "la",
        }
    }

    /// Heads whose losses are active, indexed `[1, 2, 3]`.
    pub fn active(self) -> [bool; 3] {
        match self {
            HeadSelection::Full => [true, true, true],
            HeadSelection::CeBaseline | HeadSelection::ReweightedCe => [true, false, false],
            HeadSelection::Auc => [false, true, false],
            HeadSelection::LogitAdjusted => [false, false, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadSet {
    pub reweighted: LinearHead,
    pub auc: LinearHead,
    pub adjusted: LinearHead,
}

impl HeadSet {
    pub fn zeros(d_in: usize) -> Self {
        HeadSet {
            reweighted: LinearHead::zeros(HeadKind::ReweightedCe, d_in),
            auc: LinearHead::zeros(HeadKind::Auc, d_in),
            adjusted: LinearHead::zeros(HeadKind::LogitAdjusted, d_in),
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadSet::zeros(self.reweighted.weights.cols())
    }

    pub fn iter(&self) -> [&LinearHead; 3] {
        [&self.reweighted, &self.auc, &self.adjusted]
    }
}

/// Lifts the single ranking score to two logits so it fuses with the others.
#[inline]
pub fn lift_score(score: f64) -> [f64; 2] {
    [0.0, score]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub fused_logits: [f64; 2],
    pub prob_mistake: f64,
    pub label: u8,
    pub alpha: f64,
    pub beta: [f64; 3],
    /// Heads 1–3 as two-logit vectors (head 2 lifted).
    pub head_logits: [[f64; 2]; 3],
}

impl Prediction {
    pub fn auc_score(&self) -> f64 {
        self.head_logits[1][1]
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DrMoeModel {
    pub experts: ExpertBank,
    pub heads: HeadSet,
    /// Unconstrained fusion parameters; the weights are their softmax.
    pub beta_raw: [f64; 3],
    pub selection: HeadSelection,
    /// A sample is labelled a mistake iff its mistake probability exceeds this.
    pub threshold: f64,
}

/// Shapes needed to build a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDims {
    pub d_ctx: usize,
    pub d_seg: usize,
    pub d_out: usize,
    pub lora_rank: usize,
}

/// Forward values of one sample kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub experts: FmoeOutput,
    pub head_logits: [[f64; 2]; 3],
    pub auc_score: f64,
}

impl DrMoeModel {
    pub fn init<R: RngCore>(
        dims: ModelDims,
        gate_mode: GateMode,
        expert_mode: ExpertMode,
        selection: HeadSelection,
        threshold: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let experts = ExpertBank::init(
            dims.d_ctx,
            dims.d_seg,
            dims.d_out,
            dims.lora_rank,
            gate_mode,
            expert_mode,
            rng,
        )?;
        Ok(DrMoeModel {
            experts,
            heads: HeadSet::zeros(dims.d_out),
            beta_raw: [0.0; 3],
            selection,
            threshold,
        })
    }

    /// Effective fusion weights: `softmax(beta_raw)` for the full model, a
    /// one-hot on the trained head otherwise.
    pub fn beta(&self) -> [f64; 3] {
        match self.selection {
            HeadSelection::Full => {
                let b = softmax(&self.beta_raw);
                [b[0], b[1], b[2]]
            }
            HeadSelection::CeBaseline | HeadSelection::ReweightedCe => [1.0, 0.0, 0.0],
            HeadSelection::Auc => [0.0, 1.0, 0.0],
            HeadSelection::LogitAdjusted => [0.0, 0.0, 1.0],
        }
    }

    pub fn activate(&self, x_ctx: &[f64], x_seg: &[f64]) -> Result<Activation> {
        let experts = self.experts.forward(x_ctx, x_seg)?;
        let [h1, h2, h3] = self.heads.iter().map(|h| h.forward(&experts.joint));
        let (h1, h2, h3) = (h1?, h2?, h3?);
        let auc_score = h2[0];
        Ok(Activation {
            experts,
            head_logits: [[h1[0], h1[1]], lift_score(auc_score), [h3[0], h3[1]]],
            auc_score,
        })
    }

    pub fn forward(&self, x_ctx: &[f64], x_seg: &[f64]) -> Result<Prediction> {
        let act = self.activate(x_ctx, x_seg)?;
        Ok(self.predict_from(&act))
    }

    pub(crate) fn predict_from(&self, act: &Activation) -> Prediction {
        let beta = self.beta();
        let fused = fuse(&beta, &act.head_logits);
        let prob_mistake = sigmoid(fused[1] - fused[0]);
        Prediction {
            fused_logits: fused,
            prob_mistake,
            label: u8::from(prob_mistake > self.threshold),
            alpha: act.experts.alpha,
            beta,
            head_logits: act.head_logits,
        }
    }

    /// Predicts every sample in order; errors carry the sample index.
    pub fn predict_batch(&self, samples: &[Sample]) -> Result<Vec<Prediction>> {
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                self.forward(&s.x_ctx, &s.x_seg)
                    .map_err(|e| Error::AtSample {
                        index: i,
                        source: Box::new(e),
                    })
            })
            .collect()
    }

    /// Mistake score for ranking metrics: the fused logit margin, or the raw
    /// ranking score when only the AUC head is in use.
    pub fn score(&self, p: &Prediction) -> f64 {
        match self.selection {
            HeadSelection::Auc => p.auc_score(),
            _ => p.fused_logits[1] - p.fused_logits[0],
        }
    }

    /// Fails with a message naming the sample if a feature width is off.
    pub fn check_sample(&self, index: usize, s: &Sample) -> Result<()> {
        let want = (self.experts.d_ctx(), self.experts.d_seg());
        let got = (s.x_ctx.len(), s.x_seg.len());
        if want != got {
            return Err(Error::InvalidConfig {
                field: "features",
                reason: format!(
                    "sample {index} has (context, segment) widths {got:?}, model expects {want:?}"
                ),
            });
        }
        Ok(())
    }

    /// All trainable tensors as flat slices, in a fixed order:
    /// `A, B, gate weights, gate bias, W1, b1, W2, b2, W3, b3, beta_raw`.
    pub fn trainable(&self) -> [&[f64]; 11] {
        let e = &self.experts;
        let h = &self.heads;
        [
            e.lora.a().as_slice(),
            e.lora.b().as_slice(),
            &e.gate.weights,
            core::slice::from_ref(&e.gate.bias),
            h.reweighted.weights.as_slice(),
            &h.reweighted.bias,
            h.auc.weights.as_slice(),
            &h.auc.bias,
            h.adjusted.weights.as_slice(),
            &h.adjusted.bias,
            &self.beta_raw,
        ]
    }

    pub fn trainable_mut(&mut self) -> [&mut [f64]; 11] {
        let e = &mut self.experts;
        let h = &mut self.heads;
        let (a, b) = e.lora.adapters_mut();
        [
            a.as_mut_slice(),
            b.as_mut_slice(),
            &mut e.gate.weights,
            core::slice::from_mut(&mut e.gate.bias),
            h.reweighted.weights.as_mut_slice(),
            &mut h.reweighted.bias,
            h.auc.weights.as_mut_slice(),
            &mut h.auc.bias,
            h.adjusted.weights.as_mut_slice(),
            &mut h.adjusted.bias,
            &mut self.beta_raw,
        ]
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.trainable()
            .iter()
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.trainable().iter().map(|t| t.len()).sum();
        if total != values.len() {
            return Err(Error::LengthMismatch {
                context: "flat parameter vector",
                left: values.len(),
                right: total,
            });
        }
        let mut rest = values;
        for t in self.trainable_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }
}

/// `Σ_k β_k · logits_k`.
pub fn fuse(beta: &[f64; 3], logits: &[[f64; 2]; 3]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (b, z) in beta.iter().zip(logits) {
        out[0] += b * z[0];
        out[1] += b * z[1];
    }
    out
}

/// Gradients for every trainable tensor of [`DrMoeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub experts: ExpertGrads,
    pub heads: HeadSet,
    pub beta_raw: [f64; 3],
}

impl ModelGrads {
    pub fn zeros_like(model: &DrMoeModel) -> Self {
        ModelGrads {
            experts: model.experts.zero_grads(),
            heads: model.heads.zeros_like(),
            beta_raw: [0.0; 3],
        }
    }

    /// Gradient tensors in [`DrMoeModel::trainable`] order.
    pub fn flat_parts(&self) -> [&[f64]; 11] {
        let e = &self.experts;
        let h = &self.heads;
        [
            e.a.as_slice(),
            e.b.as_slice(),
            &e.gate_weights,
            core::slice::from_ref(&e.gate_bias),
            h.reweighted.weights.as_slice(),
            &h.reweighted.bias,
            h.auc.weights.as_slice(),
            &h.auc.bias,
            h.adjusted.weights.as_slice(),
            &h.adjusted.bias,
            &self.beta_raw,
        ]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.flat_parts()
            .iter()
            .flat_map(|t| t.iter().copied())
            .collect()
    }
}
