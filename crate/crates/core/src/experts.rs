//! Stage one: a frozen linear feature expert, a low-rank adapted expert and
//! the sigmoid gate that mixes them into the joint feature
//! `F = α·frozen(x_ctx) + (1 − α)·lora(x_seg)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::math::{dot, sigmoid, sqrt, Mat};
use crate::{Error, Result};

/// Linear feature map that never changes after construction.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrozenExpert {
    w0: Mat,
}

impl FrozenExpert {
    pub fn new(w0: Mat) -> Self {
        FrozenExpert { w0 }
    }

    /// Gaussian weights with variance `1 / d_in`.
    pub fn random<R: RngCore>(d_out: usize, d_in: usize, rng: &mut R) -> Self {
        let scale = 1.0 / sqrt(d_in as f64);
        FrozenExpert::new(gaussian_mat(d_out, d_in, scale, rng))
    }

    pub fn weights(&self) -> &Mat {
        &self.w0
    }

    pub fn forward(&self, x_ctx: &[f64]) -> Result<Vec<f64>> {
        self.w0.matvec(x_ctx)
    }
}

/// `W0 + B·A` with `W0` frozen. `B` starts at zero so the adapted map equals
/// the frozen one until the first update.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LoraExpert {
    w0: Mat,
    a: Mat,
    b: Mat,
}

impl LoraExpert {
    pub fn new(w0: Mat, a: Mat, b: Mat) -> Result<Self> {
        let (d_out, d_in) = w0.shape();
        let rank = a.rows();
        if rank == 0 || rank > d_out.min(d_in) {
            return Err(Error::config(
                "lora_rank",
                alloc::format!("rank {rank} must lie in 1..={}", d_out.min(d_in)),
            ));
        }
        if a.cols() != d_in {
            return Err(Error::DimensionMismatch {
                context: "adapter A",
                expected: (rank, d_in),
                found: a.shape(),
            });
        }
        if b.shape() != (d_out, rank) {
            return Err(Error::DimensionMismatch {
                context: "adapter B",
                expected: (d_out, rank),
                found: b.shape(),
            });
        }
        Ok(LoraExpert { w0, a, b })
    }

    /// `A ~ N(0, 1/r)` entrywise, `B = 0`.
    pub fn init<R: RngCore>(w0: Mat, rank: usize, rng: &mut R) -> Result<Self> {
        let d_out = w0.rows();
        let d_in = w0.cols();
        let a = gaussian_mat(rank, d_in, 1.0 / sqrt(rank.max(1) as f64), rng);
        LoraExpert::new(w0, a, Mat::zeros(d_out, rank))
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn base(&self) -> &Mat {
        &self.w0
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut Mat {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut Mat {
        &mut self.b
    }

    pub fn adapters_mut(&mut self) -> (&mut Mat, &mut Mat) {
        (&mut self.a, &mut self.b)
    }

    /// The materialized update `B·A`; the forward pass never builds it.
    pub fn delta(&self) -> Mat {
        self.b
            .matmul(&self.a)
            .expect("adapter shapes checked at construction")
    }

    /// Returns the adapted output together with the hidden projection `A·x`.
    pub fn forward_parts(&self, x_seg: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut out = self.w0.matvec(x_seg)?;
        let hidden = self.a.matvec(x_seg)?;
        let update = self.b.matvec(&hidden)?;
        for (o, u) in out.iter_mut().zip(update) {
            *o += u;
        }
        Ok((out, hidden))
    }

    pub fn forward(&self, x_seg: &[f64]) -> Result<Vec<f64>> {
        self.forward_parts(x_seg).map(|(out, _)| out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GateMode {
    /// One α shared by every input: `sigmoid(bias)`.
    Scalar,
    /// Per-instance α: `sigmoid(g · [x_ctx ‖ x_seg] + bias)`.
    InputConditioned,
}

/// Which stage-one experts feed the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ExpertMode {
    #[cfg_attr(feature = "serde", serde(rename = "frozen"))]
    FrozenOnly,
    #[cfg_attr(feature = "serde", serde(rename = "lora"))]
    LoraOnly,
    #[cfg_attr(feature = "serde", serde(rename = "fmoe"))]
    Fused,
}

impl ExpertMode {
    pub const ALL: [ExpertMode; 3] = [
        ExpertMode::FrozenOnly,
        ExpertMode::LoraOnly,
        ExpertMode::Fused,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpertMode::FrozenOnly => "frozen",
            ExpertMode::LoraOnly => "lora",
            ExpertMode::Fused => "fmoe",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl GateMode {
    pub fn name(self) -> &'static str {
        match self {
            GateMode::Scalar => "scalar",
            GateMode::InputConditioned => "input_conditioned",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [GateMode::Scalar, GateMode::InputConditioned]
            .into_iter()
            .find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FMoeGate {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mode: GateMode,
}

impl FMoeGate {
    pub fn zeros(input_len: usize, mode: GateMode) -> Self {
        FMoeGate {
            weights: vec![0.0; input_len],
            bias: 0.0,
            mode,
        }
    }

    fn logit(&self, x_ctx: &[f64], x_seg: &[f64]) -> Result<f64> {
        match self.mode {
            GateMode::Scalar => Ok(self.bias),
            GateMode::InputConditioned => {
                let n = x_ctx.len() + x_seg.len();
                if self.weights.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "gate input",
                        expected: (self.weights.len(), 1),
                        found: (n, 1),
                    });
                }
                let (g_ctx, g_seg) = self.weights.split_at(x_ctx.len());
                Ok(dot(g_ctx, x_ctx) + dot(g_seg, x_seg) + self.bias)
            }
        }
    }

    /// Mixing weight of the frozen expert, always inside `(0, 1)` up to
    /// floating-point saturation.
    pub fn alpha(&self, x_ctx: &[f64], x_seg: &[f64]) -> Result<f64> {
        self.logit(x_ctx, x_seg).map(sigmoid)
    }
}

/// Forward values kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FmoeOutput {
    pub joint: Vec<f64>,
    pub alpha: f64,
    pub frozen_out: Vec<f64>,
    pub lora_out: Vec<f64>,
    /// `A·x_seg`, empty when the adapter branch was not evaluated.
    pub adapter_hidden: Vec<f64>,
}

pub fn fmoe_forward(
    frozen: &FrozenExpert,
    lora: &LoraExpert,
    gate: &FMoeGate,
    x_ctx: &[f64],
    x_seg: &[f64],
) -> Result<FmoeOutput> {
    let frozen_out = frozen.forward(x_ctx)?;
    let (lora_out, adapter_hidden) = lora.forward_parts(x_seg)?;
    if frozen_out.len() != lora_out.len() {
        return Err(Error::DimensionMismatch {
            context: "expert outputs",
            expected: (frozen_out.len(), 1),
            found: (lora_out.len(), 1),
        });
    }
    let alpha = gate.alpha(x_ctx, x_seg)?;
    let joint = frozen_out
        .iter()
        .zip(&lora_out)
        .map(|(u, v)| alpha * u + (1.0 - alpha) * v)
        .collect();
    Ok(FmoeOutput {
        joint,
        alpha,
        frozen_out,
        lora_out,
        adapter_hidden,
    })
}

/// Gradients for every trainable stage-one parameter. `W0` has none.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertGrads {
    pub a: Mat,
    pub b: Mat,
    pub gate_weights: Vec<f64>,
    pub gate_bias: f64,
}

impl ExpertGrads {
    pub fn zeros_like(lora: &LoraExpert, gate: &FMoeGate) -> Self {
        ExpertGrads {
            a: Mat::zeros(lora.a.rows(), lora.a.cols()),
            b: Mat::zeros(lora.b.rows(), lora.b.cols()),
            gate_weights: vec![0.0; gate.weights.len()],
            gate_bias: 0.0,
        }
    }
}

fn check_upstream(fwd: &FmoeOutput, upstream: &[f64]) -> Result<()> {
    if upstream.len() != fwd.joint.len() {
        return Err(Error::DimensionMismatch {
            context: "upstream gradient",
            expected: (fwd.joint.len(), 1),
            found: (upstream.len(), 1),
        });
    }
    Ok(())
}

/// Adapter branch: `dB += dv ⊗ (A·x)`, `dA += (Bᵀ dv) ⊗ x`.
fn lora_backward(
    lora: &LoraExpert,
    x_seg: &[f64],
    hidden: &[f64],
    d_lora_out: &[f64],
    grads: &mut ExpertGrads,
) -> Result<()> {
    grads.b.add_outer(1.0, d_lora_out, hidden);
    let d_hidden = lora.b.matvec_t(d_lora_out)?;
    grads.a.add_outer(1.0, &d_hidden, x_seg);
    Ok(())
}

/// Accumulates the gradients of a scalar objective whose gradient with
/// respect to the joint feature is `upstream`.
pub fn fmoe_backward(
    lora: &LoraExpert,
    gate: &FMoeGate,
    x_ctx: &[f64],
    x_seg: &[f64],
    fwd: &FmoeOutput,
    upstream: &[f64],
    grads: &mut ExpertGrads,
) -> Result<()> {
    check_upstream(fwd, upstream)?;
    let alpha = fwd.alpha;

    let d_alpha: f64 = upstream
        .iter()
        .zip(fwd.frozen_out.iter().zip(&fwd.lora_out))
        .map(|(g, (u, v))| g * (u - v))
        .sum();
    let d_logit = d_alpha * alpha * (1.0 - alpha);
    grads.gate_bias += d_logit;
    if gate.mode == GateMode::InputConditioned {
        let (g_ctx, g_seg) = grads.gate_weights.split_at_mut(x_ctx.len());
        for (g, x) in g_ctx.iter_mut().zip(x_ctx) {
            *g += d_logit * x;
        }
        for (g, x) in g_seg.iter_mut().zip(x_seg) {
            *g += d_logit * x;
        }
    }

    let d_lora: Vec<f64> = upstream.iter().map(|g| (1.0 - alpha) * g).collect();
    lora_backward(lora, x_seg, &fwd.adapter_hidden, &d_lora, grads)
}

/// Frozen expert, adapted expert and gate, plus which of them feed the heads.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpertBank {
    pub frozen: FrozenExpert,
    pub lora: LoraExpert,
    pub gate: FMoeGate,
    pub mode: ExpertMode,
}

impl ExpertBank {
    /// Both experts start from the same random base map when the two views
    /// share a width; otherwise the adapter gets its own base.
    pub fn init<R: RngCore>(
        d_ctx: usize,
        d_seg: usize,
        d_out: usize,
        rank: usize,
        gate_mode: GateMode,
        mode: ExpertMode,
        rng: &mut R,
    ) -> Result<Self> {
        let frozen = FrozenExpert::random(d_out, d_ctx, rng);
        let base = if d_ctx == d_seg {
            frozen.weights().clone()
        } else {
            FrozenExpert::random(d_out, d_seg, rng).w0
        };
        let lora = LoraExpert::init(base, rank, rng)?;
        Ok(ExpertBank {
            frozen,
            lora,
            gate: FMoeGate::zeros(d_ctx + d_seg, gate_mode),
            mode,
        })
    }

    pub fn d_ctx(&self) -> usize {
        self.frozen.weights().cols()
    }

    pub fn d_seg(&self) -> usize {
        self.lora.base().cols()
    }

    pub fn d_out(&self) -> usize {
        self.frozen.weights().rows()
    }

    pub fn forward(&self, x_ctx: &[f64], x_seg: &[f64]) -> Result<FmoeOutput> {
        match self.mode {
            ExpertMode::Fused => fmoe_forward(&self.frozen, &self.lora, &self.gate, x_ctx, x_seg),
            ExpertMode::FrozenOnly => {
                let frozen_out = self.frozen.forward(x_ctx)?;
                Ok(FmoeOutput {
                    joint: frozen_out.clone(),
                    alpha: 1.0,
                    frozen_out,
                    lora_out: Vec::new(),
                    adapter_hidden: Vec::new(),
                })
            }
            ExpertMode::LoraOnly => {
                let (lora_out, adapter_hidden) = self.lora.forward_parts(x_seg)?;
                Ok(FmoeOutput {
                    joint: lora_out.clone(),
                    alpha: 0.0,
                    frozen_out: Vec::new(),
                    lora_out,
                    adapter_hidden,
                })
            }
        }
    }

    pub fn backward(
        &self,
        x_ctx: &[f64],
        x_seg: &[f64],
        fwd: &FmoeOutput,
        upstream: &[f64],
        grads: &mut ExpertGrads,
    ) -> Result<()> {
        match self.mode {
            ExpertMode::Fused => {
                fmoe_backward(&self.lora, &self.gate, x_ctx, x_seg, fwd, upstream, grads)
            }
            ExpertMode::FrozenOnly => check_upstream(fwd, upstream),
            ExpertMode::LoraOnly => {
                check_upstream(fwd, upstream)?;
                lora_backward(&self.lora, x_seg, &fwd.adapter_hidden, upstream, grads)
            }
        }
    }

    pub fn zero_grads(&self) -> ExpertGrads {
        ExpertGrads::zeros_like(&self.lora, &self.gate)
    }
}

pub(crate) fn gaussian_mat<R: RngCore>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_grad, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn frozen_forward_examples() {
        let x = [1.0, -1.0];
        assert_eq!(
            FrozenExpert::new(Mat::identity(2)).forward(&x).unwrap(),
            vec![1.0, -1.0]
        );
        assert_eq!(
            FrozenExpert::new(Mat::zeros(2, 2)).forward(&x).unwrap(),
            vec![0.0, 0.0]
        );
        let e = FrozenExpert::new(mat(&[&[2.0, 0.0], &[0.0, 3.0]]));
        assert_eq!(e.forward(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        assert!(e.forward(&[1.0]).is_err());
    }

    #[test]
    fn lora_forward_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = gaussian_mat(4, 3, 1.0, &mut rng);
        let lora = LoraExpert::init(w0.clone(), 2, &mut rng).unwrap();
        let x = [0.3, -1.2, 2.0];
        assert_eq!(
            lora.forward(&x).unwrap(),
            FrozenExpert::new(w0).forward(&x).unwrap()
        );

        let lora = LoraExpert::new(
            Mat::zeros(2, 2),
            mat(&[&[1.0, 1.0]]),
            mat(&[&[1.0], &[0.0]]),
        )
        .unwrap();
        assert_eq!(lora.forward(&[2.0, 3.0]).unwrap(), vec![5.0, 0.0]);
    }

    #[test]
    fn lora_rank_bounds() {
        let w0 = Mat::zeros(3, 2);
        assert!(LoraExpert::new(w0.clone(), Mat::zeros(0, 2), Mat::zeros(3, 0)).is_err());
        assert!(LoraExpert::new(w0.clone(), Mat::zeros(3, 2), Mat::zeros(3, 3)).is_err());
        assert!(LoraExpert::new(w0.clone(), Mat::zeros(2, 2), Mat::zeros(3, 2)).is_ok());
        assert!(LoraExpert::new(w0, Mat::zeros(1, 3), Mat::zeros(3, 1)).is_err());
    }

    #[test]
    fn gate_alpha_examples() {
        let scalar = FMoeGate::zeros(4, GateMode::Scalar);
        assert_eq!(scalar.alpha(&[5.0, 1.0], &[2.0, 2.0]).unwrap(), 0.5);
        let cond = FMoeGate::zeros(4, GateMode::InputConditioned);
        assert_eq!(cond.alpha(&[5.0, 1.0], &[-2.0, 7.0]).unwrap(), 0.5);
        let cond = FMoeGate {
            weights: vec![1.0, 0.0, 0.0, 0.0],
            bias: 0.0,
            mode: GateMode::InputConditioned,
        };
        let alpha = cond.alpha(&[2.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((alpha - 0.8807970779778823).abs() < 1e-15);
        assert!(cond.alpha(&[2.0], &[0.0, 0.0]).is_err());
        // scalar mode ignores a mismatched weight vector
        let scalar = FMoeGate {
            weights: vec![9.0],
            bias: 0.0,
            mode: GateMode::Scalar,
        };
        assert_eq!(scalar.alpha(&[1.0, 2.0], &[3.0]).unwrap(), 0.5);
    }

    fn fixed_bank(bias: f64) -> (FrozenExpert, LoraExpert, FMoeGate) {
        let frozen = FrozenExpert::new(mat(&[&[2.0, 0.0], &[0.0, 0.0]]));
        let lora = LoraExpert::new(
            mat(&[&[0.0, 0.0], &[0.0, 2.0]]),
            mat(&[&[0.5, -0.25]]),
            mat(&[&[0.0], &[0.0]]),
        )
        .unwrap();
        let gate = FMoeGate {
            weights: vec![0.0; 4],
            bias,
            mode: GateMode::Scalar,
        };
        (frozen, lora, gate)
    }

    #[test]
    fn fmoe_forward_examples() {
        let x = [1.0, 1.0];
        let (frozen, lora, gate) = fixed_bank(0.0);
        let out = fmoe_forward(&frozen, &lora, &gate, &x, &x).unwrap();
        assert_eq!(out.alpha, 0.5);
        assert_eq!(out.joint, vec![1.0, 1.0]);

        let (frozen, lora, gate) = fixed_bank(40.0);
        let out = fmoe_forward(&frozen, &lora, &gate, &x, &x).unwrap();
        let lora_norm = crate::math::norm2(&out.lora_out);
        for (j, f) in out.joint.iter().zip(&out.frozen_out) {
            assert!((j - f).abs() <= 1e-15 * lora_norm);
        }

        let (frozen, lora, gate) = fixed_bank(-40.0);
        let out = fmoe_forward(&frozen, &lora, &gate, &x, &x).unwrap();
        for (j, v) in out.joint.iter().zip(&out.lora_out) {
            assert!((j - v).abs() <= 1e-15 * crate::math::norm2(&out.frozen_out));
        }
    }

    #[test]
    fn fmoe_forward_rejects_width_mismatch() {
        let frozen = FrozenExpert::new(Mat::zeros(3, 2));
        let lora = LoraExpert::new(Mat::zeros(2, 2), Mat::zeros(1, 2), Mat::zeros(2, 1)).unwrap();
        let gate = FMoeGate::zeros(4, GateMode::Scalar);
        assert!(fmoe_forward(&frozen, &lora, &gate, &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = ExpertBank::init(
            3,
            3,
            4,
            2,
            GateMode::InputConditioned,
            ExpertMode::Fused,
            &mut rng,
        )
        .unwrap();
        let x_ctx = [0.5, -0.1, 1.0];
        let x_seg = [0.2, 0.3, -0.7];
        let fwd = bank.forward(&x_ctx, &x_seg).unwrap();
        let mut grads = bank.zero_grads();
        bank.backward(&x_ctx, &x_seg, &fwd, &[0.0; 4], &mut grads)
            .unwrap();
        assert_eq!(grads, bank.zero_grads());
    }

    #[test]
    fn adapter_gradient_vanishes_when_frozen_branch_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bank =
            ExpertBank::init(3, 3, 4, 2, GateMode::Scalar, ExpertMode::Fused, &mut rng).unwrap();
        bank.lora
            .b_mut()
            .as_mut_slice()
            .iter_mut()
            .for_each(|b| *b = 0.3);
        bank.gate.bias = 40.0;
        let (x_ctx, x_seg) = ([1.0, 2.0, -1.0], [0.5, 0.5, 0.5]);
        let fwd = bank.forward(&x_ctx, &x_seg).unwrap();
        assert!(fwd.alpha >= 1.0 - 1e-12);
        let mut grads = bank.zero_grads();
        bank.backward(&x_ctx, &x_seg, &fwd, &[1.0, -2.0, 0.5, 3.0], &mut grads)
            .unwrap();
        assert!(grads.a.as_slice().iter().all(|g| g.abs() < 1e-10));
        assert!(grads.b.as_slice().iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn bias_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut bank = ExpertBank::init(
            3,
            2,
            4,
            2,
            GateMode::InputConditioned,
            ExpertMode::Fused,
            &mut rng,
        )
        .unwrap();
        bank.lora
            .b_mut()
            .as_mut_slice()
            .iter_mut()
            .enumerate()
            .for_each(|(i, b)| {
                *b = 0.1 * i as f64 - 0.3;
            });
        bank.gate.bias = 0.4;
        let x_ctx = [0.3, -1.0, 0.8];
        let x_seg = [1.1, -0.4];
        let upstream = [0.7, -0.2, 1.3, 0.05];
        let objective =
            |bank: &ExpertBank| dot(&bank.forward(&x_ctx, &x_seg).unwrap().joint, &upstream);
        let fwd = bank.forward(&x_ctx, &x_seg).unwrap();
        let mut grads = bank.zero_grads();
        bank.backward(&x_ctx, &x_seg, &fwd, &upstream, &mut grads)
            .unwrap();
        let numeric = finite_diff_grad(
            |b| {
                let mut probe = bank.clone();
                probe.gate.bias = b[0];
                objective(&probe)
            },
            &[bank.gate.bias],
            1e-5,
        )
        .unwrap();
        assert!(relative_error(&[grads.gate_bias], &numeric, 1e-12) < 1e-6);
    }

    #[test]
    fn update_rank_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lora = LoraExpert::init(gaussian_mat(6, 5, 1.0, &mut rng), 2, &mut rng).unwrap();
        let b = gaussian_mat(6, 2, 1.0, &mut rng);
        *lora.b_mut() = b;
        let delta = lora.delta();
        // Gram–Schmidt on the columns: at most `rank` survive.
        let cols: Vec<Vec<f64>> = (0..delta.cols())
            .map(|j| (0..delta.rows()).map(|i| delta.get(i, j)).collect())
            .collect();
        let max_norm = cols
            .iter()
            .map(|c| crate::math::norm2(c))
            .fold(0.0, f64::max);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for c in cols {
            let mut r = c.clone();
            for q in &basis {
                let p = dot(&r, q);
                r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= p * qi);
            }
            let n = crate::math::norm2(&r);
            if n > 1e-10 * max_norm {
                basis.push(r.iter().map(|v| v / n).collect());
            }
        }
        assert_eq!(basis.len(), 2);
    }
}
