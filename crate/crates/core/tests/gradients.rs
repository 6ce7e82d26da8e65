//! Every analytic gradient against central finite differences on random
//! configurations.

use drmoe_core::data::Sample;
use drmoe_core::experts::{ExpertBank, ExpertMode, GateMode};
use drmoe_core::heads::{
    auc_loss, auc_loss_pairwise, class_weights, la_loss, weighted_ce_loss, ClassFreq, HeadKind,
    LinearHead, Surrogate, WeightNorm,
};
use drmoe_core::math::{finite_diff_grad, relative_error};
use drmoe_core::model::{DrMoeModel, HeadSelection, ModelDims};
use drmoe_core::train::{fusion_objective, phase_a_objective, LossSetup, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONFIGS: u64 = 120;
const H: f64 = 1e-5;

fn vec_in(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random labels with both classes present.
fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
    y[0] = 0;
    y[1] = 1;
    y
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

fn random_model(rng: &mut ChaCha8Rng, selection: HeadSelection) -> DrMoeModel {
    let d_ctx = rng.random_range(1..5);
    let d_seg = rng.random_range(1..5);
    let d_out = rng.random_range(1..5);
    let lora_rank = rng.random_range(1..=d_out.min(d_seg));
    let gate_mode = pick(rng, &[GateMode::Scalar, GateMode::InputConditioned]);
    let expert_mode = pick(
        rng,
        &[
            ExpertMode::Fused,
            ExpertMode::FrozenOnly,
            ExpertMode::LoraOnly,
        ],
    );
    let mut model = DrMoeModel::init(
        ModelDims {
            d_ctx,
            d_seg,
            d_out,
            lora_rank,
        },
        gate_mode,
        expert_mode,
        selection,
        0.5,
        rng,
    )
    .unwrap();
    let flat = model.flat_params();
    let noisy: Vec<f64> = flat
        .iter()
        .map(|v| v + rng.random_range(-0.5..0.5))
        .collect();
    model.set_flat_params(&noisy).unwrap();
    model
}

fn random_batch(rng: &mut ChaCha8Rng, d_ctx: usize, d_seg: usize, n: usize) -> Vec<Sample> {
    labels(rng, n)
        .into_iter()
        .map(|label| Sample {
            x_ctx: vec_in(rng, d_ctx, 1.5),
            x_seg: vec_in(rng, d_seg, 1.5),
            label,
        })
        .collect()
}

#[test]
fn expert_bank_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..CONFIGS {
        let model = random_model(&mut rng, HeadSelection::Full);
        let bank = model.experts.clone();
        let (d_ctx, d_seg, d_out) = (bank.d_ctx(), bank.d_seg(), bank.d_out());
        let x_ctx = vec_in(&mut rng, d_ctx, 1.0);
        let x_seg = vec_in(&mut rng, d_seg, 1.0);
        let up = vec_in(&mut rng, d_out, 1.0);

        let fwd = bank.forward(&x_ctx, &x_seg).unwrap();
        let mut g = bank.zero_grads();
        bank.backward(&x_ctx, &x_seg, &fwd, &up, &mut g).unwrap();
        let mut analytic = g.a.as_slice().to_vec();
        analytic.extend_from_slice(g.b.as_slice());
        analytic.extend_from_slice(&g.gate_weights);
        analytic.push(g.gate_bias);

        let pack = |b: &ExpertBank| {
            let mut p = b.lora.a().as_slice().to_vec();
            p.extend_from_slice(b.lora.b().as_slice());
            p.extend_from_slice(&b.gate.weights);
            p.push(b.gate.bias);
            p
        };
        let numeric = finite_diff_grad(
            |p| {
                let mut b = bank.clone();
                let (a, bb) = b.lora.adapters_mut();
                let (pa, rest) = p.split_at(a.as_slice().len());
                let (pb, rest) = rest.split_at(bb.as_slice().len());
                a.as_mut_slice().copy_from_slice(pa);
                bb.as_mut_slice().copy_from_slice(pb);
                let (pw, pbias) = rest.split_at(b.gate.weights.len());
                b.gate.weights.copy_from_slice(pw);
                b.gate.bias = pbias[0];
                let out = b.forward(&x_ctx, &x_seg).unwrap();
                out.joint.iter().zip(&up).map(|(j, u)| j * u).sum()
            },
            &pack(&bank),
            H,
        )
        .unwrap();
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-6, "case {case}: relative error {err:e}");
    }
}

#[test]
fn linear_head_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..CONFIGS {
        let kind = pick(
            &mut rng,
            &[
                HeadKind::ReweightedCe,
                HeadKind::Auc,
                HeadKind::LogitAdjusted,
            ],
        );
        let d = rng.random_range(1..6);
        let mut head = LinearHead::zeros(kind, d);
        let k = kind.output_len();
        head.weights
            .as_mut_slice()
            .copy_from_slice(&vec_in(&mut rng, k * d, 1.0));
        head.bias = vec_in(&mut rng, k, 1.0);
        let joint = vec_in(&mut rng, d, 1.0);
        let up = vec_in(&mut rng, k, 1.0);

        let mut grads = head.zeros_like();
        let mut d_joint = vec![0.0; d];
        head.backward(&joint, &up, &mut grads, &mut d_joint)
            .unwrap();
        let mut analytic = grads.weights.as_slice().to_vec();
        analytic.extend_from_slice(&grads.bias);
        analytic.extend_from_slice(&d_joint);

        let mut x = head.weights.as_slice().to_vec();
        x.extend_from_slice(&head.bias);
        x.extend_from_slice(&joint);
        let numeric = finite_diff_grad(
            |p| {
                let mut h = head.clone();
                h.weights.as_mut_slice().copy_from_slice(&p[..k * d]);
                h.bias.copy_from_slice(&p[k * d..k * d + k]);
                let out = h.forward(&p[k * d + k..]).unwrap();
                out.iter().zip(&up).map(|(o, u)| o * u).sum()
            },
            &x,
            H,
        )
        .unwrap();
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-6, "case {case}: relative error {err:e}");
    }
}

fn flatten(grad: &[[f64; 2]]) -> Vec<f64> {
    grad.iter().flat_map(|g| g.iter().copied()).collect()
}

fn unflatten(p: &[f64]) -> Vec<[f64; 2]> {
    p.chunks(2).map(|c| [c[0], c[1]]).collect()
}

#[test]
fn logit_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..CONFIGS {
        let n = rng.random_range(2..12);
        let y = labels(&mut rng, n);
        let logits = vec_in(&mut rng, 2 * n, 4.0);
        let mistake = rng.random_range(0.01..0.99);
        let freq = ClassFreq::new(1.0 - mistake, mistake).unwrap();
        let norm = pick(&mut rng, &[WeightNorm::MeanOne, WeightNorm::Raw]);
        let w = class_weights(&freq, norm).unwrap();

        let wce = weighted_ce_loss(&unflatten(&logits), &y, w).unwrap();
        let numeric = finite_diff_grad(
            |p| weighted_ce_loss(&unflatten(p), &y, w).unwrap().loss,
            &logits,
            H,
        )
        .unwrap();
        let err = relative_error(&flatten(&wce.grad), &numeric, 1e-8);
        assert!(err < 1e-6, "case {case} wce: {err:e}");

        let la = la_loss(&unflatten(&logits), &y, &freq).unwrap();
        let numeric = finite_diff_grad(
            |p| la_loss(&unflatten(p), &y, &freq).unwrap().loss,
            &logits,
            H,
        )
        .unwrap();
        let err = relative_error(&flatten(&la.grad), &numeric, 1e-8);
        assert!(err < 1e-6, "case {case} la: {err:e}");
    }
}

#[test]
fn auc_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for case in 0..CONFIGS {
        let (np, nn) = (rng.random_range(1..10), rng.random_range(1..10));
        let scores = vec_in(&mut rng, np + nn, 3.0);
        let surrogate = if case % 2 == 0 {
            Surrogate::Logistic
        } else {
            Surrogate::SquaredHinge {
                margin: rng.random_range(0.1..2.0),
            }
        };
        for route in [auc_loss, auc_loss_pairwise] {
            let out = route(&scores[..np], &scores[np..], &surrogate).unwrap();
            let mut analytic = out.grad_pos.clone();
            analytic.extend_from_slice(&out.grad_neg);
            let numeric = finite_diff_grad(
                |p| route(&p[..np], &p[np..], &surrogate).unwrap().loss,
                &scores,
                H,
            )
            .unwrap();
            let err = relative_error(&analytic, &numeric, 1e-8);
            assert!(err < 1e-6, "case {case}: relative error {err:e}");
        }
    }
}

#[test]
fn fusion_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for case in 0..CONFIGS {
        let n = rng.random_range(2..10);
        let y = labels(&mut rng, n);
        let logits: Vec<[[f64; 2]; 3]> = (0..n)
            .map(|_| [0; 3].map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]))
            .collect();
        let raw = [0; 3].map(|_| rng.random_range(-2.0..2.0));
        let (_, analytic) = fusion_objective(&raw, &logits, &y).unwrap();
        let numeric = finite_diff_grad(
            |r| {
                fusion_objective(&[r[0], r[1], r[2]], &logits, &y)
                    .unwrap()
                    .0
            },
            &raw,
            H,
        )
        .unwrap();
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-6, "case {case}: relative error {err:e}");
    }
}

#[test]
fn end_to_end_phase_a_gradient() {
    let selections = [
        HeadSelection::Full,
        HeadSelection::CeBaseline,
        HeadSelection::ReweightedCe,
        HeadSelection::Auc,
        HeadSelection::LogitAdjusted,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for case in 0..CONFIGS {
        let selection = selections[case as usize % selections.len()];
        let model = random_model(&mut rng, selection);
        let batch = random_batch(&mut rng, model.experts.d_ctx(), model.experts.d_seg(), 4);
        let refs: Vec<&Sample> = batch.iter().collect();
        let config = TrainConfig {
            heads: selection,
            surrogate: if case % 3 == 0 {
                Surrogate::Logistic
            } else {
                Surrogate::default()
            },
            ..TrainConfig::default()
        };
        let freq = ClassFreq::new(0.8, 0.2).unwrap();
        let setup = LossSetup::new(&config, freq).unwrap();

        let (_, grads, _) = phase_a_objective(&model, &refs, &setup).unwrap();
        let analytic = grads.flat();
        let numeric = finite_diff_grad(
            |p| {
                let mut m = model.clone();
                m.set_flat_params(p).unwrap();
                phase_a_objective(&m, &refs, &setup).unwrap().0.total()
            },
            &model.flat_params(),
            H,
        )
        .unwrap();
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(
            err < 1e-5,
            "case {case} ({selection:?}): relative error {err:e}"
        );
    }
}
