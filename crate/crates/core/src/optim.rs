//! Adam with bias correction, and sharpness-aware minimization layered on
//! top of it.
//!
//! A parameter group is a list of flat tensors (`&mut [&mut [f64]]`); the
//! optimizer keeps one moment buffer per tensor.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{check_finite, sqrt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("eps", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state for tensors of the given flat lengths.
    pub fn new(config: AdamConfig, lens: &[usize]) -> Self {
        AdamState {
            config,
            t: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn check_shapes(&self, group: &str, params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let congruent = params.len() == self.m.len()
            && grads.len() == self.m.len()
            && params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .all(|((p, g), m)| p.len() == m.len() && g.len() == m.len());
        if congruent {
            Ok(())
        } else {
            Err(Error::GroupMismatch(group.into()))
        }
    }

    /// One bias-corrected Adam update. Rejects non-finite gradients before
    /// touching any state.
    pub fn step(&mut self, group: &str, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        self.check_shapes(group, params, grads)?;
        for (k, g) in grads.iter().enumerate() {
            check_finite(&format!("gradient of group `{group}`, tensor {k}"), g)?;
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

/// Sharpness-aware minimization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamConfig {
    pub rho: f64,
    pub enabled: bool,
}

impl Default for SamConfig {
    fn default() -> Self {
        SamConfig {
            rho: 0.05,
            enabled: true,
        }
    }
}

/// Below this gradient norm the ascent direction is undefined and no
/// perturbation is applied.
pub const SAM_MIN_GRAD_NORM: f64 = 1e-12;

/// `ρ · g / ‖g‖₂` with the norm taken over the whole group; zero when the
/// gradient is degenerate.
pub fn sam_perturbation(grads: &[Vec<f64>], rho: f64) -> Vec<Vec<f64>> {
    let norm = sqrt(grads.iter().flatten().map(|g| g * g).sum::<f64>());
    if norm < SAM_MIN_GRAD_NORM || rho == 0.0 {
        return grads.iter().map(|g| vec![0.0; g.len()]).collect();
    }
    let scale = rho / norm;
    grads
        .iter()
        .map(|g| g.iter().map(|v| scale * v).collect())
        .collect()
}

/// What a SAM step observed.
#[derive(Debug, Clone, PartialEq)]
pub struct SamOutcome {
    /// Objective at the unperturbed parameters.
    pub loss: f64,
    /// Objective at the perturbed parameters (equal to `loss` when no
    /// perturbation was applied).
    pub perturbed_loss: f64,
    pub perturbation_norm: f64,
}

/// Two-phase SAM update: take `g = ∇L(θ)`, move to `θ + ρ·g/‖g‖`, take the
/// gradient there, then apply Adam at the original `θ` with that gradient.
///
/// `loss_and_grad` receives the parameter tensors at which to evaluate and
/// returns the objective with one gradient buffer per tensor.
pub fn sam_step<F>(
    cfg: &SamConfig,
    state: &mut AdamState,
    group: &str,
    params: &mut [&mut [f64]],
    mut loss_and_grad: F,
) -> Result<SamOutcome>
where
    F: FnMut(&[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)>,
{
    if !(cfg.rho >= 0.0 && cfg.rho.is_finite()) {
        return Err(Error::config("rho", "must be non-negative and finite"));
    }
    let (loss, grads) = {
        let view: Vec<&[f64]> = params.iter().map(|p| &**p).collect();
        loss_and_grad(&view)?
    };
    if !loss.is_finite() {
        return Err(non_finite_loss(group, "at the current parameters"));
    }

    let eps = if cfg.enabled {
        sam_perturbation(&grads, cfg.rho)
    } else {
        grads.iter().map(|g| vec![0.0; g.len()]).collect()
    };
    let perturbation_norm = sqrt(eps.iter().flatten().map(|e| e * e).sum::<f64>());

    let (perturbed_loss, ascent_grads) = if perturbation_norm == 0.0 {
        (loss, grads)
    } else {
        let shifted: Vec<Vec<f64>> = params
            .iter()
            .zip(&eps)
            .map(|(p, e)| p.iter().zip(e).map(|(a, b)| a + b).collect())
            .collect();
        let view: Vec<&[f64]> = shifted.iter().map(Vec::as_slice).collect();
        let (l, g) = loss_and_grad(&view)?;
        if !l.is_finite() {
            return Err(non_finite_loss(group, "at the perturbed parameters"));
        }
        (l, g)
    };

    let grad_view: Vec<&[f64]> = ascent_grads.iter().map(Vec::as_slice).collect();
    state.step(group, params, &grad_view)?;
    Ok(SamOutcome {
        loss,
        perturbed_loss,
        perturbation_norm,
    })
}

fn non_finite_loss(group: &str, at: &str) -> Error {
    let context: String = format!("SAM objective of group `{group}` {at}");
    Error::NonFinite { context, index: 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::rc::Rc;
    use core::cell::RefCell;

    fn adam(lr: f64, lens: &[usize]) -> AdamState {
        AdamState::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            lens,
        )
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = adam(1e-3, &[3]);
        let mut p = [1.0, -2.0, 0.5];
        state.step("w", &mut [&mut p[..]], &[&[0.0; 3]]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut state = adam(1e-5, &[1]);
        let mut p = [0.0];
        state.step("w", &mut [&mut p[..]], &[&[1.0]]).unwrap();
        let expected = -1e-5 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-20, "{}", p[0]);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut state = adam(1e-3, &[2]);
        let mut p = [0.0, 0.0];
        let err = state
            .step("head3", &mut [&mut p[..]], &[&[1.0, f64::INFINITY]])
            .unwrap_err();
        assert!(err.to_string().contains("head3"));
        assert_eq!(state.t, 0);
        assert_eq!(p, [0.0, 0.0]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut state = adam(1e-2, &[2, 1]);
            let mut a = [0.3, -0.7];
            let mut b = [1.1];
            for k in 0..50 {
                let ga = [a[0] * 2.0 + k as f64 * 1e-3, a[1].sin()];
                let gb = [b[0] - 0.5];
                state
                    .step("g", &mut [&mut a[..], &mut b[..]], &[&ga, &gb])
                    .unwrap();
            }
            (a, b, state)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn perturbation_example() {
        let eps = sam_perturbation(&[vec![3.0, 4.0]], 0.05);
        assert!((eps[0][0] - 0.03).abs() < 1e-15 && (eps[0][1] - 0.04).abs() < 1e-15);
        assert_eq!(
            sam_perturbation(&[vec![0.0, 1e-13]], 0.05),
            vec![vec![0.0, 0.0]]
        );
    }

    #[test]
    fn rho_zero_reduces_to_adam() {
        let objective = |p: &[&[f64]]| -> Result<(f64, Vec<Vec<f64>>)> {
            let x = p[0];
            Ok((
                x.iter().map(|v| v * v * v).sum(),
                vec![x.iter().map(|v| 3.0 * v * v).collect()],
            ))
        };
        let mut sam_state = adam(1e-2, &[2]);
        let mut plain_state = adam(1e-2, &[2]);
        let mut a = [0.4, -1.3];
        let mut b = a;
        for _ in 0..20 {
            let cfg = SamConfig {
                rho: 0.0,
                enabled: true,
            };
            sam_step(&cfg, &mut sam_state, "h", &mut [&mut a[..]], objective).unwrap();
            let (_, g) = objective(&[&b[..]]).unwrap();
            plain_state.step("h", &mut [&mut b[..]], &[&g[0]]).unwrap();
        }
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        assert_eq!(sam_state, plain_state);
    }

    #[test]
    fn quadratic_bowl_two_phase_rule() {
        let seen: Rc<RefCell<Vec<f64>>> = Rc::new(RefCell::new(Vec::new()));
        let probe = {
            let seen = seen.clone();
            move |p: &[&[f64]]| -> Result<(f64, Vec<Vec<f64>>)> {
                let x = p[0][0];
                seen.borrow_mut().push(x);
                Ok((0.5 * x * x, vec![vec![x]]))
            }
        };
        let mut state = adam(1e-3, &[1]);
        let mut theta = [1.0];
        let out = sam_step(
            &SamConfig::default(),
            &mut state,
            "h",
            &mut [&mut theta[..]],
            probe,
        )
        .unwrap();
        assert_eq!(*seen.borrow(), vec![1.0, 1.05]);
        assert!((out.perturbation_norm - 0.05).abs() < 1e-15);
        assert!(theta[0] < 1.0);

        // the update is Adam at θ = 1 with g_adv = 1.05
        let mut reference = adam(1e-3, &[1]);
        let mut r = [1.0];
        reference.step("h", &mut [&mut r[..]], &[&[1.05]]).unwrap();
        assert_eq!(theta[0].to_bits(), r[0].to_bits());
    }

    #[test]
    fn non_finite_perturbed_loss_is_an_error() {
        let objective = |p: &[&[f64]]| -> Result<(f64, Vec<Vec<f64>>)> {
            let x = p[0][0];
            let l = if x > 1.0 { f64::NAN } else { x };
            Ok((l, vec![vec![1.0]]))
        };
        let mut state = adam(1e-3, &[1]);
        let mut theta = [1.0];
        assert!(sam_step(
            &SamConfig::default(),
            &mut state,
            "h",
            &mut [&mut theta[..]],
            objective
        )
        .is_err());
        assert_eq!(theta, [1.0]);
    }

    #[test]
    fn sam_adam_converges_on_1d_quadratic() {
        let objective = |p: &[&[f64]]| -> Result<(f64, Vec<Vec<f64>>)> {
            let x = p[0][0] - 2.0;
            Ok((0.5 * x * x, vec![vec![x]]))
        };
        let mut state = adam(1e-2, &[1]);
        let mut theta = [-3.0];
        let mut converged_at = None;
        for step in 0..10_000 {
            sam_step(
                &SamConfig::default(),
                &mut state,
                "h",
                &mut [&mut theta[..]],
                objective,
            )
            .unwrap();
            if converged_at.is_none() && (theta[0] - 2.0).abs() < 1e-3 {
                converged_at = Some(step);
            }
        }
        assert!(converged_at.is_some());
        assert!((theta[0] - 2.0).abs() < 1e-3, "{}", theta[0]);
    }
}
