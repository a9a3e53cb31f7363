//! Closed-form affine oracles for the unit-Gaussian score model.
//!
//! With ε_θ(z, t) = √(1−ᾱ_t) z every pipeline stage is a scalar multiple
//! of the identity, so whole pipelines reduce to products of per-step
//! factors that can be written down independently of the sampler code:
//!
//! * deterministic reverse step t → t−1 and inversion step t−1 → t share
//!   the factor c_t = √(ᾱ_{t−1} ᾱ_t) + √((1−ᾱ_{t−1})(1−ᾱ_t));
//! * the ancestral step contributes m_t = A_t + B_t √(1−ᾱ_t) on the state
//!   plus σ_t on the fresh deflection.

#![allow(dead_code)]

use shift_lab_core::{NoiseSchedule, SigmaSchedule};

/// c_t for the deterministic (σ = 0) update under the unit score.
pub fn ddim_step_factor(sched: &NoiseSchedule, t: usize) -> f64 {
    let ab_prev = sched.alpha_bar(t - 1);
    let ab = sched.alpha_bar(t);
    (ab_prev * ab).sqrt() + ((1.0 - ab_prev) * (1.0 - ab)).sqrt()
}

/// Product of c_t over the full generation chain T → 0.
pub fn ddim_generation_factor(sched: &NoiseSchedule) -> f64 {
    (1..=sched.steps()).map(|t| ddim_step_factor(sched, t)).product()
}

/// Product of c_t over an inversion 0 → depth.
pub fn inversion_factor(sched: &NoiseSchedule, depth: usize) -> f64 {
    (1..=depth).map(|t| ddim_step_factor(sched, t)).product()
}

/// m_t = A_t + B_t √(1−ᾱ_t): the state coefficient of the ancestral step
/// under the unit score at noise scale σ_t.
pub fn ancestral_state_factor(sched: &NoiseSchedule, sigma: &SigmaSchedule, t: usize) -> f64 {
    let ab_prev = sched.alpha_bar(t - 1);
    let ab = sched.alpha_bar(t);
    let s = sigma.sigma(t);
    let a_t = (ab_prev / ab).sqrt();
    let b_t = (1.0 - ab_prev - s * s).max(0.0).sqrt() - (ab_prev * (1.0 - ab) / ab).sqrt();
    a_t + b_t * (1.0 - ab).sqrt()
}

/// The chain from depth n to 0: returns (state coefficient, per-step ξ
/// weights w_t = σ_t Π_{s<t} m_s for t = 1..=n).
pub fn ancestral_chain_coefficients(
    sched: &NoiseSchedule,
    sigma: &SigmaSchedule,
    n: usize,
) -> (f64, Vec<f64>) {
    let mut state = 1.0;
    let mut prefix = vec![1.0; n + 1];
    for t in 1..=n {
        prefix[t] = prefix[t - 1] * ancestral_state_factor(sched, sigma, t);
    }
    state *= prefix[n];
    let weights = (1..=n).map(|t| prefix[t - 1] * sigma.sigma(t)).collect();
    (state, weights)
}
