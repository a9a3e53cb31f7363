//! The diffusion machinery: closed-form forward noising, the ancestral
//! reverse update (deterministic when σ_t = 0), multi-step reverse
//! sampling, and first-order inversion.
//!
//! Reverse update from t to t−1:
//!
//! ```text
//! ẑ₀  = (z_t − √(1−ᾱ_t) ε_θ(z_t, t)) / √ᾱ_t
//! z_{t−1} = √ᾱ_{t−1} ẑ₀ + √(1−ᾱ_{t−1}−σ_t²) ε_θ(z_t, t) + σ_t ξ_t
//! ```
//!
//! σ_t = 0 gives the deterministic path through the *same* expression, so
//! the two samplers coincide bit-for-bit rather than approximately.
//!
//! Inversion runs the first-order recursion upward, evaluating ε_θ at the
//! current (lower) timestep:
//!
//! ```text
//! z_{t+1} = √ᾱ_{t+1} ẑ₀(z_t, t) + √(1−ᾱ_{t+1}) ε_θ(z_t, t)
//! ```

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::rng::RngStream;
use crate::schedule::{NoiseSchedule, SigmaSchedule, ALPHA_BAR_GUARD};
use crate::score::ScoreModel;

/// √ᾱ_t z₀ + √(1−ᾱ_t) ε, elementwise.
pub fn forward_noise(z0: &Latent, t: usize, eps: &Latent, sched: &NoiseSchedule) -> Result<Latent> {
    if t > sched.steps() {
        return Err(Error::TimestepOutOfRange { t, min: 0, max: sched.steps() });
    }
    z0.same_shape(eps)?;
    let ab = sched.alpha_bar(t);
    Latent::lin_comb(ab.sqrt(), z0, (1.0 - ab).sqrt(), eps)
}

/// ẑ₀ = (z_t − √(1−ᾱ_t) ε_θ(z_t, t)) / √ᾱ_t for t = 1..=T.
pub fn predict_clean(
    z_t: &Latent,
    t: usize,
    score: &ScoreModel,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    sched.check_timestep(t, 1)?;
    let ab = sched.alpha_bar(t);
    if ab < ALPHA_BAR_GUARD {
        return Err(Error::DegenerateSchedule { t, alpha_bar: ab });
    }
    let eps = score.eps_theta(z_t, t, sched)?;
    predict_clean_from_eps(z_t, ab, &eps)
}

fn predict_clean_from_eps(z_t: &Latent, alpha_bar: f64, eps: &Latent) -> Result<Latent> {
    let inv = 1.0 / alpha_bar.sqrt();
    Latent::lin_comb(inv, z_t, -inv * (1.0 - alpha_bar).sqrt(), eps)
}

/// One reverse step from t to t−1 with explicit deflection noise ξ.
pub fn ancestral_step(
    z_t: &Latent,
    t: usize,
    xi: &Latent,
    sigma_t: f64,
    score: &ScoreModel,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    sched.check_timestep(t, 1)?;
    z_t.same_shape(xi)?;
    let ab = sched.alpha_bar(t);
    if ab < ALPHA_BAR_GUARD {
        return Err(Error::DegenerateSchedule { t, alpha_bar: ab });
    }
    let ab_prev = sched.alpha_bar(t - 1);
    let limit = 1.0 - ab_prev;
    let mut remainder = limit - sigma_t * sigma_t;
    if remainder < 0.0 {
        if remainder > -1e-12 {
            remainder = 0.0;
        } else {
            return Err(Error::SigmaTooLarge { t, sigma_sq: sigma_t * sigma_t, limit });
        }
    }
    let eps = score.eps_theta(z_t, t, sched)?;
    let zhat0 = predict_clean_from_eps(z_t, ab, &eps)?;
    let mut out = Latent::lin_comb(ab_prev.sqrt(), &zhat0, remainder.sqrt(), &eps)?;
    out.add_scaled(sigma_t, xi)?;
    Ok(out)
}

/// Result of a reverse chain; the trace holds z_{t_start} down to z₀ when
/// requested (memory guard for large sweeps: off by default).
#[derive(Debug, Clone)]
pub struct ReverseRun {
    pub z0: Latent,
    pub trace: Option<Vec<Latent>>,
}

/// Iterate `ancestral_step` from `t_start` down to 1, drawing fresh ξ_t from
/// the stream at every step.
pub fn sample_reverse(
    z_start: &Latent,
    t_start: usize,
    sigma: &SigmaSchedule,
    score: &ScoreModel,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
    keep_trace: bool,
) -> Result<ReverseRun> {
    sched.check_timestep(t_start, 1)?;
    if sigma.len() != sched.steps() {
        return Err(Error::InvalidRange(format!(
            "sigma schedule length {} != T = {}",
            sigma.len(),
            sched.steps()
        )));
    }
    let mut trace = keep_trace.then(|| vec![z_start.clone()]);
    let mut z = z_start.clone();
    for t in (1..=t_start).rev() {
        let xi = rng.normal_latent(z.shape());
        z = ancestral_step(&z, t, &xi, sigma.sigma(t), score, sched)?;
        if let Some(tr) = trace.as_mut() {
            tr.push(z.clone());
        }
    }
    Ok(ReverseRun { z0: z, trace })
}

/// First-order inversion from the clean latent up to depth `n_steps`,
/// returning the recovered noise estimate ε̂ = z_{n_steps}.
pub fn invert_ddim(
    z0: &Latent,
    n_steps: usize,
    score: &ScoreModel,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    sched.check_timestep(n_steps, 1)?;
    let mut z = z0.clone();
    for t_next in 1..=n_steps {
        let t = t_next - 1;
        let ab = sched.alpha_bar(t);
        if ab < ALPHA_BAR_GUARD {
            return Err(Error::DegenerateSchedule { t, alpha_bar: ab });
        }
        let eps = score.eps_theta(&z, t, sched)?;
        let zhat0 = predict_clean_from_eps(&z, ab, &eps)?;
        let ab_next = sched.alpha_bar(t_next);
        z = Latent::lin_comb(ab_next.sqrt(), &zhat0, (1.0 - ab_next).sqrt(), &eps)?;
    }
    Ok(z)
}
