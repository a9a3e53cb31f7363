//! Discrete diffusion chain: β_t, ᾱ_t and the ancestral noise scales σ_t.
//!
//! Conventions: timesteps are 1-based (`t = 1..=T`); `alpha_bar(0) = 1` so
//! `t = 0` is the clean latent, with ᾱ_t = Π_{i≤t} (1 − β_i) the cumulative
//! signal retention coefficient.

use crate::error::{Error, Result};

/// Relative tolerance for recomputing ᾱ from β.
pub const SCHEDULE_CONSISTENCY_TOL: f64 = 1e-12;

/// Division guard on ᾱ_t when predicting the clean latent.
pub const ALPHA_BAR_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced β from `beta_start` to `beta_end` inclusive.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps < 1 {
            return Err(Error::InvalidRange("schedule needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas = if t_steps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (t_steps - 1) as f64;
            (0..t_steps).map(|i| beta_start + step * i as f64).collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidRange("schedule needs T >= 1".into()));
        }
        if let Some(bad) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidRange(format!("beta {bad} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Step count T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// β_t for `t = 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t = 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_timestep(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::TimestepOutOfRange { t, min, max: self.steps() });
        }
        Ok(())
    }

    /// Recompute ᾱ from β and compare against the stored values; also check
    /// strict decrease and positivity.
    pub fn verify_consistency(&self) -> Result<()> {
        let mut acc = 1.0;
        for (t, b) in self.betas.iter().enumerate() {
            acc *= 1.0 - b;
            let stored = self.alpha_bars[t + 1];
            let rel = (acc - stored).abs() / stored.abs().max(f64::MIN_POSITIVE);
            if rel > SCHEDULE_CONSISTENCY_TOL {
                return Err(Error::InvalidRange(format!(
                    "alpha_bar[{}] inconsistent with betas (rel err {rel:e})",
                    t + 1
                )));
            }
            if self.alpha_bars[t + 1] >= self.alpha_bars[t] {
                return Err(Error::InvalidRange(format!(
                    "alpha_bar not strictly decreasing at t={}",
                    t + 1
                )));
            }
        }
        if *self.alpha_bars.last().unwrap() <= 0.0 {
            return Err(Error::InvalidRange("alpha_bar[T] must stay positive".into()));
        }
        Ok(())
    }
}

/// Ancestral noise scales σ_1..σ_T together with the η that generated them.
///
/// The DDIM-η family: σ_t = η √((1−ᾱ_{t−1})/(1−ᾱ_t)) √(1−ᾱ_t/ᾱ_{t−1}).
/// η = 0 is the deterministic sampler, η = 1 full ancestral noise; every
/// member satisfies σ_t² ≤ 1 − ᾱ_{t−1} so the reverse update stays real.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
    eta: f64,
}

impl SigmaSchedule {
    pub fn ddim_eta(sched: &NoiseSchedule, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidRange(format!("eta must lie in [0, 1], got {eta}")));
        }
        let sigmas = (1..=sched.steps())
            .map(|t| {
                let ab_prev = sched.alpha_bar(t - 1);
                let ab = sched.alpha_bar(t);
                eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
            })
            .collect();
        let out = Self { sigmas, eta };
        out.validate_against(sched)?;
        Ok(out)
    }

    pub fn zero(sched: &NoiseSchedule) -> Self {
        Self { sigmas: vec![0.0; sched.steps()], eta: 0.0 }
    }

    /// σ_t for `t = 1..=T`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn validate_against(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.sigmas.len() != sched.steps() {
            return Err(Error::InvalidRange(format!(
                "sigma schedule length {} != T = {}",
                self.sigmas.len(),
                sched.steps()
            )));
        }
        for t in 1..=sched.steps() {
            let s = self.sigma(t);
            if s < 0.0 {
                return Err(Error::InvalidRange(format!("sigma[{t}] = {s} is negative")));
            }
            let limit = 1.0 - sched.alpha_bar(t - 1);
            if s * s > limit + 1e-15 {
                return Err(Error::SigmaTooLarge { t, sigma_sq: s * s, limit });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
    }

    #[test]
    fn two_step_cumulative_product_by_hand() {
        // betas [0.1, 0.3] -> alpha_bars [1, 0.9, 0.9 * 0.7 = 0.63]
        let s = NoiseSchedule::linear(2, 0.1, 0.3).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.63).abs() < 1e-15);
    }

    #[test]
    fn hundred_steps_match_log_space_summation_oracle() {
        // Independent route: accumulate ln_1p(-beta) and exponentiate.
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let mut log_acc = 0.0;
        for t in 1..=100 {
            log_acc += (-s.beta(t)).ln_1p();
            let oracle = log_acc.exp();
            let rel = (oracle - s.alpha_bar(t)).abs() / s.alpha_bar(t);
            assert!(rel < 1e-12, "t={t}: rel err {rel:e}");
        }
        s.verify_consistency().unwrap();
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn eta_zero_gives_all_zero_sigmas() {
        let sched = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        let sig = SigmaSchedule::ddim_eta(&sched, 0.0).unwrap();
        assert!((1..=10).all(|t| sig.sigma(t) == 0.0));
    }

    #[test]
    fn eta_one_respects_the_variance_cap() {
        let sched = NoiseSchedule::linear(100, 1e-3, 0.2).unwrap();
        let sig = SigmaSchedule::ddim_eta(&sched, 1.0).unwrap();
        // sigma_1 = 0 because alpha_bar(0) = 1.
        assert_eq!(sig.sigma(1), 0.0);
        for t in 2..=100 {
            let cap = 1.0 - sched.alpha_bar(t - 1);
            assert!(sig.sigma(t) > 0.0);
            assert!(sig.sigma(t) * sig.sigma(t) <= cap);
        }
    }

    #[test]
    fn oversized_sigma_is_rejected() {
        let sched = NoiseSchedule::linear(4, 0.1, 0.2).unwrap();
        let bad = SigmaSchedule { sigmas: vec![0.0, 2.0, 0.0, 0.0], eta: 1.0 };
        let err = bad.validate_against(&sched).unwrap_err();
        assert!(matches!(err, Error::SigmaTooLarge { t: 2, .. }));
    }
}
