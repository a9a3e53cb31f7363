//! The two-stage removal attack and its deterministic baseline.
//!
//! Stage I re-noises the encoded query latent to depth t_λ = ⌈λT⌉ through
//! the closed-form forward process; Stage II resamples back to a clean
//! latent with the ancestral sampler (η > 0 injects a fresh deflection at
//! every step; η = 0 is the deterministic regeneration baseline, which
//! keeps a source-dependent component and is kept here for comparison).
//!
//! `coupled_pair` realizes the shared-noise coupling used by the stability
//! analysis: the same (ε, ξ_{1:t_λ}) drive one chain started from the full
//! re-noised latent and one started from the pure-noise part only, and both
//! results pass through the verification map Q = inversion ∘ encode ∘
//! decode.

use crate::error::{Error, Result};
use crate::latent::{Image, Latent, LatentShape};
use crate::rng::RngStream;
use crate::sampler::{forward_noise, invert_ddim, sample_reverse};
use crate::schedule::{NoiseSchedule, SigmaSchedule};
use crate::score::ScoreModel;
use crate::watermark::ToyCodec;

/// Stream tag for the Stage-I mixing noise ε.
pub const STAGE1_TAG: &str = "stage1-eps";
/// Stream tag for the Stage-II deflections ξ_{1:t_λ}.
pub const STAGE2_TAG: &str = "stage2-xi";

/// The Stage-II deflection stream, aligned so that the draw used at
/// timestep t is the (T − t)-th latent of the stream regardless of the
/// attack depth. Two attacks on the same seed at different depths then
/// share ξ_t at every common timestep, matching how the stability
/// analysis indexes the deflection sequence and letting sweeps compare
/// depths under common random numbers.
pub fn stage2_stream(seed: u64, t_lambda: usize, t_steps: usize, shape: LatentShape) -> RngStream {
    let mut stream = RngStream::new(seed, STAGE2_TAG);
    for _ in t_lambda..t_steps {
        let _ = stream.normal_latent(shape);
    }
    stream
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Re-noising strength λ ∈ (0, 1].
    pub lambda: f64,
    /// Ancestral noise strength η ∈ [0, 1]; 0 is the deterministic baseline.
    pub eta: f64,
    /// Seed for this attack's streams.
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(lambda: f64, eta: f64, seed: u64) -> Result<Self> {
        let cfg = Self { lambda, eta, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidRange(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidRange(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    /// Attack depth ⌈λT⌉ clamped to [1, T]. The small slack keeps decimal
    /// λ values on their intended step (0.1 * 100 rounds to 10, not 11).
    pub fn t_lambda(&self, t_steps: usize) -> usize {
        let raw = (self.lambda * t_steps as f64 - 1e-9).ceil() as i64;
        raw.clamp(1, t_steps as i64) as usize
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub x_a: Image,
    pub z0_prime: Latent,
    /// The Stage-I ε actually used.
    pub eps_used: Latent,
    /// (seed, tag) regenerating the ξ sequence of Stage II.
    pub xi_stream: (u64, &'static str),
}

fn run_attack(
    x_w: &Image,
    cfg: &AttackConfig,
    eta: f64,
    codec: &ToyCodec,
    score: &ScoreModel,
    sched: &NoiseSchedule,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let z0 = codec.encode(x_w);
    let t_lambda = cfg.t_lambda(sched.steps());
    let eps = RngStream::new(cfg.seed, STAGE1_TAG).normal_latent(z0.shape());
    let z_noised = forward_noise(&z0, t_lambda, &eps, sched)?;
    let sigma = SigmaSchedule::ddim_eta(sched, eta)?;
    let mut xi_stream = stage2_stream(cfg.seed, t_lambda, sched.steps(), z0.shape());
    let run = sample_reverse(&z_noised, t_lambda, &sigma, score, sched, &mut xi_stream, false)?;
    Ok(AttackOutcome {
        x_a: codec.decode(&run.z0),
        z0_prime: run.z0,
        eps_used: eps,
        xi_stream: (cfg.seed, STAGE2_TAG),
    })
}

/// Stage I + stochastic Stage II at the configured η.
pub fn shift_attack(
    x_w: &Image,
    cfg: &AttackConfig,
    codec: &ToyCodec,
    score: &ScoreModel,
    sched: &NoiseSchedule,
) -> Result<AttackOutcome> {
    run_attack(x_w, cfg, cfg.eta, codec, score, sched)
}

/// Identical Stage I, then deterministic reverse (σ ≡ 0). Shares the
/// Stage-I ε stream with `shift_attack` for the same config.
pub fn ddim_regen_baseline(
    x_w: &Image,
    cfg: &AttackConfig,
    codec: &ToyCodec,
    score: &ScoreModel,
    sched: &NoiseSchedule,
) -> Result<AttackOutcome> {
    run_attack(x_w, cfg, 0.0, codec, score, sched)
}

/// Shared-noise coupled chains and their recovered noises.
#[derive(Debug, Clone)]
pub struct CoupledPair {
    /// Q(F(√ᾱ z₀ + √(1−ᾱ) ε)) — the attacked recovered noise.
    pub eps_hat_a: Latent,
    /// Q(F(√(1−ᾱ) ε)) — the source-free twin, independent of ε^w.
    pub eps_tilde: Latent,
    /// ‖z₀‖ of the encoded query, for the pathwise bound.
    pub z0_norm: f64,
}

/// Run Stage II twice from coupled starts under the same ξ draws, then push
/// both ends through the verification map Q at `invert_depth`.
pub fn coupled_pair(
    x_w: &Image,
    cfg: &AttackConfig,
    codec: &ToyCodec,
    score: &ScoreModel,
    sched: &NoiseSchedule,
    invert_depth: usize,
) -> Result<CoupledPair> {
    cfg.validate()?;
    let z0 = codec.encode(x_w);
    let t_lambda = cfg.t_lambda(sched.steps());
    let eps = RngStream::new(cfg.seed, STAGE1_TAG).normal_latent(z0.shape());
    let u = forward_noise(&z0, t_lambda, &eps, sched)?;
    let v = forward_noise(&Latent::zeros(z0.shape()), t_lambda, &eps, sched)?;
    let sigma = SigmaSchedule::ddim_eta(sched, cfg.eta)?;

    let q = |z: &Latent| -> Result<Latent> {
        let image = codec.decode(z);
        invert_ddim(&codec.encode(&image), invert_depth, score, sched)
    };

    // fresh stream objects with the same (seed, tag): identical ξ sequence
    let mut xi_a = stage2_stream(cfg.seed, t_lambda, sched.steps(), z0.shape());
    let run_a = sample_reverse(&u, t_lambda, &sigma, score, sched, &mut xi_a, false)?;
    let mut xi_b = stage2_stream(cfg.seed, t_lambda, sched.steps(), z0.shape());
    let run_b = sample_reverse(&v, t_lambda, &sigma, score, sched, &mut xi_b, false)?;

    Ok(CoupledPair {
        eps_hat_a: q(&run_a.z0)?,
        eps_tilde: q(&run_b.z0)?,
        z0_norm: z0.norm_l2(),
    })
}
