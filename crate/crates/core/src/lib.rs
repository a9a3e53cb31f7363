//! A desk-scale laboratory for removing initial-noise diffusion watermarks
//! by re-noising and stochastically resampling the generative trajectory,
//! built entirely on closed-form score models so every pipeline stage has
//! an analytic reference.
//!
//! Layout:
//!
//! * [`schedule`] — β/ᾱ chains and the DDIM-η ancestral noise scales
//! * [`score`] — exact Gaussian / Gaussian-mixture noise predictors with
//!   Lipschitz profiles
//! * [`sampler`] — forward noising, ancestral and deterministic reverse
//!   stepping, first-order inversion
//! * [`watermark`] — frequency-ring and sign-bit initial-noise marks, the
//!   toy codec, generation and calibrated verification
//! * [`attack`] — the two-stage resampling attack, its deterministic
//!   baseline, and the shared-noise coupled probe
//! * [`theory`] — stability factors ρ_t, C_n, Δ and the empirical checks
//!   of the contraction and decoupling inequalities
//! * [`metrics`] — noise distances, attack success rate, fidelity proxies
//! * [`rng`] — tagged reproducible Gaussian streams

pub mod attack;
pub mod dft;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod theory;
pub mod watermark;

pub use error::{Error, Result};
pub use latent::{Image, Latent, LatentShape};
pub use rng::RngStream;
pub use schedule::{NoiseSchedule, SigmaSchedule};
pub use score::{GaussianScore, LipschitzProfile, MixtureScore, ScoreModel};
