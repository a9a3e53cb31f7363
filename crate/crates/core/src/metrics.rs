//! Attack-evaluation statistics: recovered-noise distances, attack success
//! rate, and the toy semantic-fidelity proxies.

use crate::error::{Error, Result};
use crate::latent::{Image, Latent};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreModel;
use crate::watermark::{Decision, SchemeId, ToyCodec, VerifyResult};

/// Per-element distances between a recovered noise and the embedded one:
/// `l1 = (1/d) Σ |ε̂_i − ε^w_i|` and `l2 = √((1/d) Σ (ε̂_i − ε^w_i)²)`.
///
/// For independent standard normals these converge to 2/√π ≈ 1.1284 and
/// √2 ≈ 1.4142 as d grows.
pub fn noise_distance(eps_hat: &Latent, eps_w: &Latent) -> Result<(f64, f64)> {
    eps_hat.same_shape(eps_w)?;
    let d = eps_hat.dim() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (a, b) in eps_hat.as_slice().iter().zip(eps_w.as_slice()) {
        let diff = a - b;
        abs_sum += diff.abs();
        sq_sum += diff * diff;
    }
    Ok((abs_sum / d, (sq_sum / d).sqrt()))
}

/// One evaluated trial of one (scheme, λ) cell.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub lambda: f64,
    pub scheme: SchemeId,
    pub verify_clean: VerifyResult,
    pub verify_attacked: VerifyResult,
    pub l1_dist: f64,
    pub l2_dist: f64,
    pub latent_mse: f64,
    pub mode_clean: Option<usize>,
    pub mode_attacked: Option<usize>,
}

impl TrialRecord {
    pub fn mode_retained(&self) -> Option<bool> {
        match (self.mode_clean, self.mode_attacked) {
            (Some(a), Some(b)) => Some(a == b),
            _ => None,
        }
    }
}

/// Fraction of attacked verifications declared clean among trials whose
/// clean verification was watermarked.
pub fn attack_success_rate(records: &[TrialRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecordSet("attack_success_rate".into()));
    }
    let tau = records[0].verify_attacked.threshold;
    if records.iter().any(|r| r.verify_attacked.threshold != tau) {
        return Err(Error::InvalidRange(
            "attack_success_rate needs records sharing one threshold".into(),
        ));
    }
    let mut denom = 0usize;
    let mut evaded = 0usize;
    for r in records {
        if r.verify_clean.decision == Decision::Watermarked {
            denom += 1;
            if r.verify_attacked.decision == Decision::Clean {
                evaded += 1;
            }
        }
    }
    if denom == 0 {
        return Err(Error::EmptyRecordSet(
            "attack_success_rate: no trial had a watermarked clean verification".into(),
        ));
    }
    Ok(evaded as f64 / denom as f64)
}

/// Latent-space fidelity proxy: per-element squared distance between the
/// encoded attacked and original images, plus coarse mode retention when a
/// mixture model is configured (posterior argmax at t = 0).
pub fn semantic_proxy(
    x_a: &Image,
    x_w: &Image,
    codec: &ToyCodec,
    score: &ScoreModel,
    sched: &NoiseSchedule,
) -> Result<(f64, Option<bool>)> {
    let za = codec.encode(x_a);
    let zw = codec.encode(x_w);
    za.same_shape(&zw)?;
    let d = za.dim() as f64;
    let mse = za.dist_l2(&zw)?.powi(2) / d;
    let retained = match score {
        ScoreModel::Mixture(m) => {
            Some(m.posterior_argmax(&za, sched)? == m.posterior_argmax(&zw, sched)?)
        }
        ScoreModel::Gaussian(_) => None,
    };
    Ok((mse, retained))
}
