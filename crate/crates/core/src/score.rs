//! Closed-form noise predictors ε_θ(z, t) for analytically tractable data,
//! with exact or estimated per-step Lipschitz constants.
//!
//! For data z₀ ~ N(μ, s²I) the marginal at step t is
//! N(√ᾱ_t μ, (ᾱ_t s² + 1 − ᾱ_t) I), so the exact predictor is affine:
//!
//! ```text
//! ε_θ(z, t) = √(1 − ᾱ_t) (z − √ᾱ_t μ) / v_t,   v_t = ᾱ_t s² + 1 − ᾱ_t
//! ```
//!
//! A K-component isotropic mixture keeps the marginal closed-form while
//! making ε_θ nonlinear: the predictor is the responsibility-weighted
//! combination of per-component affine predictors, evaluated with
//! log-sum-exp stabilization.
//!
//! Both models accept t = 0 (where ᾱ₀ = 1 forces ε_θ ≡ 0); the inversion
//! recursion needs that endpoint.

use crate::error::{Error, Result};
use crate::latent::{Latent, LatentShape};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;

/// Safety factor applied on top of the largest observed finite-difference
/// ratio when estimating Lipschitz constants empirically.
pub const EMPIRICAL_LIPSCHITZ_INFLATION: f64 = 1.1;

/// Data law: independent N(μ_i, s²) per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    mean: Latent,
    scale: f64,
}

impl GaussianScore {
    pub fn new(mean: Latent, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidRange(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { mean, scale })
    }

    /// Zero-mean unit-scale model; its predictor is the linear map
    /// ε_θ(z, t) = √(1 − ᾱ_t) · z.
    pub fn unit(shape: LatentShape) -> Self {
        Self { mean: Latent::zeros(shape), scale: 1.0 }
    }

    pub fn mean(&self) -> &Latent {
        &self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Marginal variance factor v_t = ᾱ_t s² + 1 − ᾱ_t.
    pub fn variance_at(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        let ab = sched.alpha_bar(t);
        ab * self.scale * self.scale + (1.0 - ab)
    }

    /// Affine slope of ε_θ(·, t): √(1 − ᾱ_t) / v_t. Also the exact
    /// Lipschitz constant L_t.
    pub fn slope_at(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        (1.0 - sched.alpha_bar(t)).sqrt() / self.variance_at(t, sched)
    }

    fn eps_theta(&self, z: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Latent> {
        z.same_shape(&self.mean)?;
        let ab = sched.alpha_bar(t);
        let slope = self.slope_at(t, sched);
        Latent::lin_comb(slope, z, -slope * ab.sqrt(), &self.mean)
    }
}

/// Data law: Σ_k w_k N(μ_k, s²I) with a shared isotropic component scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureScore {
    weights: Vec<f64>,
    means: Vec<Latent>,
    scale: f64,
}

impl MixtureScore {
    pub fn new(weights: Vec<f64>, means: Vec<Latent>, scale: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::InvalidRange(format!(
                "need matching non-empty weights/means, got {}/{}",
                weights.len(),
                means.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidRange("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRange(format!("weights sum to {total}, expected 1")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidRange(format!("scale must be positive, got {scale}")));
        }
        let shape = means[0].shape();
        for m in &means[1..] {
            m.same_shape(&means[0])?;
        }
        let _ = shape;
        Ok(Self { weights, means, scale })
    }

    /// Uniform-weight mixture with means drawn once from a seeded stream;
    /// component means come out with ‖μ_k‖ ≈ √d.
    pub fn seeded(shape: LatentShape, k: usize, scale: f64, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidRange("mixture needs at least one component".into()));
        }
        let mut stream = RngStream::new(seed, "mixture-means");
        let means = (0..k).map(|_| stream.normal_latent(shape)).collect();
        Self::new(vec![1.0 / k as f64; k], means, scale)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Latent] {
        &self.means
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn variance_at(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        let ab = sched.alpha_bar(t);
        ab * self.scale * self.scale + (1.0 - ab)
    }

    /// Posterior responsibilities r_k(z, t), a valid simplex at every point.
    pub fn responsibilities(&self, z: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        z.same_shape(&self.means[0])?;
        let ab_sqrt = sched.alpha_bar(t).sqrt();
        let v = self.variance_at(t, sched);
        let mut logits = Vec::with_capacity(self.components());
        for (w, mu) in self.weights.iter().zip(&self.means) {
            let mut sq = 0.0;
            for (zi, mi) in z.as_slice().iter().zip(mu.as_slice()) {
                let dz = zi - ab_sqrt * mi;
                sq += dz * dz;
            }
            logits.push(w.ln() - 0.5 * sq / v);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = resp.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::NonFinite("mixture responsibilities".into()));
        }
        for r in &mut resp {
            *r /= total;
        }
        Ok(resp)
    }

    /// Component with the largest posterior at t = 0 (clean latents).
    pub fn posterior_argmax(&self, z: &Latent, sched: &NoiseSchedule) -> Result<usize> {
        let resp = self.responsibilities(z, 0, sched)?;
        Ok(resp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap())
    }

    fn eps_theta(&self, z: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Latent> {
        let resp = self.responsibilities(z, t, sched)?;
        let ab_sqrt = sched.alpha_bar(t).sqrt();
        let v = self.variance_at(t, sched);
        let slope = (1.0 - sched.alpha_bar(t)).sqrt() / v;
        // eps = slope * (z - sqrt(ab) * sum_k r_k mu_k)
        let mut posterior_mean = Latent::zeros(z.shape());
        for (r, mu) in resp.iter().zip(&self.means) {
            posterior_mean.add_scaled(*r, mu)?;
        }
        Latent::lin_comb(slope, z, -slope * ab_sqrt, &posterior_mean)
    }
}

/// Per-step Lipschitz constants of ε_θ(·, t) for t = 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzProfile {
    l: Vec<f64>,
    method: LipschitzMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LipschitzMethod {
    Exact,
    Empirical { trials: usize },
}

impl LipschitzProfile {
    pub fn from_values(l: Vec<f64>, method: LipschitzMethod) -> Self {
        Self { l, method }
    }

    /// L_t, with L_0 = 0 (the predictor vanishes identically at t = 0).
    pub fn at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.l[t - 1]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.l
    }

    pub fn method(&self) -> LipschitzMethod {
        self.method
    }

    /// Scaled copy; `factor < 1` deliberately under-reports the constants
    /// (the negative control for the stability checks).
    pub fn scaled(&self, factor: f64) -> Self {
        Self { l: self.l.iter().map(|v| v * factor).collect(), method: self.method }
    }
}

/// The closed-form noise predictor, exact-score side of every pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    Gaussian(GaussianScore),
    Mixture(MixtureScore),
}

impl ScoreModel {
    pub fn shape(&self) -> LatentShape {
        match self {
            ScoreModel::Gaussian(g) => g.mean().shape(),
            ScoreModel::Mixture(m) => m.means()[0].shape(),
        }
    }

    /// ε_θ(z, t) for t = 0..=T.
    pub fn eps_theta(&self, z: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Latent> {
        if t > sched.steps() {
            return Err(Error::TimestepOutOfRange { t, min: 0, max: sched.steps() });
        }
        match self {
            ScoreModel::Gaussian(g) => g.eps_theta(z, t, sched),
            ScoreModel::Mixture(m) => m.eps_theta(z, t, sched),
        }
    }

    /// Marginal variance factor v_t (shared by both model kinds).
    pub fn variance_at(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        match self {
            ScoreModel::Gaussian(g) => g.variance_at(t, sched),
            ScoreModel::Mixture(m) => m.variance_at(t, sched),
        }
    }

    /// Exact profile for the Gaussian model; empirical sup over sampled
    /// pairs (inflated by 1.1) for the mixture.
    pub fn lipschitz_profile(
        &self,
        sched: &NoiseSchedule,
        trials: usize,
        rng: &mut RngStream,
    ) -> Result<LipschitzProfile> {
        match self {
            ScoreModel::Gaussian(g) => {
                let l = (1..=sched.steps()).map(|t| g.slope_at(t, sched)).collect();
                Ok(LipschitzProfile::from_values(l, LipschitzMethod::Exact))
            }
            ScoreModel::Mixture(_) => {
                if trials < 1 {
                    return Err(Error::InsufficientSamples { needed: 1, got: trials });
                }
                let mut l = Vec::with_capacity(sched.steps());
                for t in 1..=sched.steps() {
                    let mut max_ratio: f64 = 0.0;
                    for _ in 0..trials {
                        let (u, v) = self.probe_pair(t, sched, rng);
                        let ratio = self.difference_ratio(&u, &v, t, sched)?;
                        max_ratio = max_ratio.max(ratio);
                    }
                    l.push(max_ratio * EMPIRICAL_LIPSCHITZ_INFLATION);
                }
                Ok(LipschitzProfile::from_values(l, LipschitzMethod::Empirical { trials }))
            }
        }
    }

    /// ‖ε_θ(u,t) − ε_θ(v,t)‖ / ‖u − v‖ for one pair.
    pub fn difference_ratio(
        &self,
        u: &Latent,
        v: &Latent,
        t: usize,
        sched: &NoiseSchedule,
    ) -> Result<f64> {
        let du = self.eps_theta(u, t, sched)?;
        let dv = self.eps_theta(v, t, sched)?;
        let denom = u.dist_l2(v)?;
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok(du.dist_l2(&dv)? / denom)
    }

    /// A probe pair for finite-difference ratio estimation at step t.
    ///
    /// Points concentrate where the mixture score curves hardest: near the
    /// scaled component means and near midpoints between component pairs.
    /// Midpoint pairs separate along the inter-component axis half the
    /// time (a random direction carries only ~1/√d of the boundary
    /// curvature), and separations span several decades so both local
    /// slope and global chords are probed.
    pub fn probe_pair(&self, t: usize, sched: &NoiseSchedule, rng: &mut RngStream) -> (Latent, Latent) {
        let shape = self.shape();
        let ab_sqrt = sched.alpha_bar(t).sqrt();
        let v_sqrt = self.variance_at(t, sched).sqrt();
        let mut direction: Option<Latent> = None;
        let base = match self {
            ScoreModel::Mixture(m) if m.components() > 1 => {
                let k = m.components();
                match rng.uniform_index(3) {
                    0 => {
                        // near a scaled component mean
                        let i = rng.uniform_index(k);
                        let mut p = m.means()[i].scaled(ab_sqrt);
                        p.add_scaled(0.3 * v_sqrt, &rng.normal_latent(shape)).unwrap();
                        p
                    }
                    1 => {
                        // near a midpoint between two components
                        let i = rng.uniform_index(k);
                        let mut j = rng.uniform_index(k);
                        if j == i {
                            j = (j + 1) % k;
                        }
                        let mut p = Latent::lin_comb(
                            0.5 * ab_sqrt,
                            &m.means()[i],
                            0.5 * ab_sqrt,
                            &m.means()[j],
                        )
                        .unwrap();
                        p.add_scaled(0.2 * v_sqrt, &rng.normal_latent(shape)).unwrap();
                        if rng.uniform_index(2) == 0 {
                            let axis = m.means()[i].sub(&m.means()[j]).unwrap();
                            let norm = axis.norm_l2();
                            if norm > 0.0 {
                                direction = Some(axis.scaled(1.0 / norm));
                            }
                        }
                        p
                    }
                    _ => rng.normal_latent(shape).scaled(v_sqrt),
                }
            }
            _ => rng.normal_latent(shape).scaled(v_sqrt),
        };
        let step = direction.unwrap_or_else(|| {
            let g = rng.normal_latent(shape);
            let norm = g.norm_l2();
            g.scaled(1.0 / norm.max(f64::MIN_POSITIVE))
        });
        let magnitudes = [1e-4, 1e-2, 0.3, 1.0];
        let delta = magnitudes[rng.uniform_index(magnitudes.len())] * v_sqrt;
        let mut other = base.clone();
        other.add_scaled(delta, &step).unwrap();
        (base, other)
    }
}
