//! Trajectory-stability quantities and their empirical checks.
//!
//! Per step t of the reverse chain, with noise scale σ_t and denoiser
//! Lipschitz constant L_t:
//!
//! ```text
//! A_t = √(ᾱ_{t−1}/ᾱ_t)
//! B_t = √(1−ᾱ_{t−1}−σ_t²) − √(ᾱ_{t−1}(1−ᾱ_t)/ᾱ_t)
//! ρ_t = A_t + |B_t| L_t          (one-step stability factor)
//! C_n = Π_{s≤n} ρ_s              (multi-step factor)
//! Δ_n = L_Q² C_n² ᾱ_n E‖z₀‖²     (decoupling bound at depth n)
//! ```
//!
//! Under shared-noise coupling the per-step deflections cancel, so the
//! one-step and multi-step contraction inequalities are pathwise facts with
//! no sampling error; the checks here verify them on random pairs and
//! report violations rather than panicking, so a full sweep always
//! completes.

use crate::attack::CoupledPair;
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::rng::RngStream;
use crate::sampler::ancestral_step;
use crate::schedule::{NoiseSchedule, SigmaSchedule};
use crate::score::{LipschitzProfile, ScoreModel};

/// Relative slack absorbing floating-point rounding in the pathwise
/// comparisons; far below any real violation.
const FP_SLACK: f64 = 1e-9;

/// Every bound quantity of the stability analysis, as computable values.
#[derive(Debug, Clone)]
pub struct TheoryBound {
    /// A_t for t = 1..=T (index t−1).
    pub a: Vec<f64>,
    /// B_t for t = 1..=T.
    pub b: Vec<f64>,
    /// ρ_t for t = 1..=T.
    pub rho: Vec<f64>,
    /// C_n for n = 1..=T.
    pub c: Vec<f64>,
    /// Verification-map Lipschitz constant.
    pub l_q: f64,
    /// Δ_n for n = 1..=T.
    pub delta: Vec<f64>,
    /// The E‖z₀‖² estimate that entered Δ.
    pub e_z0_sq: f64,
}

impl TheoryBound {
    pub fn rho_at(&self, t: usize) -> f64 {
        self.rho[t - 1]
    }

    pub fn c_at(&self, n: usize) -> f64 {
        self.c[n - 1]
    }

    pub fn delta_at(&self, n: usize) -> f64 {
        self.delta[n - 1]
    }

    /// Largest relative error when recomputing every field from its
    /// defining formula.
    pub fn recompute_error(
        &self,
        sched: &NoiseSchedule,
        sigma: &SigmaSchedule,
        lip: &LipschitzProfile,
    ) -> f64 {
        let fresh = compute_bounds(sched, sigma, lip, self.l_q, self.e_z0_sq)
            .expect("recompute on validated inputs");
        let mut worst: f64 = 0.0;
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
        for t in 0..sched.steps() {
            worst = worst.max(rel(self.a[t], fresh.a[t]));
            worst = worst.max(rel(self.b[t], fresh.b[t]));
            worst = worst.max(rel(self.rho[t], fresh.rho[t]));
            worst = worst.max(rel(self.c[t], fresh.c[t]));
            worst = worst.max(rel(self.delta[t], fresh.delta[t]));
        }
        worst
    }
}

/// Fill every bound field from the schedule, noise scales, Lipschitz
/// profile, pipeline constant and second-moment estimate.
pub fn compute_bounds(
    sched: &NoiseSchedule,
    sigma: &SigmaSchedule,
    lip: &LipschitzProfile,
    l_q: f64,
    e_z0_sq: f64,
) -> Result<TheoryBound> {
    sigma.validate_against(sched)?;
    if !(l_q.is_finite() && l_q > 0.0) {
        return Err(Error::InvalidRange(format!("l_q must be positive, got {l_q}")));
    }
    if !(e_z0_sq.is_finite() && e_z0_sq >= 0.0) {
        return Err(Error::InvalidRange(format!("e_z0_sq must be non-negative, got {e_z0_sq}")));
    }
    let t_steps = sched.steps();
    let mut a = Vec::with_capacity(t_steps);
    let mut b = Vec::with_capacity(t_steps);
    let mut rho = Vec::with_capacity(t_steps);
    let mut c = Vec::with_capacity(t_steps);
    let mut delta = Vec::with_capacity(t_steps);
    let mut c_acc = 1.0;
    for t in 1..=t_steps {
        let ab_prev = sched.alpha_bar(t - 1);
        let ab = sched.alpha_bar(t);
        let s = sigma.sigma(t);
        let a_t = (ab_prev / ab).sqrt();
        let b_t = (1.0 - ab_prev - s * s).max(0.0).sqrt() - (ab_prev * (1.0 - ab) / ab).sqrt();
        let rho_t = a_t + b_t.abs() * lip.at(t);
        c_acc *= rho_t;
        a.push(a_t);
        b.push(b_t);
        rho.push(rho_t);
        c.push(c_acc);
        delta.push(l_q * l_q * c_acc * c_acc * ab * e_z0_sq);
    }
    Ok(TheoryBound { a, b, rho, c, l_q, delta, e_z0_sq })
}

/// Upper bound on the Lipschitz constant of `invert ∘ encode ∘ decode` at
/// the given depth: the codec round trip contributes factor 1 and the
/// inversion step from t−1 to t is (Ã_t + |B̃_t| L_{t−1})-Lipschitz with
/// Ã_t = √(ᾱ_t/ᾱ_{t−1}), B̃_t = √(1−ᾱ_t) − √(ᾱ_t(1−ᾱ_{t−1})/ᾱ_{t−1}).
pub fn inversion_lipschitz_bound(sched: &NoiseSchedule, lip: &LipschitzProfile, depth: usize) -> f64 {
    let mut acc = 1.0;
    for t in 1..=depth {
        let ab_prev = sched.alpha_bar(t - 1);
        let ab = sched.alpha_bar(t);
        let a_t = (ab / ab_prev).sqrt();
        let b_t = (1.0 - ab).sqrt() - (ab * (1.0 - ab_prev) / ab_prev).sqrt();
        acc *= a_t + b_t.abs() * lip.at(t - 1);
    }
    acc
}

/// Outcome of a one-step or multi-step contraction check.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// Step index (one-step) or chain length (multi-step).
    pub index: usize,
    pub bound: f64,
    pub max_ratio: f64,
    pub pairs: usize,
    pub violations: usize,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Verify ‖step(u) − step(v)‖ ≤ ρ_t ‖u − v‖ on random pairs under a shared
/// deflection draw.
pub fn check_one_step(
    score: &ScoreModel,
    sched: &NoiseSchedule,
    sigma: &SigmaSchedule,
    bound: &TheoryBound,
    t: usize,
    pairs: usize,
    rng: &mut RngStream,
) -> Result<StabilityReport> {
    sched.check_timestep(t, 1)?;
    let rho = bound.rho_at(t);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..pairs {
        let (u, v) = score.probe_pair(t, sched, rng);
        let xi = rng.normal_latent(u.shape());
        let su = ancestral_step(&u, t, &xi, sigma.sigma(t), score, sched)?;
        let sv = ancestral_step(&v, t, &xi, sigma.sigma(t), score, sched)?;
        let denom = u.dist_l2(&v)?;
        if denom == 0.0 {
            continue;
        }
        let ratio = su.dist_l2(&sv)? / denom;
        if ratio > rho * (1.0 + FP_SLACK) {
            violations += 1;
        }
        max_ratio = max_ratio.max(ratio);
    }
    Ok(StabilityReport { index: t, bound: rho, max_ratio, pairs, violations })
}

/// Verify ‖F_n(u) − F_n(v)‖ ≤ C_n ‖u − v‖ for the n-step reverse map under
/// shared deflections ξ_{1:n}.
pub fn check_multistep(
    score: &ScoreModel,
    sched: &NoiseSchedule,
    sigma: &SigmaSchedule,
    bound: &TheoryBound,
    n: usize,
    pairs: usize,
    rng: &mut RngStream,
) -> Result<StabilityReport> {
    sched.check_timestep(n, 1)?;
    let c_n = bound.c_at(n);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..pairs {
        let (u, v) = score.probe_pair(n, sched, rng);
        let denom = u.dist_l2(&v)?;
        if denom == 0.0 {
            continue;
        }
        let mut zu = u;
        let mut zv = v;
        for t in (1..=n).rev() {
            let xi = rng.normal_latent(zu.shape());
            zu = ancestral_step(&zu, t, &xi, sigma.sigma(t), score, sched)?;
            zv = ancestral_step(&zv, t, &xi, sigma.sigma(t), score, sched)?;
        }
        let ratio = zu.dist_l2(&zv)? / denom;
        if ratio > c_n * (1.0 + FP_SLACK) {
            violations += 1;
        }
        max_ratio = max_ratio.max(ratio);
    }
    Ok(StabilityReport { index: n, bound: c_n, max_ratio, pairs, violations })
}

/// Outcome of the coupled decoupling check at one depth.
#[derive(Debug, Clone)]
pub struct DecouplingReport {
    pub t_lambda: usize,
    pub trials: usize,
    /// Trial indices violating the pathwise bound
    /// ‖ε̂ₐ − ε̃‖ ≤ L_Q C √ᾱ ‖z₀‖.
    pub pathwise_violations: Vec<usize>,
    /// max over trials of gap / bound (0 when every bound side is 0).
    pub max_pathwise_ratio: f64,
    /// Empirical E‖ε̂ₐ − ε̃‖².
    pub mean_sq_gap: f64,
    /// Δ at this depth computed from the same trials' E‖z₀‖².
    pub delta: f64,
}

impl DecouplingReport {
    pub fn pathwise_passed(&self) -> bool {
        self.pathwise_violations.is_empty()
    }

    pub fn mean_passed(&self) -> bool {
        self.mean_sq_gap <= self.delta * (1.0 + FP_SLACK)
    }
}

/// Check the pathwise and mean-square decoupling inequalities on recorded
/// coupled pairs. Δ is recomputed with the trials' own ‖z₀‖² average so the
/// reported bound is self-consistent.
pub fn check_decoupling(
    pairs: &[CoupledPair],
    bound: &TheoryBound,
    t_lambda: usize,
    sched: &NoiseSchedule,
) -> Result<DecouplingReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyRecordSet("check_decoupling".into()));
    }
    let c = bound.c_at(t_lambda);
    let ab = sched.alpha_bar(t_lambda);
    let per_trial_factor = bound.l_q * c * ab.sqrt();
    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut sq_sum = 0.0;
    let mut z0_sq_sum = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let gap = p.eps_hat_a.dist_l2(&p.eps_tilde)?;
        let limit = per_trial_factor * p.z0_norm;
        sq_sum += gap * gap;
        z0_sq_sum += p.z0_norm * p.z0_norm;
        if gap > limit * (1.0 + FP_SLACK) + f64::MIN_POSITIVE {
            violations.push(i);
        }
        if limit > 0.0 {
            max_ratio = max_ratio.max(gap / limit);
        }
    }
    let n = pairs.len() as f64;
    let e_z0_sq = z0_sq_sum / n;
    let delta = bound.l_q * bound.l_q * c * c * ab * e_z0_sq;
    Ok(DecouplingReport {
        t_lambda,
        trials: pairs.len(),
        pathwise_violations: violations,
        max_pathwise_ratio: max_ratio,
        mean_sq_gap: sq_sum / n,
        delta,
    })
}

/// Per-coordinate correlation summary between two paired samples.
#[derive(Debug, Clone)]
pub struct IndependenceReport {
    pub samples: usize,
    /// The 3/√N null band.
    pub band: f64,
    pub max_abs_corr: f64,
    /// Fraction of coordinates with |corr| above the band.
    pub exceed_fraction: f64,
}

/// Sample correlation per coordinate between ε̂ and ε^w across trials.
pub fn check_independence(eps_hat: &[Latent], eps_w: &[Latent]) -> Result<IndependenceReport> {
    let n = eps_hat.len();
    if n < 2 || n != eps_w.len() {
        return Err(Error::InsufficientSamples { needed: 2, got: n.min(eps_w.len()) });
    }
    let d = eps_hat[0].dim();
    for (a, b) in eps_hat.iter().zip(eps_w) {
        a.same_shape(&eps_hat[0])?;
        b.same_shape(&eps_hat[0])?;
    }
    let nf = n as f64;
    let mut max_abs: f64 = 0.0;
    let mut exceed = 0usize;
    let band = 3.0 / nf.sqrt();
    for j in 0..d {
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (a, b) in eps_hat.iter().zip(eps_w) {
            let x = a.as_slice()[j];
            let y = b.as_slice()[j];
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sxx / nf - (sx / nf) * (sx / nf);
        let vy = syy / nf - (sy / nf) * (sy / nf);
        let corr = if vx > 0.0 && vy > 0.0 { cov / (vx * vy).sqrt() } else { 0.0 };
        if corr.abs() > band {
            exceed += 1;
        }
        max_abs = max_abs.max(corr.abs());
    }
    Ok(IndependenceReport {
        samples: n,
        band,
        max_abs_corr: max_abs,
        exceed_fraction: exceed as f64 / d as f64,
    })
}

/// Terminal-depth distance summary against the independent-draw baseline.
#[derive(Debug, Clone)]
pub struct TerminalReport {
    pub samples: usize,
    /// E‖ε̂ − ε^w‖² / d.
    pub mse_per_coord: f64,
    /// Mean per-element L1 distance (2/√π for independent normals).
    pub l1_mean: f64,
    /// Mean per-element L2 distance (√2 for independent normals).
    pub l2_mean: f64,
    /// Δ_T entering the analytic slack.
    pub delta_t: f64,
    /// (Δ_T + 2√(2d Δ_T)) / d — the tolerance around 2 implied by the
    /// decoupling bound when both noises are standard normal.
    pub analytic_tol: f64,
    pub passed: bool,
}

/// Check |E‖ε̂_T − ε^w‖² − 2d| against the analytic slack and report the
/// per-element distances.
pub fn check_terminal_baseline(
    eps_hat: &[Latent],
    eps_w: &[Latent],
    delta_t: f64,
) -> Result<TerminalReport> {
    let n = eps_hat.len();
    if n == 0 || n != eps_w.len() {
        return Err(Error::InsufficientSamples { needed: 1, got: n.min(eps_w.len()) });
    }
    let d = eps_hat[0].dim() as f64;
    let mut sq = 0.0;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (a, b) in eps_hat.iter().zip(eps_w) {
        let (d1, d2) = crate::metrics::noise_distance(a, b)?;
        l1 += d1;
        l2 += d2;
        sq += d2 * d2 * d;
    }
    let nf = n as f64;
    let mse_per_coord = sq / nf / d;
    let analytic_tol = (delta_t + 2.0 * (2.0 * d * delta_t).sqrt()) / d;
    let passed = (mse_per_coord - 2.0).abs() <= analytic_tol;
    Ok(TerminalReport {
        samples: n,
        mse_per_coord,
        l1_mean: l1 / nf,
        l2_mean: l2 / nf,
        delta_t,
        analytic_tol,
        passed,
    })
}
