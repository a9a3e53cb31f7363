//! Pathwise stability and decoupling checks on both score regimes, plus
//! the sabotage control proving the checks can fail.

use shift_lab_core::attack::{coupled_pair, AttackConfig, CoupledPair};
use shift_lab_core::theory::{
    check_decoupling, check_independence, check_multistep, check_one_step, compute_bounds,
    inversion_lipschitz_bound, TheoryBound,
};
use shift_lab_core::watermark::{
    generate_watermarked, recover_noise, Message, SchemeInstance, SignMark, ToyCodec,
};
use shift_lab_core::{
    GaussianScore, Latent, LatentShape, LipschitzProfile, MixtureScore, NoiseSchedule, RngStream,
    ScoreModel, SigmaSchedule,
};

const T: usize = 100;

fn shape() -> LatentShape {
    LatentShape::new(1, 16, 16)
}

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(T, 1e-3, 0.2).unwrap()
}

fn unit_score() -> ScoreModel {
    ScoreModel::Gaussian(GaussianScore::unit(shape()))
}

fn mixture_score() -> ScoreModel {
    ScoreModel::Mixture(MixtureScore::seeded(shape(), 4, 1.0, 12021).unwrap())
}

fn bounds_for(
    score: &ScoreModel,
    sched: &NoiseSchedule,
    sigma: &SigmaSchedule,
    lip_trials: usize,
    lip_scale: f64,
) -> (TheoryBound, LipschitzProfile) {
    let mut rng = RngStream::new(4242, "lipschitz-profile");
    let lip = score
        .lipschitz_profile(sched, lip_trials, &mut rng)
        .unwrap()
        .scaled(lip_scale);
    let l_q = inversion_lipschitz_bound(sched, &lip, sched.steps());
    let bound = compute_bounds(sched, sigma, &lip, l_q, shape().dim() as f64).unwrap();
    (bound, lip)
}

fn coupled_trials(
    score: &ScoreModel,
    sched: &NoiseSchedule,
    lambda: f64,
    n: usize,
    seed_base: u64,
) -> Vec<CoupledPair> {
    let codec = ToyCodec::identity();
    let params = SignMark::default();
    let inst = SchemeInstance::sign(params, 9001, Message::seeded(9001, params.m_len)).unwrap();
    (0..n)
        .map(|i| {
            let mut gen = RngStream::new(seed_base + i as u64, "gen-noise");
            let eps_w = inst.embed(shape(), &mut gen).unwrap();
            let x_w = generate_watermarked(&eps_w, score, sched, &codec).unwrap();
            let cfg = AttackConfig::new(lambda, 1.0, seed_base + i as u64).unwrap();
            coupled_pair(&x_w, &cfg, &codec, score, sched, sched.steps()).unwrap()
        })
        .collect()
}

#[test]
fn linear_regime_one_step_bound_holds_at_every_timestep() {
    let sched = sched();
    let sigma = SigmaSchedule::ddim_eta(&sched, 1.0).unwrap();
    let score = unit_score();
    let (bound, _) = bounds_for(&score, &sched, &sigma, 1, 1.0);
    let mut rng = RngStream::new(7, "one-step-pairs");
    for t in 1..=T {
        let report = check_one_step(&score, &sched, &sigma, &bound, t, 200, &mut rng).unwrap();
        assert_eq!(report.violations, 0, "t={t}: max {} vs {}", report.max_ratio, report.bound);
    }
}

#[test]
fn linear_regime_multistep_bound_holds() {
    let sched = sched();
    let sigma = SigmaSchedule::ddim_eta(&sched, 1.0).unwrap();
    let score = unit_score();
    let (bound, _) = bounds_for(&score, &sched, &sigma, 1, 1.0);
    let mut rng = RngStream::new(8, "multi-pairs");
    for n in [1, 25, 50, 100] {
        let report = check_multistep(&score, &sched, &sigma, &bound, n, 100, &mut rng).unwrap();
        assert_eq!(report.violations, 0, "n={n}");
        assert!(report.max_ratio <= report.bound * (1.0 + 1e-9));
    }
}

#[test]
fn linear_regime_decoupling_is_pathwise_clean_across_depths() {
    let sched = sched();
    let sigma = SigmaSchedule::ddim_eta(&sched, 1.0).unwrap();
    let score = unit_score();
    let (bound, _) = bounds_for(&score, &sched, &sigma, 1, 1.0);
    for (lambda, seed) in [(0.25, 100_000u64), (0.5, 200_000), (1.0, 300_000)] {
        let pairs = coupled_trials(&score, &sched, lambda, 200, seed);
        let cfg = AttackConfig::new(lambda, 1.0, 0).unwrap();
        let t_lambda = cfg.t_lambda(T);
        let report = check_decoupling(&pairs, &bound, t_lambda, &sched).unwrap();
        assert!(
            report.pathwise_violations.is_empty(),
            "lambda={lambda}: violations at {:?}",
            report.pathwise_violations
        );
        assert!(report.mean_passed(), "lambda={lambda}: {} vs {}", report.mean_sq_gap, report.delta);
    }
}

#[test]
fn mixture_regime_bounds_hold_with_inflated_empirical_constants() {
    let sched = sched();
    let sigma = SigmaSchedule::ddim_eta(&sched, 1.0).unwrap();
    let score = mixture_score();
    let (bound, _) = bounds_for(&score, &sched, &sigma, 1500, 1.0);
    let mut rng = RngStream::new(9, "mixture-pairs");
    for t in [1, 25, 50, 75, 100] {
        let report = check_one_step(&score, &sched, &sigma, &bound, t, 600, &mut rng).unwrap();
        assert_eq!(
            report.violations, 0,
            "t={t}: max {} vs bound {}",
            report.max_ratio, report.bound
        );
    }
    let report = check_multistep(&score, &sched, &sigma, &bound, 50, 100, &mut rng).unwrap();
    assert_eq!(report.violations, 0);

    let pairs = coupled_trials(&score, &sched, 0.5, 100, 400_000);
    let decoupling = check_decoupling(&pairs, &bound, 50, &sched).unwrap();
    assert!(decoupling.pathwise_violations.is_empty());
    assert!(decoupling.mean_passed());
}

#[test]
fn deflated_lipschitz_negative_control_produces_violations() {
    // Halving the empirical constants must break the one-step bound where
    // the mixture boundary curvature drives the true ratio above
    // A_t + 0.5 |B_t| L_t; proves the checks are able to fail.
    let sched = sched();
    let sigma = SigmaSchedule::ddim_eta(&sched, 1.0).unwrap();
    let score = mixture_score();
    let (bound, _) = bounds_for(&score, &sched, &sigma, 1500, 0.5);
    let mut rng = RngStream::new(10, "sabotage-pairs");
    let mut total_violations = 0;
    for t in [40, 50, 60, 70, 80] {
        let report = check_one_step(&score, &sched, &sigma, &bound, t, 600, &mut rng).unwrap();
        total_violations += report.violations;
    }
    assert!(total_violations >= 1, "deflated control failed to trip any check");
}

#[test]
fn lipschitz_validity_fresh_pairs_never_exceed_the_profile() {
    // 10^4 fresh finite-difference ratios against the inflated empirical
    // constant at a boundary-curvature-heavy step.
    let sched = sched();
    let score = mixture_score();
    let mut prof_rng = RngStream::new(11, "lip-profile");
    let lip = score.lipschitz_profile(&sched, 30_000, &mut prof_rng).unwrap();
    let t = 60;
    let mut rng = RngStream::new(12, "lip-fresh");
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (u, v) = score.probe_pair(t, &sched, &mut rng);
        let ratio = score.difference_ratio(&u, &v, t, &sched).unwrap();
        worst = worst.max(ratio);
    }
    assert!(worst <= lip.at(t), "fresh ratio {worst} exceeds profile {}", lip.at(t));
}

#[test]
fn exact_profile_is_never_exceeded_by_finite_differences() {
    let sched = sched();
    let score = unit_score();
    let mut rng = RngStream::new(13, "lip-exact");
    let lip = score.lipschitz_profile(&sched, 1, &mut rng).unwrap();
    for t in [1, 30, 60, 100] {
        let mut worst: f64 = 0.0;
        for _ in 0..2500 {
            let (u, v) = score.probe_pair(t, &sched, &mut rng);
            worst = worst.max(score.difference_ratio(&u, &v, t, &sched).unwrap());
        }
        // 1e-10 slack: cancellation in the finite-difference quotient at
        // the smallest separations costs ~1e-12 relative
        assert!(
            worst <= lip.at(t) * (1.0 + 1e-10),
            "t={t}: {worst} vs exact {}",
            lip.at(t)
        );
    }
}

#[test]
fn independence_proxy_with_positive_and_negative_controls() {
    let sched = sched();
    let score = unit_score();
    let codec = ToyCodec::identity();
    let params = SignMark::default();
    let inst = SchemeInstance::sign(params, 31337, Message::seeded(31337, params.m_len)).unwrap();

    let n = 300;
    let mut eps_ws = Vec::with_capacity(n);
    let mut eps_hats_attacked = Vec::with_capacity(n);
    let mut eps_hats_clean = Vec::with_capacity(n);
    for i in 0..n {
        let mut gen = RngStream::new(900_000 + i as u64, "gen-noise");
        let eps_w = inst.embed(shape(), &mut gen).unwrap();
        let x_w = generate_watermarked(&eps_w, &score, &sched, &codec).unwrap();
        // lambda = 0 positive control: no attack, just the verifier path
        eps_hats_clean.push(recover_noise(&x_w, &codec, &score, &sched, T).unwrap());
        let cfg = AttackConfig::new(1.0, 1.0, 900_000 + i as u64).unwrap();
        let outcome = shift_lab_core::attack::shift_attack(&x_w, &cfg, &codec, &score, &sched).unwrap();
        eps_hats_attacked.push(recover_noise(&outcome.x_a, &codec, &score, &sched, T).unwrap());
        eps_ws.push(eps_w);
    }

    // positive control: the un-attacked recovered noise is the watermark
    let clean = check_independence(&eps_hats_clean, &eps_ws).unwrap();
    assert!(clean.max_abs_corr > 0.5, "positive control corr {}", clean.max_abs_corr);

    // attacked: consistent with independence at the 3/sqrt(N) band
    let attacked = check_independence(&eps_hats_attacked, &eps_ws).unwrap();
    assert!(
        attacked.exceed_fraction <= 0.01,
        "exceedance {} above 1%",
        attacked.exceed_fraction
    );
    assert!(attacked.max_abs_corr < 4.0 / (n as f64).sqrt());

    // shuffled pairing: same behavior by construction
    let mut shuffled = eps_ws.clone();
    shuffled.rotate_left(1);
    let control = check_independence(&eps_hats_attacked, &shuffled).unwrap();
    assert!(
        (attacked.exceed_fraction - control.exceed_fraction).abs() <= 0.005 + 1e-12,
        "attacked {} vs shuffled {}",
        attacked.exceed_fraction,
        control.exceed_fraction
    );
}

#[test]
fn delta_competing_effects_are_monotone_for_the_linear_score() {
    // alpha_bar falls and C grows along the chain; both monotonicities
    // back the erasure-vs-accumulation reading of the bound.
    let sched = sched();
    let sigma = SigmaSchedule::ddim_eta(&sched, 1.0).unwrap();
    let score = unit_score();
    let (bound, _) = bounds_for(&score, &sched, &sigma, 1, 1.0);
    for t in 2..=T {
        assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
        assert!(bound.c_at(t) >= bound.c_at(t - 1), "C not monotone at {t}");
    }
}

#[test]
fn zero_source_population_gives_zero_gap_and_zero_bound() {
    let sched = sched();
    let score = unit_score();
    let codec = ToyCodec::identity();
    let sigma = SigmaSchedule::ddim_eta(&sched, 1.0).unwrap();
    let (bound, _) = bounds_for(&score, &sched, &sigma, 1, 1.0);
    let pairs: Vec<CoupledPair> = (0..20)
        .map(|i| {
            let x = shift_lab_core::Image(Latent::zeros(shape()));
            let cfg = AttackConfig::new(0.5, 1.0, i).unwrap();
            coupled_pair(&x, &cfg, &codec, &score, &sched, T).unwrap()
        })
        .collect();
    let report = check_decoupling(&pairs, &bound, 50, &sched).unwrap();
    assert_eq!(report.mean_sq_gap, 0.0);
    assert_eq!(report.delta, 0.0);
    assert!(report.pathwise_violations.is_empty());
}
