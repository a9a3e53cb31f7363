//! Flat `section.key = value` experiment specs.
//!
//! The format is plain text: one assignment per line, `#` starts a
//! comment, lists are comma-separated. Unknown or duplicate keys are
//! errors (with line numbers), so typos fail loudly. Every random draw of
//! a run derives from `master_seed` plus a structured stream tag
//! (`{scheme}/{lambda_index}/{trial}/{purpose}` for sweep trials,
//! `{scheme}/null-calib/{i}` for calibration), so two runs of the same
//! spec produce byte-identical outputs regardless of worker count.

use shift_lab_core::watermark::{Message, RingMark, SchemeInstance, SignMark, ToyCodec};
use shift_lab_core::{
    GaussianScore, Latent, LatentShape, MixtureScore, NoiseSchedule, ScoreModel,
};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config error at line {l}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecKind {
    Identity,
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Ring,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackModel {
    /// Attacker reuses the defender's score model.
    Same,
    /// Attacker runs a mixture seeded differently from the defender.
    Mismatched,
}

/// Parsed experiment specification; field defaults form the desk-scale
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub score_kind: ScoreKind,
    pub score_mean: f64,
    pub score_scale: f64,
    pub score_components: usize,
    pub score_means_seed: u64,
    pub codec_kind: CodecKind,
    pub codec_gain: f64,
    pub codec_basis_seed: u64,
    pub schemes: Vec<SchemeKind>,
    pub ring_key_seed: u64,
    pub ring_r_in: f64,
    pub ring_r_out: f64,
    pub sign_key_seed: u64,
    pub sign_m_len: usize,
    pub sign_message_seed: u64,
    pub lambdas: Vec<f64>,
    pub eta: f64,
    pub attack_model: AttackModel,
    pub attack_mismatch_seed: u64,
    pub trials: usize,
    pub master_seed: u64,
    pub fpr_target: f64,
    pub n_null: usize,
    /// Inversion depth used by verification; `None` means full T.
    pub verify_depth: Option<usize>,
    pub theory_pairs: usize,
    pub theory_stability_pairs: usize,
    pub theory_independence_pairs: usize,
    pub theory_lipschitz_trials: usize,
    /// Multiplies the Lipschitz profile before the checks; values below 1
    /// deliberately under-report the constants (negative control).
    pub theory_lipschitz_scale: f64,
    pub theory_lambdas: Vec<f64>,
    pub output_dir: Option<String>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            t_steps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            channels: 1,
            height: 16,
            width: 16,
            score_kind: ScoreKind::Gaussian,
            score_mean: 0.0,
            score_scale: 1.0,
            score_components: 4,
            score_means_seed: 7,
            codec_kind: CodecKind::Identity,
            codec_gain: 1.0,
            codec_basis_seed: 11,
            schemes: vec![SchemeKind::Ring, SchemeKind::Sign],
            ring_key_seed: 101,
            ring_r_in: 3.0,
            ring_r_out: 5.0,
            sign_key_seed: 202,
            sign_m_len: 128,
            sign_message_seed: 303,
            lambdas: (1..=9).map(|i| i as f64 / 10.0).collect(),
            eta: 1.0,
            attack_model: AttackModel::Same,
            attack_mismatch_seed: 99,
            trials: 200,
            master_seed: 42,
            fpr_target: 0.01,
            n_null: 1000,
            verify_depth: None,
            theory_pairs: 200,
            theory_stability_pairs: 400,
            theory_independence_pairs: 500,
            theory_lipschitz_trials: 1500,
            theory_lipschitz_scale: 1.0,
            theory_lambdas: vec![0.25, 0.5, 0.75, 1.0],
            output_dir: None,
        }
    }
}

struct RawSpec {
    values: BTreeMap<String, (String, usize)>,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl RawSpec {
    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.consumed.borrow_mut().push(key.to_string());
        self.values.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse::<T>()
                .map_err(|_| err(Some(line), format!("cannot parse `{v}` for {key}"))),
        }
    }

    fn parse_list_f64(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => {
                let items: Vec<&str> =
                    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                items
                    .iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| err(Some(line), format!("cannot parse `{s}` in {key}")))
                    })
                    .collect()
            }
        }
    }

    fn unknown_keys(&self) -> Vec<(String, usize)> {
        let consumed = self.consumed.borrow();
        self.values
            .iter()
            .filter(|(k, _)| !consumed.contains(k))
            .map(|(k, (_, l))| (k.clone(), *l))
            .collect()
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(Some(line_no), format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(err(Some(line_no), "empty key"));
            }
            if let Some((_, first)) = values.get(&key) {
                return Err(err(
                    Some(line_no),
                    format!("duplicate key `{key}` (first set at line {first})"),
                ));
            }
            values.insert(key, (value, line_no));
        }
        let raw = RawSpec { values, consumed: std::cell::RefCell::new(Vec::new()) };
        let d = ExperimentSpec::default();

        let score_kind = match raw.get("score.kind") {
            None => d.score_kind,
            Some(("gaussian", _)) => ScoreKind::Gaussian,
            Some(("mixture", _)) => ScoreKind::Mixture,
            Some((v, l)) => return Err(err(Some(l), format!("score.kind must be gaussian or mixture, got `{v}`"))),
        };
        let codec_kind = match raw.get("codec.kind") {
            None => d.codec_kind,
            Some(("identity", _)) => CodecKind::Identity,
            Some(("orthogonal", _)) => CodecKind::Orthogonal,
            Some((v, l)) => return Err(err(Some(l), format!("codec.kind must be identity or orthogonal, got `{v}`"))),
        };
        let schemes = match raw.get("schemes") {
            None => d.schemes.clone(),
            Some((v, l)) => {
                let mut out = Vec::new();
                for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    out.push(match item {
                        "ring" => SchemeKind::Ring,
                        "sign" => SchemeKind::Sign,
                        other => {
                            return Err(err(Some(l), format!("unknown scheme `{other}`")))
                        }
                    });
                }
                if out.is_empty() {
                    return Err(err(Some(l), "schemes list is empty"));
                }
                out
            }
        };
        let attack_model = match raw.get("attack.model") {
            None => d.attack_model,
            Some(("same", _)) => AttackModel::Same,
            Some(("mismatched", _)) => AttackModel::Mismatched,
            Some((v, l)) => return Err(err(Some(l), format!("attack.model must be same or mismatched, got `{v}`"))),
        };
        let verify_depth = match raw.get("verify.depth") {
            None => d.verify_depth,
            Some(("full", _)) => None,
            Some((v, l)) => Some(
                v.parse::<usize>()
                    .map_err(|_| err(Some(l), format!("verify.depth must be `full` or a step count, got `{v}`")))?,
            ),
        };
        let output_dir = raw.get("output.dir").map(|(v, _)| v.to_string());

        let spec = ExperimentSpec {
            t_steps: raw.parse("schedule.t", d.t_steps)?,
            beta_start: raw.parse("schedule.beta_start", d.beta_start)?,
            beta_end: raw.parse("schedule.beta_end", d.beta_end)?,
            channels: raw.parse("latent.channels", d.channels)?,
            height: raw.parse("latent.height", d.height)?,
            width: raw.parse("latent.width", d.width)?,
            score_kind,
            score_mean: raw.parse("score.mean", d.score_mean)?,
            score_scale: raw.parse("score.scale", d.score_scale)?,
            score_components: raw.parse("score.components", d.score_components)?,
            score_means_seed: raw.parse("score.means_seed", d.score_means_seed)?,
            codec_kind,
            codec_gain: raw.parse("codec.gain", d.codec_gain)?,
            codec_basis_seed: raw.parse("codec.basis_seed", d.codec_basis_seed)?,
            schemes,
            ring_key_seed: raw.parse("ring.key_seed", d.ring_key_seed)?,
            ring_r_in: raw.parse("ring.r_in", d.ring_r_in)?,
            ring_r_out: raw.parse("ring.r_out", d.ring_r_out)?,
            sign_key_seed: raw.parse("sign.key_seed", d.sign_key_seed)?,
            sign_m_len: raw.parse("sign.m_len", d.sign_m_len)?,
            sign_message_seed: raw.parse("sign.message_seed", d.sign_message_seed)?,
            lambdas: raw.parse_list_f64("attack.lambdas", &d.lambdas)?,
            eta: raw.parse("attack.eta", d.eta)?,
            attack_model,
            attack_mismatch_seed: raw.parse("attack.mismatch_seed", d.attack_mismatch_seed)?,
            trials: raw.parse("trials", d.trials)?,
            master_seed: raw.parse("master_seed", d.master_seed)?,
            fpr_target: raw.parse("fpr_target", d.fpr_target)?,
            n_null: raw.parse("calib.n_null", d.n_null)?,
            verify_depth,
            theory_pairs: raw.parse("theory.pairs", d.theory_pairs)?,
            theory_stability_pairs: raw.parse("theory.stability_pairs", d.theory_stability_pairs)?,
            theory_independence_pairs: raw
                .parse("theory.independence_pairs", d.theory_independence_pairs)?,
            theory_lipschitz_trials: raw
                .parse("theory.lipschitz_trials", d.theory_lipschitz_trials)?,
            theory_lipschitz_scale: raw.parse("theory.lipschitz_scale", d.theory_lipschitz_scale)?,
            theory_lambdas: raw.parse_list_f64("theory.lambdas", &d.theory_lambdas)?,
            output_dir,
        };

        let unknown = raw.unknown_keys();
        if let Some((key, line)) = unknown.first() {
            return Err(err(Some(*line), format!("unknown key `{key}`")));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_steps == 0 {
            return Err(err(None, "schedule.t must be at least 1"));
        }
        if self.lambdas.is_empty() {
            return Err(err(None, "attack.lambdas must not be empty"));
        }
        for l in &self.lambdas {
            if !(*l > 0.0 && *l <= 1.0) {
                return Err(err(None, format!("lambda {l} outside (0, 1]")));
            }
        }
        for l in &self.theory_lambdas {
            if !(*l > 0.0 && *l <= 1.0) {
                return Err(err(None, format!("theory lambda {l} outside (0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(err(None, format!("eta {} outside [0, 1]", self.eta)));
        }
        if self.trials == 0 {
            return Err(err(None, "trials must be at least 1"));
        }
        if !(self.fpr_target > 0.0 && self.fpr_target <= 1.0) {
            return Err(err(None, format!("fpr_target {} outside (0, 1]", self.fpr_target)));
        }
        if let Some(depth) = self.verify_depth {
            if depth == 0 || depth > self.t_steps {
                return Err(err(
                    None,
                    format!("verify.depth {depth} outside [1, {}]", self.t_steps),
                ));
            }
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(err(None, "latent dimensions must be positive"));
        }
        Ok(())
    }

    pub fn shape(&self) -> LatentShape {
        LatentShape::new(self.channels, self.height, self.width)
    }

    pub fn depth(&self) -> usize {
        self.verify_depth.unwrap_or(self.t_steps)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, ConfigError> {
        NoiseSchedule::linear(self.t_steps, self.beta_start, self.beta_end)
            .map_err(|e| err(None, e.to_string()))
    }

    /// The defender's score model.
    pub fn score(&self) -> Result<ScoreModel, ConfigError> {
        let shape = self.shape();
        match self.score_kind {
            ScoreKind::Gaussian => {
                let mean = Latent::from_vec(shape, vec![self.score_mean; shape.dim()])
                    .map_err(|e| err(None, e.to_string()))?;
                Ok(ScoreModel::Gaussian(
                    GaussianScore::new(mean, self.score_scale).map_err(|e| err(None, e.to_string()))?,
                ))
            }
            ScoreKind::Mixture => Ok(ScoreModel::Mixture(
                MixtureScore::seeded(shape, self.score_components, self.score_scale, self.score_means_seed)
                    .map_err(|e| err(None, e.to_string()))?,
            )),
        }
    }

    /// The attacker's model: the defender's, or a differently seeded
    /// mixture when the spec asks for a mismatch.
    pub fn attacker_score(&self) -> Result<ScoreModel, ConfigError> {
        match self.attack_model {
            AttackModel::Same => self.score(),
            AttackModel::Mismatched => Ok(ScoreModel::Mixture(
                MixtureScore::seeded(
                    self.shape(),
                    self.score_components,
                    self.score_scale,
                    self.attack_mismatch_seed,
                )
                .map_err(|e| err(None, e.to_string()))?,
            )),
        }
    }

    pub fn codec(&self) -> Result<ToyCodec, ConfigError> {
        match self.codec_kind {
            CodecKind::Identity => Ok(ToyCodec::identity()),
            CodecKind::Orthogonal => {
                ToyCodec::orthogonal(self.shape(), self.codec_gain, self.codec_basis_seed)
                    .map_err(|e| err(None, e.to_string()))
            }
        }
    }

    pub fn scheme_instances(&self) -> Result<Vec<SchemeInstance>, ConfigError> {
        self.schemes
            .iter()
            .map(|kind| match kind {
                SchemeKind::Ring => Ok(SchemeInstance::ring(
                    RingMark { r_in: self.ring_r_in, r_out: self.ring_r_out },
                    self.ring_key_seed,
                )),
                SchemeKind::Sign => SchemeInstance::sign(
                    SignMark { m_len: self.sign_m_len },
                    self.sign_key_seed,
                    Message::seeded(self.sign_message_seed, self.sign_m_len),
                )
                .map_err(|e| err(None, e.to_string())),
            })
            .collect()
    }
}
