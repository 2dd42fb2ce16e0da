//! Flat key=value run configuration.
//!
//! One `key=value` pair per line; `#` starts a comment line; blank lines are
//! ignored. Unknown keys are errors. Every key has a default, so an empty
//! file resolves to the default configuration. The same text format is
//! embedded in checkpoints, which makes a checkpoint self-describing.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::{CellKind, ModelConfig, ModelKind};
use crate::objective::{KlPenalty, LossWeights};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("bad value for `{key}` at line {line}: {detail}")]
    BadValue { key: String, line: usize, detail: String },
    #[error("malformed line {line}: expected `key=value`")]
    MalformedLine { line: usize },
}

/// Training-loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    /// Window length W in frames.
    pub window: usize,
    /// Window stride S in frames.
    pub stride: usize,
    /// Optimization steps to run.
    pub steps: usize,
    pub lr: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Checkpoint interval in steps.
    pub checkpoint_every: usize,
    pub kl_penalty: KlPenalty,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            window: 64,
            stride: 32,
            steps: 5000,
            lr: 1e-3,
            clip_norm: 5.0,
            checkpoint_every: 1000,
            kl_penalty: KlPenalty::Charbonnier,
            seed: 0,
        }
    }
}

/// Generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSettings {
    pub seed_frames: usize,
    pub gen_frames: usize,
    pub samples: usize,
    pub rng_seed: u64,
    pub deterministic: bool,
}

impl Default for RolloutSettings {
    fn default() -> Self {
        RolloutSettings {
            seed_frames: 1,
            gen_frames: 600,
            samples: 3,
            rng_seed: 0,
            deterministic: false,
        }
    }
}

/// Fully-resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub train: TrainSettings,
    pub rollout: RolloutSettings,
    pub fps: u32,
    /// Optional dataset directory (the CLI flag overrides it).
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            train: TrainSettings::default(),
            rollout: RolloutSettings::default(),
            fps: 30,
            data: None,
        }
    }
}

impl RunConfig {
    /// Parses configuration text, applying defaults for absent keys.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::MalformedLine { line });
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value, line)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = |detail: &str| ConfigError::BadValue {
            key: key.to_string(),
            line,
            detail: detail.to_string(),
        };
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| bad(&e.to_string()));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| bad(&e.to_string()));
        let parse_u64 = |v: &str| v.parse::<u64>().map_err(|e| bad(&e.to_string()));
        match key {
            "model" => {
                self.model.kind = match value {
                    "two-stream" => ModelKind::TwoStream,
                    "vq" => ModelKind::Vq,
                    "q" => ModelKind::Q,
                    other => return Err(bad(&format!("unknown model kind `{other}`"))),
                }
            }
            "cell" => {
                self.model.cell = match value {
                    "gru" => CellKind::Gru,
                    "lstm" => CellKind::Lstm,
                    other => return Err(bad(&format!("unknown cell kind `{other}`"))),
                }
            }
            "hidden" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("hidden size must be >= 1"));
                }
                self.model.hidden = v;
            }
            "latent" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("latent size must be >= 1"));
                }
                self.model.latent = v;
            }
            "alpha" => {
                let v = parse_f64(value)?;
                if !(0.0..1.0).contains(&v) {
                    return Err(bad(&format!("alpha must satisfy 0 <= alpha < 1, got {v}")));
                }
                self.model.alpha = v;
            }
            "joints" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("joint count must be >= 1"));
                }
                self.model.joints = v;
            }
            "fps" => {
                let v = parse_usize(value)?;
                if v == 0 || v > u32::MAX as usize {
                    return Err(bad("fps must be a positive 32-bit integer"));
                }
                self.fps = v as u32;
            }
            "lambda_ts" => {
                let v = parse_f64(value)?;
                if v < 0.0 {
                    return Err(bad("lambda_ts must be nonnegative"));
                }
                self.weights.lambda_ts = v;
            }
            "lambda_vp" => {
                let v = parse_f64(value)?;
                if v < 0.0 {
                    return Err(bad("lambda_vp must be nonnegative"));
                }
                self.weights.lambda_vp = v;
            }
            "lambda_kl" => {
                let v = parse_f64(value)?;
                if v < 0.0 {
                    return Err(bad("lambda_kl must be nonnegative"));
                }
                self.weights.lambda_kl = v;
            }
            "window" => {
                let v = parse_usize(value)?;
                if v < 3 {
                    return Err(bad("window must be >= 3"));
                }
                self.train.window = v;
            }
            "stride" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("stride must be >= 1"));
                }
                self.train.stride = v;
            }
            "steps" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("steps must be >= 1"));
                }
                self.train.steps = v;
            }
            "lr" => {
                let v = parse_f64(value)?;
                if v < 0.0 {
                    return Err(bad("lr must be nonnegative"));
                }
                self.train.lr = v;
            }
            "clip_norm" => {
                let v = parse_f64(value)?;
                if v <= 0.0 {
                    return Err(bad("clip_norm must be positive"));
                }
                self.train.clip_norm = v;
            }
            "checkpoint_every" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("checkpoint_every must be >= 1"));
                }
                self.train.checkpoint_every = v;
            }
            "kl_penalty" => {
                self.train.kl_penalty = match value {
                    "charbonnier" => KlPenalty::Charbonnier,
                    "identity" => KlPenalty::Identity,
                    other => return Err(bad(&format!("unknown kl penalty `{other}`"))),
                }
            }
            "seed" => self.train.seed = parse_u64(value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "seed_frames" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("seed_frames must be >= 1"));
                }
                self.rollout.seed_frames = v;
            }
            "gen_frames" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("gen_frames must be >= 1"));
                }
                self.rollout.gen_frames = v;
            }
            "samples" => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(bad("samples must be >= 1"));
                }
                self.rollout.samples = v;
            }
            "rng_seed" => self.rollout.rng_seed = parse_u64(value)?,
            "deterministic" => {
                self.rollout.deterministic = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(bad(&format!("expected true/false, got `{other}`"))),
                }
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line,
                })
            }
        }
        Ok(())
    }

    /// Canonical serialization: every key, fixed order, byte-stable.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.model.kind {
            ModelKind::TwoStream => "two-stream",
            ModelKind::Vq => "vq",
            ModelKind::Q => "q",
        };
        let cell = match self.model.cell {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        };
        let penalty = match self.train.kl_penalty {
            KlPenalty::Charbonnier => "charbonnier",
            KlPenalty::Identity => "identity",
        };
        let _ = writeln!(s, "model={kind}");
        let _ = writeln!(s, "cell={cell}");
        let _ = writeln!(s, "hidden={}", self.model.hidden);
        let _ = writeln!(s, "latent={}", self.model.latent);
        let _ = writeln!(s, "alpha={}", self.model.alpha);
        let _ = writeln!(s, "joints={}", self.model.joints);
        let _ = writeln!(s, "fps={}", self.fps);
        let _ = writeln!(s, "lambda_ts={}", self.weights.lambda_ts);
        let _ = writeln!(s, "lambda_vp={}", self.weights.lambda_vp);
        let _ = writeln!(s, "lambda_kl={}", self.weights.lambda_kl);
        let _ = writeln!(s, "window={}", self.train.window);
        let _ = writeln!(s, "stride={}", self.train.stride);
        let _ = writeln!(s, "steps={}", self.train.steps);
        let _ = writeln!(s, "lr={}", self.train.lr);
        let _ = writeln!(s, "clip_norm={}", self.train.clip_norm);
        let _ = writeln!(s, "checkpoint_every={}", self.train.checkpoint_every);
        let _ = writeln!(s, "kl_penalty={penalty}");
        let _ = writeln!(s, "seed={}", self.train.seed);
        if let Some(data) = &self.data {
            let _ = writeln!(s, "data={}", data.display());
        }
        let _ = writeln!(s, "seed_frames={}", self.rollout.seed_frames);
        let _ = writeln!(s, "gen_frames={}", self.rollout.gen_frames);
        let _ = writeln!(s, "samples={}", self.rollout.samples);
        let _ = writeln!(s, "rng_seed={}", self.rollout.rng_seed);
        let _ = writeln!(s, "deterministic={}", self.rollout.deterministic);
        s
    }
}
