//! Auto-regressive generation from seed frames.
//!
//! The model is warmed by stepping through the seed frames with teacher
//! forcing (outputs discarded, state kept); afterwards every step feeds the
//! previously generated frame back in, sampling latents from the inference
//! posterior. Each of the K samples runs on its own RNG stream derived from
//! `(seed, sample index)`, so samples are independent and the whole call is
//! reproducible.

use thiserror::Error;

use crate::autodiff::{child_seed, gaussian_sample, seeded_rng, SubstrateError, Tape, Tensor};
use crate::model::{ModelKind, ModelParams};
use crate::motion::{Frame, MotionError, MotionSequence};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("invalid rollout request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
}

/// Generation request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    /// Frames taken from the seed sequence before free-running starts.
    pub seed_frames: usize,
    /// Frames to generate after the seed.
    pub gen_frames: usize,
    /// Number of independent samples K.
    pub samples: usize,
    pub seed: u64,
    /// Pin every latent to the posterior mean.
    pub deterministic: bool,
}

/// Whether a sample ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutStatus {
    Complete,
    /// A non-finite value appeared while generating the frame at this index
    /// (counting from the start of the output sequence); the sample holds
    /// every frame produced before the fault.
    Aborted { at_frame: usize },
}

/// One generated sample: seed frames followed by generated frames.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub sequence: MotionSequence,
    /// Index of the first generated frame (= number of seed frames).
    pub boundary: usize,
    pub status: RolloutStatus,
}

/// Generates K samples. Returns an error only for malformed requests;
/// numeric faults during generation abort the affected sample, which is
/// returned partially with [`RolloutStatus::Aborted`].
pub fn generate(
    params: &ModelParams,
    seed_seq: &MotionSequence,
    cfg: &RolloutConfig,
) -> Result<Vec<GeneratedSample>, RolloutError> {
    if cfg.seed_frames == 0 || cfg.gen_frames == 0 || cfg.samples == 0 {
        return Err(RolloutError::InvalidRequest(
            "seed_frames, gen_frames, and samples must all be >= 1".into(),
        ));
    }
    if cfg.seed_frames > seed_seq.len() {
        return Err(RolloutError::InvalidRequest(format!(
            "{} seed frames requested but the sequence has {}",
            cfg.seed_frames,
            seed_seq.len()
        )));
    }
    if seed_seq.joint_count() != params.config().joints {
        return Err(RolloutError::InvalidRequest(format!(
            "seed sequence has {} joints, model expects {}",
            seed_seq.joint_count(),
            params.config().joints
        )));
    }

    let deterministic = cfg.deterministic || params.config().kind == ModelKind::Q;
    let frame_dim = params.frame_dim();
    let latent = params.config().latent;
    let n_streams = params.stream_count();

    let mut out = Vec::with_capacity(cfg.samples);
    for k in 0..cfg.samples {
        let mut rng = seeded_rng(child_seed(cfg.seed, k as u64));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let base = tape.mark();
        let mut state = bound.zero_state(&mut tape);

        let mut frames: Vec<Frame> = seed_seq.frames()[..cfg.seed_frames].to_vec();
        let mut status = RolloutStatus::Complete;

        let draw = |rng: &mut crate::autodiff::SeedRng| -> Option<Vec<Tensor>> {
            if deterministic {
                None
            } else {
                Some((0..n_streams).map(|_| gaussian_sample(rng, &[latent])).collect())
            }
        };

        // Warm-up over the seed prefix: ground-truth frames in, outputs
        // discarded. After every step the state tensors are captured, the
        // per-step nodes dropped, and the state re-seeded as fresh leaves so
        // the tape stays bounded over arbitrarily long rollouts.
        let mut faulted = false;
        for i in 1..cfg.seed_frames {
            let prev = tape.input(Tensor::from_raw(vec![frame_dim], frames[i - 1].to_vec()));
            let noise = draw(&mut rng);
            match bound.step(&mut tape, prev, &state, noise.as_deref()) {
                Ok(step) => {
                    let values = step.state.capture(&tape);
                    tape.rollback(base);
                    state = params.seed_state(&mut tape, &values);
                }
                Err(SubstrateError::NumericFault { .. }) => {
                    status = RolloutStatus::Aborted { at_frame: i };
                    faulted = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }

        if !faulted {
            let mut prev_frame = frames[cfg.seed_frames - 1].to_vec();
            for n in 0..cfg.gen_frames {
                let prev = tape.input(Tensor::from_raw(vec![frame_dim], prev_frame.clone()));
                let noise = draw(&mut rng);
                match bound.step(&mut tape, prev, &state, noise.as_deref()) {
                    Ok(step) => {
                        let next = tape.value(step.frame).data().to_vec();
                        let values = step.state.capture(&tape);
                        tape.rollback(base);
                        state = params.seed_state(&mut tape, &values);
                        frames.push(Frame::from_slice(&next)?);
                        prev_frame = next;
                    }
                    Err(SubstrateError::NumericFault { .. }) => {
                        status = RolloutStatus::Aborted {
                            at_frame: cfg.seed_frames + n,
                        };
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }

        let sequence = MotionSequence::new(seed_seq.fps(), seed_seq.joint_count(), frames)?;
        out.push(GeneratedSample {
            sequence,
            boundary: cfg.seed_frames,
            status,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::seeded_rng;
    use crate::model::{ModelConfig, ModelParams};
    use crate::motion::{synth_generate, SkeletonSpec};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            latent: 4,
            joints: 2,
            ..Default::default()
        }
    }

    fn seed_sequence(frames: usize) -> MotionSequence {
        let mut rng = seeded_rng(3);
        let spec = SkeletonSpec::random(2, (0.1, 0.3), (0.3, 1.0), [0.05, 0.0, 0.0], &mut rng);
        synth_generate(&spec, 30, frames, 11).unwrap()
    }

    #[test]
    fn zero_decoder_weights_decay_geometrically() {
        let mut rng = seeded_rng(1);
        let mut params = ModelParams::init(tiny_config(), &mut rng);
        params.for_each_param_mut(|name, t| {
            if name.contains("dec") || name.contains("out.") {
                for v in t.data_mut() {
                    *v = 0.0;
                }
            }
        });
        let seed = seed_sequence(1);
        let cfg = RolloutConfig {
            seed_frames: 1,
            gen_frames: 10,
            samples: 1,
            seed: 0,
            deterministic: false,
        };
        let samples = generate(&params, &seed, &cfg).unwrap();
        let sample = &samples[0];
        assert_eq!(sample.status, RolloutStatus::Complete);
        let x0 = seed.frame(0).to_vec();
        for n in 1..=10usize {
            let expect: Vec<f64> = x0.iter().map(|v| v * 0.9f64.powi(n as i32)).collect();
            let got = sample.sequence.frame(n).to_vec();
            for (e, g) in expect.iter().zip(&got) {
                assert!((e - g).abs() < 1e-12, "frame {n}: {e} vs {g}");
            }
        }
    }

    #[test]
    fn deterministic_flag_makes_all_samples_identical() {
        let mut rng = seeded_rng(2);
        let params = ModelParams::init(tiny_config(), &mut rng);
        let seed = seed_sequence(5);
        let cfg = RolloutConfig {
            seed_frames: 3,
            gen_frames: 12,
            samples: 4,
            seed: 9,
            deterministic: true,
        };
        let samples = generate(&params, &seed, &cfg).unwrap();
        for s in &samples[1..] {
            assert_eq!(s.sequence, samples[0].sequence);
        }
    }

    #[test]
    fn sampled_rollouts_differ_between_samples() {
        let mut rng = seeded_rng(2);
        let params = ModelParams::init(tiny_config(), &mut rng);
        let seed = seed_sequence(2);
        let cfg = RolloutConfig {
            seed_frames: 1,
            gen_frames: 8,
            samples: 3,
            seed: 9,
            deterministic: false,
        };
        let samples = generate(&params, &seed, &cfg).unwrap();
        assert_ne!(samples[0].sequence, samples[1].sequence);
        assert_ne!(samples[1].sequence, samples[2].sequence);
    }

    #[test]
    fn output_length_and_boundary_are_exact() {
        let mut rng = seeded_rng(4);
        let params = ModelParams::init(tiny_config(), &mut rng);
        let seed = seed_sequence(6);
        let cfg = RolloutConfig {
            seed_frames: 4,
            gen_frames: 7,
            samples: 2,
            seed: 1,
            deterministic: false,
        };
        let samples = generate(&params, &seed, &cfg).unwrap();
        for s in &samples {
            assert_eq!(s.sequence.len(), 11);
            assert_eq!(s.boundary, 4);
            // Seed prefix is passed through untouched.
            for i in 0..4 {
                assert_eq!(s.sequence.frame(i), seed.frame(i));
            }
        }
    }

    #[test]
    fn repeat_generation_is_identical() {
        let mut rng = seeded_rng(5);
        let params = ModelParams::init(tiny_config(), &mut rng);
        let seed = seed_sequence(3);
        let cfg = RolloutConfig {
            seed_frames: 2,
            gen_frames: 20,
            samples: 2,
            seed: 31,
            deterministic: false,
        };
        let a = generate(&params, &seed, &cfg).unwrap();
        let b = generate(&params, &seed, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sequence, y.sequence);
        }
    }

    #[test]
    fn numeric_fault_returns_partial_sample() {
        let mut rng = seeded_rng(6);
        let mut params = ModelParams::init(tiny_config(), &mut rng);
        // Two huge encoder layers multiply to ~1e310, overflowing on the
        // first free-running step.
        params.for_each_param_mut(|name, t| {
            if name.contains("enc") && name.ends_with(".w") {
                for v in t.data_mut() {
                    *v = 1e155;
                }
            }
        });
        let seed = seed_sequence(1);
        let cfg = RolloutConfig {
            seed_frames: 1,
            gen_frames: 50,
            samples: 1,
            seed: 0,
            deterministic: true,
        };
        let samples = generate(&params, &seed, &cfg).unwrap();
        match samples[0].status {
            RolloutStatus::Aborted { at_frame } => {
                assert!(at_frame >= 1);
                assert_eq!(samples[0].sequence.len(), at_frame);
            }
            RolloutStatus::Complete => panic!("expected an aborted sample"),
        }
    }

    #[test]
    fn vq_models_roll_out_too() {
        let mut rng = seeded_rng(7);
        let cfg_model = ModelConfig {
            kind: crate::model::ModelKind::Vq,
            hidden: 8,
            latent: 4,
            joints: 2,
            ..Default::default()
        };
        let params = ModelParams::init(cfg_model, &mut rng);
        let seed = seed_sequence(2);
        let cfg = RolloutConfig {
            seed_frames: 2,
            gen_frames: 6,
            samples: 2,
            seed: 3,
            deterministic: false,
        };
        let samples = generate(&params, &seed, &cfg).unwrap();
        assert_eq!(samples[0].sequence.len(), 8);
        assert_ne!(samples[0].sequence, samples[1].sequence);
    }
}
