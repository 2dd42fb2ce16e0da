//! Single-stream baseline: two stacked GRU layers over the full frame
//! vector, posterior heads on the top hidden state, and a two-layer decoder
//! from the latent back to the frame, mixed through the alpha-residual.
//! The deterministic variant (latents pinned to the posterior mean) is the
//! Q model; with sampling it is the VQ model.

use rand::Rng;

use crate::autodiff::{SubstrateError, Tape, Tensor, ValueId};

use super::cell::{BoundCell, CellParams, CellStateIds};
use super::two_stream::{alpha_residual, sample_latent};
use super::{Binder, BoundDense, DenseParams, LatentNodes, ModelConfig, StepOutput, LOG_VAR_CLAMP};
use crate::model::CellKind;

/// Hidden size of the full-scale reference configuration.
pub const VQ_REFERENCE_HIDDEN: usize = 1000;
/// Latent (noise) size of the full-scale reference configuration.
pub const VQ_REFERENCE_LATENT: usize = 32;

/// Weights of the stacked-GRU baseline. The recurrent layers are always
/// GRUs; the configured cell kind applies to the two-stream model only.
#[derive(Debug, Clone, PartialEq)]
pub struct VqParams {
    pub config: ModelConfig,
    pub gru0: CellParams,
    pub gru1: CellParams,
    pub mean_head: DenseParams,
    pub logvar_head: DenseParams,
    pub decoder: DenseParams,
    pub output_head: DenseParams,
}

impl VqParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let (h, l) = (config.hidden, config.latent);
        let frame = config.frame_dim();
        VqParams {
            gru0: CellParams::init(CellKind::Gru, frame, h, rng),
            gru1: CellParams::init(CellKind::Gru, h, h, rng),
            mean_head: DenseParams::init(l, h, rng),
            logvar_head: DenseParams::init(l, h, rng),
            decoder: DenseParams::init(h, l, rng),
            output_head: DenseParams::init(frame, h, rng),
            config,
        }
    }

    pub fn for_each_param(&self, f: &mut impl FnMut(&str, &Tensor)) {
        let mut g = |name: &str, t: &Tensor| f(&format!("gru0.{name}"), t);
        self.gru0.for_each(&mut g);
        let mut g = |name: &str, t: &Tensor| f(&format!("gru1.{name}"), t);
        self.gru1.for_each(&mut g);
        f("mean.w", &self.mean_head.w);
        f("mean.b", &self.mean_head.b);
        f("logvar.w", &self.logvar_head.w);
        f("logvar.b", &self.logvar_head.b);
        f("dec.w", &self.decoder.w);
        f("dec.b", &self.decoder.b);
        f("out.w", &self.output_head.w);
        f("out.b", &self.output_head.b);
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        let mut g = |name: &str, t: &mut Tensor| f(&format!("gru0.{name}"), t);
        self.gru0.for_each_mut(&mut g);
        let mut g = |name: &str, t: &mut Tensor| f(&format!("gru1.{name}"), t);
        self.gru1.for_each_mut(&mut g);
        f("mean.w", &mut self.mean_head.w);
        f("mean.b", &mut self.mean_head.b);
        f("logvar.w", &mut self.logvar_head.w);
        f("logvar.b", &mut self.logvar_head.b);
        f("dec.w", &mut self.decoder.w);
        f("dec.b", &mut self.decoder.b);
        f("out.w", &mut self.output_head.w);
        f("out.b", &mut self.output_head.b);
    }
}

/// Recurrent state handles of the two stacked layers.
#[derive(Debug, Clone, Copy)]
pub struct VqStateIds {
    pub layer0: CellStateIds,
    pub layer1: CellStateIds,
}

/// The baseline bound onto a tape.
pub struct BoundVq {
    pub config: ModelConfig,
    pub gru0: BoundCell,
    pub gru1: BoundCell,
    pub mean_head: BoundDense,
    pub logvar_head: BoundDense,
    pub decoder: BoundDense,
    pub output_head: BoundDense,
}

impl BoundVq {
    // Binding order matches `VqParams::for_each_param`.
    pub fn bind(b: &mut Binder<'_>, p: &VqParams) -> Self {
        BoundVq {
            config: p.config,
            gru0: BoundCell::bind(b, &p.gru0),
            gru1: BoundCell::bind(b, &p.gru1),
            mean_head: BoundDense::bind(b, &p.mean_head),
            logvar_head: BoundDense::bind(b, &p.logvar_head),
            decoder: BoundDense::bind(b, &p.decoder),
            output_head: BoundDense::bind(b, &p.output_head),
        }
    }

    pub fn zero_state(&self, tape: &mut Tape) -> VqStateIds {
        VqStateIds {
            layer0: self.gru0.zero_state(tape),
            layer1: self.gru1.zero_state(tape),
        }
    }

    /// One step over the full frame vector: stacked GRUs, posterior heads on
    /// the top hidden state, latent decode, alpha-residual against the whole
    /// previous frame.
    pub fn step(
        &self,
        tape: &mut Tape,
        prev_frame: ValueId,
        state: &VqStateIds,
        eps: Option<&Tensor>,
    ) -> Result<StepOutput, SubstrateError> {
        let dim = tape.value(prev_frame).len();
        let expected = self.config.frame_dim();
        if dim != expected {
            return Err(SubstrateError::shape(
                "vq_step",
                format!("frame dimension {dim} != {expected}"),
            ));
        }
        let s0 = self.gru0.step(tape, prev_frame, &state.layer0)?;
        let s1 = self.gru1.step(tape, s0.hidden, &state.layer1)?;
        let mean = self.mean_head.apply(tape, s1.hidden)?;
        let raw_log_var = self.logvar_head.apply(tape, s1.hidden)?;
        let log_var = tape.clamp(raw_log_var, LOG_VAR_CLAMP.0, LOG_VAR_CLAMP.1)?;
        let posterior = LatentNodes { mean, log_var };
        let z = sample_latent(tape, &posterior, eps)?;
        let d = self.decoder.apply(tape, z)?;
        let ds = tape.swish(d)?;
        let raw = self.output_head.apply(tape, ds)?;
        let frame = alpha_residual(tape, prev_frame, raw, self.config.alpha)?;
        Ok(StepOutput {
            frame,
            state: super::ModelStateIds::Vq(VqStateIds { layer0: s0, layer1: s1 }),
            posteriors: vec![posterior],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::seeded_rng;
    use crate::model::ModelKind;

    fn vq_config() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Vq,
            hidden: 8,
            latent: 4,
            joints: 2,
            ..Default::default()
        }
    }

    fn step_once(params: &VqParams, prev: Vec<f64>, eps: Option<&Tensor>) -> Vec<f64> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&mut tape, false);
        let bound = BoundVq::bind(&mut binder, params);
        drop(binder);
        let state = bound.zero_state(&mut tape);
        let prev = tape.input(Tensor::vector(prev).unwrap());
        let out = bound.step(&mut tape, prev, &state, eps).unwrap();
        tape.value(out.frame).data().to_vec()
    }

    #[test]
    fn zero_weights_scale_frame_by_alpha() {
        let mut rng = seeded_rng(0);
        let mut params = VqParams::init(vq_config(), &mut rng);
        params.for_each_param_mut(&mut |_, t| {
            for v in t.data_mut() {
                *v = 0.0;
            }
        });
        let prev: Vec<f64> = (0..15).map(|i| i as f64 / 10.0).collect();
        let frame = step_once(&params, prev.clone(), None);
        for (o, p) in frame.iter().zip(&prev) {
            assert!((o - 0.9 * p).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_sizes_are_documented() {
        assert_eq!(VQ_REFERENCE_HIDDEN, 1000);
        assert_eq!(VQ_REFERENCE_LATENT, 32);
    }

    #[test]
    fn deterministic_step_ignores_logvar_head() {
        // With deterministic sampling z = mu, so two parameter sets differing
        // only in the log-variance head produce identical outputs.
        let mut rng = seeded_rng(1);
        let a = VqParams::init(vq_config(), &mut rng);
        let mut b = a.clone();
        b.for_each_param_mut(&mut |name, t| {
            if name.starts_with("logvar") {
                for v in t.data_mut() {
                    *v = 0.0;
                }
            }
        });
        let prev = vec![0.25; 15];
        assert_eq!(step_once(&a, prev.clone(), None), step_once(&b, prev, None));
    }
}
