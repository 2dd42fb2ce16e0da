//! Cross-conditional two-stream variational RNN.
//!
//! The translation stream (3 values) and the pose stream (`6J` values) each
//! own an encoder, an RNN cell, posterior heads, and a decoder. Cross
//! conditioning: each stream's encoder and RNN input receive the other
//! stream's slice of the previous frame. Decoded outputs pass through the
//! alpha-residual, an exponential moving average against the stream's
//! previous frame part that suppresses first-frame jumps.

use rand::Rng;

use crate::autodiff::{SubstrateError, Tape, Tensor, ValueId};

use super::cell::{BoundCell, CellParams, CellStateIds};
use super::{Binder, BoundDense, DenseParams, LatentNodes, ModelConfig, ModelKind, StepOutput, LOG_VAR_CLAMP};

/// Weights of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub encoder: [DenseParams; 2],
    pub mean_head: DenseParams,
    pub logvar_head: DenseParams,
    pub cell: CellParams,
    pub decoder: [DenseParams; 2],
    pub output_head: DenseParams,
}

impl StreamParams {
    /// `own_dim`/`other_dim` are the stream's and the opposite stream's frame
    /// slice widths.
    fn init(config: &ModelConfig, own_dim: usize, other_dim: usize, rng: &mut impl Rng) -> Self {
        let (h, l) = (config.hidden, config.latent);
        let enc_in = own_dim + other_dim + h;
        let cell_in = own_dim + other_dim + l;
        StreamParams {
            encoder: [DenseParams::init(h, enc_in, rng), DenseParams::init(h, h, rng)],
            mean_head: DenseParams::init(l, h, rng),
            logvar_head: DenseParams::init(l, h, rng),
            cell: CellParams::init(config.cell, cell_in, h, rng),
            decoder: [DenseParams::init(h, h, rng), DenseParams::init(h, h, rng)],
            output_head: DenseParams::init(own_dim, h, rng),
        }
    }

    fn for_each(&self, f: &mut impl FnMut(&str, &Tensor)) {
        f("enc0.w", &self.encoder[0].w);
        f("enc0.b", &self.encoder[0].b);
        f("enc1.w", &self.encoder[1].w);
        f("enc1.b", &self.encoder[1].b);
        f("mean.w", &self.mean_head.w);
        f("mean.b", &self.mean_head.b);
        f("logvar.w", &self.logvar_head.w);
        f("logvar.b", &self.logvar_head.b);
        let mut g = |name: &str, t: &Tensor| f(&format!("cell.{name}"), t);
        self.cell.for_each(&mut g);
        f("dec0.w", &self.decoder[0].w);
        f("dec0.b", &self.decoder[0].b);
        f("dec1.w", &self.decoder[1].w);
        f("dec1.b", &self.decoder[1].b);
        f("out.w", &self.output_head.w);
        f("out.b", &self.output_head.b);
    }

    fn for_each_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        f("enc0.w", &mut self.encoder[0].w);
        f("enc0.b", &mut self.encoder[0].b);
        f("enc1.w", &mut self.encoder[1].w);
        f("enc1.b", &mut self.encoder[1].b);
        f("mean.w", &mut self.mean_head.w);
        f("mean.b", &mut self.mean_head.b);
        f("logvar.w", &mut self.logvar_head.w);
        f("logvar.b", &mut self.logvar_head.b);
        let mut g = |name: &str, t: &mut Tensor| f(&format!("cell.{name}"), t);
        self.cell.for_each_mut(&mut g);
        f("dec0.w", &mut self.decoder[0].w);
        f("dec0.b", &mut self.decoder[0].b);
        f("dec1.w", &mut self.decoder[1].w);
        f("dec1.b", &mut self.decoder[1].b);
        f("out.w", &mut self.output_head.w);
        f("out.b", &mut self.output_head.b);
    }
}

/// All weights of the two-stream model.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamParams {
    pub config: ModelConfig,
    pub translation: StreamParams,
    pub pose: StreamParams,
}

impl TwoStreamParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Self {
        debug_assert!(matches!(config.kind, ModelKind::TwoStream));
        let pose_dim = config.pose_dim();
        TwoStreamParams {
            translation: StreamParams::init(&config, 3, pose_dim, rng),
            pose: StreamParams::init(&config, pose_dim, 3, rng),
            config,
        }
    }

    pub fn for_each_param(&self, f: &mut impl FnMut(&str, &Tensor)) {
        let mut g = |name: &str, t: &Tensor| f(&format!("t.{name}"), t);
        self.translation.for_each(&mut g);
        let mut g = |name: &str, t: &Tensor| f(&format!("p.{name}"), t);
        self.pose.for_each(&mut g);
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        let mut g = |name: &str, t: &mut Tensor| f(&format!("t.{name}"), t);
        self.translation.for_each_mut(&mut g);
        let mut g = |name: &str, t: &mut Tensor| f(&format!("p.{name}"), t);
        self.pose.for_each_mut(&mut g);
    }
}

/// One stream bound onto a tape.
#[derive(Debug, Clone)]
pub struct BoundStream {
    pub encoder: [BoundDense; 2],
    pub mean_head: BoundDense,
    pub logvar_head: BoundDense,
    pub cell: BoundCell,
    pub decoder: [BoundDense; 2],
    pub output_head: BoundDense,
}

impl BoundStream {
    // Binding order matches `StreamParams::for_each`.
    fn bind(b: &mut Binder<'_>, p: &StreamParams) -> Self {
        BoundStream {
            encoder: [BoundDense::bind(b, &p.encoder[0]), BoundDense::bind(b, &p.encoder[1])],
            mean_head: BoundDense::bind(b, &p.mean_head),
            logvar_head: BoundDense::bind(b, &p.logvar_head),
            cell: BoundCell::bind(b, &p.cell),
            decoder: [BoundDense::bind(b, &p.decoder[0]), BoundDense::bind(b, &p.decoder[1])],
            output_head: BoundDense::bind(b, &p.output_head),
        }
    }
}

/// Recurrent state handles of both streams.
#[derive(Debug, Clone, Copy)]
pub struct TwoStreamStateIds {
    pub translation: CellStateIds,
    pub pose: CellStateIds,
}

/// The two-stream model bound onto a tape.
pub struct BoundTwoStream {
    pub config: ModelConfig,
    pub translation: BoundStream,
    pub pose: BoundStream,
}

/// Inference posterior for one step of one stream: concatenates
/// `[own_input, other_input, hidden]`, applies the Swish-activated encoder
/// stack, and maps the features through the mean and log-variance heads.
/// The log-variance is clamped to [`LOG_VAR_CLAMP`].
pub fn encode_posterior(
    tape: &mut Tape,
    stream: &BoundStream,
    own_input: ValueId,
    other_input: ValueId,
    hidden: ValueId,
) -> Result<LatentNodes, SubstrateError> {
    let x = tape.concat(&[own_input, other_input, hidden])?;
    let a0 = stream.encoder[0].apply(tape, x)?;
    let h0 = tape.swish(a0)?;
    let a1 = stream.encoder[1].apply(tape, h0)?;
    let h1 = tape.swish(a1)?;
    let mean = stream.mean_head.apply(tape, h1)?;
    let raw_log_var = stream.logvar_head.apply(tape, h1)?;
    let log_var = tape.clamp(raw_log_var, LOG_VAR_CLAMP.0, LOG_VAR_CLAMP.1)?;
    Ok(LatentNodes { mean, log_var })
}

/// Reparameterized draw `z = mu + exp(log_var / 2) . eps`. With `eps = None`
/// the draw is deterministic: `z = mu` exactly.
pub fn sample_latent(
    tape: &mut Tape,
    posterior: &LatentNodes,
    eps: Option<&Tensor>,
) -> Result<ValueId, SubstrateError> {
    let Some(eps) = eps else {
        return Ok(posterior.mean);
    };
    if eps.shape() != tape.value(posterior.mean).shape() {
        return Err(SubstrateError::shape(
            "sample_latent",
            format!("noise {:?} vs mean {:?}", eps.shape(), tape.value(posterior.mean).shape()),
        ));
    }
    let half = tape.scale(posterior.log_var, 0.5)?;
    let std = tape.exp(half)?;
    let e = tape.input(eps.clone());
    let scaled = tape.mul(std, e)?;
    tape.add(posterior.mean, scaled)
}

/// Exponential-moving-average residual `alpha * prev + (1 - alpha) * raw`.
pub fn alpha_residual(
    tape: &mut Tape,
    prev_part: ValueId,
    network_output: ValueId,
    alpha: f64,
) -> Result<ValueId, SubstrateError> {
    if tape.value(prev_part).shape() != tape.value(network_output).shape() {
        return Err(SubstrateError::shape(
            "alpha_residual",
            format!(
                "{:?} vs {:?}",
                tape.value(prev_part).shape(),
                tape.value(network_output).shape()
            ),
        ));
    }
    let keep = tape.scale(prev_part, alpha)?;
    let fresh = tape.scale(network_output, 1.0 - alpha)?;
    tape.add(keep, fresh)
}

impl BoundTwoStream {
    pub fn bind(b: &mut Binder<'_>, p: &TwoStreamParams) -> Self {
        BoundTwoStream {
            config: p.config,
            translation: BoundStream::bind(b, &p.translation),
            pose: BoundStream::bind(b, &p.pose),
        }
    }

    pub fn zero_state(&self, tape: &mut Tape) -> TwoStreamStateIds {
        TwoStreamStateIds {
            translation: self.translation.cell.zero_state(tape),
            pose: self.pose.cell.zero_state(tape),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn stream_step(
        &self,
        tape: &mut Tape,
        stream: &BoundStream,
        own: ValueId,
        other: ValueId,
        state: &CellStateIds,
        eps: Option<&Tensor>,
        alpha: f64,
    ) -> Result<(ValueId, CellStateIds, LatentNodes), SubstrateError> {
        let posterior = encode_posterior(tape, stream, own, other, state.hidden)?;
        let z = sample_latent(tape, &posterior, eps)?;
        let cell_in = tape.concat(&[own, other, z])?;
        let new_state = stream.cell.step(tape, cell_in, state)?;
        let d0 = stream.decoder[0].apply(tape, new_state.hidden)?;
        let s0 = tape.swish(d0)?;
        let d1 = stream.decoder[1].apply(tape, s0)?;
        let s1 = tape.swish(d1)?;
        let raw = stream.output_head.apply(tape, s1)?;
        let part = alpha_residual(tape, own, raw, alpha)?;
        Ok((part, new_state, posterior))
    }

    /// One cross-conditional step: both streams read their own and the other
    /// stream's slice of `prev_frame`, sample their latents, advance their
    /// cells, and decode; the two alpha-residual outputs concatenate into the
    /// next frame. Posteriors are returned for the loss.
    pub fn step(
        &self,
        tape: &mut Tape,
        prev_frame: ValueId,
        state: &TwoStreamStateIds,
        eps: Option<(&Tensor, &Tensor)>,
    ) -> Result<StepOutput, SubstrateError> {
        let dim = tape.value(prev_frame).len();
        let expected = self.config.frame_dim();
        if dim != expected {
            return Err(SubstrateError::shape(
                "two_stream_step",
                format!("frame dimension {dim} != {expected}"),
            ));
        }
        let own_t = tape.slice(prev_frame, 0, 3)?;
        let own_p = tape.slice(prev_frame, 3, self.config.pose_dim())?;
        let (eps_t, eps_p) = match eps {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        let (part_t, state_t, post_t) = self.stream_step(
            tape,
            &self.translation,
            own_t,
            own_p,
            &state.translation,
            eps_t,
            self.config.alpha,
        )?;
        let (part_p, state_p, post_p) = self.stream_step(
            tape,
            &self.pose,
            own_p,
            own_t,
            &state.pose,
            eps_p,
            self.config.alpha,
        )?;
        let frame = tape.concat(&[part_t, part_p])?;
        Ok(StepOutput {
            frame,
            state: super::ModelStateIds::TwoStream(TwoStreamStateIds {
                translation: state_t,
                pose: state_p,
            }),
            posteriors: vec![post_t, post_p],
        })
    }
}
