//! Network architecture: RNN cells, the cross-conditional two-stream
//! variational RNN, the stacked-GRU baseline, and checkpoint serialization.

mod cell;
mod checkpoint;
mod two_stream;
mod vq;

pub use cell::{BoundCell, CellParams, CellStateIds, GruParams, LstmParams};
pub use checkpoint::{
    checkpoint_load, checkpoint_save, Checkpoint, CheckpointError, ADAM_STEP_RECORD,
};
pub use two_stream::{
    alpha_residual, encode_posterior, sample_latent, BoundStream, BoundTwoStream, StreamParams,
    TwoStreamParams, TwoStreamStateIds,
};
pub use vq::{BoundVq, VqParams, VqStateIds, VQ_REFERENCE_HIDDEN, VQ_REFERENCE_LATENT};

use rand::Rng;

use crate::autodiff::{SubstrateError, Tape, Tensor, ValueId};

/// RNN cell family used by both streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

/// Which generator architecture a run trains and samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Cross-conditional two-stream variational RNN.
    TwoStream,
    /// Single-stream stacked-GRU baseline with random sampling.
    Vq,
    /// The deterministic variant of [`ModelKind::Vq`] (latents pinned to the
    /// posterior mean, trained without a KL term).
    Q,
}

/// Structural hyperparameters shared by all model kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub cell: CellKind,
    /// RNN hidden size H.
    pub hidden: usize,
    /// Latent size L.
    pub latent: usize,
    /// Residual mixing coefficient; a fixed hyperparameter, never trained.
    pub alpha: f64,
    /// Body joint count J.
    pub joints: usize,
}

impl ModelConfig {
    /// Values per frame: `3 + 6J`.
    pub fn frame_dim(&self) -> usize {
        3 + 6 * self.joints
    }

    pub fn pose_dim(&self) -> usize {
        6 * self.joints
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::TwoStream,
            cell: CellKind::Gru,
            hidden: 64,
            latent: 8,
            alpha: 0.9,
            joints: crate::motion::DEFAULT_JOINT_COUNT,
        }
    }
}

/// Log-variances are clamped to this interval before exponentiation.
pub const LOG_VAR_CLAMP: (f64, f64) = (-10.0, 10.0);

/// A diagonal Gaussian over the latent space, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Tensor,
    pub log_var: Tensor,
}

/// A diagonal Gaussian over the latent space, as tape handles (used to build
/// differentiable loss terms).
#[derive(Debug, Clone, Copy)]
pub struct LatentNodes {
    pub mean: ValueId,
    pub log_var: ValueId,
}

impl LatentNodes {
    pub fn values(&self, tape: &Tape) -> LatentGaussian {
        LatentGaussian {
            mean: tape.value(self.mean).clone(),
            log_var: tape.value(self.log_var).clone(),
        }
    }
}

/// One dense layer: `W x + b` with `W: [out, in]`, `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseParams {
    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        DenseParams {
            w: Tensor::from_raw(vec![out_dim, in_dim], data),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Places parameter tensors on a tape, recording their handles in
/// visitation order. Binding and [`ModelParams::for_each_param`] traverse
/// parameters in the same structural order, so the collected handles align
/// with gradients, optimizer moments, and checkpoint records.
pub struct Binder<'a> {
    tape: &'a mut Tape,
    trainable: bool,
    ids: Vec<ValueId>,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &'a mut Tape, trainable: bool) -> Self {
        Binder { tape, trainable, ids: Vec::new() }
    }

    pub fn bind(&mut self, t: &Tensor) -> ValueId {
        let id = if self.trainable {
            self.tape.param(t.clone())
        } else {
            self.tape.input(t.clone())
        };
        self.ids.push(id);
        id
    }

    pub fn finish(self) -> Vec<ValueId> {
        self.ids
    }
}

/// Tape handles of one bound dense layer.
#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub w: ValueId,
    pub b: ValueId,
}

impl BoundDense {
    pub fn bind(b: &mut Binder<'_>, p: &DenseParams) -> Self {
        BoundDense {
            w: b.bind(&p.w),
            b: b.bind(&p.b),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: ValueId) -> Result<ValueId, SubstrateError> {
        let wx = tape.matmul(self.w, x)?;
        tape.add(wx, self.b)
    }
}

/// Parameters of whichever architecture a run uses. Held directly rather
/// than boxed: instances live at the top of the call stack, never in bulk.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ModelParams {
    TwoStream(TwoStreamParams),
    Vq(VqParams),
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Self {
        match config.kind {
            ModelKind::TwoStream => ModelParams::TwoStream(TwoStreamParams::init(config, rng)),
            ModelKind::Vq | ModelKind::Q => ModelParams::Vq(VqParams::init(config, rng)),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            ModelParams::TwoStream(p) => &p.config,
            ModelParams::Vq(p) => &p.config,
        }
    }

    pub fn config_mut(&mut self) -> &mut ModelConfig {
        match self {
            ModelParams::TwoStream(p) => &mut p.config,
            ModelParams::Vq(p) => &mut p.config,
        }
    }

    pub fn frame_dim(&self) -> usize {
        self.config().frame_dim()
    }

    /// Number of posterior streams (2 for the two-stream model, 1 otherwise).
    pub fn stream_count(&self) -> usize {
        match self {
            ModelParams::TwoStream(_) => 2,
            ModelParams::Vq(_) => 1,
        }
    }

    /// Visits every parameter tensor in a stable order with a stable name;
    /// the same order is used for gradients, optimizer moments, and
    /// checkpoint records.
    pub fn for_each_param(&self, mut f: impl FnMut(&str, &Tensor)) {
        match self {
            ModelParams::TwoStream(p) => p.for_each_param(&mut f),
            ModelParams::Vq(p) => p.for_each_param(&mut f),
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        match self {
            ModelParams::TwoStream(p) => p.for_each_param_mut(&mut f),
            ModelParams::Vq(p) => p.for_each_param_mut(&mut f),
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        self.for_each_param(|_, t| shapes.push(t.shape().to_vec()));
        shapes
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|_, t| n += t.len());
        n
    }

    /// Binds all parameters onto a tape. The returned model records its
    /// parameter handles in [`ModelParams::for_each_param`] order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut binder = Binder::new(tape, trainable);
        let kind = match self {
            ModelParams::TwoStream(p) => BoundModelKind::TwoStream(BoundTwoStream::bind(&mut binder, p)),
            ModelParams::Vq(p) => BoundModelKind::Vq(BoundVq::bind(&mut binder, p)),
        };
        BoundModel {
            kind,
            param_ids: binder.finish(),
        }
    }

    /// Re-seeds a state captured by [`ModelStateIds::capture`] as fresh
    /// input leaves. Long no-grad rollouts roll the tape back after every
    /// step and carry the state across through this pair.
    pub fn seed_state(&self, tape: &mut Tape, values: &[Tensor]) -> ModelStateIds {
        let has_memory = matches!(self.config().cell, CellKind::Lstm);
        let mut it = values.iter();
        match self {
            ModelParams::TwoStream(_) => {
                let mut next_cell = |tape: &mut Tape| {
                    let hidden = tape.input(it.next().expect("missing state tensor").clone());
                    let memory = if has_memory {
                        Some(tape.input(it.next().expect("missing state tensor").clone()))
                    } else {
                        None
                    };
                    cell::CellStateIds { hidden, memory }
                };
                let translation = next_cell(tape);
                let pose = next_cell(tape);
                ModelStateIds::TwoStream(TwoStreamStateIds { translation, pose })
            }
            ModelParams::Vq(_) => {
                let layer0 = cell::CellStateIds {
                    hidden: tape.input(it.next().expect("missing state tensor").clone()),
                    memory: None,
                };
                let layer1 = cell::CellStateIds {
                    hidden: tape.input(it.next().expect("missing state tensor").clone()),
                    memory: None,
                };
                ModelStateIds::Vq(VqStateIds { layer0, layer1 })
            }
        }
    }
}

/// Recurrent state of a bound model (tape handles).
#[derive(Debug, Clone)]
pub enum ModelStateIds {
    TwoStream(TwoStreamStateIds),
    Vq(VqStateIds),
}

impl ModelStateIds {
    /// Copies the state tensors out of the tape: hidden vectors, plus cell
    /// memories for LSTM cells, in a fixed order understood by
    /// [`ModelParams::seed_state`].
    pub fn capture(&self, tape: &Tape) -> Vec<Tensor> {
        let mut out = Vec::new();
        let mut push_cell = |s: &cell::CellStateIds| {
            out.push(tape.value(s.hidden).clone());
            if let Some(m) = s.memory {
                out.push(tape.value(m).clone());
            }
        };
        match self {
            ModelStateIds::TwoStream(s) => {
                push_cell(&s.translation);
                push_cell(&s.pose);
            }
            ModelStateIds::Vq(s) => {
                push_cell(&s.layer0);
                push_cell(&s.layer1);
            }
        }
        out
    }
}

/// Output of one model step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Next frame vector of dimension `3 + 6J`.
    pub frame: ValueId,
    pub state: ModelStateIds,
    /// Per-stream posteriors, in stream order (translation, pose) for the
    /// two-stream model; a single entry otherwise.
    pub posteriors: Vec<LatentNodes>,
}

enum BoundModelKind {
    TwoStream(BoundTwoStream),
    Vq(BoundVq),
}

/// A model bound onto a tape.
pub struct BoundModel {
    kind: BoundModelKind,
    param_ids: Vec<ValueId>,
}

impl BoundModel {
    /// Tape handles of the bound parameters, aligned with
    /// [`ModelParams::for_each_param`] order.
    pub fn param_ids(&self) -> &[ValueId] {
        &self.param_ids
    }

    pub fn zero_state(&self, tape: &mut Tape) -> ModelStateIds {
        match &self.kind {
            BoundModelKind::TwoStream(m) => ModelStateIds::TwoStream(m.zero_state(tape)),
            BoundModelKind::Vq(m) => ModelStateIds::Vq(m.zero_state(tape)),
        }
    }

    /// Advances one step from the previous frame. `noise` supplies one
    /// standard-normal tensor per stream for reparameterized sampling; `None`
    /// selects the deterministic path `z = mu`.
    pub fn step(
        &self,
        tape: &mut Tape,
        prev_frame: ValueId,
        state: &ModelStateIds,
        noise: Option<&[Tensor]>,
    ) -> Result<StepOutput, SubstrateError> {
        match (&self.kind, state) {
            (BoundModelKind::TwoStream(m), ModelStateIds::TwoStream(s)) => {
                let eps = match noise {
                    Some(eps) => {
                        if eps.len() != 2 {
                            return Err(SubstrateError::invalid(
                                "model_step",
                                format!("expected 2 noise tensors, got {}", eps.len()),
                            ));
                        }
                        Some((&eps[0], &eps[1]))
                    }
                    None => None,
                };
                m.step(tape, prev_frame, s, eps)
            }
            (BoundModelKind::Vq(m), ModelStateIds::Vq(s)) => {
                let eps = match noise {
                    Some(eps) => {
                        if eps.len() != 1 {
                            return Err(SubstrateError::invalid(
                                "model_step",
                                format!("expected 1 noise tensor, got {}", eps.len()),
                            ));
                        }
                        Some(&eps[0])
                    }
                    None => None,
                };
                m.step(tape, prev_frame, s, eps)
            }
            _ => Err(SubstrateError::invalid("model_step", "state kind does not match model kind")),
        }
    }
}
