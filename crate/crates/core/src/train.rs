//! Teacher-forced training over fixed-length windows with truncated
//! backpropagation through time.
//!
//! Each step samples one window, unrolls the model with ground-truth inputs
//! (the alpha-residual also mixes the ground-truth previous frame), builds
//! the weighted loss on a fresh tape, backpropagates, clips the global
//! gradient norm, and applies Adam. RNN state is zeroed per window and
//! gradients never flow across window boundaries. Runs are bit-reproducible
//! given the seed.

use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::{
    child_seed, gaussian_sample, seeded_rng, AdamConfig, AdamState, SubstrateError, Tape, Tensor,
};
use crate::config::RunConfig;
use crate::model::{
    checkpoint_load, checkpoint_save, Checkpoint, CheckpointError, ModelKind, ModelParams,
    ADAM_STEP_RECORD,
};
use crate::motion::MotionSequence;
use crate::objective::{
    kl_unit_gaussian_node, reconstruction_loss_node, stream_kl_node, total_loss_node,
    LossBreakdown, NullPrior, ObjectiveError, PosePrior,
};
use rand::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset: no sequence yields a window of the configured length")]
    EmptyDataset,
    #[error("numeric fault at training step {step}: {source}")]
    NumericFault { step: usize, source: SubstrateError },
    #[error("dataset mismatch: {0}")]
    DataMismatch(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Window starts for one sequence: `0, S, 2S, ...` while `start + W` fits.
pub fn make_windows(seq: &MotionSequence, window: usize, stride: usize) -> Vec<usize> {
    assert!(window >= 3, "window must be >= 3");
    assert!(stride >= 1, "stride must be >= 1");
    let mut starts = Vec::new();
    let mut start = 0;
    while start + window <= seq.len() {
        starts.push(start);
        start += stride;
    }
    starts
}

/// All `(sequence index, start)` windows across a dataset.
pub fn collect_windows(
    dataset: &[MotionSequence],
    window: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>, TrainError> {
    let mut out = Vec::new();
    for (i, seq) in dataset.iter().enumerate() {
        for start in make_windows(seq, window, stride) {
            out.push((i, start));
        }
    }
    if out.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(out)
}

/// Scales gradients so their global L2 norm is at most `max_norm`. Returns
/// the pre-clip norm.
pub fn clip_gradient_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One training-log row.
#[derive(Debug, Clone, Copy)]
pub struct TrainLogRecord {
    pub step: usize,
    pub loss: LossBreakdown,
    /// Mean per-step KL (posterior-collapse monitor), averaged over steps
    /// and streams.
    pub mean_phi: f64,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub log: Vec<TrainLogRecord>,
}

/// Differentiable loss of one teacher-forced window. Returns the loss nodes
/// plus the per-step phi values. Shared by the trainer and by gradient-check
/// tests.
pub struct WindowLoss {
    pub nodes: crate::objective::LossNodes,
    pub mean_phi: f64,
}

/// Unrolls `model` over `frames` with teacher forcing on `tape` and builds
/// the total loss. `noise` must hold one tensor per stream per transition
/// when sampling, or be `None` for the deterministic path.
pub fn window_loss(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &crate::model::BoundModel,
    frames: &[Tensor],
    noise: Option<&[Vec<Tensor>]>,
    cfg: &RunConfig,
    prior: &dyn PosePrior,
) -> Result<WindowLoss, TrainError> {
    let n = frames.len();
    assert!(n >= 3, "window must hold at least 3 frames");
    let mut state = bound.zero_state(tape);
    let mut preds = Vec::with_capacity(n - 1);
    let mut phis = Vec::with_capacity(n - 1);
    let mut posteriors = Vec::with_capacity(n - 1);
    for i in 1..n {
        let prev = tape.input(frames[i - 1].clone());
        let step_noise = noise.map(|all| all[i - 1].as_slice());
        let out = bound.step(tape, prev, &state, step_noise)?;
        preds.push(out.frame);
        posteriors.push(out.posteriors.clone());
        state = out.state;
    }

    // Per-stream KL across the window.
    let use_kl = cfg.model.kind != ModelKind::Q;
    let n_streams = params.stream_count();
    let mut kl_streams = Vec::new();
    let mut phi_sum = 0.0;
    let mut phi_count = 0usize;
    for s in 0..n_streams {
        let mut stream_phis = Vec::with_capacity(n - 1);
        for post in &posteriors {
            let phi = kl_unit_gaussian_node(tape, &post[s])?;
            phi_sum += tape.value(phi).item().max(0.0);
            phi_count += 1;
            stream_phis.push(phi);
        }
        phis.push(stream_phis);
    }
    if use_kl {
        for stream_phis in &phis {
            kl_streams.push(stream_kl_node(tape, stream_phis, cfg.train.kl_penalty)?);
        }
    }

    let (recon_frame, recon_timediff) =
        reconstruction_loss_node(tape, &preds, &frames[1..], cfg.model.frame_dim())?;

    // Predicted poses minus the pelvis joint feed the prior.
    let pose_dim = cfg.model.pose_dim();
    let prior_loss = if pose_dim > 6 {
        let mut body_poses = Vec::with_capacity(preds.len());
        for &p in &preds {
            body_poses.push(tape.slice(p, 3 + 6, pose_dim - 6)?);
        }
        prior.loss(tape, &body_poses)?
    } else {
        prior.loss(tape, &[])?
    };

    let nodes = total_loss_node(tape, recon_frame, recon_timediff, &kl_streams, prior_loss, &cfg.weights)?;
    Ok(WindowLoss {
        nodes,
        mean_phi: phi_sum / phi_count.max(1) as f64,
    })
}

/// Rewraps numeric faults with the training step they occurred at.
fn promote_fault(e: TrainError, step: usize) -> TrainError {
    match e {
        TrainError::Substrate(s @ SubstrateError::NumericFault { .. }) => {
            TrainError::NumericFault { step, source: s }
        }
        TrainError::Objective(ObjectiveError::Substrate(s @ SubstrateError::NumericFault { .. })) => {
            TrainError::NumericFault { step, source: s }
        }
        other => other,
    }
}

fn validate_dataset(cfg: &RunConfig, dataset: &[MotionSequence]) -> Result<(), TrainError> {
    let Some(first) = dataset.first() else {
        return Err(TrainError::EmptyDataset);
    };
    for seq in dataset {
        if seq.joint_count() != first.joint_count() || seq.fps() != first.fps() {
            return Err(TrainError::DataMismatch(
                "sequences disagree on joint count or fps".into(),
            ));
        }
    }
    if first.joint_count() != cfg.model.joints {
        return Err(TrainError::DataMismatch(format!(
            "dataset has {} joints but the configuration says {}",
            first.joint_count(),
            cfg.model.joints
        )));
    }
    if first.fps() != cfg.fps {
        return Err(TrainError::DataMismatch(format!(
            "dataset runs at {} fps but the configuration says {}",
            first.fps(),
            cfg.fps
        )));
    }
    Ok(())
}

/// Serializes parameters, optimizer state, and the resolved configuration.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    cfg: &RunConfig,
    params: &ModelParams,
    adam: &AdamState,
) -> Result<(), CheckpointError> {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    params.for_each_param(|name, t| tensors.push((format!("model.{name}"), t.clone())));
    let mut idx = 0usize;
    params.for_each_param(|name, _| {
        let (m, v) = adam.moments(idx);
        tensors.push((format!("adam.m.{name}"), m.clone()));
        tensors.push((format!("adam.v.{name}"), v.clone()));
        idx += 1;
    });
    tensors.push((
        ADAM_STEP_RECORD.to_string(),
        Tensor::from_raw(vec![1], vec![adam.step_count() as f64]),
    ));
    checkpoint_save(
        path,
        &Checkpoint {
            config_text: cfg.to_text(),
            tensors,
        },
    )
}

/// Rebuilds configuration, parameters, and optimizer state from a
/// checkpoint.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(RunConfig, ModelParams, AdamState), CheckpointError> {
    let ckpt = checkpoint_load(path)?;
    let cfg = RunConfig::parse(&ckpt.config_text)
        .map_err(|e| CheckpointError::Corrupt(format!("embedded config: {e}")))?;
    let mut rng = seeded_rng(cfg.train.seed);
    let mut params = ModelParams::init(cfg.model, &mut rng);

    let mut missing = Vec::new();
    params.for_each_param_mut(|name, t| {
        match ckpt.tensor(&format!("model.{name}")) {
            Some(saved) if saved.shape() == t.shape() => *t = saved.clone(),
            Some(_) => missing.push(format!("{name} (shape mismatch)")),
            None => missing.push(name.to_string()),
        }
    });
    if !missing.is_empty() {
        return Err(CheckpointError::Corrupt(format!(
            "missing or mismatched parameter records: {}",
            missing.join(", ")
        )));
    }

    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.train.lr), &params.param_shapes());
    let step = ckpt
        .tensor(ADAM_STEP_RECORD)
        .map(|t| t.data()[0] as u64)
        .unwrap_or(0);
    let mut m = Vec::new();
    let mut v = Vec::new();
    let mut broken = false;
    params.for_each_param(|name, t| {
        match (
            ckpt.tensor(&format!("adam.m.{name}")),
            ckpt.tensor(&format!("adam.v.{name}")),
        ) {
            (Some(a), Some(b)) if a.shape() == t.shape() && b.shape() == t.shape() => {
                m.push(a.clone());
                v.push(b.clone());
            }
            _ => broken = true,
        }
    });
    if broken {
        return Err(CheckpointError::Corrupt(
            "missing or mismatched optimizer moment records".into(),
        ));
    }
    adam.restore(step, m, v)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok((cfg, params, adam))
}

/// Runs the training loop. When `ckpt_out` is given, a checkpoint is written
/// every `checkpoint_every` steps and at the end.
pub fn train_run(
    cfg: &RunConfig,
    dataset: &[MotionSequence],
    ckpt_out: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    validate_dataset(cfg, dataset)?;
    let windows = collect_windows(dataset, cfg.train.window, cfg.train.stride)?;

    // Parameter init draws first from the master seed; the training stream
    // (window picks and sampling noise) uses a derived child seed, so the
    // two never interleave.
    let mut init_rng = seeded_rng(cfg.train.seed);
    let mut params = ModelParams::init(cfg.model, &mut init_rng);
    let mut rng = seeded_rng(child_seed(cfg.train.seed, 1));

    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.train.lr), &params.param_shapes());
    let prior = NullPrior;
    let n_streams = params.stream_count();
    let latent = cfg.model.latent;
    let sample_noise = cfg.model.kind != ModelKind::Q;

    let started = Instant::now();
    let mut log = Vec::with_capacity(cfg.train.steps);
    for step in 1..=cfg.train.steps {
        let (seq_idx, start) = windows[rng.random_range(0..windows.len())];
        let frames: Vec<Tensor> = dataset[seq_idx]
            .frames()
            .iter()
            .skip(start)
            .take(cfg.train.window)
            .map(|f| Tensor::from_raw(vec![3 + 6 * cfg.model.joints], f.to_vec()))
            .collect();

        let noise: Option<Vec<Vec<Tensor>>> = if sample_noise {
            Some(
                (0..cfg.train.window - 1)
                    .map(|_| {
                        (0..n_streams)
                            .map(|_| gaussian_sample(&mut rng, &[latent]))
                            .collect()
                    })
                    .collect(),
            )
        } else {
            None
        };

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let window = window_loss(
            &mut tape,
            &params,
            &bound,
            &frames,
            noise.as_deref(),
            cfg,
            &prior,
        )
        .map_err(|e| promote_fault(e, step))?;
        let breakdown = LossBreakdown::from_nodes(&tape, &window.nodes);

        let grads = tape
            .backward(window.nodes.total)
            .map_err(|e| promote_fault(e.into(), step))?;
        let mut grad_list: Vec<Tensor> = bound.param_ids().iter().map(|&id| grads.wrt(id).clone()).collect();
        clip_gradient_norm(&mut grad_list, cfg.train.clip_norm);

        adam.begin_step();
        let mut idx = 0usize;
        let mut adam_err = None;
        params.for_each_param_mut(|_, t| {
            if adam_err.is_none() {
                if let Err(e) = adam.update(idx, t, &grad_list[idx]) {
                    adam_err = Some(e);
                }
            }
            idx += 1;
        });
        if let Some(e) = adam_err {
            return Err(e.into());
        }

        log.push(TrainLogRecord {
            step,
            loss: breakdown,
            mean_phi: window.mean_phi,
            seconds: started.elapsed().as_secs_f64(),
        });

        if let Some(path) = ckpt_out {
            if step % cfg.train.checkpoint_every == 0 && step != cfg.train.steps {
                save_checkpoint(path, cfg, &params, &adam)?;
            }
        }
    }

    if let Some(path) = ckpt_out {
        save_checkpoint(path, cfg, &params, &adam)?;
    }

    Ok(TrainOutcome { params, adam, log })
}

/// Writes the training log as CSV.
pub fn write_log_csv(path: impl AsRef<Path>, log: &[TrainLogRecord]) -> std::io::Result<()> {
    let mut out = String::from("step,recon_frame,recon_timediff,kl_t,kl_p,prior,total,mean_phi,seconds\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.loss.recon_frame,
            r.loss.recon_timediff,
            r.loss.kl_translation_stream,
            r.loss.kl_pose_stream,
            r.loss.pose_prior,
            r.loss.total,
            r.mean_phi,
            r.seconds,
        ));
    }
    std::fs::write(path, out)
}
