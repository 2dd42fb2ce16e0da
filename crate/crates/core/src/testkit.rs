//! Test support: the finite-difference gradient harness and the synthetic
//! dataset fixture shared by integration and acceptance tests.

use rand::Rng;

use crate::autodiff::{gaussian_sample, seeded_rng, Tape, Tensor};
use crate::config::RunConfig;
use crate::model::ModelParams;
use crate::motion::{canonicalize, synth_generate, MotionSequence, SkeletonSpec};
use crate::objective::NullPrior;
use crate::train::window_loss;

/// Worst relative finite-difference error across every parameter of the
/// total loss on one teacher-forced window.
pub struct FdReport {
    pub max_rel_err: f64,
    pub param_count: usize,
    /// Parameter name where the worst error occurred.
    pub worst: String,
    /// Analytic and finite-difference gradients at the worst component.
    pub worst_pair: (f64, f64),
    /// Loss value at the evaluation point.
    pub loss: f64,
}

/// Central finite differences (step `h`) of the total window loss with
/// respect to every parameter, compared against the tape gradients. The
/// sampling noise is drawn once and held fixed so the loss is a
/// deterministic function of the parameters.
pub fn fd_check_total_loss(cfg: &RunConfig, frames: &[Tensor], h: f64, seed: u64) -> FdReport {
    let mut rng = seeded_rng(seed);
    let params = ModelParams::init(cfg.model, &mut rng);
    let n_streams = params.stream_count();
    let noise: Vec<Vec<Tensor>> = (0..frames.len() - 1)
        .map(|_| {
            (0..n_streams)
                .map(|_| gaussian_sample(&mut rng, &[cfg.model.latent]))
                .collect()
        })
        .collect();

    let eval = |p: &ModelParams, want_grads: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, want_grads);
        let loss = window_loss(&mut tape, p, &bound, frames, Some(&noise), cfg, &NullPrior)
            .expect("window loss");
        let grads = if want_grads {
            let g = tape.backward(loss.nodes.total).expect("backward");
            bound.param_ids().iter().map(|&id| g.wrt(id).clone()).collect()
        } else {
            Vec::new()
        };
        (tape.value(loss.nodes.total).item(), grads)
    };

    let (loss, analytic) = eval(&params, true);

    let mut names = Vec::new();
    params.for_each_param(|name, t| names.push((name.to_string(), t.len())));

    // The oracle's own precision: central differences of a 64-bit loss of
    // magnitude |L| at step h carry ~eps*|L|/h of roundoff noise, so
    // components whose gradients sit at or below that noise floor cannot be
    // compared relatively. The floor enters the denominator only; genuine
    // gradient errors are orders of magnitude above it.
    let noise_floor = (f64::EPSILON * loss.abs() / h).max(1e-9);

    let mut max_rel_err = 0.0f64;
    let mut worst = String::new();
    let mut worst_pair = (0.0, 0.0);
    let mut param_count = 0usize;
    for (pi, (name, len)) in names.iter().enumerate() {
        for k in 0..*len {
            param_count += 1;
            let bump = |delta: f64| -> f64 {
                let mut p = params.clone();
                let mut j = 0usize;
                p.for_each_param_mut(|_, t| {
                    if j == pi {
                        t.data_mut()[k] += delta;
                    }
                    j += 1;
                });
                eval(&p, false).0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = analytic[pi].data()[k];
            let denom = an.abs().max(fd.abs()).max(noise_floor / 1e-4);
            let rel = (an - fd).abs() / denom;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = format!("{name}[{k}]");
                worst_pair = (an, fd);
            }
        }
    }
    FdReport {
        max_rel_err,
        param_count,
        worst,
        worst_pair,
        loss,
    }
}

/// A teacher-forcing window of synthetic frames as tensors.
pub fn synthetic_window(joints: usize, frames: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = seeded_rng(seed);
    let spec = SkeletonSpec::random(joints, (0.1, 0.4), (0.3, 1.5), [0.05, -0.02, 0.0], &mut rng);
    let seq = synth_generate(&spec, 30, frames, seed).unwrap();
    seq.frames()
        .iter()
        .map(|f| Tensor::from_raw(vec![3 + 6 * joints], f.to_vec()))
        .collect()
}

/// The oscillatory toy corpus: `n_seqs` canonicalized sequences of
/// `frames` frames at 30 fps with 22 joints, deterministic in `base_seed`.
pub fn toy_dataset(n_seqs: usize, frames: usize, base_seed: u64) -> Vec<MotionSequence> {
    (0..n_seqs)
        .map(|i| {
            let mut rng = seeded_rng(base_seed.wrapping_add(1000 + i as u64));
            let velocity = [
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                0.0,
            ];
            let spec = SkeletonSpec::random(22, (0.05, 0.35), (0.2, 1.6), velocity, &mut rng);
            let raw = synth_generate(&spec, 30, frames, base_seed.wrapping_add(i as u64)).unwrap();
            canonicalize(&raw).unwrap().0
        })
        .collect()
}
