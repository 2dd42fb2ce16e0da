//! Training-loss components: L1 reconstruction with time differences,
//! per-step unit-Gaussian KL, the Charbonnier-wrapped per-stream KL, a
//! pluggable pose prior, and the weighted total.
//!
//! The Charbonnier wrapper `psi(s) = sqrt(1 + s^2) - 1` is applied to the
//! per-stream sum of per-step KL terms. Its gradient `s / sqrt(1 + s^2)`
//! vanishes as the summed KL approaches zero, which keeps the posterior from
//! collapsing, and `psi(sum phi) <= sum phi` so the wrapped bound never
//! penalizes more than the plain KL.

use thiserror::Error;

use crate::autodiff::{SubstrateError, Tape, Tensor, ValueId};
use crate::model::{LatentGaussian, LatentNodes};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
}

/// Loss-term weights. `lambda_vp` only matters when a pose prior is
/// registered; the default prior contributes nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_ts: f64,
    pub lambda_vp: f64,
    pub lambda_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ts: 5.0,
            lambda_vp: 1e-4,
            lambda_kl: 1.0,
        }
    }
}

/// Which wrapper the per-stream summed KL passes through. `Identity` exists
/// for contrast runs that demonstrate posterior collapse without the
/// Charbonnier wrapper.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlPenalty {
    Charbonnier,
    Identity,
}

/// `psi(s) = sqrt(1 + s^2) - 1` for nonnegative `s`.
pub fn charbonnier(s: f64) -> Result<f64, ObjectiveError> {
    if s < 0.0 {
        return Err(ObjectiveError::DomainError(format!(
            "charbonnier expects s >= 0, got {s}"
        )));
    }
    Ok((1.0 + s * s).sqrt() - 1.0)
}

/// Analytic derivative `s / sqrt(1 + s^2)`.
pub fn charbonnier_grad(s: f64) -> f64 {
    s / (1.0 + s * s).sqrt()
}

/// Tape form of [`charbonnier`]; differentiable.
pub fn charbonnier_node(tape: &mut Tape, s: ValueId) -> Result<ValueId, SubstrateError> {
    let sq = tape.mul(s, s)?;
    let shifted = tape.offset(sq, 1.0)?;
    let root = tape.sqrt(shifted)?;
    tape.offset(root, -1.0)
}

/// Per-step KL of a diagonal Gaussian posterior against the unit Gaussian,
/// summed over latent dimensions:
/// `phi = sum(sigma^2 + mu^2 - 1 - log sigma^2)`.
pub fn kl_unit_gaussian(g: &LatentGaussian) -> f64 {
    g.mean
        .data()
        .iter()
        .zip(g.log_var.data())
        .map(|(&mu, &lv)| lv.exp() + mu * mu - 1.0 - lv)
        .sum()
}

/// Tape form of [`kl_unit_gaussian`]; differentiable.
pub fn kl_unit_gaussian_node(tape: &mut Tape, g: &LatentNodes) -> Result<ValueId, SubstrateError> {
    let var = tape.exp(g.log_var)?;
    let mu_sq = tape.mul(g.mean, g.mean)?;
    let a = tape.add(var, mu_sq)?;
    let b = tape.sub(a, g.log_var)?;
    let c = tape.offset(b, -1.0)?;
    tape.sum(c)
}

/// Stream KL: the Charbonnier wrapper applied to the sum of per-step phi
/// values.
pub fn stream_kl(phis: &[f64]) -> Result<f64, ObjectiveError> {
    let mut total = 0.0;
    for (i, &phi) in phis.iter().enumerate() {
        if phi < 0.0 {
            return Err(ObjectiveError::DomainError(format!(
                "phi[{i}] = {phi} is negative"
            )));
        }
        total += phi;
    }
    charbonnier(total)
}

/// Tape form of [`stream_kl`]. `penalty` selects the Charbonnier wrapper or
/// the identity (contrast runs).
pub fn stream_kl_node(
    tape: &mut Tape,
    phis: &[ValueId],
    penalty: KlPenalty,
) -> Result<ValueId, SubstrateError> {
    if phis.is_empty() {
        return Err(SubstrateError::invalid("stream_kl", "no per-step terms"));
    }
    let summed = tape.concat(phis)?;
    let total = tape.sum(summed)?;
    match penalty {
        KlPenalty::Charbonnier => charbonnier_node(tape, total),
        KlPenalty::Identity => Ok(total),
    }
}

/// Differentiable reconstruction terms over a window of predictions.
///
/// `preds` are the predicted frame vectors for steps `2..=n` (tape handles);
/// `targets` the matching ground-truth frames. The frame term is the mean
/// absolute error over translation elements plus the mean absolute error
/// over pose elements; the time-difference term applies the same measure to
/// consecutive-frame differences.
pub fn reconstruction_loss_node(
    tape: &mut Tape,
    preds: &[ValueId],
    targets: &[Tensor],
    frame_dim: usize,
) -> Result<(ValueId, ValueId), ObjectiveError> {
    if preds.len() != targets.len() {
        return Err(ObjectiveError::LengthMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.len() < 2 {
        return Err(ObjectiveError::LengthMismatch(
            "need at least 2 predictions for the time-difference term".into(),
        ));
    }
    let pose_dim = frame_dim - 3;
    for (i, t) in targets.iter().enumerate() {
        if t.len() != frame_dim {
            return Err(ObjectiveError::LengthMismatch(format!(
                "target {i} has {} values, expected {frame_dim}",
                t.len()
            )));
        }
    }

    let target_ids: Vec<ValueId> = targets.iter().map(|t| tape.input(t.clone())).collect();
    let split = |tape: &mut Tape, ids: &[ValueId]| -> Result<(Vec<ValueId>, Vec<ValueId>), SubstrateError> {
        let mut trans = Vec::with_capacity(ids.len());
        let mut pose = Vec::with_capacity(ids.len());
        for &id in ids {
            trans.push(tape.slice(id, 0, 3)?);
            pose.push(tape.slice(id, 3, pose_dim)?);
        }
        Ok((trans, pose))
    };
    let (pred_t, pred_p) = split(tape, preds)?;
    let (gt_t, gt_p) = split(tape, &target_ids)?;

    let mae = |tape: &mut Tape, a: &[ValueId], b: &[ValueId]| -> Result<ValueId, SubstrateError> {
        let ca = tape.concat(a)?;
        let cb = tape.concat(b)?;
        let d = tape.sub(ca, cb)?;
        let ad = tape.abs(d)?;
        tape.mean(ad)
    };
    let frame_t = mae(tape, &pred_t, &gt_t)?;
    let frame_p = mae(tape, &pred_p, &gt_p)?;
    let frame_term = tape.add(frame_t, frame_p)?;

    let diffs = |tape: &mut Tape, ids: &[ValueId]| -> Result<Vec<ValueId>, SubstrateError> {
        ids.windows(2).map(|w| tape.sub(w[1], w[0])).collect()
    };
    let dp_t = diffs(tape, &pred_t)?;
    let dp_p = diffs(tape, &pred_p)?;
    let dg_t = diffs(tape, &gt_t)?;
    let dg_p = diffs(tape, &gt_p)?;
    let td_t = mae(tape, &dp_t, &dg_t)?;
    let td_p = mae(tape, &dp_p, &dg_p)?;
    let timediff_term = tape.add(td_t, td_p)?;

    Ok((frame_term, timediff_term))
}

/// A prior over predicted poses (pelvis rotation excluded). Implementations
/// return a nonnegative scalar tape value.
pub trait PosePrior {
    /// `poses` holds one tape handle per predicted step, each the pose
    /// vector without the pelvis joint.
    fn loss(&self, tape: &mut Tape, poses: &[ValueId]) -> Result<ValueId, SubstrateError>;
}

/// Default prior: contributes nothing, which disables the term.
pub struct NullPrior;

impl PosePrior for NullPrior {
    fn loss(&self, tape: &mut Tape, _poses: &[ValueId]) -> Result<ValueId, SubstrateError> {
        Ok(tape.input(Tensor::from_raw(vec![1], vec![0.0])))
    }
}

/// Reference prior for tests: the squared Euclidean norm of the pose values.
pub struct SquaredNormPrior;

impl PosePrior for SquaredNormPrior {
    fn loss(&self, tape: &mut Tape, poses: &[ValueId]) -> Result<ValueId, SubstrateError> {
        if poses.is_empty() {
            return Ok(tape.input(Tensor::from_raw(vec![1], vec![0.0])));
        }
        let all = tape.concat(poses)?;
        let sq = tape.mul(all, all)?;
        tape.sum(sq)
    }
}

/// Tape handles of every loss component.
#[derive(Debug, Clone)]
pub struct LossNodes {
    pub recon_frame: ValueId,
    pub recon_timediff: ValueId,
    /// Per-stream wrapped KL values (empty for models trained without a KL
    /// term).
    pub kl_streams: Vec<ValueId>,
    pub pose_prior: ValueId,
    pub total: ValueId,
    /// Negative ELBO: total without the pose-prior term.
    pub neg_log_p: ValueId,
}

/// Weighted total
/// `L = recon_frame + lambda_ts * recon_timediff + lambda_kl * mean(stream KLs) + lambda_vp * prior`,
/// with the KL mean taken across streams. Also assembles the negative ELBO
/// (identical except the pose-prior term is excluded).
pub fn total_loss_node(
    tape: &mut Tape,
    recon_frame: ValueId,
    recon_timediff: ValueId,
    kl_streams: &[ValueId],
    pose_prior: ValueId,
    weights: &LossWeights,
) -> Result<LossNodes, SubstrateError> {
    let ts = tape.scale(recon_timediff, weights.lambda_ts)?;
    let mut neg_log_p = tape.add(recon_frame, ts)?;
    if !kl_streams.is_empty() {
        let stacked = tape.concat(kl_streams)?;
        let kl_mean = tape.mean(stacked)?;
        let kl_term = tape.scale(kl_mean, weights.lambda_kl)?;
        neg_log_p = tape.add(neg_log_p, kl_term)?;
    }
    let prior_term = tape.scale(pose_prior, weights.lambda_vp)?;
    let total = tape.add(neg_log_p, prior_term)?;
    Ok(LossNodes {
        recon_frame,
        recon_timediff,
        kl_streams: kl_streams.to_vec(),
        pose_prior,
        total,
        neg_log_p,
    })
}

/// Loss component values for logging and reports. For single-stream models
/// both KL fields carry the stream's value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon_frame: f64,
    pub recon_timediff: f64,
    pub kl_translation_stream: f64,
    pub kl_pose_stream: f64,
    pub pose_prior: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_nodes(tape: &Tape, nodes: &LossNodes) -> Self {
        let read = |id: ValueId| tape.value(id).item();
        let (kl_t, kl_p) = match nodes.kl_streams.len() {
            0 => (0.0, 0.0),
            1 => {
                let v = read(nodes.kl_streams[0]);
                (v, v)
            }
            _ => (read(nodes.kl_streams[0]), read(nodes.kl_streams[1])),
        };
        LossBreakdown {
            recon_frame: read(nodes.recon_frame),
            recon_timediff: read(nodes.recon_timediff),
            kl_translation_stream: kl_t,
            kl_pose_stream: kl_p,
            pose_prior: read(nodes.pose_prior),
            total: read(nodes.total),
        }
    }

    /// Negative ELBO: the weighted total without the pose-prior term.
    pub fn neg_log_p(&self, weights: &LossWeights) -> f64 {
        self.recon_frame
            + weights.lambda_ts * self.recon_timediff
            + weights.lambda_kl * (self.kl_translation_stream + self.kl_pose_stream) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::seeded_rng;
    use rand::Rng;

    #[test]
    fn charbonnier_closed_forms() {
        assert_eq!(charbonnier(0.0).unwrap(), 0.0);
        assert!((charbonnier(1.0).unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((charbonnier(3.0).unwrap() - (10f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!(charbonnier(-0.1).is_err());
    }

    #[test]
    fn charbonnier_gradient_matches_finite_differences() {
        for &s in &[0.01f64, 0.5, 1.0, 10.0] {
            let h = 1e-6;
            let fd = ((1.0 + (s + h) * (s + h)).sqrt() - (1.0 + (s - h) * (s - h)).sqrt()) / (2.0 * h);
            assert!((charbonnier_grad(s) - fd).abs() <= 1e-8, "s = {s}");
            // And the tape route agrees with the analytic form.
            let mut tape = Tape::new();
            let x = tape.param(Tensor::scalar(s).unwrap());
            let y = charbonnier_node(&mut tape, x).unwrap();
            let grads = tape.backward(y).unwrap();
            assert!((grads.wrt(x).data()[0] - charbonnier_grad(s)).abs() <= 1e-12);
        }
    }

    #[test]
    fn collapse_gradient_is_damped_near_zero() {
        // The unwrapped KL has slope 1; at s = 0.01 the wrapped slope must be
        // at most 0.011 of it.
        let ratio = charbonnier_grad(0.01) / 1.0;
        assert!(ratio <= 0.011, "ratio {ratio}");
        assert!(ratio > 0.0);
    }

    #[test]
    fn kl_unit_gaussian_closed_forms() {
        let g = |mu: f64, var: f64| LatentGaussian {
            mean: Tensor::vector(vec![mu]).unwrap(),
            log_var: Tensor::vector(vec![var.ln()]).unwrap(),
        };
        assert!(kl_unit_gaussian(&g(0.0, 1.0)).abs() < 1e-15);
        assert!((kl_unit_gaussian(&g(1.0, 1.0)) - 1.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((kl_unit_gaussian(&g(0.0, e)) - (e - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn kl_node_matches_value_form() {
        let mut rng = seeded_rng(4);
        for _ in 0..20 {
            let mean = Tensor::vector((0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let log_var = Tensor::vector((0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let g = LatentGaussian { mean: mean.clone(), log_var: log_var.clone() };
            let mut tape = Tape::new();
            let nodes = LatentNodes {
                mean: tape.input(mean),
                log_var: tape.input(log_var),
            };
            let id = kl_unit_gaussian_node(&mut tape, &nodes).unwrap();
            assert!((tape.value(id).item() - kl_unit_gaussian(&g)).abs() < 1e-12);
        }
    }

    #[test]
    fn stream_kl_closed_forms_and_bound() {
        assert_eq!(stream_kl(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((stream_kl(&[1.0, 1.0]).unwrap() - (5f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!(stream_kl(&[0.5, -0.1]).is_err());

        let mut rng = seeded_rng(8);
        for _ in 0..1000 {
            let n = rng.random_range(1..=64);
            let phis: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            let total: f64 = phis.iter().sum();
            let wrapped = stream_kl(&phis).unwrap();
            assert!(wrapped <= total + 1e-12);
            if total > 0.0 {
                assert!(wrapped < total);
            }
        }
    }

    #[test]
    fn charbonnier_is_non_additive_with_positive_coupling() {
        // psi is convex with psi(0) = 0, so it is strictly superadditive:
        // wrapping the summed KL penalizes jointly more than wrapping each
        // term alone, which is exactly the cross-step coupling the wrapper
        // introduces. (The reverse inequality cannot hold for any convex
        // penalty that vanishes at zero.)
        let mut rng = seeded_rng(12);
        for _ in 0..500 {
            let a: f64 = rng.random_range(1e-3..10.0);
            let b: f64 = rng.random_range(1e-3..10.0);
            let joint = charbonnier(a + b).unwrap();
            let separate = charbonnier(a).unwrap() + charbonnier(b).unwrap();
            assert!(joint > separate, "psi({a}+{b}) = {joint} !> {separate}");
            // And the joint penalty still never exceeds the unwrapped sum.
            assert!(joint <= a + b);
        }
    }

    fn recon_case(
        preds: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        frame_dim: usize,
    ) -> (f64, f64) {
        let mut tape = Tape::new();
        let pred_ids: Vec<ValueId> = preds
            .into_iter()
            .map(|p| tape.input(Tensor::vector(p).unwrap()))
            .collect();
        let target_tensors: Vec<Tensor> = targets
            .into_iter()
            .map(|t| Tensor::vector(t).unwrap())
            .collect();
        let (f, td) = reconstruction_loss_node(&mut tape, &pred_ids, &target_tensors, frame_dim).unwrap();
        (tape.value(f).item(), tape.value(td).item())
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let frames = vec![vec![0.1; 9], vec![0.2; 9], vec![0.3; 9]];
        let (f, td) = recon_case(frames.clone(), frames, 9);
        assert_eq!(f, 0.0);
        assert_eq!(td, 0.0);
    }

    #[test]
    fn constant_translation_offset_cancels_in_differences() {
        let mk = |base: f64, shift: f64| -> Vec<Vec<f64>> {
            (0..4)
                .map(|i| {
                    let mut v = vec![0.0; 9];
                    v[0] = base + i as f64 * 0.3 + shift;
                    v[1] = base - i as f64 * 0.1 + shift;
                    v[2] = shift;
                    v
                })
                .collect()
        };
        let targets = mk(0.5, 0.0);
        let preds = mk(0.5, 0.1);
        let (f, td) = recon_case(preds, targets, 9);
        assert!((f - 0.1).abs() < 1e-15, "frame term {f}");
        assert!(td.abs() < 1e-15, "timediff term {td}");
    }

    #[test]
    fn three_frame_hand_case() {
        // Targets for steps 2..3 are 1 and 2 in the first translation slot;
        // predictions are 1 and 1. Remaining coordinates are zero, so the
        // translation MAE is averaged over 2 steps x 3 dims = 6 elements and
        // the hand numbers below account for that.
        let targets = vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let preds = vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let (f, td) = recon_case(preds, targets, 9);
        // |1-1| + |1-2| over 6 translation elements = 1/6; poses contribute 0.
        assert!((f - 1.0 / 6.0).abs() < 1e-15);
        // Prediction diff 0 vs target diff 1 over 3 translation elements.
        assert!((td - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn null_prior_is_zero_and_quadratic_prior_sums_squares() {
        let mut tape = Tape::new();
        let poses: Vec<ValueId> = (0..3)
            .map(|_| tape.input(Tensor::filled(&[12], 1.0)))
            .collect();
        let z = NullPrior.loss(&mut tape, &poses).unwrap();
        assert_eq!(tape.value(z).item(), 0.0);
        let q = SquaredNormPrior.loss(&mut tape, &poses).unwrap();
        assert_eq!(tape.value(q).item(), 36.0);
        let zero_poses: Vec<ValueId> = (0..2).map(|_| tape.input(Tensor::zeros(&[12]))).collect();
        let q0 = SquaredNormPrior.loss(&mut tape, &zero_poses).unwrap();
        assert_eq!(tape.value(q0).item(), 0.0);
    }

    #[test]
    fn total_loss_hand_case() {
        let weights = LossWeights::default();
        assert_eq!(weights.lambda_ts, 5.0);
        assert_eq!(weights.lambda_vp, 1e-4);
        assert_eq!(weights.lambda_kl, 1.0);

        let mut tape = Tape::new();
        let rf = tape.input(Tensor::scalar(0.2).unwrap());
        let rt = tape.input(Tensor::scalar(0.1).unwrap());
        let k1 = tape.input(Tensor::scalar(0.4).unwrap());
        let k2 = tape.input(Tensor::scalar(0.0).unwrap());
        let prior = tape.input(Tensor::scalar(0.0).unwrap());
        let nodes = total_loss_node(&mut tape, rf, rt, &[k1, k2], prior, &weights).unwrap();
        let breakdown = LossBreakdown::from_nodes(&tape, &nodes);
        assert!((breakdown.total - 0.9).abs() < 1e-15);
        assert!((tape.value(nodes.neg_log_p).item() - 0.9).abs() < 1e-15);
        assert!((breakdown.neg_log_p(&weights) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_components_give_zero_total() {
        let weights = LossWeights::default();
        let mut tape = Tape::new();
        let z = tape.input(Tensor::scalar(0.0).unwrap());
        let nodes = total_loss_node(&mut tape, z, z, &[z, z], z, &weights).unwrap();
        assert_eq!(tape.value(nodes.total).item(), 0.0);
        assert_eq!(tape.value(nodes.neg_log_p).item(), 0.0);
    }
}
