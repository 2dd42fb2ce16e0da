//! Synthetic oscillatory skeleton data: each joint swings about a fixed
//! seed-derived axis with its own amplitude, frequency, and phase, while the
//! body drifts at a constant velocity. Deterministic given the seed, and a
//! convenient stand-in for motion-capture data at desk scale.

use rand::Rng;

use crate::autodiff::seeded_rng;

use super::rot6d::{axis_angle_matrix, matrix_to_rot6d, Vec3};
use super::{Frame, MotionError, MotionSequence};

/// Per-joint sinusoidal rotation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOscillation {
    /// Swing amplitude in radians (>= 0).
    pub amplitude: f64,
    /// Oscillation frequency in Hz; must stay below fps/2.
    pub frequency: f64,
    /// Phase offset in radians.
    pub phase: f64,
}

/// Parameters of a synthetic skeleton: one oscillation per joint plus a
/// constant world-frame drift velocity in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    pub oscillations: Vec<JointOscillation>,
    pub velocity: Vec3,
}

impl SkeletonSpec {
    pub fn joint_count(&self) -> usize {
        self.oscillations.len()
    }

    /// Same oscillation for every joint.
    pub fn uniform(joints: usize, amplitude: f64, frequency: f64, phase: f64, velocity: Vec3) -> Self {
        SkeletonSpec {
            oscillations: vec![JointOscillation { amplitude, frequency, phase }; joints],
            velocity,
        }
    }

    /// Draws per-joint parameters uniformly from the given ranges.
    pub fn random(
        joints: usize,
        amplitude_range: (f64, f64),
        frequency_range: (f64, f64),
        velocity: Vec3,
        rng: &mut impl Rng,
    ) -> Self {
        let oscillations = (0..joints)
            .map(|_| JointOscillation {
                amplitude: rng.random_range(amplitude_range.0..=amplitude_range.1),
                frequency: rng.random_range(frequency_range.0..=frequency_range.1),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        SkeletonSpec { oscillations, velocity }
    }

    fn validate(&self, fps: u32) -> Result<(), MotionError> {
        if self.oscillations.is_empty() {
            return Err(MotionError::InvalidSequence("skeleton needs at least one joint".into()));
        }
        let limit = fps as f64 / 2.0;
        for (j, osc) in self.oscillations.iter().enumerate() {
            if osc.amplitude < 0.0 {
                return Err(MotionError::InvalidSequence(format!(
                    "joint {j} has negative amplitude {}",
                    osc.amplitude
                )));
            }
            if osc.frequency >= limit {
                return Err(MotionError::NyquistViolation {
                    joint: j,
                    frequency: osc.frequency,
                    limit,
                });
            }
        }
        Ok(())
    }
}

fn random_unit_axis(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Generates `n_frames` of motion at `fps`. Joint `j` rotates about a fixed
/// seed-derived axis by `a_j * sin(2 pi f_j t + phi_j)`; translation is
/// `velocity * t`.
pub fn synth_generate(
    spec: &SkeletonSpec,
    fps: u32,
    n_frames: usize,
    seed: u64,
) -> Result<MotionSequence, MotionError> {
    if fps == 0 {
        return Err(MotionError::InvalidSequence("fps must be positive".into()));
    }
    if n_frames == 0 {
        return Err(MotionError::InvalidSequence("need at least one frame".into()));
    }
    spec.validate(fps)?;

    let mut rng = seeded_rng(seed);
    let axes: Vec<Vec3> = (0..spec.joint_count()).map(|_| random_unit_axis(&mut rng)).collect();

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = i as f64 / fps as f64;
        let translation = [
            spec.velocity[0] * t,
            spec.velocity[1] * t,
            spec.velocity[2] * t,
        ];
        let mut pose = Vec::with_capacity(6 * spec.joint_count());
        for (osc, axis) in spec.oscillations.iter().zip(&axes) {
            let angle = osc.amplitude * (std::f64::consts::TAU * osc.frequency * t + osc.phase).sin();
            let m = axis_angle_matrix(axis, angle);
            pose.extend_from_slice(&matrix_to_rot6d(&m).expect("rotation by construction"));
        }
        frames.push(Frame::new(translation, pose)?);
    }
    MotionSequence::new(fps, spec.joint_count(), frames)
}
