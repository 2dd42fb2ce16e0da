//! Motion data model: frames of global translation plus per-joint 6D
//! rotations, world-frame canonicalization, the PMF/1 file format, and a
//! synthetic oscillatory data source.

mod canonical;
mod codec;
mod rot6d;
mod synth;

pub use canonical::{apply_transform, canonicalize, RigidTransform};
pub use codec::{motion_from_text, motion_to_text, read_motion_file, write_motion_file};
pub use rot6d::{
    axis_angle_matrix, cross, dot, is_rotation, mat_mul, mat_vec, matrix_to_rot6d, norm,
    rot6d_to_matrix, transpose, yaw_matrix, Mat3, Vec3,
};
pub use synth::{synth_generate, JointOscillation, SkeletonSpec};

use thiserror::Error;

/// Index of the root (pelvis) joint in kinematic-tree order. Its rotation is
/// the body's global orientation; all other joints are parent-relative.
pub const PELVIS: usize = 0;

/// Default body joint count.
pub const DEFAULT_JOINT_COUNT: usize = 22;

#[derive(Debug, Error)]
pub enum MotionError {
    /// A 6D rotation vector cannot be orthogonalized (zero or parallel columns).
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    /// The matrix handed to the 6D encoder is not a rotation within tolerance.
    #[error("not a rotation matrix: {0}")]
    NotARotation(String),
    /// The first-frame hip direction has no horizontal component.
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),
    /// A PMF/1 file violates the format.
    #[error("format error at line {line}: {detail}")]
    FormatError { line: usize, detail: String },
    /// A per-joint oscillation frequency is at or above the Nyquist limit.
    #[error("Nyquist violation: joint {joint} oscillates at {frequency} Hz >= fps/2 = {limit} Hz")]
    NyquistViolation { joint: usize, frequency: f64, limit: f64 },
    /// A structural invariant of a sequence is broken.
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One motion frame: world translation plus `6 * J` pose values (per-joint
/// rotations in the 6D representation, kinematic-tree order).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub translation: Vec3,
    pub pose: Vec<f64>,
}

impl Frame {
    pub fn new(translation: Vec3, pose: Vec<f64>) -> Result<Self, MotionError> {
        if !translation.iter().chain(pose.iter()).all(|v| v.is_finite()) {
            return Err(MotionError::InvalidSequence("non-finite value in frame".into()));
        }
        if !pose.len().is_multiple_of(6) || pose.is_empty() {
            return Err(MotionError::InvalidSequence(format!(
                "pose length {} is not a positive multiple of 6",
                pose.len()
            )));
        }
        Ok(Frame { translation, pose })
    }

    pub fn joint_count(&self) -> usize {
        self.pose.len() / 6
    }

    /// The 6 rotation values of one joint.
    pub fn joint(&self, j: usize) -> &[f64] {
        &self.pose[6 * j..6 * j + 6]
    }

    /// Flat `[translation, pose]` vector of length `3 + 6J`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + self.pose.len());
        v.extend_from_slice(&self.translation);
        v.extend_from_slice(&self.pose);
        v
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, MotionError> {
        if values.len() < 9 || !(values.len() - 3).is_multiple_of(6) {
            return Err(MotionError::InvalidSequence(format!(
                "frame vector length {} != 3 + 6J",
                values.len()
            )));
        }
        Frame::new(
            [values[0], values[1], values[2]],
            values[3..].to_vec(),
        )
    }

    /// Decodes every joint, verifying the pose represents valid rotations.
    pub fn decode_rotations(&self) -> Result<Vec<Mat3>, MotionError> {
        (0..self.joint_count())
            .map(|j| {
                let s = self.joint(j);
                rot6d_to_matrix(&[s[0], s[1], s[2], s[3], s[4], s[5]])
            })
            .collect()
    }
}

/// An ordered sequence of frames at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: u32,
    joint_count: usize,
    frames: Vec<Frame>,
}

impl MotionSequence {
    pub fn new(fps: u32, joint_count: usize, frames: Vec<Frame>) -> Result<Self, MotionError> {
        if fps == 0 {
            return Err(MotionError::InvalidSequence("fps must be positive".into()));
        }
        if joint_count == 0 {
            return Err(MotionError::InvalidSequence("joint count must be positive".into()));
        }
        if frames.is_empty() {
            return Err(MotionError::InvalidSequence("sequence needs at least one frame".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.joint_count() != joint_count {
                return Err(MotionError::InvalidSequence(format!(
                    "frame {} has {} joints, expected {}",
                    i,
                    f.joint_count(),
                    joint_count
                )));
            }
        }
        Ok(MotionSequence { fps, joint_count, frames })
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    /// Values per frame: `3 + 6J`.
    pub fn frame_dim(&self) -> usize {
        3 + 6 * self.joint_count
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Frame] {
        &mut self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    /// Sub-sequence `[start, start + len)` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> MotionSequence {
        MotionSequence {
            fps: self.fps,
            joint_count: self.joint_count,
            frames: self.frames[start..start + len].to_vec(),
        }
    }

    /// Per-frame Euclidean norms of consecutive full-frame differences
    /// (length `len - 1`).
    pub fn frame_increments(&self) -> Vec<f64> {
        self.frames
            .windows(2)
            .map(|w| {
                let a = w[0].to_vec();
                let b = w[1].to_vec();
                a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            })
            .collect()
    }

    /// Per-frame Euclidean norms of consecutive translation differences.
    pub fn translation_increments(&self) -> Vec<f64> {
        self.frames
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0].translation, &w[1].translation);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            })
            .collect()
    }
}
