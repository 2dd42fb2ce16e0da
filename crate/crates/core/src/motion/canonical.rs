//! World-frame canonicalization.
//!
//! Sequences are assumed gravity-aligned already (Z up). Canonical
//! coordinates place the first-frame pelvis at the origin and align the
//! horizontal left-hip-to-right-hip direction with +X; Y follows the
//! right-hand rule. In the zero pose the lateral hip axis is the body-local
//! +X, so the world hip direction is the pelvis rotation applied to `e_x`.

use super::rot6d::{mat_mul, mat_vec, matrix_to_rot6d, rot6d_to_matrix, yaw_matrix, Mat3, Vec3};
use super::{Frame, MotionError, MotionSequence, PELVIS};

/// Rigid transform `p -> R p + t`. [`canonicalize`] returns the transform
/// that maps canonical coordinates back to the input coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Heading angle of the rotation about Z.
    pub fn yaw(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }
}

fn pelvis_rotation(frame: &Frame) -> Result<Mat3, MotionError> {
    let s = frame.joint(PELVIS);
    rot6d_to_matrix(&[s[0], s[1], s[2], s[3], s[4], s[5]])
}

/// Rewrites a sequence in canonical coordinates and returns the rigid
/// transform mapping the canonical sequence back to the input exactly.
pub fn canonicalize(seq: &MotionSequence) -> Result<(MotionSequence, RigidTransform), MotionError> {
    let first = seq.frame(0);
    let pelvis = pelvis_rotation(first)?;
    let hip_dir = mat_vec(&pelvis, &[1.0, 0.0, 0.0]);
    let horizontal = (hip_dir[0] * hip_dir[0] + hip_dir[1] * hip_dir[1]).sqrt();
    if horizontal <= 1e-9 {
        return Err(MotionError::DegeneratePose(
            "hip direction is vertical; heading is undefined".into(),
        ));
    }
    let yaw = hip_dir[1].atan2(hip_dir[0]);
    let undo = yaw_matrix(-yaw);
    let origin = first.translation;

    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let shifted = [
                f.translation[0] - origin[0],
                f.translation[1] - origin[1],
                f.translation[2] - origin[2],
            ];
            let translation = mat_vec(&undo, &shifted);
            let mut pose = f.pose.clone();
            let rotated = mat_mul(&undo, &pelvis_rotation(f)?);
            pose[6 * PELVIS..6 * PELVIS + 6].copy_from_slice(&matrix_to_rot6d(&rotated)?);
            Frame::new(translation, pose)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let canonical = MotionSequence::new(seq.fps(), seq.joint_count(), frames)?;
    let transform = RigidTransform {
        rotation: yaw_matrix(yaw),
        translation: origin,
    };
    Ok((canonical, transform))
}

/// Applies a rigid transform to a whole sequence: translations move by
/// `R p + t` and the global (pelvis) orientation is premultiplied by `R`.
/// Inverse of [`canonicalize`] when given its returned transform.
pub fn apply_transform(seq: &MotionSequence, t: &RigidTransform) -> Result<MotionSequence, MotionError> {
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let translation = t.apply_point(&f.translation);
            let mut pose = f.pose.clone();
            let rotated = mat_mul(&t.rotation, &pelvis_rotation(f)?);
            pose[6 * PELVIS..6 * PELVIS + 6].copy_from_slice(&matrix_to_rot6d(&rotated)?);
            Frame::new(translation, pose)
        })
        .collect::<Result<Vec<_>, _>>()?;
    MotionSequence::new(seq.fps(), seq.joint_count(), frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth::{synth_generate, SkeletonSpec};
    use crate::motion::{matrix_to_rot6d, yaw_matrix};

    fn toy_sequence() -> MotionSequence {
        let spec = SkeletonSpec::uniform(3, 0.4, 1.0, 0.0, [0.3, 0.1, 0.0]);
        synth_generate(&spec, 30, 40, 5).unwrap()
    }

    fn max_abs_diff(a: &MotionSequence, b: &MotionSequence) -> f64 {
        a.frames()
            .iter()
            .zip(b.frames())
            .flat_map(|(x, y)| {
                x.to_vec()
                    .into_iter()
                    .zip(y.to_vec())
                    .map(|(u, v)| (u - v).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn already_canonical_is_unchanged() {
        let seq = toy_sequence();
        let (canon, t) = canonicalize(&seq).unwrap();
        // Synthetic data starts at the origin facing +X.
        assert!(max_abs_diff(&seq, &canon) < 1e-12);
        assert!((t.yaw()).abs() < 1e-12);
        assert!(t.translation.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn shift_is_recovered_in_transform() {
        let seq = toy_sequence();
        let shifted = apply_transform(
            &seq,
            &RigidTransform {
                rotation: yaw_matrix(0.0),
                translation: [5.0, 5.0, 0.0],
            },
        )
        .unwrap();
        let (canon, t) = canonicalize(&shifted).unwrap();
        assert!(canon.frame(0).translation.iter().all(|v| v.abs() < 1e-12));
        assert!((t.translation[0] - 5.0).abs() < 1e-12);
        assert!((t.translation[1] - 5.0).abs() < 1e-12);
        assert!(t.translation[2].abs() < 1e-12);
    }

    #[test]
    fn known_yaw_is_recovered() {
        let seq = toy_sequence();
        for &psi in &[0.3, -1.2, 2.9] {
            let rotated = apply_transform(
                &seq,
                &RigidTransform {
                    rotation: yaw_matrix(psi),
                    translation: [1.0, -2.0, 0.5],
                },
            )
            .unwrap();
            let (canon, t) = canonicalize(&rotated).unwrap();
            assert!((t.yaw() - psi).abs() < 1e-9, "yaw {} vs {}", t.yaw(), psi);
            // Applying the returned transform to the canonical sequence
            // reproduces the input.
            let back = apply_transform(&canon, &t).unwrap();
            assert!(max_abs_diff(&back, &rotated) < 1e-9);
        }
    }

    #[test]
    fn idempotent() {
        let seq = toy_sequence();
        let moved = apply_transform(
            &seq,
            &RigidTransform {
                rotation: yaw_matrix(1.1),
                translation: [3.0, 4.0, 0.0],
            },
        )
        .unwrap();
        let (once, _) = canonicalize(&moved).unwrap();
        let (twice, t2) = canonicalize(&once).unwrap();
        assert!(max_abs_diff(&once, &twice) < 1e-9);
        assert!(t2.yaw().abs() < 1e-9);
    }

    #[test]
    fn vertical_hip_direction_is_degenerate() {
        let seq = toy_sequence();
        // Pitch the pelvis 90 degrees about Y: e_x maps to -e_z (vertical).
        let pitch = crate::motion::axis_angle_matrix(&[0.0, 1.0, 0.0], std::f64::consts::FRAC_PI_2);
        let mut frames = seq.frames().to_vec();
        for f in &mut frames {
            let r = crate::motion::rot6d_to_matrix(&[
                f.pose[0], f.pose[1], f.pose[2], f.pose[3], f.pose[4], f.pose[5],
            ])
            .unwrap();
            let m = crate::motion::mat_mul(&pitch, &r);
            f.pose[0..6].copy_from_slice(&matrix_to_rot6d(&m).unwrap());
        }
        let tilted = MotionSequence::new(seq.fps(), seq.joint_count(), frames).unwrap();
        assert!(matches!(
            canonicalize(&tilted),
            Err(MotionError::DegeneratePose(_))
        ));
    }
}
