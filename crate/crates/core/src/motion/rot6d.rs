//! 6D continuous rotation representation: a rotation matrix is encoded as its
//! first two columns (each column's 3 components contiguous) and decoded by
//! Gram-Schmidt orthogonalization.

use super::MotionError;

pub type Vec3 = [f64; 3];
/// Row-major 3x3 matrix: `m[row][col]`.
pub type Mat3 = [[f64; 3]; 3];

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, o) in row.iter_mut().enumerate() {
            *o = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn column(m: &Mat3, c: usize) -> Vec3 {
    [m[0][c], m[1][c], m[2][c]]
}

/// Checks `|M^T M - I|_max <= tol` and `|det M - 1| <= tol`.
pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    let mt = transpose(m);
    let g = mat_mul(&mt, m);
    let mut max_dev: f64 = 0.0;
    for (i, row) in g.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((v - target).abs());
        }
    }
    max_dev <= tol && (det(m) - 1.0).abs() <= tol
}

// Relative tolerance below which the second column is considered parallel to
// the first.
const PARALLEL_EPS: f64 = 1e-9;

/// Decodes a 6-vector `[first column, second column]` into a rotation matrix.
///
/// The first column is normalized, the second is Gram-Schmidt
/// orthogonalized, and the third is their cross product, so the result is
/// orthonormal with determinant +1 for any non-degenerate input.
pub fn rot6d_to_matrix(v: &[f64; 6]) -> Result<Mat3, MotionError> {
    let a = [v[0], v[1], v[2]];
    let b = [v[3], v[4], v[5]];
    let na = norm(&a);
    if !na.is_normal() {
        return Err(MotionError::DegenerateRotation(format!(
            "first column has norm {na}"
        )));
    }
    let c1 = [a[0] / na, a[1] / na, a[2] / na];
    let proj = dot(&c1, &b);
    let r = [b[0] - proj * c1[0], b[1] - proj * c1[1], b[2] - proj * c1[2]];
    let nb = norm(&b);
    let nr = norm(&r);
    if !nr.is_normal() || nr <= PARALLEL_EPS * nb {
        return Err(MotionError::DegenerateRotation(
            "second column is parallel to the first".into(),
        ));
    }
    let c2 = [r[0] / nr, r[1] / nr, r[2] / nr];
    let c3 = cross(&c1, &c2);
    Ok([
        [c1[0], c2[0], c3[0]],
        [c1[1], c2[1], c3[1]],
        [c1[2], c2[2], c3[2]],
    ])
}

/// Encodes a rotation matrix as its first two columns.
pub fn matrix_to_rot6d(m: &Mat3) -> Result<[f64; 6], MotionError> {
    if !is_rotation(m, 1e-6) {
        return Err(MotionError::NotARotation(format!(
            "matrix deviates from SO(3) beyond 1e-6: {m:?}"
        )));
    }
    let c1 = column(m, 0);
    let c2 = column(m, 1);
    Ok([c1[0], c1[1], c1[2], c2[0], c2[1], c2[2]])
}

/// Rodrigues rotation about a unit axis by `angle` radians.
pub fn axis_angle_matrix(axis: &Vec3, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = *axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Rotation about the Z axis by `yaw` radians.
pub fn yaw_matrix(yaw: f64) -> Mat3 {
    axis_angle_matrix(&[0.0, 0.0, 1.0], yaw)
}
