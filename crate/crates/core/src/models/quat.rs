//! Scalar-first quaternion helpers on raw slices `(w, x, y, z)`.
//!
//! The optimizer treats the quaternion as a free 4-vector, so none of these
//! assume unit norm.

/// Rotation matrix `R(q)` (body to world), evaluated with the unit-norm formula.
pub fn rotation(q: &[f64]) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(q: &[f64], v: &[f64]) -> [f64; 3] {
    let r = rotation(q);
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(r) {
        *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    }
    out
}

/// `½ q ⊗ (0, ω)` written into `dq`.
pub fn kinematics(q: &[f64], omega: &[f64], dq: &mut [f64]) {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let (p, r, s) = (omega[0], omega[1], omega[2]);
    dq[0] = -0.5 * (x * p + y * r + z * s);
    dq[1] = 0.5 * (w * p + y * s - z * r);
    dq[2] = 0.5 * (w * r + z * p - x * s);
    dq[3] = 0.5 * (w * s + x * r - y * p);
}

/// Scales the quaternion stored at `q` to unit norm (no-op for the zero vector).
pub fn normalize(q: &mut [f64]) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n > 0.0 {
        q.iter_mut().for_each(|c| *c /= n);
    }
}

pub fn norm(q: &[f64]) -> f64 {
    q[..4].iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Euler's rotation equation `J⁻¹(τ − ω × Jω)` for diagonal `J`.
pub fn euler_rates(inertia: &[f64; 3], omega: &[f64], torque: &[f64]) -> [f64; 3] {
    let jw = [inertia[0] * omega[0], inertia[1] * omega[1], inertia[2] * omega[2]];
    let gyro = cross(omega, &jw);
    [
        (torque[0] - gyro[0]) / inertia[0],
        (torque[1] - gyro[1]) / inertia[1],
        (torque[2] - gyro[2]) / inertia[2],
    ]
}
