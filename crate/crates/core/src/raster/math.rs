//! Small closed-form helpers for the projection chain and its adjoints.

use nalgebra::{Matrix3, Vector3};

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_mat(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the (unit) quaternion it
/// was built from.
pub fn quat_to_mat_vjp(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

/// Normalizes a quaternion, returning the unit quaternion and the input norm.
pub fn normalize_quat(q: [f64; 4]) -> ([f64; 4], f64) {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// Gradient through `q / |q|`.
pub fn normalize_quat_vjp(q_hat: [f64; 4], norm: f64, g: [f64; 4]) -> [f64; 4] {
    let dot: f64 = (0..4).map(|k| q_hat[k] * g[k]).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (g[k] - q_hat[k] * dot) / norm;
    }
    out
}

pub fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_quaternion_is_identity_matrix() {
        assert_eq!(quat_to_mat([1.0, 0.0, 0.0, 0.0]), Matrix3::identity());
    }

    #[test]
    fn quaternion_matrix_is_orthonormal() {
        let (q, _) = normalize_quat([0.3, -0.5, 0.7, 0.2]);
        let r = quat_to_mat(q);
        assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quaternion_vjp_matches_finite_differences() {
        let q = [0.4, -0.2, 0.6, 0.1];
        let g = Matrix3::new(0.3, -1.0, 0.5, 0.2, 0.7, -0.4, 1.1, 0.05, -0.6);
        let f = |q: [f64; 4]| quat_to_mat(q).component_mul(&g).sum();
        let analytic = quat_to_mat_vjp(q, &g);
        for k in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (f(qp) - f(qm)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-8, "component {k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn normalization_vjp_matches_finite_differences() {
        let q = [0.9, 0.3, -0.4, 0.2];
        let g = [0.5, -0.25, 1.0, 0.75];
        let f = |q: [f64; 4]| {
            let (u, _) = normalize_quat(q);
            (0..4).map(|k| u[k] * g[k]).sum::<f64>()
        };
        let (u, n) = normalize_quat(q);
        let analytic = normalize_quat_vjp(u, n, g);
        for k in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (f(qp) - f(qm)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-8);
        }
    }
}
