//! Unit primitive shapes shared by point-cloud initialization and the
//! procedural target renderer.
//!
//! Every primitive lives in a local frame centered at the origin with a
//! bounding extent of 1 along its longest axis (box half-extent 1, cylinder
//! radius 1 and half-height 1). Placement applies `size * Rz(orientation) * p + center`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Semi-axes of the unit ellipsoid.
pub const ELLIPSOID_AXES: [f64; 3] = [1.0, 0.75, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Sphere,
    Box,
    Ellipsoid,
    Cylinder,
}

impl Primitive {
    /// Radius of the smallest origin-centered sphere enclosing the unit shape.
    pub fn bounding_radius(self) -> f64 {
        match self {
            Primitive::Sphere | Primitive::Ellipsoid => 1.0,
            Primitive::Box => 3f64.sqrt(),
            Primitive::Cylinder => 2f64.sqrt(),
        }
    }

    /// Maps three uniforms in `[0,1)` to a point uniformly distributed over the
    /// unit shape's volume.
    pub fn sample_volume(self, u: [f64; 3]) -> Vector3<f64> {
        use std::f64::consts::PI;
        match self {
            Primitive::Box => Vector3::new(2.0 * u[0] - 1.0, 2.0 * u[1] - 1.0, 2.0 * u[2] - 1.0),
            Primitive::Sphere | Primitive::Ellipsoid => {
                let z = 2.0 * u[0] - 1.0;
                let phi = 2.0 * PI * u[1];
                let r = u[2].cbrt();
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let p = Vector3::new(rho * phi.cos(), rho * phi.sin(), z) * r;
                if self == Primitive::Ellipsoid {
                    p.component_mul(&Vector3::from(ELLIPSOID_AXES))
                } else {
                    p
                }
            }
            Primitive::Cylinder => {
                let r = u[0].sqrt();
                let phi = 2.0 * PI * u[1];
                Vector3::new(r * phi.cos(), r * phi.sin(), 2.0 * u[2] - 1.0)
            }
        }
    }

    /// Nearest ray hit with the unit shape in its local frame.
    ///
    /// Returns the ray parameter and the outward surface normal (not normalized).
    pub fn intersect(self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Primitive::Sphere => intersect_ellipsoid(origin, dir, &Vector3::new(1.0, 1.0, 1.0)),
            Primitive::Ellipsoid => intersect_ellipsoid(origin, dir, &Vector3::from(ELLIPSOID_AXES)),
            Primitive::Box => intersect_box(origin, dir),
            Primitive::Cylinder => intersect_cylinder(origin, dir),
        }
    }

    pub fn contains(self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Sphere => p.norm_squared() <= 1.0,
            Primitive::Ellipsoid => {
                let a = Vector3::from(ELLIPSOID_AXES);
                p.component_div(&a).norm_squared() <= 1.0
            }
            Primitive::Box => p.iter().all(|c| c.abs() <= 1.0),
            Primitive::Cylinder => p.x * p.x + p.y * p.y <= 1.0 && p.z.abs() <= 1.0,
        }
    }
}

/// Right-handed rotation about the world vertical (+z) axis.
pub fn rotation_z(degrees: f64) -> Matrix3<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn intersect_ellipsoid(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    axes: &Vector3<f64>,
) -> Option<(f64, Vector3<f64>)> {
    let o = origin.component_div(axes);
    let d = dir.component_div(axes);
    let a = d.norm_squared();
    let b = o.dot(&d);
    let c = o.norm_squared() - 1.0;
    let disc = b * b - a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / a;
    let t1 = (-b + sq) / a;
    let t = if t0 > 1e-9 { t0 } else if t1 > 1e-9 { t1 } else { return None };
    let p = origin + dir * t;
    let n = p.component_div(&axes.component_mul(axes));
    Some((t, n))
}

fn intersect_box(origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let mut ta = (-1.0 - origin[k]) * inv;
        let mut tb = (1.0 - origin[k]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t_near {
            t_near = ta;
            axis = k;
        }
        t_far = t_far.min(tb);
    }
    if t_near > t_far || t_far <= 1e-9 || t_near <= 1e-9 {
        return None;
    }
    let mut n = Vector3::zeros();
    n[axis] = -dir[axis].signum();
    Some((t_near, n))
}

fn intersect_cylinder(origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut consider = |t: f64, n: Vector3<f64>| {
        if t > 1e-9 && best.as_ref().map_or(true, |(bt, _)| t < *bt) {
            best = Some((t, n));
        }
    };
    let a = dir.x * dir.x + dir.y * dir.y;
    if a > 1e-15 {
        let b = origin.x * dir.x + origin.y * dir.y;
        let c = origin.x * origin.x + origin.y * origin.y - 1.0;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let z = origin.z + dir.z * t;
                if z.abs() <= 1.0 {
                    let p = origin + dir * t;
                    consider(t, Vector3::new(p.x, p.y, 0.0));
                }
            }
        }
    }
    if dir.z.abs() > 1e-15 {
        for cap in [-1.0, 1.0] {
            let t = (cap - origin.z) / dir.z;
            let p = origin + dir * t;
            if p.x * p.x + p.y * p.y <= 1.0 {
                consider(t, Vector3::new(0.0, 0.0, cap));
            }
        }
    }
    best
}
