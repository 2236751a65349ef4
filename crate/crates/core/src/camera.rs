//! Spherical camera sampling, pose construction and view binning.
//!
//! World convention: right-handed, +z up, azimuth 0 along +x, azimuth 90
//! along +y. Camera space: +x right, +y down, +z forward (into the image).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ABS_ELEVATION: f64 = 89.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::square(256)
    }
}

impl CameraIntrinsics {
    pub fn square(resolution: usize) -> Self {
        CameraIntrinsics {
            width: resolution,
            height: resolution,
            fov_y: 45.0,
            near: 0.01,
            far: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config("image dimensions must be at least 8 pixels".into()));
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(Error::Config("fov_y must lie in (0, 180) degrees".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config("clip planes must satisfy 0 < near < far".into()));
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y.to_radians()).tan()
    }

    /// Camera distance at which a sphere of `radius` spans `fill` of the image height.
    pub fn framing_distance(&self, radius: f64, fill: f64) -> f64 {
        let half = (fill * (0.5 * self.fov_y.to_radians()).tan()).atan();
        radius / half.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSample {
    /// Degrees in [-180, 180].
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub look_at: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewBin {
    Front,
    Side,
    Back,
    Overhead,
}

/// Ranges for [`sample_view`]. Azimuth is always uniform over [-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub elevation: [f64; 2],
    pub radius: [f64; 2],
}

impl Default for SamplingRanges {
    fn default() -> Self {
        SamplingRanges {
            elevation: [-10.0, 45.0],
            radius: [1.0, 1.0],
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        let [e0, e1] = self.elevation;
        let [r0, r1] = self.radius;
        if !(e0 <= e1 && e0 >= -MAX_ABS_ELEVATION && e1 <= MAX_ABS_ELEVATION) {
            return Err(Error::Config(format!(
                "elevation range [{e0}, {e1}] must be ordered and within ±{MAX_ABS_ELEVATION}"
            )));
        }
        if !(r0 <= r1 && r0 > 0.0 && r1.is_finite()) {
            return Err(Error::Config(format!("radius range [{r0}, {r1}] must be ordered and positive")));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.gen::<f64>()
    }
}

pub fn sample_view<R: Rng + ?Sized>(rng: &mut R, ranges: &SamplingRanges, look_at: [f64; 3]) -> Result<ViewSample> {
    ranges.validate()?;
    Ok(ViewSample {
        azimuth: uniform(rng, [-180.0, 180.0]),
        elevation: uniform(rng, ranges.elevation),
        radius: uniform(rng, ranges.radius),
        look_at,
    })
}

/// World-to-camera rigid transform plus pinhole constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub position: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Continuous pixel coordinates of a camera-space point; pixel `(i, j)`
    /// covers `[i, i+1) x [j, j+1)`.
    pub fn project(&self, p_cam: &Vector3<f64>) -> [f64; 2] {
        [
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ]
    }

    /// World-space direction of the ray through continuous pixel coordinates.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let d_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.rotation.transpose() * d_cam
    }
}

pub fn camera_position(v: &ViewSample) -> Vector3<f64> {
    let (sa, ca) = v.azimuth.to_radians().sin_cos();
    let (se, ce) = v.elevation.to_radians().sin_cos();
    Vector3::from(v.look_at) + v.radius * Vector3::new(ce * ca, ce * sa, se)
}

pub fn pose_from_view(v: &ViewSample, intr: &CameraIntrinsics) -> Camera {
    assert!(v.radius > 0.0, "camera radius must be positive");
    let position = camera_position(v);
    let forward = (Vector3::from(v.look_at) - position).normalize();
    let mut up = Vector3::z();
    if forward.cross(&up).norm() < 1e-9 {
        up = Vector3::y();
    }
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * position);
    let f = intr.focal();
    Camera {
        rotation,
        translation,
        position,
        fx: f,
        fy: f,
        cx: 0.5 * intr.width as f64,
        cy: 0.5 * intr.height as f64,
        width: intr.width,
        height: intr.height,
        near: intr.near,
        far: intr.far,
    }
}

/// `psi - phi` wrapped into [-180, 180].
pub fn corrected_azimuth(psi: f64, phi_offset: f64) -> f64 {
    wrap_degrees(psi - phi_offset)
}

pub fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid maps +180 to -180; keep the sign of the input at the seam.
    if w == -180.0 && a > 0.0 {
        180.0
    } else {
        w
    }
}

pub fn bin_view(corrected_azimuth: f64, elevation: f64) -> ViewBin {
    let az = wrap_degrees(corrected_azimuth).abs();
    if elevation > 60.0 {
        ViewBin::Overhead
    } else if az <= 45.0 {
        ViewBin::Front
    } else if az >= 135.0 {
        ViewBin::Back
    } else {
        ViewBin::Side
    }
}
