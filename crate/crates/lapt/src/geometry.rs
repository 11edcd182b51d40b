//! Rigid-body transforms and the pinhole camera model.
//!
//! Frame conventions used throughout:
//! - Vehicle frame: +x forward, +y left, +z up, origin at ground level
//!   under the rig center.
//! - Camera frame: +z forward along the optical axis, +x right, +y down.
//! - Extrinsics map vehicle coordinates INTO the sensor frame: `E_k` is
//!   vehicle→camera and `E_P` is vehicle→LiDAR. The LiDAR→camera chain is
//!   therefore `E_k · E_P⁻¹`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Near-plane cutoff in meters: camera-frame points with z at or below this
/// are treated as invisible rather than divided by ~0.
pub const Z_EPSILON: f64 = 1e-3;

/// A 3D point or vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<Vector3<f64>> for Vec3 {
    fn from(v: Vector3<f64>) -> Self {
        Vec3::new(v.x, v.y, v.z)
    }
}

impl From<Vec3> for Vector3<f64> {
    fn from(v: Vec3) -> Self {
        Vector3::new(v.x, v.y, v.z)
    }
}

/// An SE(3) transform stored as a 4x4 homogeneous matrix.
///
/// Construction validates orthonormality of the rotation block (within 1e-6),
/// det(R) ≈ +1, and an exact [0,0,0,1] bottom row, so every held value is
/// invertible by transpose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    m: Matrix4<f64>,
}

const ORTHONORMALITY_TOL: f64 = 1e-6;

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            m: Matrix4::identity(),
        }
    }

    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Calibration("non-finite matrix entry".into()));
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::Calibration(
                "bottom row must be exactly [0, 0, 0, 1]".into(),
            ));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r.transpose() * r;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMALITY_TOL {
            return Err(Error::Calibration(format!(
                "rotation block is not orthonormal (max deviation {dev:.3e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(Error::Calibration(format!(
                "rotation determinant {det} is not +1 (reflection or degenerate)"
            )));
        }
        Ok(RigidTransform { m })
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::from_matrix(m)
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self::from_parts(Matrix3::identity(), t).expect("identity rotation is orthonormal")
    }

    /// Rotation by `angle` radians about the +z axis.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self::from_parts(r, Vector3::zeros()).expect("rotation matrix is orthonormal")
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_part(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Analytic inverse: (R, t)⁻¹ = (Rᵀ, −Rᵀt).
    pub fn inverse(&self) -> Self {
        let r_t = self.rotation().transpose();
        let t = -r_t * self.translation_part();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_t);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        RigidTransform { m }
    }

    /// Composition: `self.compose(&other)` applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let mut m = self.m * other.m;
        // Renormalize the bottom row; the product is exact in theory but
        // the invariant demands bit-exact zeros.
        m[(3, 0)] = 0.0;
        m[(3, 1)] = 0.0;
        m[(3, 2)] = 0.0;
        m[(3, 3)] = 1.0;
        RigidTransform { m }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let h = self.m * Vector4::new(p.x, p.y, p.z, 1.0);
        Vec3::new(h.x, h.y, h.z)
    }
}

/// Pinhole camera intrinsics with zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Calibration(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64) {
            return Err(Error::Calibration(format!(
                "principal point cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(Error::Calibration(format!(
                "principal point cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }
}

/// One camera of the rig: intrinsics plus the vehicle→camera extrinsic.
#[derive(Debug, Clone)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: RigidTransform,
}

/// The full sensor rig: n cameras and one LiDAR extrinsic (vehicle→LiDAR).
#[derive(Debug, Clone)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
    pub lidar: RigidTransform,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>, lidar: RigidTransform) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Calibration("rig must contain at least one camera".into()));
        }
        for cam in &cameras {
            cam.intrinsics.validate()?;
        }
        Ok(CameraRig { cameras, lidar })
    }
}

/// A projected point: continuous pixel coordinates, camera-frame depth, and
/// the index of the source point in the input list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub source: usize,
}

/// Transform LiDAR-frame points into a camera frame: `E_k · E_P⁻¹ · p`.
pub fn lidar_to_camera(
    points: &[Vec3],
    lidar_extrinsics: &RigidTransform,
    camera_extrinsics: &RigidTransform,
) -> Vec<Vec3> {
    let chain = camera_extrinsics.compose(&lidar_extrinsics.inverse());
    points.iter().map(|&p| chain.apply(p)).collect()
}

/// Project camera-frame points onto the image plane.
///
/// Points behind the near plane (z ≤ `Z_EPSILON`) and points falling outside
/// [0, W) x [0, H) are dropped; each retained projection records its source
/// index. Filtering is the contract, not an error.
pub fn project_to_pixels(points_cam: &[Vec3], intr: &CameraIntrinsics) -> Vec<Projection> {
    let w = intr.width as f64;
    let h = intr.height as f64;
    let mut out = Vec::with_capacity(points_cam.len());
    for (i, p) in points_cam.iter().enumerate() {
        if p.z <= Z_EPSILON {
            continue;
        }
        let u = intr.fx * p.x / p.z + intr.cx;
        let v = intr.fy * p.y / p.z + intr.cy;
        if u < 0.0 || u >= w || v < 0.0 || v >= h {
            continue;
        }
        out.push(Projection {
            u,
            v,
            depth: p.z,
            source: i,
        });
    }
    out
}

/// Back-project a pixel at known depth into the camera frame:
/// `I_k⁻¹ · delta · (u, v, 1)ᵀ`.
pub fn back_project_pixel(u: f64, v: f64, delta: f64, intr: &CameraIntrinsics) -> Result<Vec3> {
    if delta <= 0.0 {
        return Err(Error::InvalidDepth(delta));
    }
    Ok(Vec3::new(
        delta * (u - intr.cx) / intr.fx,
        delta * (v - intr.cy) / intr.fy,
        delta,
    ))
}

/// Map a camera-frame point back to the vehicle frame via `E_k⁻¹`.
pub fn camera_to_vehicle(point: Vec3, camera_extrinsics: &RigidTransform) -> Vec3 {
    camera_extrinsics.inverse().apply(point)
}
