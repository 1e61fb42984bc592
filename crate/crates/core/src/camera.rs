//! Pinhole camera model with Euler-angle poses in two axis conventions.
//!
//! * `Miv`: camera axes x-forward, y-left, z-up. The Euler rotation
//!   `Rz(yaw) * Ry(pitch) * Rx(roll)` maps camera axes to world axes.
//! * `Cv`: camera axes x-right, y-down, z-forward. The stored rotation is
//!   world-to-camera, `B * (Rz(yaw) * Ry(pitch) * Rx(roll))^T`, where `B` is the
//!   fixed basis change from MIV camera axes to CV camera axes.
//!
//! Both conventions share one world frame and store the camera center directly,
//! so conversion only re-expresses the rotation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pitch magnitude (degrees) at which Euler decomposition is refused.
pub const GIMBAL_LIMIT_DEG: f64 = 89.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate pose: pitch {pitch_deg:.6} deg is within the gimbal-lock guard")]
    DegeneratePose { pitch_deg: f64 },
    #[error("unknown axis convention tag {0:?}")]
    UnknownConvention(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Convention {
    #[serde(rename = "MIV")]
    Miv,
    #[serde(rename = "CV")]
    Cv,
}

impl FromStr for Convention {
    type Err = CameraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MIV" | "miv" => Ok(Convention::Miv),
            "CV" | "cv" => Ok(Convention::Cv),
            other => Err(CameraError::UnknownConvention(other.to_string())),
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Miv => "MIV",
            Convention::Cv => "CV",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Centered principal point with the given horizontal field of view.
    pub fn with_hfov(width: u32, height: u32, hfov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self {
            focal_x: f,
            focal_y: f,
            principal_x: (width as f64 - 1.0) / 2.0,
            principal_y: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: &str| Err(CameraError::InvalidIntrinsics(m.to_string()));
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) || !self.focal_x.is_finite() || !self.focal_y.is_finite() {
            return bad("focal lengths must be finite and positive");
        }
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        let in_x = (0.0..=self.width as f64).contains(&self.principal_x);
        let in_y = (0.0..=self.height as f64).contains(&self.principal_y);
        if !in_x || !in_y {
            return bad("principal point outside the image");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    /// Camera center in world coordinates, meters.
    pub position: [f64; 3],
    pub convention: Convention,
}

impl Pose {
    pub fn rotation(&self) -> Result<Matrix3<f64>, CameraError> {
        euler_to_rotation(self.yaw_deg, self.pitch_deg, self.roll_deg, self.convention)
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// Basis change taking MIV camera coordinates to CV camera coordinates.
pub fn miv_to_cv_basis() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

fn zyx(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    rz * ry * rx
}

/// Rotation matrix for the given Euler angles (degrees) under `convention`.
pub fn euler_to_rotation(
    yaw_deg: f64,
    pitch_deg: f64,
    roll_deg: f64,
    convention: Convention,
) -> Result<Matrix3<f64>, CameraError> {
    if !(yaw_deg.is_finite() && pitch_deg.is_finite() && roll_deg.is_finite()) {
        return Err(CameraError::InvalidArgument("Euler angles must be finite".into()));
    }
    let body = zyx(yaw_deg.to_radians(), pitch_deg.to_radians(), roll_deg.to_radians());
    Ok(match convention {
        Convention::Miv => body,
        Convention::Cv => miv_to_cv_basis() * body.transpose(),
    })
}

/// Inverse of [`euler_to_rotation`]; angles in degrees, yaw and roll in `(-180, 180]`.
pub fn rotation_to_euler(m: &Matrix3<f64>, convention: Convention) -> Result<(f64, f64, f64), CameraError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CameraError::InvalidArgument("rotation has non-finite entries".into()));
    }
    let body = match convention {
        Convention::Miv => *m,
        Convention::Cv => (miv_to_cv_basis().transpose() * m).transpose(),
    };
    let sp = (-body[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin().to_degrees();
    if pitch.abs() >= GIMBAL_LIMIT_DEG {
        return Err(CameraError::DegeneratePose { pitch_deg: pitch });
    }
    let yaw = body[(1, 0)].atan2(body[(0, 0)]).to_degrees();
    let roll = body[(2, 1)].atan2(body[(2, 2)]).to_degrees();
    Ok((yaw, pitch, roll))
}

/// Re-expresses a camera in the `target` convention. Intrinsics and center are untouched.
pub fn convert_convention(cam: &CameraParams, target: Convention) -> Result<CameraParams, CameraError> {
    if cam.pose.convention == target {
        return Ok(*cam);
    }
    let r = cam.pose.rotation()?;
    let b = miv_to_cv_basis();
    let converted = match target {
        Convention::Cv => b * r.transpose(),
        Convention::Miv => (b.transpose() * r).transpose(),
    };
    let (yaw_deg, pitch_deg, roll_deg) = rotation_to_euler(&converted, target)?;
    Ok(CameraParams {
        id: cam.id,
        intrinsics: cam.intrinsics,
        pose: Pose {
            yaw_deg,
            pitch_deg,
            roll_deg,
            position: cam.pose.position,
            convention: target,
        },
    })
}

/// Projected pixel position and forward-axis depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepth {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// Pinhole projection. `None` marks a point at or behind the camera plane.
/// Pixel centers sit at integer coordinates.
pub fn project(point: &Vector3<f64>, cam: &CameraParams) -> Result<Option<PixelDepth>, CameraError> {
    let r = cam.pose.rotation()?;
    let k = &cam.intrinsics;
    let rel = point - cam.pose.center();
    Ok(match cam.pose.convention {
        Convention::Miv => {
            let p = r.transpose() * rel;
            (p.x > 0.0).then(|| PixelDepth {
                pixel: Vector2::new(k.principal_x - k.focal_x * p.y / p.x, k.principal_y - k.focal_y * p.z / p.x),
                depth: p.x,
            })
        }
        Convention::Cv => {
            let p = r * rel;
            (p.z > 0.0).then(|| PixelDepth {
                pixel: Vector2::new(k.principal_x + k.focal_x * p.x / p.z, k.principal_y + k.focal_y * p.y / p.z),
                depth: p.z,
            })
        }
    })
}

/// World point at forward-axis `depth` behind `pixel`.
pub fn unproject(pixel: &Vector2<f64>, depth: f64, cam: &CameraParams) -> Result<Vector3<f64>, CameraError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(CameraError::InvalidArgument(format!("depth must be positive, got {depth}")));
    }
    let r = cam.pose.rotation()?;
    let k = &cam.intrinsics;
    let nx = (pixel.x - k.principal_x) / k.focal_x;
    let ny = (pixel.y - k.principal_y) / k.focal_y;
    Ok(match cam.pose.convention {
        Convention::Miv => r * Vector3::new(depth, -nx * depth, -ny * depth) + cam.pose.center(),
        Convention::Cv => r.transpose() * Vector3::new(nx * depth, ny * depth, depth) + cam.pose.center(),
    })
}

/// Precomputed CV-frame view of a camera; the fast path used by the renderers and warpers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewFrame {
    /// World-to-camera rotation in CV axes.
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl ViewFrame {
    pub fn new(cam: &CameraParams) -> Result<Self, CameraError> {
        cam.intrinsics.validate()?;
        let r = cam.pose.rotation()?;
        let rotation = match cam.pose.convention {
            Convention::Cv => r,
            Convention::Miv => miv_to_cv_basis() * r.transpose(),
        };
        let k = &cam.intrinsics;
        Ok(Self {
            rotation,
            center: cam.pose.center(),
            fx: k.focal_x,
            fy: k.focal_y,
            cx: k.principal_x,
            cy: k.principal_y,
            width: k.width as usize,
            height: k.height as usize,
        })
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.center)
    }

    /// `(u, v, depth)` or `None` when not in front of the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        (c.z > 0.0).then(|| (self.cx + self.fx * c.x / c.z, self.cy + self.fy * c.y / c.z, c.z))
    }

    /// World-space ray direction scaled so that its forward component is 1.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.center + self.ray(u, v) * depth
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::z()
    }
}
