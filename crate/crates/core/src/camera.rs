//! Pinhole camera model.
//!
//! Extrinsics map world points into the camera frame, `p = R * X + t`.
//! The camera looks down +Z, +X points right in the image and +Y down.
//! Pixel `(i, j)` covers `[i, i + 1) x [j, j + 1)`, so its center sits at
//! `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Points closer than this along the optical axis do not project.
pub const DEFAULT_Z_NEAR: f64 = 0.01;

const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

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
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be at least 1x1".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidParameter("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Horizontal field of view in radians.
    pub fn horizontal_fov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }

    /// Camera-frame ray direction (z = 1) through continuous pixel coordinates.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Square-pixel intrinsics with the principal point at the image center.
pub fn intrinsics_from_fov(width: u32, height: u32, horizontal_fov: f64) -> Result<CameraIntrinsics> {
    if !(horizontal_fov > 0.0 && horizontal_fov < std::f64::consts::PI) {
        return Err(Error::InvalidParameter(format!(
            "horizontal fov {horizontal_fov} rad outside (0, pi)"
        )));
    }
    let fx = width as f64 / (2.0 * (horizontal_fov / 2.0).tan());
    CameraIntrinsics::new(fx, fx, width as f64 / 2.0, height as f64 / 2.0, width, height)
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let e = Self {
            rotation,
            translation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= ORTHONORMAL_TOLERANCE) {
            return Err(Error::InvalidParameter(format!(
                "rotation is not orthonormal (max deviation {err:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOLERANCE {
            return Err(Error::InvalidParameter(format!("rotation determinant {det} != 1")));
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("translation must be finite".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, x: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * x.coords + self.translation)
    }

    /// Rotates a camera-frame direction into the world frame.
    pub fn direction_to_world(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
    /// Camera-frame z, meters.
    pub depth: f64,
}

impl PixelCoord {
    /// Integer pixel containing the coordinate, if inside the image.
    pub fn pixel(&self, intr: &CameraIntrinsics) -> Option<(u32, u32)> {
        let (x, y) = (self.u.floor(), self.v.floor());
        (x >= 0.0 && y >= 0.0 && x < intr.width as f64 && y < intr.height as f64)
            .then_some((x as u32, y as u32))
    }
}

/// Perspective projection with the default near plane.
pub fn project_point(
    x: &Point3<f64>,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Option<PixelCoord> {
    project_point_with_near(x, intr, extr, DEFAULT_Z_NEAR)
}

/// `x = K (R X + t)` followed by the perspective divide. Points with camera
/// z at or below `z_near` do not project.
pub fn project_point_with_near(
    x: &Point3<f64>,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    z_near: f64,
) -> Option<PixelCoord> {
    let p = extr.to_camera(x);
    if p.z <= z_near {
        return None;
    }
    Some(PixelCoord {
        u: intr.fx * p.x / p.z + intr.cx,
        v: intr.fy * p.y / p.z + intr.cy,
        depth: p.z,
    })
}

/// Camera position in world coordinates, `C = -R^T t`.
pub fn camera_center(extr: &CameraExtrinsics) -> Point3<f64> {
    Point3::from(-(extr.rotation.transpose() * extr.translation))
}

/// Euclidean distance between a world point and the camera center.
pub fn point_camera_distance(x: &Point3<f64>, extr: &CameraExtrinsics) -> f64 {
    (x - camera_center(extr)).norm()
}

const UP_FALLBACKS: [Vector3<f64>; 3] = [
    Vector3::new(0.0, 0.0, 1.0),
    Vector3::new(0.0, 1.0, 0.0),
    Vector3::new(1.0, 0.0, 0.0),
];

/// Extrinsics for a camera at `eye` whose optical axis passes through `target`.
///
/// The image "up" direction follows `up_hint` projected onto the image
/// plane. If the view direction is (nearly) parallel to the hint, a fixed
/// world axis is used instead.
pub fn look_at(
    eye: &Point3<f64>,
    target: &Point3<f64>,
    up_hint: &Vector3<f64>,
) -> Result<CameraExtrinsics> {
    let forward = (target - eye)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::InvalidParameter("look_at eye and target coincide".into()))?;
    let candidates = std::iter::once(*up_hint).chain(UP_FALLBACKS);
    let mut down = None;
    for up in candidates {
        let Some(up) = up.try_normalize(1e-12) else {
            continue;
        };
        let ortho = up - forward * up.dot(&forward);
        if ortho.norm() > 1e-3 {
            down = Some(-ortho.normalize());
            break;
        }
    }
    let down = down.expect("three orthogonal fallbacks cannot all be parallel");
    let right = down.cross(&forward);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * eye.coords);
    Ok(CameraExtrinsics {
        rotation,
        translation,
    })
}
