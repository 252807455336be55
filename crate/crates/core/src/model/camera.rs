use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mat3, Vec3};
use crate::error::{Error, Result};

/// Pinhole camera. Camera space is x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Camera { fx, fy, cx, cy, rotation, translation, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite to image y.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be non-zero"));
        }
        let err = (self.rotation * self.rotation.transpose() - Mat3::identity()).abs().max();
        if !(err <= 1e-6) {
            return Err(Error::invalid(format!("camera rotation not orthonormal ({err:e})")));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.translation.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("camera".into()));
        }
        Ok(())
    }

    /// World-space camera center.
    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn load_list(path: &Path) -> Result<Vec<Camera>> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_list(cams: &[Camera], path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(cams)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_to_camera: [[f64; 4]; 3],
    width: usize,
    height: usize,
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        let m = j.world_to_camera;
        let rotation = Mat3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        let translation = Vec3::new(m[0][3], m[1][3], m[2][3]);
        Camera::new(j.fx, j.fy, j.cx, j.cy, rotation, translation, j.width, j.height)
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        let t = c.translation;
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            world_to_camera: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            ],
            width: c.width,
            height: c.height,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_places_target_on_axis() {
        let cam = Camera::look_at(
            Vec3::new(3.0, 0.5, 0.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            80.0,
            64,
            64,
        )
        .unwrap();
        let p = cam.rotation * Vec3::zeros() + cam.translation;
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        assert!((cam.position() - Vec3::new(3.0, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let cam = Camera::look_at(
            Vec3::new(0.1, 0.2, -3.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            70.5,
            32,
            24,
        )
        .unwrap();
        let text = serde_json::to_string(&cam).unwrap();
        let back: Camera = serde_json::from_str(&text).unwrap();
        assert_eq!(cam, back);
    }

    #[test]
    fn rejects_bad_intrinsics_and_pose() {
        let r = Mat3::identity();
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, r, Vec3::zeros(), 4, 4).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, r * 1.01, Vec3::zeros(), 4, 4).is_err());
    }
}
