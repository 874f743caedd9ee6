//! Pinhole cameras with a world-to-camera rigid transform.
//!
//! Camera space is right-handed with `x` right, `y` down and `z` forward.
//! Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`, so its center sits at
//! `(i + 0.5, j + 0.5)`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NEAR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rot_w2c: Matrix3<f64>,
    pub trans_w2c: Vector3<f64>,
    pub near: f64,
}

impl CameraModel {
    /// Camera at `eye` looking at `target`, with `up` roughly opposite to the
    /// image `y` axis.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y_deg: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self {
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            trans_w2c: -(rot * eye),
            rot_w2c: rot,
            near: DEFAULT_NEAR,
        }
    }

    /// Camera from a camera-to-world pose: unit quaternion `(w, x, y, z)`
    /// and position. Principal point at the image center, square pixels.
    pub fn from_pose(
        rotation_c2w: [f64; 4],
        position: [f64; 3],
        fov_y_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let [w, x, y, z] = rotation_c2w;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !(norm > 1e-9 && norm.is_finite()) {
            return Err(Error::InvalidCamera("rotation quaternion must be non-zero".into()));
        }
        if !(fov_y_deg > 0.0 && fov_y_deg < 180.0) {
            return Err(Error::InvalidCamera(format!("fov_y {fov_y_deg} outside (0, 180)")));
        }
        let rot_c2w = nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        let rot = rot_c2w.transpose();
        let eye = Vector3::from(position);
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        let cam = Self {
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            trans_w2c: -(rot * eye),
            rot_w2c: rot,
            near: DEFAULT_NEAR,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera-to-world quaternion `(w, x, y, z)` and position.
    pub fn pose(&self) -> ([f64; 4], [f64; 3]) {
        let rot = nalgebra::Rotation3::from_matrix(&self.rot_w2c.transpose());
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let c = self.center();
        ([q.w, q.i, q.j, q.k], [c.x, c.y, c.z])
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rot_w2c.transpose() * self.trans_w2c)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot_w2c * p + self.trans_w2c
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("width and height must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("fx and fy must be positive".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::InvalidCamera("near must be positive".into()));
        }
        let ortho = (self.rot_w2c.transpose() * self.rot_w2c - Matrix3::identity()).amax();
        if !(ortho <= 1e-6) {
            return Err(Error::InvalidCamera(format!(
                "rot_w2c is not orthonormal (max |RᵀR - I| = {ortho:e})"
            )));
        }
        if !self.trans_w2c.iter().chain([self.cx, self.cy].iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite translation or principal point".into()));
        }
        Ok(())
    }

    /// Identity of pose and intrinsics, used to key projection caches.
    pub fn pose_key(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self
            .rot_w2c
            .iter()
            .chain(self.trans_w2c.iter())
            .chain([self.fx, self.fy, self.cx, self.cy, self.near].iter())
        {
            v.to_bits().hash(&mut h);
        }
        self.width.hash(&mut h);
        self.height.hash(&mut h);
        h.finish()
    }
}

/// On-disk camera record: intrinsics, pose and the normalized frame time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major.
    pub rot_w2c: [f64; 9],
    pub trans_w2c: [f64; 3],
    #[serde(default)]
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    /// Target image, relative to the dataset directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_path: Option<String>,
    /// `train` or `test`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl CameraRecord {
    pub fn from_camera(cam: &CameraModel, time: f64) -> Self {
        let mut rot = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rot[3 * r + c] = cam.rot_w2c[(r, c)];
            }
        }
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            rot_w2c: rot,
            trans_w2c: cam.trans_w2c.into(),
            time,
            near: (cam.near != DEFAULT_NEAR).then_some(cam.near),
            file_path: None,
            split: None,
        }
    }

    pub fn camera(&self) -> Result<CameraModel> {
        let cam = CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rot_w2c: Matrix3::from_row_slice(&self.rot_w2c),
            trans_w2c: Vector3::from(self.trans_w2c),
            near: self.near.unwrap_or(DEFAULT_NEAR),
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Reads a camera file holding either one record or an array of records.
pub fn load_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |e: serde_json::Error| Error::Parse {
        path: path.to_owned(),
        message: format!("line {}: {e}", e.line()),
    };
    let records = if text.trim_start().starts_with('[') {
        serde_json::from_str::<Vec<CameraRecord>>(&text).map_err(parse_err)?
    } else {
        vec![serde_json::from_str::<CameraRecord>(&text).map_err(parse_err)?]
    };
    for r in &records {
        r.camera().map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    }
    Ok(records)
}

pub fn save_cameras(path: &Path, records: &[CameraRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records).expect("camera records serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
