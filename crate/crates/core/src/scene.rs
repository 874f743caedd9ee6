//! Disentangled 4D Gaussian representation.
//!
//! Every primitive stores a base 3D Gaussian (spatial mean, spatial scales,
//! rotation quaternion), a temporal mean and temporal scale, and the
//! velocity of its spatial mean. The geometry and motion of a primitive
//! therefore take 15 floats:
//!
//! | field        | floats |
//! |--------------|--------|
//! | mean (xyzt)  | 4      |
//! | log scale    | 4      |
//! | quaternion   | 4      |
//! | velocity     | 3      |
//!
//! Raw parameters are what the optimizer sees. [`Gaussian4D::activate`]
//! maps them to the constrained quantities used by rendering: scales via
//! `exp`, opacity via a sigmoid and the quaternion normalized on use.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sh;

/// Floats used by the mean, scales, rotation and velocity of one primitive.
pub const GEOMETRY_MOTION_FLOATS: usize = 15;

/// Offsets of each raw parameter group in the flat per-Gaussian layout used
/// by the optimizer, finite-difference checks and error reporting.
pub mod layout {
    pub const MEAN: usize = 0;
    pub const MEAN_T: usize = 3;
    pub const LOG_SCALE: usize = 4;
    pub const LOG_SCALE_T: usize = 7;
    pub const ROTATION: usize = 8;
    pub const VELOCITY: usize = 12;
    pub const OPACITY: usize = 15;
    pub const SH: usize = 16;

    /// Total flat length for `n_coeffs` SH coefficients per channel.
    pub const fn len(n_coeffs: usize) -> usize {
        SH + 3 * n_coeffs
    }
}

/// Opacity assigned to freshly initialized primitives.
pub const INITIAL_OPACITY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian4D {
    /// `(x, y, z, t)`; space in world units, time normalized to `[0, 1]`.
    pub mean: Vector4<f64>,
    /// `ln` of the spatial scales and of the temporal scale.
    pub log_scale: Vector4<f64>,
    /// Quaternion `(w, x, y, z)`, not necessarily normalized.
    pub rotation: Vector4<f64>,
    /// Velocity of the spatial mean, world units per unit normalized time.
    pub velocity: Vector3<f64>,
    pub opacity_logit: f64,
    /// Real SH coefficients, one RGB triple per basis function.
    pub sh: Vec<Vector3<f64>>,
}

/// Constrained parameters of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivatedGaussian {
    pub mean: Vector3<f64>,
    pub mean_t: f64,
    pub scale: Vector3<f64>,
    /// Standard deviation along time, the square root of the temporal variance.
    pub scale_t: f64,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Vector4<f64>,
    pub velocity: Vector3<f64>,
    pub opacity: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian4D {
    /// A static, identity-rotated primitive with unit scales.
    pub fn new(mean: Vector3<f64>, mean_t: f64, sh_degree: u8) -> Self {
        Self {
            mean: Vector4::new(mean.x, mean.y, mean.z, mean_t),
            log_scale: Vector4::zeros(),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            velocity: Vector3::zeros(),
            opacity_logit: logit(INITIAL_OPACITY),
            sh: vec![Vector3::zeros(); sh::num_coeffs(sh_degree)],
        }
    }

    pub fn num_params(&self) -> usize {
        layout::len(self.sh.len())
    }

    /// Writes the raw parameters in the flat [`layout`] order.
    pub fn write_flat(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_params());
        out[0..4].copy_from_slice(self.mean.as_slice());
        out[4..8].copy_from_slice(self.log_scale.as_slice());
        out[8..12].copy_from_slice(self.rotation.as_slice());
        out[12..15].copy_from_slice(self.velocity.as_slice());
        out[15] = self.opacity_logit;
        for (k, c) in self.sh.iter().enumerate() {
            out[layout::SH + 3 * k..layout::SH + 3 * k + 3].copy_from_slice(c.as_slice());
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_params()];
        self.write_flat(&mut v);
        v
    }

    /// Reads raw parameters back from the flat layout; the SH length is kept.
    pub fn read_flat(&mut self, src: &[f64]) {
        debug_assert_eq!(src.len(), self.num_params());
        self.mean = Vector4::from_column_slice(&src[0..4]);
        self.log_scale = Vector4::from_column_slice(&src[4..8]);
        self.rotation = Vector4::from_column_slice(&src[8..12]);
        self.velocity = Vector3::from_column_slice(&src[12..15]);
        self.opacity_logit = src[15];
        for (k, c) in self.sh.iter_mut().enumerate() {
            *c = Vector3::from_column_slice(&src[layout::SH + 3 * k..layout::SH + 3 * k + 3]);
        }
    }

    /// The 15 geometry and motion floats.
    pub fn geometry_motion(&self) -> [f64; GEOMETRY_MOTION_FLOATS] {
        let mut out = [0.0; GEOMETRY_MOTION_FLOATS];
        out[0..4].copy_from_slice(self.mean.as_slice());
        out[4..8].copy_from_slice(self.log_scale.as_slice());
        out[8..12].copy_from_slice(self.rotation.as_slice());
        out[12..15].copy_from_slice(self.velocity.as_slice());
        out
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.to_flat().iter().position(|v| !v.is_finite())
    }

    /// Applies the parameter activations. `index` is only used for error
    /// reporting.
    pub fn activate_indexed(&self, index: usize) -> Result<ActivatedGaussian> {
        if let Some(param) = self.first_non_finite() {
            return Err(Error::NonFinite {
                gaussian: index,
                param,
            });
        }
        let norm = self.rotation.norm();
        if norm == 0.0 {
            return Err(Error::DegenerateRotation { gaussian: index });
        }
        let s = self.log_scale.map(f64::exp);
        Ok(ActivatedGaussian {
            mean: self.mean.xyz(),
            mean_t: self.mean.w,
            scale: s.xyz(),
            scale_t: s.w,
            rotation: self.rotation / norm,
            velocity: self.velocity,
            opacity: sigmoid(self.opacity_logit),
        })
    }

    pub fn activate(&self) -> Result<ActivatedGaussian> {
        self.activate_indexed(0)
    }
}

impl ActivatedGaussian {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_rotation(&self.rotation)
    }

    /// `Σ = R S Sᵀ Rᵀ` of the base 3D Gaussian.
    pub fn covariance3d(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scale);
        m * m.transpose()
    }

    /// Spatial mean at time `t`, following the linear motion model.
    pub fn mean_at(&self, t: f64) -> Vector3<f64> {
        self.mean + self.velocity * (t - self.mean_t)
    }

    /// Marginal weight of the primitive at time `t`.
    pub fn temporal_weight(&self, t: f64) -> f64 {
        let dt = t - self.mean_t;
        (-(dt * dt) / (2.0 * self.scale_t * self.scale_t)).exp()
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
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

/// Pulls `dL/dR` back to the raw (unnormalized) quaternion.
pub fn quat_to_rotation_backward(q_raw: &Vector4<f64>, d_rot: &Matrix3<f64>) -> Vector4<f64> {
    let norm = q_raw.norm();
    let q = q_raw / norm;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dy = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dz = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    let g_unit = Vector4::new(
        d_rot.component_mul(&dw).sum(),
        d_rot.component_mul(&dx).sum(),
        d_rot.component_mul(&dy).sum(),
        d_rot.component_mul(&dz).sum(),
    );
    (g_unit - q * q.dot(&g_unit)) / norm
}

/// Gradient of the base covariance `Σ = R S Sᵀ Rᵀ` with respect to the
/// spatial log-scales and the raw quaternion, given a symmetric `dL/dΣ`.
pub fn covariance3d_backward(
    g: &Gaussian4D,
    act: &ActivatedGaussian,
    d_sigma: &Matrix3<f64>,
) -> (Vector3<f64>, Vector4<f64>) {
    let rot = act.rotation_matrix();
    let m = rot * Matrix3::from_diagonal(&act.scale);
    // Σ = M Mᵀ with symmetric dΣ gives dM = 2 dΣ M.
    let d_m = 2.0 * d_sigma * m;
    let mut d_log_scale = Vector3::zeros();
    let mut d_rot = Matrix3::zeros();
    for i in 0..3 {
        let col_dm = d_m.column(i);
        d_log_scale[i] = col_dm.dot(&rot.column(i)) * act.scale[i];
        d_rot.set_column(i, &(col_dm * act.scale[i]));
    }
    (d_log_scale, quat_to_rotation_backward(&g.rotation, &d_rot))
}

/// A dynamic scene. Time is normalized so that every training frame lies in
/// `[0, 1]`; the real length of the capture is kept as metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene4D {
    pub gaussians: Vec<Gaussian4D>,
    pub duration_seconds: f64,
    pub sh_degree: u8,
    pub background: Vector3<f64>,
}

impl Scene4D {
    pub fn new(sh_degree: u8) -> Self {
        Self {
            gaussians: Vec::new(),
            duration_seconds: 1.0,
            sh_degree,
            background: Vector3::zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn num_coeffs(&self) -> usize {
        sh::num_coeffs(self.sh_degree)
    }

    /// Checks the SH degree bound, the uniform coefficient count and that
    /// every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::InvalidScene(format!(
                "sh_degree {} exceeds {}",
                self.sh_degree,
                sh::MAX_DEGREE
            )));
        }
        let n = self.num_coeffs();
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != n {
                return Err(Error::InvalidScene(format!(
                    "gaussian {i} has {} SH coefficients, expected {n}",
                    g.sh.len()
                )));
            }
            g.activate_indexed(i)?;
        }
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            return Err(Error::InvalidScene("duration_seconds must be positive".into()));
        }
        Ok(())
    }

    /// Initializes primitives from a colored point cloud: one Gaussian per
    /// point, spatial scale from the mean distance to the three nearest
    /// neighbours, temporal mean uniform in `[0, 1]`, temporal scale 1,
    /// zero velocity, identity rotation and opacity 0.1.
    pub fn from_point_cloud(
        points: &[Vector3<f64>],
        colors: &[Vector3<f64>],
        sh_degree: u8,
        seed: u64,
    ) -> Self {
        assert_eq!(points.len(), colors.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nn = mean_neighbour_distances(points, 3);
        let mut scene = Scene4D::new(sh_degree);
        for ((p, c), d) in points.iter().zip(colors).zip(nn) {
            let mut g = Gaussian4D::new(*p, rng.random::<f64>(), sh_degree);
            let log_s = d.max(1e-7).ln();
            g.log_scale = Vector4::new(log_s, log_s, log_s, 0.0);
            g.sh[0] = sh::rgb_to_dc(c);
            scene.gaussians.push(g);
        }
        scene
    }
}

/// Mean distance from each point to its `k` nearest neighbours.
fn mean_neighbour_distances(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    if points.len() < 2 {
        return vec![0.01; points.len()];
    }
    let k = k.min(points.len() - 1);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = vec![f64::INFINITY; k];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[k - 1] {
                    let pos = best.partition_point(|&b| b <= d);
                    best.insert(pos, d);
                    best.pop();
                }
            }
            best.iter().map(|d| d.sqrt()).sum::<f64>() / k as f64
        })
        .collect()
}
