//! Projection-first transform chain.
//!
//! Per camera, every primitive's mean, velocity and covariance are moved to
//! camera space once ([`to_camera`]) and kept in a [`ProjectionCache`].
//! Per timestamp, only the time shift is applied: the camera-space mean is
//! displaced along the camera-space velocity, the perspective Jacobian is
//! evaluated at the displaced point and the cached camera-space covariance
//! is pushed through it.
//!
//! Two modes are offered:
//! * [`ProjectionMode::Exact`] projects the displaced camera-space mean and
//!   reproduces the slicing-first result for any time offset.
//! * [`ProjectionMode::Fast`] moves the cached screen-space mean linearly
//!   along the screen velocity, which is first order in the time offset.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::error::Result;
use crate::scene::{covariance3d_backward, ActivatedGaussian, Gaussian4D, Scene4D};
use crate::sh;

/// Isotropic screen-space dilation (pixels²) added to every 2D covariance.
pub const LOW_PASS: f64 = 0.3;

/// Primitives whose temporal weight drops below this are skipped.
pub const DEFAULT_TEMPORAL_CUTOFF: f64 = 1.0 / 255.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ProjectionMode {
    #[default]
    Exact,
    Fast,
}

impl std::fmt::Display for ProjectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Fast => "fast",
        })
    }
}

impl std::str::FromStr for ProjectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "fast" => Ok(Self::Fast),
            other => Err(format!("unknown projection mode `{other}` (expected exact|fast)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionOptions {
    pub mode: ProjectionMode,
    /// Temporal weight below which a primitive is culled; `0` disables.
    pub temporal_cutoff: f64,
    pub low_pass: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            mode: ProjectionMode::Exact,
            temporal_cutoff: DEFAULT_TEMPORAL_CUTOFF,
            low_pass: LOW_PASS,
        }
    }
}

impl ProjectionOptions {
    pub fn with_mode(mode: ProjectionMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// Camera-dependent, time-independent state of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraSpaceGaussian {
    pub index: usize,
    /// Camera-space mean.
    pub mean: Vector3<f64>,
    pub mean_t: f64,
    /// Camera-space velocity (rotation only, no translation term).
    pub velocity: Vector3<f64>,
    /// Base covariance rotated into camera space, `W Σ Wᵀ`.
    pub cov_cam: Matrix3<f64>,
    pub scale_t: f64,
    pub opacity: f64,
    /// Pixel position of the unshifted mean and the tangent screen velocity
    /// there; `None` when the unshifted mean is in front of the near plane.
    pub ray: Option<RaySpaceState>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySpaceState {
    pub pixel: Vector2<f64>,
    /// Exact derivative of the pixel position along the motion.
    pub tangent_velocity: Vector2<f64>,
    /// Screen velocity `(fx·Vx/P2, fy·Vy/P2)`.
    pub vel2d: Vector2<f64>,
}

/// A primitive projected for one `(camera, t0)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenGaussian {
    pub index: usize,
    pub mean2d: Vector2<f64>,
    /// Distance from the camera center to the displaced mean.
    pub depth: f64,
    /// Inverse of the dilated 2D covariance, `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Dilated 2D covariance `(A, B, C)`.
    pub cov2d: [f64; 3],
    /// Pixels per unit normalized time.
    pub vel2d: Vector2<f64>,
    pub temporal_weight: f64,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

pub fn to_camera(index: usize, g: &ActivatedGaussian, cam: &CameraModel) -> CameraSpaceGaussian {
    let rot = &cam.rot_w2c;
    let mean = rot * g.mean + cam.trans_w2c;
    let velocity = rot * g.velocity;
    let cov_cam = rot * g.covariance3d() * rot.transpose();
    let ray = (mean.z >= cam.near).then(|| {
        let j = screen_jacobian(&mean, cam);
        RaySpaceState {
            pixel: to_pixel(&mean, cam),
            tangent_velocity: j * velocity,
            vel2d: Vector2::new(cam.fx * velocity.x / mean.z, cam.fy * velocity.y / mean.z),
        }
    });
    CameraSpaceGaussian {
        index,
        mean,
        mean_t: g.mean_t,
        velocity,
        cov_cam,
        scale_t: g.scale_t,
        opacity: g.opacity,
        ray,
    }
}

/// Ray-space coordinates `(P0/P2, P1/P2, |P|)`; `None` in front of `near`.
pub fn project_mean(p: &Vector3<f64>, near: f64) -> Option<Vector3<f64>> {
    (p.z >= near).then(|| Vector3::new(p.x / p.z, p.y / p.z, p.norm()))
}

/// Ray-space velocity `(Vx/P2, Vy/P2, |V|)` of a mean at `p`.
pub fn project_velocity(v: &Vector3<f64>, p: &Vector3<f64>, near: f64) -> Option<Vector3<f64>> {
    (p.z >= near).then(|| Vector3::new(v.x / p.z, v.y / p.z, v.norm()))
}

/// Jacobian of the ray-space map at `p`, with the first two rows scaled
/// by the focal lengths so that the projected covariance is in pixels².
pub fn jacobian_at(p: &Vector3<f64>, cam: &CameraModel) -> Option<Matrix3<f64>> {
    if p.z < cam.near {
        return None;
    }
    let l = p.norm();
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Some(Matrix3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz2,
        p.x / l,
        p.y / l,
        p.z / l,
    ))
}

/// Upper two rows of [`jacobian_at`]; the only part that reaches the image.
pub fn screen_jacobian(p: &Vector3<f64>, cam: &CameraModel) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(cam.fx * iz, 0.0, -cam.fx * p.x * iz2, 0.0, cam.fy * iz, -cam.fy * p.y * iz2)
}

pub fn to_pixel(p: &Vector3<f64>, cam: &CameraModel) -> Vector2<f64> {
    Vector2::new(cam.fx * (p.x / p.z) + cam.cx, cam.fy * (p.y / p.z) + cam.cy)
}

/// Projects a camera-space covariance to a dilated 2D covariance and its
/// conic. `None` if the result is degenerate.
pub fn screen_covariance(
    j: &Matrix2x3<f64>,
    cov_cam: &Matrix3<f64>,
    low_pass: f64,
) -> Option<([f64; 3], [f64; 3])> {
    let c2 = j * cov_cam * j.transpose();
    let a = c2[(0, 0)] + low_pass;
    let b = c2[(0, 1)];
    let c = c2[(1, 1)] + low_pass;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let inv = 1.0 / det;
    Some(([a, b, c], [c * inv, -b * inv, a * inv]))
}

/// Projects one cached primitive at time `t0`. Returns `None` when culled.
pub fn project_gaussian(
    csg: &CameraSpaceGaussian,
    sh_coeffs: &[Vector3<f64>],
    cam: &CameraModel,
    t0: f64,
    opts: &ProjectionOptions,
) -> Option<ScreenGaussian> {
    let dt = t0 - csg.mean_t;
    let temporal_weight = (-(dt * dt) / (2.0 * csg.scale_t * csg.scale_t)).exp();
    if temporal_weight < opts.temporal_cutoff {
        return None;
    }
    let shifted = csg.mean + csg.velocity * dt;
    if shifted.z < cam.near {
        return None;
    }
    let ray = csg.ray.as_ref();
    let mean2d = match opts.mode {
        ProjectionMode::Exact => to_pixel(&shifted, cam),
        ProjectionMode::Fast => {
            let r = ray?;
            r.pixel + r.tangent_velocity * dt
        }
    };
    let j = screen_jacobian(&shifted, cam);
    let (cov2d, conic) = screen_covariance(&j, &csg.cov_cam, opts.low_pass)?;
    let view = cam.rot_w2c.transpose() * shifted;
    Some(ScreenGaussian {
        index: csg.index,
        mean2d,
        depth: shifted.norm(),
        conic,
        cov2d,
        vel2d: ray.map_or_else(Vector2::zeros, |r| r.vel2d),
        temporal_weight,
        opacity: csg.opacity,
        color: sh::eval_color(sh_coeffs, &view),
    })
}

/// World-to-camera results for one scene and one camera pose.
///
/// The scene is assumed immutable while a cache is in use; callers that
/// edit the scene must call [`ProjectionCache::invalidate`].
#[derive(Debug, Default)]
pub struct ProjectionCache {
    key: Option<u64>,
    scene_len: usize,
    entries: Vec<CameraSpaceGaussian>,
    populations: usize,
}

impl ProjectionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invalidate(&mut self) {
        self.key = None;
        self.entries.clear();
    }

    /// Number of times the camera stage has been (re)computed.
    pub fn populations(&self) -> usize {
        self.populations
    }

    pub fn is_valid_for(&self, scene: &Scene4D, cam: &CameraModel) -> bool {
        self.key == Some(cam.pose_key()) && self.scene_len == scene.len()
    }

    /// Makes the cache valid for `cam`; returns `true` on a cache hit.
    pub fn ensure(&mut self, scene: &Scene4D, cam: &CameraModel) -> Result<bool> {
        if self.is_valid_for(scene, cam) {
            return Ok(true);
        }
        self.entries = scene
            .gaussians
            .par_iter()
            .enumerate()
            .map(|(i, g)| Ok(to_camera(i, &g.activate_indexed(i)?, cam)))
            .collect::<Result<Vec<_>>>()?;
        self.key = Some(cam.pose_key());
        self.scene_len = scene.len();
        self.populations += 1;
        Ok(false)
    }

    pub fn entries(&self) -> &[CameraSpaceGaussian] {
        &self.entries
    }

    /// Projects every cached primitive at `t0`. The cache must be valid.
    pub fn project(
        &self,
        scene: &Scene4D,
        cam: &CameraModel,
        t0: f64,
        opts: &ProjectionOptions,
    ) -> Vec<ScreenGaussian> {
        debug_assert!(self.is_valid_for(scene, cam));
        self.entries
            .par_iter()
            .filter_map(|c| project_gaussian(c, &scene.gaussians[c.index].sh, cam, t0, opts))
            .collect()
    }
}

/// Projects a scene, refreshing `cache` only when the camera changed.
pub fn project_scene(
    scene: &Scene4D,
    cam: &CameraModel,
    t0: f64,
    cache: &mut ProjectionCache,
    opts: &ProjectionOptions,
) -> Result<Vec<ScreenGaussian>> {
    cache.ensure(scene, cam)?;
    Ok(cache.project(scene, cam, t0, opts))
}

/// Upstream gradients with respect to the fields of a [`ScreenGaussian`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScreenGrad {
    pub mean2d: Vector2<f64>,
    pub conic: [f64; 3],
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub temporal_weight: f64,
    pub vel2d: Vector2<f64>,
    pub depth: f64,
}

/// Gradient with respect to the raw parameters of one [`Gaussian4D`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrad {
    pub mean: nalgebra::Vector4<f64>,
    pub log_scale: nalgebra::Vector4<f64>,
    pub rotation: nalgebra::Vector4<f64>,
    pub velocity: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<Vector3<f64>>,
}

impl GaussianGrad {
    pub fn zeros(n_coeffs: usize) -> Self {
        Self {
            mean: nalgebra::Vector4::zeros(),
            log_scale: nalgebra::Vector4::zeros(),
            rotation: nalgebra::Vector4::zeros(),
            velocity: Vector3::zeros(),
            opacity_logit: 0.0,
            sh: vec![Vector3::zeros(); n_coeffs],
        }
    }

    /// Same order as [`Gaussian4D::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(crate::scene::layout::len(self.sh.len()));
        out.extend_from_slice(self.mean.as_slice());
        out.extend_from_slice(self.log_scale.as_slice());
        out.extend_from_slice(self.rotation.as_slice());
        out.extend_from_slice(self.velocity.as_slice());
        out.push(self.opacity_logit);
        for c in &self.sh {
            out.extend_from_slice(c.as_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Chains screen-space gradients of one primitive back to its raw
/// parameters, accumulating into `out`. Forward intermediates are
/// recomputed from `g`; `g` must not have been culled at `(cam, t0)`.
///
/// Returns `dL/dμ_t` for the density statistics (also added to `out`).
pub fn project_gaussian_backward(
    g: &Gaussian4D,
    act: &ActivatedGaussian,
    cam: &CameraModel,
    t0: f64,
    opts: &ProjectionOptions,
    grad: &ScreenGrad,
    out: &mut GaussianGrad,
) -> f64 {
    let rot = &cam.rot_w2c;
    let p = rot * act.mean + cam.trans_w2c;
    let v = rot * act.velocity;
    let cov_cam = rot * act.covariance3d() * rot.transpose();
    let dt = t0 - act.mean_t;
    let st2 = act.scale_t * act.scale_t;
    let w = (-(dt * dt) / (2.0 * st2)).exp();
    let q = p + v * dt;
    let j = screen_jacobian(&q, cam);
    let (cov2d, _) = screen_covariance(&j, &cov_cam, opts.low_pass)
        .expect("backward called on a culled primitive");

    let mut d_p = Vector3::zeros();
    let mut d_v = Vector3::zeros();
    let mut d_q = Vector3::zeros();
    let mut d_dt = 0.0;

    // conic = inverse(cov2d): dL/dcov = -K G K with G symmetric.
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    let k = Matrix2::new(cov2d[2], -cov2d[1], -cov2d[1], cov2d[0]) / det;
    let g_conic = Matrix2::new(grad.conic[0], 0.5 * grad.conic[1], 0.5 * grad.conic[1], grad.conic[2]);
    let d_cov2 = -(k * g_conic * k);
    // d_cov2 is already the symmetric gradient of J Σ Jᵀ.
    let d_cov_cam = j.transpose() * d_cov2 * j;
    let d_j = 2.0 * d_cov2 * j * cov_cam;
    {
        let (fx, fy) = (cam.fx, cam.fy);
        let iz = 1.0 / q.z;
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        d_q.x += d_j[(0, 2)] * (-fx * iz2);
        d_q.y += d_j[(1, 2)] * (-fy * iz2);
        d_q.z += d_j[(0, 0)] * (-fx * iz2)
            + d_j[(0, 2)] * (2.0 * fx * q.x * iz3)
            + d_j[(1, 1)] * (-fy * iz2)
            + d_j[(1, 2)] * (2.0 * fy * q.y * iz3);
    }

    match opts.mode {
        ProjectionMode::Exact => d_q += j.transpose() * grad.mean2d,
        ProjectionMode::Fast => {
            let j0 = screen_jacobian(&p, cam);
            let u = j0 * v;
            d_p += j0.transpose() * grad.mean2d;
            d_v += j0.transpose() * grad.mean2d * dt;
            d_dt += u.dot(&grad.mean2d);
            // u = (fx (vx/pz - px vz/pz²), fy (vy/pz - py vz/pz²))
            let iz = 1.0 / p.z;
            let iz2 = iz * iz;
            let iz3 = iz2 * iz;
            let gm = grad.mean2d * dt;
            d_p.x += gm.x * (-cam.fx * v.z * iz2);
            d_p.y += gm.y * (-cam.fy * v.z * iz2);
            d_p.z += gm.x * cam.fx * (-v.x * iz2 + 2.0 * p.x * v.z * iz3)
                + gm.y * cam.fy * (-v.y * iz2 + 2.0 * p.y * v.z * iz3);
        }
    }

    d_q += q * (grad.depth / q.norm());

    // vel2d = (fx vx / pz, fy vy / pz) at the unshifted mean.
    {
        let iz = 1.0 / p.z;
        d_v.x += grad.vel2d.x * cam.fx * iz;
        d_v.y += grad.vel2d.y * cam.fy * iz;
        d_p.z -= (grad.vel2d.x * cam.fx * v.x + grad.vel2d.y * cam.fy * v.y) * iz * iz;
    }

    let view = rot.transpose() * q;
    let d_view = sh::eval_color_backward(&g.sh, &view, &grad.color, &mut out.sh);
    d_q += rot * d_view;

    d_dt += grad.temporal_weight * (-w * dt / st2);
    out.log_scale.w += grad.temporal_weight * w * dt * dt / st2;
    out.opacity_logit += grad.opacity * act.opacity * (1.0 - act.opacity);

    d_p += d_q;
    d_v += d_q * dt;
    d_dt += v.dot(&d_q);

    let d_mean = rot.transpose() * d_p;
    out.mean.x += d_mean.x;
    out.mean.y += d_mean.y;
    out.mean.z += d_mean.z;
    out.mean.w -= d_dt;
    out.velocity += rot.transpose() * d_v;

    let d_sigma = rot.transpose() * d_cov_cam * rot;
    let (d_ls, d_rot) = covariance3d_backward(g, act, &d_sigma);
    out.log_scale.x += d_ls.x;
    out.log_scale.y += d_ls.y;
    out.log_scale.z += d_ls.z;
    out.rotation += d_rot;
    -d_dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, Rotation3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_camera(w: u32, h: u32) -> CameraModel {
        CameraModel {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: w,
            height: h,
            rot_w2c: Matrix3::identity(),
            trans_w2c: Vector3::zeros(),
            near: 0.01,
        }
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let rot = Rotation3::new(axis * 0.5).into_inner();
        CameraModel {
            fx: rng.random_range(20.0..80.0),
            fy: rng.random_range(20.0..80.0),
            cx: 32.0,
            cy: 30.0,
            width: 64,
            height: 60,
            rot_w2c: rot,
            trans_w2c: Vector3::new(0.1, -0.2, 5.0),
            near: 0.01,
        }
    }

    fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian4D {
        let mut g = Gaussian4D::new(
            Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            rng.random_range(0.0..1.0),
            0,
        );
        g.log_scale = Vector4::from_fn(|_, _| rng.random_range(-2.5..-0.5));
        g.rotation = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        g.velocity = Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8));
        g
    }

    #[test]
    fn identity_camera_leaves_mean_and_velocity() {
        let mut g = Gaussian4D::new(Vector3::new(0.3, 0.2, 2.0), 0.5, 0);
        g.velocity = Vector3::new(0.1, -0.4, 0.2);
        let act = g.activate().unwrap();
        let c = to_camera(0, &act, &unit_camera(4, 4));
        assert_eq!(c.mean, act.mean);
        assert_eq!(c.velocity, act.velocity);
    }

    #[test]
    fn velocity_ignores_translation() {
        let mut g = Gaussian4D::new(Vector3::new(0.0, 0.0, 2.0), 0.5, 0);
        g.velocity = Vector3::new(1.0, 0.0, 0.0);
        let act = g.activate().unwrap();
        let mut cam = unit_camera(4, 4);
        cam.rot_w2c = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2).into_inner();
        cam.trans_w2c = Vector3::new(5.0, 0.0, 0.0);
        let c = to_camera(0, &act, &cam);
        assert!((c.velocity - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((c.mean - Vector3::new(5.0, 0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn camera_transform_matches_homogeneous_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let cam = random_camera(&mut rng);
            let g = random_gaussian(&mut rng);
            let act = g.activate().unwrap();
            let c = to_camera(0, &act, &cam);
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.rot_w2c);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&cam.trans_w2c);
            let p = m * act.mean.push(1.0);
            let v = m * act.velocity.push(0.0);
            assert!((c.mean - p.xyz()).norm() < 1e-12);
            assert!((c.velocity - v.xyz()).norm() < 1e-12);
        }
    }

    #[test]
    fn project_mean_examples() {
        assert_eq!(project_mean(&Vector3::new(0.0, 0.0, 2.0), 0.01), Some(Vector3::new(0.0, 0.0, 2.0)));
        let r = project_mean(&Vector3::new(2.0, 4.0, 2.0), 0.01).unwrap();
        assert_eq!(r.x, 1.0);
        assert_eq!(r.y, 2.0);
        assert!((r.z - 24f64.sqrt()).abs() < 1e-15);
        assert_eq!(project_mean(&Vector3::new(0.0, 0.0, 0.001), 0.01), None);
    }

    #[test]
    fn project_velocity_examples() {
        let p = Vector3::new(0.3, 0.1, 2.0);
        assert_eq!(project_velocity(&Vector3::new(1.0, 0.0, 0.0), &p, 0.01), Some(Vector3::new(0.5, 0.0, 1.0)));
        assert_eq!(project_velocity(&Vector3::zeros(), &p, 0.01), Some(Vector3::zeros()));
        assert_eq!(project_velocity(&Vector3::new(0.0, 3.0, 4.0), &p, 0.01), Some(Vector3::new(0.0, 1.5, 5.0)));
    }

    #[test]
    fn jacobian_on_axis_is_identity() {
        let j = jacobian_at(&Vector3::new(0.0, 0.0, 1.0), &unit_camera(4, 4)).unwrap();
        assert_eq!(j, Matrix3::identity());
        assert!(jacobian_at(&Vector3::new(0.0, 0.0, 0.001), &unit_camera(4, 4)).is_none());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let cam = random_camera(&mut rng);
            let p = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..6.0));
            let j = jacobian_at(&p, &cam).unwrap();
            let f = |p: &Vector3<f64>| {
                let r = project_mean(p, cam.near).unwrap();
                Vector3::new(cam.fx * r.x, cam.fy * r.y, r.z)
            };
            for c in 0..3 {
                let h = 1e-6 * p[c].abs().max(1.0);
                let mut pp = p;
                pp[c] += h;
                let mut pm = p;
                pm[c] -= h;
                let fd = (f(&pp) - f(&pm)) / (2.0 * h);
                for r in 0..3 {
                    let scale = j[(r, c)].abs().max(1e-3 * j.column(c).amax()).max(1e-12);
                    assert!((fd[r] - j[(r, c)]).abs() / scale < 1e-5, "r={r} c={c}: {} vs {}", fd[r], j[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn zero_dt_jacobian_equals_static_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cam = random_camera(&mut rng);
        let g = random_gaussian(&mut rng);
        let c = to_camera(0, &g.activate().unwrap(), &cam);
        let shifted = c.mean + c.velocity * 0.0;
        assert_eq!(jacobian_at(&shifted, &cam), jacobian_at(&c.mean, &cam));
    }

    #[test]
    fn temporal_weight_values() {
        let mut g = Gaussian4D::new(Vector3::new(0.0, 0.0, 3.0), 0.4, 0);
        g.log_scale.w = 0.2f64.ln();
        let cam = CameraModel { cx: 32.0, cy: 32.0, width: 64, height: 64, fx: 50.0, fy: 50.0, ..unit_camera(64, 64) };
        let c = to_camera(0, &g.activate().unwrap(), &cam);
        let opts = ProjectionOptions { temporal_cutoff: 0.0, ..Default::default() };
        let at_mean = project_gaussian(&c, &g.sh, &cam, 0.4, &opts).unwrap();
        assert_eq!(at_mean.temporal_weight, 1.0);
        let one_sigma = project_gaussian(&c, &g.sh, &cam, 0.6, &opts).unwrap();
        assert!((one_sigma.temporal_weight - (-0.5f64).exp()).abs() < 1e-12);
        assert!((one_sigma.temporal_weight - 0.6065).abs() < 1e-4);
        // default cutoff drops it far away in time
        assert!(project_gaussian(&c, &g.sh, &cam, 1.4, &ProjectionOptions::default()).is_none());
    }

    #[test]
    fn static_primitive_matches_static_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cam = random_camera(&mut rng);
        let mut g = random_gaussian(&mut rng);
        g.velocity = Vector3::zeros();
        let act = g.activate().unwrap();
        let c = to_camera(0, &act, &cam);
        let opts = ProjectionOptions { temporal_cutoff: 0.0, ..Default::default() };
        for t0 in [0.0, 0.3, 1.0] {
            for mode in [ProjectionMode::Exact, ProjectionMode::Fast] {
                let s = project_gaussian(&c, &g.sh, &cam, t0, &ProjectionOptions { mode, ..opts }).unwrap();
                let j = screen_jacobian(&c.mean, &cam);
                let (_, conic) = screen_covariance(&j, &c.cov_cam, LOW_PASS).unwrap();
                assert_eq!(s.mean2d, to_pixel(&c.mean, &cam));
                assert_eq!(s.conic, conic);
                assert_eq!(s.temporal_weight, act.temporal_weight(t0));
            }
        }
    }

    #[test]
    fn fast_mode_error_shrinks_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let opts_e = ProjectionOptions { temporal_cutoff: 0.0, ..Default::default() };
        let opts_f = ProjectionOptions { mode: ProjectionMode::Fast, ..opts_e };
        for _ in 0..20 {
            let cam = random_camera(&mut rng);
            let g = random_gaussian(&mut rng);
            let c = to_camera(0, &g.activate().unwrap(), &cam);
            let gap = |dt: f64| {
                let t0 = c.mean_t + dt;
                let e = project_gaussian(&c, &g.sh, &cam, t0, &opts_e).unwrap();
                let f = project_gaussian(&c, &g.sh, &cam, t0, &opts_f).unwrap();
                (e.mean2d - f.mean2d).norm()
            };
            assert_eq!(gap(0.0), 0.0);
            let mut dt = 0.2;
            while dt > 0.02 {
                let (big, small) = (gap(dt), gap(dt / 2.0));
                assert!(small * 4.0 / 3.0 <= big || big < 1e-12, "dt={dt}: {big} -> {small}");
                dt /= 2.0;
            }
        }
    }

    #[test]
    fn cache_reuses_camera_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut scene = Scene4D::new(0);
        scene.gaussians = (0..10).map(|_| random_gaussian(&mut rng)).collect();
        let cam = random_camera(&mut rng);
        let mut cache = ProjectionCache::new();
        let opts = ProjectionOptions::default();
        let a = project_scene(&scene, &cam, 0.1, &mut cache, &opts).unwrap();
        let b = project_scene(&scene, &cam, 0.9, &mut cache, &opts).unwrap();
        assert_eq!(cache.populations(), 1);
        assert!(!a.is_empty() || !b.is_empty());

        // transparency: a fresh cache gives identical results
        let mut fresh = ProjectionCache::new();
        assert_eq!(project_scene(&scene, &cam, 0.9, &mut fresh, &opts).unwrap(), b);

        let mut moved = cam.clone();
        moved.trans_w2c.z += 0.5;
        project_scene(&scene, &moved, 0.9, &mut cache, &opts).unwrap();
        assert_eq!(cache.populations(), 2);

        let empty = Scene4D::new(0);
        let mut c2 = ProjectionCache::new();
        assert!(project_scene(&empty, &cam, 0.5, &mut c2, &opts).unwrap().is_empty());
    }

    #[test]
    fn near_plane_culls_shifted_mean() {
        let mut g = Gaussian4D::new(Vector3::new(0.0, 0.0, 1.0), 0.5, 0);
        g.velocity = Vector3::new(0.0, 0.0, -4.0);
        let cam = unit_camera(8, 8);
        let c = to_camera(0, &g.activate().unwrap(), &cam);
        let opts = ProjectionOptions { temporal_cutoff: 0.0, ..Default::default() };
        assert!(project_gaussian(&c, &g.sh, &cam, 0.5, &opts).is_some());
        assert!(project_gaussian(&c, &g.sh, &cam, 0.9, &opts).is_none());
    }
}
