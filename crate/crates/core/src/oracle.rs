//! Slicing-first reference renderer.
//!
//! Each primitive is lifted to a full 4D Gaussian with covariance
//! `[[U, V], [Vᵀ, W]]`, conditioned on the requested time to obtain a 3D
//! Gaussian, and that 3D Gaussian is projected like a static one. Nothing
//! is cached between calls. The result serves both as a correctness
//! reference for [`crate::render`] and as a timing baseline.

use nalgebra::{Matrix3, Vector3, Vector4};
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::projection::{screen_covariance, screen_jacobian, to_pixel, ProjectionOptions, ScreenGaussian};
use crate::raster::{self, FrameBuffers};
use crate::render::RenderOptions;
use crate::scene::{ActivatedGaussian, Scene4D};
use crate::sh;

/// A 4D Gaussian with its covariance in block form.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian4DFull {
    pub mean: Vector4<f64>,
    pub u: Matrix3<f64>,
    pub v: Vector3<f64>,
    pub w: f64,
    pub opacity: f64,
}

/// A time slice of a [`Gaussian4DFull`].
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub covariance: Matrix3<f64>,
    pub mean: Vector3<f64>,
    /// `exp(-½ (t - μ_t)² / W)`.
    pub weight: f64,
}

pub fn lift(g: &ActivatedGaussian) -> Gaussian4DFull {
    let w = g.scale_t * g.scale_t;
    let v = g.velocity * w;
    let u = g.covariance3d() + g.velocity * g.velocity.transpose() * w;
    Gaussian4DFull {
        mean: Vector4::new(g.mean.x, g.mean.y, g.mean.z, g.mean_t),
        u,
        v,
        w,
        opacity: g.opacity,
    }
}

impl Gaussian4DFull {
    pub fn covariance4d(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.u);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m.fixed_view_mut::<1, 3>(3, 0).copy_from(&self.v.transpose());
        m[(3, 3)] = self.w;
        m
    }
}

pub fn slice(g: &Gaussian4DFull, t: f64) -> Result<Slice> {
    if !(g.w > 0.0) {
        return Err(Error::InvalidScene(format!("temporal variance must be positive, got {}", g.w)));
    }
    let dt = t - g.mean.w;
    let inv_w = 1.0 / g.w;
    Ok(Slice {
        covariance: g.u - g.v * g.v.transpose() * inv_w,
        mean: g.mean.xyz() + g.v * (dt * inv_w),
        weight: (-0.5 * inv_w * dt * dt).exp(),
    })
}

/// Static projection of a sliced Gaussian; shares every screen-space
/// helper with the projection-first pipeline.
fn project_slice(
    index: usize,
    s: &Slice,
    opacity: f64,
    coeffs: &[Vector3<f64>],
    cam: &CameraModel,
    opts: &ProjectionOptions,
) -> Option<ScreenGaussian> {
    if s.weight < opts.temporal_cutoff {
        return None;
    }
    let p = cam.rot_w2c * s.mean + cam.trans_w2c;
    if p.z < cam.near {
        return None;
    }
    let cov_cam = cam.rot_w2c * s.covariance * cam.rot_w2c.transpose();
    let j = screen_jacobian(&p, cam);
    let (cov2d, conic) = screen_covariance(&j, &cov_cam, opts.low_pass)?;
    Some(ScreenGaussian {
        index,
        mean2d: to_pixel(&p, cam),
        depth: p.norm(),
        conic,
        cov2d,
        vel2d: nalgebra::Vector2::zeros(),
        temporal_weight: s.weight,
        opacity,
        color: sh::eval_color(coeffs, &(cam.rot_w2c.transpose() * p)),
    })
}

/// Full chain for every primitive: activate, lift, slice, then project.
pub fn project_slicing_first(
    scene: &Scene4D,
    cam: &CameraModel,
    t0: f64,
    opts: &ProjectionOptions,
) -> Result<Vec<ScreenGaussian>> {
    let out: Vec<Option<ScreenGaussian>> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let full = lift(&g.activate_indexed(i)?);
            let s = slice(&full, t0)?;
            Ok(project_slice(i, &s, full.opacity, &g.sh, cam, opts))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Color, depth and alpha through the slicing-first chain. Flow is zero.
pub fn render_slicing_first(
    scene: &Scene4D,
    cam: &CameraModel,
    t0: f64,
    opts: &RenderOptions,
) -> Result<FrameBuffers> {
    cam.validate()?;
    let screen = project_slicing_first(scene, cam, t0, &opts.projection)?;
    Ok(raster::rasterize(&screen, cam.width as usize, cam.height as usize, &scene.background, &opts.raster).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian4D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn activated(vel: Vector3<f64>, scale_t: f64) -> ActivatedGaussian {
        let mut g = Gaussian4D::new(Vector3::new(0.1, 0.2, 0.3), 0.5, 0);
        g.log_scale = Vector4::new(0.0, 0.0, 0.0, scale_t.ln());
        g.velocity = vel;
        g.activate().unwrap()
    }

    #[test]
    fn block_diagonal_lift() {
        let f = lift(&activated(Vector3::zeros(), 1.0));
        assert!((f.u - Matrix3::identity()).amax() < 1e-15);
        assert_eq!(f.v, Vector3::zeros());
        assert!((f.w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lift_with_velocity() {
        let f = lift(&activated(Vector3::new(1.0, 0.0, 0.0), 2f64.sqrt()));
        assert!((f.w - 2.0).abs() < 1e-12);
        assert!((f.v - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        let expected = Matrix3::identity() + Matrix3::from_diagonal(&Vector3::new(2.0, 0.0, 0.0));
        assert!((f.u - expected).amax() < 1e-12);
        let s = slice(&f, 0.5).unwrap();
        assert!((s.covariance - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn lift_then_slice_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut g = Gaussian4D::new(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)), rng.random_range(0.0..1.0), 0);
            g.log_scale = Vector4::from_fn(|_, _| rng.random_range(-2.0..0.5));
            g.rotation = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            g.velocity = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let act = g.activate().unwrap();
            let f = lift(&act);
            let s = slice(&f, act.mean_t).unwrap();
            assert!((s.covariance - act.covariance3d()).amax() < 1e-9);
            assert!((f.v / f.w - act.velocity).norm() < 1e-9);
            assert!((1.0 / f.w - 1.0 / (act.scale_t * act.scale_t)).abs() < 1e-9);
            assert_eq!(s.mean, act.mean);
            assert_eq!(s.weight, 1.0);
        }
    }

    #[test]
    fn uncorrelated_time_keeps_covariance() {
        let f = Gaussian4DFull {
            mean: Vector4::zeros(),
            u: Matrix3::identity(),
            v: Vector3::zeros(),
            w: 1.0,
            opacity: 0.5,
        };
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(slice(&f, t).unwrap().covariance, Matrix3::identity());
        }
        let bad = Gaussian4DFull { w: 0.0, ..f };
        assert!(slice(&bad, 0.0).is_err());
    }

    #[test]
    fn slice_is_schur_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let a = nalgebra::Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let sigma = a * a.transpose() + nalgebra::Matrix4::identity() * 0.1;
            let f = Gaussian4DFull {
                mean: Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                u: sigma.fixed_view::<3, 3>(0, 0).into(),
                v: sigma.fixed_view::<3, 1>(0, 3).into(),
                w: sigma[(3, 3)],
                opacity: 0.5,
            };
            let s = slice(&f, 0.7).unwrap();
            // Schur complement via the inverse: (Σ⁻¹)_xyz block inverted
            let inv = sigma.try_inverse().unwrap();
            let block: Matrix3<f64> = inv.fixed_view::<3, 3>(0, 0).into();
            let schur = block.try_inverse().unwrap();
            assert!((s.covariance - schur).amax() < 1e-10);
            assert!(s.covariance.cholesky().is_some());
            assert_eq!(f.covariance4d(), sigma);
        }
    }
}
