//! Procedural dynamic scenes with known ground truth.
//!
//! Targets are rendered by the slicing-first reference in [`crate::oracle`],
//! so training checks do not depend on the pipeline under test.
//!
//! Recipes:
//! * `orbiting-blobs`: three colored blobs moving around the origin, each
//!   made of two temporal segments that meet at `t = 0.5`.
//! * `moving-edge`: a bright bar translating in front of a static one.
//! * `abrupt-appearance`: static blobs plus one short-lived primitive
//!   centered at `t = 0.5`.
//! * `random-cloud-N`: `N` random primitives, used for benchmarks.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::CameraModel;
use crate::dataset::{Dataset, Frame, Split};
use crate::error::{Error, Result};
use crate::image_io::Image;
use crate::oracle;
use crate::render::RenderOptions;
use crate::scene::{logit, Gaussian4D, Scene4D};
use crate::sh;

pub const CAMERA_RADIUS: f64 = 4.0;
pub const FOV_Y_DEG: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecipeId {
    OrbitingBlobs,
    MovingEdge,
    AbruptAppearance,
    RandomCloud(usize),
}

impl FromStr for RecipeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbiting-blobs" => Ok(Self::OrbitingBlobs),
            "moving-edge" => Ok(Self::MovingEdge),
            "abrupt-appearance" => Ok(Self::AbruptAppearance),
            _ => s
                .strip_prefix("random-cloud-")
                .and_then(|n| n.parse().ok())
                .map(Self::RandomCloud)
                .ok_or_else(|| Error::UnknownRecipe(s.to_string())),
        }
    }
}

impl std::fmt::Display for RecipeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::OrbitingBlobs => write!(f, "orbiting-blobs"),
            Self::MovingEdge => write!(f, "moving-edge"),
            Self::AbruptAppearance => write!(f, "abrupt-appearance"),
            Self::RandomCloud(n) => write!(f, "random-cloud-{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecipe {
    pub id: RecipeId,
    pub seed: u64,
    pub n_cameras: usize,
    pub n_timesteps: usize,
    pub width: u32,
    pub height: u32,
}

impl SceneRecipe {
    pub fn new(id: RecipeId, seed: u64) -> Self {
        Self {
            id,
            seed,
            n_cameras: 8,
            n_timesteps: 20,
            width: 64,
            height: 64,
        }
    }
}

/// Cameras on a horizontal ring around the origin, alternating slightly
/// above and below the equator.
pub fn ring_cameras(n: usize, width: u32, height: u32) -> Vec<CameraModel> {
    (0..n)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / n as f64;
            let elevation = if k % 2 == 0 { 0.6 } else { -0.3 };
            let eye = Vector3::new(CAMERA_RADIUS * angle.sin(), elevation, -CAMERA_RADIUS * angle.cos());
            CameraModel::look_at(eye, Vector3::zeros(), Vector3::y(), FOV_Y_DEG, width, height)
        })
        .collect()
}

fn blob(mean: Vector3<f64>, mean_t: f64, scale: Vector3<f64>, scale_t: f64, color: Vector3<f64>, opacity: f64) -> Gaussian4D {
    let mut g = Gaussian4D::new(mean, mean_t, 0);
    g.log_scale = Vector4::new(scale.x.ln(), scale.y.ln(), scale.z.ln(), scale_t.ln());
    g.sh[0] = sh::rgb_to_dc(&color);
    g.opacity_logit = logit(opacity);
    g
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    Vector4::from_fn(|_, _| StandardNormal.sample(rng)).normalize()
}

/// Position of blob `k` on its orbit at time `t`.
pub fn orbit_position(k: usize, t: f64) -> Vector3<f64> {
    let phase = 2.0 * PI * k as f64 / 3.0;
    let angle = phase + 0.5 * PI * t;
    let radius = 0.7;
    Vector3::new(radius * angle.cos(), 0.25 * (k as f64 - 1.0), radius * angle.sin())
}

/// Temporal mean and velocity of segment `s ∈ {0, 1}` of blob `k`:
/// segment 0 covers `[0, 0.5]`, segment 1 covers `[0.5, 1]`, and both pass
/// through the orbit position at `t = 0.5`.
pub fn orbit_segment(k: usize, s: usize) -> (Vector3<f64>, f64, Vector3<f64>) {
    let (t0, t1) = if s == 0 { (0.0, 0.5) } else { (0.5, 1.0) };
    let (p0, p1) = (orbit_position(k, t0), orbit_position(k, t1));
    let mean_t = 0.5 * (t0 + t1);
    ((p0 + p1) * 0.5, mean_t, (p1 - p0) / (t1 - t0))
}

fn orbiting_blobs(rng: &mut ChaCha8Rng) -> Scene4D {
    let colors = [Vector3::new(0.9, 0.2, 0.15), Vector3::new(0.2, 0.85, 0.3), Vector3::new(0.2, 0.35, 0.95)];
    let mut scene = Scene4D::new(0);
    for (k, color) in colors.iter().enumerate() {
        let scale = Vector3::new(rng.random_range(0.12..0.2), rng.random_range(0.12..0.2), rng.random_range(0.12..0.2));
        let rot = random_rotation(rng);
        for s in 0..2 {
            let (mean, mean_t, vel) = orbit_segment(k, s);
            let mut g = blob(mean, mean_t, scale, 0.18, *color, 0.8);
            g.rotation = rot;
            g.velocity = vel;
            scene.gaussians.push(g);
        }
    }
    scene
}

fn moving_edge(_rng: &mut ChaCha8Rng) -> Scene4D {
    let mut scene = Scene4D::new(0);
    let n = 9;
    for i in 0..n {
        let y = -0.8 + 1.6 * i as f64 / (n - 1) as f64;
        let mut g = blob(
            Vector3::new(0.0, y, 0.0),
            0.5,
            Vector3::new(0.07, 0.12, 0.07),
            10.0,
            Vector3::new(0.95, 0.95, 0.9),
            0.95,
        );
        g.velocity = Vector3::new(1.2, 0.0, 0.0);
        scene.gaussians.push(g);
        scene.gaussians.push(blob(
            Vector3::new(-0.9, y * 0.6, 0.4),
            0.5,
            Vector3::new(0.1, 0.1, 0.1),
            10.0,
            Vector3::new(0.15, 0.25, 0.8),
            0.9,
        ));
    }
    scene
}

fn abrupt_appearance(rng: &mut ChaCha8Rng) -> Scene4D {
    let mut scene = Scene4D::new(0);
    for k in 0..4 {
        let angle = 2.0 * PI * k as f64 / 4.0 + 0.3;
        let mean = Vector3::new(0.7 * angle.cos(), rng.random_range(-0.3..0.3), 0.7 * angle.sin());
        let color = Vector3::new(rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9));
        let mut g = blob(mean, 0.5, Vector3::repeat(0.18), 10.0, color, 0.85);
        g.rotation = random_rotation(rng);
        scene.gaussians.push(g);
    }
    scene.gaussians.push(blob(
        Vector3::new(0.0, 0.0, 0.0),
        0.5,
        Vector3::repeat(0.22),
        0.05,
        Vector3::new(1.0, 0.9, 0.2),
        0.95,
    ));
    scene
}

/// `n` primitives in the cube `[-1, 1]³` with small spatial scales,
/// temporal means uniform in `[0, 1]`, temporal scales in `[0.05, 0.3]`
/// and velocities up to 0.5 per axis.
pub fn random_cloud(n: usize, seed: u64) -> Scene4D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene4D::new(0);
    scene.gaussians.reserve(n);
    for _ in 0..n {
        let mean = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let mut g = Gaussian4D::new(mean, rng.random_range(0.0..1.0), 0);
        g.log_scale = Vector4::new(
            rng.random_range(0.004f64..0.02).ln(),
            rng.random_range(0.004f64..0.02).ln(),
            rng.random_range(0.004f64..0.02).ln(),
            rng.random_range(0.05f64..0.3).ln(),
        );
        g.rotation = random_rotation(&mut rng);
        g.velocity = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        g.opacity_logit = logit(rng.random_range(0.2..0.9));
        g.sh[0] = sh::rgb_to_dc(&Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)));
        scene.gaussians.push(g);
    }
    scene
}

pub fn build_scene(id: RecipeId, seed: u64) -> Scene4D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match id {
        RecipeId::OrbitingBlobs => orbiting_blobs(&mut rng),
        RecipeId::MovingEdge => moving_edge(&mut rng),
        RecipeId::AbruptAppearance => abrupt_appearance(&mut rng),
        RecipeId::RandomCloud(n) => random_cloud(n, seed),
    }
}

/// Samples a colored point cloud from the ground-truth primitives at
/// random times, with their spatial spread.
pub fn sample_points(scene: &Scene4D, per_gaussian: usize, seed: u64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for g in &scene.gaussians {
        let act = g.activate().expect("generated scenes are finite");
        let l = act.covariance3d().cholesky().expect("positive definite").l();
        let color = sh::dc_to_rgb(&g.sh[0]).map(|c| c.clamp(0.0, 1.0));
        let mut taken = 0;
        let mut tries = 0;
        while taken < per_gaussian && tries < 50 * per_gaussian {
            tries += 1;
            let t: f64 = rng.random();
            if act.temporal_weight(t) < 0.5 {
                continue;
            }
            let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            points.push(act.mean_at(t) + l * z);
            colors.push(color);
            taken += 1;
        }
    }
    (points, colors)
}

/// Ground truth and rendered targets. The last camera is held out.
pub fn generate(recipe: &SceneRecipe) -> Result<(Scene4D, Dataset)> {
    if recipe.n_cameras == 0 || recipe.n_timesteps == 0 || recipe.width == 0 || recipe.height == 0 {
        return Err(Error::InvalidScene("recipe needs cameras, timesteps and a positive size".into()));
    }
    let scene = build_scene(recipe.id, recipe.seed);
    let cameras = ring_cameras(recipe.n_cameras, recipe.width, recipe.height);
    let opts = RenderOptions::default();
    let mut frames = Vec::with_capacity(cameras.len() * recipe.n_timesteps);
    for (c, cam) in cameras.iter().enumerate() {
        for k in 0..recipe.n_timesteps {
            let time = if recipe.n_timesteps == 1 { 0.5 } else { k as f64 / (recipe.n_timesteps - 1) as f64 };
            let fb = oracle::render_slicing_first(&scene, cam, time, &opts)?;
            let data = fb.color.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            frames.push(Frame {
                camera: cam.clone(),
                time,
                image: Image::new(fb.width, fb.height, data),
                split: if c + 1 == cameras.len() && cameras.len() > 1 { Split::Test } else { Split::Train },
                file_path: format!("images/cam{c:02}_t{k:03}.png"),
            });
        }
    }
    let per_gaussian = (2000 / scene.len().max(1)).clamp(1, 100);
    let (points, colors) = sample_points(&scene, per_gaussian, recipe.seed);
    Ok((scene, Dataset { frames, points, colors }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{to_pixel, ProjectionCache};

    #[test]
    fn recipe_ids_parse() {
        assert_eq!("random-cloud-100000".parse::<RecipeId>().unwrap(), RecipeId::RandomCloud(100_000));
        assert_eq!("moving-edge".parse::<RecipeId>().unwrap().to_string(), "moving-edge");
        assert!(matches!("spiral".parse::<RecipeId>(), Err(Error::UnknownRecipe(_))));
    }

    #[test]
    fn random_cloud_has_requested_size() {
        let s = random_cloud(100_000, 1);
        assert_eq!(s.len(), 100_000);
        s.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let mut r = SceneRecipe::new(RecipeId::AbruptAppearance, 3);
        r.n_cameras = 3;
        r.n_timesteps = 4;
        r.width = 24;
        r.height = 20;
        let (a, da) = generate(&r).unwrap();
        let (b, db) = generate(&r).unwrap();
        assert_eq!(a, b);
        assert_eq!(da.points, db.points);
        for (x, y) in da.frames.iter().zip(&db.frames) {
            assert_eq!(x.image, y.image);
        }
        assert_eq!(da.test().count(), 4);
        assert!(da.frames.iter().all(|f| f.image.data.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn orbit_segments_meet_and_follow_trajectory() {
        let scene = build_scene(RecipeId::OrbitingBlobs, 0);
        scene.validate().unwrap();
        let cam = &ring_cameras(8, 64, 64)[1];
        let mut cache = ProjectionCache::new();
        cache.ensure(&scene, cam).unwrap();
        let opts = crate::projection::ProjectionOptions { temporal_cutoff: 0.0, ..Default::default() };
        for (i, g) in scene.gaussians.iter().enumerate() {
            let act = g.activate().unwrap();
            let (k, s) = (i / 2, i % 2);
            // both segments pass through the orbit position at t = 0.5
            assert!((act.mean_at(0.5) - orbit_position(k, 0.5)).norm() < 1e-12);
            let t = act.mean_t;
            let expected = to_pixel(&cam.world_to_camera(&orbit_segment(k, s).0), cam);
            let projected = crate::projection::project_gaussian(&cache.entries()[i], &g.sh, cam, t, &opts).unwrap();
            assert!((projected.mean2d - expected).norm() < 1e-4);
        }
    }
}
