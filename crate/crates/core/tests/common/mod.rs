#![allow(dead_code)]

use d4gs::optim::Adam;
use d4gs::projection::project_scene;
use d4gs::render::render_cached;
use d4gs::scene::{layout, logit, Gaussian4D, Scene4D};
use d4gs::sh::rgb_to_dc;
use d4gs::synthetic::ring_cameras;
use d4gs::train::{densify_and_prune, DensifyContext, DensityStats, TrainConfig};
use d4gs::{render, CameraModel, ProjectionCache, ProjectionMode, ProjectionOptions, RenderOptions};
use nalgebra::{Vector3, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random moving scene inside the unit cube with splats a few pixels wide
/// at 64×64 from the synthetic camera ring.
pub fn random_scene(seed: u64, n: usize, sh_degree: u8) -> Scene4D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene4D::new(sh_degree);
    scene.background = Vector3::from_fn(|_, _| rng.random_range(0.0..0.3));
    for _ in 0..n {
        let mean = Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8));
        let mut g = Gaussian4D::new(mean, rng.random_range(0.0..1.0), sh_degree);
        g.log_scale = Vector4::new(
            rng.random_range(-3.5f64..-1.8),
            rng.random_range(-3.5f64..-1.8),
            rng.random_range(-3.5f64..-1.8),
            rng.random_range(-2.0f64..0.5),
        );
        g.rotation = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if g.rotation.norm() < 0.1 {
            g.rotation = Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
        g.velocity = Vector3::from_fn(|_, _| rng.random_range(-0.6..0.6));
        g.opacity_logit = logit(rng.random_range(0.1..0.95));
        for c in g.sh.iter_mut() {
            *c = Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4));
        }
        g.sh[0] = Vector3::from_fn(|_, _| rng.random_range(-1.2..1.2));
        scene.gaussians.push(g);
    }
    scene
}

pub fn random_camera(seed: u64, width: u32, height: u32) -> CameraModel {
    let cams = ring_cameras(8, width, height);
    cams[(seed % 8) as usize].clone()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `Σ αᵢTᵢ + T_final = 1` at every pixel. The accumulated weight is read
/// from a render with white primitives on black, the final transmittance
/// from black primitives on white.
pub fn check_energy(scene: &Scene4D, cam: &CameraModel, t0: f64, tol: f64) -> Result<f64, String> {
    let mut white = scene.clone();
    white.background = Vector3::zeros();
    let mut black = scene.clone();
    black.background = Vector3::new(1.0, 1.0, 1.0);
    for (w, b) in white.gaussians.iter_mut().zip(black.gaussians.iter_mut()) {
        for c in w.sh.iter_mut().chain(b.sh.iter_mut()) {
            *c = Vector3::zeros();
        }
        w.sh[0] = rgb_to_dc(&Vector3::repeat(1.0));
        b.sh[0] = rgb_to_dc(&Vector3::zeros());
    }
    let opts = RenderOptions::default();
    let acc = render(&white, cam, t0, &opts).map_err(|e| e.to_string())?;
    let rest = render(&black, cam, t0, &opts).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for ((a, t), alpha) in acc.color.iter().zip(&rest.color).zip(acc.alpha.iter().flat_map(|a| [a; 3])) {
        worst = worst.max((a + t - 1.0).abs());
        if (a - alpha).abs() > tol {
            return Err(format!("alpha buffer {alpha} differs from accumulated weight {a}"));
        }
    }
    if worst > tol {
        return Err(format!("energy off by {worst:e}"));
    }
    Ok(worst)
}

/// Every projected conic is positive definite and inverts its covariance.
pub fn check_conics(scene: &Scene4D, cam: &CameraModel, t0: f64, mode: ProjectionMode) -> Result<usize, String> {
    let mut cache = ProjectionCache::new();
    let screen = project_scene(scene, cam, t0, &mut cache, &ProjectionOptions::with_mode(mode)).map_err(|e| e.to_string())?;
    for s in &screen {
        let [a, b, c] = s.conic;
        let det = a * c - b * b;
        if !(a > 0.0 && c > 0.0 && det > 0.0) {
            return Err(format!("primitive {} conic {:?} not positive definite", s.index, s.conic));
        }
        let [ca, cb, cc] = s.cov2d;
        let prod = [a * ca + b * cb, a * cb + b * cc, b * ca + c * cb, b * cb + c * cc];
        let scale = ca.abs().max(cc.abs()) * a.abs().max(c.abs());
        let off = (prod[0] - 1.0).abs().max(prod[1].abs()).max(prod[2].abs()).max((prod[3] - 1.0).abs());
        if off > 1e-9 * scale.max(1.0) {
            return Err(format!("primitive {} conic does not invert covariance ({off:e})", s.index));
        }
    }
    Ok(screen.len())
}

/// Rendering does not depend on the storage order of primitives.
pub fn check_permutation(scene: &Scene4D, cam: &CameraModel, t0: f64, seed: u64, tol: f64) -> Result<f64, String> {
    let mut shuffled = scene.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.gaussians.shuffle(&mut rng);
    let opts = RenderOptions::default();
    let a = render(scene, cam, t0, &opts).map_err(|e| e.to_string())?;
    let b = render(&shuffled, cam, t0, &opts).map_err(|e| e.to_string())?;
    let d = max_abs_diff(&a.color, &b.color)
        .max(max_abs_diff(&a.depth, &b.depth))
        .max(max_abs_diff(&a.alpha, &b.alpha))
        .max(max_abs_diff(&a.flow, &b.flow));
    if d > tol {
        return Err(format!("shuffled render differs by {d:e}"));
    }
    Ok(d)
}

/// A cache warmed at other timestamps gives the same frame as a fresh one.
pub fn check_cache_transparency(scene: &Scene4D, cam: &CameraModel, times: &[f64], mode: ProjectionMode) -> Result<(), String> {
    let opts = RenderOptions::with_mode(mode);
    let mut warm = ProjectionCache::new();
    for (k, &t) in times.iter().enumerate() {
        let cached = render_cached(scene, cam, t, &mut warm, &opts).map_err(|e| e.to_string())?;
        if cached.cache_hit != (k > 0) {
            return Err(format!("frame {k}: cache_hit = {}", cached.cache_hit));
        }
        let fresh = render(scene, cam, t, &opts).map_err(|e| e.to_string())?;
        if cached.buffers != fresh {
            return Err(format!("cached frame at t={t} differs from a fresh render"));
        }
    }
    if warm.populations() != 1 {
        return Err(format!("camera stage ran {} times", warm.populations()));
    }
    Ok(())
}

/// Spatial splits and clones keep the temporal mean and scale bitwise;
/// temporal splits keep every spatial shape, appearance and motion field.
pub fn check_densify_independence(scene: &Scene4D, seed: u64) -> Result<(), String> {
    let n = scene.len();
    let mut stats = DensityStats::new(n);
    stats.screen_grad.fill(1.0);
    stats.temporal_grad.fill(1.0);
    stats.count.fill(1);
    let ctx = DensifyContext {
        extent: 1.0,
        temporal_floor: 0.0,
    };
    let base = TrainConfig {
        prune_opacity: 0.0,
        ..TrainConfig::default()
    };
    let stride = layout::len(scene.num_coeffs());

    let spatial = TrainConfig {
        temporal_split: false,
        ..base.clone()
    };
    let mut s = scene.clone();
    let mut adam = Adam::new(0.9, 0.999, 1e-15, stride, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    densify_and_prune(&mut s, &mut adam, &mut stats.clone(), &spatial, &ctx, &mut rng);
    if s.len() != 2 * n {
        return Err(format!("spatial stage produced {} from {n}", s.len()));
    }
    for (i, parent) in scene.gaussians.iter().enumerate() {
        for child in &s.gaussians[2 * i..2 * i + 2] {
            if child.mean.w.to_bits() != parent.mean.w.to_bits()
                || child.log_scale.w.to_bits() != parent.log_scale.w.to_bits()
            {
                return Err(format!("spatial split of {i} changed the temporal mean or scale"));
            }
        }
    }

    let temporal = TrainConfig {
        spatial_split: false,
        ..base
    };
    let mut s = scene.clone();
    let mut adam = Adam::new(0.9, 0.999, 1e-15, stride, n);
    densify_and_prune(&mut s, &mut adam, &mut stats, &temporal, &ctx, &mut rng);
    if s.len() != 2 * n {
        return Err(format!("temporal stage produced {} from {n}", s.len()));
    }
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    for (i, parent) in scene.gaussians.iter().enumerate() {
        for child in &s.gaussians[2 * i..2 * i + 2] {
            let same = bits(&child.log_scale.as_slice()[..3]) == bits(&parent.log_scale.as_slice()[..3])
                && bits(child.rotation.as_slice()) == bits(parent.rotation.as_slice())
                && bits(child.velocity.as_slice()) == bits(parent.velocity.as_slice())
                && child.opacity_logit.to_bits() == parent.opacity_logit.to_bits()
                && child.sh == parent.sh;
            if !same {
                return Err(format!("temporal split of {i} changed a spatial field"));
            }
        }
    }
    Ok(())
}
