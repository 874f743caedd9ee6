//! End-to-end rendering and its backward pass.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::error::Result;
use crate::projection::{
    project_gaussian_backward, GaussianGrad, ProjectionCache, ProjectionMode, ProjectionOptions, ScreenGaussian,
};
use crate::raster::{self, BufferGrads, FrameBuffers, RasterOptions, RasterState};
use crate::scene::Scene4D;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RenderOptions {
    pub projection: ProjectionOptions,
    pub raster: RasterOptions,
}

impl RenderOptions {
    pub fn with_mode(mode: ProjectionMode) -> Self {
        Self {
            projection: ProjectionOptions::with_mode(mode),
            raster: RasterOptions::default(),
        }
    }

    /// Temporal culling off, as used for equivalence checks.
    pub fn uncut(mode: ProjectionMode) -> Self {
        Self {
            projection: ProjectionOptions {
                mode,
                temporal_cutoff: 0.0,
                ..ProjectionOptions::default()
            },
            raster: RasterOptions::default(),
        }
    }

    /// Temporal culling off and compositing thresholds relaxed so the image
    /// is a smooth function of every parameter.
    pub fn continuous(mode: ProjectionMode) -> Self {
        Self {
            raster: RasterOptions::continuous(),
            ..Self::uncut(mode)
        }
    }
}

/// Renders one frame with a throwaway cache.
pub fn render(scene: &Scene4D, cam: &CameraModel, t0: f64, opts: &RenderOptions) -> Result<FrameBuffers> {
    let mut cache = ProjectionCache::new();
    Ok(render_cached(scene, cam, t0, &mut cache, opts)?.buffers)
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub t0: f64,
    pub screen: Vec<ScreenGaussian>,
    pub state: RasterState,
    pub buffers: FrameBuffers,
    /// Whether the camera stage came from the cache.
    pub cache_hit: bool,
}

impl ForwardPass {
    /// Number of primitives that survived culling.
    pub fn num_visible(&self) -> usize {
        self.screen.len()
    }
}

pub fn render_cached(
    scene: &Scene4D,
    cam: &CameraModel,
    t0: f64,
    cache: &mut ProjectionCache,
    opts: &RenderOptions,
) -> Result<ForwardPass> {
    cam.validate()?;
    let cache_hit = cache.ensure(scene, cam)?;
    let screen = cache.project(scene, cam, t0, &opts.projection);
    let (buffers, state) = raster::rasterize(&screen, cam.width as usize, cam.height as usize, &scene.background, &opts.raster);
    Ok(ForwardPass {
        t0,
        screen,
        state,
        buffers,
        cache_hit,
    })
}

/// Per-primitive gradients of one backward pass plus the statistics used
/// by density control.
#[derive(Clone, Debug)]
pub struct GradientBuffer {
    pub grads: Vec<GaussianGrad>,
    /// Norm of the screen-position gradient, in normalized device units.
    pub screen_grad_norm: Vec<f64>,
    /// `|dL/dμ_t|`.
    pub temporal_grad: Vec<f64>,
    /// Whether the primitive touched the image in this pass.
    pub visible: Vec<bool>,
}

impl GradientBuffer {
    pub fn zeros(n: usize, n_coeffs: usize) -> Self {
        Self {
            grads: vec![GaussianGrad::zeros(n_coeffs); n],
            screen_grad_norm: vec![0.0; n],
            temporal_grad: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(GaussianGrad::is_finite)
    }
}

/// Chains buffer gradients back to every parameter of `scene`.
pub fn backward(
    scene: &Scene4D,
    cam: &CameraModel,
    opts: &RenderOptions,
    pass: &ForwardPass,
    grads: &BufferGrads,
) -> Result<GradientBuffer> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let screen_grads = raster::rasterize_backward(&pass.screen, &pass.state, w, h, &scene.background, grads, &opts.raster);
    let n_coeffs = scene.num_coeffs();
    let ndc = Vector2::new(0.5 * w as f64, 0.5 * h as f64);
    let per_entry: Vec<_> = pass
        .screen
        .par_iter()
        .zip(screen_grads.par_iter())
        .map(|(s, sg)| {
            let g = &scene.gaussians[s.index];
            let act = g.activate_indexed(s.index)?;
            let mut out = GaussianGrad::zeros(n_coeffs);
            let d_mean_t = project_gaussian_backward(g, &act, cam, pass.t0, &opts.projection, sg, &mut out);
            let visible = raster::pixel_footprint(s, w, h, opts.raster.alpha_min).is_some();
            let screen_norm = sg.mean2d.component_mul(&ndc).norm();
            Ok((s.index, out, screen_norm, d_mean_t.abs(), visible))
        })
        .collect::<Result<_>>()?;
    let mut buf = GradientBuffer::zeros(scene.len(), n_coeffs);
    for (i, g, s, t, v) in per_entry {
        buf.grads[i] = g;
        buf.screen_grad_norm[i] = s;
        buf.temporal_grad[i] = t;
        buf.visible[i] = v;
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian4D;
    use nalgebra::Vector3;

    fn small_scene() -> Scene4D {
        let mut scene = Scene4D::new(1);
        for k in 0..4 {
            let mut g = Gaussian4D::new(Vector3::new(0.3 * k as f64 - 0.4, 0.1, 0.0), 0.5, 1);
            g.log_scale = nalgebra::Vector4::new(-1.5, -1.8, -1.6, 30.0);
            g.opacity_logit = 1.0;
            g.sh[0] = Vector3::new(0.5, -0.2, 0.1 * k as f64);
            scene.gaussians.push(g);
        }
        scene
    }

    fn camera() -> CameraModel {
        CameraModel::look_at(Vector3::new(0.0, 0.0, -3.0), Vector3::zeros(), Vector3::y(), 45.0, 24, 20)
    }

    #[test]
    fn render_is_deterministic() {
        let scene = small_scene();
        let opts = RenderOptions::default();
        let a = render(&scene, &camera(), 0.3, &opts).unwrap();
        let b = render(&scene, &camera(), 0.3, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn static_scene_is_time_invariant() {
        let scene = small_scene();
        let opts = RenderOptions::default();
        let a = render(&scene, &camera(), 0.0, &opts).unwrap();
        let b = render(&scene, &camera(), 1.0, &opts).unwrap();
        assert_eq!(a.color, b.color);
    }

    #[test]
    fn velocity_gradient_vanishes_at_temporal_mean() {
        let mut scene = small_scene();
        for g in &mut scene.gaussians {
            g.velocity = Vector3::new(0.3, -0.2, 0.1);
            g.log_scale.w = -1.0;
        }
        let opts = RenderOptions::default();
        let cam = camera();
        let pass = render_cached(&scene, &cam, 0.5, &mut ProjectionCache::new(), &opts).unwrap();
        let mut grads = BufferGrads::zeros(24, 20);
        grads.color.iter_mut().enumerate().for_each(|(i, v)| *v = ((i * 7) % 5) as f64 - 2.0);
        let gb = backward(&scene, &cam, &opts, &pass, &grads).unwrap();
        assert!(gb.grads.iter().any(|g| g.mean.x != 0.0));
        for g in &gb.grads {
            assert_eq!(g.velocity, Vector3::zeros());
        }
    }
}
