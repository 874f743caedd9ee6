//! Optimization loop with adaptive density control.
//!
//! Every step renders one training view, evaluates
//! `(1 - λ_dssim)·L1 + λ_dssim·D-SSIM + L_fg`, back-propagates to all raw
//! parameters and applies Adam. Between steps, primitives with large
//! average screen-position gradients are cloned or split in space, and
//! primitives with large average temporal-mean gradients are split in time.

use std::io::Write;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Frame};
use crate::error::{Error, Result};
use crate::loss::{self, EdgeSource, LossConfig, Normalization};
use crate::optim::{exponential_decay, Adam};
use crate::projection::{ProjectionCache, ProjectionMode};
use crate::raster::BufferGrads;
use crate::render::{self, GradientBuffer, RenderOptions};
use crate::scene::{layout, logit, sigmoid, Gaussian4D, Scene4D};
use crate::sh;

/// Training settings. Read from `key = value` text; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub sh_degree: u8,
    pub mode: String,
    pub background: [f64; 3],

    pub lr_means: f64,
    pub lr_means_final: f64,
    pub lr_mean_t: f64,
    pub lr_velocity: f64,
    pub lr_scales: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,

    pub densify_grad_threshold: f64,
    /// Defaults to `densify_grad_threshold` when absent.
    pub temporal_grad_threshold: Option<f64>,
    pub densify_interval: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub opacity_reset_interval: usize,
    pub prune_opacity: f64,
    pub split_shrink: f64,
    /// Primitives whose largest spatial scale is at most this fraction of
    /// the camera extent are cloned instead of split.
    pub percent_dense: f64,
    pub spatial_split: bool,
    pub temporal_split: bool,
    /// Minimum temporal scale for a temporal split; `1/(4·frames)` if absent.
    pub temporal_split_floor: Option<f64>,
    pub max_gaussians: usize,

    pub lambda_dssim: f64,
    pub lambda_flow: f64,
    pub epsilon_flow: f64,
    /// `max`, `fixed:<scale>` or `percentile:<p>`.
    pub edge_normalization: String,
    /// `ground_truth` or `rendered`.
    pub edge_source: String,

    /// Held-out evaluation and log interval; 0 evaluates only at the end.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            seed: 0,
            sh_degree: 3,
            mode: "exact".into(),
            background: [0.0; 3],
            lr_means: 1.6e-4,
            lr_means_final: 1.6e-6,
            lr_mean_t: 1.6e-4,
            lr_velocity: 1.6e-4,
            lr_scales: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_sh: 2.5e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-15,
            densify_grad_threshold: 5e-5,
            temporal_grad_threshold: None,
            densify_interval: 100,
            densify_from: 500,
            densify_until: 15_000,
            opacity_reset_interval: 3000,
            prune_opacity: 0.005,
            split_shrink: 1.6,
            percent_dense: 0.01,
            spatial_split: true,
            temporal_split: true,
            temporal_split_floor: None,
            max_gaussians: 1_000_000,
            lambda_dssim: 0.2,
            lambda_flow: 0.01,
            epsilon_flow: 1e-6,
            edge_normalization: "max".into(),
            edge_source: "ground_truth".into(),
            eval_interval: 1000,
        }
    }
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl TrainConfig {
    /// Desk-scale run on the 64×64 synthetic scenes: 5000 iterations,
    /// density control over the first half and at most 3000 primitives.
    pub fn ci_profile() -> Self {
        Self {
            iterations: 5000,
            densify_until: 2500,
            max_gaussians: 3000,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field"))
                .unwrap_or("<config>")
                .to_string();
            config_error(&key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn projection_mode(&self) -> Result<ProjectionMode> {
        self.mode.parse().map_err(|m: String| config_error("mode", m))
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let normalization = match self.edge_normalization.split_once(':') {
            None if self.edge_normalization == "max" => Normalization::PerImageMax,
            Some(("fixed", v)) => Normalization::Fixed(
                v.parse().map_err(|_| config_error("edge_normalization", format!("bad number `{v}`")))?,
            ),
            Some(("percentile", v)) => Normalization::Percentile(
                v.parse().map_err(|_| config_error("edge_normalization", format!("bad number `{v}`")))?,
            ),
            _ => {
                return Err(config_error(
                    "edge_normalization",
                    format!("expected max, fixed:<scale> or percentile:<p>, got `{}`", self.edge_normalization),
                ))
            }
        };
        let edge_source = match self.edge_source.as_str() {
            "ground_truth" => EdgeSource::GroundTruth,
            "rendered" => EdgeSource::Rendered,
            other => return Err(config_error("edge_source", format!("expected ground_truth or rendered, got `{other}`"))),
        };
        let cfg = LossConfig {
            lambda_dssim: self.lambda_dssim,
            lambda_flow: self.lambda_flow,
            epsilon_flow: self.epsilon_flow,
            normalization,
            edge_source,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn temporal_threshold(&self) -> f64 {
        self.temporal_grad_threshold.unwrap_or(self.densify_grad_threshold)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_means", self.lr_means),
            ("lr_means_final", self.lr_means_final),
            ("split_shrink", self.split_shrink),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("temporal_grad_threshold", self.temporal_threshold()),
            ("adam_eps", self.adam_eps),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(key, format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lr_mean_t", self.lr_mean_t),
            ("lr_velocity", self.lr_velocity),
            ("lr_scales", self.lr_scales),
            ("lr_rotation", self.lr_rotation),
            ("lr_opacity", self.lr_opacity),
            ("lr_sh", self.lr_sh),
            ("prune_opacity", self.prune_opacity),
            ("percent_dense", self.percent_dense),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_error(key, format!("must be >= 0, got {v}")));
            }
        }
        for (key, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(config_error(key, format!("must lie in [0, 1), got {v}")));
            }
        }
        for (key, v) in [("densify_interval", self.densify_interval), ("opacity_reset_interval", self.opacity_reset_interval)] {
            if v == 0 {
                return Err(config_error(key, "must be positive"));
            }
        }
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(config_error("sh_degree", format!("must be at most {}", sh::MAX_DEGREE)));
        }
        if let Some(f) = self.temporal_split_floor {
            if !(f >= 0.0) {
                return Err(config_error("temporal_split_floor", "must be >= 0"));
            }
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(config_error("background", "components must lie in [0, 1]"));
        }
        self.projection_mode()?;
        self.loss_config()?;
        Ok(())
    }
}

/// Loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub l_fg: f64,
}

/// Running per-primitive sums used by density control.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityStats {
    pub screen_grad: Vec<f64>,
    pub temporal_grad: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        Self {
            screen_grad: vec![0.0; n],
            temporal_grad: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn accumulate(&mut self, grads: &GradientBuffer) {
        for i in 0..grads.len() {
            if grads.visible[i] {
                self.screen_grad[i] += grads.screen_grad_norm[i];
                self.temporal_grad[i] += grads.temporal_grad[i];
                self.count[i] += 1;
            }
        }
    }

    fn mean(sum: f64, count: u32) -> f64 {
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// Counts of one densification round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub spatial_splits: usize,
    pub temporal_splits: usize,
    pub pruned: usize,
}

/// Parameters of [`densify_and_prune`] that do not come from the config.
#[derive(Clone, Copy, Debug)]
pub struct DensifyContext {
    pub extent: f64,
    pub temporal_floor: f64,
}

fn spatial_children(g: &Gaussian4D, cfg: &TrainConfig, ctx: &DensifyContext, rng: &mut ChaCha8Rng) -> Option<Vec<(Gaussian4D, bool)>> {
    let act = g.activate().ok()?;
    let max_scale = act.scale.max();
    if max_scale <= cfg.percent_dense * ctx.extent {
        // clone: the original keeps its optimizer state
        return Some(vec![(g.clone(), true), (g.clone(), false)]);
    }
    let rot = act.rotation_matrix();
    let shrink = cfg.split_shrink.ln();
    let children = (0..2)
        .map(|_| {
            let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
            let offset = rot * act.scale.component_mul(&z);
            let mut c = g.clone();
            c.mean.x += offset.x;
            c.mean.y += offset.y;
            c.mean.z += offset.z;
            c.log_scale.x -= shrink;
            c.log_scale.y -= shrink;
            c.log_scale.z -= shrink;
            (c, false)
        })
        .collect();
    Some(children)
}

/// Two children displaced by `±½ s_t` in time, `s_t` shrunk, spatial means
/// moved along the velocity so the trajectory is unchanged.
pub fn temporal_children(g: &Gaussian4D, shrink: f64) -> [Gaussian4D; 2] {
    let scale_t = g.log_scale.w.exp();
    [-0.5, 0.5].map(|side| {
        let dt = side * scale_t;
        let mut c = g.clone();
        c.mean.w += dt;
        c.mean.x += g.velocity.x * dt;
        c.mean.y += g.velocity.y * dt;
        c.mean.z += g.velocity.z * dt;
        c.log_scale.w -= shrink.ln();
        c
    })
}

/// Clones, splits and prunes primitives. `adam` is remapped to the new
/// population; fresh primitives start with zero moments. `stats` is
/// reset afterwards.
pub fn densify_and_prune(
    scene: &mut Scene4D,
    adam: &mut Adam,
    stats: &mut DensityStats,
    cfg: &TrainConfig,
    ctx: &DensifyContext,
    rng: &mut ChaCha8Rng,
) -> DensifyReport {
    let mut report = DensifyReport::default();
    let mut next: Vec<Gaussian4D> = Vec::with_capacity(scene.len());
    let mut sources: Vec<Option<usize>> = Vec::with_capacity(scene.len());
    let budget = cfg.max_gaussians;
    for (i, g) in scene.gaussians.iter().enumerate() {
        let grad = DensityStats::mean(stats.screen_grad[i], stats.count[i]);
        let tgrad = DensityStats::mean(stats.temporal_grad[i], stats.count[i]);
        let room = next.len() + (scene.len() - i) < budget;
        let spatial = cfg.spatial_split && room && grad >= cfg.densify_grad_threshold;
        let temporal = cfg.temporal_split
            && room
            && tgrad >= cfg.temporal_threshold()
            && g.log_scale.w.exp() > ctx.temporal_floor;
        if !spatial && !temporal {
            next.push(g.clone());
            sources.push(Some(i));
            continue;
        }
        let stage: Vec<(Gaussian4D, bool)> = if spatial {
            match spatial_children(g, cfg, ctx, rng) {
                Some(children) => {
                    if children[0].1 {
                        report.cloned += 1;
                    } else {
                        report.spatial_splits += 1;
                    }
                    children
                }
                None => vec![(g.clone(), true)],
            }
        } else {
            vec![(g.clone(), true)]
        };
        for (child, keeps_state) in stage {
            if temporal {
                report.temporal_splits += 1;
                for c in temporal_children(&child, cfg.split_shrink) {
                    next.push(c);
                    sources.push(None);
                }
            } else {
                next.push(child);
                sources.push(keeps_state.then_some(i));
            }
        }
    }
    let threshold = cfg.prune_opacity;
    let mut kept = Vec::with_capacity(next.len());
    let mut kept_sources = Vec::with_capacity(next.len());
    for (g, s) in next.into_iter().zip(sources) {
        if sigmoid(g.opacity_logit) < threshold {
            report.pruned += 1;
        } else {
            kept.push(g);
            kept_sources.push(s);
        }
    }
    scene.gaussians = kept;
    adam.remap(&kept_sources);
    *stats = DensityStats::new(scene.len());
    report
}

/// Clamps every activated opacity to at most `ceiling` and clears the
/// opacity moments.
pub fn reset_opacity(scene: &mut Scene4D, adam: &mut Adam, ceiling: f64) {
    let cap = logit(ceiling);
    for g in &mut scene.gaussians {
        g.opacity_logit = g.opacity_logit.min(cap);
    }
    adam.reset_position(layout::OPACITY);
}

/// Learning rate per position of the flat parameter layout.
pub fn learning_rates(cfg: &TrainConfig, n_coeffs: usize, iteration: usize, extent: f64) -> Vec<f64> {
    let mut lr = vec![0.0; layout::len(n_coeffs)];
    let means = exponential_decay(cfg.lr_means, cfg.lr_means_final, iteration, cfg.iterations) * extent;
    lr[layout::MEAN..layout::MEAN + 3].fill(means);
    lr[layout::MEAN_T] = cfg.lr_mean_t;
    lr[layout::LOG_SCALE..layout::LOG_SCALE + 4].fill(cfg.lr_scales);
    lr[layout::ROTATION..layout::ROTATION + 4].fill(cfg.lr_rotation);
    lr[layout::VELOCITY..layout::VELOCITY + 3].fill(cfg.lr_velocity);
    lr[layout::OPACITY] = cfg.lr_opacity;
    lr[layout::SH..layout::SH + 3].fill(cfg.lr_sh);
    lr[layout::SH + 3..].fill(cfg.lr_sh / 20.0);
    lr
}

/// Flattens parameters or gradients of every primitive.
fn flatten<T>(items: &[T], stride: usize, write: impl Fn(&T, &mut [f64])) -> Vec<f64> {
    let mut out = vec![0.0; items.len() * stride];
    for (item, chunk) in items.iter().zip(out.chunks_exact_mut(stride)) {
        write(item, chunk);
    }
    out
}

/// Mutable training state, kept across steps.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub loss_cfg: LossConfig,
    pub render_opts: RenderOptions,
    pub dataset: &'a Dataset,
    pub scene: Scene4D,
    pub adam: Adam,
    pub stats: DensityStats,
    pub ctx: DensifyContext,
    pub iteration: usize,
    pub total_temporal_splits: usize,
    pub total_spatial_splits: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    train_frames: Vec<usize>,
    edges: Vec<Option<Vec<f64>>>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        dataset.validate()?;
        let mut scene = Scene4D::from_point_cloud(&dataset.points, &dataset.colors, cfg.sh_degree, cfg.seed);
        scene.background = Vector3::from(cfg.background);
        Self::with_scene(dataset, cfg, scene)
    }

    /// Starts from a given scene instead of the dataset's point cloud.
    pub fn with_scene(dataset: &'a Dataset, cfg: TrainConfig, scene: Scene4D) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        let loss_cfg = cfg.loss_config()?;
        let render_opts = RenderOptions::with_mode(cfg.projection_mode()?);
        let stride = layout::len(scene.num_coeffs());
        let adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps, stride, scene.len());
        let frames = dataset.frame_count().max(1);
        let ctx = DensifyContext {
            extent: dataset.camera_extent(),
            temporal_floor: cfg.temporal_split_floor.unwrap_or(1.0 / (4.0 * frames as f64)),
        };
        let train_frames: Vec<usize> = (0..dataset.frames.len())
            .filter(|&i| dataset.frames[i].split == crate::dataset::Split::Train)
            .collect();
        if train_frames.is_empty() {
            return Err(Error::Dataset("no training frames".into()));
        }
        Ok(Self {
            stats: DensityStats::new(scene.len()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            edges: vec![None; dataset.frames.len()],
            order: Vec::new(),
            cursor: 0,
            cfg,
            loss_cfg,
            render_opts,
            dataset,
            scene,
            adam,
            ctx,
            iteration: 0,
            total_temporal_splits: 0,
            total_spatial_splits: 0,
            train_frames,
        })
    }

    fn next_frame(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.order = self.train_frames.clone();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn edges_for(&mut self, frame: usize) -> Vec<f64> {
        let f = &self.dataset.frames[frame];
        let (w, h) = (f.image.width, f.image.height);
        self.edges[frame]
            .get_or_insert_with(|| loss::image_edges(&f.image.data, w, h, self.loss_cfg.normalization))
            .clone()
    }

    /// Loss and buffer gradients of one rendered frame.
    pub fn frame_loss(&mut self, frame: usize, rendered: &crate::raster::FrameBuffers) -> Result<(LossReport, BufferGrads)> {
        let f: &Frame = &self.dataset.frames[frame];
        let (w, h) = (f.image.width, f.image.height);
        let lc = self.loss_cfg;
        let (l1, g_l1) = loss::l1(&rendered.color, &f.image.data)?;
        let (dssim, g_dssim) = if lc.lambda_dssim > 0.0 {
            loss::dssim(&rendered.color, &f.image.data, w, h)?
        } else {
            (0.0, vec![0.0; rendered.color.len()])
        };
        let mut grads = BufferGrads::zeros(w, h);
        for (i, g) in grads.color.iter_mut().enumerate() {
            *g = (1.0 - lc.lambda_dssim) * g_l1[i] + lc.lambda_dssim * g_dssim[i];
        }
        let mut l_fg = 0.0;
        if lc.lambda_flow > 0.0 {
            let edges = match lc.edge_source {
                EdgeSource::GroundTruth => self.edges_for(frame),
                EdgeSource::Rendered => loss::image_edges(&rendered.color, w, h, lc.normalization),
            };
            let (l, g) = loss::flow_gradient_loss(&rendered.flow, &edges, w, h, &lc)?;
            l_fg = l;
            grads.flow = g;
        }
        let report = LossReport {
            total: (1.0 - lc.lambda_dssim) * l1 + lc.lambda_dssim * dssim + l_fg,
            l1,
            dssim,
            l_fg,
        };
        let iteration = self.iteration;
        for (term, v) in [("l1", l1), ("dssim", dssim), ("l_fg", l_fg)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { iteration, term });
            }
        }
        Ok((report, grads))
    }

    /// Render, loss, backward and one Adam update on the given frame.
    pub fn step_on(&mut self, frame: usize) -> Result<LossReport> {
        self.iteration += 1;
        let cam = self.dataset.frames[frame].camera.clone();
        let t0 = self.dataset.frames[frame].time;
        let pass = render::render_cached(&self.scene, &cam, t0, &mut ProjectionCache::new(), &self.render_opts)?;
        let (report, grads) = self.frame_loss(frame, &pass.buffers)?;
        let gb = render::backward(&self.scene, &cam, &self.render_opts, &pass, &grads)?;
        if !gb.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                term: "gradient",
            });
        }
        self.stats.accumulate(&gb);

        let stride = layout::len(self.scene.num_coeffs());
        let mut params = flatten(&self.scene.gaussians, stride, |g, out| g.write_flat(out));
        let grad_flat = flatten(&gb.grads, stride, |g, out| out.copy_from_slice(&g.to_flat()));
        let lr = learning_rates(&self.cfg, self.scene.num_coeffs(), self.iteration, self.ctx.extent);
        self.adam.step(&mut params, &grad_flat, &lr);
        for (g, chunk) in self.scene.gaussians.iter_mut().zip(params.chunks_exact(stride)) {
            g.read_flat(chunk);
        }
        Ok(report)
    }

    /// One scheduled training step: picks the next view, updates, and runs
    /// density control when due.
    pub fn step(&mut self) -> Result<LossReport> {
        let frame = self.next_frame();
        let report = self.step_on(frame)?;
        let it = self.iteration;
        if it < self.cfg.densify_until {
            if it > self.cfg.densify_from && it % self.cfg.densify_interval == 0 {
                let r = densify_and_prune(&mut self.scene, &mut self.adam, &mut self.stats, &self.cfg, &self.ctx, &mut self.rng);
                self.total_spatial_splits += r.spatial_splits + r.cloned;
                self.total_temporal_splits += r.temporal_splits;
            }
            if it % self.cfg.opacity_reset_interval == 0 {
                reset_opacity(&mut self.scene, &mut self.adam, 0.01);
            }
        }
        Ok(report)
    }

    /// Mean PSNR over held-out frames (training frames if none are held out).
    pub fn evaluate(&self) -> Result<f64> {
        evaluate_psnr(&self.scene, self.dataset, &self.render_opts)
    }
}

pub fn evaluate_psnr(scene: &Scene4D, dataset: &Dataset, opts: &RenderOptions) -> Result<f64> {
    let mut frames: Vec<&Frame> = dataset.test().collect();
    if frames.is_empty() {
        frames = dataset.train().collect();
    }
    let mut total = 0.0;
    for f in &frames {
        let fb = render::render(scene, &f.camera, f.time, opts)?;
        let clamped: Vec<f64> = fb.color.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        total += loss::psnr(&clamped, &f.image.data)?;
    }
    Ok(total / frames.len() as f64)
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub l1: f64,
    pub dssim: f64,
    pub l_fg: f64,
    pub psnr_holdout: f64,
    pub n_gaussians: usize,
    pub n_temporal_splits: usize,
    pub n_spatial_splits: usize,
}

pub struct FitResult {
    pub scene: Scene4D,
    pub final_psnr: f64,
    pub history: Vec<MetricsRecord>,
}

/// Full optimization from the dataset's point cloud. Metrics records are
/// written as newline-delimited JSON to `log` when given.
pub fn fit(dataset: &Dataset, cfg: TrainConfig, log: Option<&mut dyn Write>) -> Result<FitResult> {
    let trainer = Trainer::new(dataset, cfg)?;
    run(trainer, log)
}

pub fn run(mut trainer: Trainer<'_>, mut log: Option<&mut dyn Write>) -> Result<FitResult> {
    let mut history = Vec::new();
    let mut window = (LossReport::default(), 0usize);
    let iterations = trainer.cfg.iterations;
    let interval = trainer.cfg.eval_interval;
    for it in 1..=iterations {
        let r = trainer.step()?;
        window.0.l1 += r.l1;
        window.0.dssim += r.dssim;
        window.0.l_fg += r.l_fg;
        window.1 += 1;
        if (interval > 0 && it % interval == 0) || it == iterations {
            let n = window.1 as f64;
            let rec = MetricsRecord {
                iter: it,
                l1: window.0.l1 / n,
                dssim: window.0.dssim / n,
                l_fg: window.0.l_fg / n,
                psnr_holdout: trainer.evaluate()?,
                n_gaussians: trainer.scene.len(),
                n_temporal_splits: trainer.total_temporal_splits,
                n_spatial_splits: trainer.total_spatial_splits,
            };
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&rec).expect("metrics serialize");
                writeln!(w, "{line}").map_err(|e| Error::io("<metrics log>", e))?;
            }
            history.push(rec);
            window = (LossReport::default(), 0);
        }
    }
    let final_psnr = match history.last() {
        Some(r) => r.psnr_holdout,
        None => trainer.evaluate()?,
    };
    Ok(FitResult {
        scene: trainer.scene,
        final_psnr,
        history,
    })
}
