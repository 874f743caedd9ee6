//! Tile-based front-to-back alpha compositing of projected primitives.
//!
//! Primitives are sorted once by depth (ties by position in the input)
//! and binned into 16×16 pixel tiles. Every pixel walks its tile's list:
//! `α = min(0.99, o · w · exp(-½ δᵀ K δ))`, contributions below 1/255
//! are skipped and the walk stops before transmittance would fall under
//! 1e-4. Color, flow and depth are composited with the same weights.
//!
//! The binning box of a primitive is the bounding box of the ellipse on
//! which its α reaches 1/255, so tile membership never changes a pixel.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::projection::{ScreenGaussian, ScreenGrad};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Compositing thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterOptions {
    /// Contributions with smaller α are skipped.
    pub alpha_min: f64,
    /// The walk stops before transmittance would fall below this.
    pub transmittance_min: f64,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            alpha_min: ALPHA_MIN,
            transmittance_min: TRANSMITTANCE_MIN,
        }
    }
}

impl RasterOptions {
    /// Thresholds pushed far enough down that the output is a continuous
    /// function of the primitives (up to jumps of order 1e-12). Used to
    /// measure smooth approximation errors and finite differences.
    pub fn continuous() -> Self {
        Self {
            alpha_min: 1e-12,
            transmittance_min: 0.0,
        }
    }
}

/// Row-major image planes. `color` holds 3 floats per pixel, `flow` 2.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBuffers {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub flow: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl FrameBuffers {
    pub fn new(width: usize, height: usize, background: &Vector3<f64>) -> Self {
        let n = width * height;
        let mut color = Vec::with_capacity(3 * n);
        for _ in 0..n {
            color.extend_from_slice(background.as_slice());
        }
        Self {
            width,
            height,
            color,
            flow: vec![0.0; 2 * n],
            depth: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel_color(&self, x: usize, y: usize) -> Vector3<f64> {
        let i = 3 * (y * self.width + x);
        Vector3::new(self.color[i], self.color[i + 1], self.color[i + 2])
    }

    pub fn pixel_flow(&self, x: usize, y: usize) -> Vector2<f64> {
        let i = 2 * (y * self.width + x);
        Vector2::new(self.flow[i], self.flow[i + 1])
    }
}

/// Upstream gradients, laid out like [`FrameBuffers`].
#[derive(Clone, Debug, PartialEq)]
pub struct BufferGrads {
    pub color: Vec<f64>,
    pub flow: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl BufferGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            color: vec![0.0; 3 * n],
            flow: vec![0.0; 2 * n],
            depth: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }
}

/// Per-tile sorted lists kept from the forward pass.
#[derive(Clone, Debug, Default)]
pub struct RasterState {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Indices into the `screen` slice, front to back.
    pub tile_lists: Vec<Vec<u32>>,
    /// Pixel footprint `[x0, x1, y0, y1]` (inclusive) of every binned entry.
    pub footprints: Vec<[u32; 4]>,
}

impl RasterState {
    pub fn num_entries(&self) -> usize {
        self.tile_lists.iter().map(Vec::len).sum()
    }
}

/// Inclusive pixel range `(x0, x1, y0, y1)` that can receive α ≥ `alpha_min`.
pub fn pixel_footprint(
    g: &ScreenGaussian,
    width: usize,
    height: usize,
    alpha_min: f64,
) -> Option<(usize, usize, usize, usize)> {
    let peak = g.opacity * g.temporal_weight;
    let level = (peak / alpha_min).ln();
    if !(level > 0.0) {
        return None;
    }
    let r2 = 2.0 * level;
    let margin = 1e-6;
    let ex = (r2 * g.cov2d[0]).sqrt() + margin;
    let ey = (r2 * g.cov2d[2]).sqrt() + margin;
    // pixel centers at i + 0.5
    let x0 = (g.mean2d.x - ex - 0.5).ceil().max(0.0);
    let x1 = (g.mean2d.x + ex - 0.5).floor().min(width as f64 - 1.0);
    let y0 = (g.mean2d.y - ey - 0.5).ceil().max(0.0);
    let y1 = (g.mean2d.y + ey - 0.5).floor().min(height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Front-to-back order: by depth, ties by input position.
pub fn depth_order(screen: &[ScreenGaussian]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..screen.len() as u32).collect();
    order.sort_by(|&a, &b| screen[a as usize].depth.total_cmp(&screen[b as usize].depth).then(a.cmp(&b)));
    order
}

pub fn bin(screen: &[ScreenGaussian], width: usize, height: usize, alpha_min: f64) -> RasterState {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    let mut footprints = vec![[1, 0, 1, 0]; screen.len()];
    for idx in depth_order(screen) {
        if let Some((x0, x1, y0, y1)) = pixel_footprint(&screen[idx as usize], width, height, alpha_min) {
            footprints[idx as usize] = [x0 as u32, x1 as u32, y0 as u32, y1 as u32];
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    tile_lists[ty * tiles_x + tx].push(idx);
                }
            }
        }
    }
    RasterState {
        tiles_x,
        tiles_y,
        tile_lists,
        footprints,
    }
}

/// One accepted contribution at a pixel.
#[derive(Clone, Copy, Debug)]
struct Contribution {
    screen: u32,
    /// Position in the tile list.
    slot: usize,
    alpha: f64,
    /// Transmittance in front of this primitive.
    trans: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

#[inline]
fn falloff(g: &ScreenGaussian, dx: f64, dy: f64) -> f64 {
    let [a, b, c] = g.conic;
    -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
}

/// Positions in `list` of the entries whose footprint covers row `y`.
fn row_candidates(state: &RasterState, list: &[u32], y: usize, out: &mut Vec<u32>) {
    out.clear();
    let y = y as u32;
    for (slot, &idx) in list.iter().enumerate() {
        let [_, _, y0, y1] = state.footprints[idx as usize];
        if y0 <= y && y <= y1 {
            out.push(slot as u32);
        }
    }
}

/// Walks the row candidates of `list` at pixel `(x, y)`. Entries whose
/// footprint misses the pixel are below `alpha_min` there and skipped
/// without evaluation. Returns the final transmittance.
fn walk_pixel(
    screen: &[ScreenGaussian],
    state: &RasterState,
    list: &[u32],
    row: &[u32],
    x: usize,
    y: usize,
    opts: &RasterOptions,
    mut visit: impl FnMut(Contribution),
) -> f64 {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let xu = x as u32;
    let mut trans = 1.0;
    for &slot in row {
        let slot = slot as usize;
        let idx = list[slot];
        let [x0, x1, _, _] = state.footprints[idx as usize];
        if xu < x0 || xu > x1 {
            continue;
        }
        let g = &screen[idx as usize];
        let dx = g.mean2d.x - px;
        let dy = g.mean2d.y - py;
        let power = falloff(g, dx, dy);
        if power > 0.0 {
            continue;
        }
        let raw = g.opacity * g.temporal_weight * power.exp();
        let clamped = raw > ALPHA_MAX;
        let alpha = if clamped { ALPHA_MAX } else { raw };
        if alpha < opts.alpha_min {
            continue;
        }
        let next = trans * (1.0 - alpha);
        if next < opts.transmittance_min {
            break;
        }
        visit(Contribution {
            screen: idx,
            slot,
            alpha,
            trans,
            clamped,
            dx,
            dy,
        });
        trans = next;
    }
    trans
}

fn tile_bounds(state: &RasterState, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tx = tile % state.tiles_x;
    let ty = tile / state.tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, (x0 + TILE_SIZE).min(width), y0, (y0 + TILE_SIZE).min(height))
}

/// Composites `screen` into fresh buffers. `width`, `height` must be > 0.
pub fn rasterize(
    screen: &[ScreenGaussian],
    width: usize,
    height: usize,
    background: &Vector3<f64>,
    opts: &RasterOptions,
) -> (FrameBuffers, RasterState) {
    let state = bin(screen, width, height, opts.alpha_min);
    let buffers = composite(screen, &state, width, height, background, opts);
    (buffers, state)
}

/// Per-pixel values `[r, g, b, u, v, depth, transmittance]`.
type PixelOut = [f64; 7];

pub fn composite(
    screen: &[ScreenGaussian],
    state: &RasterState,
    width: usize,
    height: usize,
    background: &Vector3<f64>,
    opts: &RasterOptions,
) -> FrameBuffers {
    let tiles: Vec<Vec<PixelOut>> = (0..state.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = tile_bounds(state, tile, width, height);
            let list = &state.tile_lists[tile];
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut row = Vec::with_capacity(list.len());
            for y in y0..y1 {
                row_candidates(state, list, y, &mut row);
                for x in x0..x1 {
                    let mut acc = [0.0; 7];
                    let t_final = walk_pixel(screen, state, list, &row, x, y, opts, |c| {
                        let g = &screen[c.screen as usize];
                        let w = c.alpha * c.trans;
                        acc[0] += g.color.x * w;
                        acc[1] += g.color.y * w;
                        acc[2] += g.color.z * w;
                        acc[3] += g.vel2d.x * w;
                        acc[4] += g.vel2d.y * w;
                        acc[5] += g.depth * w;
                    });
                    acc[6] = t_final;
                    out.push(acc);
                }
            }
            out
        })
        .collect();

    let mut fb = FrameBuffers::new(width, height, background);
    for (tile, pixels) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tile_bounds(state, tile, width, height);
        let mut it = pixels.into_iter();
        for y in y0..y1 {
            for x in x0..x1 {
                let p = it.next().expect("tile pixel count");
                let i = y * width + x;
                let t = p[6];
                for ch in 0..3 {
                    fb.color[3 * i + ch] = p[ch] + t * background[ch];
                }
                fb.flow[2 * i] = p[3];
                fb.flow[2 * i + 1] = p[4];
                fb.depth[i] = p[5];
                fb.alpha[i] = 1.0 - t;
            }
        }
    }
    fb
}

/// Gradients of the composited buffers with respect to every field of
/// every entry of `screen`. Accumulation happens per tile and is reduced in
/// tile order, so the result does not depend on the worker count.
pub fn rasterize_backward(
    screen: &[ScreenGaussian],
    state: &RasterState,
    width: usize,
    height: usize,
    background: &Vector3<f64>,
    grads: &BufferGrads,
    opts: &RasterOptions,
) -> Vec<ScreenGrad> {
    let partials: Vec<Vec<ScreenGrad>> = (0..state.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = tile_bounds(state, tile, width, height);
            let list = &state.tile_lists[tile];
            let mut local = vec![ScreenGrad::default(); list.len()];
            if list.is_empty() {
                return local;
            }
            let mut contribs = Vec::new();
            let mut row = Vec::with_capacity(list.len());
            for y in y0..y1 {
                row_candidates(state, list, y, &mut row);
                for x in x0..x1 {
                    let i = y * width + x;
                    let g_color = Vector3::new(grads.color[3 * i], grads.color[3 * i + 1], grads.color[3 * i + 2]);
                    let g_flow = Vector2::new(grads.flow[2 * i], grads.flow[2 * i + 1]);
                    let g_depth = grads.depth[i];
                    let g_alpha = grads.alpha[i];
                    if g_color == Vector3::zeros() && g_flow == Vector2::zeros() && g_depth == 0.0 && g_alpha == 0.0 {
                        continue;
                    }
                    contribs.clear();
                    let t_final = walk_pixel(screen, state, list, &row, x, y, opts, |c| contribs.push(c));
                    // suffix sums of f_j α_j T_j over later contributions
                    let mut s_color = background * t_final;
                    let mut s_flow = Vector2::zeros();
                    let mut s_depth = 0.0;
                    for c in contribs.iter().rev() {
                        let g = &screen[c.screen as usize];
                        let out = &mut local[c.slot];
                        let w = c.alpha * c.trans;
                        out.color += g_color * w;
                        out.vel2d += g_flow * w;
                        out.depth += g_depth * w;

                        let inv = 1.0 / (1.0 - c.alpha);
                        let mut d_alpha = g_color.dot(&(g.color * c.trans - s_color * inv))
                            + g_flow.dot(&(g.vel2d * c.trans - s_flow * inv))
                            + g_depth * (g.depth * c.trans - s_depth * inv)
                            + g_alpha * t_final * inv;
                        s_color += g.color * w;
                        s_flow += g.vel2d * w;
                        s_depth += g.depth * w;

                        if c.clamped {
                            d_alpha = 0.0;
                        }
                        let gauss = c.alpha / (g.opacity * g.temporal_weight);
                        out.opacity += d_alpha * g.temporal_weight * gauss;
                        out.temporal_weight += d_alpha * g.opacity * gauss;
                        let d_power = d_alpha * c.alpha;
                        let [a, b, cc] = g.conic;
                        out.mean2d.x -= d_power * (a * c.dx + b * c.dy);
                        out.mean2d.y -= d_power * (cc * c.dy + b * c.dx);
                        out.conic[0] -= d_power * 0.5 * c.dx * c.dx;
                        out.conic[1] -= d_power * c.dx * c.dy;
                        out.conic[2] -= d_power * 0.5 * c.dy * c.dy;
                    }
                }
            }
            local
        })
        .collect();

    let mut total = vec![ScreenGrad::default(); screen.len()];
    for (tile, local) in partials.into_iter().enumerate() {
        for (k, g) in local.into_iter().enumerate() {
            let dst = &mut total[state.tile_lists[tile][k] as usize];
            dst.mean2d += g.mean2d;
            for j in 0..3 {
                dst.conic[j] += g.conic[j];
            }
            dst.color += g.color;
            dst.opacity += g.opacity;
            dst.temporal_weight += g.temporal_weight;
            dst.vel2d += g.vel2d;
            dst.depth += g.depth;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn splat(x: f64, y: f64, depth: f64, opacity: f64, color: Vector3<f64>, var: f64) -> ScreenGaussian {
        ScreenGaussian {
            index: 0,
            mean2d: Vector2::new(x, y),
            depth,
            conic: [1.0 / var, 0.0, 1.0 / var],
            cov2d: [var, 0.0, var],
            vel2d: Vector2::new(1.5, -2.0),
            temporal_weight: 1.0,
            opacity,
            color,
        }
    }

    fn random_splats(rng: &mut ChaCha8Rng, n: usize, w: f64, h: f64) -> Vec<ScreenGaussian> {
        (0..n)
            .map(|i| {
                let sa: f64 = rng.random_range(1.0..30.0);
                let sc: f64 = rng.random_range(1.0..30.0);
                let b = rng.random_range(-0.8..0.8) * (sa * sc).sqrt();
                let det = sa * sc - b * b;
                ScreenGaussian {
                    index: i,
                    mean2d: Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h)),
                    depth: rng.random_range(1.0..5.0),
                    conic: [sc / det, -b / det, sa / det],
                    cov2d: [sa, b, sc],
                    vel2d: Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                    temporal_weight: rng.random_range(0.3..1.0),
                    opacity: rng.random_range(0.1..1.0),
                    color: Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)),
                }
            })
            .collect()
    }

    /// Direct evaluation of the compositing sum over all primitives.
    fn brute_force_pixel(screen: &[ScreenGaussian], px: f64, py: f64, bg: &Vector3<f64>) -> (Vector3<f64>, f64) {
        let mut order: Vec<usize> = (0..screen.len()).collect();
        order.sort_by(|&a, &b| screen[a].depth.partial_cmp(&screen[b].depth).unwrap().then(a.cmp(&b)));
        let mut c = Vector3::zeros();
        let mut t = 1.0;
        for i in order {
            let g = &screen[i];
            let d = g.mean2d - Vector2::new(px, py);
            let q = g.conic[0] * d.x * d.x + 2.0 * g.conic[1] * d.x * d.y + g.conic[2] * d.y * d.y;
            let a = (g.opacity * g.temporal_weight * (-0.5 * q).exp()).min(0.99);
            if a < 1.0 / 255.0 {
                continue;
            }
            if t * (1.0 - a) < 1e-4 {
                break;
            }
            c += g.color * a * t;
            t *= 1.0 - a;
        }
        (c + bg * t, 1.0 - t)
    }

    #[test]
    fn empty_scene_is_background() {
        let bg = Vector3::new(0.1, 0.2, 0.3);
        let (fb, _) = rasterize(&[], 20, 10, &bg, &RasterOptions::default());
        assert_eq!(fb.pixel_color(19, 9), bg);
        assert!(fb.alpha.iter().all(|&a| a == 0.0));
        assert!(fb.flow.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn single_opaque_splat_at_pixel_center() {
        let bg = Vector3::new(0.0, 0.0, 1.0);
        let c = Vector3::new(1.0, 0.5, 0.0);
        let (fb, _) = rasterize(&[splat(4.5, 4.5, 2.0, 0.999, c, 2.0)], 9, 9, &bg, &RasterOptions::default());
        let expected = c * 0.99 + bg * 0.01;
        assert!((fb.pixel_color(4, 4) - expected).norm() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_one_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg = Vector3::new(0.3, 0.3, 0.3);
        for _ in 0..50 {
            let n = rng.random_range(1..=8);
            let mut screen = random_splats(&mut rng, n, 6.0, 6.0);
            for g in &mut screen {
                g.mean2d += Vector2::new(5.0, 5.0);
            }
            let (fb, _) = rasterize(&screen, 16, 16, &bg, &RasterOptions::default());
            for (x, y) in [(7, 7), (8, 6), (3, 10)] {
                let (c, a) = brute_force_pixel(&screen, x as f64 + 0.5, y as f64 + 0.5, &bg);
                assert!((fb.pixel_color(x, y) - c).amax() < 1e-6);
                assert!((fb.alpha[y * 16 + x] - a).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tiles_do_not_change_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bg = Vector3::zeros();
        let screen = random_splats(&mut rng, 60, 50.0, 40.0);
        let (fb, _) = rasterize(&screen, 50, 40, &bg, &RasterOptions::default());
        for y in 0..40 {
            for x in 0..50 {
                let (c, _) = brute_force_pixel(&screen, x as f64 + 0.5, y as f64 + 0.5, &bg);
                assert!((fb.pixel_color(x, y) - c).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn energy_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut screen = random_splats(&mut rng, 40, 32.0, 32.0);
        for g in &mut screen {
            g.color = Vector3::repeat(1.0);
        }
        // with unit color and zero background, color = Σ α T, alpha = 1 - T
        let (fb, _) = rasterize(&screen, 32, 32, &Vector3::zeros(), &RasterOptions::default());
        for i in 0..fb.num_pixels() {
            let sum = fb.color[3 * i] + (1.0 - fb.alpha[i]);
            assert!((sum - 1.0).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&fb.alpha[i]));
        }
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let screen = random_splats(&mut rng, 30, 32.0, 32.0);
        let mut shuffled = screen.clone();
        shuffled.reverse();
        let bg = Vector3::new(0.5, 0.2, 0.1);
        let (a, _) = rasterize(&screen, 32, 32, &bg, &RasterOptions::default());
        let (b, _) = rasterize(&shuffled, 32, 32, &bg, &RasterOptions::default());
        assert_eq!(a, b);
    }

    #[test]
    fn flow_at_center_of_single_splat() {
        let g = splat(8.5, 8.5, 2.0, 0.999, Vector3::repeat(1.0), 4.0);
        let (fb, _) = rasterize(&[g.clone()], 17, 17, &Vector3::zeros(), &RasterOptions::default());
        // one contributor at α = 0.99: flow = 0.99 · vel2d
        let f = fb.pixel_flow(8, 8) / fb.alpha[8 * 17 + 8];
        assert!((f - g.vel2d).norm() < 1e-4);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let screen = random_splats(&mut rng, 10, 16.0, 16.0);
        let bg = Vector3::zeros();
        let (_, st) = rasterize(&screen, 16, 16, &bg, &RasterOptions::default());
        let g = rasterize_backward(&screen, &st, 16, 16, &bg, &BufferGrads::zeros(16, 16), &RasterOptions::default());
        assert!(g.iter().all(|s| *s == ScreenGrad::default()));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (w, h) = (12usize, 12usize);
        let bg = Vector3::new(0.2, 0.4, 0.6);
        let screen = random_splats(&mut rng, 5, 12.0, 12.0);
        let mut grads = BufferGrads::zeros(w, h);
        for v in grads
            .color
            .iter_mut()
            .chain(grads.flow.iter_mut())
            .chain(grads.depth.iter_mut())
            .chain(grads.alpha.iter_mut())
        {
            *v = rng.random_range(-1.0..1.0);
        }
        let loss = |s: &[ScreenGaussian]| {
            let (fb, _) = rasterize(s, w, h, &bg, &RasterOptions::default());
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            dot(&fb.color, &grads.color) + dot(&fb.flow, &grads.flow) + dot(&fb.depth, &grads.depth) + dot(&fb.alpha, &grads.alpha)
        };
        let (_, st) = rasterize(&screen, w, h, &bg, &RasterOptions::default());
        let analytic = rasterize_backward(&screen, &st, w, h, &bg, &grads, &RasterOptions::default());
        let hstep = 1e-6;
        let fd = |f: &dyn Fn(&mut ScreenGaussian, f64)| -> Vec<f64> {
            (0..screen.len())
                .map(|i| {
                    let mut p = screen.clone();
                    f(&mut p[i], hstep);
                    let mut m = screen.clone();
                    f(&mut m[i], -hstep);
                    (loss(&p) - loss(&m)) / (2.0 * hstep)
                })
                .collect()
        };
        let check = |name: &str, num: Vec<f64>, ana: Vec<f64>| {
            for (i, (n, a)) in num.iter().zip(&ana).enumerate() {
                assert!((n - a).abs() <= 1e-5 * a.abs().max(1.0), "{name}[{i}]: fd {n} vs {a}");
            }
        };
        check("mx", fd(&|g, d| g.mean2d.x += d), analytic.iter().map(|g| g.mean2d.x).collect());
        check("my", fd(&|g, d| g.mean2d.y += d), analytic.iter().map(|g| g.mean2d.y).collect());
        for k in 0..3 {
            check("conic", fd(&|g, d| g.conic[k] += d), analytic.iter().map(|g| g.conic[k]).collect());
        }
        check("opacity", fd(&|g, d| g.opacity += d), analytic.iter().map(|g| g.opacity).collect());
        check("weight", fd(&|g, d| g.temporal_weight += d), analytic.iter().map(|g| g.temporal_weight).collect());
        check("depth", fd(&|g, d| g.depth += d), analytic.iter().map(|g| g.depth).collect());
        check("red", fd(&|g, d| g.color.x += d), analytic.iter().map(|g| g.color.x).collect());
        check("u", fd(&|g, d| g.vel2d.x += d), analytic.iter().map(|g| g.vel2d.x).collect());
    }
}
