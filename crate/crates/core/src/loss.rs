//! Training losses and image metrics.
//!
//! Images are row-major with interleaved channels. Every loss returns its
//! value together with the gradient with respect to the rendered input.

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// How a gradient-magnitude field is brought to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    /// Divide by the field's own maximum (fields with max < 1e-8 become 0).
    PerImageMax,
    /// Divide by a constant and clamp at 1.
    Fixed(f64),
    /// Divide by the given percentile (in `(0, 100]`) and clamp at 1.
    /// The percentile is treated as a constant by the backward pass.
    Percentile(f64),
}

/// Which image provides the edges of the flow-gradient loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EdgeSource {
    #[default]
    GroundTruth,
    /// The rendered image, used as a constant (no gradient flows into it).
    Rendered,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_dssim: f64,
    pub lambda_flow: f64,
    pub epsilon_flow: f64,
    pub normalization: Normalization,
    pub edge_source: EdgeSource,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            lambda_flow: 0.01,
            epsilon_flow: 1e-6,
            normalization: Normalization::PerImageMax,
            edge_source: EdgeSource::GroundTruth,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, v: f64| {
            if !(v >= 0.0 && v.is_finite()) {
                Err(Error::Config {
                    key: key.to_string(),
                    message: format!("must be a finite value >= 0, got {v}"),
                })
            } else {
                Ok(())
            }
        };
        check("lambda_dssim", self.lambda_dssim)?;
        check("lambda_flow", self.lambda_flow)?;
        check("epsilon_flow", self.epsilon_flow)?;
        if self.lambda_dssim > 1.0 {
            return Err(Error::Config {
                key: "lambda_dssim".into(),
                message: "must not exceed 1".into(),
            });
        }
        match self.normalization {
            Normalization::Fixed(c) if !(c > 0.0) => Err(Error::Config {
                key: "edge_normalization".into(),
                message: "fixed scale must be positive".into(),
            }),
            Normalization::Percentile(p) if !(p > 0.0 && p <= 100.0) => Err(Error::Config {
                key: "edge_normalization".into(),
                message: "percentile must lie in (0, 100]".into(),
            }),
            _ => Ok(()),
        }
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

/// Mean absolute error and its gradient with respect to `rendered`.
pub fn l1(rendered: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len(rendered, target)?;
    let n = rendered.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| {
            let d = r - t;
            sum += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((sum / n, grad))
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64)
}

/// `10·log10(1/MSE)`; identical images give `+∞`.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / m).log10() })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian blur with zero padding and same-size output.
/// The kernel is symmetric, so this is also its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(img: &[f64], c: usize, channels: usize) -> Vec<f64> {
    img.iter().skip(c).step_by(channels).copied().collect()
}

/// Mean SSIM over all pixels and channels, and its gradient with respect
/// to `a`. Both images have `channels` interleaved channels.
pub fn ssim(a: &[f64], b: &[f64], w: usize, h: usize, channels: usize) -> Result<(f64, Vec<f64>)> {
    same_len(a, b)?;
    if a.len() != w * h * channels {
        return Err(Error::ShapeMismatch(format!("{} values for {w}x{h}x{channels}", a.len())));
    }
    let k = gaussian_kernel();
    let n = (w * h * channels) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; a.len()];
    for c in 0..channels {
        let x = channel(a, c, channels);
        let y = channel(b, c, channels);
        let sq = |v: &[f64], u: &[f64]| v.iter().zip(u).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_x = blur(&x, w, h, &k);
        let mu_y = blur(&y, w, h, &k);
        let e_xx = blur(&sq(&x, &x), w, h, &k);
        let e_yy = blur(&sq(&y, &y), w, h, &k);
        let e_xy = blur(&sq(&x, &y), w, h, &k);
        let mut g_mu = vec![0.0; w * h];
        let mut g_xx = vec![0.0; w * h];
        let mut g_xy = vec![0.0; w * h];
        for i in 0..w * h {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * (e_xy[i] - mx * my) + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = (e_xx[i] - mx * mx) + (e_yy[i] - my * my) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            g_mu[i] = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2) / n;
            g_xx[i] = -s / b2 / n;
            g_xy[i] = 2.0 * s / a2 / n;
        }
        let d_mu = blur(&g_mu, w, h, &k);
        let d_xx = blur(&g_xx, w, h, &k);
        let d_xy = blur(&g_xy, w, h, &k);
        for i in 0..w * h {
            grad[i * channels + c] = d_mu[i] + 2.0 * x[i] * d_xx[i] + y[i] * d_xy[i];
        }
    }
    Ok((total / n, grad))
}

/// `(1 - SSIM) / 2` and its gradient with respect to `rendered` (RGB).
pub fn dssim(rendered: &[f64], target: &[f64], w: usize, h: usize) -> Result<(f64, Vec<f64>)> {
    let (s, g) = ssim(rendered, target, w, h, 3)?;
    Ok(((1.0 - s) / 2.0, g.into_iter().map(|v| -0.5 * v).collect()))
}

/// `M = sqrt(u² + v² + ε)` per pixel.
pub fn flow_magnitude(flow: &[f64], epsilon: f64) -> Vec<f64> {
    flow.chunks_exact(2).map(|f| (f[0] * f[0] + f[1] * f[1] + epsilon).sqrt()).collect()
}

pub fn luminance(rgb: &[f64]) -> Vec<f64> {
    rgb.chunks_exact(3).map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).collect()
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn clamp_index(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Sobel responses with replicated borders.
pub fn sobel(field: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for dy in 0..3 {
                for dx in 0..3 {
                    let yy = clamp_index(y as isize + dy as isize - 1, h);
                    let xx = clamp_index(x as isize + dx as isize - 1, w);
                    let v = field[yy * w + xx];
                    sx += SOBEL_X[dy][dx] * v;
                    sy += SOBEL_Y[dy][dx] * v;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    (gx, gy)
}

fn sobel_adjoint(d_gx: &[f64], d_gy: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = (d_gx[y * w + x], d_gy[y * w + x]);
            if gx == 0.0 && gy == 0.0 {
                continue;
            }
            for dy in 0..3 {
                for dx in 0..3 {
                    let yy = clamp_index(y as isize + dy as isize - 1, h);
                    let xx = clamp_index(x as isize + dx as isize - 1, w);
                    out[yy * w + xx] += SOBEL_X[dy][dx] * gx + SOBEL_Y[dy][dx] * gy;
                }
            }
        }
    }
    out
}

/// Sobel gradient magnitude `||∇f||`.
pub fn gradient_magnitude(field: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (gx, gy) = sobel(field, w, h);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Normalizes a non-negative field to `[0, 1]`.
pub fn normalize(field: &[f64], mode: Normalization) -> Vec<f64> {
    normalize_with_backward(field, mode).0
}

type Backward = Box<dyn Fn(&[f64]) -> Vec<f64>>;

fn normalize_with_backward(field: &[f64], mode: Normalization) -> (Vec<f64>, Backward) {
    let clamped = |scale: f64| {
        let out: Vec<f64> = field.iter().map(|v| (v / scale).min(1.0)).collect();
        let mask: Vec<bool> = field.iter().map(|v| v / scale < 1.0).collect();
        let back: Backward = Box::new(move |g: &[f64]| {
            g.iter().zip(&mask).map(|(g, &m)| if m { g / scale } else { 0.0 }).collect()
        });
        (out, back)
    };
    match mode {
        Normalization::PerImageMax => {
            let (arg, max) = field
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            if max < 1e-8 {
                let n = field.len();
                return (vec![0.0; n], Box::new(move |_| vec![0.0; n]));
            }
            let out: Vec<f64> = field.iter().map(|v| v / max).collect();
            let values = field.to_vec();
            let back: Backward = Box::new(move |g: &[f64]| {
                let dot: f64 = g.iter().zip(&values).map(|(a, b)| a * b).sum();
                let mut d: Vec<f64> = g.iter().map(|v| v / max).collect();
                d[arg] -= dot / (max * max);
                d
            });
            (out, back)
        }
        Normalization::Fixed(c) => clamped(c),
        Normalization::Percentile(p) => {
            let s = percentile(field, p);
            if s < 1e-8 {
                let n = field.len();
                return (vec![0.0; n], Box::new(move |_| vec![0.0; n]));
            }
            clamped(s)
        }
    }
}

/// Normalized edge strength of an RGB image.
pub fn image_edges(rgb: &[f64], w: usize, h: usize, mode: Normalization) -> Vec<f64> {
    normalize(&gradient_magnitude(&luminance(rgb), w, h), mode)
}

/// `λ · mean(n(||∇M||) · (1 - n(||∇I||)))` and its gradient with respect to
/// the flow buffer. `edges` is the normalized image edge map.
pub fn flow_gradient_loss(
    flow: &[f64],
    edges: &[f64],
    w: usize,
    h: usize,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    if flow.len() != 2 * w * h || edges.len() != w * h {
        return Err(Error::ShapeMismatch(format!(
            "flow has {} values and edges {} for {w}x{h}",
            flow.len(),
            edges.len()
        )));
    }
    let n = (w * h) as f64;
    let mag = flow_magnitude(flow, cfg.epsilon_flow);
    let (gx, gy) = sobel(&mag, w, h);
    let grad_mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let (norm_mag, norm_back) = normalize_with_backward(&grad_mag, cfg.normalization);
    let weight: Vec<f64> = edges.iter().map(|e| 1.0 - e).collect();
    let loss = cfg.lambda_flow * norm_mag.iter().zip(&weight).map(|(a, b)| a * b).sum::<f64>() / n;

    let d_norm: Vec<f64> = weight.iter().map(|wt| cfg.lambda_flow * wt / n).collect();
    let d_grad_mag = norm_back(&d_norm);
    let mut d_gx = vec![0.0; w * h];
    let mut d_gy = vec![0.0; w * h];
    for i in 0..w * h {
        if grad_mag[i] > 0.0 {
            d_gx[i] = d_grad_mag[i] * gx[i] / grad_mag[i];
            d_gy[i] = d_grad_mag[i] * gy[i] / grad_mag[i];
        }
    }
    let d_mag = sobel_adjoint(&d_gx, &d_gy, w, h);
    let mut d_flow = vec![0.0; 2 * w * h];
    for i in 0..w * h {
        d_flow[2 * i] = d_mag[i] * flow[2 * i] / mag[i];
        d_flow[2 * i + 1] = d_mag[i] * flow[2 * i + 1] / mag[i];
    }
    Ok((loss, d_flow))
}

/// Share of flow-gradient mass lying off image edges:
/// `Σ ||∇M|| (1 - e) / Σ ||∇M||`, 0 for a field without flow edges.
pub fn flow_edge_misalignment(flow: &[f64], edges: &[f64], w: usize, h: usize, epsilon: f64) -> f64 {
    let g = gradient_magnitude(&flow_magnitude(flow, epsilon), w, h);
    let total: f64 = g.iter().sum();
    if total < 1e-12 {
        return 0.0;
    }
    g.iter().zip(edges).map(|(a, e)| a * (1.0 - e)).sum::<f64>() / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn l1_examples() {
        let t = vec![0.2, 0.4, 0.5];
        assert_eq!(l1(&t, &t).unwrap().0, 0.0);
        let r: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        assert!((l1(&r, &t).unwrap().0 - 0.1).abs() < 1e-12);
        assert!(l1(&t, &t[..2]).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = vec![0.0; 4];
        let b = vec![0.1; 4];
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 300);
        let y = random(&mut rng, 300);
        let mut s = 0.0;
        for i in 0..300 {
            s += (x[i] - y[i]).powi(2);
        }
        let oracle = 10.0 * (300.0 / s).log10();
        assert!((psnr(&x, &y).unwrap() - oracle).abs() < 1e-9);
    }

    /// Direct windowed SSIM with explicit 2D sums, no separability.
    fn ssim_reference(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
        let k1 = gaussian_kernel();
        let r = 5isize;
        let mut total = 0.0;
        for c in 0..3 {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in -r..=r {
                        for i in -r..=r {
                            let (px, py) = (x + i, y + j);
                            if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                                continue;
                            }
                            let wt = k1[(i + r) as usize] * k1[(j + r) as usize];
                            let idx = 3 * (py as usize * w + px as usize) + c;
                            mx += wt * a[idx];
                            my += wt * b[idx];
                            xx += wt * a[idx] * a[idx];
                            yy += wt * b[idx] * b[idx];
                            xy += wt * a[idx] * b[idx];
                        }
                    }
                    let vx = xx - mx * mx;
                    let vy = yy - my * my;
                    let cxy = xy - mx * my;
                    total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                }
            }
        }
        total / (3 * w * h) as f64
    }

    #[test]
    fn ssim_matches_reference_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, h) = (13, 9);
        let a = random(&mut rng, 3 * w * h);
        let b = random(&mut rng, 3 * w * h);
        assert!((ssim(&a, &b, w, h, 3).unwrap().0 - ssim_reference(&a, &b, w, h)).abs() < 1e-6);
        assert!(dssim(&a, &a, w, h).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn dssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (8, 7);
        let a = random(&mut rng, 3 * w * h);
        let b = random(&mut rng, 3 * w * h);
        let (_, g) = dssim(&a, &b, w, h).unwrap();
        for k in (0..a.len()).step_by(5) {
            let hs = 1e-6;
            let mut p = a.clone();
            p[k] += hs;
            let mut m = a.clone();
            m[k] -= hs;
            let fd = (dssim(&p, &b, w, h).unwrap().0 - dssim(&m, &b, w, h).unwrap().0) / (2.0 * hs);
            assert!((fd - g[k]).abs() < 1e-7 + 1e-4 * fd.abs(), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn flow_magnitude_examples() {
        assert_eq!(flow_magnitude(&[0.0, 0.0], 1e-6), vec![1e-3]);
        assert_eq!(flow_magnitude(&[3.0, 4.0], 0.0), vec![5.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = flow_magnitude(&f, 1e-6);
        for i in 0..20 {
            assert_eq!(m[i], (f[2 * i].powi(2) + f[2 * i + 1].powi(2) + 1e-6).sqrt());
        }
    }

    fn step_flow(w: usize, h: usize, at: usize) -> Vec<f64> {
        let mut f = vec![0.0; 2 * w * h];
        for y in 0..h {
            for x in at..w {
                f[2 * (y * w + x)] = 2.0;
            }
        }
        f
    }

    fn step_image(w: usize, h: usize, at: usize, contrast: f64) -> Vec<f64> {
        let mut img = vec![0.2; 3 * w * h];
        for y in 0..h {
            for x in at..w {
                for c in 0..3 {
                    img[3 * (y * w + x) + c] = 0.2 + contrast;
                }
            }
        }
        img
    }

    #[test]
    fn constant_flow_has_zero_loss() {
        let (w, h) = (16, 16);
        let flow = vec![1.5; 2 * w * h];
        let edges = image_edges(&step_image(w, h, 8, 0.5), w, h, Normalization::PerImageMax);
        let (l, g) = flow_gradient_loss(&flow, &edges, w, h, &LossConfig::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn coincident_edges_cost_less() {
        let (w, h) = (32, 32);
        let cfg = LossConfig::default();
        let flow = step_flow(w, h, 16);
        let edged = image_edges(&step_image(w, h, 16, 0.6), w, h, cfg.normalization);
        let flat = image_edges(&vec![0.4; 3 * w * h], w, h, cfg.normalization);
        let mag = normalize(&gradient_magnitude(&flow_magnitude(&flow, cfg.epsilon_flow), w, h), cfg.normalization);
        // on the step both normalized fields are 1, so the pixel term vanishes
        let k = 5 * w + 16;
        assert_eq!(edged[k], 1.0);
        assert_eq!(mag[k], 1.0);
        assert_eq!(mag[k] * (1.0 - edged[k]), 0.0);
        let (on_edge, _) = flow_gradient_loss(&flow, &edged, w, h, &cfg).unwrap();
        let (off_edge, _) = flow_gradient_loss(&flow, &flat, w, h, &cfg).unwrap();
        assert!(off_edge > 0.0);
        assert!(off_edge > on_edge);
    }

    #[test]
    fn stronger_edges_never_increase_loss() {
        let (w, h) = (24, 24);
        let cfg = LossConfig::default();
        let flow = step_flow(w, h, 12);
        let mut last = f64::INFINITY;
        for contrast in [0.0, 0.05, 0.2, 0.5, 0.8] {
            let mut img = step_image(w, h, 12, contrast);
            // fixed distant edge keeps the normalizer stable
            for y in 0..h {
                for c in 0..3 {
                    img[3 * (y * w + 2) + c] = 1.0;
                }
            }
            let edges = image_edges(&img, w, h, cfg.normalization);
            let (l, _) = flow_gradient_loss(&flow, &edges, w, h, &cfg).unwrap();
            assert!(l <= last + 1e-15);
            last = l;
        }
    }

    #[test]
    fn flow_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (16, 16);
        for mode in [Normalization::PerImageMax, Normalization::Fixed(3.0)] {
            let cfg = LossConfig { normalization: mode, lambda_flow: 1.0, ..LossConfig::default() };
            let flow: Vec<f64> = (0..2 * w * h).map(|_| rng.random_range(-2.0..2.0)).collect();
            let img = random(&mut rng, 3 * w * h);
            let edges = image_edges(&img, w, h, Normalization::PerImageMax);
            let (_, g) = flow_gradient_loss(&flow, &edges, w, h, &cfg).unwrap();
            for k in (0..flow.len()).step_by(7) {
                let hs = 1e-6;
                let mut p = flow.clone();
                p[k] += hs;
                let mut m = flow.clone();
                m[k] -= hs;
                let fd = (flow_gradient_loss(&p, &edges, w, h, &cfg).unwrap().0
                    - flow_gradient_loss(&m, &edges, w, h, &cfg).unwrap().0)
                    / (2.0 * hs);
                assert!((fd - g[k]).abs() <= 1e-3 * fd.abs().max(g[k].abs()) + 1e-8, "{mode:?} {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn config_validation_names_key() {
        let cfg = LossConfig { lambda_flow: -1.0, ..LossConfig::default() };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "lambda_flow"),
            other => panic!("{other:?}"),
        }
    }
}
