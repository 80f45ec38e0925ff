//! Brute-force reference implementations for tests.
//!
//! Nothing here depends on the production crate: every routine works on
//! plain arrays and is written for clarity, not speed. Naive transforms are
//! O(N^2) and meant for inputs up to 16^3 samples.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;

/// Direct 1D DFT, `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
pub fn naive_dft_1d(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * j) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// Direct 2D DFT of a row-major `w x h` array (x fastest).
pub fn naive_dft_2d(x: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    assert_eq!(x.len(), w * h);
    let mut out = vec![Complex64::new(0.0, 0.0); w * h];
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let phase = -2.0 * PI * ((kx * xx) as f64 / w as f64 + (ky * y) as f64 / h as f64);
                    acc += x[xx + w * y] * Complex64::from_polar(1.0, phase);
                }
            }
            out[kx + w * ky] = acc;
        }
    }
    out
}

/// Direct 3D DFT of an x-fastest array, indices measured from `origin`:
/// `X[k] = sum_n x[n] exp(-2 pi i sum_a k_a (n_a - origin_a) / N_a)`.
pub fn naive_dft_3d(x: &[f64], dims: [usize; 3], origin: [usize; 3]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(x.len());
    for kz in 0..dims[2] {
        for ky in 0..dims[1] {
            for kx in 0..dims[0] {
                let freq = [
                    kx as f64 / dims[0] as f64,
                    ky as f64 / dims[1] as f64,
                    kz as f64 / dims[2] as f64,
                ];
                out.push(dft_at(x, dims, origin, freq));
            }
        }
    }
    out
}

/// Evaluates the 3D discrete-space Fourier transform at an arbitrary
/// frequency `freq` (cycles per sample along each axis).
pub fn dft_at(x: &[f64], dims: [usize; 3], origin: [usize; 3], freq: [f64; 3]) -> Complex64 {
    assert_eq!(x.len(), dims[0] * dims[1] * dims[2]);
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let v = x[i + dims[0] * (j + dims[1] * k)];
                if v == 0.0 {
                    continue;
                }
                let phase = -2.0
                    * PI
                    * (freq[0] * (i as f64 - origin[0] as f64)
                        + freq[1] * (j as f64 - origin[1] as f64)
                        + freq[2] * (k as f64 - origin[2] as f64));
                acc += Complex64::from_polar(v, phase);
            }
        }
    }
    acc
}

/// Pinhole projection done in two explicit steps: world to camera frame,
/// then perspective division and intrinsic mapping.
pub fn two_step_project(
    focal_px: f64,
    principal_point: [f64; 2],
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    point: [f64; 3],
) -> [f64; 2] {
    let mut cam = [0.0; 3];
    for r in 0..3 {
        cam[r] = rotation[r][0] * point[0]
            + rotation[r][1] * point[1]
            + rotation[r][2] * point[2]
            + translation[r];
    }
    let xn = cam[0] / cam[2];
    let yn = cam[1] / cam[2];
    [focal_px * xn + principal_point[0], focal_px * yn + principal_point[1]]
}

/// Moore-Penrose pseudo-inverse of a 3x4 matrix through its SVD.
pub fn svd_pseudo_inverse(p: [[f64; 4]; 3]) -> [[f64; 3]; 4] {
    let m = DMatrix::from_fn(3, 4, |r, c| p[r][c]);
    let svd = m.svd(true, true);
    let u = svd.u.expect("u");
    let vt = svd.v_t.expect("v_t");
    let tol = 1e-12 * svd.singular_values.max();
    let mut out = [[0.0; 3]; 4];
    for (s_idx, s) in svd.singular_values.iter().enumerate() {
        if *s <= tol {
            continue;
        }
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += vt[(s_idx, r)] * u[(c, s_idx)] / s;
            }
        }
    }
    out
}

/// Length of the intersection of a ray with an axis-aligned box (slab test).
pub fn ray_box_chord(origin: [f64; 3], dir: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    for a in 0..3 {
        let d = dir[a] / norm;
        if d.abs() < 1e-300 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return 0.0;
            }
            continue;
        }
        let ta = (lo[a] - origin[a]) / d;
        let tb = (hi[a] - origin[a]) / d;
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 - t0).max(0.0)
}

/// Parameters of a windowed SSIM reference.
#[derive(Debug, Clone, Copy)]
pub struct SsimRef {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimRef {
    fn default() -> Self {
        SsimRef {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn mirror(i: isize, n: usize) -> usize {
    // Symmetric (edge-repeating) extension: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    let n = n as isize;
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// SSIM loss computed one window at a time: for each pixel, the weighted
/// statistics of its (symmetrically padded) neighbourhood are summed
/// directly, then `1 - mean(l c s)` with `b3 = b2 / 2`.
pub fn ssim_loss_reference(x: &[f64], y: &[f64], w: usize, h: usize, p: SsimRef) -> f64 {
    assert_eq!(x.len(), w * h);
    assert_eq!(y.len(), w * h);
    let r = (p.window / 2) as isize;
    let mut weights = vec![0.0; p.window * p.window];
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * p.sigma * p.sigma)).exp();
            weights[(dx + r) as usize + p.window * (dy + r) as usize] = g;
            total += g;
        }
    }
    weights.iter_mut().for_each(|g| *g /= total);
    let b1 = (p.k1 * p.data_range).powi(2);
    let b2 = (p.k2 * p.data_range).powi(2);
    let b3 = b2 / 2.0;

    let mut acc = 0.0;
    for cy in 0..h as isize {
        for cx in 0..w as isize {
            let (mut mx, mut my) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let g = weights[(dx + r) as usize + p.window * (dy + r) as usize];
                    let idx = mirror(cx + dx, w) + w * mirror(cy + dy, h);
                    mx += g * x[idx];
                    my += g * y[idx];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let g = weights[(dx + r) as usize + p.window * (dy + r) as usize];
                    let idx = mirror(cx + dx, w) + w * mirror(cy + dy, h);
                    vx += g * (x[idx] - mx).powi(2);
                    vy += g * (y[idx] - my).powi(2);
                    cxy += g * (x[idx] - mx) * (y[idx] - my);
                }
            }
            let sx = vx.sqrt();
            let sy = vy.sqrt();
            let l = (2.0 * mx * my + b1) / (mx * mx + my * my + b1);
            let c = (2.0 * sx * sy + b2) / (vx + vy + b2);
            let s = (cxy + b3) / (sx * sy + b3);
            acc += l * c * s;
        }
    }
    1.0 - acc / (w * h) as f64
}

pub fn mse(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

pub fn psnr_reference(x: &[f64], y: &[f64], peak: f64) -> f64 {
    10.0 * (peak * peak / mse(x, y)).log10()
}

/// Mean binary cross entropy with the prediction clamped to `[eps, 1 - eps]`.
pub fn bce_reference(pred: &[f64], target: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for (m, g) in pred.iter().zip(target) {
        let m = m.max(eps).min(1.0 - eps);
        total += g * m.ln() + (1.0 - g) * (1.0 - m).ln();
    }
    -total / pred.len() as f64
}

/// `log(sum exp(v))` with the maximum factored out.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-log softmax(scale * m)[index]`.
pub fn neg_log_softmax(m: &[f64], scale: f64, index: usize) -> f64 {
    let scaled: Vec<f64> = m.iter().map(|v| v * scale).collect();
    log_sum_exp(&scaled) - scaled[index]
}

/// Relativistic discriminator and generator losses, averaged over the batch.
pub fn gan_reference(cx: &[f64], cy: &[f64]) -> (f64, f64) {
    let n = cx.len() as f64;
    let mean_x = cx.iter().sum::<f64>() / n;
    let mean_y = cy.iter().sum::<f64>() / n;
    let mut ld = 0.0;
    let mut lg = 0.0;
    for (x, y) in cx.iter().zip(cy) {
        ld += (1.0 - y + mean_x).powi(2) + (1.0 - mean_y + x).powi(2);
        lg += (1.0 - x + mean_y).powi(2) + (1.0 - mean_x + y).powi(2);
    }
    (ld / n, lg / n)
}

/// `1 - Re<(fx - fi)/|.|, (fy - fi)/|.|>` with spectra from the naive 2D DFT.
pub fn cosine_reference(x: &[f64], y: &[f64], input: &[f64], w: usize, h: usize) -> f64 {
    let to_c = |v: &[f64]| v.iter().map(|&a| Complex64::new(a, 0.0)).collect::<Vec<_>>();
    let fx = naive_dft_2d(&to_c(x), w, h);
    let fy = naive_dft_2d(&to_c(y), w, h);
    let fi = naive_dft_2d(&to_c(input), w, h);
    let rx: Vec<Complex64> = fx.iter().zip(&fi).map(|(a, b)| a - b).collect();
    let ry: Vec<Complex64> = fy.iter().zip(&fi).map(|(a, b)| a - b).collect();
    let nx = rx.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let ny = ry.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let dot: f64 = rx.iter().zip(&ry).map(|(a, b)| (a.conj() * b).re).sum();
    1.0 - dot / (nx * ny)
}

/// Two point features at camera depths `z1`, `z2` (mm) seen by two cameras
/// related by a lateral translation of `t` mm.
#[derive(Debug, Clone, Copy)]
pub struct TwoPlaneScene {
    pub z1: f64,
    pub z2: f64,
    pub translation_mm: f64,
}

/// Residual misalignment (px) any single homography leaves between the two
/// depths: `f |t| |1/z1 - 1/z2|`.
pub fn analytic_parallax(scene: &TwoPlaneScene, focal_px: f64) -> Result<f64, String> {
    if !(scene.z1 > 0.0 && scene.z2 > 0.0) {
        return Err(format!("depths must be positive, got {} and {}", scene.z1, scene.z2));
    }
    Ok(focal_px * scene.translation_mm.abs() * (1.0 / scene.z1 - 1.0 / scene.z2).abs())
}

fn bilinear(img: &[f64], w: usize, h: usize, x: f64, y: f64) -> Option<f64> {
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = x - x0 as f64;
    let ty = y - y0 as f64;
    let a = img[x0 + w * y0] * (1.0 - tx) + img[x1 + w * y0] * tx;
    let b = img[x0 + w * y1] * (1.0 - tx) + img[x1 + w * y1] * tx;
    Some(a * (1.0 - ty) + b * ty)
}

/// Warp-and-average mosaic in the frame of image A.
///
/// `h_ab` maps pixel coordinates of A to those of B. Each output pixel is the
/// mean of A and the bilinearly warped B wherever each is defined.
pub fn homography_stitch(
    a: &[f64],
    b: &[f64],
    w: usize,
    h: usize,
    h_ab: [[f64; 3]; 3],
) -> Result<Vec<f64>, String> {
    let hm = Matrix3::from_fn(|r, c| h_ab[r][c]);
    let det = hm.determinant();
    if !det.is_finite() || det.abs() <= 1e-12 * hm.norm().powi(3) {
        return Err("homography is singular".into());
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let q = hm * Vector3::new(x as f64, y as f64, 1.0);
            let mut sum = a[x + w * y];
            let mut n = 1.0;
            if q.z.abs() > 1e-300 {
                if let Some(v) = bilinear(b, w, h, q.x / q.z, q.y / q.z) {
                    sum += v;
                    n += 1.0;
                }
            }
            out[x + w * y] = sum / n;
        }
    }
    Ok(out)
}
