//! Image-quality and training losses.
//!
//! Every function here is a pure reference implementation on `f64` arrays.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::spectral::fft2_raw;

/// Clamp applied to predictions before taking logarithms in [`bce_loss`].
pub const BCE_EPSILON: f64 = 1e-7;

/// Parameters of the structural similarity index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    /// Side of the square Gaussian window (odd).
    pub window: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` used in the stabilisers `b1 = (k1 L)^2`,
    /// `b2 = (k2 L)^2`, `b3 = b2 / 2`.
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!("SSIM window must be odd, got {}", self.window)));
        }
        let positive = [("sigma", self.sigma), ("k1", self.k1), ("k2", self.k2), ("data_range", self.data_range)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("SSIM {name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("SSIM {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn stabilizers(&self) -> [f64; 3] {
        let b1 = (self.k1 * self.data_range).powi(2);
        let b2 = (self.k2 * self.data_range).powi(2);
        [b1, b2, b2 / 2.0]
    }

    /// Normalised 1D Gaussian; the 2D window is its outer product.
    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as isize;
        let g: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        g.into_iter().map(|v| v / total).collect()
    }
}

/// Index into `0..n` of position `i` under edge-repeating reflection.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let i = i.rem_euclid(period);
    (if i >= n { period - 1 - i } else { i }) as usize
}

/// Separable filter with symmetric padding.
fn filter(data: &[f64], dims: [usize; 2], k: &[f64]) -> Vec<f64> {
    let [w, h] = dims;
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &data[w * y..w * (y + 1)];
        for x in 0..w {
            tmp[x + w * y] = k
                .iter()
                .enumerate()
                .map(|(t, g)| g * row[reflect(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[x + w * y] = k
                .iter()
                .enumerate()
                .map(|(t, g)| g * tmp[x + w * reflect(y as isize + t as isize - r, h)])
                .sum();
        }
    }
    out
}

/// Per-pixel SSIM map `l^alpha c^beta s^gamma`.
pub fn ssim_map(x: &Image2D, y: &Image2D, p: &SsimParams) -> Result<Image2D> {
    x.check_same_dims(y)?;
    p.validate()?;
    let dims = x.dims();
    let k = p.kernel();
    let [b1, b2, b3] = p.stabilizers();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter(x.data(), dims, &k);
    let my = filter(y.data(), dims, &k);
    let mxx = filter(&prod(x.data(), x.data()), dims, &k);
    let myy = filter(&prod(y.data(), y.data()), dims, &k);
    let mxy = filter(&prod(x.data(), y.data()), dims, &k);
    let pow = |v: f64, e: f64| if e == 1.0 { v } else { v.powf(e) };
    let data = (0..x.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = (mxx[i] - ux * ux).max(0.0);
            let vy = (myy[i] - uy * uy).max(0.0);
            // sqrt(vx vy) rather than sqrt(vx) sqrt(vy) makes the contrast
            // and structure terms exactly 1 when x == y.
            let sxy = (vx * vy).sqrt();
            let cov = (mxy[i] - ux * uy).clamp(-sxy, sxy);
            let l = (2.0 * ux * uy + b1) / (ux * ux + uy * uy + b1);
            let c = (2.0 * sxy + b2) / (vx + vy + b2);
            let s = (cov + b3) / (sxy + b3);
            pow(l, p.alpha) * pow(c, p.beta) * pow(s, p.gamma)
        })
        .collect();
    Image2D::new(dims, x.spacing(), data)
}

/// `1 - mean(SSIM map)`; 0 for identical images, at most 2.
pub fn ssim_loss(x: &Image2D, y: &Image2D, p: &SsimParams) -> Result<f64> {
    Ok(1.0 - ssim_map(x, y, p)?.mean())
}

pub fn mse(x: &Image2D, y: &Image2D) -> Result<f64> {
    x.check_same_dims(y)?;
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// Peak signal-to-noise ratio (dB) of prediction `x` against ground truth
/// `y`. The peak defaults to the data range `max(y) - min(y)`.
///
/// Identical images have no finite PSNR and return
/// [`Error::IdenticalImages`].
pub fn psnr(x: &Image2D, y: &Image2D, peak: Option<f64>) -> Result<f64> {
    let peak = peak.unwrap_or_else(|| y.max() - y.min());
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "PSNR peak must be positive, got {peak} (constant ground truth needs an explicit peak)"
        )));
    }
    let e = mse(x, y)?;
    if e == 0.0 {
        return Err(Error::IdenticalImages);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Discriminator confidences for a mini-batch of predictions (`c_x`) and
/// ground truths (`c_y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceBatch {
    c_x: Vec<f64>,
    c_y: Vec<f64>,
}

impl ConfidenceBatch {
    pub fn new(c_x: Vec<f64>, c_y: Vec<f64>) -> Result<Self> {
        if c_x.is_empty() || c_y.is_empty() {
            return Err(Error::Empty("confidence batch".into()));
        }
        if c_x.len() != c_y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} prediction confidences vs {} ground-truth confidences",
                c_x.len(),
                c_y.len()
            )));
        }
        if let Some(index) = c_x.iter().chain(&c_y).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ConfidenceBatch { c_x, c_y })
    }

    pub fn c_x(&self) -> &[f64] {
        &self.c_x
    }

    pub fn c_y(&self) -> &[f64] {
        &self.c_y
    }

    pub fn mean_x(&self) -> f64 {
        self.c_x.iter().sum::<f64>() / self.c_x.len() as f64
    }

    pub fn mean_y(&self) -> f64 {
        self.c_y.iter().sum::<f64>() / self.c_y.len() as f64
    }

    /// The same batch with predictions and ground truths exchanged.
    pub fn swapped(&self) -> Self {
        ConfidenceBatch {
            c_x: self.c_y.clone(),
            c_y: self.c_x.clone(),
        }
    }
}

/// Relativistic least-squares losses `(L_D, L_G)`, averaged over the batch:
///
/// `L_D = mean[(1 - C_y + mean C_x)^2 + (1 - mean C_y + C_x)^2]`
/// `L_G = mean[(1 - C_x + mean C_y)^2 + (1 - mean C_x + C_y)^2]`
pub fn gan_losses(batch: &ConfidenceBatch) -> (f64, f64) {
    let (mx, my) = (batch.mean_x(), batch.mean_y());
    let n = batch.c_x.len() as f64;
    let mut ld = 0.0;
    let mut lg = 0.0;
    for (&x, &y) in batch.c_x.iter().zip(&batch.c_y) {
        ld += (1.0 - y + mx).powi(2) + (1.0 - my + x).powi(2);
        lg += (1.0 - x + my).powi(2) + (1.0 - mx + y).powi(2);
    }
    (ld / n, lg / n)
}

/// `1 - Re<r_x / |r_x|, r_y / |r_y|>` where `r_x = F(x) - F(input)` and
/// `r_y = F(y) - F(input)` are the flattened 2D spectra of the residuals.
pub fn cosine_frequency_loss(x: &Image2D, y: &Image2D, input: &Image2D) -> Result<f64> {
    x.check_same_dims(y)?;
    x.check_same_dims(input)?;
    let dims = x.dims();
    let fi = fft2_raw(input.data(), dims);
    let residual = |img: &Image2D| -> Vec<Complex64> {
        fft2_raw(img.data(), dims).iter().zip(&fi).map(|(a, b)| a - b).collect()
    };
    let rx = residual(x);
    let ry = residual(y);
    let norm = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let (nx, ny) = (norm(&rx), norm(&ry));
    if nx == 0.0 {
        return Err(Error::DegenerateResidual("prediction equals the input".into()));
    }
    if ny == 0.0 {
        return Err(Error::DegenerateResidual("ground truth equals the input".into()));
    }
    let dot: f64 = rx.iter().zip(&ry).map(|(a, b)| (a.conj() * b).re).sum();
    Ok((1.0 - dot / (nx * ny)).clamp(0.0, 2.0))
}

fn check_unit_interval(img: &Image2D, what: &str) -> Result<()> {
    if let Some(i) = img.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::OutOfBounds(format!(
            "{what} value {} at element {i} is outside [0, 1]",
            img.data()[i]
        )));
    }
    Ok(())
}

/// Binary cross entropy `-mean[g ln m + (1 - g) ln(1 - m)]` with `m` clamped
/// to `[eps, 1 - eps]`.
pub fn bce_loss(pred: &Image2D, target: &Image2D) -> Result<f64> {
    pred.check_same_dims(target)?;
    check_unit_interval(pred, "prediction")?;
    check_unit_interval(target, "target")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&m, &g)| {
            let m = m.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            g * m.ln() + (1.0 - g) * (1.0 - m).ln()
        })
        .sum();
    Ok(-total / pred.len() as f64)
}

/// Relative response: `-log softmax(scale * m)` at pixel `(u, v)` (column,
/// row).
pub fn rr_loss(m: &Image2D, location: [usize; 2], scale: f64) -> Result<f64> {
    let [u, v] = location;
    if u >= m.width() || v >= m.height() {
        return Err(Error::OutOfBounds(format!(
            "location ({u}, {v}) outside a {}x{} heatmap",
            m.width(),
            m.height()
        )));
    }
    if !scale.is_finite() {
        return Err(Error::InvalidArgument("RR scale must be finite".into()));
    }
    let top = m.data().iter().map(|x| x * scale).fold(f64::NEG_INFINITY, f64::max);
    let lse = top + m.data().iter().map(|x| (x * scale - top).exp()).sum::<f64>().ln();
    Ok(lse - m.get(u, v) * scale)
}

/// PSNR outcome that keeps the identical-images case representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PsnrValue {
    Db(f64),
    Signal(PsnrSignal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnrSignal {
    Identical,
}

impl PsnrValue {
    pub fn of(x: &Image2D, y: &Image2D, peak: Option<f64>) -> Result<Self> {
        match psnr(x, y, peak) {
            Ok(v) => Ok(PsnrValue::Db(v)),
            Err(Error::IdenticalImages) => Ok(PsnrValue::Signal(PsnrSignal::Identical)),
            Err(e) => Err(e),
        }
    }
}
