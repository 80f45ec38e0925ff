//! Fourier transforms, central slices and Fourier-domain projection.
//!
//! Transforms are unscaled forward and scaled by `1/N` on the inverse. The
//! spatial origin of every transform is the centre sample `n/2` (integer
//! division) of the input, so for a volume
//!
//! `F[k] = sum_n f[n] exp(-2 pi i sum_a k_a (n_a - n_a/2) / N_a)`.
//!
//! Coefficients are stored in the usual FFT order (non-negative frequencies
//! first); [`Spectrum3D::get`] and [`Spectrum2D::get`] take signed indices.
//!
//! By the Fourier slice theorem, the 2D transform of a parallel projection is
//! the plane through the origin of the 3D transform that is parallel to the
//! detector. [`fourier_project`] evaluates that plane by trilinear
//! interpolation on a zero-padded spectrum and inverts it.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{validate_rotation, OrthoView};
use crate::image::Image2D;
use crate::volume::VoxelVolume;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Orientation of a central slice: the first two rows span the plane, the
/// third is its normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlicePlane {
    orientation: Matrix3<f64>,
}

impl SlicePlane {
    pub fn new(orientation: Matrix3<f64>) -> Result<Self> {
        validate_rotation(&orientation)?;
        Ok(SlicePlane { orientation })
    }

    pub fn orientation(&self) -> &Matrix3<f64> {
        &self.orientation
    }

    pub fn axis(&self, row: usize) -> Vector3<f64> {
        self.orientation.row(row).transpose()
    }
}

/// 3D spectrum of a (possibly zero-padded) voxel grid.
#[derive(Debug, Clone)]
pub struct Spectrum3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    direction: Matrix3<f64>,
    data: Vec<Complex64>,
}

impl Spectrum3D {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Frequency step per axis in cycles/mm.
    pub fn freq_spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| 1.0 / (self.dims[a] as f64 * self.spacing[a]))
    }

    /// Grid axes (columns) in world coordinates.
    pub fn direction(&self) -> &Matrix3<f64> {
        &self.direction
    }

    #[inline]
    fn wrap(&self, k: [i64; 3]) -> usize {
        let [nx, ny, nz] = self.dims;
        let x = k[0].rem_euclid(nx as i64) as usize;
        let y = k[1].rem_euclid(ny as i64) as usize;
        let z = k[2].rem_euclid(nz as i64) as usize;
        x + nx * (y + ny * z)
    }

    /// Coefficient at a signed frequency index (taken modulo the dims).
    pub fn get(&self, k: [i64; 3]) -> Complex64 {
        self.data[self.wrap(k)]
    }

    /// Continuous frequency index of a world-space frequency (cycles/mm).
    pub fn frequency_index(&self, xi: &Vector3<f64>) -> [f64; 3] {
        let local = self.direction.transpose() * xi;
        std::array::from_fn(|a| local[a] * self.dims[a] as f64 * self.spacing[a])
    }

    /// Trilinear interpolation of real and imaginary parts at a continuous
    /// frequency index. Indices beyond the Nyquist limit of any axis give zero.
    pub fn sample(&self, q: [f64; 3]) -> Complex64 {
        for a in 0..3 {
            if q[a].abs() > self.dims[a] as f64 / 2.0 {
                return ZERO;
            }
        }
        let f: [f64; 3] = std::array::from_fn(|a| q[a].floor());
        let t: [f64; 3] = std::array::from_fn(|a| q[a] - f[a]);
        let base: [i64; 3] = std::array::from_fn(|a| f[a] as i64);
        let mut acc = ZERO;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut k = base;
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    w *= t[a];
                    k[a] += 1;
                } else {
                    w *= 1.0 - t[a];
                }
            }
            if w != 0.0 {
                acc += self.get(k) * w;
            }
        }
        acc
    }
}

/// 2D spectrum of an image with `dims` pixels at `spacing_mm`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    dims: [usize; 2],
    spacing_mm: f64,
    data: Vec<Complex64>,
}

impl Spectrum2D {
    pub fn new(dims: [usize; 2], spacing_mm: f64, data: Vec<Complex64>) -> Result<Self> {
        if dims[0] == 0 || dims[1] == 0 || data.len() != dims[0] * dims[1] {
            return Err(Error::DimensionMismatch(format!(
                "spectrum dims {dims:?} with {} coefficients",
                data.len()
            )));
        }
        Ok(Spectrum2D { dims, spacing_mm, data })
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn freq_spacing(&self) -> [f64; 2] {
        [
            1.0 / (self.dims[0] as f64 * self.spacing_mm),
            1.0 / (self.dims[1] as f64 * self.spacing_mm),
        ]
    }

    pub fn get(&self, kx: i64, ky: i64) -> Complex64 {
        let x = kx.rem_euclid(self.dims[0] as i64) as usize;
        let y = ky.rem_euclid(self.dims[1] as i64) as usize;
        self.data[x + self.dims[0] * y]
    }
}

/// Signed frequency index of FFT bin `k` of an `n`-point transform; the
/// Nyquist bin of even lengths maps to `-n/2`.
pub fn signed_bin(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// In-place unscaled FFT along one axis of an x-fastest 3D array.
fn fft_axis(data: &mut [Complex64], dims: [usize; 3], axis: usize, inverse: bool) {
    let [nx, ny, nz] = dims;
    let n = dims[axis];
    if n == 1 {
        return;
    }
    let fft = plan(n, inverse);
    match axis {
        0 => data.par_chunks_mut(nx).for_each(|line| fft.process(line)),
        1 => data.par_chunks_mut(nx * ny).for_each(|plane| {
            let mut buf = vec![ZERO; ny];
            for x in 0..nx {
                for (y, b) in buf.iter_mut().enumerate() {
                    *b = plane[x + nx * y];
                }
                fft.process(&mut buf);
                for (y, b) in buf.iter().enumerate() {
                    plane[x + nx * y] = *b;
                }
            }
        }),
        _ => {
            // Lines along z are strided by a whole plane; transform a block
            // of rows at a time into private buffers and scatter back.
            const BLOCK: usize = 16;
            for y0 in (0..ny).step_by(BLOCK) {
                let y1 = (y0 + BLOCK).min(ny);
                let snapshot: &[Complex64] = data;
                let lines: Vec<Vec<Complex64>> = (y0 * nx..y1 * nx)
                    .into_par_iter()
                    .map(|xy| {
                        let mut buf: Vec<Complex64> =
                            (0..nz).map(|z| snapshot[xy + nx * ny * z]).collect();
                        fft.process(&mut buf);
                        buf
                    })
                    .collect();
                for (offset, line) in lines.into_iter().enumerate() {
                    let xy = y0 * nx + offset;
                    for (z, v) in line.into_iter().enumerate() {
                        data[xy + nx * ny * z] = v;
                    }
                }
            }
        }
    }
}

fn check_padding(pad: usize) -> Result<()> {
    if pad == 0 {
        return Err(Error::InvalidArgument("padding factor must be >= 1".into()));
    }
    Ok(())
}

/// Forward 3D FFT of a volume with its centre voxel as origin.
pub fn fft3(vol: &VoxelVolume) -> Spectrum3D {
    fft3_padded(vol, 1).expect("unit padding is valid")
}

/// Forward 3D FFT after zero-padding every axis by `pad`, keeping the centre
/// voxel at the origin. Padding refines the frequency sampling by `pad`.
pub fn fft3_padded(vol: &VoxelVolume, pad: usize) -> Result<Spectrum3D> {
    check_padding(pad)?;
    let n = vol.dims();
    let dims = [n[0] * pad, n[1] * pad, n[2] * pad];
    let len = dims.iter().product::<usize>();
    let mut data = vec![ZERO; len];
    let wrap = |i: usize, a: usize| (i + dims[a] - n[a] / 2) % dims[a];
    for k in 0..n[2] {
        let kk = wrap(k, 2);
        for j in 0..n[1] {
            let jj = wrap(j, 1);
            for i in 0..n[0] {
                let v = vol.get(i, j, k);
                if v != 0.0 {
                    data[wrap(i, 0) + dims[0] * (jj + dims[1] * kk)] = Complex64::new(v, 0.0);
                }
            }
        }
    }
    for axis in 0..3 {
        fft_axis(&mut data, dims, axis, false);
    }
    Ok(Spectrum3D {
        dims,
        spacing: vol.spacing(),
        direction: *vol.direction(),
        data,
    })
}

/// Inverse 3D FFT, returned in natural index order on the (padded) grid with
/// the origin at index `N/2`. For an unpadded spectrum this is the volume.
pub fn ifft3(spec: &Spectrum3D) -> Vec<Complex64> {
    let dims = spec.dims;
    let mut data = spec.data.clone();
    for axis in 0..3 {
        fft_axis(&mut data, dims, axis, true);
    }
    let scale = 1.0 / data.len() as f64;
    let mut out = vec![ZERO; data.len()];
    for k in 0..dims[2] {
        let kk = (k + dims[2] - dims[2] / 2) % dims[2];
        for j in 0..dims[1] {
            let jj = (j + dims[1] - dims[1] / 2) % dims[1];
            for i in 0..dims[0] {
                let ii = (i + dims[0] - dims[0] / 2) % dims[0];
                out[i + dims[0] * (j + dims[1] * k)] = data[ii + dims[0] * (jj + dims[1] * kk)] * scale;
            }
        }
    }
    out
}

fn fft2_in_place(data: &mut [Complex64], dims: [usize; 2], inverse: bool) {
    fft_axis(data, [dims[0], dims[1], 1], 0, inverse);
    fft_axis(data, [dims[0], dims[1], 1], 1, inverse);
}

/// Forward 2D FFT of an image with its centre pixel as origin.
pub fn fft2(img: &Image2D) -> Spectrum2D {
    let [w, h] = img.dims();
    let mut data = vec![ZERO; w * h];
    for y in 0..h {
        let yy = (y + h - h / 2) % h;
        for x in 0..w {
            let xx = (x + w - w / 2) % w;
            data[xx + w * yy] = Complex64::new(img.get(x, y), 0.0);
        }
    }
    fft2_in_place(&mut data, [w, h], false);
    Spectrum2D { dims: [w, h], spacing_mm: img.spacing(), data }
}

/// Unscaled 2D FFT of a row-major real array with index 0 as origin.
pub fn fft2_raw(values: &[f64], dims: [usize; 2]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut data, dims, false);
    data
}

/// Result of an inverse 2D transform: the real part and how far from real
/// the full result was.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub image: Image2D,
    /// `max |imag| / max |real|` over all pixels (0 for an all-zero result).
    pub max_imag_residual: f64,
}

/// Inverse 2D FFT; pixel `n/2` of the output is the spatial origin.
pub fn ifft2(spec: &Spectrum2D) -> Result<RealImage> {
    let [w, h] = spec.dims;
    let mut data = spec.data.clone();
    fft2_in_place(&mut data, [w, h], true);
    let scale = 1.0 / (w * h) as f64;
    let mut real = vec![0.0; w * h];
    let (mut max_re, mut max_im) = (0.0f64, 0.0f64);
    for y in 0..h {
        let yy = (y + h - h / 2) % h;
        for x in 0..w {
            let xx = (x + w - w / 2) % w;
            let v = data[xx + w * yy] * scale;
            real[x + w * y] = v.re;
            max_re = max_re.max(v.re.abs());
            max_im = max_im.max(v.im.abs());
        }
    }
    let max_imag_residual = if max_re > 0.0 { max_im / max_re } else { max_im };
    Ok(RealImage {
        image: Image2D::new([w, h], spec.spacing_mm, real)?,
        max_imag_residual,
    })
}

/// World-space frequencies (cycles/mm) of the bins of an image with the
/// given dims and spacing, laid out in the plane of `plane`.
fn slice_frequencies(plane: &SlicePlane, dims: [usize; 2], spacing: f64) -> Vec<Vector3<f64>> {
    let e1 = plane.axis(0);
    let e2 = plane.axis(1);
    let mut out = Vec::with_capacity(dims[0] * dims[1]);
    for ky in 0..dims[1] {
        let fy = signed_bin(ky, dims[1]) as f64 / (dims[1] as f64 * spacing);
        for kx in 0..dims[0] {
            let fx = signed_bin(kx, dims[0]) as f64 / (dims[0] as f64 * spacing);
            out.push(e1 * fx + e2 * fy);
        }
    }
    out
}

fn check_slice_request(spec: &Spectrum3D, dims: [usize; 2], spacing: f64) -> Result<()> {
    if dims[0] == 0 || dims[1] == 0 {
        return Err(Error::InvalidArgument("slice must have at least one sample".into()));
    }
    let min_spacing = spec.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    if !(spacing.is_finite() && spacing >= min_spacing * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "slice pixel spacing {spacing} mm asks for frequencies beyond the grid's \
             Nyquist limit (voxel spacing {min_spacing} mm)"
        )));
    }
    Ok(())
}

/// Makes the Nyquist row and column of an even-sized spectrum Hermitian so
/// that its inverse transform is real.
fn symmetrize_nyquist(data: &mut [Complex64], dims: [usize; 2]) {
    let [w, h] = dims;
    let at = |x: usize, y: usize| x + w * y;
    if w % 2 == 0 {
        let x = w / 2;
        for y in 0..h {
            let ym = (h - y) % h;
            if y > ym {
                continue;
            }
            let a = data[at(x, y)];
            let b = data[at(x, ym)];
            let m = (a + b.conj()) * 0.5;
            data[at(x, y)] = m;
            data[at(x, ym)] = m.conj();
        }
    }
    if h % 2 == 0 {
        let y = h / 2;
        for x in 0..w {
            let xm = (w - x) % w;
            if x > xm {
                continue;
            }
            let a = data[at(x, y)];
            let b = data[at(xm, y)];
            let m = (a + b.conj()) * 0.5;
            data[at(x, y)] = m;
            data[at(xm, y)] = m.conj();
        }
    }
}

/// Samples the central slice of `spec` parallel to `plane` on the frequency
/// grid of a `dims` image with pixel spacing `spacing_mm`.
///
/// Values are raw spectrum samples, so the DC bin equals the sum of all
/// voxels. Bins that fall exactly on grid frequencies are copied without
/// interpolation.
pub fn extract_central_slice(
    spec: &Spectrum3D,
    plane: &SlicePlane,
    dims: [usize; 2],
    spacing_mm: f64,
) -> Result<Spectrum2D> {
    check_slice_request(spec, dims, spacing_mm)?;
    let freqs = slice_frequencies(plane, dims, spacing_mm);
    let mut data: Vec<Complex64> = freqs
        .par_iter()
        .map(|xi| spec.sample(snap(spec.frequency_index(xi))))
        .collect();
    symmetrize_nyquist(&mut data, dims);
    Spectrum2D::new(dims, spacing_mm, data)
}

/// Rounds indices within 1e-9 of an integer so grid-aligned slices are exact.
fn snap(q: [f64; 3]) -> [f64; 3] {
    q.map(|v| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    })
}

/// Options of [`fourier_project`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FourierOptions {
    /// Zero-padding factor applied to every axis before the 3D FFT.
    pub padding: usize,
    /// Pre-compensates the attenuation that trilinear frequency-domain
    /// interpolation imposes on off-centre voxels (a second FFT pass).
    pub gridding_correction: bool,
}

impl Default for FourierOptions {
    fn default() -> Self {
        FourierOptions {
            padding: 2,
            gridding_correction: true,
        }
    }
}

/// Parallel projection of `vol` onto `view` computed in the Fourier domain:
/// FFT, central slice, inverse FFT, scaled to line-integral units.
pub fn fourier_project(vol: &VoxelVolume, view: &OrthoView, opts: &FourierOptions) -> Result<RealImage> {
    let view = OrthoView::new(view.rotation, view.center, view.dims, view.spacing_mm)?;
    let plane = SlicePlane::new(view.rotation)?;
    let pad = opts.padding;
    let spec = fft3_padded(vol, pad)?;
    check_slice_request(&spec, view.dims, view.spacing_mm)?;

    let freqs = slice_frequencies(&plane, view.dims, view.spacing_mm);
    let indices: Vec<[f64; 3]> = freqs.iter().map(|xi| snap(spec.frequency_index(xi))).collect();
    let [nx, ny, nz] = vol.dims();
    let origin = vol.voxel_center(nx / 2, ny / 2, nz / 2);
    let shift = view.center - origin;

    let slice_of = |spec: &Spectrum3D| -> Result<Spectrum2D> {
        let mut data: Vec<Complex64> = indices
            .par_iter()
            .zip(freqs.par_iter())
            .map(|(q, xi)| {
                let phase = 2.0 * std::f64::consts::PI * xi.dot(&shift);
                spec.sample(*q) * Complex64::from_polar(1.0, phase)
            })
            .collect();
        symmetrize_nyquist(&mut data, view.dims);
        Spectrum2D::new(view.dims, view.spacing_mm, data)
    };

    let mut slice = slice_of(&spec)?;
    if opts.gridding_correction {
        if let Some(weights) = gridding_weights(&slice, &indices, vol.dims(), spec.dims) {
            drop(spec);
            let corrected = divide_separable(vol, &weights)?;
            slice = slice_of(&fft3_padded(&corrected, pad)?)?;
        }
    }

    let mut out = ifft2(&slice)?;
    let scale = vol.voxel_volume() / (view.spacing_mm * view.spacing_mm);
    out.image = out.image.map(|v| v * scale)?;
    Ok(out)
}

/// Per-axis spatial attenuation of trilinear frequency interpolation,
/// averaged over the slice samples with their spectral energy as weights.
///
/// Linear interpolation between bins `k` and `k + 1` at fraction `phi` of the
/// spectrum of a point at offset `x` (in a grid of `M` samples) returns the
/// exact coefficient times `(1 - phi) e^{i phi theta} + phi e^{-i (1 - phi) theta}`
/// with `theta = 2 pi x / M`. Axes sampled only at whole bins need no
/// correction and get `None`.
fn gridding_weights(
    slice: &Spectrum2D,
    indices: &[[f64; 3]],
    vol_dims: [usize; 3],
    grid_dims: [usize; 3],
) -> Option<[Option<Vec<f64>>; 3]> {
    let energy: Vec<f64> = slice.data.iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut any = false;
    let weights = std::array::from_fn(|a| {
        let phis: Vec<f64> = indices.iter().map(|q| q[a] - q[a].floor()).collect();
        if phis.iter().all(|&p| p == 0.0) {
            return None;
        }
        any = true;
        let m = grid_dims[a] as f64;
        let n = vol_dims[a];
        Some(
            (0..n)
                .map(|i| {
                    let theta = 2.0 * std::f64::consts::PI * (i as f64 - (n / 2) as f64) / m;
                    phis.iter()
                        .zip(&energy)
                        .map(|(&p, &e)| e * ((1.0 - p) * (p * theta).cos() + p * ((1.0 - p) * theta).cos()))
                        .sum::<f64>()
                        / total
                })
                .collect(),
        )
    });
    any.then_some(weights)
}

fn divide_separable(vol: &VoxelVolume, weights: &[Option<Vec<f64>>; 3]) -> Result<VoxelVolume> {
    let [nx, ny, nz] = vol.dims();
    let w = |a: usize, i: usize| weights[a].as_ref().map_or(1.0, |v| v[i]);
    let mut out = vol.clone();
    for k in 0..nz {
        for j in 0..ny {
            let wjk = w(1, j) * w(2, k);
            for i in 0..nx {
                let idx = vol.index(i, j, k);
                out.data_mut()[idx] = vol.data()[idx] / (w(0, i) * wjk);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol_from(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> VoxelVolume {
        let mut data = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        VoxelVolume::new(dims, [1.0; 3], Vector3::zeros(), data).unwrap()
    }

    #[test]
    fn centred_delta_has_flat_spectrum() {
        let vol = vol_from([6, 5, 4], |i, j, k| if (i, j, k) == (3, 2, 2) { 1.0 } else { 0.0 });
        let spec = fft3(&vol);
        assert!(spec.data().iter().all(|c| (c - 1.0).norm() < 1e-12));
    }

    #[test]
    fn constant_volume_is_dc_only() {
        let vol = vol_from([4, 6, 5], |_, _, _| 2.0);
        let spec = fft3(&vol);
        assert!((spec.get([0, 0, 0]) - 240.0).norm() < 1e-12);
        assert!(spec.data().iter().skip(1).all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn round_trip_3d() {
        let vol = vol_from([5, 4, 6], |i, j, k| ((i * 7 + j * 3 + k * 11) % 13) as f64 - 4.0);
        let back = ifft3(&fft3(&vol));
        for (a, b) in vol.data().iter().zip(&back) {
            assert!((a - b.re).abs() < 1e-12 && b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_2d() {
        let img = Image2D::from_fn([7, 6], 0.5, |x, y| (x * y) as f64 - 3.0).unwrap();
        let back = ifft2(&fft2(&img)).unwrap();
        assert!(back.max_imag_residual < 1e-12);
        for (a, b) in img.data().iter().zip(back.image.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn signed_bins() {
        assert_eq!((0..4).map(|k| signed_bin(k, 4)).collect::<Vec<_>>(), vec![0, 1, -2, -1]);
        assert_eq!((0..5).map(|k| signed_bin(k, 5)).collect::<Vec<_>>(), vec![0, 1, 2, -2, -1]);
    }

    #[test]
    fn padding_keeps_dc_and_grid_values() {
        let vol = vol_from([4, 4, 4], |i, j, k| (i + 2 * j + 3 * k) as f64);
        let a = fft3(&vol);
        let b = fft3_padded(&vol, 2).unwrap();
        assert!((a.get([0, 0, 0]) - b.get([0, 0, 0])).norm() < 1e-9);
        assert!((a.get([1, -1, 2]) - b.get([2, -2, 4])).norm() < 1e-9);
    }

    #[test]
    fn rejects_sub_voxel_slice_spacing() {
        let vol = vol_from([4, 4, 4], |_, _, _| 1.0);
        let spec = fft3(&vol);
        let plane = SlicePlane::new(Matrix3::identity()).unwrap();
        assert!(extract_central_slice(&spec, &plane, [4, 4], 0.5).is_err());
    }
}
