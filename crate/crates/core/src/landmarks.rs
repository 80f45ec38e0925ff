//! Landmark heatmaps, peak extraction, errors and length measurement.
//!
//! Pixel coordinates are `(u, v)` = (column, row), with pixel centres at
//! integer positions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrthoView;
use crate::image::{write_rgb_png, Image2D, IntensityMap};
use crate::phantom::{GroundTruth, LANDMARK_NAMES};

/// Default heatmap standard deviation in pixels.
pub const DEFAULT_HEATMAP_SIGMA_PX: f64 = 6.0;

/// A named map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    name: String,
    image: Image2D,
}

impl Heatmap {
    pub fn new(name: impl Into<String>, image: Image2D) -> Result<Self> {
        if let Some(i) = image.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfBounds(format!(
                "heatmap value {} at element {i} is outside [0, 1]",
                image.data()[i]
            )));
        }
        Ok(Heatmap { name: name.into(), image })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn image(&self) -> &Image2D {
        &self.image
    }

    pub fn into_image(self) -> Image2D {
        self.image
    }
}

fn check_in_bounds(loc: [f64; 2], dims: [usize; 2]) -> Result<()> {
    let inside = |v: f64, n: usize| v.is_finite() && v >= 0.0 && v <= (n - 1) as f64;
    if !(inside(loc[0], dims[0]) && inside(loc[1], dims[1])) {
        return Err(Error::OutOfBounds(format!(
            "landmark ({}, {}) outside a {}x{} image",
            loc[0], loc[1], dims[0], dims[1]
        )));
    }
    Ok(())
}

/// Unnormalised Gaussian `exp(-((x - u)^2 + (y - v)^2) / (2 sigma^2))` with
/// its peak of 1 at `loc = (u, v)`.
pub fn render_heatmap(
    name: impl Into<String>,
    loc: [f64; 2],
    dims: [usize; 2],
    spacing_mm: f64,
    sigma_px: f64,
) -> Result<Heatmap> {
    if !(sigma_px.is_finite() && sigma_px > 0.0) {
        return Err(Error::InvalidArgument(format!("heatmap sigma must be positive, got {sigma_px}")));
    }
    if dims[0] == 0 || dims[1] == 0 {
        return Err(Error::InvalidArgument("heatmap must have at least one pixel".into()));
    }
    check_in_bounds(loc, dims)?;
    let k = 1.0 / (2.0 * sigma_px * sigma_px);
    let image = Image2D::from_fn(dims, spacing_mm, |x, y| {
        let (dx, dy) = (x as f64 - loc[0], y as f64 - loc[1]);
        (-(dx * dx + dy * dy) * k).exp()
    })?;
    Heatmap::new(name, image)
}

/// Location of the maximum; ties go to the lowest row-major index.
pub fn extract_peak(m: &Image2D) -> Result<[usize; 2]> {
    let data = m.data();
    let (mut best, mut at) = (data[0], 0);
    let mut varied = false;
    for (i, &v) in data.iter().enumerate().skip(1) {
        varied |= v != data[0];
        if v > best {
            best = v;
            at = i;
        }
    }
    if !varied {
        return Err(Error::DegenerateHeatmap);
    }
    Ok([at % m.width(), at / m.width()])
}

/// [`extract_peak`] refined by the centre of mass of the 5x5 window around
/// the maximum (values relative to the window minimum).
pub fn extract_peak_subpixel(m: &Image2D) -> Result<[f64; 2]> {
    let [u, v] = extract_peak(m)?;
    Ok(local_centroid(m, [u, v], 2))
}

/// Peak of a heatmap of known width `sigma_px`: the maximum of `m` smoothed
/// by a Gaussian of the same width, refined by a least-squares fit of
/// `a exp(-r^2 / 2 sigma^2) + b` over a window of radius `2 sigma`. Robust to
/// pixel noise that defeats [`extract_peak`] on wide heatmaps, and unbiased
/// next to the border.
pub fn extract_peak_matched(m: &Image2D, sigma_px: f64) -> Result<[f64; 2]> {
    if !(sigma_px.is_finite() && sigma_px > 0.0) {
        return Err(Error::InvalidArgument(format!("heatmap sigma must be positive, got {sigma_px}")));
    }
    extract_peak(m)?;
    let [u0, v0] = extract_peak(&m.gaussian_blur(sigma_px)?)?;
    Ok(fit_gaussian(m, [u0 as f64, v0 as f64], sigma_px))
}

/// Gauss-Newton fit of centre, amplitude and offset of a fixed-width
/// Gaussian. Falls back to `start` if the fit leaves the window.
fn fit_gaussian(m: &Image2D, start: [f64; 2], sigma: f64) -> [f64; 2] {
    use nalgebra::{Matrix4, Vector4};
    let r = (2.0 * sigma).ceil() as isize;
    let (w, h) = (m.width() as isize, m.height() as isize);
    let (cx, cy) = (start[0] as isize, start[1] as isize);
    let pixels: Vec<(f64, f64, f64)> = (cy - r..=cy + r)
        .flat_map(|y| (cx - r..=cx + r).map(move |x| (x, y)))
        .filter(|&(x, y)| x >= 0 && y >= 0 && x < w && y < h)
        .map(|(x, y)| (x as f64, y as f64, m.get(x as usize, y as usize)))
        .collect();
    let k = 1.0 / (2.0 * sigma * sigma);
    let (lo, hi) = pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.2), h.max(p.2)));
    let mut q = Vector4::new(start[0], start[1], hi - lo, lo);
    for _ in 0..20 {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for &(x, y, z) in &pixels {
            let (dx, dy) = (x - q[0], y - q[1]);
            let g = (-(dx * dx + dy * dy) * k).exp();
            let j = Vector4::new(q[2] * g * 2.0 * k * dx, q[2] * g * 2.0 * k * dy, g, 1.0);
            jtj += j * j.transpose();
            jtr += j * (z - (q[2] * g + q[3]));
        }
        let Some(step) = jtj.lu().solve(&jtr) else { break };
        q += step;
        if step.x.abs().max(step.y.abs()) < 1e-10 {
            break;
        }
    }
    let inside = q.iter().all(|v| v.is_finite())
        && q[2] > 0.0
        && (q[0] - start[0]).abs() <= r as f64
        && (q[1] - start[1]).abs() <= r as f64;
    if inside { [q[0], q[1]] } else { start }
}

fn local_centroid(m: &Image2D, at: [usize; 2], r: usize) -> [f64; 2] {
    // Clip the window symmetrically so a peak near the border is not pulled
    // toward the interior.
    let rx = r.min(at[0]).min(m.width() - 1 - at[0]);
    let ry = r.min(at[1]).min(m.height() - 1 - at[1]);
    let (x0, x1) = (at[0] - rx, at[0] + rx);
    let (y0, y1) = (at[1] - ry, at[1] + ry);
    let mut floor = f64::INFINITY;
    for y in y0..=y1 {
        for x in x0..=x1 {
            floor = floor.min(m.get(x, y));
        }
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let w = m.get(x, y) - floor;
            sw += w;
            sx += w * x as f64;
            sy += w * y as f64;
        }
    }
    if sw > 0.0 {
        [sx / sw, sy / sw]
    } else {
        [at[0] as f64, at[1] as f64]
    }
}

/// Named 2D landmark positions in pixels, stored as `{name: [u, v]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet {
    points: BTreeMap<String, [f64; 2]>,
}

impl LandmarkSet {
    pub fn new() -> Self {
        LandmarkSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, uv: [f64; 2]) {
        self.points.insert(name.into(), uv);
    }

    pub fn get(&self, name: &str) -> Result<[f64; 2]> {
        self.points
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingLandmark(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.points.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, [f64; 2])> {
        self.points.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Errors unless every point lies inside a `dims` image.
    pub fn check_bounds(&self, dims: [usize; 2]) -> Result<()> {
        self.points.values().try_for_each(|p| check_in_bounds(*p, dims))
    }
}

impl FromIterator<(String, [f64; 2])> for LandmarkSet {
    fn from_iter<I: IntoIterator<Item = (String, [f64; 2])>>(iter: I) -> Self {
        LandmarkSet { points: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkErrors {
    pub per_landmark_px: BTreeMap<String, f64>,
    pub mean_px: f64,
}

/// Euclidean pixel distance per landmark and their mean.
pub fn landmark_error(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<LandmarkErrors> {
    if !pred.names().eq(gt.names()) {
        let a: Vec<&str> = pred.names().collect();
        let b: Vec<&str> = gt.names().collect();
        return Err(Error::NameMismatch(format!("{a:?} vs {b:?}")));
    }
    if gt.is_empty() {
        return Err(Error::Empty("landmark set".into()));
    }
    let per_landmark_px: BTreeMap<String, f64> = gt
        .iter()
        .map(|(name, g)| {
            let p = pred.points[name];
            (name.to_string(), (p[0] - g[0]).hypot(p[1] - g[1]))
        })
        .collect();
    let mean_px = per_landmark_px.values().sum::<f64>() / per_landmark_px.len() as f64;
    Ok(LandmarkErrors { per_landmark_px, mean_px })
}

/// Distance in millimetres between two named landmarks.
pub fn measure_length(lms: &LandmarkSet, pixel_spacing_mm: f64, from: &str, to: &str) -> Result<f64> {
    if !(pixel_spacing_mm.is_finite() && pixel_spacing_mm > 0.0) {
        return Err(Error::InvalidArgument(format!("pixel spacing must be positive, got {pixel_spacing_mm}")));
    }
    let a = lms.get(from)?;
    let b = lms.get(to)?;
    Ok((a[0] - b[0]).hypot(a[1] - b[1]) * pixel_spacing_mm)
}

/// Orthographic pixel positions of the ground-truth landmarks in `view`.
pub fn project_landmarks(gt: &GroundTruth, view: &OrthoView) -> LandmarkSet {
    gt.landmarks_3d
        .iter()
        .map(|(name, p)| (name.clone(), view.world_to_pixel(&nalgebra::Vector3::from(*p))))
        .collect()
}

/// Heatmaps of every landmark in `lms`, in name order.
pub fn render_heatmaps(lms: &LandmarkSet, dims: [usize; 2], spacing_mm: f64, sigma_px: f64) -> Result<Vec<Heatmap>> {
    lms.iter()
        .map(|(name, uv)| render_heatmap(name, uv, dims, spacing_mm, sigma_px))
        .collect()
}

/// How [`landmarks_from_heatmaps`] locates each peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakRefinement {
    /// Whole-pixel argmax.
    Argmax,
    /// Argmax refined by the 5x5 centre of mass.
    Centroid,
    /// Gaussian matched filter, then a three-point Gaussian fit.
    #[default]
    Matched,
}

/// Peak of each heatmap, keyed by heatmap name. `sigma_px` is the heatmap
/// width assumed by [`PeakRefinement::Matched`].
pub fn landmarks_from_heatmaps(maps: &[Heatmap], refinement: PeakRefinement, sigma_px: f64) -> Result<LandmarkSet> {
    maps.iter()
        .map(|h| {
            let uv = match refinement {
                PeakRefinement::Argmax => extract_peak(h.image())?.map(|v| v as f64),
                PeakRefinement::Centroid => extract_peak_subpixel(h.image())?,
                PeakRefinement::Matched => extract_peak_matched(h.image(), sigma_px)?,
            };
            Ok((h.name().to_string(), uv))
        })
        .collect()
}

/// Finds the phantom's marker beads: band-pass the image with a difference
/// of Gaussians matched to the bead radius, keep the `LANDMARK_NAMES.len()`
/// strongest separated maxima and refine each by its response centroid.
///
/// Names are assigned from the top row down in the order of
/// [`LANDMARK_NAMES`], which matches images whose vertical axis runs from
/// the head toward the foot.
pub fn detect_markers(img: &Image2D, marker_radius_mm: f64) -> Result<LandmarkSet> {
    if !(marker_radius_mm.is_finite() && marker_radius_mm > 0.0) {
        return Err(Error::InvalidArgument("marker radius must be positive".into()));
    }
    let r = marker_radius_mm / img.spacing();
    let fine = img.gaussian_blur(r / 2.0)?;
    let coarse = img.gaussian_blur(2.0 * r)?;
    let [w, h] = img.dims();
    let response: Vec<f64> = fine.data().iter().zip(coarse.data()).map(|(a, b)| a - b).collect();
    let resp = Image2D::new([w, h], img.spacing(), response)?;

    let radius = (2.0 * r).ceil().max(1.0) as isize;
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = resp.get(x, y);
            if v <= 0.0 {
                continue;
            }
            let is_max = (-radius..=radius).all(|dy| {
                (-radius..=radius).all(|dx| {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if (dx, dy) == (0, 0) || xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        return true;
                    }
                    let o = resp.get(xx as usize, yy as usize);
                    // Strict on one side so plateaus keep exactly one pixel.
                    o < v || (o == v && (yy, xx) > (y as isize, x as isize))
                })
            });
            if is_max {
                candidates.push((v, x, y));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    let n = LANDMARK_NAMES.len();
    if candidates.len() < n {
        return Err(Error::Empty(format!("found {} marker candidates, need {n}", candidates.len())));
    }
    let mut found: Vec<[f64; 2]> = candidates[..n]
        .iter()
        .map(|&(_, x, y)| positive_centroid(&resp, [x, y], radius as usize))
        .collect();
    found.sort_by(|a, b| a[1].total_cmp(&b[1]));
    Ok(LANDMARK_NAMES.iter().zip(found).map(|(n, p)| (n.to_string(), p)).collect())
}

fn positive_centroid(m: &Image2D, at: [usize; 2], r: usize) -> [f64; 2] {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in at[1].saturating_sub(r)..=(at[1] + r).min(m.height() - 1) {
        for x in at[0].saturating_sub(r)..=(at[0] + r).min(m.width() - 1) {
            let (dx, dy) = (x as f64 - at[0] as f64, y as f64 - at[1] as f64);
            if dx * dx + dy * dy > (r * r) as f64 {
                continue;
            }
            let w = m.get(x, y).max(0.0);
            sw += w;
            sx += w * x as f64;
            sy += w * y as f64;
        }
    }
    [sx / sw, sy / sw]
}

const PALETTE: [[u8; 3]; 4] = [[230, 60, 60], [60, 200, 60], [60, 120, 240], [240, 200, 40]];

/// Writes an 8-bit RGB PNG of `img` with each landmark drawn as a cross and
/// optional heatmaps tinted on top.
pub fn write_overlay(
    img: &Image2D,
    lms: &LandmarkSet,
    heatmaps: &[Heatmap],
    path: impl AsRef<Path>,
) -> Result<()> {
    let map = IntensityMap::auto(img);
    let [w, h] = img.dims();
    let mut rgb: Vec<u8> = img
        .data()
        .iter()
        .flat_map(|&v| {
            let g = (map.level(v) >> 8) as u8;
            [g, g, g]
        })
        .collect();
    for (k, hm) in heatmaps.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        for (i, &a) in hm.image().data().iter().enumerate().take(w * h) {
            for ch in 0..3 {
                let px = &mut rgb[3 * i + ch];
                *px = (f64::from(*px) * (1.0 - 0.5 * a) + f64::from(c[ch]) * 0.5 * a).round() as u8;
            }
        }
    }
    for (k, (_, uv)) in lms.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let (u, v) = (uv[0].round() as isize, uv[1].round() as isize);
        for t in -6isize..=6 {
            for (x, y) in [(u + t, v), (u, v + t)] {
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    let i = 3 * (x as usize + w * y as usize);
                    rgb[i..i + 3].copy_from_slice(&c);
                }
            }
        }
    }
    write_rgb_png(path, [w, h], &rgb)
}
