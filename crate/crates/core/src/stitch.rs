//! Orthographic stitching: backproject, compound, take the central Fourier
//! slice parallel to the output plane and invert it.
//!
//! By default the compounding grid is laid out in the frame of the output
//! plane. The central slice then falls on whole frequency bins, so it is
//! exact and zero-padding would not change it. With
//! [`StitchOptions::align_grid_to_plane`] off the grid follows the world
//! axes and the slice is interpolated from a zero-padded spectrum.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compounding::{compound, CompoundingGrid, GridSpec, Normalization, PixelSampling};
use crate::error::{Error, Result};
use crate::geometry::{validate_rotation, Backprojector, OrthoView, ProjectionMatrix};
use crate::image::Image2D;
use crate::spectral::{extract_central_slice, fft3_padded, ifft2, SlicePlane};
use crate::volume::VoxelVolume;

/// Where the output plane comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum PlaneSource {
    /// Parallel to the detector of the first image, with the same image axes.
    #[default]
    FirstImage,
    /// Row-major rotation whose first two rows span the plane.
    Explicit { rotation: [[f64; 3]; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StitchOptions {
    /// Fraction of the source-detector distance, measured from the detector,
    /// into which each pixel is smeared.
    pub depth_fraction: f64,
    pub grid_spacing_mm: f64,
    /// Zero-padding factor; only used when the slice is not grid-aligned.
    pub padding: usize,
    pub normalization: Normalization,
    pub sampling: PixelSampling,
    pub plane: PlaneSource,
    pub align_grid_to_plane: bool,
    pub output_spacing_mm: f64,
    /// Output size in pixels; by default the union of the image footprints
    /// at mid-slab depth.
    pub output_dims: Option<[usize; 2]>,
    /// Width (mm) of a raised-cosine taper applied to the lateral borders of
    /// the grid before the transform; 0 disables it.
    pub apodization_mm: f64,
    /// Divide the projection by the slab thickness so the output is the mean
    /// value along each ray, in the units of the input images.
    pub depth_average: bool,
}

impl Default for StitchOptions {
    fn default() -> Self {
        StitchOptions {
            depth_fraction: 0.5,
            grid_spacing_mm: 2.0,
            padding: 2,
            normalization: Normalization::Count,
            sampling: PixelSampling::Bilinear,
            plane: PlaneSource::FirstImage,
            align_grid_to_plane: true,
            output_spacing_mm: 1.0,
            output_dims: None,
            apodization_mm: 0.0,
            depth_average: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StitchResult {
    pub image: Image2D,
    pub view: OrthoView,
    /// Number of images whose slab the ray of each output pixel crosses.
    pub coverage: Image2D,
    /// `max |imag| / max |real|` of the inverse 2D transform.
    pub max_imag_residual: f64,
    pub grid: CompoundingGrid,
}

/// Extent of the depth-`d` cones of all images in the frame `r`: lateral
/// bounds at mid-slab depth, and overall lateral and depth bounds.
struct ConeExtent {
    mid: [[f64; 2]; 2],
    all: [[f64; 2]; 3],
}

fn cone_extent(images: &[(Image2D, ProjectionMatrix)], r: &Matrix3<f64>, d: f64) -> Result<ConeExtent> {
    let mut mid = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
    let mut all = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
    let grow = |b: &mut [f64; 2], v: f64| {
        b[0] = b[0].min(v);
        b[1] = b[1].max(v);
    };
    for (img, p) in images {
        let bp = Backprojector::new(p)?;
        let [w, h] = img.dims();
        let corners = [[-0.5, -0.5], [w as f64 - 0.5, -0.5], [-0.5, h as f64 - 0.5], [w as f64 - 0.5, h as f64 - 0.5]];
        for c in corners {
            let seg = bp.segment(c, d)?;
            for (t, is_mid) in [
                (seg.t_near, false),
                (seg.t_far, false),
                (0.5 * (seg.t_near + seg.t_far), true),
            ] {
                let q = r * seg.point_at(t);
                for a in 0..3 {
                    grow(&mut all[a], q[a]);
                }
                if is_mid {
                    grow(&mut mid[0], q[0]);
                    grow(&mut mid[1], q[1]);
                }
            }
        }
    }
    Ok(ConeExtent { mid, all })
}

fn check_inputs(images: &[(Image2D, ProjectionMatrix)], opts: &StitchOptions) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Empty("stitch needs at least one image".into()));
    }
    crate::geometry::validate_depth_fraction(opts.depth_fraction)?;
    for (name, v) in [
        ("grid_spacing_mm", opts.grid_spacing_mm),
        ("output_spacing_mm", opts.output_spacing_mm),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if !(opts.apodization_mm.is_finite() && opts.apodization_mm >= 0.0) {
        return Err(Error::InvalidArgument("apodization_mm must be >= 0".into()));
    }
    if opts.padding == 0 {
        return Err(Error::InvalidArgument("padding must be >= 1".into()));
    }
    Ok(())
}

/// Orientation of the output plane.
pub fn plane_rotation(images: &[(Image2D, ProjectionMatrix)], source: &PlaneSource) -> Result<Matrix3<f64>> {
    let r = match source {
        PlaneSource::FirstImage => images
            .first()
            .ok_or_else(|| Error::Empty("no images to take the plane from".into()))?
            .1
            .rotation(),
        PlaneSource::Explicit { rotation } => Matrix3::from_fn(|i, j| rotation[i][j]),
    };
    validate_rotation(&r)?;
    Ok(r)
}

/// Output view for `images`: the plane from `opts.plane`, centred on the
/// union of the image footprints at mid-slab depth.
pub fn plan_view(images: &[(Image2D, ProjectionMatrix)], opts: &StitchOptions) -> Result<OrthoView> {
    check_inputs(images, opts)?;
    let r = plane_rotation(images, &opts.plane)?;
    let ext = cone_extent(images, &r, opts.depth_fraction)?;
    let s = opts.output_spacing_mm;
    let dims = opts.output_dims.unwrap_or_else(|| {
        [0, 1].map(|a| ((ext.mid[a][1] - ext.mid[a][0]) / s).ceil() as usize + 1)
    });
    // Place the centre pixel (dims / 2) so the view is centred on the
    // footprint.
    let local = Vector3::new(
        0.5 * (ext.mid[0][0] + ext.mid[0][1]) - (dims[0] as f64 / 2.0 - (dims[0] / 2) as f64 - 0.5) * s,
        0.5 * (ext.mid[1][0] + ext.mid[1][1]) - (dims[1] as f64 / 2.0 - (dims[1] / 2) as f64 - 0.5) * s,
        0.5 * (ext.all[2][0] + ext.all[2][1]),
    );
    OrthoView::new(r, r.transpose() * local, dims, s)
}

/// Grid covering the cones of all images, clipped laterally to what can
/// reach `view`.
fn plan_grid(images: &[(Image2D, ProjectionMatrix)], view: &OrthoView, opts: &StitchOptions) -> Result<GridSpec> {
    let r = view.rotation;
    let ext = cone_extent(images, &r, opts.depth_fraction)?;
    let gs = opts.grid_spacing_mm;
    let c = r * view.center;
    let half = [0, 1].map(|a| 0.5 * view.dims[a] as f64 * view.spacing_mm + gs);
    let mut bounds = [[0.0; 2]; 3];
    for a in 0..2 {
        let lo = (c[a] - half[a]).max(ext.all[a][0] - gs);
        let hi = (c[a] + half[a]).min(ext.all[a][1] + gs);
        if lo >= hi {
            return Err(Error::Geometry("output view does not overlap any image".into()));
        }
        bounds[a] = [lo, hi];
    }
    bounds[2] = ext.all[2];
    let mut dims = [0; 3];
    let mut center = Vector3::zeros();
    for a in 0..3 {
        dims[a] = ((bounds[a][1] - bounds[a][0]) / gs).ceil() as usize + 1;
        center[a] = 0.5 * (bounds[a][0] + bounds[a][1]);
    }
    if opts.align_grid_to_plane {
        return Ok(GridSpec {
            dims,
            spacing_mm: [gs; 3],
            center_mm: r.transpose() * center,
            rotation: r,
        });
    }
    // World-aligned box around the plane-aligned one.
    let corners = (0..8).map(|bits: usize| {
        let local = Vector3::from_fn(|a, _| bounds[a][(bits >> a) & 1]);
        r.transpose() * local
    });
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in corners {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    Ok(GridSpec {
        dims: [0, 1, 2].map(|a| ((hi[a] - lo[a]) / gs).ceil() as usize + 1),
        spacing_mm: [gs; 3],
        center_mm: (lo + hi) * 0.5,
        rotation: Matrix3::identity(),
    })
}

/// Multiplies the lateral (i, j) borders of the grid by a raised cosine.
fn apodize(vol: &mut VoxelVolume, width_mm: f64) {
    if width_mm <= 0.0 {
        return;
    }
    let [nx, ny, _] = vol.dims();
    let s = vol.spacing();
    let taper = |n: usize, s: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let edge = (i.min(n - 1 - i) as f64) * s;
                if edge >= width_mm {
                    1.0
                } else {
                    0.5 - 0.5 * (std::f64::consts::PI * edge / width_mm).cos()
                }
            })
            .collect()
    };
    let (tx, ty) = (taper(nx, s[0]), taper(ny, s[1]));
    vol.data_mut().par_chunks_mut(nx * ny).for_each(|plane| {
        for j in 0..ny {
            for i in 0..nx {
                plane[i + nx * j] *= tx[i] * ty[j];
            }
        }
    });
}

/// Stitches `images` onto the view chosen by [`plan_view`].
pub fn stitch(images: &[(Image2D, ProjectionMatrix)], opts: &StitchOptions) -> Result<StitchResult> {
    let view = plan_view(images, opts)?;
    stitch_onto(images, &view, opts)
}

/// Stitches `images` onto an explicit output view. `opts.plane` and
/// `opts.output_*` are ignored in favour of `view`.
pub fn stitch_onto(
    images: &[(Image2D, ProjectionMatrix)],
    view: &OrthoView,
    opts: &StitchOptions,
) -> Result<StitchResult> {
    check_inputs(images, opts)?;
    let view = OrthoView::new(view.rotation, view.center, view.dims, view.spacing_mm)?;
    let spec = plan_grid(images, &view, opts)?;
    let grid = compound(images, opts.depth_fraction, &spec.volume()?, opts.sampling)?;
    let mut omega = grid.volume(opts.normalization);
    apodize(&mut omega, opts.apodization_mm);

    let r = view.rotation;
    let gs = opts.grid_spacing_mm;
    let plane = SlicePlane::new(r)?;
    let (pad, slice_dims) = if opts.align_grid_to_plane {
        (1, [spec.dims[0], spec.dims[1]])
    } else {
        let span = |a: usize| {
            let corners = omega.corners();
            let v: Vec<f64> = corners.iter().map(|c| r.row(a).dot(&c.transpose())).collect();
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
            ((hi - lo) / gs).ceil() as usize + 1
        };
        (opts.padding, [span(0), span(1)])
    };
    let spectrum = fft3_padded(&omega, pad)?;
    let slice = extract_central_slice(&spectrum, &plane, slice_dims, gs)?;
    drop(spectrum);
    let projected = ifft2(&slice)?;

    let slab: f64 = images
        .iter()
        .map(|(_, p)| p.sdd_mm() * opts.depth_fraction)
        .sum::<f64>()
        / images.len() as f64;
    let mut scale = omega.voxel_volume() / (gs * gs);
    if opts.depth_average {
        scale /= slab;
    }

    let [nx, ny, nz] = omega.dims();
    let grid_center = omega.voxel_center(nx / 2, ny / 2, nz / 2);
    let c = [(slice_dims[0] / 2) as f64, (slice_dims[1] / 2) as f64];
    let src = &projected.image;
    let image = resample(&view, |p| {
        let off = p - grid_center;
        let x = c[0] + r.row(0).dot(&off.transpose()) / gs;
        let y = c[1] + r.row(1).dot(&off.transpose()) / gs;
        src.sample_bilinear(x, y).unwrap_or(0.0) * scale
    })?;
    let coverage = coverage_map(&grid, &view);
    Ok(StitchResult {
        image,
        view,
        coverage: coverage?,
        max_imag_residual: projected.max_imag_residual,
        grid,
    })
}

fn resample(view: &OrthoView, f: impl Fn(Vector3<f64>) -> f64 + Sync) -> Result<Image2D> {
    let [w, h] = view.dims;
    let data: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let f = &f;
            (0..w).map(move |x| f(view.pixel_to_world([x as f64, y as f64])))
        })
        .collect();
    Image2D::new(view.dims, view.spacing_mm, data)
}

/// Largest hit count met along each output pixel's ray (nearest voxel).
fn coverage_map(grid: &CompoundingGrid, view: &OrthoView) -> Result<Image2D> {
    let counts = grid.counts();
    let dims = counts.dims();
    let step = counts.spacing().iter().copied().fold(f64::INFINITY, f64::min) * 0.5;
    let r3 = view.axis(2);
    let corners = counts.corners();
    let depths: Vec<f64> = corners.iter().map(|c| r3.dot(c)).collect();
    let lo = depths.iter().copied().fold(f64::INFINITY, f64::min) - step;
    let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max) + step;
    resample(view, |p| {
        let base = p - r3 * r3.dot(&p);
        let mut best = 0.0f64;
        let mut t = lo;
        while t <= hi {
            let idx = counts.world_to_index(&(base + r3 * t));
            let (i, j, k) = (idx.x.round(), idx.y.round(), idx.z.round());
            if i >= 0.0 && j >= 0.0 && k >= 0.0 && (i as usize) < dims[0] && (j as usize) < dims[1] && (k as usize) < dims[2] {
                best = best.max(counts.get(i as usize, j as usize, k as usize));
            }
            t += step;
        }
        best
    })
}
