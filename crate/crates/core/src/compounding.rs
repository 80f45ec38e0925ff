//! Backprojection of images into a shared voxel grid.
//!
//! Every pixel's value is smeared along its ray between the detector and a
//! fraction `d` of the way back to the source; the smears of all images are
//! summed. The grid is filled voxel by voxel: each voxel centre inside an
//! image's depth slab is projected onto that detector and takes the image
//! value there. A companion grid counts how many images reached each voxel.

use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{validate_depth_fraction, validate_rotation, ProjectionMatrix};
use crate::image::Image2D;
use crate::rawio::{self, Dtype};
use crate::volume::{VolumeHeader, VoxelVolume};

/// How a voxel reads the image it projects onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelSampling {
    #[default]
    Bilinear,
    /// The pixel whose centre is closest; every voxel then belongs to
    /// exactly one pixel's ray.
    Nearest,
}

/// Whether a grid is used as a raw sum or divided by its hit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    #[default]
    Count,
}

/// Geometry of a rectangular voxel grid in an arbitrary orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// World position of voxel `dims / 2`.
    pub center_mm: Vector3<f64>,
    /// Rows are the world directions of the i, j and k axes.
    pub rotation: Matrix3<f64>,
}

impl GridSpec {
    pub fn volume(&self) -> Result<VoxelVolume> {
        validate_rotation(&self.rotation)?;
        let direction = self.rotation.transpose();
        let half = Vector3::new(
            (self.dims[0] / 2) as f64 * self.spacing_mm[0],
            (self.dims[1] / 2) as f64 * self.spacing_mm[1],
            (self.dims[2] / 2) as f64 * self.spacing_mm[2],
        );
        let origin = self.center_mm - direction * half;
        VoxelVolume::zeros(self.dims, self.spacing_mm, origin)?.with_direction(direction)
    }
}

/// Accumulated backprojections and per-voxel hit counts on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundingGrid {
    values: VoxelVolume,
    counts: VoxelVolume,
}

impl CompoundingGrid {
    /// Empty grid with the geometry of `template` (its values are ignored).
    pub fn empty_like(template: &VoxelVolume) -> Self {
        let values = template.map(|_| 0.0).expect("zero volume is valid");
        CompoundingGrid {
            counts: values.clone(),
            values,
        }
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Ok(CompoundingGrid::empty_like(&spec.volume()?))
    }

    pub fn from_parts(values: VoxelVolume, counts: VoxelVolume) -> Result<Self> {
        if !values.same_grid(&counts) {
            return Err(Error::DimensionMismatch("values and counts grids differ".into()));
        }
        if counts.data().iter().any(|&c| c < 0.0 || c.fract() != 0.0) {
            return Err(Error::InvalidArgument("counts must be non-negative integers".into()));
        }
        Ok(CompoundingGrid { values, counts })
    }

    /// Raw sum of backprojected values.
    pub fn values(&self) -> &VoxelVolume {
        &self.values
    }

    pub fn counts(&self) -> &VoxelVolume {
        &self.counts
    }

    /// Values divided by counts; voxels no image reached are zero.
    pub fn count_normalized(&self) -> VoxelVolume {
        let mut out = self.values.clone();
        for (v, &c) in out.data_mut().iter_mut().zip(self.counts.data()) {
            *v = if c > 0.0 { *v / c } else { 0.0 };
        }
        out
    }

    pub fn volume(&self, mode: Normalization) -> VoxelVolume {
        match mode {
            Normalization::Raw => self.values.clone(),
            Normalization::Count => self.count_normalized(),
        }
    }

    /// Adds one image's backprojection in place.
    pub fn add_image(&mut self, img: &Image2D, p: &ProjectionMatrix, d: f64, sampling: PixelSampling) -> Result<()> {
        let ray = CameraSlab::new(img, p, d, sampling)?;
        let plane = self.values.dims()[0] * self.values.dims()[1];
        let lattice = Lattice::of(&self.values);
        let hits: usize = self
            .values
            .data_mut()
            .par_chunks_mut(plane)
            .zip(self.counts.data_mut().par_chunks_mut(plane))
            .enumerate()
            .map(|(k, (vals, cnts))| {
                let mut hits = 0;
                lattice.for_each_in_plane(k, |idx, x| {
                    if let Some(v) = ray.gather(x) {
                        vals[idx] += v;
                        cnts[idx] += 1.0;
                        hits += 1;
                    }
                });
                hits
            })
            .sum();
        if hits == 0 {
            return Err(Error::Geometry("grid and backprojection slab are disjoint".into()));
        }
        Ok(())
    }
}

/// Voxel-centre positions of a grid, detached from its data.
struct Lattice {
    dims: [usize; 3],
    origin: Vector3<f64>,
    steps: [Vector3<f64>; 3],
}

impl Lattice {
    fn of(grid: &VoxelVolume) -> Self {
        let s = grid.spacing();
        let dir = grid.direction();
        Lattice {
            dims: grid.dims(),
            origin: grid.origin(),
            steps: [dir.column(0) * s[0], dir.column(1) * s[1], dir.column(2) * s[2]],
        }
    }

    /// Visits the voxel centres of slice `k` in storage order.
    fn for_each_in_plane(&self, k: usize, mut f: impl FnMut(usize, &Vector3<f64>)) {
        let [nx, ny, _] = self.dims;
        let base = self.origin + self.steps[2] * k as f64;
        for j in 0..ny {
            let row = base + self.steps[1] * j as f64;
            for i in 0..nx {
                f(i + nx * j, &(row + self.steps[0] * i as f64));
            }
        }
    }
}

/// One camera's depth slab and image, ready for per-voxel lookups.
struct CameraSlab<'a> {
    img: &'a Image2D,
    m: Matrix3x4<f64>,
    /// Converts the homogeneous `w` of a projected point to depth (mm).
    depth_scale: f64,
    near: f64,
    far: f64,
    sampling: PixelSampling,
}

impl<'a> CameraSlab<'a> {
    fn new(img: &'a Image2D, p: &'a ProjectionMatrix, d: f64, sampling: PixelSampling) -> Result<Self> {
        validate_depth_fraction(d)?;
        let ps = p.pixel_spacing_mm();
        if (img.spacing() - ps).abs() > 1e-9 * ps {
            return Err(Error::DimensionMismatch(format!(
                "image spacing {} mm differs from the camera's pixel spacing {ps} mm",
                img.spacing()
            )));
        }
        let sdd = p.sdd_mm();
        let m = *p.matrix();
        // A point one millimetre along the optical axis has depth 1.
        let depth_scale = (m * (p.camera_center() + p.principal_axis()).push(1.0)).z.recip();
        Ok(CameraSlab {
            img,
            m,
            depth_scale,
            near: sdd * (1.0 - d),
            far: sdd,
            sampling,
        })
    }

    /// Image value seen by a voxel centre, or `None` outside the slab or
    /// the detector.
    #[inline]
    fn gather(&self, x: &Vector3<f64>) -> Option<f64> {
        let h = self.m * x.push(1.0);
        let depth = h.z * self.depth_scale;
        if !(depth >= self.near && depth <= self.far) {
            return None;
        }
        let (u, v) = (h.x / h.z, h.y / h.z);
        match self.sampling {
            PixelSampling::Bilinear => self.img.sample_bilinear(u, v),
            PixelSampling::Nearest => {
                let (iu, iv) = (u.round(), v.round());
                let [w, h] = self.img.dims();
                (iu >= 0.0 && iv >= 0.0 && iu < w as f64 && iv < h as f64)
                    .then(|| self.img.get(iu as usize, iv as usize))
            }
        }
    }
}

/// Returns `grid` plus the backprojection of `img`.
pub fn backproject_image(
    grid: &CompoundingGrid,
    img: &Image2D,
    p: &ProjectionMatrix,
    d: f64,
    sampling: PixelSampling,
) -> Result<CompoundingGrid> {
    let mut out = grid.clone();
    out.add_image(img, p, d, sampling)?;
    Ok(out)
}

/// Sums the backprojections of all images on an empty grid shaped like
/// `template`.
///
/// Contributions to each voxel are added in ascending order of value, so the
/// result does not depend on the order of `images`.
pub fn compound(
    images: &[(Image2D, ProjectionMatrix)],
    d: f64,
    template: &VoxelVolume,
    sampling: PixelSampling,
) -> Result<CompoundingGrid> {
    if images.is_empty() {
        return Err(Error::Empty("compound needs at least one image".into()));
    }
    let slabs = images
        .iter()
        .map(|(img, p)| CameraSlab::new(img, p, d, sampling))
        .collect::<Result<Vec<_>>>()?;
    let mut grid = CompoundingGrid::empty_like(template);
    let lattice = Lattice::of(template);
    let plane = template.dims()[0] * template.dims()[1];
    let hits: usize = grid
        .values
        .data_mut()
        .par_chunks_mut(plane)
        .zip(grid.counts.data_mut().par_chunks_mut(plane))
        .enumerate()
        .map(|(k, (vals, cnts))| {
            let mut hits = 0;
            let mut seen = Vec::with_capacity(slabs.len());
            lattice.for_each_in_plane(k, |idx, x| {
                seen.clear();
                seen.extend(slabs.iter().filter_map(|s| s.gather(x)));
                if seen.is_empty() {
                    return;
                }
                seen.sort_by(f64::total_cmp);
                vals[idx] = seen.iter().fold(0.0, |a, v| a + v);
                cnts[idx] = seen.len() as f64;
                hits += 1;
            });
            hits
        })
        .sum();
    if hits == 0 {
        return Err(Error::Geometry("grid and backprojection slabs are disjoint".into()));
    }
    Ok(grid)
}

/// Saves the raw sum in the volume format (f64) with the counts in a second
/// raw file named by `counts_file`.
pub fn save_grid(grid: &CompoundingGrid, header_path: impl AsRef<Path>) -> Result<()> {
    let path = header_path.as_ref();
    let data = rawio::raw_name(path, "")?;
    let counts = rawio::raw_name(path, "_counts")?;
    rawio::write_raw(&rawio::sibling(path, &data), Dtype::F64, grid.values.data())?;
    rawio::write_raw(&rawio::sibling(path, &counts), Dtype::F64, grid.counts.data())?;
    let mut header = VolumeHeader::for_volume(&grid.values, Dtype::F64, data);
    header.counts_file = Some(counts);
    rawio::write_json(path, &header)
}

/// Loads a grid saved by [`save_grid`]. A header without `counts_file` loads
/// with all counts zero.
pub fn load_grid(header_path: impl AsRef<Path>) -> Result<CompoundingGrid> {
    let path = header_path.as_ref();
    let values = crate::volume::load_volume(path)?;
    let (header, dtype) = VolumeHeader::read(path)?;
    let counts = match &header.counts_file {
        Some(name) => {
            let data = rawio::read_raw(&rawio::sibling(path, name), dtype, header.voxel_count())?;
            header.build(path, data)?
        }
        None => values.map(|_| 0.0)?,
    };
    CompoundingGrid::from_parts(values, counts).map_err(|e| Error::format(path, e.to_string()))
}
