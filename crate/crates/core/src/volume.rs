//! Voxel volumes and their on-disk format.
//!
//! A volume stores one scalar per voxel in x-fastest order. Voxel `(i, j, k)`
//! has its centre at `origin + D (i sx, j sy, k sz)` where `D` is the
//! (usually identity) direction matrix whose columns are the grid axes in
//! world coordinates.
//!
//! On disk a volume is a JSON header plus a raw little-endian array:
//!
//! ```json
//! {
//!   "dims": [64, 64, 64],
//!   "spacing_mm": [1.0, 1.0, 1.0],
//!   "origin_mm": [-31.5, -31.5, -31.5],
//!   "dtype": "f32",
//!   "byte_order": "little",
//!   "data_file": "phantom.raw"
//! }
//! ```
//!
//! `direction` (3x3, row-major, columns are grid axes) and `counts_file`
//! (hit counts of a compounding grid) are optional.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::validate_rotation;
use crate::rawio::{self, Dtype};

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Vector3<f64>,
    direction: Matrix3<f64>,
    data: Vec<f64>,
}

impl VoxelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Vector3<f64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!("volume dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "volume spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("volume origin must be finite".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "volume of dims {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(VoxelVolume {
            dims,
            spacing,
            origin,
            direction: Matrix3::identity(),
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], origin: Vector3<f64>) -> Result<Self> {
        let n = dims.iter().product();
        VoxelVolume::new(dims, spacing, origin, vec![0.0; n])
    }

    /// Zero volume whose centre voxel `(nx/2, ny/2, nz/2)` (integer division)
    /// sits at `center`.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3], center: Vector3<f64>) -> Result<Self> {
        let origin = center
            - Vector3::new(
                (dims[0] / 2) as f64 * spacing[0],
                (dims[1] / 2) as f64 * spacing[1],
                (dims[2] / 2) as f64 * spacing[2],
            );
        VoxelVolume::zeros(dims, spacing, origin)
    }

    /// Replaces the grid axes. Columns of `direction` are the world
    /// directions of the i, j and k axes.
    pub fn with_direction(mut self, direction: Matrix3<f64>) -> Result<Self> {
        validate_rotation(&direction)?;
        self.direction = direction;
        Ok(self)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn direction(&self) -> &Matrix3<f64> {
        &self.direction
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// World position of a (possibly fractional) voxel index.
    pub fn index_to_world(&self, idx: &Vector3<f64>) -> Vector3<f64> {
        self.origin
            + self.direction
                * Vector3::new(
                    idx.x * self.spacing[0],
                    idx.y * self.spacing[1],
                    idx.z * self.spacing[2],
                )
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.index_to_world(&Vector3::new(i as f64, j as f64, k as f64))
    }

    /// Continuous voxel index of a world point.
    pub fn world_to_index(&self, world: &Vector3<f64>) -> Vector3<f64> {
        let local = self.direction.transpose() * (world - self.origin);
        Vector3::new(
            local.x / self.spacing[0],
            local.y / self.spacing[1],
            local.z / self.spacing[2],
        )
    }

    /// Trilinear interpolation at a continuous index; voxels outside the grid
    /// count as zero.
    #[inline]
    pub fn sample_index(&self, p: [f64; 3]) -> f64 {
        let [nx, ny, nz] = self.dims;
        let fx = p[0].floor();
        let fy = p[1].floor();
        let fz = p[2].floor();
        if fx < -1.0 || fy < -1.0 || fz < -1.0 {
            return 0.0;
        }
        if fx >= nx as f64 || fy >= ny as f64 || fz >= nz as f64 {
            return 0.0;
        }
        let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
        let (tx, ty, tz) = (p[0] - fx, p[1] - fy, p[2] - fz);
        let wx = [1.0 - tx, tx];
        let wy = [1.0 - ty, ty];
        let wz = [1.0 - tz, tz];
        let mut acc = 0.0;
        for (dz, wz) in wz.iter().enumerate() {
            let z = iz + dz as i64;
            if z < 0 || z >= nz as i64 {
                continue;
            }
            for (dy, wy) in wy.iter().enumerate() {
                let y = iy + dy as i64;
                if y < 0 || y >= ny as i64 {
                    continue;
                }
                let row = (y as usize + ny * z as usize) * nx;
                for (dx, wx) in wx.iter().enumerate() {
                    let x = ix + dx as i64;
                    if x < 0 || x >= nx as i64 {
                        continue;
                    }
                    acc += wz * wy * wx * self.data[row + x as usize];
                }
            }
        }
        acc
    }

    pub fn sample(&self, world: &Vector3<f64>) -> f64 {
        let p = self.world_to_index(world);
        self.sample_index([p.x, p.y, p.z])
    }

    /// True when both volumes share dims, spacing, origin and direction.
    pub fn same_grid(&self, other: &VoxelVolume) -> bool {
        self.dims == other.dims
            && self.spacing == other.spacing
            && self.origin == other.origin
            && self.direction == other.direction
    }

    /// World-space corners of the box spanned by the voxel centres.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let hi = [
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ];
        std::array::from_fn(|c| {
            let idx = Vector3::new(
                if c & 1 == 0 { 0.0 } else { hi[0] },
                if c & 2 == 0 { 0.0 } else { hi[1] },
                if c & 4 == 0 { 0.0 } else { hi[2] },
            );
            self.index_to_world(&idx)
        })
    }

    /// Same grid with every value passed through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<VoxelVolume> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        let mut out = VoxelVolume::new(self.dims, self.spacing, self.origin, data)?;
        out.direction = self.direction;
        Ok(out)
    }
}

/// Cubic B-spline interpolant of a volume that is zero outside its grid.
///
/// Coefficients are computed with the exact recursive prefilter for a
/// zero-extended signal on a grid padded by [`CubicVolume::MARGIN`] voxels,
/// beyond which they are truncated (relative size below 3e-5).
#[derive(Debug, Clone)]
pub struct CubicVolume {
    dims: [usize; 3],
    coeffs: Vec<f64>,
}

impl CubicVolume {
    pub const MARGIN: usize = 8;

    pub fn new(vol: &VoxelVolume) -> Self {
        let m = Self::MARGIN;
        let n = vol.dims();
        let dims = [n[0] + 2 * m, n[1] + 2 * m, n[2] + 2 * m];
        let mut coeffs = vec![0.0; dims[0] * dims[1] * dims[2]];
        for k in 0..n[2] {
            for j in 0..n[1] {
                let dst = m + dims[0] * (j + m + dims[1] * (k + m));
                let src = vol.index(0, j, k);
                coeffs[dst..dst + n[0]].copy_from_slice(&vol.data()[src..src + n[0]]);
            }
        }
        let stride = [1, dims[0], dims[0] * dims[1]];
        let mut line = Vec::new();
        for axis in 0..3 {
            let (a, b) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for v in 0..dims[b] {
                for u in 0..dims[a] {
                    let base = u * stride[a] + v * stride[b];
                    line.clear();
                    line.extend((0..dims[axis]).map(|i| coeffs[base + i * stride[axis]]));
                    prefilter(&mut line);
                    for (i, c) in line.iter().enumerate() {
                        coeffs[base + i * stride[axis]] = *c;
                    }
                }
            }
        }
        CubicVolume { dims, coeffs }
    }

    /// Value at a continuous index of the original grid.
    #[inline]
    pub fn sample_index(&self, p: [f64; 3]) -> f64 {
        let m = Self::MARGIN as f64;
        let q = [p[0] + m, p[1] + m, p[2] + m];
        let f = [q[0].floor(), q[1].floor(), q[2].floor()];
        let mut w = [[0.0; 4]; 3];
        let mut base = [0i64; 3];
        for a in 0..3 {
            if f[a] < 1.0 || f[a] + 2.0 >= self.dims[a] as f64 {
                return 0.0;
            }
            base[a] = f[a] as i64 - 1;
            w[a] = bspline_weights(q[a] - f[a]);
        }
        let [nx, ny, _] = self.dims;
        let mut acc = 0.0;
        for (dz, wz) in w[2].iter().enumerate() {
            let z = (base[2] as usize + dz) * nx * ny;
            for (dy, wy) in w[1].iter().enumerate() {
                let row = z + (base[1] as usize + dy) * nx + base[0] as usize;
                let c = &self.coeffs[row..row + 4];
                let inner = w[0][0] * c[0] + w[0][1] * c[1] + w[0][2] * c[2] + w[0][3] * c[3];
                acc += wz * wy * inner;
            }
        }
        acc
    }
}

#[inline]
fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// In-place cubic B-spline prefilter of a zero-extended signal.
fn prefilter(c: &mut [f64]) {
    let z = 3f64.sqrt() - 2.0;
    let n = c.len();
    for v in c.iter_mut() {
        *v *= 6.0;
    }
    for k in 1..n {
        c[k] += z * c[k - 1];
    }
    c[n - 1] *= z / (z * z - 1.0);
    for k in (0..n - 1).rev() {
        c[k] = z * (c[k + 1] - c[k]);
    }
}

/// JSON header of a stored volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<[[f64; 3]; 3]>,
    pub dtype: String,
    pub byte_order: String,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts_file: Option<String>,
}

impl VolumeHeader {
    pub(crate) fn for_volume(vol: &VoxelVolume, dtype: Dtype, data_file: String) -> Self {
        let direction = (vol.direction != Matrix3::identity())
            .then(|| std::array::from_fn(|r| std::array::from_fn(|c| vol.direction[(r, c)])));
        VolumeHeader {
            dims: vol.dims,
            spacing_mm: vol.spacing,
            origin_mm: [vol.origin.x, vol.origin.y, vol.origin.z],
            direction,
            dtype: rawio::dtype_name(dtype).to_string(),
            byte_order: "little".into(),
            data_file,
            counts_file: None,
        }
    }

    pub(crate) fn read(path: &Path) -> Result<(Self, Dtype)> {
        let header: VolumeHeader = rawio::read_json(path)?;
        let dtype = rawio::parse_dtype(path, &header.dtype)?;
        rawio::check_byte_order(path, &header.byte_order)?;
        Ok((header, dtype))
    }

    pub(crate) fn build(&self, path: &Path, data: Vec<f64>) -> Result<VoxelVolume> {
        let vol = VoxelVolume::new(self.dims, self.spacing_mm, Vector3::from(self.origin_mm), data)
            .map_err(|e| Error::format(path, e.to_string()))?;
        match self.direction {
            Some(d) => vol
                .with_direction(Matrix3::from_fn(|r, c| d[r][c]))
                .map_err(|e| Error::format(path, e.to_string())),
            None => Ok(vol),
        }
    }

    pub(crate) fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Loads a volume from its JSON header; the raw file is resolved relative to
/// the header's directory.
pub fn load_volume(header_path: impl AsRef<Path>) -> Result<VoxelVolume> {
    let path = header_path.as_ref();
    let (header, dtype) = VolumeHeader::read(path)?;
    if header.dims.iter().any(|&n| n == 0) {
        return Err(Error::format(path, "dims must be >= 1"));
    }
    let raw = rawio::sibling(path, &header.data_file);
    let data = rawio::read_raw(&raw, dtype, header.voxel_count())?;
    header.build(path, data)
}

/// Saves a volume as f64 so that a later load is bit-exact.
pub fn save_volume(vol: &VoxelVolume, header_path: impl AsRef<Path>) -> Result<()> {
    save_volume_as(vol, header_path, Dtype::F64)
}

/// Saves a volume with an explicit scalar type. The raw file is written next
/// to the header as `<stem>.raw`.
pub fn save_volume_as(vol: &VoxelVolume, header_path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = header_path.as_ref();
    let name = rawio::raw_name(path, "")?;
    rawio::write_raw(&rawio::sibling(path, &name), dtype, &vol.data)?;
    rawio::write_json(path, &VolumeHeader::for_volume(vol, dtype, name))
}
