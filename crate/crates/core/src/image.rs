//! Two-dimensional scalar images and their file formats.
//!
//! Images are stored row-major with `x` (column) fastest. The on-disk form
//! mirrors volumes: a JSON header
//! `{"dims": [w, h], "spacing_mm": s, "dtype": "f32", "byte_order": "little", "data_file": ...}`
//! plus a raw little-endian array. For viewing, images can be exported as
//! 16-bit grayscale PNG or binary PGM through an [`IntensityMap`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rawio::{self, Dtype};

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    dims: [usize; 2],
    spacing: f64,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(dims: [usize; 2], spacing: f64, data: Vec<f64>) -> Result<Self> {
        if dims[0] == 0 || dims[1] == 0 {
            return Err(Error::InvalidArgument(format!("image dims must be >= 1, got {dims:?}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidArgument(format!("image spacing must be positive, got {spacing}")));
        }
        if data.len() != dims[0] * dims[1] {
            return Err(Error::DimensionMismatch(format!(
                "image of dims {dims:?} needs {} values, got {}",
                dims[0] * dims[1],
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Image2D { dims, spacing, data })
    }

    pub fn zeros(dims: [usize; 2], spacing: f64) -> Result<Self> {
        Image2D::new(dims, spacing, vec![0.0; dims[0] * dims[1]])
    }

    pub fn constant(dims: [usize; 2], spacing: f64, value: f64) -> Result<Self> {
        Image2D::new(dims, spacing, vec![value; dims[0] * dims[1]])
    }

    /// Builds an image from `f(x, y)`.
    pub fn from_fn(dims: [usize; 2], spacing: f64, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1]);
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                data.push(f(x, y));
            }
        }
        Image2D::new(dims, spacing, data)
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x + self.dims[0] * y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[x + self.dims[0] * y] = v;
    }

    /// Bilinear sample at continuous pixel coordinates. Points up to half a
    /// pixel outside the outermost centres take the edge value; anything
    /// further out is `None`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (w, h) = (self.dims[0] as f64, self.dims[1] as f64);
        if !(x >= -0.5 && x <= w - 0.5 && y >= -0.5 && y <= h - 0.5) {
            return None;
        }
        let x = x.clamp(0.0, w - 1.0);
        let y = y.clamp(0.0, h - 1.0);
        let x0 = (x.floor() as usize).min(self.dims[0].saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.dims[1].saturating_sub(2));
        let x1 = (x0 + 1).min(self.dims[0] - 1);
        let y1 = (y0 + 1).min(self.dims[1] - 1);
        let tx = x - x0 as f64;
        let ty = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
        let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
        Some(top * (1.0 - ty) + bottom * ty)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Image2D> {
        Image2D::new(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn check_same_dims(&self, other: &Image2D) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "image dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Separable Gaussian blur with a kernel truncated at 4 sigma and
    /// mirrored edges.
    pub fn gaussian_blur(&self, sigma: f64) -> Result<Image2D> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument("blur sigma must be positive".into()));
        }
        let radius = (4.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        let [w, h] = self.dims;
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let period = 2 * n;
            let mut i = i.rem_euclid(period);
            if i >= n {
                i = period - 1 - i;
            }
            i as usize
        };
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = reflect(x as isize + k as isize - radius, w);
                    acc += kv * self.data[xx + w * y];
                }
                tmp[x + w * y] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = reflect(y as isize + k as isize - radius, h);
                    acc += kv * tmp[x + w * yy];
                }
                out[x + w * y] = acc;
            }
        }
        Image2D::new(self.dims, self.spacing, out)
    }
}

/// JSON header of a stored image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageHeader {
    pub dims: [usize; 2],
    pub spacing_mm: f64,
    pub dtype: String,
    pub byte_order: String,
    pub data_file: String,
}

pub fn load_image(header_path: impl AsRef<Path>) -> Result<Image2D> {
    let path = header_path.as_ref();
    let header: ImageHeader = rawio::read_json(path)?;
    let dtype = rawio::parse_dtype(path, &header.dtype)?;
    rawio::check_byte_order(path, &header.byte_order)?;
    if header.dims[0] == 0 || header.dims[1] == 0 {
        return Err(Error::format(path, "dims must be >= 1"));
    }
    let raw = rawio::sibling(path, &header.data_file);
    let data = rawio::read_raw(&raw, dtype, header.dims[0] * header.dims[1])?;
    Image2D::new(header.dims, header.spacing_mm, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Saves an image as `f32`, the default image scalar type.
pub fn save_image(img: &Image2D, header_path: impl AsRef<Path>) -> Result<()> {
    save_image_as(img, header_path, Dtype::F32)
}

pub fn save_image_as(img: &Image2D, header_path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = header_path.as_ref();
    let name = rawio::raw_name(path, "")?;
    rawio::write_raw(&rawio::sibling(path, &name), dtype, &img.data)?;
    rawio::write_json(
        path,
        &ImageHeader {
            dims: img.dims,
            spacing_mm: img.spacing,
            dtype: rawio::dtype_name(dtype).into(),
            byte_order: "little".into(),
            data_file: name,
        },
    )
}

/// Affine map from image values to 16-bit display levels:
/// `level = round(65535 * clamp((v - low) / (high - low), 0, 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub low: f64,
    pub high: f64,
}

impl IntensityMap {
    /// Maps the image's minimum to black and its maximum to white. A constant
    /// image maps to black.
    pub fn auto(img: &Image2D) -> Self {
        let (low, high) = (img.min(), img.max());
        IntensityMap {
            low,
            high: if high > low { high } else { low + 1.0 },
        }
    }

    pub fn level(&self, v: f64) -> u16 {
        let t = ((v - self.low) / (self.high - self.low)).clamp(0.0, 1.0);
        (t * 65535.0).round() as u16
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes a 16-bit grayscale PNG.
pub fn export_png16(img: &Image2D, map: IntensityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(img.len() * 2);
    for &v in &img.data {
        bytes.extend_from_slice(&map.level(v).to_be_bytes());
    }
    write_png(path, img.dims, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

/// Writes a 16-bit binary PGM (`P5`, maxval 65535, big-endian samples).
pub fn export_pgm16(img: &Image2D, map: IntensityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    write!(out, "P5\n{} {}\n65535\n", img.dims[0], img.dims[1]).map_err(io)?;
    for &v in &img.data {
        out.write_all(&map.level(v).to_be_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Writes an 8-bit RGB PNG from interleaved `rgb` bytes.
pub fn write_rgb_png(path: impl AsRef<Path>, dims: [usize; 2], rgb: &[u8]) -> Result<()> {
    if rgb.len() != dims[0] * dims[1] * 3 {
        return Err(Error::DimensionMismatch("rgb buffer length".into()));
    }
    write_png(path.as_ref(), dims, png::ColorType::Rgb, png::BitDepth::Eight, rgb)
}

fn write_png(
    path: &Path,
    dims: [usize; 2],
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let out = create(path)?;
    let mut enc = png::Encoder::new(out, dims[0] as u32, dims[1] as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let err = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(err)?;
    writer.write_image_data(bytes).map_err(err)?;
    writer.finish().map_err(err)
}
