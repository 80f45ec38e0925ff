//! Randomised multi-station acquisitions along a long bone.
//!
//! An instance places one C-arm image per station. Stations split the bone
//! into equal parts and aim at the middle of each, from the head down. The
//! whole acquisition shares a base orientation (LAO/RAO about the bone's
//! long axis, cranial/caudal about the lateral axis) sampled around the
//! anterior-posterior view; every image then gets its own small extra
//! rotation and a per-axis translation jitter of its aim point.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_x, rot_y, Camera, Intrinsics, ProjectionMatrix};
use crate::phantom::GroundTruth;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn symmetric(half_width: f64) -> Self {
        Range(-half_width, half_width)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.0 && v <= self.1
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1) {
            return Err(Error::InvalidArgument(format!(
                "{name}: range [{}, {}] is not ordered",
                self.0, self.1
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionProtocol {
    pub images_per_instance: usize,
    pub intrinsics: Intrinsics,
    /// Per-axis jitter (mm) added to each station's aim point.
    pub translation_jitter_mm: Range,
    /// Base rotation about the bone's long axis (world y).
    pub lao_rao_range_deg: Range,
    /// Base rotation about the lateral axis (world x).
    pub cran_caud_range_deg: Range,
    /// Extra per-image rotation about each of the two axes above.
    pub per_image_rotation_offset_deg: Range,
}

impl Default for AcquisitionProtocol {
    fn default() -> Self {
        AcquisitionProtocol {
            images_per_instance: 3,
            intrinsics: Intrinsics::default(),
            translation_jitter_mm: Range::symmetric(20.0),
            lao_rao_range_deg: Range::symmetric(21.0),
            cran_caud_range_deg: Range::symmetric(6.0),
            per_image_rotation_offset_deg: Range::symmetric(6.0),
        }
    }
}

impl AcquisitionProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.images_per_instance == 0 {
            return Err(Error::InvalidArgument("images_per_instance must be >= 1".into()));
        }
        self.intrinsics.validate()?;
        self.translation_jitter_mm.validate("translation_jitter_mm")?;
        self.lao_rao_range_deg.validate("lao_rao_range_deg")?;
        self.cran_caud_range_deg.validate("cran_caud_range_deg")?;
        self.per_image_rotation_offset_deg.validate("per_image_rotation_offset_deg")
    }

    /// A protocol with every random range collapsed to zero.
    pub fn deterministic(intrinsics: Intrinsics) -> Self {
        AcquisitionProtocol {
            intrinsics,
            translation_jitter_mm: Range(0.0, 0.0),
            lao_rao_range_deg: Range(0.0, 0.0),
            cran_caud_range_deg: Range(0.0, 0.0),
            per_image_rotation_offset_deg: Range(0.0, 0.0),
            ..AcquisitionProtocol::default()
        }
    }
}

/// Aim points from the head down: the midpoints of `n` equal parts of the
/// head-to-tibia segment. For three stations these are the head, shaft and
/// knee regions, `L / 3` apart.
pub fn station_targets(gt: &GroundTruth, n: usize) -> Result<Vec<Vector3<f64>>> {
    let head = gt.landmark("femoral_head")?;
    let tibia = gt.landmark("tibia")?;
    Ok((0..n)
        .map(|k| head + (tibia - head) * ((2 * k + 1) as f64 / (2 * n) as f64))
        .collect())
}

/// Sampled parameters of one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageParams {
    pub target_mm: [f64; 3],
    pub jitter_mm: [f64; 3],
    /// Extra rotation about the long and lateral axes.
    pub offset_deg: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionInstance {
    pub lao_rao_deg: f64,
    pub cran_caud_deg: f64,
    pub images: Vec<ImageParams>,
    pub cameras: Vec<Camera>,
}

impl AcquisitionInstance {
    pub fn projections(&self) -> Result<Vec<ProjectionMatrix>> {
        self.cameras.iter().map(Camera::projection).collect()
    }

    /// Errors if any sampled value falls outside the protocol's ranges.
    pub fn check_ranges(&self, proto: &AcquisitionProtocol) -> Result<()> {
        let fail = |what: &str, v: f64| Err(Error::OutOfBounds(format!("{what} = {v} outside its range")));
        if !proto.lao_rao_range_deg.contains(self.lao_rao_deg) {
            return fail("lao_rao_deg", self.lao_rao_deg);
        }
        if !proto.cran_caud_range_deg.contains(self.cran_caud_deg) {
            return fail("cran_caud_deg", self.cran_caud_deg);
        }
        for im in &self.images {
            for &j in &im.jitter_mm {
                if !proto.translation_jitter_mm.contains(j) {
                    return fail("jitter_mm", j);
                }
            }
            for &o in &im.offset_deg {
                if !proto.per_image_rotation_offset_deg.contains(o) {
                    return fail("offset_deg", o);
                }
            }
        }
        Ok(())
    }
}

/// Draws one acquisition aimed at `targets` (one per image).
pub fn sample_instance(
    proto: &AcquisitionProtocol,
    targets: &[Vector3<f64>],
    rng: &mut impl Rng,
) -> Result<AcquisitionInstance> {
    proto.validate()?;
    if targets.len() != proto.images_per_instance {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} images",
            targets.len(),
            proto.images_per_instance
        )));
    }
    let lao = proto.lao_rao_range_deg.sample(rng);
    let cran = proto.cran_caud_range_deg.sample(rng);
    let mut images = Vec::with_capacity(targets.len());
    let mut cameras = Vec::with_capacity(targets.len());
    for target in targets {
        let jitter = [0; 3].map(|_| proto.translation_jitter_mm.sample(rng));
        let offset = [0; 2].map(|_| proto.per_image_rotation_offset_deg.sample(rng));
        let orientation = rot_y(lao + offset[0]) * rot_x(cran + offset[1]);
        let aim = target + Vector3::from(jitter);
        cameras.push(Camera::aimed_at(proto.intrinsics, &orientation, &aim)?);
        images.push(ImageParams {
            target_mm: [target.x, target.y, target.z],
            jitter_mm: jitter,
            offset_deg: offset,
        });
    }
    Ok(AcquisitionInstance {
        lao_rao_deg: lao,
        cran_caud_deg: cran,
        images,
        cameras,
    })
}

/// Generator used for instance `index` of a run seeded with `seed`.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
