//! Procedural femur-like phantoms with exact landmark ground truth.
//!
//! The bone is a union of primitives: a spherical head, a neck capsule, a
//! trochanter sphere, a cylindrical shaft capsule, a condylar sphere and a
//! short tibial stub, wrapped in a soft-tissue cylinder. Bone is a cortical
//! shell of fixed thickness around a trabecular core. Small high-attenuation
//! marker beads may be placed on the landmarks so they can be detected in
//! projections.
//!
//! Bone frame: `+y` points toward the head, `+x` is lateral and `+z` is
//! anterior. The femoral head centre is the frame origin. With the default
//! orientation the bone frame coincides with the world axes, so the bone
//! lies parallel to the detector.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::VoxelVolume;

/// Landmark names, head to foot.
pub const LANDMARK_NAMES: [&str; 4] = ["femoral_head", "greater_trochanter", "knee", "tibia"];

/// Offsets (mm, bone frame) that place the four landmarks.
///
/// * `femoral_head`: from the head centre.
/// * `greater_trochanter`: from the head centre; the trochanter sphere is
///   centred there.
/// * `knee`: from the condyle centre.
/// * `tibia`: lateral (`x`) and anterior (`z`) offset from the head; the `y`
///   component is ignored and solved so the head-to-tibia distance equals the
///   bone length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkTemplate {
    pub femoral_head: [f64; 3],
    pub greater_trochanter: [f64; 3],
    pub knee: [f64; 3],
    pub tibia: [f64; 3],
}

impl Default for LandmarkTemplate {
    fn default() -> Self {
        LandmarkTemplate {
            femoral_head: [0.0, 0.0, 0.0],
            greater_trochanter: [52.0, -38.0, 0.0],
            knee: [0.0, 0.0, 18.0],
            tibia: [28.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Distance between the femoral head and tibia landmarks.
    pub bone_length_mm: f64,
    pub shaft_radius_mm: f64,
    pub head_radius_mm: f64,
    pub condyle_radius_mm: f64,
    pub cortical_thickness_mm: f64,
    pub tibia_stub_length_mm: f64,
    pub soft_tissue_radius_mm: f64,
    pub cortical_attenuation: f64,
    pub trabecular_attenuation: f64,
    pub soft_tissue_attenuation: f64,
    pub landmark_template: LandmarkTemplate,
    /// Uniform jitter (mm) added per axis to the trochanter and knee offsets
    /// and to the lateral/anterior tibia offset.
    pub landmark_jitter_mm: f64,
    /// Marker bead radius; 0 disables the beads.
    pub marker_radius_mm: f64,
    pub marker_attenuation: f64,
    /// Bone-frame to world rotation as Euler angles
    /// `[roll, pitch, yaw]`, `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub orientation_deg: [f64; 3],
    pub volume_dims: [usize; 3],
    pub voxel_spacing_mm: [f64; 3],
    /// World position of the centre voxel; the bone's bounding box is
    /// centred here.
    pub center_mm: [f64; 3],
    /// Sub-samples per axis for partial-volume voxels.
    pub supersampling: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            bone_length_mm: 420.0,
            shaft_radius_mm: 14.0,
            head_radius_mm: 23.0,
            condyle_radius_mm: 30.0,
            cortical_thickness_mm: 4.0,
            tibia_stub_length_mm: 80.0,
            soft_tissue_radius_mm: 60.0,
            cortical_attenuation: 0.05,
            trabecular_attenuation: 0.025,
            soft_tissue_attenuation: 0.02,
            landmark_template: LandmarkTemplate::default(),
            landmark_jitter_mm: 2.0,
            marker_radius_mm: 2.5,
            marker_attenuation: 0.25,
            orientation_deg: [0.0; 3],
            volume_dims: [192, 576, 160],
            voxel_spacing_mm: [1.0; 3],
            center_mm: [0.0, 0.0, 150.0],
            supersampling: 2,
        }
    }
}

impl PhantomSpec {
    /// A small phantom that fits a 64^3 grid of 1 mm voxels within about
    /// +-22 voxels of the centre.
    pub fn compact(seed: u64) -> Self {
        PhantomSpec {
            seed,
            bone_length_mm: 26.0,
            shaft_radius_mm: 3.0,
            head_radius_mm: 5.0,
            condyle_radius_mm: 5.5,
            cortical_thickness_mm: 1.5,
            tibia_stub_length_mm: 5.0,
            soft_tissue_radius_mm: 10.0,
            landmark_template: LandmarkTemplate {
                femoral_head: [0.0, 0.0, 0.0],
                greater_trochanter: [7.0, -5.0, 0.0],
                knee: [0.0, 0.0, 2.5],
                tibia: [3.0, 0.0, 0.0],
            },
            landmark_jitter_mm: 1.0,
            marker_radius_mm: 0.0,
            volume_dims: [64, 64, 64],
            voxel_spacing_mm: [1.0; 3],
            center_mm: [0.0; 3],
            supersampling: 3,
            ..PhantomSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bone_length_mm", self.bone_length_mm),
            ("shaft_radius_mm", self.shaft_radius_mm),
            ("head_radius_mm", self.head_radius_mm),
            ("condyle_radius_mm", self.condyle_radius_mm),
            ("cortical_thickness_mm", self.cortical_thickness_mm),
            ("tibia_stub_length_mm", self.tibia_stub_length_mm),
            ("soft_tissue_radius_mm", self.soft_tissue_radius_mm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let att = [
            self.soft_tissue_attenuation,
            self.trabecular_attenuation,
            self.cortical_attenuation,
            self.marker_attenuation,
        ];
        if att.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidArgument("attenuations must be finite and >= 0".into()));
        }
        let all_zero = att[..3].iter().all(|&a| a == 0.0);
        if !all_zero
            && !(self.cortical_attenuation > self.trabecular_attenuation
                && self.trabecular_attenuation > self.soft_tissue_attenuation)
        {
            return Err(Error::InvalidArgument(
                "attenuations must satisfy cortical > trabecular > soft tissue".into(),
            ));
        }
        if !(self.landmark_jitter_mm.is_finite() && self.landmark_jitter_mm >= 0.0) {
            return Err(Error::InvalidArgument("landmark jitter must be >= 0".into()));
        }
        if !(self.marker_radius_mm.is_finite() && self.marker_radius_mm >= 0.0) {
            return Err(Error::InvalidArgument("marker radius must be >= 0".into()));
        }
        if self.supersampling == 0 {
            return Err(Error::InvalidArgument("supersampling must be >= 1".into()));
        }
        let t = &self.landmark_template;
        if norm(t.femoral_head) >= self.head_radius_mm {
            return Err(Error::InvalidArgument("femoral_head offset leaves the head sphere".into()));
        }
        if norm(t.knee) + self.landmark_jitter_mm * 3f64.sqrt() >= self.condyle_radius_mm {
            return Err(Error::InvalidArgument("knee offset may leave the condyle sphere".into()));
        }
        let lateral = (t.tibia[0].abs() + self.landmark_jitter_mm).hypot(t.tibia[2].abs() + self.landmark_jitter_mm);
        if lateral >= self.bone_length_mm {
            return Err(Error::InvalidArgument("tibia offset exceeds the bone length".into()));
        }
        Ok(())
    }
}

fn norm(v: [f64; 3]) -> f64 {
    Vector3::from(v).norm()
}

/// Exact landmark positions of a generated phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    #[serde(rename = "landmarks")]
    pub landmarks_3d: BTreeMap<String, [f64; 3]>,
    pub bone_length_mm: f64,
}

impl GroundTruth {
    pub fn landmark(&self, name: &str) -> Result<Vector3<f64>> {
        self.landmarks_3d
            .get(name)
            .map(|&p| Vector3::from(p))
            .ok_or_else(|| Error::MissingLandmark(name.to_string()))
    }

    /// Unit vector from the tibia landmark to the femoral head.
    pub fn bone_axis(&self) -> Result<Vector3<f64>> {
        Ok((self.landmark("femoral_head")? - self.landmark("tibia")?).normalize())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Sphere { c: Vector3<f64>, r: f64 },
    Capsule { a: Vector3<f64>, b: Vector3<f64>, r: f64 },
    /// Flat-ended cylinder.
    Cylinder { a: Vector3<f64>, b: Vector3<f64>, r: f64 },
}

impl Shape {
    /// Signed distance (negative inside). Exact for spheres and capsules; a
    /// bound for cylinder ends.
    fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Sphere { c, r } => (p - c).norm() - r,
            Shape::Capsule { a, b, r } => {
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                (p - (a + ab * t)).norm() - r
            }
            Shape::Cylinder { a, b, r } => {
                let ab = b - a;
                let len = ab.norm();
                let axis = ab / len;
                let t = (p - a).dot(&axis);
                let radial = (p - a - axis * t).norm() - r;
                let along = (t - len / 2.0).abs() - len / 2.0;
                let outside = Vector3::new(radial.max(0.0), along.max(0.0), 0.0).norm();
                outside + radial.max(along).min(0.0)
            }
        }
    }

    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let r = |r: f64| Vector3::repeat(r);
        match *self {
            Shape::Sphere { c, r: rad } => (c - r(rad), c + r(rad)),
            Shape::Capsule { a, b, r: rad } => (a.inf(&b) - r(rad), a.sup(&b) + r(rad)),
            Shape::Cylinder { a, b, r: rad } => {
                let u = (b - a).normalize();
                let e = u.map(|c| rad * (1.0 - c * c).max(0.0).sqrt());
                (a.inf(&b) - e, a.sup(&b) + e)
            }
        }
    }
}

struct Model {
    bone: Vec<Shape>,
    soft: Shape,
    markers: Vec<Shape>,
    cortical_thickness: f64,
    cortical: f64,
    trabecular: f64,
    soft_att: f64,
    marker_att: f64,
}

impl Model {
    /// Attenuation at `p` and the distance to the nearest material boundary.
    fn eval(&self, p: &Vector3<f64>) -> (f64, f64) {
        let bone_sd = self.bone.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min);
        let soft_sd = self.soft.sdf(p);
        let mut boundary = bone_sd.abs().min(soft_sd.abs()).min((bone_sd + self.cortical_thickness).abs());
        let mut value = if bone_sd < 0.0 {
            if bone_sd > -self.cortical_thickness {
                self.cortical
            } else {
                self.trabecular
            }
        } else if soft_sd < 0.0 {
            self.soft_att
        } else {
            0.0
        };
        for m in &self.markers {
            let d = m.sdf(p);
            boundary = boundary.min(d.abs());
            if d < 0.0 {
                value = value.max(self.marker_att);
            }
        }
        (value, boundary)
    }
}

/// Builds the phantom volume and its landmark ground truth.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(VoxelVolume, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let j = spec.landmark_jitter_mm;
    let mut jitter = |v: [f64; 3]| -> Vector3<f64> {
        let mut out = Vector3::from(v);
        if j > 0.0 {
            for c in out.iter_mut() {
                *c += rng.random_range(-j..=j);
            }
        }
        out
    };
    let t = &spec.landmark_template;
    let head_center = Vector3::zeros();
    let head = head_center + Vector3::from(t.femoral_head);
    let trochanter = head_center + jitter(t.greater_trochanter);
    let tib_off = jitter(t.tibia);
    let (tx, tz) = (tib_off.x, tib_off.z);
    let l = spec.bone_length_mm;
    let tibia = head + Vector3::new(tx, -(l * l - tx * tx - tz * tz).sqrt(), tz);
    let condyle_center = tibia + Vector3::new(0.0, spec.condyle_radius_mm + 0.2 * spec.condyle_radius_mm, 0.0);
    let knee = condyle_center + jitter(t.knee);

    let r_h = spec.head_radius_mm;
    let r_s = spec.shaft_radius_mm;
    let r_c = spec.condyle_radius_mm;
    let r_t = 0.8 * r_c;
    let troch_r = (0.7 * r_h).max(r_s);
    let stub_top = tibia - Vector3::new(0.0, r_t - 0.15 * r_t, 0.0);
    let stub_bottom = stub_top - Vector3::new(0.0, spec.tibia_stub_length_mm, 0.0);

    let frame = {
        let [r, p, y] = spec.orientation_deg;
        *Rotation3::from_euler_angles(r.to_radians(), p.to_radians(), y.to_radians()).matrix()
    };
    let mut bone = vec![
        Shape::Sphere { c: head_center, r: r_h },
        Shape::Capsule { a: head_center, b: trochanter, r: (0.6 * r_h).max(r_s) },
        Shape::Sphere { c: trochanter, r: troch_r },
        Shape::Capsule { a: trochanter, b: condyle_center, r: r_s },
        Shape::Sphere { c: condyle_center, r: r_c },
        Shape::Capsule { a: stub_top, b: stub_bottom, r: r_t },
    ];
    let axis_top = head_center + Vector3::new(0.0, r_h, 0.0);
    let axis_bottom = stub_bottom - Vector3::new(0.0, r_t, 0.0);
    let mut soft = Shape::Cylinder { a: axis_top, b: axis_bottom, r: spec.soft_tissue_radius_mm };
    let mut landmarks = [head, trochanter, knee, tibia];
    let mut markers: Vec<Shape> = if spec.marker_radius_mm > 0.0 {
        landmarks.iter().map(|&c| Shape::Sphere { c, r: spec.marker_radius_mm }).collect()
    } else {
        Vec::new()
    };

    // Rotate into the world and centre the bounding box on the volume centre.
    let rotate = |s: &Shape, m: &Matrix3<f64>, off: &Vector3<f64>| match *s {
        Shape::Sphere { c, r } => Shape::Sphere { c: m * c + off, r },
        Shape::Capsule { a, b, r } => Shape::Capsule { a: m * a + off, b: m * b + off, r },
        Shape::Cylinder { a, b, r } => Shape::Cylinder { a: m * a + off, b: m * b + off, r },
    };
    let zero = Vector3::zeros();
    let rotated: Vec<Shape> = bone.iter().chain(std::iter::once(&soft)).map(|s| rotate(s, &frame, &zero)).collect();
    let (mut lo, mut hi) = rotated[0].bounds();
    for s in &rotated {
        let (a, b) = s.bounds();
        lo = lo.inf(&a);
        hi = hi.sup(&b);
    }
    let offset = Vector3::from(spec.center_mm) - (lo + hi) / 2.0;
    bone = bone.iter().map(|s| rotate(s, &frame, &offset)).collect();
    soft = rotate(&soft, &frame, &offset);
    markers = markers.iter().map(|s| rotate(s, &frame, &offset)).collect();
    for p in landmarks.iter_mut() {
        *p = frame * *p + offset;
    }

    let vol = VoxelVolume::centered(spec.volume_dims, spec.voxel_spacing_mm, Vector3::from(spec.center_mm))?;
    let box_lo = vol.index_to_world(&Vector3::repeat(-0.5));
    let box_hi = vol.index_to_world(&Vector3::new(
        spec.volume_dims[0] as f64 - 0.5,
        spec.volume_dims[1] as f64 - 0.5,
        spec.volume_dims[2] as f64 - 0.5,
    ));
    for s in bone.iter().chain(std::iter::once(&soft)) {
        let (a, b) = s.bounds();
        if (0..3).any(|k| a[k] < box_lo[k] - 1e-9 || b[k] > box_hi[k] + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "phantom extends beyond the volume (needs [{:.1}, {:.1}] x [{:.1}, {:.1}] x [{:.1}, {:.1}] mm)",
                lo.x + offset.x,
                hi.x + offset.x,
                lo.y + offset.y,
                hi.y + offset.y,
                lo.z + offset.z,
                hi.z + offset.z
            )));
        }
    }

    let model = Model {
        bone,
        soft,
        markers,
        cortical_thickness: spec.cortical_thickness_mm,
        cortical: spec.cortical_attenuation,
        trabecular: spec.trabecular_attenuation,
        soft_att: spec.soft_tissue_attenuation,
        marker_att: spec.marker_attenuation,
    };
    let data = rasterize(&vol, &model, spec.supersampling);
    let vol = VoxelVolume::new(vol.dims(), vol.spacing(), vol.origin(), data)?;

    let landmarks_3d = LANDMARK_NAMES
        .iter()
        .zip(landmarks.iter())
        .map(|(n, p)| (n.to_string(), [p.x, p.y, p.z]))
        .collect();
    let gt = GroundTruth {
        landmarks_3d,
        bone_length_mm: (landmarks[0] - landmarks[3]).norm(),
    };
    Ok((vol, gt))
}

fn rasterize(vol: &VoxelVolume, model: &Model, ss: usize) -> Vec<f64> {
    let [nx, ny, nz] = vol.dims();
    let sp = vol.spacing();
    let half_diag = 0.5 * (sp[0] * sp[0] + sp[1] * sp[1] + sp[2] * sp[2]).sqrt();
    let offsets: Vec<f64> = (0..ss).map(|s| (s as f64 + 0.5) / ss as f64 - 0.5).collect();
    let norm = 1.0 / (ss * ss * ss) as f64;
    (0..nz)
        .into_par_iter()
        .flat_map_iter(|k| {
            let offsets = &offsets;
            (0..ny).flat_map(move |j| {
                (0..nx).map(move |i| {
                    let c = vol.voxel_center(i, j, k);
                    let (v, boundary) = model.eval(&c);
                    if ss == 1 || boundary > half_diag {
                        return v;
                    }
                    let mut acc = 0.0;
                    for dz in offsets {
                        for dy in offsets {
                            for dx in offsets {
                                let p = vol.index_to_world(&Vector3::new(
                                    i as f64 + dx,
                                    j as f64 + dy,
                                    k as f64 + dz,
                                ));
                                acc += model.eval(&p).0;
                            }
                        }
                    }
                    acc * norm
                })
            })
        })
        .collect()
}
