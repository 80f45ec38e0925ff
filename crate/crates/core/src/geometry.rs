//! Pinhole and orthographic camera models.
//!
//! World coordinates are right-handed millimetres. In the canonical pose the
//! detector lies in the plane `z = 0` and the source sits at `z = +SDD`, so the
//! camera looks down the world `-z` axis. Pixel centres are at integer
//! coordinates with the origin at the top-left pixel; `x` is the column and
//! `y` the row.
//!
//! A [`Pose`] maps world points into the camera frame (`x_cam = R x + t`) and a
//! [`ProjectionMatrix`] is the usual `K [R | t]`.

use nalgebra::{Matrix3, Matrix3x4, Matrix4x3, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Detector intrinsics of a flat-panel cone-beam system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub focal_length_px: f64,
    pub principal_point: [f64; 2],
    pub detector_size: [usize; 2],
    pub pixel_spacing_mm: f64,
}

impl Default for Intrinsics {
    /// 640 x 640 detector at 1 mm/pixel, 1000 mm source-detector distance,
    /// principal point at the detector centre.
    fn default() -> Self {
        Intrinsics::new(1000.0, [319.5, 319.5], [640, 640], 1.0)
            .expect("default intrinsics are valid")
    }
}

impl Intrinsics {
    pub fn new(
        focal_length_px: f64,
        principal_point: [f64; 2],
        detector_size: [usize; 2],
        pixel_spacing_mm: f64,
    ) -> Result<Self> {
        let intr = Intrinsics {
            focal_length_px,
            principal_point,
            detector_size,
            pixel_spacing_mm,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Intrinsics with the principal point at the detector centre.
    pub fn centered(sdd_mm: f64, detector_size: [usize; 2], pixel_spacing_mm: f64) -> Result<Self> {
        Intrinsics::new(
            sdd_mm / pixel_spacing_mm,
            [
                (detector_size[0] as f64 - 1.0) / 2.0,
                (detector_size[1] as f64 - 1.0) / 2.0,
            ],
            detector_size,
            pixel_spacing_mm,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length_px.is_finite() && self.focal_length_px > 0.0) {
            return Err(Error::Geometry("focal length must be positive".into()));
        }
        if !(self.pixel_spacing_mm.is_finite() && self.pixel_spacing_mm > 0.0) {
            return Err(Error::Geometry("pixel spacing must be positive".into()));
        }
        if self.detector_size[0] == 0 || self.detector_size[1] == 0 {
            return Err(Error::Geometry("detector must have at least one pixel".into()));
        }
        for axis in 0..2 {
            let p = self.principal_point[axis];
            let extent = self.detector_size[axis] as f64;
            if !(p.is_finite() && p >= -0.5 && p <= extent - 0.5) {
                return Err(Error::Geometry(format!(
                    "principal point {p} lies outside the detector"
                )));
            }
        }
        Ok(())
    }

    /// Source-to-detector distance in millimetres.
    pub fn sdd_mm(&self) -> f64 {
        self.focal_length_px * self.pixel_spacing_mm
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let f = self.focal_length_px;
        let [px, py] = self.principal_point;
        Matrix3::new(f, 0.0, px, 0.0, f, py, 0.0, 0.0, 1.0)
    }
}

/// Checks that `r` is a proper rotation (orthonormal, determinant +1).
pub fn validate_rotation(r: &Matrix3<f64>) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Geometry("rotation contains non-finite entries".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ORTHO_TOL {
        return Err(Error::Geometry(format!(
            "rotation is not orthonormal (max |R^T R - I| = {err:.3e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHO_TOL {
        return Err(Error::Geometry(format!("rotation determinant is {det}, expected +1")));
    }
    Ok(())
}

/// Rotation about the world x axis by `deg` degrees.
pub fn rot_x(deg: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), deg.to_radians()).matrix()
}

/// Rotation about the world y axis by `deg` degrees.
pub fn rot_y(deg: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::y_axis(), deg.to_radians()).matrix()
}

/// Rotation about the world z axis by `deg` degrees.
pub fn rot_z(deg: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).matrix()
}

/// World-to-camera rotation of the canonical anterior-posterior view: camera
/// x along world x, camera y along world -y, optical axis along world -z.
pub fn canonical_rotation() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        validate_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("translation must be finite".into()));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pose with the given world-to-camera rotation whose centre of projection
    /// is at `center` (world).
    pub fn from_center(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        Pose::new(rotation, -(rotation * center))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn transform(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }
}

/// File form of a pose: Euler angles in degrees with `R = Rz(yaw) Ry(pitch) Rx(roll)`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    euler_deg: [f64; 3],
    translation_mm: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(self.rotation).euler_angles();
        PoseFile {
            euler_deg: [roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees()],
            translation_mm: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = PoseFile::deserialize(d)?;
        let [r, p, y] = f.euler_deg;
        let rot =
            *Rotation3::from_euler_angles(r.to_radians(), p.to_radians(), y.to_radians()).matrix();
        Pose::new(rot, Vector3::from(f.translation_mm)).map_err(serde::de::Error::custom)
    }
}

/// A 3x4 perspective projection matrix together with the detector pixel pitch,
/// which fixes the physical source-detector distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix {
    m: Matrix3x4<f64>,
    pixel_spacing_mm: f64,
}

impl ProjectionMatrix {
    pub fn new(m: Matrix3x4<f64>, pixel_spacing_mm: f64) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("projection matrix must be finite".into()));
        }
        if !(pixel_spacing_mm.is_finite() && pixel_spacing_mm > 0.0) {
            return Err(Error::Geometry("pixel spacing must be positive".into()));
        }
        let p = ProjectionMatrix {
            m,
            pixel_spacing_mm,
        };
        let block = p.left_block();
        if !(block.determinant().abs() > 1e-12 * block.norm().powi(3)) {
            return Err(Error::RankDeficient);
        }
        Ok(p)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.m
    }

    pub fn pixel_spacing_mm(&self) -> f64 {
        self.pixel_spacing_mm
    }

    fn left_block(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Projects a world point to pixel coordinates. Returns `None` for points
    /// on the camera's principal plane.
    pub fn project(&self, world: &Vector3<f64>) -> Option<[f64; 2]> {
        let x = self.m * world.push(1.0);
        if x.z.abs() < f64::MIN_POSITIVE {
            return None;
        }
        Some([x.x / x.z, x.y / x.z])
    }

    fn depth_scale(&self) -> f64 {
        let m3 = self.m.fixed_view::<1, 3>(2, 0).norm();
        self.left_block().determinant().signum() / m3
    }

    /// Signed depth (mm) of a world point along the optical axis; positive in
    /// front of the camera.
    pub fn depth(&self, world: &Vector3<f64>) -> f64 {
        let w = (self.m.row(2) * world.push(1.0))[0];
        w * self.depth_scale()
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        let m = self.left_block();
        let p4 = self.m.column(3).into_owned();
        -(m.try_inverse().expect("validated finite camera") * p4)
    }

    /// Unit optical axis (world), pointing from the source toward the detector.
    pub fn principal_axis(&self) -> Vector3<f64> {
        let m3 = self.m.fixed_view::<1, 3>(2, 0).transpose();
        (m3 * self.depth_scale().signum()).normalize()
    }

    /// Focal length and principal point recovered from `M M^T = K K^T`,
    /// assuming square pixels and zero skew.
    pub fn intrinsic_parameters(&self) -> (f64, [f64; 2]) {
        let m = self.left_block();
        let kk = m * m.transpose();
        let s2 = kk[(2, 2)];
        let px = kk[(0, 2)] / s2;
        let py = kk[(1, 2)] / s2;
        let f2 = kk[(0, 0)] / s2 - px * px;
        (f2.max(0.0).sqrt(), [px, py])
    }

    pub fn focal_length_px(&self) -> f64 {
        self.intrinsic_parameters().0
    }

    /// Camera orientation (rows: detector x, detector y, optical axis) under
    /// the same square-pixel, zero-skew assumption.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (f, [px, py]) = self.intrinsic_parameters();
        let k_inv = Matrix3::new(1.0 / f, 0.0, -px / f, 0.0, 1.0 / f, -py / f, 0.0, 0.0, 1.0);
        let r = k_inv * self.left_block() * self.depth_scale();
        // Re-orthonormalise to remove rounding from the intrinsics recovery.
        let svd = r.svd(true, true);
        svd.u.expect("computed") * svd.v_t.expect("computed")
    }

    /// Source-to-detector distance in millimetres.
    pub fn sdd_mm(&self) -> f64 {
        self.focal_length_px() * self.pixel_spacing_mm
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionFile {
    #[serde(rename = "P")]
    p: [[f64; 4]; 3],
    pixel_spacing_mm: f64,
}

impl Serialize for ProjectionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut p = [[0.0; 4]; 3];
        for (r, row) in p.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.m[(r, c)];
            }
        }
        ProjectionFile {
            p,
            pixel_spacing_mm: self.pixel_spacing_mm,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProjectionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ProjectionFile::deserialize(d)?;
        let m = Matrix3x4::from_fn(|r, c| f.p[r][c]);
        ProjectionMatrix::new(m, f.pixel_spacing_mm).map_err(serde::de::Error::custom)
    }
}

/// Assembles `P = K [R | t]`.
pub fn compose_projection(intr: &Intrinsics, pose: &Pose) -> Result<ProjectionMatrix> {
    intr.validate()?;
    validate_rotation(&pose.rotation)?;
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
    rt.set_column(3, &pose.translation);
    ProjectionMatrix::new(intr.matrix() * rt, intr.pixel_spacing_mm)
}

/// Moore-Penrose pseudo-inverse of a full-row-rank projection matrix.
///
/// With the thin QR factorisation `P^T = Q R`, `P^+ = Q R^{-T}`. This avoids
/// forming `P P^T`, whose condition number is the square of that of `P`.
pub fn pseudo_inverse(p: &ProjectionMatrix) -> Result<Matrix4x3<f64>> {
    let qr = p.matrix().transpose().qr();
    let r = qr.r();
    let diag = r.diagonal().abs();
    if !(diag.min() > 1e-12 * diag.max()) {
        return Err(Error::RankDeficient);
    }
    let r_inv = r.try_inverse().ok_or(Error::RankDeficient)?;
    Ok(qr.q() * r_inv.transpose())
}

/// A finite piece of a backprojection ray, `origin + t * direction` for
/// `t` in `[t_near, t_far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegment {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl RaySegment {
    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }

    pub fn length(&self) -> f64 {
        self.t_far - self.t_near
    }
}

/// Checks the depth fraction lies in `(0, 1]`.
pub fn validate_depth_fraction(d: f64) -> Result<()> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "depth fraction must lie in (0, 1], got {d}"
        )));
    }
    Ok(())
}

/// Backprojects a pixel through `P^+` into the depth window selected by `d`.
///
/// The window runs from the detector plane toward the source over a fraction
/// `d` of the source-detector distance, so `d = 1` spans the whole cone and
/// `d = 0.5` stops halfway to the source.
pub fn backproject_pixel(p: &ProjectionMatrix, pixel: [f64; 2], d: f64) -> Result<RaySegment> {
    Backprojector::new(p)?.segment(pixel, d)
}

/// Per-camera state for backprojecting many pixels.
#[derive(Debug, Clone)]
pub struct Backprojector {
    pinv: Matrix4x3<f64>,
    center: Vector3<f64>,
    /// Depth gained per unit of `m3 . direction`.
    depth_scale: f64,
    m3: Vector3<f64>,
    sdd: f64,
}

impl Backprojector {
    pub fn new(p: &ProjectionMatrix) -> Result<Self> {
        Ok(Backprojector {
            pinv: pseudo_inverse(p)?,
            center: p.camera_center(),
            depth_scale: p.depth_scale(),
            m3: p.matrix().fixed_view::<1, 3>(2, 0).transpose(),
            sdd: p.sdd_mm(),
        })
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn sdd_mm(&self) -> f64 {
        self.sdd
    }

    /// Unit direction from the source through `pixel` and the rate at which
    /// depth grows along it.
    pub fn direction(&self, pixel: [f64; 2]) -> Result<(Vector3<f64>, f64)> {
        if !(pixel[0].is_finite() && pixel[1].is_finite()) {
            return Err(Error::InvalidArgument("pixel coordinates must be finite".into()));
        }
        let hx: Vector4<f64> = self.pinv * Vector3::new(pixel[0], pixel[1], 1.0);

        // P^+ x is a point on the ray (possibly at infinity); the ray is the
        // line joining it to the camera centre.
        let xyz = hx.xyz();
        let mut direction = if hx.w.abs() <= 1e-12 * xyz.norm() {
            xyz
        } else {
            xyz / hx.w - self.center
        };
        let norm = direction.norm();
        if !(norm > 0.0) {
            return Err(Error::Geometry("degenerate backprojection ray".into()));
        }
        direction /= norm;

        let mut rate = self.m3.dot(&direction) * self.depth_scale;
        if rate < 0.0 {
            direction = -direction;
            rate = -rate;
        }
        if rate <= 0.0 {
            return Err(Error::Geometry("ray parallel to the detector plane".into()));
        }
        Ok((direction, rate))
    }

    pub fn segment(&self, pixel: [f64; 2], d: f64) -> Result<RaySegment> {
        validate_depth_fraction(d)?;
        let (direction, rate) = self.direction(pixel)?;
        Ok(RaySegment {
            origin: self.center,
            direction,
            t_near: self.sdd * (1.0 - d) / rate,
            t_far: self.sdd / rate,
        })
    }
}

/// Parallel projection onto the first two rows of `r`; the depth coordinate
/// is dropped.
pub fn orthographic_project(r: &Matrix3<f64>, point: &Vector3<f64>) -> [f64; 2] {
    [r.row(0).dot(&point.transpose()), r.row(1).dot(&point.transpose())]
}

/// Pixel grid of an orthographic image.
///
/// Pixel `(i, j)` (column, row) looks along `r3` through the world point
/// `center + (i - w/2) s r1 + (j - h/2) s r2`, with integer division for the
/// centre index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrthoView {
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub dims: [usize; 2],
    pub spacing_mm: f64,
}

impl OrthoView {
    pub fn new(
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        dims: [usize; 2],
        spacing_mm: f64,
    ) -> Result<Self> {
        validate_rotation(&rotation)?;
        if dims[0] == 0 || dims[1] == 0 {
            return Err(Error::InvalidArgument("view must have at least one pixel".into()));
        }
        if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
            return Err(Error::InvalidArgument("view spacing must be positive".into()));
        }
        Ok(OrthoView {
            rotation,
            center,
            dims,
            spacing_mm,
        })
    }

    pub fn center_index(&self) -> [f64; 2] {
        [(self.dims[0] / 2) as f64, (self.dims[1] / 2) as f64]
    }

    pub fn axis(&self, row: usize) -> Vector3<f64> {
        self.rotation.row(row).transpose()
    }

    /// Continuous pixel coordinates of a world point.
    pub fn world_to_pixel(&self, world: &Vector3<f64>) -> [f64; 2] {
        let [a, b] = orthographic_project(&self.rotation, &(world - self.center));
        let c = self.center_index();
        [a / self.spacing_mm + c[0], b / self.spacing_mm + c[1]]
    }

    /// World point on the pixel's ray that lies in the plane through `center`.
    pub fn pixel_to_world(&self, pixel: [f64; 2]) -> Vector3<f64> {
        let c = self.center_index();
        self.center
            + self.axis(0) * ((pixel[0] - c[0]) * self.spacing_mm)
            + self.axis(1) * ((pixel[1] - c[1]) * self.spacing_mm)
    }
}

/// A physical camera: intrinsics plus pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn projection(&self) -> Result<ProjectionMatrix> {
        compose_projection(&self.intrinsics, &self.pose)
    }

    /// Camera whose principal ray passes through `target`, after rotating the
    /// canonical C-arm by `orientation` (world frame) about `target`.
    ///
    /// In the canonical pose the detector is the plane `z = 0`, so a target at
    /// height `target.z` sits `SDD - target.z` in front of the source.
    pub fn aimed_at(
        intrinsics: Intrinsics,
        orientation: &Matrix3<f64>,
        target: &Vector3<f64>,
    ) -> Result<Self> {
        validate_rotation(orientation)?;
        let sdd = intrinsics.sdd_mm();
        let canonical_center = Vector3::new(target.x, target.y, sdd);
        let center = target + orientation * (canonical_center - target);
        let rotation = canonical_rotation() * orientation.transpose();
        Ok(Camera {
            intrinsics,
            pose: Pose::from_center(rotation, center)?,
        })
    }

    /// Same camera translated by `offset` (world, mm).
    pub fn translated(&self, offset: &Vector3<f64>) -> Result<Self> {
        Ok(Camera {
            intrinsics: self.intrinsics,
            pose: Pose::from_center(*self.pose.rotation(), self.pose.center() + offset)?,
        })
    }
}
