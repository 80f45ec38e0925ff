#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use orthostitch::geometry::{Camera, Intrinsics, ProjectionMatrix};
use orthostitch::image::Image2D;

/// Maximum of `img` within `radius` px of `near`, refined to sub-pixel
/// precision with a separable parabola through the 3x3 neighbourhood.
pub fn refined_peak(img: &Image2D, near: [f64; 2], radius: f64) -> [f64; 2] {
    let [w, h] = img.dims();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - near[0], y as f64 - near[1]);
            if dx * dx + dy * dy <= radius * radius && img.get(x, y) > best.0 {
                best = (img.get(x, y), x, y);
            }
        }
    }
    let (_, x, y) = best;
    let vertex = |l: f64, c: f64, r: f64| {
        let den = l - 2.0 * c + r;
        if den.abs() < 1e-300 { 0.0 } else { 0.5 * (l - r) / den }
    };
    let fx = if x > 0 && x + 1 < w { vertex(img.get(x - 1, y), img.get(x, y), img.get(x + 1, y)) } else { 0.0 };
    let fy = if y > 0 && y + 1 < h { vertex(img.get(x, y - 1), img.get(x, y), img.get(x, y + 1)) } else { 0.0 };
    [x as f64 + fx, y as f64 + fy]
}

/// Image of isotropic Gaussian spots of standard deviation `sigma` px.
pub fn spots(dims: [usize; 2], spacing: f64, centres: &[[f64; 2]], sigma: f64) -> Image2D {
    Image2D::from_fn(dims, spacing, |x, y| {
        centres
            .iter()
            .map(|c| {
                let (dx, dy) = (x as f64 - c[0], y as f64 - c[1]);
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    })
    .unwrap()
}

/// Two cameras with focal length 1000 px (SDD 1100 mm, 1.1 mm pixels),
/// looking down at the detector plane z = 0 and 50 mm apart along x.
pub struct ParallaxRig {
    pub intrinsics: Intrinsics,
    pub cameras: [ProjectionMatrix; 2],
    /// Feature positions: camera depths 800 mm and 1000 mm.
    pub features: [Vector3<f64>; 2],
}

impl ParallaxRig {
    pub const FOCAL_PX: f64 = 1000.0;
    pub const BASELINE_MM: f64 = 50.0;
    pub const DEPTHS_MM: [f64; 2] = [800.0, 1000.0];

    pub fn new(size: usize) -> Self {
        let intrinsics = Intrinsics::centered(1100.0, [size, size], 1.1).unwrap();
        let a = Camera::aimed_at(intrinsics, &Matrix3::identity(), &Vector3::new(0.0, 0.0, 200.0)).unwrap();
        let b = a.translated(&Vector3::new(Self::BASELINE_MM, 0.0, 0.0)).unwrap();
        let features = [
            Vector3::new(25.0, 30.0, 1100.0 - Self::DEPTHS_MM[0]),
            Vector3::new(25.0, -30.0, 1100.0 - Self::DEPTHS_MM[1]),
        ];
        ParallaxRig {
            intrinsics,
            cameras: [a.projection().unwrap(), b.projection().unwrap()],
            features,
        }
    }

    pub fn images(&self, sigma: f64) -> Vec<(Image2D, ProjectionMatrix)> {
        let dims = self.intrinsics.detector_size;
        self.cameras
            .iter()
            .map(|p| {
                let centres: Vec<[f64; 2]> = self.features.iter().map(|f| p.project(f).unwrap()).collect();
                (spots(dims, self.intrinsics.pixel_spacing_mm, &centres, sigma), p.clone())
            })
            .collect()
    }
}

/// A femur about 160 mm long in a 1 mm grid, with marker beads on the
/// landmarks. Centred at `z` above the detector, bone along world y.
pub fn small_phantom(seed: u64, z: f64) -> orthostitch::phantom::PhantomSpec {
    use orthostitch::phantom::{LandmarkTemplate, PhantomSpec};
    PhantomSpec {
        seed,
        bone_length_mm: 160.0,
        shaft_radius_mm: 6.0,
        head_radius_mm: 10.0,
        condyle_radius_mm: 12.0,
        cortical_thickness_mm: 2.0,
        tibia_stub_length_mm: 25.0,
        soft_tissue_radius_mm: 22.0,
        landmark_template: LandmarkTemplate {
            femoral_head: [0.0, 0.0, 0.0],
            greater_trochanter: [20.0, -15.0, 0.0],
            knee: [0.0, 0.0, 6.0],
            tibia: [10.0, 0.0, 0.0],
        },
        landmark_jitter_mm: 1.0,
        marker_radius_mm: 2.0,
        volume_dims: [72, 232, 56],
        voxel_spacing_mm: [1.0; 3],
        center_mm: [0.0, 0.0, z],
        supersampling: 2,
        ..PhantomSpec::default()
    }
}

/// 192 x 192 detector, 1 mm pixels, SDD 1000 mm.
pub fn small_intrinsics() -> Intrinsics {
    Intrinsics::centered(1000.0, [192, 192], 1.0).unwrap()
}

/// Random rotation from uniformly drawn Euler angles.
pub fn random_rotation(rng: &mut impl rand::Rng) -> Matrix3<f64> {
    use orthostitch::geometry::{rot_x, rot_y, rot_z};
    rot_z(rng.random_range(-180.0..180.0)) * rot_y(rng.random_range(-90.0..90.0)) * rot_x(rng.random_range(-180.0..180.0))
}

/// A random finite camera: intrinsics, world-to-camera rotation, centre.
pub struct RandomCamera {
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub projection: ProjectionMatrix,
}

impl RandomCamera {
    pub fn draw(rng: &mut impl rand::Rng) -> Self {
        use orthostitch::geometry::{compose_projection, Pose};
        let w = rng.random_range(64..1024);
        let h = rng.random_range(64..1024);
        let intrinsics = Intrinsics::new(
            rng.random_range(300.0..3000.0),
            [rng.random_range(0.0..(w - 1) as f64), rng.random_range(0.0..(h - 1) as f64)],
            [w, h],
            rng.random_range(0.1..2.0),
        )
        .unwrap();
        let rotation = random_rotation(rng);
        let center = Vector3::from_fn(|_, _| rng.random_range(-500.0..500.0));
        let pose = Pose::from_center(rotation, center).unwrap();
        let projection = compose_projection(&intrinsics, &pose).unwrap();
        RandomCamera { intrinsics, rotation, center, projection }
    }

    /// A world point `depth` mm in front of the camera on the ray with
    /// normalised camera coordinates `(x, y)`.
    pub fn point(&self, x: f64, y: f64, depth: f64) -> Vector3<f64> {
        self.center + self.rotation.transpose() * Vector3::new(x * depth, y * depth, depth)
    }

    pub fn random_pixel(&self, rng: &mut impl rand::Rng) -> [f64; 2] {
        let [w, h] = self.intrinsics.detector_size;
        [rng.random_range(0.0..(w - 1) as f64), rng.random_range(0.0..(h - 1) as f64)]
    }
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Isotropic Gaussian blob: centre (mm), standard deviation (mm), amplitude.
#[derive(Debug, Clone, Copy)]
pub struct Blob {
    pub center: Vector3<f64>,
    pub sigma: f64,
    pub amplitude: f64,
}

impl Blob {
    pub fn value(&self, p: &Vector3<f64>) -> f64 {
        self.amplitude * (-(p - self.center).norm_squared() / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Exact integral along any line through the centre.
    pub fn line_integral(&self) -> f64 {
        self.amplitude * self.sigma * (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// Samples `f(world)` at the voxel centres of `vol`'s grid.
pub fn fill(vol: &orthostitch::volume::VoxelVolume, f: impl Fn(&Vector3<f64>) -> f64) -> orthostitch::volume::VoxelVolume {
    let mut out = vol.clone();
    let [nx, ny, nz] = vol.dims();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                out.set(i, j, k, f(&vol.voxel_center(i, j, k)));
            }
        }
    }
    out
}

pub fn blobs_volume(dims: [usize; 3], spacing: f64, center: Vector3<f64>, blobs: &[Blob]) -> orthostitch::volume::VoxelVolume {
    let grid = orthostitch::volume::VoxelVolume::centered(dims, [spacing; 3], center).unwrap();
    fill(&grid, |p| blobs.iter().map(|b| b.value(p)).sum())
}

pub fn relative_rmse(a: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(reference).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = reference.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
