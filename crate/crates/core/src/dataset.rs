//! End-to-end training data: phantom, acquisition, X-rays, stitched input
//! and orthographic ground truth, indexed by a manifest.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json
//! 0000/xray_0.json  xray_0.raw  P_0.json   (one per image)
//!      input_recon.json       stitched reconstruction
//!      input_coverage.json    images reaching each output ray
//!      gt_ortho.json          orthographic projection of the phantom
//!      heatmap_<name>.json    one per landmark
//!      landmarks.json         {name: [u, v]} in gt_ortho pixels
//!      ground_truth.json      3D landmarks and bone length
//!      acquisition.json       sampled protocol parameters
//! ```
//!
//! Paths in the manifest are relative to its directory. Nothing written
//! depends on the clock or the thread count, so the same configuration
//! reproduces every byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, save_image};
use crate::landmarks::{project_landmarks, render_heatmaps, DEFAULT_HEATMAP_SIGMA_PX};
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::projector::{cone_beam_drr, orthographic_drr_view, NoiseSpec};
use crate::protocol::{instance_rng, sample_instance, station_targets, AcquisitionProtocol};
use crate::rawio;
use crate::geometry::OrthoView;
use crate::stitch::{plan_view, stitch_onto, StitchOptions};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_instances: usize,
    /// Template phantom; instance `i` uses seed `seed + i`.
    pub phantom: PhantomSpec,
    pub protocol: AcquisitionProtocol,
    pub stitch: StitchOptions,
    /// Mean unattenuated photon count; `None` leaves the X-rays noise-free.
    pub photons: Option<f64>,
    pub heatmap_sigma_px: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            n_instances: 1,
            phantom: PhantomSpec::default(),
            protocol: AcquisitionProtocol::default(),
            stitch: StitchOptions::default(),
            photons: None,
            heatmap_sigma_px: DEFAULT_HEATMAP_SIGMA_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub id: String,
    pub seed: u64,
    pub xrays: Vec<String>,
    pub projections: Vec<String>,
    pub input_recon: String,
    pub input_coverage: String,
    pub gt_ortho: String,
    /// Landmark name to heatmap header.
    pub heatmaps: std::collections::BTreeMap<String, String>,
    pub landmarks: String,
    pub ground_truth: String,
    pub acquisition: String,
    pub max_imag_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub generator: String,
    pub rng: String,
    pub config: DatasetConfig,
    pub instances: Vec<InstanceEntry>,
}

fn rel(id: &str, file: &str) -> String {
    format!("{id}/{file}")
}

/// Seed of instance `index`: also the phantom seed.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Generates one instance into `dir/<id>/` and returns its manifest entry.
pub fn generate_instance(cfg: &DatasetConfig, index: usize, dir: &Path) -> Result<InstanceEntry> {
    let id = format!("{index:04}");
    let seed = instance_seed(cfg.seed, index);
    let out = dir.join(&id);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let spec = PhantomSpec { seed, ..cfg.phantom.clone() };
    let (vol, gt) = generate_phantom(&spec)?;
    let targets = station_targets(&gt, cfg.protocol.images_per_instance)?;
    let mut rng = instance_rng(cfg.seed, index as u64);
    let acq = sample_instance(&cfg.protocol, &targets, &mut rng)?;
    let projections = acq.projections()?;

    let mut images = Vec::with_capacity(projections.len());
    let mut entry_xrays = Vec::new();
    let mut entry_ps = Vec::new();
    for (k, p) in projections.iter().enumerate() {
        let noise = cfg.photons.map(|photons| NoiseSpec {
            photons,
            seed: seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
        });
        let img = cone_beam_drr(&vol, p, &cfg.protocol.intrinsics, noise.as_ref())?;
        let (xname, pname) = (format!("xray_{k}.json"), format!("P_{k}.json"));
        save_image(&img, out.join(&xname))?;
        rawio::write_json(&out.join(&pname), p)?;
        entry_xrays.push(rel(&id, &xname));
        entry_ps.push(rel(&id, &pname));
        // Stitch what was stored (f32 pixels, JSON matrix) so the stored
        // files alone reproduce input_recon.
        images.push((load_image(out.join(&xname))?, rawio::read_json(&out.join(&pname))?));
    }

    let view = include_points(&plan_view(&images, &cfg.stitch)?, &gt)?;
    let stitched = stitch_onto(&images, &view, &cfg.stitch)?;
    save_image(&stitched.image, out.join("input_recon.json"))?;
    save_image(&stitched.coverage, out.join("input_coverage.json"))?;
    let gt_img = orthographic_drr_view(&vol, &stitched.view)?;
    save_image(&gt_img, out.join("gt_ortho.json"))?;

    let lms = project_landmarks(&gt, &stitched.view);
    let maps = render_heatmaps(&lms, stitched.view.dims, stitched.view.spacing_mm, cfg.heatmap_sigma_px)?;
    let mut heatmaps = std::collections::BTreeMap::new();
    for m in &maps {
        let name = format!("heatmap_{}.json", m.name());
        save_image(m.image(), out.join(&name))?;
        heatmaps.insert(m.name().to_string(), rel(&id, &name));
    }
    rawio::write_json(&out.join("landmarks.json"), &lms)?;
    rawio::write_json(&out.join("ground_truth.json"), &gt)?;
    rawio::write_json(&out.join("acquisition.json"), &AcquisitionRecord { view: stitched.view, acquisition: acq })?;

    Ok(InstanceEntry {
        id: id.clone(),
        seed,
        xrays: entry_xrays,
        projections: entry_ps,
        input_recon: rel(&id, "input_recon.json"),
        input_coverage: rel(&id, "input_coverage.json"),
        gt_ortho: rel(&id, "gt_ortho.json"),
        heatmaps,
        landmarks: rel(&id, "landmarks.json"),
        ground_truth: rel(&id, "ground_truth.json"),
        acquisition: rel(&id, "acquisition.json"),
        max_imag_residual: stitched.max_imag_residual,
    })
}

/// Grows `view` (keeping its pixel grid) until every landmark lies at least
/// one pixel inside it, so the ground truth shows all of them even where the
/// images do not reach.
fn include_points(view: &OrthoView, gt: &crate::phantom::GroundTruth) -> Result<OrthoView> {
    let mut lo = [0i64; 2];
    let mut hi = [view.dims[0] as i64 - 1, view.dims[1] as i64 - 1];
    for p in gt.landmarks_3d.values() {
        let uv = view.world_to_pixel(&nalgebra::Vector3::from(*p));
        for a in 0..2 {
            lo[a] = lo[a].min(uv[a].floor() as i64 - 1);
            hi[a] = hi[a].max(uv[a].ceil() as i64 + 1);
        }
    }
    let dims = [0, 1].map(|a| (hi[a] - lo[a] + 1) as usize);
    if dims == view.dims {
        return Ok(*view);
    }
    let centre = [0, 1].map(|a| (lo[a] + (dims[a] / 2) as i64) as f64);
    OrthoView::new(view.rotation, view.pixel_to_world(centre), dims, view.spacing_mm)
}

/// Everything needed to redo the stitch of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub view: crate::geometry::OrthoView,
    pub acquisition: crate::protocol::AcquisitionInstance,
}

/// Writes `cfg.n_instances` instances and `manifest.json` into `dir`.
/// Instances are generated one after another; each uses all threads.
pub fn generate_dataset(cfg: &DatasetConfig, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    if cfg.n_instances == 0 {
        return Err(Error::InvalidArgument("n_instances must be >= 1".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let instances = (0..cfg.n_instances)
        .map(|i| generate_instance(cfg, i, dir))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        generator: format!("orthostitch {}", env!("CARGO_PKG_VERSION")),
        rng: "ChaCha8, stream = instance index".into(),
        config: cfg.clone(),
        instances,
    };
    rawio::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    rawio::read_json(path.as_ref())
}

/// Resolves a manifest-relative path.
pub fn resolve(manifest_path: impl AsRef<Path>, rel: &str) -> PathBuf {
    rawio::sibling(manifest_path.as_ref(), rel)
}
