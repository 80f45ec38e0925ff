//! Run configuration: one JSON document, overridable by dotted `--set` paths.

use std::path::Path;

use orthostitch::landmarks::{PeakRefinement, DEFAULT_HEATMAP_SIGMA_PX};
use orthostitch::metrics::SsimParams;
use orthostitch::phantom::PhantomSpec;
use orthostitch::projector::Interpolation;
use orthostitch::protocol::AcquisitionProtocol;
use orthostitch::stitch::StitchOptions;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::{Failure, Kind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed: phantom seed for `phantom`, run seed for `dataset`.
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub threads: usize,
    pub phantom: PhantomSpec,
    pub projector: ProjectorConfig,
    pub protocol: AcquisitionProtocol,
    pub stitch: StitchOptions,
    pub metrics: MetricsConfig,
    pub landmarks: LandmarksConfig,
    pub dataset: DatasetSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            phantom: PhantomSpec::default(),
            projector: ProjectorConfig::default(),
            protocol: AcquisitionProtocol::default(),
            stitch: StitchOptions::default(),
            metrics: MetricsConfig::default(),
            landmarks: LandmarksConfig::default(),
            dataset: DatasetSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectorConfig {
    /// Kernel of orthographic projections.
    pub interpolation: Interpolation,
    /// Mean unattenuated photon count of cone-beam images; `null` is noise-free.
    pub photons: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ssim: SsimParams,
    /// PSNR peak; `null` uses the dynamic range of the reference image.
    pub psnr_peak: Option<f64>,
    pub rr_scale: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            ssim: SsimParams::default(),
            psnr_peak: None,
            rr_scale: DEFAULT_HEATMAP_SIGMA_PX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandmarksConfig {
    pub heatmap_sigma_px: f64,
    /// Peak finder applied to heatmaps.
    pub peak: PeakRefinement,
    /// Bead radius assumed by `measure --detect`.
    pub marker_radius_mm: f64,
}

impl Default for LandmarksConfig {
    fn default() -> Self {
        LandmarksConfig {
            heatmap_sigma_px: DEFAULT_HEATMAP_SIGMA_PX,
            peak: PeakRefinement::default(),
            marker_radius_mm: PhantomSpec::default().marker_radius_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_instances: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { n_instances: 1 }
    }
}

/// Parses `--set` values as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `path` (dot separated) inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), Failure> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Failure::new(Kind::Schema, format!("malformed key `{path}`")));
    }
    let mut cur = root;
    for key in &keys[..keys.len() - 1] {
        if !cur.is_object() {
            return Err(Failure::new(Kind::Schema, format!("`{path}`: `{key}` is not inside an object")));
        }
        cur = cur
            .as_object_mut()
            .expect("checked above")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match cur.as_object_mut() {
        Some(obj) => {
            obj.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Failure::new(Kind::Schema, format!("`{path}`: parent is not an object"))),
    }
}

/// File (if any), then `--set` overrides, then `--seed` / `--threads`.
pub fn load(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<RunConfig, Failure> {
    let mut root = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::new(Kind::Io, format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::new(Kind::Schema, format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Failure::new(Kind::Input, format!("--set expects key=value, got `{s}`")))?;
        set_path(&mut root, key.trim(), parse_value(raw))?;
    }
    if let Some(seed) = seed {
        set_path(&mut root, "seed", seed.into())?;
    }
    if let Some(t) = threads {
        set_path(&mut root, "threads", t.into())?;
    }
    serde_json::from_value(root).map_err(|e| Failure::new(Kind::Schema, format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_override_reaches_nested_field() {
        let cfg = load(None, &["stitch.depth_fraction=0.25".into(), "metrics.psnr_peak=1".into()], None, None)
            .unwrap();
        assert_eq!(cfg.stitch.depth_fraction, 0.25);
        assert_eq!(cfg.metrics.psnr_peak, Some(1.0));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = load(None, &["stitch.depth_fractoin=0.25".into()], None, None).unwrap_err();
        assert_eq!(err.kind, Kind::Schema);
    }

    #[test]
    fn flags_win_over_sets() {
        let cfg = load(None, &["seed=3".into()], Some(9), Some(2)).unwrap();
        assert_eq!((cfg.seed, cfg.threads), (9, 2));
    }

    #[test]
    fn default_round_trips() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        let back: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
