use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use orthostitch::dataset::{generate_dataset, AcquisitionRecord, DatasetConfig};
use orthostitch::geometry::{OrthoView, ProjectionMatrix};
use orthostitch::image::{load_image, save_image, Image2D};
use orthostitch::landmarks::{
    detect_markers, extract_peak, landmarks_from_heatmaps, measure_length, write_overlay, Heatmap, LandmarkSet,
};
use orthostitch::metrics::{bce_loss, cosine_frequency_loss, mse, rr_loss, ssim_loss, PsnrValue};
use orthostitch::phantom::{generate_phantom, GroundTruth, PhantomSpec};
use orthostitch::projector::{cone_beam_drr, orthographic_drr_with, NoiseSpec};
use orthostitch::protocol::{instance_rng, sample_instance, station_targets};
use orthostitch::stitch::{stitch, stitch_onto, StitchResult};
use orthostitch::volume::{load_volume, save_volume};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{self, RunConfig};
use crate::failure::{Failure, Kind};
use crate::{Cli, Command};

type Res<T> = Result<T, Failure>;

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long)]
    pub volume: PathBuf,
    /// Cone-beam image per projection matrix (repeatable).
    #[arg(long = "projection")]
    pub projections: Vec<PathBuf>,
    /// Sample an acquisition from the configured protocol around this phantom.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Orthographic projection onto this view.
    #[arg(long)]
    pub view: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StitchArgs {
    /// Dataset instance directory holding xray_k.json and P_k.json.
    #[arg(long, conflicts_with_all = ["images", "projections"])]
    pub instance: Option<PathBuf>,
    /// X-ray image (repeatable, paired with --projection in order).
    #[arg(long = "image")]
    pub images: Vec<PathBuf>,
    #[arg(long = "projection")]
    pub projections: Vec<PathBuf>,
    /// Output view; taken from the instance's acquisition.json or planned
    /// from the images when omitted.
    #[arg(long)]
    pub view: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "batch")]
    pub pred: Option<PathBuf>,
    #[arg(long, required_unless_present = "batch")]
    pub gt: Option<PathBuf>,
    /// Stitched input; enables the cosine frequency loss.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "gt_heatmap")]
    pub pred_heatmap: Option<PathBuf>,
    #[arg(long, requires = "pred_heatmap")]
    pub gt_heatmap: Option<PathBuf>,
    /// CSV with a header `pred,gt[,input]`; paths relative to the CSV.
    #[arg(long, conflicts_with_all = ["pred", "gt", "input"])]
    pub batch: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Landmark JSON `{name: [u, v]}`.
    #[arg(long, conflicts_with_all = ["heatmaps", "detect"])]
    pub landmarks: Option<PathBuf>,
    /// Heatmap images named `heatmap_<landmark>.json` (repeatable).
    #[arg(long = "heatmap", conflicts_with = "detect")]
    pub heatmaps: Vec<PathBuf>,
    /// Detect marker beads in the image.
    #[arg(long)]
    pub detect: bool,
    #[arg(long, default_value = "femoral_head")]
    pub from: String,
    #[arg(long, default_value = "tibia")]
    pub to: String,
}

/// Collects what a command read and wrote for its run manifest.
struct Run<'a> {
    command: &'static str,
    cfg: &'a RunConfig,
    out: &'a Path,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn read_image(&mut self, p: &Path) -> Res<Image2D> {
        self.inputs.push(p.to_path_buf());
        Ok(load_image(p)?)
    }

    fn read_json<T: DeserializeOwned>(&mut self, p: &Path) -> Res<T> {
        self.inputs.push(p.to_path_buf());
        let text = std::fs::read_to_string(p).map_err(|e| Failure::new(Kind::Io, format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::new(Kind::Schema, format!("{}: {e}", p.display())))
    }

    fn write_image(&mut self, img: &Image2D, name: &str) -> Res<()> {
        save_image(img, self.out.join(name))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, value: &T, name: &str) -> Res<()> {
        write_json_file(&self.out.join(name), value)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(self) -> Res<()> {
        let config = serde_json::to_value(self.cfg).expect("config serialises");
        let config_bytes = serde_json::to_vec(&config).expect("config serialises");
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|e| Failure::new(Kind::Io, format!("{}: {e}", p.display())))?;
                Ok(serde_json::json!({ "path": p.display().to_string(), "sha256": sha256_hex(&bytes) }))
            })
            .collect::<Res<Vec<_>>>()?;
        let manifest = serde_json::json!({
            "tool": "orthostitch",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "threads": rayon::current_num_threads(),
            "config_sha256": sha256_hex(&config_bytes),
            "config": config,
            "inputs": inputs,
            "outputs": self.outputs,
        });
        write_json_file(&self.out.join("run_manifest.json"), &manifest)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Res<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serialises");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::new(Kind::Io, format!("{}: {e}", path.display())))
}

pub fn run(cli: &Cli) -> Res<()> {
    let g = &cli.global;
    let cfg = config::load(g.config.as_deref(), &g.sets, g.seed, g.threads)?;
    // The global pool can only be built once; later calls in the same
    // process keep the first size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    std::fs::create_dir_all(&g.out).map_err(|e| Failure::new(Kind::Io, format!("{}: {e}", g.out.display())))?;
    let (name, f): (&'static str, fn(&mut Run, &Command) -> Res<()>) = match &cli.command {
        Command::Phantom => ("phantom", cmd_phantom),
        Command::Project(_) => ("project", cmd_project),
        Command::Stitch(_) => ("stitch", cmd_stitch),
        Command::Evaluate(_) => ("evaluate", cmd_evaluate),
        Command::Measure(_) => ("measure", cmd_measure),
        Command::Dataset => ("dataset", cmd_dataset),
    };
    let mut run = Run {
        command: name,
        cfg: &cfg,
        out: &g.out,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    f(&mut run, &cli.command)?;
    run.finish()
}

fn cmd_phantom(run: &mut Run, _: &Command) -> Res<()> {
    let spec = PhantomSpec {
        seed: run.cfg.seed,
        ..run.cfg.phantom.clone()
    };
    let (vol, gt) = generate_phantom(&spec)?;
    save_volume(&vol, run.out.join("volume.json"))?;
    run.outputs.push("volume.json".into());
    run.write_json(&gt, "ground_truth.json")?;
    println!("{}", serde_json::json!({ "bone_length_mm": gt.bone_length_mm }));
    Ok(())
}

fn cmd_project(run: &mut Run, cmd: &Command) -> Res<()> {
    let Command::Project(a) = cmd else { unreachable!() };
    if a.projections.is_empty() && a.ground_truth.is_none() && a.view.is_none() {
        return Err(Failure::new(Kind::Input, "give --projection, --ground-truth or --view"));
    }
    run.inputs.push(a.volume.clone());
    let vol = load_volume(&a.volume)?;
    let cfg = run.cfg;
    let intr = cfg.protocol.intrinsics;
    let noise = |k: usize| {
        cfg.projector.photons.map(|photons| NoiseSpec {
            photons,
            seed: cfg.seed.wrapping_add(k as u64),
        })
    };

    let mut ps: Vec<ProjectionMatrix> = Vec::new();
    for p in &a.projections {
        ps.push(run.read_json(p)?);
    }
    if let Some(gt_path) = &a.ground_truth {
        let gt: GroundTruth = run.read_json(gt_path)?;
        let targets = station_targets(&gt, cfg.protocol.images_per_instance)?;
        let acq = sample_instance(&cfg.protocol, &targets, &mut instance_rng(cfg.seed, 0))?;
        let sampled = acq.projections()?;
        for (k, p) in sampled.iter().enumerate() {
            run.write_json(p, &format!("P_{}.json", ps.len() + k))?;
        }
        run.write_json(&acq, "acquisition.json")?;
        ps.extend(sampled);
    }
    for (k, p) in ps.iter().enumerate() {
        let img = cone_beam_drr(&vol, p, &intr, noise(k).as_ref())?;
        run.write_image(&img, &format!("xray_{k}.json"))?;
    }
    if let Some(view_path) = &a.view {
        let view: OrthoView = run.read_json(view_path)?;
        let img = orthographic_drr_with(&vol, &view, cfg.projector.interpolation)?;
        run.write_image(&img, "ortho.json")?;
    }
    Ok(())
}

fn instance_inputs(dir: &Path) -> (Vec<PathBuf>, Vec<PathBuf>) {
    let mut images = Vec::new();
    let mut ps = Vec::new();
    for k in 0.. {
        let (x, p) = (dir.join(format!("xray_{k}.json")), dir.join(format!("P_{k}.json")));
        if !x.exists() {
            break;
        }
        images.push(x);
        ps.push(p);
    }
    (images, ps)
}

fn cmd_stitch(run: &mut Run, cmd: &Command) -> Res<()> {
    let Command::Stitch(a) = cmd else { unreachable!() };
    let (image_paths, p_paths) = match &a.instance {
        Some(dir) => instance_inputs(dir),
        None => (a.images.clone(), a.projections.clone()),
    };
    if image_paths.is_empty() {
        return Err(Failure::new(Kind::Input, "no images to stitch"));
    }
    if image_paths.len() != p_paths.len() {
        return Err(Failure::new(
            Kind::Input,
            format!("{} images but {} projection matrices", image_paths.len(), p_paths.len()),
        ));
    }
    let mut pairs = Vec::with_capacity(image_paths.len());
    for (x, p) in image_paths.iter().zip(&p_paths) {
        let img = run.read_image(x)?;
        let pm: ProjectionMatrix = run.read_json(p)?;
        pairs.push((img, pm));
    }
    let opts = &run.cfg.stitch;
    // A dataset instance records the view it was stitched onto.
    let recorded = a.instance.as_ref().map(|d| d.join("acquisition.json")).filter(|p| p.exists());
    let view: Option<OrthoView> = match (&a.view, recorded) {
        (Some(v), _) => Some(run.read_json(v)?),
        (None, Some(r)) => Some(run.read_json::<AcquisitionRecord>(&r)?.view),
        (None, None) => None,
    };
    let res: StitchResult = match view {
        Some(view) => stitch_onto(&pairs, &view, opts)?,
        None => stitch(&pairs, opts)?,
    };
    run.write_image(&res.image, "input_recon.json")?;
    run.write_image(&res.coverage, "input_coverage.json")?;
    run.write_json(&res.view, "view.json")?;
    println!("{}", serde_json::json!({ "dims": res.view.dims, "max_imag_residual": res.max_imag_residual }));
    Ok(())
}

#[derive(Serialize)]
struct ImageScores {
    ssim: f64,
    ssim_loss: f64,
    mse: f64,
    psnr_db: PsnrValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    cosine: Option<f64>,
}

fn score(run: &mut Run, pred: &Path, gt: &Path, input: Option<&Path>) -> Res<ImageScores> {
    let m = &run.cfg.metrics;
    let (ssim_p, peak) = (m.ssim, m.psnr_peak);
    let x = run.read_image(pred)?;
    let y = run.read_image(gt)?;
    let loss = ssim_loss(&x, &y, &ssim_p)?;
    let cosine = match input {
        Some(i) => {
            let inp = run.read_image(i)?;
            Some(cosine_frequency_loss(&x, &y, &inp)?)
        }
        None => None,
    };
    Ok(ImageScores {
        ssim: 1.0 - loss,
        ssim_loss: loss,
        mse: mse(&x, &y)?,
        psnr_db: PsnrValue::of(&x, &y, peak)?,
        cosine,
    })
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn cmd_evaluate(run: &mut Run, cmd: &Command) -> Res<()> {
    let Command::Evaluate(a) = cmd else { unreachable!() };
    if let Some(csv) = &a.batch {
        let text = std::fs::read_to_string(csv).map_err(|e| Failure::new(Kind::Io, format!("{}: {e}", csv.display())))?;
        run.inputs.push(csv.clone());
        let base = csv.parent().unwrap_or(Path::new("."));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
        if header.get(..2) != Some(&["pred", "gt"][..]) || header.len() > 3 || (header.len() == 3 && header[2] != "input")
        {
            return Err(Failure::new(Kind::Schema, format!("{}: header must be pred,gt[,input]", csv.display())));
        }
        let mut out = String::from("pred,gt,ssim,ssim_loss,mse,psnr_db,cosine\n");
        for line in lines {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != header.len() {
                return Err(Failure::new(Kind::Schema, format!("{}: bad row `{line}`", csv.display())));
            }
            let s = score(run, &base.join(cols[0]), &base.join(cols[1]), cols.get(2).map(|c| base.join(c)).as_deref())?;
            let psnr = match s.psnr_db {
                PsnrValue::Db(v) => format!("{v}"),
                PsnrValue::Signal(_) => "identical".into(),
            };
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                cols[0],
                cols[1],
                s.ssim,
                s.ssim_loss,
                s.mse,
                psnr,
                csv_field(s.cosine)
            );
        }
        std::fs::write(run.out.join("metrics.csv"), &out)?;
        run.outputs.push("metrics.csv".into());
        print!("{out}");
        return Ok(());
    }

    let mut report = serde_json::to_value(score(
        run,
        a.pred.as_deref().expect("clap requires --pred"),
        a.gt.as_deref().expect("clap requires --gt"),
        a.input.as_deref(),
    )?)
    .expect("scores serialise");
    if let (Some(ph), Some(gh)) = (&a.pred_heatmap, &a.gt_heatmap) {
        let pred = run.read_image(ph)?;
        let target = run.read_image(gh)?;
        let loc = extract_peak(&target)?;
        report["bce"] = bce_loss(&pred, &target)?.into();
        report["rr"] = rr_loss(&pred, loc, run.cfg.metrics.rr_scale)?.into();
    }
    run.write_json(&report, "metrics.json")?;
    println!("{}", serde_json::to_string(&report).expect("report serialises"));
    Ok(())
}

/// `heatmap_femoral_head.json` -> `femoral_head`.
fn heatmap_name(p: &Path) -> Res<String> {
    p.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("heatmap_"))
        .map(str::to_string)
        .ok_or_else(|| Failure::new(Kind::Input, format!("{}: expected heatmap_<name>.json", p.display())))
}

fn cmd_measure(run: &mut Run, cmd: &Command) -> Res<()> {
    let Command::Measure(a) = cmd else { unreachable!() };
    let img = run.read_image(&a.image)?;
    let mut maps = Vec::new();
    let lms: LandmarkSet = if let Some(p) = &a.landmarks {
        run.read_json(p)?
    } else if !a.heatmaps.is_empty() {
        for p in &a.heatmaps {
            let name = heatmap_name(p)?;
            maps.push(Heatmap::new(name, run.read_image(p)?)?);
        }
        landmarks_from_heatmaps(&maps, run.cfg.landmarks.peak, run.cfg.landmarks.heatmap_sigma_px)?
    } else if a.detect {
        detect_markers(&img, run.cfg.landmarks.marker_radius_mm)?
    } else {
        return Err(Failure::new(Kind::Input, "give --landmarks, --heatmap or --detect"));
    };
    let length_mm = measure_length(&lms, img.spacing(), &a.from, &a.to)?;
    write_overlay(&img, &lms, &maps, run.out.join("overlay.png"))?;
    run.outputs.push("overlay.png".into());
    let report = serde_json::json!({
        "from": a.from,
        "to": a.to,
        "length_mm": length_mm,
        "landmarks": lms,
    });
    run.write_json(&report, "measurement.json")?;
    println!("{}", serde_json::to_string(&report).expect("report serialises"));
    Ok(())
}

fn cmd_dataset(run: &mut Run, _: &Command) -> Res<()> {
    let c = run.cfg;
    let cfg = DatasetConfig {
        seed: c.seed,
        n_instances: c.dataset.n_instances,
        phantom: c.phantom.clone(),
        protocol: c.protocol.clone(),
        stitch: c.stitch,
        photons: c.projector.photons,
        heatmap_sigma_px: c.landmarks.heatmap_sigma_px,
    };
    let manifest = generate_dataset(&cfg, run.out)?;
    run.outputs.push("manifest.json".into());
    let counts: BTreeMap<&str, usize> = [("instances", manifest.instances.len())].into();
    println!("{}", serde_json::to_string(&counts).expect("counts serialise"));
    Ok(())
}
