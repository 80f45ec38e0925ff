//! End-to-end acceptance suite. Run with `cargo test --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{refined_peak, small_intrinsics, small_phantom, ParallaxRig, RandomCamera};
use nalgebra::Matrix3;
use orthostitch::dataset::{generate_dataset, DatasetConfig};
use orthostitch::geometry::{backproject_pixel, pseudo_inverse, OrthoView};
use orthostitch::image::{load_image, Image2D};
use orthostitch::landmarks::{detect_markers, measure_length};
use orthostitch::metrics::*;
use orthostitch::phantom::{generate_phantom, GroundTruth, PhantomSpec};
use orthostitch::projector::{orthographic_drr_with, Interpolation};
use orthostitch::protocol::{instance_rng, sample_instance, station_targets, AcquisitionProtocol};
use orthostitch::spectral::{fourier_project, FourierOptions};
use orthostitch::stitch::{stitch, StitchOptions};
use orthostitch_oracles as oracle;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn relative_rmse(a: &Image2D, reference: &Image2D) -> f64 {
    common::relative_rmse(a.data(), reference.data())
}

fn fourier_slice() -> Outcome {
    let mut rng = common::rng(2024);
    let mut worst = (0.0f64, String::new());
    let mut slowest = 0.0f64;
    let mut cases = 0;
    for seed in 0..3 {
        let (vol, _) = generate_phantom(&PhantomSpec::compact(seed)).unwrap();
        let c = vol.voxel_center(32, 32, 32);
        let mut rotations = vec![Matrix3::identity()];
        rotations.extend((0..4).map(|_| common::random_rotation(&mut rng)));
        for (k, r) in rotations.iter().enumerate() {
            let view = OrthoView::new(*r, c, [64, 64], 1.0).unwrap();
            let t = Instant::now();
            let f = fourier_project(&vol, &view, &FourierOptions::default()).unwrap();
            slowest = slowest.max(t.elapsed().as_secs_f64());
            let direct = orthographic_drr_with(&vol, &view, Interpolation::CubicBspline).unwrap();
            let e = relative_rmse(&f.image, &direct);
            if e > worst.0 {
                worst = (e, format!("phantom {seed}, orientation {k}"));
            }
            cases += 1;
        }
    }
    Outcome {
        pass: worst.0 < 0.03 && slowest < 10.0,
        detail: format!(
            "{cases} cases, worst relative RMSE {:.2}% ({}), slowest {:.2} s",
            100.0 * worst.0,
            worst.1,
            slowest
        ),
    }
}

fn backprojection_closure() -> Outcome {
    let mut rng = common::rng(77);
    let (mut worst_px, mut worst_inv) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let cam = RandomCamera::draw(&mut rng);
        let pixel = cam.random_pixel(&mut rng);
        let d = rng.random_range(0.01..=1.0);
        let seg = backproject_pixel(&cam.projection, pixel, d).unwrap();
        for k in 0..=10 {
            let t = seg.t_near + (seg.t_far - seg.t_near) * k as f64 / 10.0;
            let uv = cam.projection.project(&seg.point_at(t)).unwrap();
            worst_px = worst_px.max((uv[0] - pixel[0]).hypot(uv[1] - pixel[1]));
        }
        let pinv = pseudo_inverse(&cam.projection).unwrap();
        worst_inv = worst_inv.max((cam.projection.matrix() * pinv - Matrix3::identity()).norm());
    }
    Outcome {
        pass: worst_px < 1e-6 && worst_inv < 1e-9,
        detail: format!("1000 cameras, worst reprojection {worst_px:.1e} px, worst |PP+ - I|_F {worst_inv:.1e}"),
    }
}

fn parallax_contrast() -> Outcome {
    let rig = ParallaxRig::new(192);
    let images = rig.images(2.0);
    let analytic = oracle::analytic_parallax(
        &oracle::TwoPlaneScene {
            z1: ParallaxRig::DEPTHS_MM[0],
            z2: ParallaxRig::DEPTHS_MM[1],
            translation_mm: ParallaxRig::BASELINE_MM,
        },
        ParallaxRig::FOCAL_PX,
    )
    .unwrap();

    let near: Vec<[f64; 2]> = rig.cameras.iter().map(|p| p.project(&rig.features[0]).unwrap()).collect();
    let far: Vec<[f64; 2]> = rig.cameras.iter().map(|p| p.project(&rig.features[1]).unwrap()).collect();
    let (tx, ty) = (near[1][0] - near[0][0], near[1][1] - near[0][1]);
    let [w, h] = images[0].0.dims();
    // Warp B alone so the only peaks are B's features in A's frame.
    let zeros = vec![0.0; w * h];
    let warped = oracle::homography_stitch(&zeros, images[1].0.data(), w, h, [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
        .unwrap();
    let warped = Image2D::new([w, h], 1.0, warped).unwrap();
    let ghost = refined_peak(&warped, [far[1][0] - tx, far[1][1] - ty], 4.0);
    let homography = (ghost[0] - far[0][0]).hypot(ghost[1] - far[0][1]);

    let res = stitch(&images, &StitchOptions { grid_spacing_mm: 1.0, ..Default::default() }).unwrap();
    let truth: Vec<[f64; 2]> = rig.features.iter().map(|f| res.view.world_to_pixel(f)).collect();
    let found: Vec<[f64; 2]> = truth.iter().map(|t| refined_peak(&res.image, *t, 8.0)).collect();
    let dx = (found[0][0] - found[1][0]) - (truth[0][0] - truth[1][0]);
    let dy = (found[0][1] - found[1][1]) - (truth[0][1] - truth[1][1]);
    let pipeline = dx.hypot(dy);
    Outcome {
        pass: (analytic - 12.5).abs() < 1e-9 && (homography - 12.5).abs() <= 1.0 && pipeline < 1.0,
        detail: format!("analytic {analytic:.3} px, homography {homography:.3} px, pipeline {pipeline:.3} px"),
    }
}

fn random_image(dims: [usize; 2], rng: &mut impl Rng) -> Image2D {
    Image2D::new(dims, 1.0, (0..dims[0] * dims[1]).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn metrics_parity() -> Outcome {
    let mut rng = common::rng(99);
    let p = SsimParams::default();
    let refp = oracle::SsimRef { window: p.window, sigma: p.sigma, k1: p.k1, k2: p.k2, data_range: p.data_range };
    // (name, worst deviation, tolerance)
    let mut dev = [("ssim", 0.0f64, 1e-6), ("psnr", 0.0, 1e-9), ("bce", 0.0, 1e-9), ("rr", 0.0, 1e-9), ("cosine", 0.0, 1e-9), ("gan", 0.0, 1e-12)];
    for _ in 0..100 {
        let (x, y) = (random_image([16, 16], &mut rng), random_image([16, 16], &mut rng));
        let i = random_image([16, 16], &mut rng);
        let mut bump = |k: usize, v: f64| dev[k].1 = dev[k].1.max(v);
        bump(0, (ssim_loss(&x, &y, &p).unwrap() - oracle::ssim_loss_reference(x.data(), y.data(), 16, 16, refp)).abs());
        bump(1, (psnr(&x, &y, Some(1.0)).unwrap() - oracle::psnr_reference(x.data(), y.data(), 1.0)).abs());
        bump(2, (bce_loss(&x, &y).unwrap() - oracle::bce_reference(x.data(), y.data(), BCE_EPSILON)).abs());
        let (u, v) = (rng.random_range(0..16), rng.random_range(0..16));
        bump(3, (rr_loss(&x, [u, v], 6.0).unwrap() - oracle::neg_log_softmax(x.data(), 6.0, u + 16 * v)).abs());
        bump(4, (cosine_frequency_loss(&x, &y, &i).unwrap() - oracle::cosine_reference(x.data(), y.data(), i.data(), 16, 16)).abs());
        let n = rng.random_range(1..9);
        let cx: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let cy: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let (d, g) = gan_losses(&ConfidenceBatch::new(cx.clone(), cy.clone()).unwrap());
        let (rd, rg) = oracle::gan_reference(&cx, &cy);
        bump(5, (d - rd).abs().max((g - rg).abs()));
    }
    let x = random_image([16, 16], &mut rng);
    let half = Image2D::constant([8, 8], 1.0, 0.5).unwrap();
    let flat = Image2D::constant([8, 8], 1.0, 0.2).unwrap();
    let (d, g) = gan_losses(&ConfidenceBatch::new(vec![0.5; 3], vec![0.5; 3]).unwrap());
    let closed = [
        ssim_loss(&x, &x, &p).unwrap(),
        bce_loss(&half, &half).unwrap() - std::f64::consts::LN_2,
        rr_loss(&flat, [3, 4], 6.0).unwrap() - 64f64.ln(),
        d - 2.0,
        g - 2.0,
    ];
    let worst_closed = closed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pass = dev.iter().all(|(_, v, tol)| *v <= *tol) && worst_closed <= 1e-9;
    let mut detail: Vec<String> = dev.iter().map(|(n, v, _)| format!("{n} {v:.1e}")).collect();
    detail.push(format!("closed forms {worst_closed:.1e}"));
    Outcome { pass, detail: format!("100 instances each; worst deviations: {}", detail.join(", ")) }
}

fn measurement_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_phantom(3, 250.0);
    let cfg = DatasetConfig {
        seed: 3,
        phantom: spec.clone(),
        protocol: AcquisitionProtocol::deterministic(small_intrinsics()),
        ..Default::default()
    };
    let m = generate_dataset(&cfg, dir.path()).unwrap();
    let inst = &m.instances[0];
    let gt: GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(&inst.ground_truth)).unwrap()).unwrap();
    let voxel = spec.voxel_spacing_mm[0];
    let mut errors = Vec::new();
    for file in [&inst.gt_ortho, &inst.input_recon] {
        let img = load_image(dir.path().join(file)).unwrap();
        let found = detect_markers(&img, spec.marker_radius_mm).unwrap();
        let len = measure_length(&found, img.spacing(), "femoral_head", "tibia").unwrap();
        errors.push((len, (len - gt.bone_length_mm).abs()));
    }
    Outcome {
        pass: errors[0].1 <= voxel && errors[1].1 <= 3.0 * voxel,
        detail: format!(
            "L = {:.2} mm; ground-truth image {:.2} mm (error {:.2}), stitched image {:.2} mm (error {:.2})",
            gt.bone_length_mm, errors[0].0, errors[0].1, errors[1].0, errors[1].1
        ),
    }
}

fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn dataset_reproducibility() -> Outcome {
    let cfg = DatasetConfig {
        seed: 21,
        n_instances: 2,
        phantom: small_phantom(21, 250.0),
        protocol: AcquisitionProtocol { intrinsics: small_intrinsics(), ..Default::default() },
        photons: Some(5e4),
        ..Default::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&cfg, a.path()).unwrap();
    generate_dataset(&cfg, b.path()).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let identical = sa == sb;

    let proto = AcquisitionProtocol::default();
    let gt = GroundTruth {
        landmarks_3d: [("femoral_head", [0.0, 200.0, 250.0]), ("tibia", [0.0, -220.0, 250.0])]
            .into_iter()
            .map(|(n, p)| (n.to_string(), p))
            .collect(),
        bone_length_mm: 420.0,
    };
    let targets = station_targets(&gt, 3).unwrap();
    let mut violations = 0;
    let mut extremes = [0.0f64; 4];
    for i in 0..10_000u64 {
        let inst = sample_instance(&proto, &targets, &mut instance_rng(5, i)).unwrap();
        let mut check = |k: usize, v: f64, limit: f64| {
            extremes[k] = extremes[k].max(v.abs());
            if v.abs() > limit {
                violations += 1;
            }
        };
        check(1, inst.lao_rao_deg, 21.0);
        check(2, inst.cran_caud_deg, 6.0);
        for im in &inst.images {
            im.jitter_mm.iter().for_each(|&j| check(0, j, 20.0));
            im.offset_deg.iter().for_each(|&o| check(3, o, 6.0));
        }
    }
    Outcome {
        pass: identical && violations == 0,
        detail: format!(
            "{} files regenerated {}; 10^4 samples, {violations} violations, max |jitter| {:.2} mm, |lao/rao| {:.2}, |cran/caud| {:.2}, |offset| {:.2} deg",
            sa.len(),
            if identical { "bit-identical" } else { "with differences" },
            extremes[0],
            extremes[1],
            extremes[2],
            extremes[3]
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("Fourier slice theorem consistency", fourier_slice),
        ("Backprojection closure", backprojection_closure),
        ("Parallax contrast", parallax_contrast),
        ("Metrics oracle parity", metrics_parity),
        ("Orthographic measurement fidelity", measurement_fidelity),
        ("Dataset reproducibility", dataset_reproducibility),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {} [{:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of 6 criteria passed", 6 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
