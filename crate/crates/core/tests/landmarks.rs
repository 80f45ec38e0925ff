mod common;

use nalgebra::Vector3;
use orthostitch::error::Error;
use orthostitch::geometry::{canonical_rotation, rot_x, OrthoView};
use orthostitch::image::Image2D;
use orthostitch::landmarks::*;
use orthostitch::metrics::rr_loss;
use orthostitch::phantom::{generate_phantom, LANDMARK_NAMES};
use orthostitch::projector::orthographic_drr_view;
use proptest::prelude::*;
use rand::Rng;

fn set(points: &[(&str, [f64; 2])]) -> LandmarkSet {
    points.iter().map(|(n, p)| (n.to_string(), *p)).collect()
}

#[test]
fn heatmap_closed_forms() {
    let m = render_heatmap("knee", [20.0, 14.0], [48, 40], 1.0, 4.0).unwrap();
    assert_eq!(m.image().get(20, 14), 1.0);
    assert!((m.image().get(24, 14) - (-0.5f64).exp()).abs() < 1e-12);
    assert!((m.image().get(20, 10) - (-0.5f64).exp()).abs() < 1e-12);
    assert!(m.image().data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn heatmap_mass_is_two_pi_sigma_squared() {
    for sigma in [2.0, 3.5, 6.0] {
        let m = render_heatmap("tibia", [64.3, 60.8], [128, 128], 1.0, sigma).unwrap();
        let want = 2.0 * std::f64::consts::PI * sigma * sigma;
        let got = m.image().sum();
        assert!((got / want - 1.0).abs() < 0.01, "sigma {sigma}: {got} vs {want}");
    }
}

#[test]
fn heatmap_rejects_bad_arguments() {
    assert!(render_heatmap("a", [10.0, 1.0], [10, 10], 1.0, 3.0).is_err());
    assert!(render_heatmap("a", [-0.5, 1.0], [10, 10], 1.0, 3.0).is_err());
    assert!(render_heatmap("a", [1.0, 1.0], [10, 10], 1.0, 0.0).is_err());
}

#[test]
fn render_then_extract_round_trips() {
    let mut rng = common::rng(1);
    for _ in 0..50 {
        let loc = [rng.random_range(0..40), rng.random_range(0..30)];
        let m = render_heatmap("h", [loc[0] as f64, loc[1] as f64], [40, 30], 1.0, 3.0).unwrap();
        assert_eq!(extract_peak(m.image()).unwrap(), loc);
        let sub = extract_peak_subpixel(m.image()).unwrap();
        assert!((sub[0] - loc[0] as f64).abs() < 0.5 && (sub[1] - loc[1] as f64).abs() < 0.5);
    }
}

#[test]
fn ties_go_to_the_lowest_row_major_index() {
    let mut img = Image2D::zeros([6, 5], 1.0).unwrap();
    img.set(4, 1, 1.0);
    img.set(1, 3, 1.0);
    assert_eq!(extract_peak(&img).unwrap(), [4, 1]);
    img.set(0, 1, 1.0);
    assert_eq!(extract_peak(&img).unwrap(), [0, 1]);
}

#[test]
fn flat_heatmap_is_degenerate() {
    let img = Image2D::constant([5, 5], 1.0, 0.3).unwrap();
    assert!(matches!(extract_peak(&img), Err(Error::DegenerateHeatmap)));
}

#[test]
fn noisy_peaks_stay_within_one_pixel() {
    let dims = [48, 48];
    for sigma in [3.0, 4.5, 6.0] {
        let (mut worst, mut worst_argmax, mut worst_centroid) = (0.0f64, 0.0f64, 0.0f64);
        for seed in 0..1000 {
            let mut rng = common::rng(seed);
            let loc = [rng.random_range(12.0..36.0), rng.random_range(12.0..36.0)];
            let clean = render_heatmap("h", loc, dims, 1.0, sigma).unwrap();
            let noisy = Image2D::new(
                dims,
                1.0,
                clean.image().data().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect(),
            )
            .unwrap();
            let dist = |p: [f64; 2]| (p[0] - loc[0]).hypot(p[1] - loc[1]);
            worst = worst.max(dist(extract_peak_matched(&noisy, sigma).unwrap()));
            worst_argmax = worst_argmax.max(dist(extract_peak(&noisy).unwrap().map(|v| v as f64)));
            worst_centroid = worst_centroid.max(dist(extract_peak_subpixel(&noisy).unwrap()));
        }
        eprintln!("sigma {sigma}: worst error matched {worst:.3} px, argmax {worst_argmax:.3} px, centroid {worst_centroid:.3} px");
        assert!(worst <= 1.0, "sigma {sigma}: matched peak off by {worst} px");
    }
}

#[test]
fn matched_peak_is_exact_on_clean_heatmaps() {
    let m = render_heatmap("h", [20.3, 17.8], [40, 36], 1.0, 4.0).unwrap();
    let p = extract_peak_matched(m.image(), 4.0).unwrap();
    assert!((p[0] - 20.3).abs() < 1e-6 && (p[1] - 17.8).abs() < 1e-6, "{p:?}");
    let maps = vec![m, render_heatmap("k", [5.0, 30.0], [40, 36], 1.0, 4.0).unwrap()];
    for r in [PeakRefinement::Argmax, PeakRefinement::Centroid, PeakRefinement::Matched] {
        let lms = landmarks_from_heatmaps(&maps, r, 4.0).unwrap();
        let k = lms.get("k").unwrap();
        assert!((k[0] - 5.0).abs() < 1e-6 && (k[1] - 30.0).abs() < 1e-6, "{r:?}: {k:?}");
    }
}

#[test]
fn landmark_errors() {
    let gt = set(&[("femoral_head", [10.0, 10.0]), ("tibia", [40.0, 90.0])]);
    let same = landmark_error(&gt, &gt).unwrap();
    assert!(same.per_landmark_px.values().all(|&e| e == 0.0) && same.mean_px == 0.0);
    let off = set(&[("femoral_head", [13.0, 14.0]), ("tibia", [40.0, 90.0])]);
    let e = landmark_error(&off, &gt).unwrap();
    assert_eq!(e.per_landmark_px["femoral_head"], 5.0);
    assert_eq!(e.mean_px, 2.5);
    let other = set(&[("femoral_head", [13.0, 14.0]), ("knee", [40.0, 90.0])]);
    assert!(matches!(landmark_error(&other, &gt), Err(Error::NameMismatch(_))));
}

#[test]
fn landmark_errors_match_direct_distances() {
    let mut rng = common::rng(2);
    for _ in 0..100 {
        let mut pts = || -> Vec<[f64; 2]> { (0..4).map(|_| [rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)]).collect() };
        let (a, b) = (pts(), pts());
        let mk = |v: &[[f64; 2]]| LANDMARK_NAMES.iter().zip(v).map(|(n, p)| (n.to_string(), *p)).collect::<LandmarkSet>();
        let e = landmark_error(&mk(&a), &mk(&b)).unwrap();
        let direct: Vec<f64> = a.iter().zip(&b).map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()).collect();
        for (name, d) in LANDMARK_NAMES.iter().zip(&direct) {
            assert!((e.per_landmark_px[*name] - d).abs() < 1e-12);
        }
        assert!((e.mean_px - direct.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }
}

#[test]
fn length_closed_forms() {
    let lms = set(&[("femoral_head", [20.0, 10.0]), ("tibia", [20.0, 110.0]), ("knee", [20.0, 10.0])]);
    assert_eq!(measure_length(&lms, 1.0, "femoral_head", "tibia").unwrap(), 100.0);
    assert_eq!(measure_length(&lms, 0.5, "femoral_head", "tibia").unwrap(), 50.0);
    assert_eq!(measure_length(&lms, 1.0, "femoral_head", "knee").unwrap(), 0.0);
    assert!(matches!(measure_length(&lms, 1.0, "femoral_head", "greater_trochanter"), Err(Error::MissingLandmark(_))));
    assert!(measure_length(&lms, 0.0, "femoral_head", "tibia").is_err());
}

/// View looking down the world -z axis with image rows running from the
/// head (+y) toward the foot, tilted by `theta` degrees about x.
fn tilted_view(center: Vector3<f64>, theta: f64) -> OrthoView {
    OrthoView::new(canonical_rotation() * rot_x(theta), center, [112, 256], 1.0).unwrap()
}

#[test]
fn phantom_length_shrinks_with_the_tilt_cosine() {
    let spec = common::small_phantom(5, 250.0);
    let (vol, gt) = generate_phantom(&spec).unwrap();
    let axis = gt.bone_axis().unwrap();
    let center = Vector3::new(0.0, 0.0, 250.0);
    for theta in [0.0, 20.0, 40.0] {
        let view = tilted_view(center, theta);
        let cos = (1.0 - axis.dot(&view.axis(2)).powi(2)).sqrt();
        let want = gt.bone_length_mm * cos;

        let projected = project_landmarks(&gt, &view);
        let exact = measure_length(&projected, view.spacing_mm, "femoral_head", "tibia").unwrap();
        assert!((exact - want).abs() < 1e-9, "theta {theta}: {exact} vs {want}");

        let img = orthographic_drr_view(&vol, &view).unwrap();
        let found = detect_markers(&img, spec.marker_radius_mm).unwrap();
        let got = measure_length(&found, img.spacing(), "femoral_head", "tibia").unwrap();
        assert!((got - want).abs() <= 2.0, "theta {theta}: measured {got}, expected {want}");
    }
}

#[test]
fn fronto_parallel_length_is_within_one_voxel() {
    for seed in [1, 2, 3] {
        let spec = common::small_phantom(seed, 250.0);
        let (vol, gt) = generate_phantom(&spec).unwrap();
        let view = tilted_view(Vector3::new(0.0, 0.0, 250.0), 0.0);
        let img = orthographic_drr_view(&vol, &view).unwrap();
        let found = detect_markers(&img, spec.marker_radius_mm).unwrap();
        let got = measure_length(&found, img.spacing(), "femoral_head", "tibia").unwrap();
        // The head-to-tibia vector is not exactly in the plane: landmark
        // jitter adds a small depth component.
        let d = Vector3::from(gt.landmarks_3d["femoral_head"]) - Vector3::from(gt.landmarks_3d["tibia"]);
        let in_plane = (d - view.axis(2) * d.dot(&view.axis(2))).norm();
        assert!((got - in_plane).abs() <= spec.voxel_spacing_mm[0], "seed {seed}: {got} vs {in_plane}");
        assert!((got - gt.bone_length_mm).abs() <= spec.voxel_spacing_mm[0], "seed {seed}: {got} vs {}", gt.bone_length_mm);
    }
}

#[test]
fn rr_is_smallest_for_the_heatmap_centred_on_the_target() {
    let dims = [32, 32];
    let target = [13usize, 20usize];
    let own = render_heatmap("h", [13.0, 20.0], dims, 1.0, 3.0).unwrap();
    let best = rr_loss(own.image(), target, DEFAULT_HEATMAP_SIGMA_PX).unwrap();
    for v in 0..32 {
        for u in 0..32 {
            if [u, v] == target {
                continue;
            }
            let other = render_heatmap("h", [u as f64, v as f64], dims, 1.0, 3.0).unwrap();
            let r = rr_loss(other.image(), target, DEFAULT_HEATMAP_SIGMA_PX).unwrap();
            assert!(best < r, "({u}, {v}): {r} <= {best}");
        }
    }
}

proptest! {
    #[test]
    fn landmark_json_round_trips(pts in prop::collection::vec((0.0f64..1000.0, 0.0f64..1000.0), 4)) {
        let lms: LandmarkSet = LANDMARK_NAMES.iter().zip(&pts).map(|(n, p)| (n.to_string(), [p.0, p.1])).collect();
        let text = serde_json::to_string(&lms).unwrap();
        let back: LandmarkSet = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, lms);
    }
}
