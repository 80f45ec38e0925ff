mod common;

use orthostitch::phantom::*;
use orthostitch::volume::{load_volume, save_volume, VoxelVolume};
use orthostitch::ErrorKind;
use proptest::prelude::*;

fn coarse(bone_length_mm: f64) -> PhantomSpec {
    PhantomSpec {
        bone_length_mm,
        voxel_spacing_mm: [4.0; 3],
        volume_dims: [48, 160, 40],
        supersampling: 1,
        ..PhantomSpec::default()
    }
}

#[test]
fn same_seed_gives_bit_identical_volumes() {
    let (a, ga) = generate_phantom(&PhantomSpec::compact(5)).unwrap();
    let (b, gb) = generate_phantom(&PhantomSpec::compact(5)).unwrap();
    assert_eq!(ga, gb);
    let bits = |v: &VoxelVolume| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let (_, gc) = generate_phantom(&PhantomSpec::compact(6)).unwrap();
    assert_ne!(ga, gc);
}

#[test]
fn zero_attenuation_gives_empty_volume() {
    let spec = PhantomSpec {
        cortical_attenuation: 0.0,
        trabecular_attenuation: 0.0,
        soft_tissue_attenuation: 0.0,
        marker_attenuation: 0.0,
        ..PhantomSpec::compact(1)
    };
    let (vol, _) = generate_phantom(&spec).unwrap();
    assert!(vol.data().iter().all(|&v| v == 0.0));
}

#[test]
fn head_to_tibia_distance_is_the_bone_length() {
    let (_, gt) = generate_phantom(&coarse(400.0)).unwrap();
    let d = (gt.landmark("femoral_head").unwrap() - gt.landmark("tibia").unwrap()).norm();
    assert!((d - 400.0).abs() < 1e-9, "{d}");
    assert!((gt.bone_length_mm - d).abs() < 1e-9);
}

#[test]
fn bone_outside_the_volume_is_an_error() {
    let spec = PhantomSpec { volume_dims: [48, 60, 40], ..coarse(400.0) };
    let err = generate_phantom(&spec).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Input);
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (vol, _) = generate_phantom(&PhantomSpec::compact(2)).unwrap();
    let path = dir.path().join("vol.json");
    save_volume(&vol, &path).unwrap();
    let back = load_volume(&path).unwrap();
    assert!(back.same_grid(&vol));
    assert_eq!(back.data(), vol.data());
}

#[test]
fn truncated_raw_file_is_a_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let vol = VoxelVolume::zeros([3, 3, 3], [1.0; 3], Default::default()).unwrap();
    let path = dir.path().join("vol.json");
    save_volume(&vol, &path).unwrap();
    let raw = dir.path().join("vol.raw");
    let bytes = std::fs::read(&raw).unwrap();
    std::fs::write(&raw, &bytes[..bytes.len() - 3]).unwrap();
    let err = load_volume(&path).unwrap_err();
    assert!(matches!(err, orthostitch::Error::SizeMismatch { .. }), "{err}");
    assert_eq!(err.kind(), ErrorKind::Schema);
}

#[test]
fn hand_written_two_cubed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tiny.json"),
        r#"{"dims": [2, 2, 2], "spacing_mm": [1.0, 2.0, 3.0], "origin_mm": [0.0, 0.0, 0.0],
            "dtype": "f32", "byte_order": "little", "data_file": "tiny.raw"}"#,
    )
    .unwrap();
    let raw: Vec<u8> = (0..8).flat_map(|v| (v as f32).to_le_bytes()).collect();
    std::fs::write(dir.path().join("tiny.raw"), raw).unwrap();
    let vol = load_volume(dir.path().join("tiny.json")).unwrap();
    assert_eq!(vol.spacing(), [1.0, 2.0, 3.0]);
    for k in 0..2 {
        for j in 0..2 {
            for i in 0..2 {
                assert_eq!(vol.get(i, j, k), (i + 2 * j + 4 * k) as f64);
            }
        }
    }
}

#[test]
fn unknown_dtype_and_non_finite_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let header = |dtype: &str| {
        format!(
            r#"{{"dims": [1, 1, 2], "spacing_mm": [1.0, 1.0, 1.0], "origin_mm": [0.0, 0.0, 0.0],
                "dtype": "{dtype}", "byte_order": "little", "data_file": "v.raw"}}"#
        )
    };
    std::fs::write(dir.path().join("v.json"), header("i16")).unwrap();
    std::fs::write(dir.path().join("v.raw"), [0u8; 8]).unwrap();
    assert_eq!(load_volume(dir.path().join("v.json")).unwrap_err().kind(), ErrorKind::Schema);

    std::fs::write(dir.path().join("v.json"), header("f32")).unwrap();
    let raw: Vec<u8> = [1.0f32, f32::NAN].iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(dir.path().join("v.raw"), raw).unwrap();
    assert_eq!(load_volume(dir.path().join("v.json")).unwrap_err().kind(), ErrorKind::Schema);
}

#[test]
fn landmarks_sit_inside_bone() {
    for seed in 0..6 {
        let spec = PhantomSpec { marker_radius_mm: 0.0, ..common::small_phantom(seed, 0.0) };
        let (vol, gt) = generate_phantom(&spec).unwrap();
        for name in LANDMARK_NAMES {
            let idx = vol.world_to_index(&gt.landmark(name).unwrap()).map(f64::round);
            let v = vol.get(idx.x as usize, idx.y as usize, idx.z as usize);
            assert!(v >= spec.trabecular_attenuation, "seed {seed}, {name}: {v}");
        }
    }
}

fn cortical_voxels(shaft_radius_mm: f64) -> usize {
    let spec = PhantomSpec { shaft_radius_mm, ..PhantomSpec::compact(3) };
    let (vol, _) = generate_phantom(&spec).unwrap();
    vol.data().iter().filter(|&&v| v > spec.trabecular_attenuation).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn thicker_shaft_never_loses_cortical_voxels(r in 2.0..3.4f64, dr in 0.05..0.6f64) {
        prop_assert!(cortical_voxels(r + dr) >= cortical_voxels(r));
    }
}
