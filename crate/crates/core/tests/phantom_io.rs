use std::collections::BTreeSet;

use proptest::prelude::*;
use puir::io::{load_manifest, read_volume, write_volume, Split, MANIFEST_FILE};
use puir::phantom::{apply_rotation, generate_dataset, AnatomyConfig, GenConfig, RotationTransform};
use puir::{PuirError, Volume};

fn small(train: usize, test: usize) -> GenConfig {
    GenConfig {
        anatomy: AnatomyConfig::for_shape([16, 16, 16]),
        train_individuals: train,
        test_individuals: test,
        seed: 12,
        ..Default::default()
    }
}

#[test]
fn corpus_has_requested_counts_and_disjoint_splits() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(5, 3), dir.path(), false).unwrap();
    assert_eq!(m.individuals.len(), 8);
    let train: BTreeSet<_> = m.individuals.iter().filter(|i| i.split == Split::Train).map(|i| &i.id).collect();
    let test: BTreeSet<_> = m.individuals.iter().filter(|i| i.split == Split::Test).map(|i| &i.id).collect();
    assert_eq!((train.len(), test.len()), (5, 3));
    assert!(train.is_disjoint(&test));
    assert_eq!(m.modality_ids(), vec!["t1", "t2", "pet"]);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&small(2, 1), a.path(), false).unwrap();
    generate_dataset(&small(2, 1), b.path(), false).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 3);
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn existing_corpus_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(1, 1), dir.path(), false).unwrap();
    let err = generate_dataset(&small(1, 1), dir.path(), false).unwrap_err();
    assert!(matches!(err, PuirError::WouldOverwrite(_)));
    assert!(generate_dataset(&small(1, 1), dir.path(), true).is_ok());
}

#[test]
fn manifest_with_missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(1, 1), dir.path(), false).unwrap();
    let victim = &m.individuals[0].files["t2"];
    std::fs::remove_file(dir.path().join(victim)).unwrap();
    let err = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap_err();
    assert!(err.to_string().contains(victim.as_str()), "{err}");
}

#[test]
fn manifest_schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(1, 1), dir.path(), false).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["format_version"] = serde_json::json!(99);
    std::fs::write(&path, v.to_string()).unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(err.to_string().contains("format_version"), "{err}");
}

#[test]
fn volume_files_round_trip_and_check_length() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::from_fn([4, 4, 4], |d, h, w| (d * 16 + h * 4 + w) as f32 * 0.37 - 3.0);
    let p = dir.path().join("v.f32");
    write_volume(&v, &p).unwrap();
    assert_eq!(read_volume(&p, [4, 4, 4]).unwrap(), v);
    assert!(read_volume(&p, [4, 4, 5]).is_err());
}

#[test]
fn rotation_composition_table_and_inverses() {
    for a in RotationTransform::ALL {
        assert_eq!(a.then(a.inverse()), RotationTransform::IDENTITY);
        for b in RotationTransform::ALL {
            let expected = RotationTransform::new((a.quarter_turns() + b.quarter_turns()) % 4).unwrap();
            assert_eq!(a.then(b), expected);
        }
    }
    let v = puir::Grid::new([1, 2, 2], vec![1, 2, 3, 4]).unwrap();
    let r = apply_rotation(&v, RotationTransform::new(1).unwrap()).unwrap();
    assert_eq!(r.data(), &[2, 4, 1, 3]);
}

proptest! {
    #[test]
    fn rotations_compose_on_volumes(data in proptest::collection::vec(-100i32..100, 2 * 3 * 3), a in 0u8..4, b in 0u8..4) {
        let v = puir::Grid::new([2, 3, 3], data).unwrap();
        let (ra, rb) = (RotationTransform::new(a).unwrap(), RotationTransform::new(b).unwrap());
        let twice = apply_rotation(&apply_rotation(&v, ra).unwrap(), rb).unwrap();
        prop_assert_eq!(twice.clone(), apply_rotation(&v, ra.then(rb)).unwrap());
        prop_assert_eq!(apply_rotation(&twice, ra.then(rb).inverse()).unwrap(), v);
    }
}
