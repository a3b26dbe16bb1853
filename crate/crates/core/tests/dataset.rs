use std::path::Path;

use tryon::semantics::{
    build_manifest, build_sample, labels, load_records, write_fixture_split, BuildOptions,
    FixtureSpec, SamplePaths, Split,
};
use tryon::Error;

fn fixture(dir: &Path, height: usize, width: usize) {
    let spec = FixtureSpec {
        height,
        width,
        subjects: 4,
        seed: 11,
    };
    write_fixture_split(dir, Split::Train, &spec).unwrap();
}

#[test]
fn four_subjects_two_poses() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 512, 384);
    let built = build_manifest(dir.path(), Split::Train, &BuildOptions::default()).unwrap();
    assert!(built.errors.is_empty(), "{:?}", built.errors);
    assert!(built.warnings.is_empty(), "{:?}", built.warnings);
    let m = &built.manifest;
    assert_eq!(m.records.len(), 8);
    assert_eq!((m.count(1), m.count(2)), (4, 4));
    let order: Vec<_> = m
        .records
        .iter()
        .map(|r| (r.subject_id.as_str(), r.pose_id))
        .collect();
    assert_eq!(order[0], ("subject000", 1));
    assert_eq!(order[1], ("subject000", 2));
    assert_eq!(
        m.records[0].unpaired_garment,
        "train/subject001/pose1/garment.png"
    );
    assert_eq!(
        m.records[6].unpaired_garment,
        "train/subject000/pose1/garment.png"
    );

    let records = load_records(dir.path(), m, &BuildOptions::default()).unwrap();
    for r in &records {
        assert_eq!(r.person_image.hw(), (512, 384));
        r.validate(&BuildOptions::default()).unwrap();
        assert!(r.parse.count_of(&[labels::UPPER_GARMENT]) > 0);
    }
}

#[test]
fn manifest_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 64, 48);
    let opts = BuildOptions {
        height: 64,
        width: 48,
        resize: false,
    };
    let a = build_manifest(dir.path(), Split::Train, &opts)
        .unwrap()
        .manifest
        .to_json();
    let b = build_manifest(dir.path(), Split::Train, &opts)
        .unwrap()
        .manifest
        .to_json();
    assert_eq!(a.as_bytes(), b.as_bytes());
}

#[test]
fn empty_root() {
    let dir = tempfile::tempdir().unwrap();
    let built = build_manifest(dir.path(), Split::Test, &BuildOptions::default()).unwrap();
    assert!(built.manifest.records.is_empty());
    assert_eq!((built.manifest.count(1), built.manifest.count(2)), (0, 0));
}

#[test]
fn corrupt_png_is_reported_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 64, 48);
    let bad = dir.path().join("train/subject002/pose2/densepose.png");
    std::fs::write(&bad, b"\x89PNG\r\n\x1a\nnot really").unwrap();
    let opts = BuildOptions {
        height: 64,
        width: 48,
        resize: false,
    };
    let built = build_manifest(dir.path(), Split::Train, &opts).unwrap();
    assert_eq!(built.manifest.records.len(), 7);
    assert_eq!(built.errors.len(), 1);
    assert_eq!(built.errors[0].path, "train/subject002/pose2/densepose.png");
    assert!(built.errors[0].message.contains("dense_pose"));
}

#[test]
fn orphan_pose_excluded_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 64, 48);
    std::fs::remove_dir_all(dir.path().join("train/subject001/pose2")).unwrap();
    let opts = BuildOptions {
        height: 64,
        width: 48,
        resize: false,
    };
    let built = build_manifest(dir.path(), Split::Train, &opts).unwrap();
    assert_eq!(built.manifest.records.len(), 6);
    assert_eq!(built.warnings.len(), 1);
    assert!(built.warnings[0].contains("subject001"));
}

#[test]
fn missing_mask_names_asset() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 64, 48);
    let pose = dir.path().join("train/subject000/pose1");
    std::fs::remove_file(pose.join("garment_mask.png")).unwrap();
    let err = build_sample(
        &SamplePaths::in_dir(&pose),
        1,
        "subject000",
        &BuildOptions::default(),
    )
    .unwrap_err();
    match err {
        Error::Asset { asset, .. } => assert_eq!(asset, "garment_mask"),
        other => panic!("{other}"),
    }
}

#[test]
fn double_resolution_sources_are_resized() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 1024, 768);
    let pose = dir.path().join("train/subject003/pose2");
    let r = build_sample(
        &SamplePaths::in_dir(&pose),
        2,
        "subject003",
        &BuildOptions::default(),
    )
    .unwrap();
    assert_eq!(r.person_image.hw(), (512, 384));
    assert_eq!(r.agnostic.hw(), (512, 384));
    assert_eq!(r.garment_mask.hw(), (512, 384));

    let strict = BuildOptions {
        resize: false,
        ..BuildOptions::default()
    };
    assert!(matches!(
        build_sample(&SamplePaths::in_dir(&pose), 2, "subject003", &strict),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn invalid_caption_is_a_semantic_error() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 64, 48);
    let pose = dir.path().join("train/subject000/pose1");
    std::fs::write(pose.join("caption.txt"), "a lovely shirt\n").unwrap();
    let opts = BuildOptions {
        height: 64,
        width: 48,
        resize: false,
    };
    assert!(matches!(
        build_sample(&SamplePaths::in_dir(&pose), 1, "subject000", &opts),
        Err(Error::CaptionParse { .. })
    ));
}
