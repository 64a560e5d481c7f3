mod common;

use std::fs;

use sdped_core::io::{
    load_dataset, load_partition, load_prediction, parse_partition, save_label, save_prediction, save_rgb,
    write_partition, PartitionManifest,
};
use sdped_core::maps::{EdgeMap, SoftEdgeMap};
use sdped_core::model::{deserialize, load_model, save_model, serialize};
use sdped_core::{Error, ErrorClass, ModelConfig, SdpedModel};

fn micro(seed: u64) -> SdpedModel<f32> {
    SdpedModel::build(ModelConfig::micro(), seed).unwrap()
}

#[test]
fn saved_model_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sdpd");
    let model = micro(5);
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    let scene = common::synthetic_scene(&mut common::rng(1), 12, 10);
    assert_eq!(loaded.forward(&scene.image).unwrap(), model.forward(&scene.image).unwrap());
    assert_eq!(serialize(&loaded), fs::read(&path).unwrap());
}

#[test]
fn corrupt_model_files_are_format_errors() {
    let bytes = serialize(&micro(0));
    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("truncated", bytes[..bytes.len() - 3].to_vec()),
        ("trailing", [bytes.clone(), vec![0]].concat()),
        ("magic", [b"XXXX".to_vec(), bytes[4..].to_vec()].concat()),
        ("version", [bytes[..4].to_vec(), 9u16.to_le_bytes().to_vec(), bytes[6..].to_vec()].concat()),
        ("empty", Vec::new()),
    ];
    for (what, b) in cases {
        match deserialize(&b) {
            Err(e @ Error::Format(_)) => assert_eq!(e.class(), ErrorClass::Config, "{what}"),
            other => panic!("{what}: expected a format error, got {other:?}"),
        }
    }
}

#[test]
fn mismatched_config_block_is_rejected() {
    let mut bytes = serialize(&micro(0));
    // First config field is n_csdb; claim one more block than stored.
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    bytes[6..10].copy_from_slice(&(n + 1).to_le_bytes());
    assert!(matches!(deserialize(&bytes), Err(Error::Format(_))));
}

#[test]
fn missing_model_file_is_a_data_error() {
    let e = load_model(std::path::Path::new("/nonexistent/model.sdpd")).unwrap_err();
    assert_eq!(e.class(), ErrorClass::Data);
}

#[test]
fn prediction_png_round_trip_is_within_half_a_level() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.png");
    let data: Vec<f32> = (0..7 * 5).map(|i| i as f32 / 34.0).collect();
    let pred = SoftEdgeMap::from_vec(7, 5, data).unwrap();
    save_prediction(&pred, &path).unwrap();
    let back = load_prediction(&path).unwrap();
    for (a, b) in pred.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
    }
    let bad = SoftEdgeMap::from_vec(1, 1, vec![1.5]).unwrap();
    assert!(save_prediction(&bad, &path).is_err());
}

fn write_dataset(root: &std::path::Path, stems: &[&str]) {
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("edges")).unwrap();
    for (i, stem) in stems.iter().enumerate() {
        let s = common::synthetic_scene(&mut common::rng(i as u64), 16, 16);
        save_rgb(&s.image, &root.join("images").join(format!("{stem}.png"))).unwrap();
        save_label(&s.target, &root.join("edges").join(format!("{stem}.png"))).unwrap();
    }
}

#[test]
fn dataset_loads_sorted_pairs() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &["b", "a"]);
    let samples = load_dataset(dir.path()).unwrap();
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["a", "b"]);
    assert_eq!(samples[0].target, common::synthetic_scene(&mut common::rng(1), 16, 16).target);
}

#[test]
fn dataset_with_unmatched_stem_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &["a", "b"]);
    fs::remove_file(dir.path().join("edges/b.png")).unwrap();
    let e = load_dataset(dir.path()).unwrap_err();
    assert_eq!(e.class(), ErrorClass::Data);
    assert!(e.to_string().contains('b'), "{e}");
}

#[test]
fn annotation_directories_are_merged() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &["a"]);
    fs::remove_file(dir.path().join("edges/a.png")).unwrap();
    let multi = dir.path().join("edges/a");
    fs::create_dir(&multi).unwrap();
    let one = EdgeMap::from_points(16, 16, &[(1, 1), (2, 2)]).unwrap();
    let two = EdgeMap::from_points(16, 16, &[(2, 2), (9, 4)]).unwrap();
    save_label(&one, &multi.join("1.png")).unwrap();
    save_label(&two, &multi.join("2.png")).unwrap();
    let s = &load_dataset(dir.path()).unwrap()[0];
    assert_eq!(s.target.points(), vec![(1, 1), (2, 2), (9, 4)]);
}

#[test]
fn partition_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let header = parse_partition("BRIND-P2-3-1-E25").unwrap();
    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let m = PartitionManifest::new(header, ids(&["x", "y", "z"]), ids(&["w"])).unwrap();
    let path = write_partition(dir.path(), &m).unwrap();
    assert_eq!(path.file_name().unwrap(), "BRIND-P2-3-1-E25.partition");
    assert_eq!(load_partition(&path).unwrap(), m);

    fs::write(dir.path().join("BRIND-P2-3-1-E25.train"), "x\ny\n").unwrap();
    assert!(load_partition(&path).is_err());
}
