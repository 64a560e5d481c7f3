use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdped_core::eval::thin;
use sdped_core::io::{save_label, save_prediction, save_rgb, write_partition, PartitionManifest};
use sdped_core::maps::{EdgeMap, SoftEdgeMap};
use sdped_core::{ModelConfig, Tensor};

fn sdped(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdped")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sdped(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    sdped(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A box outline with a diagonal, thin by construction.
fn outline(h: usize, w: usize, inset: usize) -> EdgeMap {
    let mut m = EdgeMap::new(w, h);
    for c in inset..w - inset {
        m.set(inset, c, true);
        m.set(h - 1 - inset, c, true);
    }
    for r in inset..h - inset {
        m.set(r, inset, true);
        m.set(r, w - 1 - inset, true);
    }
    for d in inset + 2..(h.min(w) - inset - 2) {
        m.set(d, d, true);
    }
    thin(&m)
}

fn image(h: usize, w: usize, seed: usize) -> Tensor<f32> {
    let data = (0..3 * h * w).map(|i| ((i * 31 + seed * 17) % 256) as f32 / 255.0).collect();
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

fn dataset(root: &Path, stems: &[&str], h: usize, w: usize) {
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("edges")).unwrap();
    for (i, stem) in stems.iter().enumerate() {
        save_rgb(&image(h, w, i), &root.join("images").join(format!("{stem}.png"))).unwrap();
        save_label(&outline(h, w, 2 + i % 3), &root.join("edges").join(format!("{stem}.png"))).unwrap();
    }
}

#[test]
fn augment_counts_and_plan_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data, &["a"], 32, 48);
    let out1 = dir.path().join("aug1");
    let out2 = dir.path().join("aug2");
    // 32x48 with max side 40 -> 1 x 2 tiles -> 16 pairs.
    let msg = ok(&["augment", "--data", s(&data), "--out", s(&out1), "--max-side", "40"]);
    assert!(msg.contains("16 derived pairs from 1 sources"), "{msg}");
    assert_eq!(fs::read_dir(out1.join("images")).unwrap().count(), 16);
    ok(&["augment", "--data", s(&data), "--out", s(&out2), "--max-side", "40"]);
    assert_eq!(fs::read(out1.join("plan.tsv")).unwrap(), fs::read(out2.join("plan.tsv")).unwrap());

    let out3 = dir.path().join("aug3");
    let msg = ok(&["augment", "--data", s(&data), "--out", s(&out3), "--max-side", "40", "--noiseless"]);
    assert!(msg.contains("32 derived pairs"), "{msg}");
}

#[test]
fn default_tiling_of_a_small_frame() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data, &["x"], 321, 481);
    let msg = ok(&["augment", "--data", s(&data), "--out", s(&dir.path().join("o"))]);
    assert!(msg.contains("8 derived pairs from 1 sources"), "{msg}");
}

fn train_micro(dir: &Path, epochs: &str, extra: &[&str]) -> PathBuf {
    let data = dir.join("data");
    dataset(&data, &["a", "b"], 16, 16);
    let model = dir.join("m.sdpd");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&model), "--model", "micro", "--crop", "16"];
    args.extend_from_slice(&["--epochs", epochs, "--batch-size", "2"]);
    args.extend_from_slice(extra);
    ok(&args);
    model
}

#[test]
fn train_writes_model_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_micro(dir.path(), "1", &["--seed", "4"]);
    let log = fs::read_to_string(model.with_extension("log")).unwrap();
    assert!(log.contains("# lambda = 1.1"), "{log}");
    assert!(log.contains("# seed = 4"), "{log}");
    assert!(log.contains("# n_csdb = 1"), "{log}");
    let rows: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("0\t"));

    let info = ok(&["info", "--model", s(&model)]);
    let want = ModelConfig::micro().param_count();
    assert!(info.contains(&format!("param_count: {want}")), "{info}");
}

#[test]
fn train_with_partition_selects_ids_and_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data, &["a", "b", "c"], 16, 16);
    let header = sdped_core::io::parse_partition("TOY-P1-2-1-E2").unwrap();
    let ids = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
    let m = PartitionManifest::new(header, ids(&["a", "b"]), ids(&["c"])).unwrap();
    let part = write_partition(dir.path(), &m).unwrap();
    let model = dir.path().join("m.sdpd");
    let base = ["train", "--data", s(&data), "--out", s(&model), "--model", "micro", "--crop", "16"];
    ok(&[&base[..], &["--partition", s(&part)]].concat());
    let log = fs::read_to_string(model.with_extension("log")).unwrap();
    assert!(log.contains("# samples = 2"), "{log}");
    assert!(log.contains("# partition = TOY-P1-2-1-E2"), "{log}");
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2);

    let missing = dir.path().join("NOPE-P1-1-1-E1.partition");
    assert_eq!(code(&[&base[..], &["--partition", s(&missing)]].concat()), 3);
}

#[test]
fn single_fuse_flag_shows_in_info() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_micro(dir.path(), "0", &["--set", "ablation_single_fuse=true"]);
    let info = ok(&["info", "--model", s(&model)]);
    assert!(info.contains("ablation_single_fuse: true"), "{info}");
    let cfg = ModelConfig { ablation_single_fuse: true, ..ModelConfig::micro() };
    assert!(info.contains(&format!("param_count: {}", cfg.param_count())), "{info}");
}

#[test]
fn predict_is_deterministic_and_keeps_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_micro(dir.path(), "1", &[]);
    let imgs = dir.path().join("imgs");
    fs::create_dir(&imgs).unwrap();
    save_rgb(&image(13, 21, 0), &imgs.join("p.png")).unwrap();
    save_rgb(&image(8, 8, 1), &imgs.join("q.png")).unwrap();
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    ok(&["predict", "--model", s(&model), "--images", s(&imgs), "--out", s(&o1)]);
    ok(&["--workers", "1", "predict", "--model", s(&model), "--images", s(&imgs), "--out", s(&o2)]);
    for f in ["p.png", "q.png"] {
        assert_eq!(fs::read(o1.join(f)).unwrap(), fs::read(o2.join(f)).unwrap());
    }
    let p = sdped_core::io::load_prediction(&o1.join("p.png")).unwrap();
    assert_eq!((p.height(), p.width()), (13, 21));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["predict", "--model", s(&model), "--images", s(&empty), "--out", s(&o1)]), 0);
}

fn eval_dirs(root: &Path, h: usize, w: usize) -> (PathBuf, PathBuf) {
    let (pred, gt) = (root.join("pred"), root.join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    for (i, stem) in ["u", "v"].iter().enumerate() {
        let m = outline(h, w, 1 + i);
        save_label(&m, &gt.join(format!("{stem}.png"))).unwrap();
        save_prediction(&SoftEdgeMap::from_edge_map(&m), &pred.join(format!("{stem}.png"))).unwrap();
    }
    (pred, gt)
}

#[test]
fn eval_of_ground_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = eval_dirs(dir.path(), 321, 481);
    let report = dir.path().join("r.json");
    let out = ok(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--report", s(&report)]);
    assert_eq!(out.trim(), "ODS 1.000 OIS 1.000 AP 1.000");
    let r = sdped_core::eval::BenchmarkReport::from_json(&fs::read_to_string(&report).unwrap()).unwrap();
    // 0.0075 of the 481x321 diagonal
    assert!((r.tolerance_pixels.unwrap() - 4.337).abs() < 1e-3);
    assert!(report.with_extension("tsv").is_file());
}

#[test]
fn eval_tolerance_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = eval_dirs(dir.path(), 20, 30);
    let report = dir.path().join("r.json");
    let base = ["eval", "--pred", s(&pred), "--gt", s(&gt), "--report", s(&report)];
    ok(&[&base[..], &["--tol-mode", "pixels", "--tol", "1.42"]].concat());
    let r = sdped_core::eval::BenchmarkReport::from_json(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.tolerance_pixels, Some(1.42));

    assert_eq!(code(&[&base[..], &["--preset", "brind", "--tol", "2"]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--preset", "nope"]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--thresholds", "0"]].concat()), 2);
}

#[test]
fn eval_stem_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = eval_dirs(dir.path(), 20, 30);
    fs::remove_file(gt.join("v.png")).unwrap();
    let out = sdped(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--report", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains('v'));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nlambda = 1.2\nlamda = 3\n").unwrap();
    let out = sdped(&["--config", s(&cfg), "keys"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    assert_eq!(code(&["--set", "epochs=many", "train", "--data", ".", "--out", "x"]), 2);
    assert_eq!(code(&["--workers", "0", "keys"]), 2);
    assert!(ok(&["keys"]).contains("tol_preset"));
}
