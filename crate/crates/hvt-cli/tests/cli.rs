//! End-to-end runs of the binary: every subcommand, the documented
//! exit codes, and the file formats it reads and writes.

use std::path::Path;
use std::process::{Command, Output};

use hvt::field::VoteField;
use hvt::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8")
}

fn write_tensor(dir: &Path, name: &str, dims: Vec<usize>, values: Vec<f32>) {
    Tensor::new(dims, values)
        .unwrap()
        .write_file(dir.join(name))
        .unwrap();
}

fn read_tensor(dir: &Path, name: &str) -> Tensor {
    Tensor::read_file(dir.join(name)).unwrap()
}

fn gen_field(dir: &Path) {
    let out = run_in(dir, &[
        "gen-field",
        "--angle-bins",
        "4",
        "--ring-extents",
        "2,8,16",
        "--out",
        "field.json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn gen_field_prints_constants_and_writes_json() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &[
        "gen-field",
        "--angle-bins",
        "4",
        "--ring-extents",
        "2,8,16",
        "--out",
        "field.json",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "R=9 field=17\n");
    let text = std::fs::read_to_string(dir.path().join("field.json")).unwrap();
    let field = VoteField::from_json_str(&text).unwrap();
    assert_eq!(field.region_count(), 9);
    assert_eq!(field.field_size(), 17);

    let out = run_in(dir.path(), &[
        "gen-field",
        "--angle-bins",
        "6",
        "--ring-extents",
        "2,8,16",
        "--out",
        "field6.json",
    ]);
    assert_eq!(stdout(&out), "R=13 field=17\n");
}

#[test]
fn gen_field_rejects_unusable_configs_with_exit_1() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["gen-field", "--angle-bins", "7", "--ring-extents", "2,8,16", "--out", "f.json"],
        vec!["gen-field", "--angle-bins", "4", "--ring-extents", "3,8", "--out", "f.json"],
        vec!["gen-field", "--angle-bins", "4", "--ring-extents", "8,2", "--out", "f.json"],
        vec!["gen-field", "--angle-bins", "4", "--ring-extents", "2,8", "--mask", "whatever", "--out", "f.json"],
    ] {
        let out = run_in(dir.path(), &args);
        assert_eq!(code(&out), 1, "args {args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains("invalid configuration"), "{}", stderr(&out));
    }
}

#[test]
fn gen_field_mask_metadata_round_trips() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &[
        "gen-field",
        "--angle-bins",
        "4",
        "--ring-extents",
        "2,8,16",
        "--mask",
        "only_center",
        "--out",
        "masked.json",
    ]);
    assert_eq!(code(&out), 0);
    // Masking leaves the region count alone; it only marks channels.
    assert_eq!(stdout(&out), "R=9 field=17\n");
    let text = std::fs::read_to_string(dir.path().join("masked.json")).unwrap();
    let field = VoteField::from_json_str(&text).unwrap();
    assert!(!field.is_masked(1));
    for id in 2..=9 {
        assert!(field.is_masked(id), "region {id}");
    }

    let out = run_in(dir.path(), &[
        "gen-field",
        "--angle-bins",
        "4",
        "--ring-extents",
        "2,8,16",
        "--mask",
        "2,3",
        "--out",
        "custom.json",
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(dir.path().join("custom.json")).unwrap();
    let field = VoteField::from_json_str(&text).unwrap();
    assert!(field.is_masked(2) && field.is_masked(3) && !field.is_masked(4));
}

#[test]
fn vote_modes_agree_and_zero_maps_to_zero() {
    let dir = TempDir::new().unwrap();
    gen_field(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let values: Vec<f32> = (0..2 * 12 * 12 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    write_tensor(dir.path(), "ev.hvt", vec![2, 12, 12, 9], values);
    for (mode, out_name) in [("gather", "g.hvt"), ("scatter", "s.hvt")] {
        let out = run_in(dir.path(), &[
            "vote", "--evidence", "ev.hvt", "--field", "field.json", "--mode", mode, "--out", out_name,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let g = read_tensor(dir.path(), "g.hvt");
    let s = read_tensor(dir.path(), "s.hvt");
    assert_eq!(g.dims(), &[2, 12, 12]);
    assert_eq!(s.dims(), &[2, 12, 12]);
    for (a, b) in g.data().iter().zip(s.data()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }

    write_tensor(dir.path(), "zero.hvt", vec![1, 8, 8, 9], vec![0.0; 8 * 8 * 9]);
    let out = run_in(dir.path(), &[
        "vote", "--evidence", "zero.hvt", "--field", "field.json", "--out", "zout.hvt",
    ]);
    assert_eq!(code(&out), 0);
    assert!(read_tensor(dir.path(), "zout.hvt").data().iter().all(|&v| v == 0.0));
}

#[test]
fn vote_single_center_vote_spreads_evenly() {
    let dir = TempDir::new().unwrap();
    gen_field(dir.path());
    let (h, w, r) = (9, 9, 9);
    let mut values = vec![0.0f32; h * w * r];
    values[(4 * w + 4) * r] = 1.0;
    write_tensor(dir.path(), "onehot.hvt", vec![1, h, w, r], values);
    let out = run_in(dir.path(), &[
        "vote", "--evidence", "onehot.hvt", "--field", "field.json", "--out", "spread.hvt",
    ]);
    assert_eq!(code(&out), 0);
    let t = read_tensor(dir.path(), "spread.hvt");
    // One unit through the five-pixel center disk: 1/5 to each.
    let mut nonzero: Vec<(usize, f32)> = t
        .data()
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .collect();
    nonzero.sort_unstable_by_key(|(i, _)| *i);
    let cells: Vec<usize> = nonzero.iter().map(|(i, _)| *i).collect();
    assert_eq!(cells, vec![3 * w + 4, 4 * w + 3, 4 * w + 4, 4 * w + 5, 5 * w + 4]);
    for (_, v) in nonzero {
        assert_eq!(v, 0.2);
    }
}

#[test]
fn vote_region_count_mismatch_exits_2() {
    let dir = TempDir::new().unwrap();
    gen_field(dir.path());
    write_tensor(dir.path(), "wide.hvt", vec![1, 8, 8, 13], vec![0.0; 8 * 8 * 13]);
    let out = run_in(dir.path(), &[
        "vote", "--evidence", "wide.hvt", "--field", "field.json", "--out", "x.hvt",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("shape"), "{}", stderr(&out));
}

/// Presence, offset, and size maps for one planted object.
fn plant_object(dir: &Path, h: usize, w: usize, row: usize, col: usize) {
    let mut pres = vec![0.0f32; h * w];
    pres[row * w + col] = 0.9;
    write_tensor(dir, "pres.hvt", vec![1, h, w], pres);
    let mut off = vec![0.0f32; h * w * 2];
    off[(row * w + col) * 2] = 0.5;
    off[(row * w + col) * 2 + 1] = 0.25;
    write_tensor(dir, "off.hvt", vec![h, w, 2], off);
    let mut sz = vec![0.0f32; h * w * 2];
    sz[(row * w + col) * 2] = 3.0;
    sz[(row * w + col) * 2 + 1] = 4.0;
    write_tensor(dir, "sz.hvt", vec![h, w, 2], sz);
}

#[test]
fn detect_writes_decoded_record() {
    let dir = TempDir::new().unwrap();
    plant_object(dir.path(), 16, 16, 5, 6);
    let out = run_in(dir.path(), &[
        "detect", "--presence", "pres.hvt", "--offsets", "off.hvt", "--sizes", "sz.hvt",
        "--image-id", "7", "--out", "dets.jsonl",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<String> = std::fs::read_to_string(dir.path().join("dets.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 1);
    let rec: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(rec["image_id"], 7);
    assert_eq!(rec["category_id"], 0);
    // Center ((5 + .5) * 4, (6 + .25) * 4) with a 16 x 12 box.
    let bbox: Vec<f64> = rec["bbox"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(bbox, vec![17.0, 16.0, 16.0, 12.0]);
}

#[test]
fn detect_topk_one_emits_single_line() {
    let dir = TempDir::new().unwrap();
    let (h, w) = (12, 12);
    let mut pres = vec![0.0f32; h * w];
    pres[2 * w + 2] = 0.9;
    pres[8 * w + 8] = 0.7;
    write_tensor(dir.path(), "pres.hvt", vec![1, h, w], pres);
    write_tensor(dir.path(), "off.hvt", vec![h, w, 2], vec![0.0; h * w * 2]);
    let mut sz = vec![0.0f32; h * w * 2];
    for cell in [2 * w + 2, 8 * w + 8] {
        sz[cell * 2] = 2.0;
        sz[cell * 2 + 1] = 2.0;
    }
    write_tensor(dir.path(), "sz.hvt", vec![h, w, 2], sz);
    let out = run_in(dir.path(), &[
        "detect", "--presence", "pres.hvt", "--offsets", "off.hvt", "--sizes", "sz.hvt",
        "--topk", "1", "--out", "one.jsonl",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("one.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    let rec: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(rec["score"].as_f64().unwrap(), 0.9f32 as f64);
}

#[test]
fn detect_all_zero_presence_yields_no_survivors() {
    let dir = TempDir::new().unwrap();
    let (h, w) = (8, 8);
    write_tensor(dir.path(), "pres.hvt", vec![1, h, w], vec![0.0; h * w]);
    write_tensor(dir.path(), "off.hvt", vec![h, w, 2], vec![0.0; h * w * 2]);
    write_tensor(dir.path(), "sz.hvt", vec![h, w, 2], vec![0.0; h * w * 2]);
    let out = run_in(dir.path(), &[
        "detect", "--presence", "pres.hvt", "--offsets", "off.hvt", "--sizes", "sz.hvt",
        "--out", "empty.jsonl",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // Zero scores sit below the default floor.
    assert_eq!(std::fs::read_to_string(dir.path().join("empty.jsonl")).unwrap(), "");
}

#[test]
fn detect_shape_mismatch_exits_2() {
    let dir = TempDir::new().unwrap();
    write_tensor(dir.path(), "pres.hvt", vec![1, 8, 8], vec![0.1; 64]);
    write_tensor(dir.path(), "off.hvt", vec![4, 4, 2], vec![0.0; 32]);
    write_tensor(dir.path(), "sz.hvt", vec![8, 8, 2], vec![0.0; 128]);
    let out = run_in(dir.path(), &[
        "detect", "--presence", "pres.hvt", "--offsets", "off.hvt", "--sizes", "sz.hvt",
        "--out", "x.jsonl",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn render_votes_highlights_contributing_sources() {
    let dir = TempDir::new().unwrap();
    gen_field(dir.path());
    let (h, w, r) = (16, 16, 9);
    let mut values = vec![0.0f32; h * w * r];
    // Context evidence at (8, 3) voting rightward into (8, 8): offset
    // (0, 5) sits in the second annulus's first sector, channel 6.
    values[(8 * w + 3) * r + 5] = 1.0;
    write_tensor(dir.path(), "ev.hvt", vec![1, h, w, r], values);
    let out = run_in(dir.path(), &[
        "render-votes", "--evidence", "ev.hvt", "--field", "field.json",
        "--target", "8,8,0", "--out", "votes.ppm",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bytes = std::fs::read(dir.path().join("votes.ppm")).unwrap();
    let header = b"P6\n16 16\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    let pixels = &bytes[header.len()..];
    assert_eq!(pixels.len(), h * w * 3);
    // The only contributing source is (8, 3); its pixel is the lone
    // fully tinted one.
    let hot = &pixels[(8 * w + 3) * 3..(8 * w + 3) * 3 + 3];
    assert_eq!(hot, &[128, 0, 0]);
    let elsewhere = &pixels[(2 * w + 2) * 3..(2 * w + 2) * 3 + 3];
    assert_ne!(elsewhere, hot);
}

#[test]
fn render_votes_all_zero_evidence_is_uniform_dark() {
    let dir = TempDir::new().unwrap();
    gen_field(dir.path());
    write_tensor(dir.path(), "ev.hvt", vec![1, 8, 8, 9], vec![0.0; 8 * 8 * 9]);
    let out = run_in(dir.path(), &[
        "render-votes", "--evidence", "ev.hvt", "--field", "field.json",
        "--target", "4,4,0", "--out", "dark.ppm",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bytes = std::fs::read(dir.path().join("dark.ppm")).unwrap();
    let header = b"P6\n8 8\n255\n";
    assert!(bytes[header.len()..].iter().all(|&b| b == 0));
}

#[test]
fn render_votes_bad_targets_fail() {
    let dir = TempDir::new().unwrap();
    gen_field(dir.path());
    write_tensor(dir.path(), "ev.hvt", vec![1, 8, 8, 9], vec![0.0; 8 * 8 * 9]);
    let out = run_in(dir.path(), &[
        "render-votes", "--evidence", "ev.hvt", "--field", "field.json",
        "--target", "99,4,0", "--out", "x.ppm",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = run_in(dir.path(), &[
        "render-votes", "--evidence", "ev.hvt", "--field", "field.json",
        "--target", "4,4", "--out", "x.ppm",
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

fn annotations_json() -> &'static str {
    r#"{
  "images": [
    {"id": 1, "width": 64, "height": 64, "file_name": "a.jpg"},
    {"id": 2, "width": 64, "height": 64, "file_name": "b.jpg"},
    {"id": 3, "width": 64, "height": 64, "file_name": "c.jpg"}
  ],
  "annotations": [
    {"id": 10, "image_id": 1, "category_id": 1, "bbox": [17.0, 16.0, 16.0, 12.0], "area": 192.0, "iscrowd": 0},
    {"id": 11, "image_id": 2, "category_id": 1, "bbox": [8.0, 8.0, 20.0, 20.0], "area": 400.0, "iscrowd": 0},
    {"id": 12, "image_id": 3, "category_id": 2, "bbox": [30.0, 30.0, 10.0, 10.0], "area": 100.0, "iscrowd": 0}
  ],
  "categories": [{"id": 1, "name": "widget"}, {"id": 2, "name": "gadget"}]
}"#
}

#[test]
fn sample_identity_reports_zero_divergence_and_writes_subset() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("ann.json"), annotations_json()).unwrap();
    let out = run_in(dir.path(), &[
        "sample", "--annotations", "ann.json", "--count", "3", "--trials", "4",
        "--seed", "9", "--out", "sub.json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["divergence"]["worst"], 0.0);
    assert_eq!(report["stats"]["image_count"], 3);
    let text = std::fs::read_to_string(dir.path().join("sub.json")).unwrap();
    let sub = hvt::dataset::CocoDataset::from_slice(text.as_bytes()).unwrap();
    assert_eq!(sub.images.len(), 3);
    assert_eq!(sub.annotations.len(), 3);
}

#[test]
fn sample_is_reproducible_and_proper_subsets_parse() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("ann.json"), annotations_json()).unwrap();
    let args = [
        "sample", "--annotations", "ann.json", "--count", "2", "--trials", "8",
        "--seed", "5", "--out", "sub.json",
    ];
    let first = run_in(dir.path(), &args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let first_sub = std::fs::read_to_string(dir.path().join("sub.json")).unwrap();
    let second = run_in(dir.path(), &args);
    assert_eq!(stdout(&first), stdout(&second));
    let second_sub = std::fs::read_to_string(dir.path().join("sub.json")).unwrap();
    assert_eq!(first_sub, second_sub);
    let sub = hvt::dataset::CocoDataset::from_slice(first_sub.as_bytes()).unwrap();
    assert_eq!(sub.images.len(), 2);
    // Categories carry over even when a class drops out of the subset.
    assert_eq!(sub.categories.len(), 2);
}

#[test]
fn eval_perfect_detections_score_one() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("ann.json"), annotations_json()).unwrap();
    std::fs::write(
        dir.path().join("dets.jsonl"),
        concat!(
            "{\"image_id\":1,\"category_id\":1,\"bbox\":[17.0,16.0,16.0,12.0],\"score\":0.9}\n",
            "{\"image_id\":2,\"category_id\":1,\"bbox\":[8.0,8.0,20.0,20.0],\"score\":0.8}\n",
            "{\"image_id\":3,\"category_id\":2,\"bbox\":[30.0,30.0,10.0,10.0],\"score\":0.7}\n",
        ),
    )
    .unwrap();
    let out = run_in(dir.path(), &["eval", "--detections", "dets.jsonl", "--gt", "ann.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["ap"], 1.0);
    assert_eq!(report["ap50"], 1.0);
    assert_eq!(report["ap75"], 1.0);
    // No medium or large objects in the fixture.
    assert_eq!(report["ap_medium"], -1.0);
}

#[test]
fn eval_malformed_detections_exit_2() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("ann.json"), annotations_json()).unwrap();
    std::fs::write(dir.path().join("dets.jsonl"), "{\"image_id\": oops}\n").unwrap();
    let out = run_in(dir.path(), &["eval", "--detections", "dets.jsonl", "--gt", "ann.json"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn loss_report_is_zero_for_exact_regressions() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("ann.json"), annotations_json()).unwrap();
    // The image-1 box (17,16) to (33,28): center (25, 22) maps to cell
    // (5, 6) at stride 4 with offsets (0.5, 0.25) and size (3, 4).
    let (h, w) = (16, 16);
    let mut pres = vec![0.0f32; 2 * h * w];
    pres[5 * w + 6] = 0.9;
    write_tensor(dir.path(), "pres.hvt", vec![2, h, w], pres);
    let mut off = vec![0.0f32; h * w * 2];
    off[(5 * w + 6) * 2] = 0.5;
    off[(5 * w + 6) * 2 + 1] = 0.25;
    write_tensor(dir.path(), "off.hvt", vec![h, w, 2], off);
    let mut sz = vec![0.0f32; h * w * 2];
    sz[(5 * w + 6) * 2] = 3.0;
    sz[(5 * w + 6) * 2 + 1] = 4.0;
    write_tensor(dir.path(), "sz.hvt", vec![h, w, 2], sz);
    let out = run_in(dir.path(), &[
        "loss", "--heatmaps", "pres.hvt", "--offsets", "off.hvt", "--sizes", "sz.hvt",
        "--annotations", "ann.json", "--image-id", "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["offset"], 0.0);
    assert_eq!(report["size"], 0.0);
    let focal = report["focal"].as_f64().unwrap();
    assert!(focal > 0.0 && focal < 0.01, "{focal}");
    assert_eq!(report["total"], focal);

    let out = run_in(dir.path(), &[
        "loss", "--heatmaps", "pres.hvt", "--offsets", "off.hvt", "--sizes", "sz.hvt",
        "--annotations", "ann.json", "--image-id", "42",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn usage_and_data_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["--help"]);
    assert_eq!(code(&out), 0);
    let out = run_in(dir.path(), &["--version"]);
    assert_eq!(code(&out), 0);
    let out = run_in(dir.path(), &["no-such-command"]);
    assert_eq!(code(&out), 1);
    let out = run_in(dir.path(), &["vote", "--evidence", "missing.hvt", "--field", "nope.json", "--out", "x.hvt"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = Command::new(env!("CARGO_BIN_EXE_hvt"))
        .args(["gen-field", "--angle-bins", "4", "--ring-extents", "2,8", "--out", "f.json"])
        .env("HVT_THREADS", "banana")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code().unwrap(), 1);
    let out = Command::new(env!("CARGO_BIN_EXE_hvt"))
        .args(["gen-field", "--angle-bins", "4", "--ring-extents", "2,8", "--out", "f.json"])
        .env("HVT_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code().unwrap(), 0);
}
