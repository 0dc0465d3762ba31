use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use occlusia::annotate::{InstanceMap, SegmentAnnotation, SegmentsFile};

fn occlusia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occlusia"))
        .args(args)
        .env("OCCLUSIA_THREADS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = occlusia(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_in(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn pipeline_produces_a_33_row_aor_csv_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let run = |tag: &str| {
        let data = t.join(format!("data{tag}"));
        let model = t.join(format!("model{tag}.docm"));
        let pred = t.join(format!("pred{tag}"));
        let aor = t.join(format!("aor{tag}.csv"));
        let pr = t.join(format!("pr{tag}.csv"));
        ok(&["synth", "--n", "4", "--seed", "7", "--width", "48", "--height", "48", "--out", s(&data)]);
        ok(&["train", "--data", s(&data), "--seed", "7", "--epochs", "1", "--batch", "2", "--out", s(&model)]);
        ok(&["infer", "--model", s(&model), "--data", s(&data), "--scales", "1", "--out", s(&pred)]);
        ok(&["eval", "--pred", s(&pred), "--gt", s(&data), "--out", s(&aor), "--pr", s(&pr)]);
        (data, model, pred, aor)
    };
    let (data, model, pred, aor) = run("a");
    let csv = fs::read_to_string(&aor).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "threshold,recall,accuracy");
    assert_eq!(lines.len(), 34);
    assert!(data.join("scene_0003.segments.json").exists());
    assert!(pred.join("scene_0000.total.fmap").exists());
    assert!(pred.join("scene_0000.overlay.png").exists());
    assert!(t.join("modela.loss.csv").exists());

    let (data_b, model_b, pred_b, aor_b) = run("b");
    assert_eq!(files_in(&data), files_in(&data_b));
    assert_eq!(fs::read(&model).unwrap(), fs::read(&model_b).unwrap());
    assert_eq!(files_in(&pred), files_in(&pred_b));
    assert_eq!(fs::read(&aor).unwrap(), fs::read(&aor_b).unwrap());
    // nothing left behind by the atomic writer
    assert!(files_in(&pred).keys().all(|k| !k.starts_with('.')));
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let out = tmp.path().join("aor.csv");
    ok(&["synth", "--n", "2", "--width", "40", "--height", "40", "--out", s(&data)]);
    ok(&["eval", "--pred", s(&data), "--gt", s(&data), "--out", s(&out)]);
    let csv = fs::read_to_string(&out).unwrap();
    for (k, line) in csv.lines().skip(1).enumerate() {
        let t = 2.0 * k as f64 / 32.0;
        assert_eq!(line, format!("{t:?},1.0,1.0"));
    }
    assert_eq!(csv.lines().count(), 34);
}

fn person_dog_scene(dir: &Path) -> (String, String, String) {
    let (w, h) = (12usize, 8usize);
    let ids = (0..w * h)
        .map(|i| match ((2..6).contains(&(i / w)), i % w) {
            (true, 2..=5) => 1,
            (true, 6..=9) => 2,
            _ => 0,
        })
        .collect();
    let classes = [(1, "person".to_string()), (2, "dog".to_string())].into_iter().collect();
    let m = InstanceMap::new(w, h, ids, classes).unwrap();
    let inst = dir.join("scene.instances.png");
    let cls = dir.join("scene.classes.json");
    let seg = dir.join("scene.segments.json");
    fs::write(&inst, m.to_png_bytes().unwrap()).unwrap();
    fs::write(&cls, m.classes_json().unwrap()).unwrap();
    let segs = SegmentsFile {
        image: "scene.png".into(),
        segments: vec![SegmentAnnotation {
            x0: 5.0,
            y0: 5.0,
            x1: 5.0,
            y1: 2.0,
        }],
    };
    fs::write(&seg, segs.to_json().unwrap()).unwrap();
    (s(&inst).to_string(), s(&cls).to_string(), s(&seg).to_string())
}

#[test]
fn stats_counts_the_three_layer_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let (inst, cls, seg) = person_dog_scene(tmp.path());
    let out = tmp.path().join("m.csv");
    ok(&["stats", "--instances", &inst, "--classes", &cls, "--segments", &seg, "--out", s(&out)]);
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "occluder,dog,person,bg\ndog,0,0,1\nperson,1,0,1\nbg,0,0,0\n"
    );
}

#[test]
fn match_writes_maps_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (inst, cls, seg) = person_dog_scene(tmp.path());
    let prefix = tmp.path().join("gt");
    ok(&["match", "--instances", &inst, "--classes", &cls, "--segments", &seg, "--out", s(&prefix)]);
    let m = occlusia::OrientedBoundaryMap::load(&prefix).unwrap();
    assert!(occlusia::repr::validate(&m, true).is_empty());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("gt.report.json")).unwrap()).unwrap();
    assert_eq!(report["unlabeled"].as_array().unwrap().len(), 0);
    assert_eq!(report["image"], "scene.png");
}

#[test]
fn malformed_inputs_exit_with_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let (inst, cls, _) = person_dog_scene(tmp.path());
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"image": "x.png", "segments": [{"x0": 1, "y0": 1, "x1": 1, "y1": 1}]}"#).unwrap();
    let out = tmp.path().join("o");
    let r = occlusia(&["match", "--instances", &inst, "--classes", &cls, "--segments", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("segments[0]"));
    assert!(!tmp.path().join("o.edge.fmap").exists());

    let model = tmp.path().join("m.docm");
    fs::write(&model, b"DOCX....").unwrap();
    let r = occlusia(&["infer", "--model", s(&model), "--input", &inst, "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("magic"));

    let r = occlusia(&["train", "--data", s(tmp.path()), "--out", s(&model), "--momentum", "1.5"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("momentum"));

    let r = Command::new(env!("CARGO_BIN_EXE_occlusia"))
        .args(["synth", "--n", "1", "--out", s(&out)])
        .env("OCCLUSIA_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_supplies_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[synth]\nn = 2\nwidth = 32\nheight = 32\nseed = 3\n").unwrap();
    let out = tmp.path().join("d");
    ok(&["--config", s(&cfg), "synth", "--seed", "4", "--out", s(&out)]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["width"], 32);
    assert_eq!(manifest["seed"], 4);
}

#[test]
fn aor_plot_writes_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let csv = tmp.path().join("self.csv");
    let svg = tmp.path().join("p.svg");
    ok(&["synth", "--n", "1", "--width", "32", "--height", "32", "--out", s(&data)]);
    ok(&["eval", "--pred", s(&data), "--gt", s(&data), "--out", s(&csv)]);
    ok(&["aor-plot", "--curve", &format!("oracle={}", s(&csv)), "--out", s(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") || text.starts_with("<?xml"));
    assert!(text.contains("oracle"));
}
