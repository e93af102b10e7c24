use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use actgraph::metrics::MetricReport;
use actgraph::training::{STUDENT_FILE, TEACHER_FILE};

const SMALL_CONFIG: &str = r#"{"epochs": 25, "attn_dim": 4, "graph_dim": 4, "decoder": {"d_model": 16, "d_ff": 16, "blocks": 1, "max_len": 10}}"#;

fn actgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actgraph")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, videos: usize, seed: u64) -> PathBuf {
    let data = dir.join("data");
    let v = videos.to_string();
    let s = seed.to_string();
    let out = actgraph(&["synth", "--out", p(&data), "--videos", &v, "--frames", "6", "--seed", &s]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn train(data: &Path, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", p(data), "--config", p(config), "--out", p(out)];
    args.extend(extra);
    actgraph(&args)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_writes_bundles_and_captions_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let out = actgraph(&["synth", "--out", p(d), "--videos", "20", "--frames", "8", "--seed", "4"]);
        assert_eq!(code(&out), 0);
    }
    let fa = files(&a);
    assert_eq!(fa.iter().filter(|(n, _)| n.ends_with(".vft")).count(), 20);
    assert_eq!(fa.iter().filter(|(n, _)| n.ends_with(".jsonl")).count(), 1);
    assert_eq!(fa, files(&b));
}

#[test]
fn synth_into_unwritable_dir_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = actgraph(&["synth", "--out", p(&blocker.join("sub")), "--videos", "2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&actgraph(&["synth", "--out", "x", "--bogus"])), 1);
    assert_eq!(code(&actgraph(&["frobnicate"])), 1);
    assert_eq!(code(&actgraph(&["train", "--data", "d", "--out", "o", "--ablate", "everything"])), 1);
    assert_eq!(code(&actgraph(&["caption", "--ckpt", "c", "--bundle", "b", "--beam", "0"])), 1);
    assert_eq!(code(&actgraph(&["--help"])), 0);
}

#[test]
fn train_full_and_ablated_then_caption() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 6, 2);
    let cfg = write_config(tmp.path(), SMALL_CONFIG);
    let full = tmp.path().join("full");
    let ablated = tmp.path().join("ablated");
    assert_eq!(code(&train(&data, &cfg, &full, &[])), 0);
    let out = train(&data, &cfg, &ablated, &["--ablate", "temporal"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let log_full = std::fs::read_to_string(full.join("train_log.csv")).unwrap();
    let log_abl = std::fs::read_to_string(ablated.join("train_log.csv")).unwrap();
    assert!(log_full.contains("# ablation none"));
    assert!(log_abl.contains("# ablation temporal"));
    assert!(log_abl.contains("\"disable_temporal\":true"));
    // Defaulted fields are echoed in the header.
    assert!(log_full.contains("\"lambda_kd\":1.0") && log_full.contains("\"temperature\":1.0"));
    assert_eq!(log_full.lines().filter(|l| !l.starts_with('#')).count(), 26);
    assert_ne!(
        std::fs::read(full.join(TEACHER_FILE)).unwrap(),
        std::fs::read(ablated.join(TEACHER_FILE)).unwrap()
    );

    let bundle = data.join("video0000.vft");
    let greedy = actgraph(&["caption", "--ckpt", p(&full), "--bundle", p(&bundle)]);
    let beam1 = actgraph(&["caption", "--ckpt", p(&full), "--bundle", p(&bundle), "--beam", "1"]);
    let again = actgraph(&["caption", "--ckpt", p(&full), "--bundle", p(&bundle)]);
    assert_eq!(code(&greedy), 0, "{}", stderr(&greedy));
    assert_eq!(greedy.stdout, beam1.stdout);
    assert_eq!(greedy.stdout, again.stdout);
    assert_eq!(String::from_utf8(greedy.stdout).unwrap().lines().count(), 1);
    let beam3 = actgraph(&["caption", "--ckpt", p(&full), "--bundle", p(&bundle), "--beam", "3"]);
    assert_eq!(code(&beam3), 0);

    // The student checkpoint alone is enough.
    let student_only = tmp.path().join("student_only");
    std::fs::create_dir(&student_only).unwrap();
    for f in ["model.json", STUDENT_FILE] {
        std::fs::copy(full.join(f), student_only.join(f)).unwrap();
    }
    assert_eq!(code(&actgraph(&["caption", "--ckpt", p(&student_only), "--bundle", p(&bundle)])), 0);

    let teacher_only = tmp.path().join("teacher_only");
    std::fs::create_dir(&teacher_only).unwrap();
    for f in ["model.json", TEACHER_FILE] {
        std::fs::copy(full.join(f), teacher_only.join(f)).unwrap();
    }
    assert_eq!(code(&actgraph(&["caption", "--ckpt", p(&teacher_only), "--bundle", p(&bundle)])), 2);
}

#[test]
fn train_names_corrupt_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 3, 1);
    let cfg = write_config(tmp.path(), SMALL_CONFIG);
    let bad = data.join("video0001.vft");
    let bytes = std::fs::read(&bad).unwrap();
    std::fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    let out = train(&data, &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("video0001.vft"), "{}", stderr(&out));
}

#[test]
fn train_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 2, 1);
    let cfg = write_config(tmp.path(), r#"{"epochs": 2, "learning_rate": 0.1}"#);
    assert_eq!(code(&train(&data, &cfg, &tmp.path().join("out"), &[])), 2);
}

#[test]
fn diverging_training_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 2, 1);
    let cfg = write_config(tmp.path(), r#"{"epochs": 40, "lr": 1e300, "attn_dim": 2, "graph_dim": 2, "decoder": {"d_model": 4, "d_ff": 4, "blocks": 1, "max_len": 10}}"#);
    let out = train(&data, &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn caption_on_missing_tensor_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 3, 3);
    let cfg = write_config(tmp.path(), SMALL_CONFIG);
    let ck = tmp.path().join("ck");
    assert_eq!(code(&train(&data, &cfg, &ck, &[])), 0);
    let empty = tmp.path().join("empty.vft");
    actgraph::features::TensorArchive::new().write(&empty).unwrap();
    assert_eq!(code(&actgraph(&["caption", "--ckpt", p(&ck), "--bundle", p(&empty)])), 2);
}

fn candidates_from_references(data: &Path, out: &Path) {
    let refs = actgraph::features::read_captions(&data.join("captions.jsonl")).unwrap();
    let cands: Vec<_> = refs
        .iter()
        .map(|r| actgraph::metrics::CandidateRecord {
            video_id: r.video_id.clone(),
            caption: r.captions[0].clone(),
        })
        .collect();
    actgraph::features::write_jsonl(out, &cands).unwrap();
}

fn check_schema(v: &serde_json::Value) {
    let schema: serde_json::Value = serde_json::from_str(actgraph::metrics::REPORT_SCHEMA).unwrap();
    let obj = v.as_object().unwrap();
    let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(obj.len(), required.len());
    for key in required {
        let range = &schema["properties"][key];
        if key == "items" {
            for item in obj[key].as_array().unwrap() {
                let item = item.as_object().unwrap();
                assert_eq!(item.len(), 3);
                assert!(item["video_id"].is_string());
                for k in ["rouge_l", "cider"] {
                    let x = item[k].as_f64().unwrap();
                    let r = &schema["properties"]["items"]["items"]["properties"][k];
                    assert!(x >= r["minimum"].as_f64().unwrap() && x <= r["maximum"].as_f64().unwrap());
                }
            }
        } else {
            let x = obj[key].as_f64().unwrap();
            assert!(x >= range["minimum"].as_f64().unwrap() && x <= range["maximum"].as_f64().unwrap());
        }
    }
}

#[test]
fn eval_identical_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 6, 8);
    let cands = tmp.path().join("cands.jsonl");
    candidates_from_references(&data, &cands);
    let out = actgraph(&["eval", "--candidates", p(&cands), "--references", p(&data.join("captions.jsonl"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    check_schema(&value);
    let report: MetricReport = serde_json::from_value(value).unwrap();
    assert_eq!(report.bleu4, 1.0);
    assert_eq!(report.rouge_l, 1.0);
    assert_eq!(report.items.len(), 6);
}

#[test]
fn eval_empty_candidates_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 2, 8);
    let cands = tmp.path().join("cands.jsonl");
    std::fs::write(&cands, "").unwrap();
    let out = actgraph(&["eval", "--candidates", p(&cands), "--references", p(&data.join("captions.jsonl"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn graph_export_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 1, 5);
    let bundle = data.join("video0000.vft");
    let json = actgraph(&["graph-export", "--bundle", p(&bundle), "--format", "json"]);
    assert_eq!(code(&json), 0);
    let g = actgraph::graph::from_json(std::str::from_utf8(&json.stdout).unwrap()).unwrap();
    assert_eq!(g.frames, 6);
    let path = tmp.path().join("g.dot");
    let dot = actgraph(&["graph-export", "--bundle", p(&bundle), "--format", "dot", "--out", p(&path)]);
    assert_eq!(code(&dot), 0);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("digraph"));
    assert_eq!(text.matches(" -> ").count(), g.edge_count());
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let ok = actgraph(&["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let table = String::from_utf8(ok.stdout).unwrap();
    assert!(table.contains("max_rel_err") && table.contains("temporal.long.query") && table.contains("pipeline"));
    let bad = actgraph(&["gradcheck", "--seeds", "2", "--corrupt-gradient"]);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8(bad.stdout).unwrap().contains("FAIL"));
}
