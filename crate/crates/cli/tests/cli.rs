use std::path::Path;
use std::process::{Command, Output};

fn gazeref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazeref"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, scenes: &str, seed: &str) -> String {
    let out = dir.to_str().unwrap();
    let o = gazeref(&[
        "synth",
        "--seed",
        seed,
        "--out",
        out,
        "--num-scenes",
        scenes,
        "--ambiguity",
        "mixed",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("manifest.json").to_str().unwrap().to_string()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

const SMALL_CONFIG: &str = r#"{
  "features": { "grid": 2, "track_len": 2 },
  "sizes": { "embed_dim": 6, "lang_hidden": 6, "visual_hidden": 4, "fusion_hidden": 6 },
  "hyper": { "epochs": 3, "batch_size": 4, "clip_norm": 5.0, "seed": 0 }
}"#;

#[test]
fn synth_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), "5", "42");
    synth(b.path(), "5", "42");
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 11);
    assert_eq!(ta, tb);
}

#[test]
fn validate_cites_the_word_count_rule() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "3", "1");
    let o = gazeref(&["validate", "--manifest", &manifest]);
    assert!(o.status.success(), "{}", stderr(&o));

    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["scenes"][1]["expression"] = "a car".into();
    std::fs::write(&manifest, v.to_string()).unwrap();
    let o = gazeref(&["validate", "--manifest", &manifest]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("qc[a-min-words]: scene s00001"), "{err}");
    assert!(err.contains("error[data]:"), "{err}");
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn usage_errors_exit_1() {
    let o = gazeref(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[usage]:"), "{}", stderr(&o));
    let o = gazeref(&["ablate", "--manifest", "m.json", "--sets", "I,IX"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(gazeref(&["--help"]).status.success());
}

#[test]
fn missing_manifest_is_a_data_error() {
    let o = gazeref(&["validate", "--manifest", "/nonexistent/manifest.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/manifest.json"));
}

#[test]
fn synth_train_eval_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth(&data, "10", "7");
    let config = dir.path().join("train.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let ckpt = dir.path().join("model/ckpt.ftb");
    let ckpt_s = ckpt.to_str().unwrap();
    let o = gazeref(&[
        "--jobs",
        "2",
        "train",
        "--manifest",
        &manifest,
        "--config",
        config.to_str().unwrap(),
        "--out",
        ckpt_s,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(ckpt.exists() && dir.path().join("model/ckpt.ftb.json").exists());

    let run_eval = |jobs: &str, out: &Path| {
        let o = gazeref(&[
            "--jobs",
            jobs,
            "eval",
            "--ckpt",
            ckpt_s,
            "--manifest",
            &manifest,
            "--M",
            "30",
            "--k",
            "1,2,5",
            "--out",
            out.to_str().unwrap(),
            "--overlays",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        o.stdout
    };
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    let r1 = run_eval("1", &e1);
    let r2 = run_eval("3", &e2);
    assert_eq!(r1, r2);
    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    assert!(report["acc_at_1"].is_number());
    assert_eq!(report["m"], 30);
    assert_eq!(report["num_scenes"], 2);
    let acc: Vec<f64> = report["acc"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["percent"].as_f64().unwrap())
        .collect();
    assert!(acc.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(std::fs::read_dir(e1.join("overlays")).unwrap().count(), 2);
    assert!(std::fs::read_to_string(e1.join("report.txt"))
        .unwrap()
        .contains("Acc@K"));

    let o = gazeref(&[
        "score",
        "--ckpt",
        ckpt_s,
        "--scene",
        "s00003",
        "--expr",
        "the red box on the left",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ranked: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let ranked = ranked.as_array().unwrap();
    assert_eq!(ranked.len(), 30);
    assert_eq!(ranked[0]["rank"], 1);
    assert!(ranked[0]["log_score"].as_f64().unwrap() >= ranked[29]["log_score"].as_f64().unwrap());

    let o = gazeref(&["score", "--ckpt", ckpt_s, "--scene", "nope", "--expr", "the red box"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_and_gazemap() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "6", "3");
    let config = dir.path().join("train.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let out = dir.path().join("abl");
    let o = gazeref(&[
        "ablate",
        "--manifest",
        &manifest,
        "--sets",
        "I,IO",
        "--seeds",
        "1,2",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 2);
    assert_eq!(r["rows"][0]["delta_mean"], 0.0);
    assert!(out.join("ablation.txt").exists());

    let ppm = dir.path().join("g/heat.ppm");
    let trace = dir.path().join("data/scenes/s00000.gaze.json");
    let o = gazeref(&[
        "gazemap",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        ppm.to_str().unwrap(),
        "--manifest",
        &manifest,
        "--scene",
        "s00000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(&ppm).unwrap();
    assert!(bytes.starts_with(b"P6\n64 48\n255\n"));
    assert_eq!(bytes.len(), 13 + 64 * 48 * 3);
}
