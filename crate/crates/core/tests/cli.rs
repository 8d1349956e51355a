use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn skiptag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skiptag"))
        .args(args)
        .env("SKIPTAG_WORKERS", "1")
        .output()
        .expect("spawn skiptag")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = skiptag(&["synth", "--n", "5", "--seed", "3", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 5);
}

#[test]
fn train_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let model = dir.path().join("m.skt");
    assert_eq!(
        skiptag(&["synth", "--n", "4", "--out", s(&data)]).status.code(),
        Some(0)
    );
    let o = skiptag(&[
        "train",
        "--train",
        s(&data),
        "--out",
        s(&model),
        "--max-epochs",
        "2",
        "--seed",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("m.skt.history.jsonl").exists());

    let p1 = skiptag(&["predict", "--model", s(&model), "--input", s(&data)]);
    let p2 = skiptag(&["predict", "--model", s(&model), "--input", s(&data)]);
    assert_eq!(p1.status.code(), Some(0));
    assert_eq!(p1.stdout, p2.stdout);
    for line in String::from_utf8(p1.stdout).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["tags"].is_array());
    }

    let e = skiptag(&["evaluate", "--model", s(&model), "--data", s(&data)]);
    assert_eq!(e.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&e.stdout).contains("overall"));

    let wrong = skiptag(&["predict", "--model", s(&model), "--input", s(&data), "--mode", "plain"]);
    assert_eq!(wrong.status.code(), Some(4));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    assert_eq!(
        skiptag(&["synth", "--n", "2", "--out", s(&data)]).status.code(),
        Some(0)
    );

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = dir.path().join("m.skt");
    let o = skiptag(&["train", "--train", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(skiptag(&["frobnicate"]).status.code(), Some(2));

    let missing = dir.path().join("missing.jsonl");
    let o = skiptag(&["train", "--train", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));

    let junk = dir.path().join("junk.skt");
    fs::write(&junk, b"not a model").unwrap();
    let o = skiptag(&["evaluate", "--model", s(&junk), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn annotate_marks_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    let out = dir.path().join("out.jsonl");
    fs::write(&input, "about 30 percent of voters agree , and 12% do not .\n").unwrap();
    assert_eq!(
        skiptag(&["annotate", "--input", s(&input), "--out", s(&out)])
            .status
            .code(),
        Some(0)
    );
    let v: serde_json::Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    let idx: Vec<u64> = v["percentages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["token_index"].as_u64().unwrap())
        .collect();
    assert_eq!(idx, vec![1, 8]);
}
