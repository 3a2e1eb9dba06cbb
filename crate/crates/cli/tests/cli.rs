use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossview")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn synth(dir: &Path, extra: &[&str]) {
    let out = dir.display().to_string();
    let mut args = vec!["synth", "--out", out.as_str(), "--classes", "12", "--dim", "6", "--seed", "5"];
    args.extend(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    synth(&t.path().join("a"), &[]);
    synth(&t.path().join("b"), &[]);
    for f in ["x.csv", "z.csv", "labels_x.csv", "labels_z.csv", "manifest.json"] {
        let a = std::fs::read(t.path().join("a").join(f)).unwrap();
        let b = std::fs::read(t.path().join("b").join(f)).unwrap();
        if f == "manifest.json" {
            // only the output path differs
            assert_eq!(a.len(), b.len());
        } else {
            assert_eq!(a, b, "{f}");
        }
    }
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(t.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["classes"], 12);
    assert_eq!(m["config"]["seed"], "5");
}

#[test]
fn train_writes_model_and_sidecar() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    synth(&d, &["--noise", "0.2"]);
    for method in ["xqda", "kxqda"] {
        let model = t.path().join(format!("{method}.bin"));
        let o = run(&[
            "train",
            "--method",
            method,
            "--data",
            d.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(model.exists());
        assert!(model.with_extension("json").exists());
    }
}

#[test]
fn eval_reports_and_echoes_config() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    synth(&d, &["--noise", "0.2"]);
    let cfg = t.path().join("run.cfg");
    std::fs::write(&cfg, "# eval settings\nmethod = kxqda\nkernel = linear\ntrials = 2\n").unwrap();
    let r = t.path().join("r");
    let o = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "3",
        "--data",
        d.to_str().unwrap(),
        "--out",
        r.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("r=1") && stdout.contains("r=20"), "{stdout}");
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(r.join("report.json")).unwrap()).unwrap();
    // flag beats file
    assert_eq!(rep["config"]["trials"], "3");
    assert_eq!(rep["config"]["kernel"], "linear");
    assert_eq!(rep["trials"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(r.join("cmc.csv")).unwrap();
    assert!(csv.starts_with("rank,mean_accuracy"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.cfg");
    std::fs::write(&cfg, "trails = 3\n").unwrap();
    let o = run(&["eval", "--config", cfg.to_str().unwrap(), "--data", "x"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trails"));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&["eval", "--bogus"])), 1);
    assert_eq!(code(&run(&["train", "--method", "kissme", "--data", "x", "--out", "y"])), 1);
    assert_eq!(code(&run(&["eval", "--data", "/nonexistent/dir"])), 2);

    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    synth(&d, &["--noise", "0"]);
    let o = run(&["eval", "--method", "xqda", "--trials", "2", "--data", d.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selftest_exit_codes() {
    let o = run(&["selftest", "--quick", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = run(&["selftest", "--quick", "--quiet", "--fault", "flip-e"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn bench_writes_json() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("bench.json");
    let o = run(&["bench", "--dims", "10,20", "--sizes", "20", "--reps", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["report"]["cells"].as_array().unwrap().len(), 2);
    assert_eq!(v["config"]["reps"], "1");
}
