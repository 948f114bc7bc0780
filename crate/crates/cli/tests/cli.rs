use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgl"))
        .args(args)
        .env_remove("CGL_THREADS")
        .output()
        .expect("spawn cgl")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_ok(out: &Output) {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_is_reproducible_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = cgl(&["--out", s(dir), "--seed", "7", "mrh", "verify", "--suite", "all"]);
        assert_ok(&out);
        assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), s(dir));
    }
    let ra = std::fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("report.json")).unwrap());
    assert_eq!(std::fs::read(a.join("claims.csv")).unwrap(), std::fs::read(b.join("claims.csv")).unwrap());
    let report = json(&a.join("report.json"));
    assert_eq!(report["passed"], true);
    let config = json(&a.join("config.json"));
    assert_eq!(config["seed"], 7);
    assert_eq!(config["command"], "mrh verify");
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("one");
    let out = cgl(&["--out", s(&one), "--threads", "1", "mrh", "verify", "--suite", "single-head", "--trials", "500"]);
    assert_ok(&out);
    let many = tmp.path().join("many");
    let out = Command::new(env!("CARGO_BIN_EXE_cgl"))
        .args(["--out", s(&many), "mrh", "verify", "--suite", "single-head", "--trials", "500"])
        .env("CGL_THREADS", "4")
        .output()
        .unwrap();
    assert_ok(&out);
    assert_eq!(json(&many.join("config.json"))["threads"], 4);
    assert_eq!(std::fs::read(one.join("report.json")).unwrap(), std::fs::read(many.join("report.json")).unwrap());
}

#[test]
fn missing_input_names_the_path_and_leaves_no_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let missing = tmp.path().join("nope.axt");
    let out = cgl(&["--out", s(&dir), "io", "inspect", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
    assert!(!dir.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0, "staging directory left behind");
}

#[test]
fn bad_arguments_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let unknown = cgl(&["--out", s(&dir), "frame", "solve", "-c", "6", "-d", "3", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(1));
    let conflicting = cgl(&["--out", s(&dir), "mrh", "geodesic", "--circle", "100", "--tokens", "x.axt"]);
    assert_eq!(conflicting.status.code(), Some(1));
    let zero_threads = cgl(&["--out", s(&dir), "--threads", "0", "frame", "random", "-c", "6", "-d", "3"]);
    assert_eq!(zero_threads.status.code(), Some(1));
    assert!(!dir.exists());
    assert_eq!(cgl(&["--help"]).status.code(), Some(0));
}

#[test]
fn existing_run_dir_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cgl(&["--out", s(tmp.path()), "frame", "random", "-c", "6", "-d", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inspect_reads_golden_activations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_ok(&cgl(&["--out", s(&dir), "io", "inspect", s(&golden("layer_11.axt"))]));
    let r = json(&dir.join("report.json"));
    assert_eq!(r["dtype"], "f32");
    assert_eq!(r["dims"], serde_json::json!([2, 261, 8]));
    assert_eq!(r["name"], "layer_11");
    assert_eq!(r["sidecar"]["layout"]["n_reg"], 4);
}

#[test]
fn generated_mrh_data_trains_a_good_sae() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tmp.path().join("gen");
    assert_ok(&cgl(&["--out", s(&gen), "mrh", "gen"]));
    let samples = gen.join("samples.axt");
    let train = tmp.path().join("train");
    assert_ok(&cgl(&["--out", s(&train), "sae", "train", "--input", s(&samples), "-c", "128", "-k", "3", "-m", "128"]));
    let r2 = json(&train.join("report.json"))["r2"].as_f64().unwrap();
    assert!(r2 >= 0.95, "r2 = {r2}");

    let enc = tmp.path().join("enc");
    let model = train.join("model");
    assert_ok(&cgl(&["--out", s(&enc), "sae", "encode", "--model", s(&model), "--input", s(&samples)]));
    let r = json(&enc.join("report.json"));
    assert_eq!(r["concepts"], 128);
    assert!(r["mean_active"].as_f64().unwrap() > 0.0);

    let geo = tmp.path().join("geo");
    let dict = train.join("dictionary.axt");
    let codes = enc.join("codes.axt");
    assert_ok(&cgl(&["--out", s(&geo), "geometry", "report", "--dict", s(&dict), "--codes", s(&codes)]));
    let stats = tmp.path().join("stats");
    assert_ok(&cgl(&["--out", s(&stats), "stats", "report", "--codes", s(&codes), "--baselines"]));
    assert!(stats.join("spectrum.csv").is_file());
}

#[test]
fn geodesic_beats_linear_on_a_circle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_ok(&cgl(&["--out", s(&dir), "mrh", "geodesic", "--circle", "1000", "--pairs", "20", "--selection", "farthest"]));
    let c = &json(&dir.join("report.json"))["curves"];
    assert!(c["mean_max_geodesic"].as_f64().unwrap() < c["mean_max_linear"].as_f64().unwrap());
}

#[test]
fn position_pipeline_runs_on_golden_activations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let act = golden("layer_11.axt");
    assert_ok(&cgl(&["--out", s(&dir), "tokens", "position", "--activations", s(&act), "--epochs", "5", "--remove", "2"]));
    let r = json(&dir.join("report.json"));
    assert!(r["accuracy_after_removal"].is_number());
    assert!(dir.join("removed.axt").is_file());
    let map = tmp.path().join("map");
    assert_ok(&cgl(&["--out", s(&map), "tokens", "pca-map", "--activations", s(&act)]));
    let ppm = std::fs::read(map.join("map.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6"));
}
