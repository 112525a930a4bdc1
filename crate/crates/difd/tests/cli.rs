use std::path::Path;
use std::process::{Command, Output};

fn difd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_difd")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&difd(&["train", "--profile", "huge"], d)), 2);
    assert_eq!(code(&difd(&["train", "--bands", "5B"], d)), 2);
    assert_eq!(code(&difd(&["train", "--data", "nowhere"], d)), 3);
    std::fs::write(d.join("bad.json"), "{\"run_id\": 3}").unwrap();
    assert_eq!(code(&difd(&["train", "--config", "bad.json"], d)), 2);
    assert_eq!(code(&difd(&["stats", "--data", "nowhere"], d)), 3);
    assert_eq!(code(&difd(&["train", "--max-epochs", "0", "--data", "x"], d)), 2);
}

#[test]
fn generate_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = difd(&["gen-data", "--out", "data", "--train", "4", "--val", "4", "--test", "4", "--seed", "3"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = difd(&["stats", "--data", "data"], d);
    assert_eq!(code(&o), 0);
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["weights"].as_array().unwrap().len(), 5);

    let o = difd(&["train", "--data", "data", "--out", "runs", "--max-epochs", "2", "--run-id", "r"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("runs/r/metrics.csv").exists());
    std::fs::copy(d.join("runs/r/config.json"), d.join("r.json")).unwrap();

    let o = difd(&["eval", "--config", "r.json", "--checkpoint", "runs/r/best.ckpt", "--split", "test", "--out", "ev"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("ev/eval_test.csv").exists());
    let o = difd(&["eval", "--data", "data", "--variant", "UpNearest", "--checkpoint", "runs/r/best.ckpt"], d);
    assert_eq!(code(&o), 2);

    let o = difd(&["report", "--runs", "runs/r", "--out", "rep"], d);
    assert_eq!(code(&o), 0);
    assert!(d.join("rep/report.md").exists() && d.join("rep/curve_miou.svg").exists());
}

#[test]
fn non_finite_input_exits_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&difd(&["gen-data", "--out", "data", "--train", "4", "--val", "4", "--test", "0"], d)), 0);
    let train = d.join("data/pairs/train");
    for e in std::fs::read_dir(&train).unwrap() {
        let p = e.unwrap().path();
        if p.to_string_lossy().ends_with(".sat.rstx") {
            let mut r = difd::rstx::read(&p).unwrap();
            if let difd_core::RasterData::F32(v) = &mut r.data {
                v.iter_mut().for_each(|x| *x = f32::NAN);
            }
            difd::rstx::write(&p, &r).unwrap();
        }
    }
    let o = difd(&["train", "--data", "data", "--out", "runs", "--max-epochs", "1"], d);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step 1"));
}

#[test]
fn preprocess_tiles_rstx_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = difd_core::synth::SynthSpec::toy();
    let scene = difd_core::synth::synth_scene(8, 0, &spec).unwrap();
    difd::rstx::write(d.join("area_1.aerial.rstx"), &scene.aerial).unwrap();
    difd::rstx::write(d.join("area_1.label.rstx"), &scene.label).unwrap();
    difd::rstx::write(d.join("area_1.sat17.rstx"), &scene.satellite).unwrap();
    let o = difd(
        &["preprocess", "--aerial", "area_1.aerial.rstx", "--label", "area_1.label.rstx", "--sat", "area_1.sat17.rstx", "--out", "ds", "--bands", "4B"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = difd::dataset::read_manifest(&d.join("ds")).unwrap();
    assert_eq!(m.splits["train"].len(), 4);
    let pairs = difd::dataset::load_split(&d.join("ds"), &m, "train", 5).unwrap();
    assert!(pairs.iter().all(|p| p.parent == "area_1" && p.satellite.bands == 4));
    let o = difd(
        &["preprocess", "--aerial", "area_1.aerial.rstx", "--label", "area_1.label.rstx", "--sat", "area_1.aerial.rstx", "--out", "ds2"],
        d,
    );
    assert_eq!(code(&o), 3);
}
