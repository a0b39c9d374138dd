//! Black-box tests of the command-line surface and its exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fewnerf"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "fewnerf-cli-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_scene(dir: &std::path::Path) -> PathBuf {
    // small images + light quadrature keep the suite quick
    let scene = r#"
background = [0.0, 0.0, 0.0]
taper = 0.12

[[primitives]]
shape = "sphere"
radius = 0.6
center = [0.0, 0.0, 0.0]
albedo = [0.9, 0.3, 0.2]
density = 10.0

[bounds]
min = [-1.6, -1.6, -1.6]
max = [1.6, 1.6, 1.6]

[render]
image_size = 16
camera_radius = 3.0
elevation_deg = 28.0
focal_px = 20.0
near = 1.4
far = 4.6
oracle_samples = 128
"#;
    let path = dir.join("scene.toml");
    std::fs::write(&path, scene).unwrap();
    path
}

fn write_tiny_config(dir: &std::path::Path) -> PathBuf {
    let cfg = r#"
total_iters = 40
batch_size = 16
samples_per_ray = 8
log_interval = 1

[network]
trunk_depth = 2
trunk_width = 12
head_width = 6
skip_layers = [1]
pos_bands = 3
dir_bands = 1
"#;
    let path = dir.join("train.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn fewnerf")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn make_scene_writes_dataset_and_is_deterministic() {
    let dir = temp_dir("make-scene");
    let scene = write_tiny_scene(&dir);
    let out1 = run(bin()
        .args(["make-scene", "--views", "3", "--n-test", "2"])
        .arg("--scene")
        .arg(&scene)
        .arg("--out")
        .arg(dir.join("data")));
    assert_code(&out1, 0);
    for f in [
        "manifest.json",
        "scene.toml",
        "train_000.png",
        "train_001.png",
        "train_002.png",
        "test_003.png",
        "test_004.png",
    ] {
        assert!(dir.join("data").join(f).exists(), "{f} missing");
    }
    let first = std::fs::read(dir.join("data/train_000.png")).unwrap();
    let out2 = run(bin()
        .args(["make-scene", "--views", "3", "--n-test", "2", "--overwrite"])
        .arg("--scene")
        .arg(&scene)
        .arg("--out")
        .arg(dir.join("data")));
    assert_code(&out2, 0);
    let second = std::fs::read(dir.join("data/train_000.png")).unwrap();
    assert_eq!(first, second, "regenerated PNGs must be byte-identical");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn make_scene_rejects_unsupported_view_count() {
    let dir = temp_dir("views7");
    let scene = write_tiny_scene(&dir);
    let out = run(bin()
        .args(["make-scene", "--views", "7"])
        .arg("--scene")
        .arg(&scene)
        .arg("--out")
        .arg(dir.join("data")));
    assert_code(&out, 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn make_scene_refuses_nonempty_output_without_overwrite() {
    let dir = temp_dir("occupied");
    let scene = write_tiny_scene(&dir);
    std::fs::create_dir_all(dir.join("data")).unwrap();
    std::fs::write(dir.join("data/existing.txt"), "x").unwrap();
    let out = run(bin()
        .args(["make-scene", "--views", "3"])
        .arg("--scene")
        .arg(&scene)
        .arg("--out")
        .arg(dir.join("data")));
    assert_code(&out, 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_eval_render_workflow() {
    let dir = temp_dir("workflow");
    let scene = write_tiny_scene(&dir);
    let cfg = write_tiny_config(&dir);
    assert_code(
        &run(bin()
            .args(["make-scene", "--views", "3", "--n-test", "2"])
            .arg("--scene")
            .arg(&scene)
            .arg("--out")
            .arg(dir.join("data"))),
        0,
    );
    // unknown mode is a config error
    let bad = run(bin()
        .args(["train", "--mode", "nonsense"])
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("run-bad")));
    assert_code(&bad, 2);

    // missing dataset is a data error
    let missing = run(bin()
        .args(["train"])
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(dir.join("nope"))
        .arg("--out")
        .arg(dir.join("run-missing")));
    assert_code(&missing, 3);

    let trained = run(bin()
        .args(["train", "--mode", "full"])
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("run")));
    assert_code(&trained, 0);
    assert!(dir.join("run/checkpoint_final.ckpt").exists());
    assert!(dir.join("run/loss.csv").exists());
    assert!(dir.join("run/config.toml").exists());
    assert!(dir.join("run/eval.json").exists());
    assert!(dir.join("run/run_manifest.json").exists());

    // CSV carries all four loss columns
    let csv = std::fs::read_to_string(dir.join("run/loss.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    for col in ["l_s", "l_u", "l_r", "l_o", "l_total"] {
        assert!(header.split(',').any(|h| h == col), "missing column {col}");
    }

    let eval = run(bin()
        .args(["eval"])
        .arg("--run")
        .arg(dir.join("run"))
        .arg("--data")
        .arg(dir.join("data"))
        .args(["--samples", "8"]));
    assert_code(&eval, 0);
    assert!(dir.join("run/eval_cli.json").exists());

    // eval twice -> identical reports
    let eval2 = run(bin()
        .args(["eval"])
        .arg("--run")
        .arg(dir.join("run"))
        .arg("--data")
        .arg(dir.join("data"))
        .args(["--samples", "8"]));
    assert_code(&eval2, 0);
    assert_eq!(eval.stdout, eval2.stdout);

    let render = run(bin()
        .args(["render", "--view", "3", "--samples", "8"])
        .arg("--run")
        .arg(dir.join("run"))
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("render.png")));
    assert_code(&render, 0);
    assert!(dir.join("render.png").exists());

    // resume continues from the final checkpoint without --overwrite
    let resumed = run(bin()
        .args(["train", "--mode", "full", "--iters", "50"])
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("run-resume"))
        .arg("--resume")
        .arg(dir.join("run/checkpoint_final.ckpt")));
    assert_code(&resumed, 0);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_on_missing_checkpoint_is_a_data_error() {
    let dir = temp_dir("nockpt");
    let out = run(bin()
        .args(["eval"])
        .arg("--run")
        .arg(dir.join("absent"))
        .arg("--data")
        .arg(dir.join("absent-data")));
    assert_code(&out, 3);
    std::fs::remove_dir_all(&dir).ok();
}
