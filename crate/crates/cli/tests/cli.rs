use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mprnet::checkpoint;
use mprnet::config::Config;
use mprnet::image_io::{read_image, write_image};
use mprnet::model::MprNet;
use mprnet::train::train;
use mprnet::{Shape, Tensor};

const TINY: &str = "\
# tiny model for command-line tests
base_width = 4
n_scales = 2
n_cabs_per_scale = 1
n_orbs = 1
n_cabs_per_orb = 1
cab_reduction = 2
patch_size = 16
batch_size = 2
image_size = 32
train_images = 3
val_images = 2
val_every = 5
lr_init = 1e-3
";

fn mprnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mprnet")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn gradient_image(h: usize, w: usize, phase: usize) -> Tensor<f64> {
    Tensor::from_fn(Shape::new(1, 3, h, w).unwrap(), |_, c, y, x| ((y * 7 + x * 3 + c * 50 + phase) % 256) as f64 / 255.0)
}

fn zero_checkpoint(dir: &Path) -> PathBuf {
    let cfg = Config::parse(TINY).unwrap();
    let model = MprNet::<f32>::zeroed(cfg.model.clone()).unwrap();
    let p = dir.join("zero.ckpt");
    checkpoint::save(&p, &model, &cfg).unwrap();
    p
}

#[test]
fn train_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let log = dir.path().join("train.log");
    let ckpt = dir.path().join("model.ckpt");
    let o = mprnet(&[
        "train",
        "--config",
        s(&cfg),
        "--set",
        "iters=10",
        "--set",
        &format!("log_path={}", s(&log)),
        "--set",
        &format!("checkpoint_path={}", s(&ckpt)),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[9].starts_with("10 "));
    assert!(stdout(&o).contains("log_checksum="));
    assert!(ckpt.exists());

    let inspect = mprnet(&["inspect", "--checkpoint", s(&ckpt)]);
    assert!(inspect.status.success());
    assert!(stdout(&inspect).contains("dtype=f32"));
}

#[test]
fn library_and_command_line_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let o = mprnet(&["train", "--config", s(&cfg_path), "--set", "iters=6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut cfg = Config::load(&cfg_path).unwrap();
    cfg.apply_overrides(&["iters=6"]).unwrap();
    let mut model = MprNet::<f32>::new(cfg.model.clone(), cfg.train.seed).unwrap();
    let out = train(&mut model, &cfg).unwrap();
    assert!(stdout(&o).contains(&format!("log_checksum={:016x}", out.checksum)), "{}", stdout(&o));
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = mprnet(&["train", "--config", s(&dir.path().join("missing.cfg"))]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(dir.path());
    let o = mprnet(&["train", "--config", s(&cfg), "--set", "widht=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("widht"), "{}", stderr(&o));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, format!("{TINY}patch_size = 15\n")).unwrap();
    assert_eq!(mprnet(&["train", "--config", s(&bad)]).status.code(), Some(2));
}

#[test]
fn restore_with_zero_model_is_identity_at_any_size() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_checkpoint(dir.path());
    for (h, w) in [(32, 32), (30, 30), (17, 23)] {
        let input = dir.path().join(format!("in{h}x{w}.png"));
        let output = dir.path().join(format!("out{h}x{w}.png"));
        let img = gradient_image(h, w, 5);
        write_image(&input, &img).unwrap();
        let o = mprnet(&["restore", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&output)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let back = read_image::<f64>(&output).unwrap();
        assert_eq!(back.shape(), Shape::new(1, 3, h, w).unwrap());
        assert_eq!(back, read_image::<f64>(&input).unwrap());
    }

    let input = dir.path().join("in32x32.png");
    let output = dir.path().join("all.png");
    let o = mprnet(&["restore", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&output), "--all-stages"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for k in 1..=3 {
        assert!(dir.path().join(format!("all.stage{k}.png")).exists());
    }
    let early = dir.path().join("early.png");
    let o = mprnet(&["restore", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&early), "--exit-stage", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn bad_checkpoints_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_checkpoint(dir.path());
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xff;
    let corrupt = dir.path().join("corrupt.ckpt");
    std::fs::write(&corrupt, &bytes).unwrap();
    let input = dir.path().join("in.png");
    write_image(&input, &gradient_image(16, 16, 0)).unwrap();
    let out = dir.path().join("out.png");
    for ck in [corrupt, dir.path().join("absent.ckpt")] {
        let o = mprnet(&["restore", "--checkpoint", s(&ck), "--input", s(&input), "--output", s(&out)]);
        assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
        assert_eq!(mprnet(&["inspect", "--checkpoint", s(&ck)]).status.code(), Some(3));
    }
}

#[test]
fn eval_reports_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(mprnet(&["eval", "--dir", s(&empty)]).status.code(), Some(4));

    let pairs = dir.path().join("pairs");
    std::fs::create_dir(&pairs).unwrap();
    for (i, name) in ["a", "b"].iter().enumerate() {
        let img = gradient_image(16, 16, 40 * i);
        write_image(&pairs.join(format!("{name}.clean.png")), &img).unwrap();
        write_image(&pairs.join(format!("{name}.degraded.png")), &img).unwrap();
    }
    write_image(&pairs.join("lonely.clean.png"), &gradient_image(16, 16, 1)).unwrap();
    let o = mprnet(&["eval", "--dir", s(&pairs)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("pairs=2"), "{out}");
    assert!(out.contains("inf"), "{out}");
    assert!(stderr(&o).contains("lonely.clean.png"), "{}", stderr(&o));

    let ckpt = zero_checkpoint(dir.path());
    let o = mprnet(&["eval", "--dir", s(&pairs), "--checkpoint", s(&ckpt), "--per-stage", "--y-channel"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("evaluated_on=y-channel"), "{out}");
    assert!(out.contains("stage1") && out.contains("stage3"), "{out}");
}

#[test]
fn selftest_passes_and_detects_faults() {
    let start = std::time::Instant::now();
    let o = mprnet(&["selftest"]);
    assert!(start.elapsed().as_secs() < 120);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let o = mprnet(&["selftest", "--inject-fault"]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAIL gradients"), "{}", stdout(&o));
}
