use std::path::Path;
use std::process::{Command, Output};

use uvmnet::net::{count_params, UvmNetConfig};

fn uvmnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvmnet"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#""base_width": 8, "stages": 2, "state_dim": 2, "expansion": 1, "image_size": 16, "eval_scenes": 1"#;

fn write_config(dir: &Path, name: &str, extra: &str) {
    std::fs::write(dir.join(name), format!("{{{TINY}, {extra}}}")).unwrap();
}

#[test]
fn synth_writes_pairs_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = uvmnet(dir.path(), &["synth", "--out", "data", "--count", "4", "--size", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pngs = ["hazy", "GT"]
        .iter()
        .flat_map(|d| std::fs::read_dir(dir.path().join("data").join(d)).unwrap())
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 8);
    let csv = std::fs::read_to_string(dir.path().join("data/scenes.csv")).unwrap();
    assert!(uvmnet(dir.path(), &["synth", "--out", "again", "--count", "4", "--size", "16"]).status.success());
    for sub in ["hazy/00003.png", "GT/00000.png", "scenes.csv"] {
        let read = |root: &str| std::fs::read(dir.path().join(root).join(sub)).unwrap();
        assert_eq!(read("data"), read("again"), "{sub}");
    }
    // synth does not care about the network's divisibility
    assert!(uvmnet(dir.path(), &["synth", "--out", "odd", "--count", "1", "--size", "15"]).status.success());
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().next().unwrap(), "seed,beta,airlight");
}

#[test]
fn train_on_synthesized_folder_and_echo_config() {
    let dir = tempfile::tempdir().unwrap();
    assert!(uvmnet(dir.path(), &["synth", "--out", "data", "--count", "3", "--size", "24"]).status.success());
    write_config(dir.path(), "c.json", r#""steps": 2, "eval_every": 1, "dataset": "data""#);
    let o = uvmnet(dir.path(), &["train", "--config", "c.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("\"dataset\": \"data\""));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().collect::<Vec<_>>()[0], "step,loss,psnr,ssim");
    assert_eq!(metrics.lines().count(), 3);
    for f in ["uvmnet.uvmc", "uvmnet.uvmc.opt", "uvmnet.uvmc.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn resume_continues_with_identical_loss() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "full.json", r#""steps": 3, "eval_every": 1, "metrics": "full.csv", "checkpoint": "full.uvmc""#);
    write_config(d, "head.json", r#""steps": 2, "eval_every": 1, "metrics": "part.csv", "checkpoint": "part.uvmc""#);
    write_config(d, "tail.json", r#""steps": 3, "eval_every": 1, "metrics": "part.csv", "checkpoint": "part.uvmc""#);
    assert!(uvmnet(d, &["train", "--config", "full.json"]).status.success());
    assert!(uvmnet(d, &["train", "--config", "head.json"]).status.success());
    let o = uvmnet(d, &["train", "--config", "tail.json", "--resume", "part.uvmc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("starting at step 2"));
    let full = std::fs::read_to_string(d.join("full.csv")).unwrap();
    let part = std::fs::read_to_string(d.join("part.csv")).unwrap();
    assert_eq!(full, part);
}

#[test]
fn unknown_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#""stepz": 3"#);
    let o = uvmnet(dir.path(), &["train", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));
}

#[test]
fn non_finite_loss_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#""steps": 4, "lr": 1e30"#);
    let o = uvmnet(dir.path(), &["train", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = uvmnet(dir.path(), &["train", "--config", "absent.json"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn variants_train_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    for variant in ["conv1d", "sdp"] {
        write_config(dir.path(), "c.json", &format!(r#""steps": 2, "variant": "{variant}""#));
        let o = uvmnet(dir.path(), &["train", "--config", "c.json"]);
        assert!(o.status.success(), "{variant}: {}", stderr(&o));
    }
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#""steps": 5"#);
    let o = uvmnet(dir.path(), &["ablate", "--config", "c.json", "--steps", "2", "--out", "abl.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("abl.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, v) in rows.iter().zip(["ssm", "conv1d", "sdp"]) {
        assert!(row.starts_with(&format!("{v},2,")), "{row}");
    }
    assert!(stdout(&o).contains("observed ordering"));
}

#[test]
fn infer_identity_checkpoint_and_padding() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // zero steps: the saved net has a zero head, i.e. it is the identity
    std::fs::write(d.join("c.json"), r#"{"base_width": 4, "stages": 4, "state_dim": 2, "expansion": 1, "steps": 0}"#).unwrap();
    assert!(uvmnet(d, &["train", "--config", "c.json"]).status.success());
    let img = image::RgbImage::from_fn(100, 100, |x, y| image::Rgb([(x * 2) as u8, (y * 2) as u8, ((x + y) % 256) as u8]));
    img.save(d.join("in.png")).unwrap();
    let o = uvmnet(d, &["infer", "--ckpt", "uvmnet.uvmc", "--in", "in.png", "--out", "a.png"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("padded to 112x112"), "{}", stderr(&o));
    let out = image::open(d.join("a.png")).unwrap().to_rgb8();
    assert_eq!(out.dimensions(), (100, 100));
    assert_eq!(out, img);
    assert!(uvmnet(d, &["infer", "--ckpt", "uvmnet.uvmc", "--in", "in.png", "--out", "b.png"]).status.success());
    assert_eq!(std::fs::read(d.join("a.png")).unwrap(), std::fs::read(d.join("b.png")).unwrap());
}

#[test]
fn infer_with_mismatched_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.json", r#""steps": 0"#);
    std::fs::write(d.join("wide.json"), r#"{"base_width": 16, "stages": 2, "state_dim": 2, "expansion": 1}"#).unwrap();
    assert!(uvmnet(d, &["train", "--config", "c.json"]).status.success());
    image::RgbImage::new(16, 16).save(d.join("in.png")).unwrap();
    let o = uvmnet(d, &["infer", "--ckpt", "uvmnet.uvmc", "--in", "in.png", "--out", "o.png", "--config", "wide.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stem.weight"), "{}", stderr(&o));
}

#[test]
fn bench_emits_one_row_per_impl_per_rep() {
    let dir = tempfile::tempdir().unwrap();
    let o = uvmnet(dir.path(), &["bench", "--L", "1024", "--N", "4", "--C", "2", "--chunk", "64", "--reps", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "impl,L,N,C,chunk,ns_per_element");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert_eq!(lines.iter().filter(|l| l.starts_with("par,1024,4,2,64,")).count(), 3);
    let o = uvmnet(dir.path(), &["bench", "--impl", "seq", "--L", "64", "--reps", "2"]);
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn count_matches_analytic_counter_and_quotes_paper() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#""steps": 1"#);
    let o = uvmnet(dir.path(), &["count", "--config", "c.json", "--size", "64"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains(&format!("params {} ", count_params(&UvmNetConfig::tiny()))), "{}", stdout(&o));
    let o = uvmnet(dir.path(), &["count"]);
    assert!(stdout(&o).contains("paper reports 19.25M / 173.55G"));
    assert!(stdout(&o).contains(&format!("params {} ", count_params(&UvmNetConfig::default()))));
}

#[test]
fn help_lists_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = uvmnet(dir.path(), &["bench", "--help"]);
    let help = stdout(&o);
    for flag in ["--impl", "--L", "--N", "--C", "--chunk", "--reps", "--threads"] {
        assert!(help.contains(flag), "{flag}");
    }
    assert!(help.contains("[default: 4096]"));
}
