// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fcnet_core::data::{read_sicg, write_sicg};

fn fcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcnet")).args(args).output().expect("spawn fcnet")
}

fn ok(args: &[&str]) -> Output {
    let out = fcnet(args);
    assert!(
        out.status.success(),
        "fcnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "version": 1,
  "model": {"T": 4, "T_prime": 4, "C": 1, "H": 16, "W": 16, "patch": 4, "embed_dim": 8,
            "affb_blocks": 1, "hfeb_blocks": 1, "encoder_depth": 4, "lambda": 0.1,
            "hidden": 8, "norm_groups": 2},
  "train": {"steps": 6, "batch": 2, "lr": 0.001, "seed": 3, "val_every": 3, "log_every": 1, "window_stride": 4},
  "ablation": {"use_affb": true, "use_hfeb": true, "use_freq_loss": true}
}"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        ok(&["synth", "--days", "60", "--size", "16x16", "--seed", "5", "--out", s(&f.path("data"))]);
        std::fs::write(f.path("small.json"), SMALL).unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (data, cfg, ckpt) = (self.path("data"), self.path("small.json"), self.path(out));
        let mut args = vec!["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt)];
        args.extend_from_slice(extra);
        fcnet(&args)
    }
}

#[test]
fn synth_writes_shards_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--days", "730", "--size", "16x16", "--seed", "7", "--out", s(&a)]);
    ok(&["synth", "--days", "730", "--size", "16x16", "--seed", "7", "--out", s(&b)]);
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["mask.pgm", "shard-0000.sicg", "shard-0001.sicg"]);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n}");
    }
    let days: usize = ["shard-0000.sicg", "shard-0001.sicg"]
        .iter()
        .map(|n| read_sicg(a.join(n)).unwrap().days())
        .sum();
    assert_eq!(days, 730);
    assert_eq!(read_sicg(a.join("shard-0001.sicg")).unwrap().start_day(), 365);
    let mask = std::fs::read(a.join("mask.pgm")).unwrap();
    assert!(mask.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(mask.len(), 13 + 256);
}

#[test]
fn synth_rejects_bad_sizes() {
    let dir = tempfile::tempdir().unwrap();
    for size in ["15x16", "16x17", "sixteen", "16"] {
        let out = fcnet(&["synth", "--days", "10", "--size", size, "--out", s(dir.path())]);
        assert_eq!(code(&out), 2, "{size}");
    }
}

#[test]
fn train_emits_checkpoint_log_and_config_reproducibly() {
    let f = Fixture::new();
    let first = f.train("a.fcnc", &[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(f.train("b.fcnc", &[]).status.success());
    for suffix in ["", ".log.csv", ".config.json"] {
        let a = std::fs::read(f.path(&format!("a.fcnc{suffix}"))).unwrap();
        let b = std::fs::read(f.path(&format!("b.fcnc{suffix}"))).unwrap();
        assert_eq!(a, b, "artifact {suffix:?} differs between identical runs");
    }
    let log = std::fs::read_to_string(f.path("a.fcnc.log.csv")).unwrap();
    assert!(log.starts_with("step,lr,total_loss,pred_loss,freq_loss,val_mae\n"));
    assert_eq!(log.lines().count(), 7);
}

#[test]
fn disable_flags_map_to_ablations() {
    let f = Fixture::new();
    let out = f.train("c.fcnc", &["--disable", "affb", "--disable", "freqloss"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("c.fcnc.config.json")).unwrap()).unwrap();
    assert_eq!(cfg["ablation"]["use_affb"], false);
    assert_eq!(cfg["ablation"]["use_hfeb"], true);
    assert_eq!(cfg["ablation"]["use_freq_loss"], false);
    assert!(String::from_utf8_lossy(&out.stdout).contains("w/o AFFB&L_freq"));
    let log = std::fs::read_to_string(f.path("c.fcnc.log.csv")).unwrap();
    assert!(log.lines().skip(1).all(|l| l.split(',').nth(4) == Some("0")));

    assert_eq!(code(&f.train("d.fcnc", &["--disable", "tau"])), 2);
}

#[test]
fn bad_config_names_the_field() {
    let f = Fixture::new();
    std::fs::write(f.path("small.json"), SMALL.replace("\"embed_dim\"", "\"embed_dims\"")).unwrap();
    let out = f.train("e.fcnc", &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("embed_dims"));
    std::fs::write(f.path("small.json"), SMALL.replace("\"H\": 16", "\"H\": 32")).unwrap();
    assert_eq!(code(&f.train("e.fcnc", &[])), 2);
    std::fs::write(f.path("small.json"), SMALL.replace("\"version\": 1", "\"version\": 2")).unwrap();
    assert_eq!(code(&f.train("e.fcnc", &[])), 2);
}

#[test]
fn predict_and_evaluate_roundtrip() {
    let f = Fixture::new();
    assert!(f.train("m.fcnc", &[]).status.success());
    let shard = read_sicg(f.path("data/shard-0000.sicg")).unwrap();
    let input = shard.slice_days(20, 4).unwrap();
    write_sicg(&input, f.path("in.sicg")).unwrap();
    let (ckpt, inp) = (f.path("m.fcnc"), f.path("in.sicg"));

    ok(&["predict", "--ckpt", s(&ckpt), "--input", s(&inp), "--steps", "0", "--out", s(&f.path("p0.sicg"))]);
    let p0 = read_sicg(f.path("p0.sicg")).unwrap();
    assert_eq!(p0.days(), 4);
    assert_eq!(p0.start_day(), 24);

    ok(&["predict", "--ckpt", s(&ckpt), "--input", s(&inp), "--steps", "3", "--out", s(&f.path("p3.sicg"))]);
    ok(&["predict", "--ckpt", s(&ckpt), "--input", s(&inp), "--steps", "3", "--out", s(&f.path("p3b.sicg"))]);
    let p3 = read_sicg(f.path("p3.sicg")).unwrap();
    assert_eq!(p3.days(), 16);
    assert_eq!(p3.slice_days(0, 4).unwrap(), p0);
    assert_eq!(std::fs::read(f.path("p3.sicg")).unwrap(), std::fs::read(f.path("p3b.sicg")).unwrap());

    let (truth, data, csv, maps) = (f.path("data/shard-0000.sicg"), f.path("data"), f.path("m.csv"), f.path("maps"));
    ok(&[
        "evaluate", "--pred", s(&f.path("p3.sicg")), "--truth", s(&truth), "--active-from", s(&data),
        "--out", s(&csv), "--maps", s(&maps),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "day,mae,rmse,nse,bacc,sie_pred,sie_true");
    assert_eq!(lines.len(), 18);
    assert!(lines[17].starts_with("ALL,"));
    for kind in ["pred", "truth", "diff"] {
        let img = std::fs::read(maps.join(format!("{kind}-00024.pgm"))).unwrap();
        assert!(img.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(img.len(), 13 + 256);
    }
    assert_eq!(std::fs::read_dir(&maps).unwrap().count(), 48);
}

#[test]
fn identical_inputs_score_perfectly() {
    let f = Fixture::new();
    let shard = read_sicg(f.path("data/shard-0000.sicg")).unwrap();
    write_sicg(&shard.slice_days(30, 5).unwrap(), f.path("same.sicg")).unwrap();
    let (same, data, csv, maps) = (f.path("same.sicg"), f.path("data"), f.path("s.csv"), f.path("maps"));
    ok(&[
        "evaluate", "--pred", s(&same), "--truth", s(&same), "--active-from", s(&data), "--out", s(&csv),
        "--maps", s(&maps),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], "0", "{line}");
        assert_eq!(cols[4], "100", "{line}");
    }
    let diff = std::fs::read(maps.join("diff-00030.pgm")).unwrap();
    assert!(diff[13..].iter().all(|&b| b == 128));
}

#[test]
fn refusals_carry_exit_codes() {
    let f = Fixture::new();
    assert!(f.train("m.fcnc", &[]).status.success());
    let shard = read_sicg(f.path("data/shard-0000.sicg")).unwrap();
    write_sicg(&shard.slice_days(0, 4).unwrap(), f.path("in.sicg")).unwrap();
    std::fs::write(f.path("other.json"), SMALL.replace("\"lambda\": 0.1", "\"lambda\": 0.2")).unwrap();
    let (ckpt, inp, other, out) = (f.path("m.fcnc"), f.path("in.sicg"), f.path("other.json"), f.path("o.sicg"));
    let refused = fcnet(&["predict", "--ckpt", s(&ckpt), "--input", s(&inp), "--out", s(&out), "--config", s(&other)]);
    assert_eq!(code(&refused), 3);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("fingerprint"));

    let missing = fcnet(&["predict", "--ckpt", s(&f.path("nope.fcnc")), "--input", s(&inp), "--out", s(&out)]);
    assert_ne!(code(&missing), 0);

    std::fs::write(f.path("junk.sicg"), b"not a grid").unwrap();
    let junk = fcnet(&["predict", "--ckpt", s(&ckpt), "--input", s(&f.path("junk.sicg")), "--out", s(&out)]);
    assert_eq!(code(&junk), 3);

    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--days", "20", "--size", "8x8", "--out", s(dir.path())]);
    let small = dir.path().join("shard-0000.sicg");
    let (csv, data) = (f.path("x.csv"), f.path("data"));
    let mismatch = fcnet(&["evaluate", "--pred", s(&small), "--truth", s(&inp), "--active-from", s(&data), "--out", s(&csv)]);
    assert_eq!(code(&mismatch), 3);

    assert_eq!(code(&fcnet(&["train", "--data", s(&data)])), 2);
    assert_eq!(code(&fcnet(&["frobnicate"])), 2);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["default.json", "desk.json"] {
        let run = fcnet_core::RunConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        run.model().validate().unwrap();
    }
}
