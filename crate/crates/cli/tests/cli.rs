use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rainlane_core::kpn::{KpnArch, KpnModel};
use rainlane_core::metrics::DepthMap;
use rainlane_core::{road_scene, save_checkpoint, save_image, DlkpnModel};

fn rainlane(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rainlane"))
        .args(args)
        .env_remove("RAINLANE_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = rainlane(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn scenes(dir: &Path, n: u64, side: usize) -> PathBuf {
    let src = dir.join("clean");
    fs::create_dir_all(&src).unwrap();
    for i in 0..n {
        save_image(
            &road_scene(i, side, side).unwrap(),
            src.join(format!("s{i}.png")),
        )
        .unwrap();
    }
    src
}

fn identity_checkpoint(dir: &Path) -> PathBuf {
    let arch = KpnArch {
        in_channels: 3,
        hidden: vec![2],
        ksize: 3,
        levels: 2,
    };
    let id = KpnModel::identity(&arch).unwrap();
    let path = dir.join("identity.ckpt");
    save_checkpoint(&DlkpnModel::new(id.clone(), id).unwrap(), &path).unwrap();
    path
}

/// Exactly one stderr line in the documented format.
fn assert_error_line(o: &Output, kind: &str, code: i32) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err
        .lines()
        .filter(|l| l.starts_with("rainlane: error["))
        .collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(
        lines[0].starts_with(&format!("rainlane: error[{kind}]: ")),
        "{err}"
    );
}

#[test]
fn usage_errors_exit_1() {
    assert_error_line(&rainlane(&[]), "usage", 1);
    assert_error_line(&rainlane(&["synth"]), "usage", 1);
    assert_error_line(&rainlane(&["frobnicate"]), "usage", 1);
    assert_error_line(
        &rainlane(&["--threads", "0", "synth", "x.png", "--out", "o"]),
        "usage",
        1,
    );
    assert_error_line(
        &rainlane(&["synth", "x.png", "--out", "o", "--gamma", "1.5"]),
        "usage",
        1,
    );
    assert_error_line(&rainlane(&["eval-recon"]), "usage", 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let out = dir.path().join("out");
    assert_error_line(
        &rainlane(&["synth", p(&missing), "--out", p(&out)]),
        "data",
        2,
    );

    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let src = scenes(dir.path(), 1, 16);
    let img = src.join("s0.png");
    assert_error_line(
        &rainlane(&[
            "infer",
            "--checkpoint",
            p(&garbage),
            "--out",
            p(&out),
            p(&img),
        ]),
        "data",
        2,
    );
}

#[test]
fn empty_ground_truth_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.png");
    let gt = dir.path().join("gt.png");
    DepthMap::from_depths(2, 2, vec![1.0; 4])
        .unwrap()
        .save_png16(&pred)
        .unwrap();
    DepthMap::new(2, 2, vec![0.0; 4], vec![false; 4])
        .unwrap()
        .save_png16(&gt)
        .unwrap();
    let o = rainlane(&["eval-depth", "--pair", p(&pred), p(&gt)]);
    assert_error_line(&o, "data", 2);
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenes(dir.path(), 2, 16);
    let data = dir.path().join("data");
    ok(&["build-dataset", "--src", p(&src), "--out", p(&data)]);
    let o = rainlane(&[
        "train",
        "--manifest",
        p(&data.join("manifest.json")),
        "--out",
        p(&dir.path().join("m.ckpt")),
        "--layer",
        "1",
        "--lr",
        "1e300",
        "--steps",
        "3",
        "--batch",
        "1",
        "--crop",
        "8",
        "--hidden",
        "2",
        "--levels",
        "1",
    ]);
    assert_error_line(&o, "numerical", 3);
}

#[test]
fn help_documents_subcommands_and_flags() {
    let top = stdout(&ok(&["--help"]));
    for cmd in [
        "synth",
        "build-dataset",
        "train",
        "infer",
        "eval-recon",
        "eval-depth",
        "bench",
        "pipeline",
    ] {
        assert!(top.contains(cmd), "missing {cmd}");
    }
    let synth = stdout(&ok(&["synth", "--help"]));
    for flag in [
        "--seed",
        "--beta",
        "--gamma",
        "--lambda",
        "--angle",
        "--config",
        "--threads",
    ] {
        assert!(synth.contains(flag), "synth help lacks {flag}");
    }
    let train = stdout(&ok(&["train", "--help"]));
    for flag in [
        "--layer",
        "--init",
        "--lr",
        "--steps",
        "--hidden",
        "--eval-csv",
    ] {
        assert!(train.contains(flag), "train help lacks {flag}");
    }
}

#[test]
fn synth_writes_intermediates() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenes(dir.path(), 1, 24);
    let out = dir.path().join("out");
    ok(&[
        "synth",
        p(&src.join("s0.png")),
        "--out",
        p(&out),
        "--seed",
        "4",
        "--emit-intermediates",
    ]);
    for f in [
        "s0.png",
        "s0_o1.png",
        "s0_o2.png",
        "s0_rain.png",
        "s0_td.png",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let first = fs::read(out.join("s0.png")).unwrap();
    ok(&[
        "synth",
        p(&src.join("s0.png")),
        "--out",
        p(&out),
        "--seed",
        "4",
    ]);
    assert_eq!(first, fs::read(out.join("s0.png")).unwrap());
}

#[test]
fn config_file_is_applied_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenes(dir.path(), 1, 24);
    let input = src.join("s0.png");
    let cfg = dir.path().join("synth.toml");
    fs::write(
        &cfg,
        "[rain]\ndensity = 0.0\n[mask]\ngamma = 1.0\n[fog]\nlambda = 0.0\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", p(&input), "--out", p(&a), "--config", p(&cfg)]);
    // No streaks, no darkening and no fog leave the image untouched.
    assert_eq!(
        fs::read(a.join("s0.png")).unwrap(),
        fs::read(&input).unwrap()
    );
    ok(&[
        "synth",
        p(&input),
        "--out",
        p(&b),
        "--config",
        p(&cfg),
        "--density",
        "0.05",
    ]);
    assert_ne!(
        fs::read(b.join("s0.png")).unwrap(),
        fs::read(&input).unwrap()
    );
}

#[test]
fn dataset_train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenes(dir.path(), 4, 24);
    let data = dir.path().join("data");
    let o = ok(&[
        "build-dataset",
        "--src",
        p(&src),
        "--out",
        p(&data),
        "--split",
        "0.75",
        "--seed",
        "1",
    ]);
    assert!(stdout(&o).contains("3 train, 1 test"), "{}", stdout(&o));
    let manifest = data.join("manifest.json");

    let ckpt = dir.path().join("model.ckpt");
    let eval_csv = dir.path().join("eval.csv");
    let tiny = [
        "--steps", "4", "--batch", "1", "--crop", "16", "--hidden", "2", "--levels", "2",
    ];
    let mut args = vec![
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&ckpt),
        "--eval-every",
        "2",
    ];
    args.extend(["--eval-csv", p(&eval_csv)]);
    args.extend(tiny);
    ok(&args);
    let csv = fs::read_to_string(&eval_csv).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "layer,step,train_loss,test_psnr_db,test_ssim"
    );
    // Two evaluations for each of the two layers.
    assert_eq!(csv.lines().count(), 5, "{csv}");

    let layer1 = dir.path().join("l1.ckpt");
    let mut args = vec![
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&layer1),
        "--layer",
        "1",
    ];
    args.extend(tiny);
    ok(&args);
    let mut args = vec![
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&ckpt),
        "--layer",
        "2",
    ];
    args.extend(tiny);
    assert_error_line(&rainlane(&args), "usage", 1);
    args.extend(["--init", p(&layer1)]);
    ok(&args);

    let restored = dir.path().join("restored");
    let rainy = data.join("rainy");
    let inputs: Vec<PathBuf> = fs::read_dir(&rainy)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let mut args = vec![
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&restored),
        "--emit-mid",
    ];
    args.extend(inputs.iter().map(|i| p(i)));
    ok(&args);
    for i in &inputs {
        let stem = i.file_stem().unwrap().to_str().unwrap();
        assert!(restored.join(format!("{stem}.png")).is_file());
        assert!(restored.join(format!("{stem}_mid.png")).is_file());
    }

    let table = dir.path().join("recon.csv");
    ok(&[
        "eval-recon",
        "--manifest",
        p(&manifest),
        "--restored-dir",
        p(&restored),
        "--split",
        "test",
        "--csv",
        p(&table),
    ]);
    let csv = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image,psnr_db,ssim");
    assert_eq!(lines.len(), 3, "one test image plus the mean: {csv}");
    assert!(lines[2].starts_with("mean,"));
}

#[test]
fn eval_recon_on_explicit_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenes(dir.path(), 2, 16);
    let (a, b) = (src.join("s0.png"), src.join("s1.png"));
    let o = ok(&["eval-recon", "--pair", p(&a), p(&a), "--pair", p(&b), p(&a)]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "{text}");
    assert!(
        lines[2].contains("100.0000") && lines[2].contains("1.0000"),
        "{text}"
    );
}

#[test]
fn eval_depth_scores_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let depths: Vec<f64> = (1..=16).map(f64::from).collect();
    DepthMap::from_depths(4, 4, depths.clone())
        .unwrap()
        .save_png16(gt.join("a.png"))
        .unwrap();
    let scaled = depths.iter().map(|d| d * 1.25).collect();
    DepthMap::from_depths(4, 4, scaled)
        .unwrap()
        .save_png16(pred.join("a.png"))
        .unwrap();
    let csv = dir.path().join("depth.csv");
    ok(&[
        "eval-depth",
        "--pred-dir",
        p(&pred),
        "--gt-dir",
        p(&gt),
        "--csv",
        p(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "image,abs_rel,sq_rel,rmse,rmse_log,log10,delta1,delta2,delta3"
    );
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[1], "0.2500");
    assert_eq!(&cells[6..], ["0.0000", "1.0000", "1.0000"]);
}

#[test]
fn pipeline_with_identity_checkpoint_keeps_rainy_scores() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenes(dir.path(), 2, 24);
    let ckpt = identity_checkpoint(dir.path());
    let gt = dir.path().join("gt");
    fs::create_dir_all(&gt).unwrap();
    for i in 0..2 {
        DepthMap::from_depths(24, 24, vec![10.0; 576])
            .unwrap()
            .save_png16(gt.join(format!("s{i}.png")))
            .unwrap();
    }
    let out = dir.path().join("run");
    // The stand-in depth model copies a fixed map; one image name makes it fail.
    let fixed = gt.join("s0.png");
    let depth_cmd = format!(
        "case {{in}} in *s1.png) exit 7;; esac; cp {} {{out}}",
        p(&fixed)
    );
    ok(&[
        "pipeline",
        "--clean-dir",
        p(&src),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&out),
        "--seed",
        "5",
        "--depth-cmd",
        &depth_cmd,
        "--gt-depth-dir",
        p(&gt),
    ]);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(summary.as_bytes());
    let rows: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3, "{summary}");
    for r in &rows[..2] {
        assert_eq!(&r[1], &r[3], "identity restoration keeps PSNR: {summary}");
        assert_eq!(&r[2], &r[4]);
    }
    assert_eq!(
        (&rows[0][5], &rows[0][6], &rows[0][7]),
        ("0.0000", "0.0000", "ok")
    );
    assert!(rows[1][7].starts_with("depth failed"), "{summary}");
    assert_eq!(&rows[2][7], "1 failed");
    for sub in [
        "rainy/s0.png",
        "restored/s1.png",
        "depth/s0_rainy.png",
        "depth/s0_restored.png",
    ] {
        assert!(out.join(sub).is_file(), "{sub}");
    }
    let depth = fs::read_to_string(out.join("depth_metrics.csv")).unwrap();
    assert!(depth.starts_with("image,input,abs_rel,"), "{depth}");
    assert_eq!(
        fs::read(out.join("rainy/s0.png")).unwrap(),
        fs::read(out.join("restored/s0.png")).unwrap()
    );
}

#[test]
fn bench_writes_fixed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenes(dir.path(), 1, 24);
    let ckpt = identity_checkpoint(dir.path());
    let csv = dir.path().join("bench.csv");
    let o = ok(&[
        "bench",
        "--checkpoint",
        p(&ckpt),
        "--image",
        p(&src.join("s0.png")),
        "--iterations",
        "3",
        "--warmup",
        "1",
        "--csv",
        p(&csv),
    ]);
    assert!(stdout(&o).contains("single_layer"));
    let text = fs::read_to_string(&csv).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), 17);
    let row = reader.records().next().unwrap().unwrap();
    assert_eq!(
        row.iter().take(5).collect::<Vec<_>>(),
        ["24", "24", "3", "1", "1"]
    );
    assert_error_line(
        &rainlane(&[
            "bench",
            "--checkpoint",
            p(&ckpt),
            "--image",
            p(&src.join("s0.png")),
            "--iterations",
            "0",
        ]),
        "usage",
        1,
    );
}

#[test]
fn threads_flag_and_env_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenes(dir.path(), 1, 16);
    let ckpt = identity_checkpoint(dir.path());
    let csv = dir.path().join("bench.csv");
    let img = src.join("s0.png");
    let base = [
        "bench",
        "--checkpoint",
        p(&ckpt),
        "--image",
        p(&img),
        "--iterations",
        "1",
        "--csv",
        p(&csv),
    ];
    let mut args = vec!["--threads", "2"];
    args.extend(base);
    ok(&args);
    assert!(fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .contains(",2,"));
    let o = Command::new(env!("CARGO_BIN_EXE_rainlane"))
        .args(base)
        .env("RAINLANE_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("16,16,1,3,3,"));
}
