use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bridgekit::config::ExperimentConfig;
use bridgekit::store;
use bridgekit::tensor_file::{Dtype, TensorFile};
use bridgekit_core::model::{NetConfig, VelocityNet};
use bridgekit_core::{Schedule, ScheduleKind, VelocityField};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bridgekit"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn summary(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn schedule_dump_midpoint_gamma() {
    let out = run(&["schedule", "dump", "--kind", "linear", "--gamma-max", "0.1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 101);
    let mid = rows
        .iter()
        .find(|r| r[col("t")].parse::<f64>().unwrap() == 0.5)
        .unwrap();
    assert_eq!(mid[col("gamma")].parse::<f64>().unwrap(), 0.05);
    assert_eq!(mid[col("alpha")].parse::<f64>().unwrap(), 0.5);
}

#[test]
fn schedule_dump_writes_file_for_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["linear", "snr", "rectified"] {
        let path = dir.path().join(format!("{kind}.csv"));
        let out = run(&[
            "schedule",
            "dump",
            "--kind",
            kind,
            "--points",
            "11",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        let rows = bridgekit::output::read_matrix(&path).unwrap();
        assert_eq!(rows.len(), 11);
        assert_eq!((rows[0][1], rows[0][2]), (1.0, 0.0));
        assert_eq!((rows[10][1], rows[10][2]), (0.0, 1.0));
    }
}

#[test]
fn verify_bound_on_the_oracle_config_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify-bound",
        "--config",
        config("gaussian_oracle.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = summary(dir.path());
    assert_eq!(printed, s);
    assert_eq!(s["violations"], 0);
    assert_eq!(s["trials"], 100);
    assert_eq!(s["passed"], true);
    let budgets = bridgekit::output::read_matrix(&dir.path().join("budgets.csv")).unwrap();
    assert_eq!(budgets.len(), 100);
}

#[test]
fn strict_mode_turns_violations_into_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[sampler]\nfinal_step = \"euler\"\n\n[analysis]\nsteps = [2, 4, 8]\nreference_steps = 4096\n",
    );
    let out_dir = dir.path().join("out");
    let args = [
        "convergence",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    let strict = run(&args);
    assert_eq!(strict.status.code(), Some(2));
    let s = summary(&out_dir);
    assert_eq!(s["invariant_violations"].as_array().unwrap().len(), 1);

    let mut relaxed = args.to_vec();
    relaxed.push("--no-strict");
    assert_eq!(run(&relaxed).status.code(), Some(0));
}

#[test]
fn every_output_directory_echoes_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("gaussian_oracle.toml");
    for cmd in [
        &["domains", "dump"][..],
        &["sample"],
        &["translate"],
        &["invert"],
        &["convergence"],
    ] {
        let out_dir = dir.path().join(cmd.join("_"));
        let mut args = cmd.to_vec();
        args.extend(["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(run(&args).status.success(), "{cmd:?}");
        let echoed = fs::read_to_string(out_dir.join("resolved_config.toml")).unwrap();
        let parsed = ExperimentConfig::from_toml(&echoed).unwrap();
        let mut original = ExperimentConfig::load(&cfg).unwrap();
        original.output = out_dir.clone();
        assert_eq!(parsed, original);
        assert!(out_dir.join("summary.json").exists());
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        for (cmd, cfg) in [
            (&["verify-bound"][..], "gaussian_noisy_field.toml"),
            (&["domains", "dump"], "mixture_train.toml"),
            (&["sample", "--trajectories"], "gaussian_oracle.toml"),
            (&["encoder", "fit"], "encoder.toml"),
        ] {
            let sub = out_dir.join(cmd[0]);
            let mut args = cmd.to_vec();
            let path = config(cfg);
            args.extend(["--config", path.to_str().unwrap(), "--out", sub.to_str().unwrap()]);
            assert!(run(&args).status.success(), "{cmd:?}");
        }
        let mut snap = Vec::new();
        for sub in ["verify-bound", "domains", "sample", "encoder"] {
            snap.push(tree(&out_dir.join(sub)));
        }
        snapshots.push(snap);
        fs::remove_dir_all(&out_dir).unwrap();
    }
    assert!(snapshots[0].iter().all(|files| files.len() >= 3));
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn short_training_run_feeds_the_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("train/model.bin");
    let cfg = write_config(
        dir.path(),
        &format!(
            "seed = 4\n\n[field]\nkind = \"model\"\ncheckpoint = {:?}\n\n[model]\ndim = 1\nhidden = 16\n\n\
             [training]\nsteps = 100\nbatch = 32\neval_every = 10\nvalidation_size = 64\n\n[sampler]\nsteps = 32\n",
            ckpt.to_str().unwrap()
        ),
    );
    let train_dir = dir.path().join("train");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
        "--no-strict",
    ]);
    assert!(out.status.success());
    let s = summary(&train_dir);
    assert!(s["oracle_rmse"].as_f64().unwrap().is_finite());
    assert_eq!(
        bridgekit::output::read_matrix(&train_dir.join("loss.csv"))
            .unwrap()
            .len(),
        10
    );

    let sample_dir = dir.path().join("sample");
    assert!(run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        sample_dir.to_str().unwrap()
    ])
    .status
    .success());
    let rows = bridgekit::output::read_matrix(&sample_dir.join("samples.csv")).unwrap();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn model_checkpoint_must_match_the_world() {
    let dir = tempfile::tempdir().unwrap();
    let net = VelocityNet::new(
        &NetConfig {
            dim: 2,
            ..NetConfig::default()
        },
        Schedule::new(ScheduleKind::RectifiedFlow).unwrap(),
    )
    .unwrap();
    let ckpt = dir.path().join("m.bin");
    store::save_model(&net, &ckpt).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("[field]\nkind = \"model\"\ncheckpoint = {:?}\n", ckpt.to_str().unwrap()),
    );
    let out = run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("latent dimension"));
}

#[test]
fn encoder_fit_then_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("encoder.toml");
    let fit = dir.path().join("fit");
    assert!(run(&[
        "encoder",
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        fit.to_str().unwrap()
    ])
    .status
    .success());
    let s = summary(&fit);
    assert!(s["orthonormality_error"].as_f64().unwrap() <= 1e-10);
    let (p, meta) = store::load_projector(&fit.join("projector.bin")).unwrap();
    assert_eq!((p.rank(), p.dim(), meta.patch), (16, 24, 8));

    let apply = dir.path().join("apply");
    let out = run(&[
        "encoder",
        "apply",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        apply.to_str().unwrap(),
        "--projector",
        fit.join("projector.bin").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let s = summary(&apply);
    assert_eq!(s["endpoint_dim"], 16);
    assert!(s["cross_domain_alignment"]["cknna"].as_f64().unwrap().abs() <= 1.0);
}

#[test]
fn metrics_of_a_set_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let mut text = String::from("f0,f1,f2\n");
    for i in 0..30 {
        let x = i as f64;
        text += &format!("{},{},{}\n", (x * 0.7).sin(), (x * 1.3).cos(), x / 30.0 - 0.5);
    }
    fs::write(&a, text).unwrap();
    let out = run(&[
        "metrics",
        "--a",
        a.to_str().unwrap(),
        "--b",
        a.to_str().unwrap(),
        "--k",
        "5",
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["cosine_mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["cknna"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(v.get("delta_cosim").is_none());
}

#[test]
fn shipped_configs_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
        assert_eq!(cfg.to_toml(), again.to_toml());
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn extreme_floats_survive_the_config_round_trip() {
    let mut cfg = ExperimentConfig {
        schedule: ScheduleKind::LinearBridge { gamma_max: 0.1 + 0.2 },
        ..ExperimentConfig::default()
    };
    cfg.analysis.field_noise = 1e-300;
    cfg.analysis.delta = std::f64::consts::FRAC_1_PI;
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn validation_errors_name_field_and_line() {
    let src = "seed = 1\n\n[sampler]\nsteps = 64\nclip = 0.7\n";
    let e = ExperimentConfig::from_toml(src).unwrap_err();
    assert_eq!(e.field, "sampler.clip");
    assert_eq!(e.line, Some(5));
    assert!(e.to_string().contains("line 5"), "{e}");

    let e = ExperimentConfig::from_toml("[analysis]\ncount = 0\n").unwrap_err();
    assert_eq!((e.field.as_str(), e.line), ("analysis.count", Some(2)));

    let e = ExperimentConfig::from_toml("[model]\ndim = 3\n").unwrap_err();
    assert_eq!((e.field.as_str(), e.line), ("model.dim", Some(2)));
}

#[test]
fn parse_errors_carry_the_line() {
    let e = ExperimentConfig::from_toml("seed = 1\n[sampler]\nstepz = 3\n").unwrap_err();
    assert_eq!(e.line, Some(3));
    assert!(e.message.contains("stepz"), "{e}");

    let e = ExperimentConfig::from_toml("seed = 1\n\n[schedule]\nkind = \"cubic\"\n").unwrap_err();
    assert!(e.line.is_some_and(|l| l >= 3), "{e}");
}

#[test]
fn bad_config_file_exits_one_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sampler]\nsteps = 0\n");
    let out = run(&["sample", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sampler.steps") && err.contains("line 2"), "{err}");
}

#[test]
fn tensor_file_round_trip_and_corruption() {
    let mut f = TensorFile::new("test", Dtype::F64, serde_json::json!({"a": 1}));
    f.push("w", [2, 3], vec![1.0, -2.5, 1e-300, f64::MAX, 0.1, -0.0]);
    f.push("b", [1, 1], vec![7.0]);
    let bytes = f.to_bytes();
    assert_eq!(&bytes[..8], b"BKTENSOR");
    assert_eq!(TensorFile::from_bytes(&bytes).unwrap(), f);
    assert!(TensorFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(TensorFile::from_bytes(&extra).is_err());
    let mut bad = bytes;
    bad[0] = b'X';
    assert!(TensorFile::from_bytes(&bad).is_err());

    let mut g = TensorFile::new("test", Dtype::F32, Value::Null);
    g.push("x", [1, 2], vec![0.1, 3.0]);
    let back = TensorFile::from_bytes(&g.to_bytes()).unwrap();
    assert_eq!(back.get("x").unwrap(), &[0.1f32 as f64, 3.0]);
    assert!(back.get("y").is_err());
}

#[test]
fn model_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetConfig {
        dim: 2,
        cond_dim: 2,
        hidden: 16,
        ..NetConfig::default()
    };
    let net = VelocityNet::new(
        &cfg,
        Schedule::new(ScheduleKind::LinearBridge { gamma_max: 0.1 }).unwrap(),
    )
    .unwrap();
    let path = dir.path().join("m.bin");
    store::save_model(&net, &path).unwrap();
    let back = store::load_model(&path).unwrap();
    assert_eq!(back.config(), net.config());
    let z = [0.3, -0.2];
    let zt = [1.0, 0.5];
    let a = net.velocity(0.4, &z, &zt, Some(&[0.1, 0.2])).unwrap();
    let b = back.velocity(0.4, &z, &zt, Some(&[0.1, 0.2])).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
    let again = dir.path().join("m2.bin");
    store::save_model(&back, &again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    assert!(store::load_projector(&path).is_err());
}
