//! End-to-end behaviour of the `lgnet` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lgnet::data::read_dataset;
use lgnet::metrics::auc_pair_oracle;
use lgnet::report::read_scores;
use lgnet::OpKind;

fn lgnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LGNET_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_requested_counts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "synth",
        "--n",
        "2000",
        "--pos-frac",
        "0.5",
        "--seed",
        "7",
        "--out",
        "d.lgnd",
    ];
    let out = lgnet(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("1000 positive"), "{}", stdout(&out));
    let ds = read_dataset(dir.path().join("d.lgnd")).unwrap();
    assert_eq!((ds.len(), ds.positives()), (2000, 1000));
    let first = fs::read(dir.path().join("d.lgnd")).unwrap();

    assert_eq!(code(&lgnet(&args, dir.path())), 0);
    assert_eq!(first, fs::read(dir.path().join("d.lgnd")).unwrap());

    let cfg = json(&dir.path().join("run_config.json"));
    assert_eq!(cfg["command"], "synth");
    assert_eq!(cfg["seed"], 7);
    assert!(cfg.get("variant").is_some() && cfg.get("out_dir").is_some());
}

#[test]
fn invalid_flags_exit_2_naming_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = lgnet(
        &["synth", "--pos-frac", "1.5", "--out", "d.lgnd"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--pos-frac"), "{}", stderr(&out));
    assert!(!dir.path().join("d.lgnd").exists());

    let out = lgnet(&["synth", "--n", "many", "--out", "d.lgnd"], dir.path());
    assert_eq!(code(&out), 2);
    let out = lgnet(
        &[
            "crossval",
            "--data",
            "d.lgnd",
            "--out-dir",
            "o",
            "--variant",
            "vgg",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("vgg"), "{}", stderr(&out));
}

#[test]
fn config_file_values_yield_to_flags_and_unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("run.cfg"),
        "# synthetic set\nn = 30\nseed = 4\nout = from_file.lgnd\n",
    )
    .unwrap();
    assert_eq!(
        code(&lgnet(&["synth", "--config", "run.cfg", "--seed", "5"], p)),
        0
    );
    assert_eq!(
        code(&lgnet(
            &["synth", "--n", "30", "--seed", "5", "--out", "flags.lgnd"],
            p
        )),
        0
    );
    assert_eq!(
        fs::read(p.join("from_file.lgnd")).unwrap(),
        fs::read(p.join("flags.lgnd")).unwrap()
    );
    assert_eq!(json(&p.join("run_config.json"))["seed"], 5);

    fs::write(p.join("bad.cfg"), "n = 30\nlearning_rate = 0.1\n").unwrap();
    let out = lgnet(&["synth", "--config", "bad.cfg", "--out", "x.lgnd"], p);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

fn small_dataset(dir: &Path) {
    let out = lgnet(
        &["synth", "--n", "40", "--seed", "3", "--out", "d.lgnd"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const QUICK: [&str; 10] = [
    "crossval",
    "--data",
    "d.lgnd",
    "--variant",
    "basic-resnet",
    "--epochs",
    "1",
    "--folds",
    "4",
    "--seed",
];

#[test]
fn crossval_writes_reports_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_dataset(p);
    let run = |out_dir: &str| {
        let mut args = QUICK.to_vec();
        args.extend(["1", "--out-dir", out_dir]);
        let out = lgnet(&args, p);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stderr(&out).contains("fold 4/4"), "{}", stderr(&out));
    };
    run("a");
    run("b");

    let metrics = json(&p.join("a/metrics.json"));
    let mut keys: Vec<&str> = metrics
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["accuracy", "auc", "counts", "precision", "sensitivity"]
    );

    for file in [
        "metrics.json",
        "scores.csv",
        "roc.csv",
        "fold_00/model.lgnm",
        "fold_03/loss.csv",
        "fold_02/fold.json",
    ] {
        assert_eq!(
            fs::read(p.join("a").join(file)).unwrap(),
            fs::read(p.join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    let cfg = json(&p.join("a/run_config.json"));
    assert_eq!(cfg["variant"], "basic-resnet");
    assert_eq!(cfg["options"]["train"]["epochs"], 1);

    let rows = read_scores(p.join("a/scores.csv")).unwrap();
    assert_eq!(rows.len(), 40);
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let auc = metrics["auc"].as_f64().unwrap();
    assert!((auc - auc_pair_oracle(&scores, &labels).unwrap()).abs() < 1e-12);
}

#[test]
fn crossval_rejects_bad_inputs_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let with_data = |data: &str, extra: &[&str]| {
        let mut args = vec![
            "crossval",
            "--data",
            data,
            "--out-dir",
            "o",
            "--epochs",
            "1",
        ];
        args.extend(extra);
        lgnet(&args, p)
    };
    assert_eq!(code(&with_data("missing.lgnd", &[])), 3);

    fs::write(p.join("junk.lgnd"), b"JUNK\x01\x00\x00\x00").unwrap();
    let out = with_data("junk.lgnd", &[]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("junk.lgnd"), "{}", stderr(&out));

    // 12 samples leave fewer than 10 per class.
    assert_eq!(
        code(&lgnet(&["synth", "--n", "12", "--out", "tiny.lgnd"], p)),
        0
    );
    let out = with_data("tiny.lgnd", &["--folds", "10"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn gradcheck_covers_every_op_and_names_injected_faults() {
    let dir = tempfile::tempdir().unwrap();
    let out = lgnet(&["gradcheck", "--ops-only"], dir.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    for op in OpKind::DIFFERENTIABLE {
        assert!(
            text.lines()
                .any(|l| l.split_whitespace().next() == Some(op.name())),
            "no report line for {op}"
        );
    }
    assert!(dir.path().join("gradcheck.json").exists());
    assert!(dir.path().join("run_config.json").exists());

    let out = lgnet(
        &["gradcheck", "--ops-only", "--inject-fault", "softmax_rows"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("softmax_rows"), "{}", stderr(&out));
    let report = json(&dir.path().join("gradcheck.json"));
    assert_eq!(report["passed"], false);
}

fn write_scores(path: &Path, rows: &[(u8, f64)]) {
    let mut text = String::from("sample_id,label,score,fold\n");
    for (i, (label, score)) in rows.iter().enumerate() {
        text.push_str(&format!("s{i},{label},{score},0\n"));
    }
    fs::write(path, text).unwrap();
}

fn printed_auc(out: &Output) -> Vec<f64> {
    stdout(out)
        .lines()
        .filter_map(|l| l.split("auc=").nth(1))
        .map(|v| v.trim().parse().unwrap())
        .collect()
}

#[test]
fn roc_exports_curves_and_auc() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_scores(
        &p.join("perfect.csv"),
        &[(0, 0.1), (0, 0.2), (1, 0.8), (1, 0.9)],
    );
    let out = lgnet(&["roc", "--scores", "perfect.csv", "--out-dir", "r"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let roc = fs::read_to_string(p.join("r/roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,threshold\n"));
    assert!(roc.lines().any(|l| l.starts_with("0.0,1.0,")), "{roc}");
    assert_eq!(printed_auc(&out), [1.0]);

    let mixed = [
        (0, 0.3),
        (1, 0.3),
        (0, 0.7),
        (1, 0.6),
        (1, 0.9),
        (0, 0.1),
        (1, 0.2),
    ];
    write_scores(&p.join("mixed.csv"), &mixed);
    let out = lgnet(
        &[
            "roc",
            "--scores",
            "perfect.csv",
            "mixed.csv",
            "--out-dir",
            "m",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(p.join("m/perfect.roc.csv").exists() && p.join("m/mixed.roc.csv").exists());
    let scores: Vec<f64> = mixed.iter().map(|r| r.1).collect();
    let labels: Vec<u8> = mixed.iter().map(|r| r.0).collect();
    let aucs = printed_auc(&out);
    assert!((aucs[1] - auc_pair_oracle(&scores, &labels).unwrap()).abs() < 1e-12);

    // The same inputs from a config file.
    fs::write(
        p.join("roc.cfg"),
        "scores = perfect.csv, mixed.csv\nout-dir = c\n",
    )
    .unwrap();
    let out = lgnet(&["roc", "--config", "roc.cfg"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(printed_auc(&out), aucs);
    assert_eq!(
        fs::read(p.join("c/mixed.roc.csv")).unwrap(),
        fs::read(p.join("m/mixed.roc.csv")).unwrap()
    );
}

#[test]
fn roc_rejects_malformed_score_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("empty.csv"), "").unwrap();
    assert_eq!(code(&lgnet(&["roc", "--scores", "empty.csv"], p)), 3);
    fs::write(p.join("header.csv"), "sample_id,label,score,fold\n").unwrap();
    assert_eq!(code(&lgnet(&["roc", "--scores", "header.csv"], p)), 3);

    fs::write(
        p.join("bad.csv"),
        "sample_id,label,score,fold\na,1,0.5,0\nb,1,high,0\n",
    )
    .unwrap();
    let out = lgnet(&["roc", "--scores", "bad.csv"], p);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(!p.join("roc.csv").exists());
}
