use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn defend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defend"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let cfg = json!({
        "generator": {"n_nodes": 150, "n_attrs": 6, "avg_degree": 6, "clique_size": 4},
        "train": {
            "phase1_max_epochs": 6, "patience": 3, "phase2_epochs": 5,
            "weights": {"beta": 1.0},
            "model": {"hidden": 8, "latent": 4}
        },
        "baseline": {"epochs": 5, "model": {"hidden": 8, "latent": 4}},
        "seeds": [0, 1]
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn generate_is_deterministic_and_reports_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = defend(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = String::from_utf8(o.stdout).unwrap();
        assert!(
            text.contains("N=150") && text.contains("gamma_G="),
            "{text}"
        );
    }
    for f in ["edges.tsv", "nodes.csv", "meta.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
}

#[test]
fn invalid_ratio_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, r#"{"generator": {"minority_ratio": 1.5}}"#).unwrap();
    let o = defend(&[
        "generate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("minority_ratio"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, r#"{"train": {"learning_rat": 0.1}}"#).unwrap();
    let o = defend(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"));
}

#[test]
fn missing_nodes_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    std::fs::create_dir(&data).unwrap();
    let o = defend(&[
        "train",
        "--config",
        &cfg,
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_rerun_is_byte_identical_and_eval_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    assert!(defend(&[
        "generate",
        "--config",
        &cfg,
        "--out",
        data.to_str().unwrap()
    ])
    .status
    .success());
    let runs = [tmp.path().join("r1"), tmp.path().join("r2")];
    for r in &runs {
        let o = defend(&[
            "train",
            "--config",
            &cfg,
            "--data",
            data.to_str().unwrap(),
            "--out",
            r.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [
        "report.json",
        "scores.csv",
        "history.csv",
        "model.json",
        "config.json",
    ] {
        assert_eq!(read(&runs[0].join(f)), read(&runs[1].join(f)), "{f}");
    }
    let report: Value = serde_json::from_slice(&read(&runs[0].join("report.json"))).unwrap();
    assert_eq!(report["variant"], "FULL");
    assert!(report.get("timestamp").is_none());

    let o = defend(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--out",
        runs[0].to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval: Value = serde_json::from_slice(&read(&runs[0].join("eval.json"))).unwrap();
    assert_eq!(eval["auc_roc"], report["auc_roc"]);
    assert_eq!(eval["delta_dp"], report["delta_dp"]);
}

#[test]
fn no_corr_history_has_empty_corr_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    let mut doc: Value = serde_json::from_slice(&read(Path::new(&cfg))).unwrap();
    doc["train"]["variant"] = json!("NO_CORR");
    std::fs::write(&cfg, serde_json::to_vec(&doc).unwrap()).unwrap();
    let o = defend(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&read(&run.join("report.json"))).unwrap();
    assert_eq!(report["variant"], "NO_CORR");
    let mut r = csv::Reader::from_path(run.join("history.csv")).unwrap();
    let corr = r
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "corr")
        .unwrap();
    for rec in r.records() {
        assert_eq!(&rec.unwrap()[corr], "");
    }
}

#[test]
fn ablation_table_shape_and_summary_means() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("ab");
    let o = defend(&[
        "ablate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("ablation_table.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let runs: Vec<_> = rows.iter().filter(|r| &r[0] == "run").collect();
    let summaries: Vec<_> = rows.iter().filter(|r| &r[0] == "summary").collect();
    assert_eq!((runs.len(), summaries.len()), (10, 5));
    for s in summaries {
        let vals: Vec<f64> = runs
            .iter()
            .filter(|r| r[1] == s[1])
            .map(|r| r[3].parse().unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - s[3].parse::<f64>().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn single_point_sweep_matches_train() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let base: Value = serde_json::from_slice(&read(Path::new(&cfg))).unwrap();
    let spec = json!({"base": base, "axes": {"beta": [1.0]}, "seeds": [0]});
    let spec_path = tmp.path().join("sweep.json");
    std::fs::write(&spec_path, serde_json::to_vec(&spec).unwrap()).unwrap();
    let sw = tmp.path().join("sw");
    let o = defend(&[
        "sweep",
        "--config",
        spec_path.to_str().unwrap(),
        "--out",
        sw.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("1 points x 1 seeds"));
    let run = tmp.path().join("run");
    assert!(defend(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "0",
        "--out",
        run.to_str().unwrap()
    ])
    .status
    .success());
    let report: Value = serde_json::from_slice(&read(&run.join("report.json"))).unwrap();
    let mut r = csv::Reader::from_path(sw.join("tradeoff.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let row = r.records().next().unwrap().unwrap();
    let col = |name: &str| {
        row[h.iter().position(|x| x == name).unwrap()]
            .parse::<f64>()
            .unwrap()
    };
    assert_eq!(col("auc_roc"), report["auc_roc"].as_f64().unwrap());
    assert_eq!(col("delta_dp"), report["delta_dp"].as_f64().unwrap());
    assert!(sw.join("pareto.csv").exists());
}

#[test]
fn baseline_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("bl");
    let out_s = out.to_str().unwrap();

    let o = defend(&[
        "baseline", "--config", &cfg, "--reg", "fairod", "--out", out_s,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--reg none"), "{}", stderr(&o));

    let o = defend(&[
        "baseline", "--config", &cfg, "--reg", "fancy", "--out", out_s,
    ]);
    assert_eq!(o.status.code(), Some(2));
    for name in ["none", "fairod", "correlation", "hin"] {
        assert!(stderr(&o).contains(name), "{}", stderr(&o));
    }

    for reg in ["none", "fairod", "correlation"] {
        let o = defend(&["baseline", "--config", &cfg, "--reg", reg, "--out", out_s]);
        assert!(o.status.success(), "{reg}: {}", stderr(&o));
        assert!(out.join(reg).join("report.json").exists());
    }

    let mut doc: Value = serde_json::from_slice(&read(Path::new(&cfg))).unwrap();
    doc["baseline"]["lambda"] = json!(0.0);
    let zero = tmp.path().join("zero.json");
    std::fs::write(&zero, serde_json::to_vec(&doc).unwrap()).unwrap();
    let hin_out = tmp.path().join("hin");
    for reg in ["none", "hin"] {
        let o = defend(&[
            "baseline",
            "--config",
            zero.to_str().unwrap(),
            "--reg",
            reg,
            "--out",
            hin_out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        read(&hin_out.join("none/scores.csv")),
        read(&hin_out.join("hin/scores.csv"))
    );
}
