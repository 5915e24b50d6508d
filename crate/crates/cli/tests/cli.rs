use std::path::Path;
use std::process::{Command, Output};

fn kgc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgc"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn kgc")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kgc(dir, args);
    assert!(
        out.status.success(),
        "kgc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

const DATA: [&str; 6] = ["--data", "data", "--dataset", "synth", "--work", "w"];

fn with(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = DATA.to_vec();
    v.extend_from_slice(extra);
    v
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "data"]);
    let mut args = vec!["mine"];
    args.extend(with(&["--iterations", "3000", "--max-len", "2"]));
    ok(dir.path(), &args);
    dir
}

#[test]
fn full_pipeline() {
    let dir = prepared();
    let d = dir.path();

    let mut args = vec!["ingest"];
    args.extend(DATA);
    let info = json(&ok(d, &args));
    assert_eq!(info["relations"], 7);
    assert!(info["test_graph"]["test"].as_u64().unwrap() > 0);
    assert!(d.join("w/synth_v1.rules").exists());

    for arch in [
        vec![
            "train", "--arch", "compgcn", "--epochs", "3", "--hidden", "8", "--lr", "0.01",
        ],
        vec!["train", "--arch", "nbf", "--epochs", "2", "--dim", "8", "--layers", "2"],
    ] {
        let mut args = arch.clone();
        args.extend(DATA);
        let report = json(&ok(d, &args));
        assert!(report["best_valid_metric"].as_f64().unwrap() >= 0.0);
    }
    assert!(d.join("w/synth_v1.compgcn.ckpt").exists());
    assert!(d.join("w/synth_v1.nbf.ckpt").exists());

    let mut args = vec!["eval"];
    args.extend(with(&[
        "--strategy",
        "anyburl-max+shuffle,compgcn+nbfnet",
        "--runs",
        "2",
        "--csv",
        "m.csv",
        "--topk",
        "10",
    ]));
    let reports = json(&ok(d, &args));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1]["strategy"], "compgcn+nbfnet");
    for r in reports {
        let mrr = r["overall"]["mrr"]["mean"].as_f64().unwrap();
        let h1 = r["overall"]["hits1"]["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&mrr) && h1 <= mrr);
    }
    let csv = std::fs::read_to_string(d.join("m.csv")).unwrap();
    assert!(csv.starts_with("dataset,strategy,setting,filtered,band,metric"));
    // 2 strategies x 4 bands (all + 3) x 4 metrics.
    assert_eq!(csv.lines().count(), 1 + 2 * 4 * 4);

    let mut args = vec!["stats"];
    args.extend(DATA);
    let stats = json(&ok(d, &args));
    assert!(stats["rules"].as_u64().unwrap() > 0);
    assert!(stats["a_empty"].as_f64().unwrap() <= 100.0);
}

#[test]
fn raw_and_reduced_settings() {
    let dir = prepared();
    let run = |extra: &[&'static str]| {
        let mut args = vec!["eval"];
        args.extend(with(&["--runs", "1"]));
        args.extend_from_slice(extra);
        let r = json(&ok(dir.path(), &args));
        r[0].clone()
    };
    let filtered = run(&[]);
    let raw = run(&["--raw"]);
    assert_eq!(filtered["filtered"], true);
    assert_eq!(raw["filtered"], false);
    assert!(raw["overall"]["mrr"]["mean"].as_f64().unwrap() <= filtered["overall"]["mrr"]["mean"].as_f64().unwrap());
    let reduced = run(&["--setting", "reduced50"]);
    assert_eq!(reduced["setting"], "reduced50");
}

#[test]
fn explain_prints_dot() {
    let dir = prepared();
    let test = std::fs::read_to_string(dir.path().join("data/synth_v1_ind/test.txt")).unwrap();
    let mut fields = test.lines().next().unwrap().split('\t');
    let (h, _, t) = (fields.next().unwrap(), fields.next(), fields.next().unwrap());
    let query = format!("{h},h,?");
    let mut args = vec!["explain"];
    args.extend(DATA);
    args.extend(["--query", &query, "--candidate", t]);
    let dot = ok(dir.path(), &args);
    assert!(dot.starts_with("digraph rig {"));
    assert!(dot.contains(&format!("label=\"{h}\\n(0,")));
    assert!(dot.trim_end().ends_with('}'));

    args.push("--evidence");
    let ev = json(&ok(dir.path(), &args));
    assert!(ev.to_string().contains(t));
}

#[test]
fn ablation_grid_shape() {
    let dir = prepared();
    let mut args = vec!["ablate", "--sweep", "topk", "--values", "1,5,10"];
    args.extend(with(&[
        "--iterations",
        "2000",
        "--max-len",
        "2",
        "--epochs",
        "2",
        "--hidden",
        "8",
        "--runs",
        "1",
        "--max-triples",
        "3",
    ]));
    let csv = ok(dir.path(), &args);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "dataset,sweep,value,rules,valid_acc,mrr,hits1,hits3,hits10,hits10_50"
    );
    assert_eq!(lines.len(), 4);
    for (line, k) in lines[1..].iter().zip(["1", "5", "10"]) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 10);
        assert_eq!((cells[1], cells[2]), ("topk", k));
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = prepared();
    std::fs::write(
        dir.path().join("k.conf"),
        "# comment\ndata = data\ndataset = synth\nwork = w\nruns = 3\nstrategy = noisy-or\n",
    )
    .unwrap();
    let r = json(&ok(dir.path(), &["--config", "k.conf", "eval"]));
    assert_eq!(r[0]["strategy"], "noisy-or+shuffle");
    assert_eq!(r[0]["runs"], 3);
    let r = json(&ok(dir.path(), &["--config", "k.conf", "eval", "--runs", "1"]));
    assert_eq!(r[0]["runs"], 1);
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgc(dir.path(), &["ingest", "--data", "nowhere", "--dataset", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    let dir = prepared();
    let mut args = vec!["eval"];
    args.extend(with(&["--strategy", "rgcn+shuffle"]));
    let out = kgc(dir.path(), &args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("kgc train --arch rgcn"));

    let mut args = vec!["eval"];
    args.extend(with(&["--strategy", "magic"]));
    assert!(!kgc(dir.path(), &args).status.success());
}
