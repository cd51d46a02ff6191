//! End-to-end tests of the `hat` binary: file-driven flows, exit codes,
//! config-file merging.

use std::path::Path;
use std::process::{Command, Output};

fn hat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// synth -> train -> predict -> eval, all through the binary.
#[test]
fn file_driven_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");

    assert_ok(&hat(&[
        "synth",
        "--out",
        path_str(&data),
        "--depth",
        "2",
        "--branching",
        "3",
        "--feature-dim",
        "8",
        "--n-attributes",
        "6",
        "--samples-per-class",
        "10",
        "--seed",
        "5",
    ]));
    for file in [
        "taxonomy.json",
        "signatures.csv",
        "split.json",
        "train_features.csv",
        "train_labels.csv",
        "test_features.csv",
        "test_labels.csv",
    ] {
        assert!(data.join(file).exists(), "missing {file}");
    }

    assert_ok(&hat(&[
        "train",
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--features",
        path_str(&data.join("train_features.csv")),
        "--labels",
        path_str(&data.join("train_labels.csv")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--seed",
        "5",
        "--out",
        path_str(&run),
    ]));
    assert!(run.join("bank.json").exists());
    assert!(run.join("node_table.csv").exists());

    assert_ok(&hat(&[
        "predict",
        "--bank",
        path_str(&run.join("bank.json")),
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--features",
        path_str(&data.join("test_features.csv")),
        "--labels",
        path_str(&data.join("test_labels.csv")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--method",
        "hat",
        "--out",
        path_str(&run),
    ]));
    let predictions = run.join("predictions.csv");
    assert!(predictions.exists());

    assert_ok(&hat(&[
        "eval",
        "--predictions",
        path_str(&predictions),
        "--labels",
        path_str(&data.join("test_labels.csv")),
        "--bank",
        path_str(&run.join("bank.json")),
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--features",
        path_str(&data.join("test_features.csv")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--out",
        path_str(&run),
    ]));
    assert!(run.join("confusion.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let accuracy = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy));
    assert!(report["class_auc"]["mean"].as_f64().unwrap() > 0.0);
    assert!(report["attribute_auc"]["mean"].as_f64().is_some());
}

#[test]
fn fallback_parent_needs_no_attributes_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert_ok(&hat(&["synth", "--out", path_str(&data), "--depth", "2", "--feature-dim", "6", "--n-attributes", "5", "--samples-per-class", "8"]));
    assert_ok(&hat(&[
        "train",
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--features",
        path_str(&data.join("train_features.csv")),
        "--labels",
        path_str(&data.join("train_labels.csv")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--out",
        path_str(&run),
    ]));
    assert_ok(&hat(&[
        "predict",
        "--bank",
        path_str(&run.join("bank.json")),
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--features",
        path_str(&data.join("test_features.csv")),
        "--labels",
        path_str(&data.join("test_labels.csv")),
        "--fallback-parent",
        "--out",
        path_str(&run),
    ]));
    assert!(run.join("predictions.csv").exists());
}

#[test]
fn missing_input_exits_2_with_error_record() {
    let out = hat(&[
        "train",
        "--taxonomy",
        "/nonexistent/taxonomy.json",
        "--features",
        "/nonexistent/f.csv",
        "--labels",
        "/nonexistent/l.csv",
        "--attributes",
        "/nonexistent/a.csv",
        "--out",
        "/tmp/never",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["error"]["kind"], "validation");
    assert!(!record["error"]["message"].as_str().unwrap().is_empty());
}

#[test]
fn missing_required_flag_exits_2() {
    let out = hat(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing --taxonomy"));
}

#[test]
fn degenerate_eval_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // predictions over two classes, but ground truth only ever names one
    let predictions = dir.path().join("predictions.csv");
    std::fs::write(
        &predictions,
        "sample_id,predicted_class,z1,z2\ns0,z1,1.0e0,0.0e0\ns1,z2,0.0e0,1.0e0\n",
    )
    .unwrap();
    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, "sample_id,class_id\ns0,z1\ns1,z1\n").unwrap();
    let out = hat(&[
        "eval",
        "--predictions",
        path_str(&predictions),
        "--labels",
        path_str(&labels),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["error"]["kind"], "runtime");
}

#[test]
fn config_file_supplies_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_ok(&hat(&["synth", "--out", path_str(&data), "--depth", "2", "--feature-dim", "6", "--n-attributes", "5", "--samples-per-class", "8"]));

    // config asks for out_a; the flag overrides to out_b
    let out_a = dir.path().join("out_a");
    let out_b = dir.path().join("out_b");
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "taxonomy": data.join("taxonomy.json"),
            "features": data.join("train_features.csv"),
            "labels": data.join("train_labels.csv"),
            "attributes": data.join("signatures.csv"),
            "folds": 3,
            "out": out_a,
        })
        .to_string(),
    )
    .unwrap();

    assert_ok(&hat(&[
        "train",
        "--config",
        path_str(&config),
        "--out",
        path_str(&out_b),
    ]));
    assert!(!out_a.exists(), "config value must lose to the explicit flag");
    assert!(out_b.join("bank.json").exists());
    let bank: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_b.join("bank.json")).unwrap()).unwrap();
    assert_eq!(bank["meta"]["folds"], 3, "non-overridden config key applies");
}

#[test]
fn propagate_writes_node_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    assert_ok(&hat(&["synth", "--out", path_str(&data), "--depth", "2", "--feature-dim", "6", "--n-attributes", "5", "--samples-per-class", "8"]));
    assert_ok(&hat(&[
        "propagate",
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--out",
        path_str(&out),
    ]));
    let table = std::fs::read_to_string(out.join("node_table.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("node_id,"));
    // root row is the OR of all seen rows: at least one active attribute
    assert!(table.lines().any(|l| l.starts_with("r,") && l.contains('1')));
}

/// On a root-plus-leaves taxonomy the hierarchical scorer collapses to the
/// ensemble baseline, down to the bytes of the prediction file.
#[test]
fn ens_equals_hat_on_flat_taxonomy() {
    use hat_core::taxonomy::{Node, NodeKind, Taxonomy};

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_ok(&hat(&["synth", "--out", path_str(&data), "--depth", "2", "--feature-dim", "8", "--n-attributes", "6", "--samples-per-class", "10", "--seed", "3"]));

    // flatten the generated taxonomy to root + leaves
    let deep = Taxonomy::parse_json(&std::fs::read_to_string(data.join("taxonomy.json")).unwrap())
        .unwrap();
    let mut nodes = vec![Node {
        id: "r".into(),
        label: "r".into(),
        kind: NodeKind::Internal,
    }];
    let mut edges = Vec::new();
    for leaf in deep.leaves() {
        nodes.push(Node {
            id: leaf.clone(),
            label: leaf.clone(),
            kind: deep.kind(&leaf).unwrap(),
        });
        edges.push(("r".to_string(), leaf));
    }
    let flat = Taxonomy::from_parts(nodes, edges).unwrap();
    let flat_path = data.join("taxonomy_flat.json");
    std::fs::write(&flat_path, flat.to_json()).unwrap();

    let run = dir.path().join("run");
    assert_ok(&hat(&[
        "train",
        "--taxonomy",
        path_str(&flat_path),
        "--features",
        path_str(&data.join("train_features.csv")),
        "--labels",
        path_str(&data.join("train_labels.csv")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--out",
        path_str(&run),
    ]));
    let mut outputs = Vec::new();
    for method in ["hat", "ens"] {
        let out_dir = dir.path().join(method);
        assert_ok(&hat(&[
            "predict",
            "--bank",
            path_str(&run.join("bank.json")),
            "--taxonomy",
            path_str(&flat_path),
            "--features",
            path_str(&data.join("test_features.csv")),
            "--labels",
            path_str(&data.join("test_labels.csv")),
            "--attributes",
            path_str(&data.join("signatures.csv")),
            "--method",
            method,
            "--out",
            path_str(&out_dir),
        ]));
        outputs.push(std::fs::read(out_dir.join("predictions.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "hat and ens predictions must coincide");
}

#[test]
fn sweep_csv_shape_and_unseen_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = hat(&[
        "sweep",
        "--out",
        path_str(dir.path()),
        "--sizes",
        "4,8",
        "--repeats",
        "1",
        "--depth",
        "2",
        "--branching",
        "4",
        "--feature-dim",
        "8",
        "--n-attributes",
        "10",
        "--samples-per-class",
        "8",
        "--seed",
        "1",
    ]);
    assert_ok(&out);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    // two rows per method
    for method in ["hat", "dap", "ens"] {
        let per: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] == method).collect();
        assert_eq!(per.len(), 2, "{method} should have one row per size");
        let unseen: Vec<usize> = per.iter().map(|r| r[2].parse().unwrap()).collect();
        assert!(unseen[0] >= unseen[1], "unseen count must not increase with size");
    }
}

#[test]
fn train_dumps_support_sizes_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert_ok(&hat(&["synth", "--out", path_str(&data), "--depth", "2", "--feature-dim", "6", "--n-attributes", "5", "--samples-per-class", "8"]));
    assert_ok(&hat(&[
        "train",
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--features",
        path_str(&data.join("train_features.csv")),
        "--labels",
        path_str(&data.join("train_labels.csv")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--dump-support-sizes",
        "--out",
        path_str(&run),
    ]));
    let csv = std::fs::read_to_string(run.join("support_sizes.csv")).unwrap();
    assert!(csv.starts_with("node_id,attribute,support_size\n"));
    assert!(csv.lines().count() > 5);
}

/// Binary feature files flow through synth -> train -> predict unchanged.
#[test]
fn binary_feature_format_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert_ok(&hat(&[
        "synth",
        "--out",
        path_str(&data),
        "--feature-format",
        "binary",
        "--depth",
        "2",
        "--feature-dim",
        "6",
        "--n-attributes",
        "5",
        "--samples-per-class",
        "8",
    ]));
    assert!(data.join("train_features.zsf").exists());
    assert_ok(&hat(&[
        "train",
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--features",
        path_str(&data.join("train_features.zsf")),
        "--feature-format",
        "binary",
        "--labels",
        path_str(&data.join("train_labels.csv")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--out",
        path_str(&run),
    ]));
    assert_ok(&hat(&[
        "predict",
        "--bank",
        path_str(&run.join("bank.json")),
        "--taxonomy",
        path_str(&data.join("taxonomy.json")),
        "--features",
        path_str(&data.join("test_features.zsf")),
        "--feature-format",
        "binary",
        "--labels",
        path_str(&data.join("test_labels.csv")),
        "--attributes",
        path_str(&data.join("signatures.csv")),
        "--out",
        path_str(&run),
    ]));
    assert!(run.join("predictions.csv").exists());
}

/// Per-image annotations drive occurrence averaging and binarization when
/// `--attr-mode per-image` is set.
#[test]
fn per_image_mode_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let features = dir.path().join("features.csv");
    let labels = dir.path().join("labels.csv");
    let image_attrs = dir.path().join("image_attrs.csv");
    let taxonomy = dir.path().join("taxonomy.json");
    let run = dir.path().join("run");

    let mut f = String::from("sample_id,f0\n");
    let mut l = String::from("sample_id,class_id\n");
    let mut a = String::from("sample_id,furry,aquatic\n");
    for i in 0..6 {
        f.push_str(&format!("a{i},{}\n", 1.0 + 0.01 * i as f64));
        l.push_str(&format!("a{i},cat\n"));
        a.push_str(&format!("a{i},1,0\n"));
    }
    for i in 0..6 {
        f.push_str(&format!("b{i},{}\n", -1.0 - 0.01 * i as f64));
        l.push_str(&format!("b{i},fish\n"));
        // half the fish images are labeled aquatic
        a.push_str(&format!("b{i},0,{}\n", i % 2));
    }
    std::fs::write(&features, f).unwrap();
    std::fs::write(&labels, l).unwrap();
    std::fs::write(&image_attrs, a).unwrap();
    std::fs::write(
        &taxonomy,
        serde_json::json!({
            "nodes": [
                {"id": "root", "label": "root", "kind": "internal"},
                {"id": "cat", "label": "cat", "kind": "seen"},
                {"id": "fish", "label": "fish", "kind": "seen"}
            ],
            "edges": [["root", "cat"], ["root", "fish"]]
        })
        .to_string(),
    )
    .unwrap();

    assert_ok(&hat(&[
        "train",
        "--taxonomy",
        path_str(&taxonomy),
        "--features",
        path_str(&features),
        "--labels",
        path_str(&labels),
        "--attributes",
        path_str(&image_attrs),
        "--attr-mode",
        "per-image",
        "--folds",
        "2",
        "--out",
        path_str(&run),
    ]));
    // occurrences: cat=(1.0, 0.0), fish=(0.0, 0.5); mean 0.375 -> both
    // class-level attributes survive binarization
    let sig = std::fs::read_to_string(run.join("signatures_used.csv")).unwrap();
    assert!(sig.contains("cat,1,0"));
    assert!(sig.contains("fish,0,1"));
}
