mod common;

use std::fs;

use common::*;
use personkg_core::dataset::import_alpaca;
use serde_json::{json, Value};

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn clean_reports_duplicates() {
    let dir = tmp();
    let d = dir.path();
    fs::write(
        d.join("a.txt"),
        "Zeng Guofan was born in Xiangxiang, Hunan.",
    )
    .unwrap();
    fs::write(
        d.join("b.txt"),
        "Zeng Guofan was born in Xiangxiang, Hunan.\n",
    )
    .unwrap();
    fs::write(d.join("c.txt"), "Zuo Zongtang recovered Xinjiang.").unwrap();
    fs::write(
        d.join("m.toml"),
        "[[doc]]\npath = \"a.txt\"\nperson_name = \"Zeng Guofan\"\nsource_kind = \"encyclopedia\"\n\
         [[doc]]\npath = \"b.txt\"\nperson_name = \"Zeng Guofan\"\nsource_kind = \"news\"\n\
         [[doc]]\npath = \"c.txt\"\nperson_name = \"Zuo Zongtang\"\nsource_kind = \"book\"\n",
    )
    .unwrap();
    let run = personkg(d, &["clean", "--manifest", "m.toml", "--out", "out"]);
    assert_eq!(run.code, 0, "{run:?}");
    assert_eq!(run.stdout.lines().next(), Some("3 in, 2 kept"));
    assert!(d.join("out/corpus/Zeng Guofan.jsonl").is_file());
    assert!(d.join("out/corpus/Zuo Zongtang.jsonl").is_file());
    let summary: Value = serde_json::from_str(&read(d.join("out/summary.json"))).unwrap();
    assert_eq!(summary["exact_duplicates"], 1);
    let manifest: Value = serde_json::from_str(&read(d.join("out/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "clean");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 4);
}

#[test]
fn clean_empty_manifest() {
    let dir = tmp();
    fs::write(dir.path().join("m.toml"), "").unwrap();
    let run = personkg(dir.path(), &["clean", "--manifest", "m.toml"]);
    assert_eq!(run.code, 0, "{run:?}");
    assert_eq!(run.stdout.lines().next(), Some("0 in, 0 kept"));
    // Default output location is run-stamped under `runs/`.
    let out = run.output_path();
    assert!(out.starts_with("runs"));
    assert!(out
        .file_name()
        .unwrap()
        .to_string_lossy()
        .starts_with("clean-"));
}

#[test]
fn clean_missing_manifest_is_usage_error() {
    let dir = tmp();
    let run = personkg(dir.path(), &["clean", "--manifest", "nope.toml"]);
    assert_eq!(run.code, 2, "{run:?}");
    let run = personkg(dir.path(), &["clean"]);
    assert_eq!(run.code, 2, "{run:?}");
}

#[test]
fn clean_unreadable_files() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("ok.txt"), "Readable biography text.").unwrap();
    let entry =
        |p: &str| format!("[[doc]]\npath = \"{p}\"\nperson_name = \"A\"\nsource_kind = \"news\"\n");
    fs::write(d.join("some.toml"), entry("ok.txt") + &entry("gone.txt")).unwrap();
    fs::write(
        d.join("none.toml"),
        entry("gone.txt") + &entry("also-gone.txt"),
    )
    .unwrap();

    let run = personkg(d, &["clean", "--manifest", "some.toml", "--out", "a"]);
    assert_eq!(run.code, 0, "{run:?}");
    assert!(run.stderr.contains("gone.txt"), "{run:?}");
    assert_eq!(run.stdout.lines().next(), Some("2 in, 1 kept"));

    let run = personkg(d, &["clean", "--manifest", "none.toml", "--out", "b"]);
    assert_eq!(run.code, 1, "{run:?}");
}

#[test]
fn build_dataset_sizes_and_seed() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("golds.jsonl"), gold_lines(150)).unwrap();

    let run = personkg(
        d,
        &[
            "build-dataset",
            "--golds",
            "golds.jsonl",
            "--n",
            "100",
            "--seed",
            "7",
            "--out",
            "a",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    let samples = import_alpaca(&d.join("a/alpaca_n100.json")).unwrap();
    assert_eq!(samples.len(), 100);
    // 150 persons split 90/60; 100 of them apportion to 60/40.
    let military = samples
        .iter()
        .filter(|s| s.meta.strata_labels.contains("military"))
        .count();
    assert_eq!(military, 60);

    let run = personkg(
        d,
        &[
            "build-dataset",
            "--golds",
            "golds.jsonl",
            "--n",
            "100",
            "--seed",
            "7",
            "--out",
            "b",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert_eq!(
        read(d.join("a/alpaca_n100.json")),
        read(d.join("b/alpaca_n100.json"))
    );
    assert_eq!(
        read(d.join("a/alpaca_n100.json.meta.jsonl")),
        read(d.join("b/alpaca_n100.json.meta.jsonl"))
    );

    let run = personkg(
        d,
        &[
            "build-dataset",
            "--golds",
            "golds.jsonl",
            "--n",
            "150",
            "--out",
            "c",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert_eq!(
        import_alpaca(&d.join("c/alpaca_n150.json")).unwrap().len(),
        150
    );

    let run = personkg(
        d,
        &[
            "build-dataset",
            "--golds",
            "golds.jsonl",
            "--n",
            "151",
            "--out",
            "e",
        ],
    );
    assert_eq!(run.code, 1, "{run:?}");
    assert!(run.stderr.contains("only 150"), "{run:?}");
}

#[test]
fn extract_thirty_records() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("test.jsonl"), gold_lines(30)).unwrap();
    fs::write(d.join("replay.jsonl"), replay_lines(30, Clone::clone)).unwrap();

    let run = personkg(
        d,
        &[
            "extract",
            "--test",
            "test.jsonl",
            "--replay",
            "replay.jsonl",
            "--out",
            "a",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert_eq!(run.stdout.lines().next(), Some("30 records: 30 ok"));
    let text = read(d.join("a/predictions.jsonl"));
    let lines: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 30);
    assert_eq!(lines[0]["record_id"], "r000");
    assert_eq!(lines[29]["record_id"], "r029");
    assert_eq!(lines[3]["person_record"], record_json(&synthetic_record(3)));

    let run = personkg(
        d,
        &[
            "extract",
            "--test",
            "test.jsonl",
            "--replay",
            "replay.jsonl",
            "--out",
            "b",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert_eq!(text, read(d.join("b/predictions.jsonl")));
}

#[test]
fn extract_prose_is_parse_error() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("test.jsonl"), gold_lines(3)).unwrap();
    let run = personkg(
        d,
        &[
            "extract",
            "--test",
            "test.jsonl",
            "--fixed",
            "I could not find any person here.",
            "--out",
            "a",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    for line in read(d.join("a/predictions.jsonl")).lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["status"], "parse_error");
        assert_eq!(v["raw"], "I could not find any person here.");
        assert!(v.get("person_record").is_none());
    }
}

#[test]
fn extract_missing_replay_and_invalid_output() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("test.jsonl"), gold_lines(3)).unwrap();
    // r001 has no canned answer; r002 answers with an object lacking a name.
    let replay = jsonl([
        json!({"record_id": "r000", "response": record_json(&synthetic_record(0)).to_string()}),
        json!({"record_id": "r002", "response": "{\"性别\": \"男\"}"}),
    ]);
    fs::write(d.join("replay.jsonl"), replay).unwrap();
    let run = personkg(
        d,
        &[
            "extract",
            "--test",
            "test.jsonl",
            "--replay",
            "replay.jsonl",
            "--out",
            "a",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    let statuses: Vec<String> = read(d.join("a/predictions.jsonl"))
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["status"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(statuses, ["ok", "request_error", "invalid"]);
}

#[test]
fn extract_missing_api_key_is_terminal() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("test.jsonl"), gold_lines(2)).unwrap();
    fs::write(
        d.join("run.toml"),
        "[chat]\nkind = \"openai\"\n[chat.endpoint]\nbase_url = \"http://127.0.0.1:9/v1\"\napi_key_env = \"PERSONKG_CLI_TEST_UNSET_KEY\"\n",
    )
    .unwrap();
    let run = personkg(
        d,
        &[
            "--config",
            "run.toml",
            "extract",
            "--test",
            "test.jsonl",
            "--out",
            "a",
        ],
    );
    assert_eq!(run.code, 1, "{run:?}");
    assert!(
        run.stderr.contains("PERSONKG_CLI_TEST_UNSET_KEY"),
        "{run:?}"
    );
    assert!(!d.join("a/predictions.jsonl").exists());
}

fn prediction_lines(records: &[(String, Value)]) -> String {
    jsonl(
        records
            .iter()
            .map(|(id, r)| json!({"record_id": id, "status": "ok", "person_record": r})),
    )
}

#[test]
fn evaluate_perfect_predictions() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("golds.jsonl"), gold_lines(5)).unwrap();
    let preds: Vec<(String, Value)> = (0..5)
        .map(|i| (format!("r{i:03}"), record_json(&synthetic_record(i))))
        .collect();
    fs::write(d.join("preds.jsonl"), prediction_lines(&preds)).unwrap();
    let run = personkg(
        d,
        &[
            "evaluate",
            "--predictions",
            "preds.jsonl",
            "--golds",
            "golds.jsonl",
            "--out",
            "a",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert!(
        run.stdout
            .starts_with("run_mean: 100.0000 (Average Distribution, 5 records)"),
        "{run:?}"
    );
    let report: Value = serde_json::from_str(&read(d.join("a/report.json"))).unwrap();
    assert_eq!(report["scheme_name"], "Average Distribution");
    assert!(d.join("a/report.txt").is_file());
}

/// Random 1 weight for a component, read straight from the table.
fn random1_weight(component: &str) -> f64 {
    let table = read(core_file("data/weight_schemes.csv"));
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "Random 1").unwrap();
    table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|cells| cells[1] == component)
        .map(|cells| cells[col].parse().unwrap())
        .unwrap()
}

#[test]
fn evaluate_random1_matches_hand_aggregate() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("golds.jsonl"), gold_lines(1)).unwrap();
    // Wrong gender (exact match 0); birthplace and works left empty against
    // non-empty gold text (similarity 0). Everything else identical (100).
    let mut r = synthetic_record(0);
    r.gender = "Female".into();
    r.birthplace = String::new();
    r.works = String::new();
    fs::write(
        d.join("preds.jsonl"),
        prediction_lines(&[("r000".into(), record_json(&r))]),
    )
    .unwrap();

    let run = personkg(
        d,
        &[
            "evaluate",
            "--predictions",
            "preds.jsonl",
            "--golds",
            "golds.jsonl",
            "--scheme",
            "random1",
            "--out",
            "a",
        ],
    );
    assert_eq!(run.code, 0, "{run:?}");
    let lost = random1_weight("Gender") + random1_weight("Birthplace") + random1_weight("Works");
    let expected = 100.0 * (1.0 - lost);
    let report: Value = serde_json::from_str(&read(d.join("a/report.json"))).unwrap();
    assert_eq!(report["scheme_name"], "Random 1");
    let got = report["run_mean"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-4, "{got} vs {expected}");
}

#[test]
fn evaluate_errors() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("golds.jsonl"), gold_lines(2)).unwrap();
    let preds = vec![
        ("r000".to_string(), record_json(&synthetic_record(0))),
        ("zz9".to_string(), json!({"姓名": "X"})),
    ];
    fs::write(d.join("preds.jsonl"), prediction_lines(&preds)).unwrap();
    let run = personkg(
        d,
        &[
            "evaluate",
            "--predictions",
            "preds.jsonl",
            "--golds",
            "golds.jsonl",
            "--out",
            "a",
        ],
    );
    assert_eq!(run.code, 1, "{run:?}");
    assert!(run.stderr.contains("zz9"), "{run:?}");

    let run = personkg(
        d,
        &[
            "evaluate",
            "--predictions",
            "preds.jsonl",
            "--golds",
            "golds.jsonl",
            "--scheme",
            "random9",
            "--out",
            "b",
        ],
    );
    assert_eq!(run.code, 2, "{run:?}");
}

#[test]
fn analyze_weights_selects_random1() {
    let dir = tmp();
    let d = dir.path();
    let matrix = core_file("data/reference_scores.csv");
    let matrix = matrix.to_str().unwrap();
    for (mode, out) in [("population", "a"), ("sample", "b")] {
        let run = personkg(
            d,
            &[
                "analyze-weights",
                "--matrix",
                matrix,
                "--mode",
                mode,
                "--out",
                out,
            ],
        );
        assert_eq!(run.code, 0, "{run:?}");
        assert!(run.stdout.contains("selected: Random 1"), "{run:?}");
        let report: Value =
            serde_json::from_str(&read(d.join(out).join("sensitivity.json"))).unwrap();
        assert_eq!(report["variance_mode"], mode);
    }
    let run = personkg(d, &["analyze-weights", "--reference", "--out", "c"]);
    assert!(run.stdout.contains("selected: Random 1"), "{run:?}");
}

#[test]
fn analyze_weights_constant_matrix_and_usage() {
    let dir = tmp();
    let d = dir.path();
    fs::write(
        d.join("flat.csv"),
        "Weighting Method,a,b,c\nX,80,80,80\nY,70,70,70\n",
    )
    .unwrap();
    let run = personkg(
        d,
        &["analyze-weights", "--matrix", "flat.csv", "--out", "a"],
    );
    assert_eq!(run.code, 0, "{run:?}");
    let report: Value = serde_json::from_str(&read(d.join("a/sensitivity.json"))).unwrap();
    for s in report["per_scheme"].as_array().unwrap() {
        assert_eq!(s["variance"], 0.0);
    }
    assert_eq!(report["selected_scheme"], "X");

    assert_eq!(personkg(d, &["analyze-weights"]).code, 2);
    assert_eq!(
        personkg(d, &["analyze-weights", "--reference", "--mode", "median"]).code,
        2
    );
}

#[test]
fn analyze_weights_from_reports() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("golds.jsonl"), gold_lines(4)).unwrap();
    // Three checkpoints of increasing quality.
    for (ckpt, good) in [("ckpt-0", 0), ("ckpt-1", 2), ("ckpt-2", 4)] {
        let preds: Vec<(String, Value)> = (0..4)
            .map(|i| {
                let r = synthetic_record(i);
                (
                    format!("r{i:03}"),
                    record_json(&if i < good { r } else { degraded(&r) }),
                )
            })
            .collect();
        fs::write(d.join("preds.jsonl"), prediction_lines(&preds)).unwrap();
        let out = format!("reports/{ckpt}");
        let run = personkg(
            d,
            &[
                "evaluate",
                "--predictions",
                "preds.jsonl",
                "--golds",
                "golds.jsonl",
                "--out",
                &out,
            ],
        );
        assert_eq!(run.code, 0, "{run:?}");
    }
    let run = personkg(
        d,
        &["analyze-weights", "--reports", "reports", "--out", "s"],
    );
    assert_eq!(run.code, 0, "{run:?}");
    let report: Value = serde_json::from_str(&read(d.join("s/sensitivity.json"))).unwrap();
    assert_eq!(report["checkpoints"], json!(["ckpt-0", "ckpt-1", "ckpt-2"]));
    assert_eq!(report["per_scheme"].as_array().unwrap().len(), 10);
    assert!(report["per_scheme"][0]["variance"].as_f64().unwrap() > 0.0);
}

#[test]
fn export_graph_sample_record() {
    let dir = tmp();
    let d = dir.path();
    let listing: Value =
        serde_json::from_str(&read(core_file("tests/fixtures/sample_record.json"))).unwrap();
    fs::write(
        d.join("golds.jsonl"),
        jsonl([json!({"record_id": "zeng", "record": listing})]),
    )
    .unwrap();
    let run = personkg(
        d,
        &["export-graph", "--records", "golds.jsonl", "--out", "a"],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert!(
        run.stdout
            .starts_with("1 records: 2 nodes, 1 relationships"),
        "{run:?}"
    );
    let cypher = read(d.join("a/graph.cypher"));
    assert_eq!(cypher.matches("MERGE (:Person").count(), 1);
    assert_eq!(cypher, read(core_file("tests/golden/sample_record.cypher")));

    let run = personkg(
        d,
        &["export-graph", "--records", "golds.jsonl", "--out", "b"],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert_eq!(snapshot(&d.join("a")), snapshot(&d.join("b")));
}

#[test]
fn export_graph_empty_input() {
    let dir = tmp();
    let d = dir.path();
    fs::write(d.join("preds.jsonl"), "").unwrap();
    let run = personkg(
        d,
        &["export-graph", "--records", "preds.jsonl", "--out", "a"],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert!(
        run.stdout
            .starts_with("0 records: 0 nodes, 0 relationships"),
        "{run:?}"
    );
    assert!(!read(d.join("a/graph.cypher")).contains("MERGE"));
}

#[test]
fn export_graph_merges_predictions() {
    let dir = tmp();
    let d = dir.path();
    let a = synthetic_record(1);
    let mut b = synthetic_record(1);
    b.gender = "Male".into();
    let lines = jsonl([
        json!({"record_id": "x", "status": "ok", "person_record": record_json(&a), "source": "first"}),
        json!({"record_id": "y", "status": "parse_error", "raw": "prose"}),
        json!({"record_id": "z", "status": "ok", "person_record": record_json(&b)}),
    ]);
    fs::write(d.join("preds.jsonl"), lines).unwrap();
    let run = personkg(
        d,
        &["export-graph", "--records", "preds.jsonl", "--out", "a"],
    );
    assert_eq!(run.code, 0, "{run:?}");
    assert!(run.stdout.contains("2 records"), "{run:?}");
    assert!(run.stdout.contains("1 conflicts"), "{run:?}");
    let conflict = read(d.join("a/graph.jsonl"))
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|v| v["kind"] == "conflict")
        .unwrap();
    assert_eq!(conflict["property"], "hasGender");
    assert_eq!(conflict["kept"], "Female");
}

#[test]
fn config_round_trip_and_errors() {
    let dir = tmp();
    let d = dir.path();
    fs::write(
        d.join("run.toml"),
        "seed = 9\nvariance_mode = \"sample\"\n[chat]\nkind = \"replay\"\n",
    )
    .unwrap();
    let first = personkg(d, &["--config", "run.toml", "show-config"]);
    assert_eq!(first.code, 0, "{first:?}");
    assert!(first.stdout.contains("seed = 9"));
    fs::write(d.join("again.toml"), &first.stdout).unwrap();
    let second = personkg(d, &["--config", "again.toml", "show-config"]);
    assert_eq!(first.stdout, second.stdout);

    fs::write(d.join("bad.toml"), "seed = \"nine\"\n").unwrap();
    assert_eq!(
        personkg(d, &["--config", "bad.toml", "show-config"]).code,
        2
    );
    assert_eq!(
        personkg(d, &["--config", "missing.toml", "show-config"]).code,
        2
    );
    assert_eq!(personkg(d, &["no-such-command"]).code, 2);
}

#[test]
fn templates_listing() {
    let dir = tmp();
    let d = dir.path();
    fs::create_dir(d.join("tpl")).unwrap();
    fs::write(
        d.join("tpl/brief.en.txt"),
        "Extract:\n{{character_text}}\n{{schema_block}}",
    )
    .unwrap();
    fs::write(d.join("run.toml"), "templates_dir = \"tpl\"\n").unwrap();
    let run = personkg(d, &["--config", "run.toml", "templates"]);
    assert_eq!(run.code, 0, "{run:?}");
    let names: Vec<&str> = run
        .stdout
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(names, ["zh", "en", "brief"]);
}
