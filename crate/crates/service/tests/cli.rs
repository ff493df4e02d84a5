mod common;

use common::{line_count, Fixture, CONFLICT_STUDY, CRITERIA, ROUNDS, STUDIES};
use screening_core::orchestrator::{Outcome, QueueKind, ReviewStore};
use screening_service::cli::{run, EXIT_OK, EXIT_VALIDATION};

#[test]
fn screen_writes_every_trace_and_enqueues_the_conflict() {
    let fx = Fixture::new("");
    assert_eq!(fx.run(&["screen"]), EXIT_OK);
    assert_eq!(line_count(&fx.out().join("traces.jsonl")), STUDIES * CRITERIA * ROUNDS);

    let store = ReviewStore::open(&fx.out().join("review")).unwrap();
    let conflicts = store.queue(QueueKind::Conflict);
    assert_eq!(conflicts.len(), 1);
    assert_eq!(conflicts[0].decision.study_id, CONFLICT_STUDY);
    assert_eq!(store.samples().len(), 2);
    let auto = store.decisions().iter().filter(|d| d.outcome.is_auto()).count();
    assert_eq!(auto, STUDIES - 1);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.out().join("run_report.json")).unwrap()).unwrap();
    assert_eq!(report["run"]["fresh_traces"], 40);

    assert_eq!(fx.run(&["screen"]), EXIT_OK);
    assert_eq!(line_count(&fx.out().join("traces.jsonl")), STUDIES * CRITERIA * ROUNDS);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.out().join("run_report.json")).unwrap()).unwrap();
    assert_eq!(report["run"]["fresh_traces"], 0);
    assert_eq!(report["run"]["reused_traces"], 40);
    assert_eq!(ReviewStore::open(&fx.out().join("review")).unwrap().samples().len(), 2);
}

#[test]
fn missing_credential_fails_before_any_call() {
    let fx = Fixture::new(
        r#"
[[providers]]
provider_name = "openai"
kind = "openai"
model_id = "gpt-test"
credential_env = "SLR_SCREEN_TEST_UNSET_KEY"
"#,
    );
    std::env::remove_var("SLR_SCREEN_TEST_UNSET_KEY");
    assert_eq!(fx.run(&["screen"]), EXIT_VALIDATION);
    assert!(!fx.out().join("traces.jsonl").exists());
    assert_eq!(fx.run(&["--provider", "local", "screen"]), EXIT_OK);
    assert_eq!(line_count(&fx.out().join("traces.jsonl")), STUDIES * CRITERIA * ROUNDS);
}

#[test]
fn stats_and_report_follow_screen() {
    let fx = Fixture::new("");
    assert_eq!(fx.run(&["stats"]), EXIT_VALIDATION);
    assert_eq!(fx.run(&["report"]), EXIT_VALIDATION);
    assert_eq!(fx.run(&["screen"]), EXIT_OK);
    assert_eq!(fx.run(&["stats"]), EXIT_OK);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.out().join("stats/stats.json")).unwrap()).unwrap();
    let unit = &stats["units"][0];
    assert_eq!(unit["rounds"].as_array().unwrap().len(), ROUNDS);
    assert_eq!(unit["outcomes"]["conflict"], 1);
    assert_eq!(stats["trivial_baseline"], 0.5);
    assert!(fx.out().join("stats/agreement.csv").exists());

    assert_eq!(fx.run(&["report"]), EXIT_OK);
    let md = std::fs::read_to_string(fx.out().join("report/report.md")).unwrap();
    assert!(md.contains("mock-a"));
    assert!(fx.out().join("report/checklist.json").exists());
    assert!(fx.out().join("report/stats_metrics.csv").exists());
    let first = md.clone();
    assert_eq!(fx.run(&["report"]), EXIT_OK);
    assert_eq!(std::fs::read_to_string(fx.out().join("report/report.md")).unwrap(), first);
}

#[test]
fn ingest_normalizes_the_corpus() {
    let fx = Fixture::new("");
    assert_eq!(fx.run(&["ingest"]), EXIT_OK);
    assert_eq!(line_count(&fx.out().join("corpus.jsonl")), STUDIES);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.out().join("ingest_report.json")).unwrap()).unwrap();
    assert_eq!(report["accepted"], STUDIES);
}

#[test]
fn overrides_are_validated() {
    let fx = Fixture::new("");
    assert_eq!(fx.run(&["--rule", "threshold:9", "screen"]), EXIT_VALIDATION);
    assert_eq!(fx.run(&["--variant", "Z", "screen"]), EXIT_VALIDATION);
    assert_eq!(fx.run(&["--provider", "nobody", "screen"]), EXIT_VALIDATION);
    assert_eq!(fx.run(&["--rounds", "0", "screen"]), EXIT_VALIDATION);
    assert!(!fx.out().join("traces.jsonl").exists());

    assert_eq!(fx.run(&["--rounds", "3", "--rule", "majority", "screen"]), EXIT_OK);
    assert_eq!(line_count(&fx.out().join("traces.jsonl")), STUDIES * CRITERIA * 3);
    let store = ReviewStore::open(&fx.out().join("review")).unwrap();
    let s2 = store.decision(CONFLICT_STUDY).unwrap();
    assert_eq!(s2.outcome, Outcome::AutoInclude);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(["slr-screen", "frobnicate"]), EXIT_VALIDATION);
    assert_eq!(run(["slr-screen"]), EXIT_VALIDATION);
    assert_eq!(run(["slr-screen", "--help"]), EXIT_OK);
    assert_eq!(run(["slr-screen", "--version"]), EXIT_OK);
    assert_eq!(run(["slr-screen", "screen"]), EXIT_VALIDATION);
    assert_eq!(run(["slr-screen", "--config", "/nonexistent/run.toml", "screen"]), EXIT_VALIDATION);
}

/// DerSimonian-Laird evaluated independently for the fixture below.
fn dl_oracle(y: &[f64], v: &[f64]) -> (f64, f64, f64) {
    let w: Vec<f64> = v.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let fixed = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let q: f64 = w.iter().zip(y).map(|(w, y)| w * (y - fixed).powi(2)).sum();
    let c = sw - w.iter().map(|w| w * w).sum::<f64>() / sw;
    let tau2 = ((q - (y.len() as f64 - 1.0)) / c).max(0.0);
    let ws: Vec<f64> = v.iter().map(|v| 1.0 / (v + tau2)).collect();
    let est = ws.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / ws.iter().sum::<f64>();
    (est, (1.0 / ws.iter().sum::<f64>()).sqrt(), tau2)
}

#[test]
fn meta_pools_an_effect_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("effects.csv");
    std::fs::write(
        &input,
        "unit_id,contrast,effect,ci_lower,ci_upper,variance\n\
         m1@a,B,1,-1,3,1\n\
         m1@b,B,3,1,5,1\n\
         m2@a,B,8,4,12,4\n\
         m1@a,E,-30,-34,-26,4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let code = run([
        "slr-screen",
        "--out",
        out.to_str().unwrap(),
        "meta",
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let pooled: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("meta/pooled.json")).unwrap()).unwrap();
    let b = &pooled["pooled"]["B"];
    let (est, se, tau2) = dl_oracle(&[1.0, 3.0, 8.0], &[1.0, 1.0, 4.0]);
    assert!((b["estimate"].as_f64().unwrap() - est).abs() < 1e-12);
    assert!((b["se"].as_f64().unwrap() - se).abs() < 1e-12);
    assert!((b["tau2"].as_f64().unwrap() - tau2).abs() < 1e-12);
    assert_eq!(b["k"], 3);
    let e = &pooled["pooled"]["E"];
    assert_eq!(e["k"], 1);
    assert_eq!(e["estimate"], -30.0);
    for f in ["effects.csv", "pooled.csv", "forest.csv", "forest.svg"] {
        assert!(out.join("meta").join(f).exists(), "{f}");
    }

    std::fs::write(&input, "unit_id,contrast,effect,ci_lower,ci_upper\nu,B,5,6,7\n").unwrap();
    let bad = ["slr-screen", "--out", out.to_str().unwrap(), "meta", "--input", input.to_str().unwrap()];
    assert_eq!(run(bad), EXIT_VALIDATION);
    let neg = ["slr-screen", "meta", "--input", input.to_str().unwrap(), "--sesoi=-1"];
    assert_eq!(run(neg), EXIT_VALIDATION);
    assert_eq!(run(["slr-screen", "meta", "--input", "/nonexistent.csv"]), EXIT_VALIDATION);
}

#[test]
fn ablate_and_baseline_write_their_bundles() {
    let fx = Fixture::new("\n[ablation]\nreplicates = 200\n\n[baseline]\ntrain_size = 2\nfolds = 2\nreplicates = 200\n");
    assert_eq!(fx.run(&["ablate"]), EXIT_OK);
    let dir = fx.out().join("ablation");
    for f in ["accuracies.csv", "effects.csv", "pooled.csv", "forest.csv", "forest.svg", "report.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let pooled = report["report"]["pooled"].as_object().unwrap();
    assert_eq!(pooled.keys().collect::<Vec<_>>(), ["B", "C", "D", "E"]);
    assert_eq!(line_count(&fx.out().join("traces.jsonl")), 5 * STUDIES * CRITERIA * ROUNDS);

    assert_eq!(fx.run(&["screen"]), EXIT_OK);
    assert_eq!(fx.run(&["baseline"]), EXIT_OK);
    let dir = fx.out().join("baseline");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["test_ids"].as_array().unwrap().len(), STUDIES - 2);
    assert_eq!(report["report"]["llm"].as_array().unwrap().len(), 1);
    assert!(dir.join("metrics.csv").exists());
    assert_eq!(dir.join("models").read_dir().unwrap().count(), 4);

    assert_eq!(fx.run(&["meta"]), EXIT_OK);
    assert!(fx.out().join("meta/pooled.json").exists());
}
