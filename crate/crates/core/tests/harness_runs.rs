//! End-to-end harness runs on the bundled 512-image fixture.

use std::io::Write;
use std::path::Path;

use ood_baseline::harness::{
    emit_report, generate_ood, obtain_model, ood_detection_report, prepare_data, run_experiment,
    run_ingest, ExperimentConfig, Overrides, ReportDocument, ReportFormat, Task,
};
use ood_baseline::metrics::build_report;
use ood_baseline::scores::ScoreKind;

fn config(task: &str, extra: serde_json::Value) -> ExperimentConfig {
    let mut value = serde_json::json!({
        "task": task,
        "seed": 5,
        "data": {
            "train_images": "mnist-512-images-idx3-ubyte",
            "train_labels": "mnist-512-labels-idx1-ubyte",
            "test_images": "mnist-512-images-idx3-ubyte",
            "test_labels": "mnist-512-labels-idx1-ubyte",
            "train_limit": 256,
        },
        "training": {"epochs": 2, "batch_size": 32, "hidden": [24]},
    });
    for (k, v) in extra.as_object().unwrap() {
        value[k] = v.clone();
    }
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    ExperimentConfig::from_json(&value.to_string(), &Overrides::default(), base).unwrap()
}

#[test]
fn pooled_row_matches_concatenated_populations() {
    let cfg = config(
        "ood-detection",
        serde_json::json!({"ood_sources": [{"kind": "gaussian", "count": 100}, {"kind": "uniform", "count": 50}]}),
    );
    let data = prepare_data(&cfg).unwrap();
    let (model, log) = obtain_model(&cfg, &data).unwrap();
    let doc = ood_detection_report(&cfg, &model, &data, &log).unwrap();
    assert_eq!(doc.rows.len(), 3);

    let scores = |x: ndarray::ArrayView2<f64>| {
        ood_baseline::harness::softmax_scores(&model, x, cfg.score).unwrap().0
    };
    let inside = scores(data.test.inputs.view());
    let mut pooled = Vec::new();
    for (i, source) in cfg.ood_sources.iter().enumerate() {
        let ds = generate_ood(source, &data, cfg.seed, i).unwrap().unwrap();
        pooled.extend(scores(ds.inputs.view()));
    }
    assert_eq!(pooled.len(), 150);
    let expected = build_report(&inside, &pooled).unwrap();
    let all = doc.row("MNIST/All").unwrap().detector("softmax").unwrap();
    assert_eq!(all, &expected);
}

#[test]
fn external_logits_reproduce_the_internal_row() {
    let cfg = config("ood-detection", serde_json::json!({"ood_sources": [{"kind": "gaussian", "count": 128}]}));
    let data = prepare_data(&cfg).unwrap();
    let (model, log) = obtain_model(&cfg, &data).unwrap();
    let internal = ood_detection_report(&cfg, &model, &data, &log).unwrap();
    let ood = generate_ood(&cfg.ood_sources[0], &data, cfg.seed, 0).unwrap().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logits.jsonl");
    let mut file = std::fs::File::create(&path).unwrap();
    for (inputs, group) in [(&data.test.inputs, "in"), (&ood.inputs, "out")] {
        let logits = model.logits(inputs.view()).unwrap();
        for row in logits.outer_iter() {
            let rec = serde_json::json!({"logits": row.to_vec(), "label": null, "group": group});
            writeln!(file, "{rec}").unwrap();
        }
    }
    drop(file);

    let external = run_ingest(&path, ScoreKind::MaxProb, "MNIST/Gaussian").unwrap();
    assert_eq!(external.task, Task::External);
    assert_eq!(
        external.rows[0].detector("external").unwrap(),
        internal.rows[0].detector("softmax").unwrap()
    );
}

#[test]
fn reports_round_trip_through_every_format() {
    let cfg = config("error-detection", serde_json::json!({}));
    let doc = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_report(&doc, dir.path(), "report", &ReportFormat::ALL).unwrap();
    assert_eq!(paths.len(), 3);
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let back = ReportDocument::from_json(&json).unwrap();
    assert_eq!(back, doc);
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("| Dataset | AUROC/Base |"));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn seed_override_changes_the_run() {
    let cfg = config("error-detection", serde_json::json!({}));
    let a = run_experiment(&cfg).unwrap();
    let other = ExperimentConfig { seed: 6, ..cfg.clone() };
    let b = run_experiment(&other).unwrap();
    assert_ne!(a.provenance.config_hash, b.provenance.config_hash);
    assert_ne!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn abmod_pipeline_is_well_formed() {
    let cfg = config(
        "abmod",
        serde_json::json!({
            "training": {"epochs": 2, "batch_size": 32, "hidden": [24], "decoder": true,
                          "loss_weights": {"classification": 1.0, "reconstruction": 1.0}},
            "ood_sources": [{"kind": "gaussian", "count": 64}],
            "abmod": {"clean_examples": 128},
        }),
    );
    let doc = run_experiment(&cfg).unwrap();
    doc.validate().unwrap();
    let row = &doc.rows[0];
    for name in ["softmax", "abmod"] {
        let r = row.detector(name).unwrap();
        assert_eq!(r.n_negative, 64);
        assert!(r.auroc.is_finite());
    }
    assert_eq!(doc.averages.len(), 2);
    assert_eq!(doc.notes["backbone_checksum_before"], doc.notes["backbone_checksum_after"]);
}
