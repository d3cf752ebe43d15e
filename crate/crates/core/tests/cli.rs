mod common;

use common::{fexkit, fexkit_ok, make_inputs, run_workflow, FRAMES};
use fexkit::fexdata::{read_fex_csv, AU_NAMES};
use fexkit::geometry::FaceBox;
use fexkit::metrics::{f1, landmark_nrmse, pooled_average_precision, ConfusionCounts, TruthBox};
use serde_json::Value;

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn find<'a>(outputs: &'a [(String, Vec<u8>)], name: &str) -> &'a [u8] {
    &outputs.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("no output {name}")).1
}

#[test]
fn help_and_usage_errors() {
    let help = fexkit(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("extract"));

    let bad = fexkit(&["frobnicate"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error: usage: "));

    let unknown_flag =
        fexkit(&["viz", "aus", "--au", "AU12=1", "--vizmodel", "v.json", "--out", "f.svg", "--colour", "red"]);
    assert_eq!(unknown_flag.status.code(), Some(1));

    let missing_seed = fexkit(&["replicate", "--fex", "a.csv", "--conditions", "c.csv", "--out", "r.json"]);
    assert_eq!(missing_seed.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let fex = dir.path().join("bad.csv");
    std::fs::write(&fex, "frame,time_s\n0,0\n").unwrap();
    let out = dir.path().join("r.json");
    let r = fexkit(&["analyze", "isc", "--fex", fex.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.starts_with("error: fex: missing column"), "{err}");
    assert!(!out.exists());
}

#[test]
fn workflow_outputs_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let inp = make_inputs(dir.path());
    let outputs = run_workflow(&inp, &dir.path().join("out"), 2);

    let features = String::from_utf8(find(&outputs, "features.csv").to_vec()).unwrap();
    let header = features.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 5408 + 136);
    assert_eq!(features.lines().count(), FRAMES + 1);
    let skipped = String::from_utf8(find(&outputs, "features_skip.csv").to_vec()).unwrap();
    assert_eq!(skipped.lines().next().unwrap().split(',').count(), 5408);
    assert_eq!(skipped.lines().count(), FRAMES / 3 + 1);

    let pred = String::from_utf8(find(&outputs, "pred_logistic.csv").to_vec()).unwrap();
    assert_eq!(pred.lines().next(), Some("p_0,p_1,label"));
    let svm = String::from_utf8(find(&outputs, "pred_svm.csv").to_vec()).unwrap();
    assert_eq!(svm.lines().next(), Some("score_0,score_1,label"));

    // AU benchmark against a direct tally
    let truth = read_fex_csv(inp.root.join("landmarks.csv")).unwrap();
    let predicted = read_fex_csv(inp.root.join("pred_fex.csv")).unwrap();
    let report = json(find(&outputs, "bench_au.json"));
    let per_label = report["per_label"].as_array().unwrap();
    assert_eq!(per_label.len(), 20);
    let mut total = 0.0;
    for (j, entry) in per_label.iter().enumerate() {
        assert_eq!(entry["label"], AU_NAMES[j]);
        let p: Vec<bool> = predicted.rows().iter().map(|r| r.aus.unwrap().0[j] >= 0.5).collect();
        let t: Vec<bool> = truth.rows().iter().map(|r| r.aus.unwrap().0[j] >= 0.5).collect();
        let mut c = ConfusionCounts::default();
        for (a, b) in p.iter().zip(&t) {
            match (a, b) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        assert_eq!(entry["counts"]["tp"], c.tp);
        assert_eq!(entry["counts"]["fp"], c.fp);
        assert_eq!(entry["counts"]["fn_"], c.fn_);
        assert_eq!(entry["f1"].as_f64().unwrap(), f1(&c));
        total += f1(&c);
    }
    assert!((report["average"].as_f64().unwrap() - total / 20.0).abs() < 1e-15);

    let lm_report = json(find(&outputs, "bench_landmarks.json"));
    let expect: Vec<f64> = predicted
        .rows()
        .iter()
        .zip(truth.rows())
        .map(|(p, t)| landmark_nrmse(p.landmarks.as_ref().unwrap(), t.landmarks.as_ref().unwrap()).unwrap())
        .collect();
    let got: Vec<f64> = lm_report["per_row"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(got, expect);

    let emo = json(find(&outputs, "bench_emotion.json"));
    assert_eq!(emo["rows"], FRAMES);
    assert!((emo["accuracy"].as_f64().unwrap() - 0.75).abs() < 1e-12);

    let fb = json(find(&outputs, "bench_facebox.json"));
    let b = |x, y, w, h, s| FaceBox::new(x, y, w, h, s).unwrap();
    let t = |bbox, ignore| TruthBox { bbox, ignore };
    let all = pooled_average_precision(
        &[
            (
                vec![b(10., 10., 50., 50., 0.9), b(200., 200., 40., 40., 0.8), b(12., 80., 40., 40., 0.3)],
                vec![t(b(12., 12., 50., 50., 0.), false), t(b(10., 80., 40., 40., 0.), false)],
            ),
            (vec![b(0., 0., 30., 30., 0.7), b(100., 100., 20., 20., 0.6)], vec![t(b(2., 1., 30., 30., 0.), false)]),
            (vec![], vec![t(b(5., 5., 10., 10., 0.), false)]),
        ],
        0.5,
    );
    let buckets = fb["ap"].as_array().unwrap();
    assert_eq!(buckets[0]["bucket"], "all");
    assert_eq!(buckets[0]["ap"].as_f64().unwrap(), all);
    assert_eq!(buckets.iter().map(|b| b["bucket"].as_str().unwrap()).collect::<Vec<_>>(), ["all", "easy", "hard"]);

    let rep = json(find(&outputs, "replicate.json"));
    assert_eq!(rep["positive_condition"], "good");
    assert_eq!(rep["logo_accuracy"], 1.0);

    let tt = json(find(&outputs, "an_ttest.json"));
    let au12 = tt["results"].as_array().unwrap().iter().find(|r| r["feature"] == "AU12").unwrap();
    assert_eq!(au12["df"], 18.0);
    assert!(au12["t"].as_f64().unwrap() > 0.0);

    let isc = json(find(&outputs, "an_isc.json"));
    assert_eq!(isc["subjects"].as_array().unwrap().len(), 20);

    let bands = String::from_utf8(find(&outputs, "pre_bands.csv").to_vec()).unwrap();
    assert_eq!(bands.lines().next().unwrap().split(',').count(), 1 + 2 * 2 * 3);
    assert_eq!(bands.lines().count(), 21);

    for name in [
        "viz_aus.svg",
        "viz_heat.svg",
        "viz_detections.svg",
        "coef_positive.svg",
        "coef_negative.svg",
        "coef_chart.svg",
    ] {
        let text = std::str::from_utf8(find(&outputs, name)).unwrap();
        roxmltree::Document::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn preprocess_rejects_bands_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let inp = make_inputs(dir.path());
    let out = dir.path().join("x.csv");
    let r = fexkit(&[
        "preprocess",
        "--fex",
        &inp.path("sessions.csv"),
        "--baseline",
        "none",
        "--summary",
        "mean",
        "--bands",
        &inp.path("bands.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    fexkit_ok(&["preprocess", "--fex", &inp.path("sessions.csv"), "--summary", "max", "--out", out.to_str().unwrap()]);
    assert_eq!(read_fex_csv(&out).unwrap().len(), 20);
}
