#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fexkit::fexdata::{fex_csv_bytes, write_fex_csv, AuVector, EmotionVector, FexRow, FexTable};
use fexkit::geometry::FaceBox;
use fexkit::synth::{goodnews_fixture, posed_face, train_viz_model};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn fexkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fexkit")).args(args).output().expect("binary runs")
}

pub fn fexkit_ok(args: &[&str]) -> Output {
    let out = fexkit(args);
    assert!(
        out.status.success(),
        "fexkit {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const FRAMES: usize = 12;
pub const IMAGE_SIZE: usize = 160;

/// Input files shared by the CLI workflows.
pub struct Inputs {
    pub root: PathBuf,
}

impl Inputs {
    pub fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// Posed synthetic faces with alternating AU12, their landmark/AU Fex CSV,
/// labels, a session fixture, benchmark files and a visualization model.
pub fn make_inputs(root: &Path) -> Inputs {
    let images = root.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    let mut rows = Vec::new();
    let mut labels = String::from("label\n");
    for i in 0..FRAMES {
        let mut aus = AuVector::zeros();
        let on = i % 2 == 0;
        aus.set("AU12", if on { 0.9 } else { 0.1 });
        aus.set("AU01", if on { 0.1 } else { 0.6 });
        let (img, lm) = posed_face(&aus, IMAGE_SIZE, &mut rng);
        std::fs::write(images.join(format!("frame_{i:03}.png")), img.to_png_bytes().unwrap()).unwrap();
        let mut row = FexRow::new(i as u64, i as f64 / 30.0);
        row.session = if i < FRAMES / 2 { "s1".into() } else { "s2".into() };
        row.facebox = Some(FaceBox::new(20.0, 20.0, 120.0, 120.0, 0.99).unwrap());
        row.landmarks = Some(lm);
        row.aus = Some(aus);
        let mut emo = [0.1; 7];
        emo[if on { 3 } else { 4 }] = 0.8;
        row.emotions = Some(EmotionVector(emo));
        rows.push(row);
        labels.push_str(if on { "1\n" } else { "0\n" });
    }
    let table = FexTable::from_rows(rows).unwrap();
    write_fex_csv(&table, root.join("landmarks.csv")).unwrap();
    write(&root.join("labels.csv"), &labels);

    // predictions: same table with perturbed AUs, emotions and landmarks
    let shifted: Vec<FexRow> = table
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            let mut aus = r.aus.unwrap();
            aus.0.iter_mut().enumerate().for_each(|(j, a)| *a = (*a + 0.07 * ((i + j) % 5) as f64).min(1.0));
            r.aus = Some(aus);
            r.landmarks =
                r.landmarks.map(|lm| lm.map(|p| p + nalgebra::Vector2::new(0.5, -0.25 * (i % 3) as f64)).unwrap());
            if i % 4 == 0 {
                r.emotions = Some(EmotionVector([0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
            }
            r
        })
        .collect();
    std::fs::write(root.join("pred_fex.csv"), fex_csv_bytes(&FexTable::from_rows(shifted).unwrap()).unwrap()).unwrap();

    write(
        &root.join("boxes_pred.csv"),
        "image,x,y,width,height,score\n\
         a,10,10,50,50,0.9\n\
         a,200,200,40,40,0.8\n\
         a,12,80,40,40,0.3\n\
         b,0,0,30,30,0.7\n\
         b,100,100,20,20,0.6\n",
    );
    write(
        &root.join("boxes_truth.csv"),
        "image,x,y,width,height,difficulty\n\
         a,12,12,50,50,easy\n\
         a,10,80,40,40,hard\n\
         b,2,1,30,30,easy\n\
         c,5,5,10,10,hard\n",
    );

    let fx = goodnews_fixture(10, 3);
    write_fex_csv(&fx.table, root.join("sessions.csv")).unwrap();
    let mut cond = String::from("session,condition\n");
    for (s, c) in &fx.conditions {
        cond.push_str(&format!("{s},{c}\n"));
    }
    write(&root.join("conditions.csv"), &cond);
    let mut design = String::from("intercept,trend\n");
    for r in fx.table.rows() {
        design.push_str(&format!("1,{}\n", r.frame));
    }
    write(&root.join("design.csv"), &design);
    write(
        &root.join("bands.json"),
        r#"{"rate": 30, "bands": [{"low": 0.5, "high": 3}, {"low": 3, "high": 10}], "thresholds": [-0.02, 0, 0.02], "columns": ["AU01", "AU12"]}"#,
    );
    write(&root.join("grid.json"), r#"{"l2": [0.01, 1]}"#);
    write(&root.join("forest_grid.json"), r#"{"n_trees": [15], "max_depth": [4, null]}"#);

    let viz = train_viz_model(0).unwrap();
    write(&root.join("viz.json"), &viz.to_json().unwrap());
    Inputs { root: root.to_path_buf() }
}

/// Runs every subcommand once, writing outputs under `out` with `--jobs jobs`.
/// Returns `(name, bytes)` for each output file in a fixed order.
pub fn run_workflow(inp: &Inputs, out: &Path, jobs: usize) -> Vec<(String, Vec<u8>)> {
    std::fs::create_dir_all(out).unwrap();
    let o = |name: &str| out.join(name).to_string_lossy().into_owned();
    let j = jobs.to_string();
    let runs: Vec<Vec<String>> = vec![
        vec![
            "extract",
            "--images",
            &inp.path("images"),
            "--landmarks",
            &inp.path("landmarks.csv"),
            "--crop",
            "112",
            "--hog",
            "8,8,2",
            "--pca",
            "none",
            "--out",
            &o("features.csv"),
        ],
        vec![
            "extract",
            "--images",
            &inp.path("images"),
            "--landmarks",
            &inp.path("landmarks.csv"),
            "--pca",
            "none",
            "--skip-frames",
            "2",
            "--no-landmarks",
            "--out",
            &o("features_skip.csv"),
        ],
        vec![
            "train",
            "--task",
            "au",
            "--model",
            "logistic",
            "--features",
            &o("features.csv"),
            "--labels",
            &inp.path("labels.csv"),
            "--folds",
            "3",
            "--grid",
            &inp.path("grid.json"),
            "--seed",
            "5",
            "--pca-retain",
            "0.95",
            "--out",
            &o("logistic.json"),
        ],
        vec![
            "extract",
            "--images",
            &inp.path("images"),
            "--landmarks",
            &inp.path("landmarks.csv"),
            "--pca",
            &o("logistic.json"),
            "--out",
            &o("features_pca.csv"),
        ],
        vec![
            "train",
            "--task",
            "au",
            "--model",
            "svm",
            "--features",
            &o("features.csv"),
            "--labels",
            &inp.path("labels.csv"),
            "--folds",
            "3",
            "--grid",
            &inp.path("grid.json"),
            "--seed",
            "5",
            "--out",
            &o("svm.json"),
        ],
        vec![
            "train",
            "--task",
            "au",
            "--model",
            "forest",
            "--features",
            &o("features_pca.csv"),
            "--labels",
            &inp.path("labels.csv"),
            "--folds",
            "3",
            "--grid",
            &inp.path("forest_grid.json"),
            "--seed",
            "5",
            "--out",
            &o("forest.json"),
        ],
        vec![
            "predict",
            "--model",
            &o("logistic.json"),
            "--features",
            &o("features.csv"),
            "--out",
            &o("pred_logistic.csv"),
        ],
        vec!["predict", "--model", &o("svm.json"), "--features", &o("features.csv"), "--out", &o("pred_svm.csv")],
        vec![
            "predict",
            "--model",
            &o("forest.json"),
            "--features",
            &o("features_pca.csv"),
            "--out",
            &o("pred_forest.csv"),
        ],
        vec![
            "benchmark",
            "--task",
            "au",
            "--pred",
            &inp.path("pred_fex.csv"),
            "--truth",
            &inp.path("landmarks.csv"),
            "--out",
            &o("bench_au.json"),
        ],
        vec![
            "benchmark",
            "--task",
            "emotion",
            "--pred",
            &inp.path("pred_fex.csv"),
            "--truth",
            &inp.path("landmarks.csv"),
            "--out",
            &o("bench_emotion.json"),
        ],
        vec![
            "benchmark",
            "--task",
            "landmarks",
            "--pred",
            &inp.path("pred_fex.csv"),
            "--truth",
            &inp.path("landmarks.csv"),
            "--out",
            &o("bench_landmarks.json"),
        ],
        vec![
            "benchmark",
            "--task",
            "facebox",
            "--pred",
            &inp.path("boxes_pred.csv"),
            "--truth",
            &inp.path("boxes_truth.csv"),
            "--iou",
            "0.5",
            "--out",
            &o("bench_facebox.json"),
        ],
        vec![
            "preprocess",
            "--fex",
            &inp.path("sessions.csv"),
            "--baseline",
            "median",
            "--summary",
            "mean",
            "--out",
            &o("pre_summary.csv"),
        ],
        vec![
            "preprocess",
            "--fex",
            &inp.path("sessions.csv"),
            "--baseline",
            &inp.path("landmarks.csv"),
            "--summary",
            "none",
            "--out",
            &o("pre_external.csv"),
        ],
        vec![
            "preprocess",
            "--fex",
            &inp.path("sessions.csv"),
            "--baseline",
            "median",
            "--summary",
            "none",
            "--bands",
            &inp.path("bands.json"),
            "--out",
            &o("pre_bands.csv"),
        ],
        vec![
            "analyze",
            "ttest",
            "--fex",
            &inp.path("sessions.csv"),
            "--conditions",
            &inp.path("conditions.csv"),
            "--out",
            &o("an_ttest.json"),
        ],
        vec![
            "analyze",
            "regress",
            "--fex",
            &inp.path("sessions.csv"),
            "--design",
            &inp.path("design.csv"),
            "--out",
            &o("an_regress.json"),
        ],
        vec!["analyze", "isc", "--fex", &inp.path("sessions.csv"), "--axis", "time", "--out", &o("an_isc.json")],
        vec![
            "viz",
            "aus",
            "--au",
            "AU12=1.0,AU17=0.5",
            "--vizmodel",
            &inp.path("viz.json"),
            "--overlay",
            "vectors",
            "--out",
            &o("viz_aus.svg"),
        ],
        vec![
            "viz",
            "aus",
            "--au",
            "AU01=1",
            "--vizmodel",
            &inp.path("viz.json"),
            "--overlay",
            "heat",
            "--out",
            &o("viz_heat.svg"),
        ],
        vec![
            "viz",
            "detections",
            "--fex",
            &inp.path("landmarks.csv"),
            "--frame",
            "3",
            "--image",
            &inp.path("images/frame_003.png"),
            "--out",
            &o("viz_detections.svg"),
        ],
        vec![
            "replicate",
            "--fex",
            &inp.path("sessions.csv"),
            "--conditions",
            &inp.path("conditions.csv"),
            "--seed",
            "7",
            "--out",
            &o("replicate.json"),
            "--model-out",
            &o("replicate_model.json"),
        ],
        vec![
            "viz",
            "coefficients",
            "--model",
            &o("replicate_model.json"),
            "--vizmodel",
            &inp.path("viz.json"),
            "--scale",
            "0.2",
            "--out-prefix",
            &o("coef_"),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in runs {
        let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
        full.extend(["--jobs", &j]);
        let t0 = std::time::Instant::now();
        fexkit_ok(&full);
        if std::env::var_os("FEX_TIMING").is_some() {
            eprintln!("{:>8.2}s {}", t0.elapsed().as_secs_f64(), full[..2].join(" "));
        }
    }
    let mut names: Vec<String> =
        std::fs::read_dir(out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), std::fs::read(out.join(&n)).unwrap())).collect()
}
