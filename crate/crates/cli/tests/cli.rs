use std::path::Path;
use std::process::{Command, Output};

use faceprobe_core::pipeline::experiment::strip_timestamp;
use faceprobe_core::pipeline::io;
use faceprobe_core::pipeline::manifest::{DatasetManifest, ManifestEntry};
use faceprobe_core::synth;

fn faceprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faceprobe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = faceprobe(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const LINEAR_SPEC: &str = r#"{"seed": 3, "n_stimuli": 120, "n_neurons": 16, "dim": 6, "kind": {"type": "linear"}}"#;

#[test]
fn fit_evaluate_and_reconstruct_from_generated_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.json"), LINEAR_SPEC).unwrap();
    ok(&["gen-synthetic", "--spec", s(&d.join("spec.json")), "--format", "lpem", "--out", s(&d.join("data"))]);
    let fv = d.join("data/face_vectors.lpem");
    let emb = d.join("data/embeddings.lpem");

    ok(&["fit-linear", "--face-vectors", s(&fv), "--embeddings", s(&emb), "--out", s(&d.join("fit"))]);
    let line = ok(&[
        "eval-correlation",
        "--model",
        s(&d.join("fit/linear_model.json")),
        "--kind",
        "linear",
        "--face-vectors",
        s(&fv),
        "--embeddings",
        s(&emb),
        "--n-perm",
        "19",
        "--out",
        s(&d.join("eval")),
    ]);
    let pearson: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(pearson >= 0.999, "{line}");

    let json = ok(&[
        "reconstruct",
        "--model",
        s(&d.join("fit/linear_model.json")),
        "--kind",
        "linear",
        "--face-vectors",
        s(&fv),
        "--embeddings",
        s(&emb),
        "--out",
        s(&d.join("rec")),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(summary["max_abs_error"].as_f64().unwrap() < 1e-4);

    ok(&["fit-axis", "--face-vectors", s(&fv), "--embeddings", s(&emb), "--out", s(&d.join("fit"))]);
    assert!(d.join("fit/axis_models.json").is_file());
}

#[test]
fn run_experiment_is_repeatable_and_seed_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = format!(
        r#"{{"name": "cli", "seed": 1, "output_dir": "out", "model": "linear",
            "data": {{"source": "synthetic", "spec": {LINEAR_SPEC}}},
            "split": {{"scheme": "kfold", "k": 3}},
            "correlation": {{"n_perm": 19}}}}"#
    );
    std::fs::write(d.join("exp.json"), cfg).unwrap();
    ok(&["run-experiment", "--config", s(&d.join("exp.json"))]);
    let a = std::fs::read_to_string(d.join("out/report.json")).unwrap();
    ok(&["run-experiment", "--config", s(&d.join("exp.json"))]);
    let b = std::fs::read_to_string(d.join("out/report.json")).unwrap();
    assert_eq!(strip_timestamp(&a).unwrap(), strip_timestamp(&b).unwrap());

    ok(&["run-experiment", "--config", s(&d.join("exp.json")), "--seed", "9", "--out", s(&d.join("other"))]);
    let c: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("other/report.json")).unwrap()).unwrap();
    assert_eq!(c["seeds"]["experiment"], 9);

    let agg = ok(&["aggregate", s(&d.join("out/report.json")), s(&d.join("other/report.json"))]);
    assert_eq!(agg.lines().count(), 4);
}

#[test]
fn probes_and_verification_on_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = r#"{"seed": 2, "n_stimuli": 40, "n_neurons": 12, "dim": 5,
        "kind": {"type": "identity_clusters", "identities": 4, "per_identity": 10, "spread": 0.05, "n_pairs": 60}}"#;
    std::fs::write(d.join("spec.json"), spec).unwrap();
    ok(&["gen-synthetic", "--spec", s(&d.join("spec.json")), "--out", s(d)]);
    let line = ok(&[
        "train-classifier",
        "--features",
        s(&d.join("face_vectors.csv")),
        "--manifest",
        s(&d.join("manifest.json")),
        "--loss",
        "hinge",
        "--out",
        s(&d.join("clf")),
    ]);
    assert_eq!(line.trim(), "train accuracy 1.000000");
    let line = ok(&[
        "verify",
        "--embeddings",
        s(&d.join("embeddings.csv")),
        "--pairs",
        s(&d.join("pairs.csv")),
        "--out",
        s(&d.join("ver")),
    ]);
    assert_eq!(line.trim(), "mean accuracy 1.000000 eer 0.000000");
}

#[test]
fn paramspace_fit_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let faces = synth::toy_faces(5, 20, 48);
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for (i, f) in faces.iter().enumerate() {
        let id = format!("f{i:02}");
        f.image.write_pgm(&d.join(format!("{id}.pgm"))).unwrap();
        rows.push((id.clone(), f.landmarks.clone()));
        entries.push(ManifestEntry {
            stimulus_id: id.clone(),
            identity_label: id.clone(),
            attributes: Default::default(),
            landmark_ref: Some(id.clone()),
            image_ref: Some(format!("{id}.pgm")),
        });
    }
    std::fs::write(d.join("landmarks.csv"), io::landmarks_to_csv(&rows)).unwrap();
    let mut m = DatasetManifest::new("toy", entries);
    m.landmarks_file = Some("landmarks.csv".into());
    m.save(&d.join("manifest.json")).unwrap();

    ok(&[
        "fit-paramspace",
        "--manifest",
        s(&d.join("manifest.json")),
        "--shape-components",
        "3",
        "--appearance-components",
        "3",
        "--reference-size",
        "32",
        "--out",
        s(&d.join("ps")),
    ]);
    let fv = io::load_face_vectors(&d.join("ps/face_vectors.csv")).unwrap();
    assert_eq!(fv.n_neurons(), 6);
    ok(&[
        "synthesize",
        "--paramspace",
        s(&d.join("ps/paramspace.json")),
        "--face-vectors",
        s(&d.join("ps/face_vectors.csv")),
        "--out",
        s(&d.join("img")),
    ]);
    assert!(d.join("img/f07.pgm").is_file());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(faceprobe(&["run-experiment"]).status.code(), Some(2));
    assert_eq!(faceprobe(&["fit-linear"]).status.code(), Some(2));

    std::fs::write(d.join("p.csv"), "stimulus_id,p0\na,1\nb,2\nc,3\nd,5\n").unwrap();
    std::fs::write(d.join("bad.csv"), "stimulus_id,u0\na,1\nb,x\n").unwrap();
    let out = faceprobe(&["fit-linear", "--face-vectors", s(&d.join("p.csv")), "--embeddings", s(&d.join("bad.csv")), "--out", s(d)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    // constant responses fit fine but leave nothing to correlate
    std::fs::write(d.join("flat.csv"), "stimulus_id,u0\na,1\nb,1\nc,1\nd,1\n").unwrap();
    ok(&["fit-linear", "--face-vectors", s(&d.join("p.csv")), "--embeddings", s(&d.join("flat.csv")), "--out", s(d)]);
    let out = faceprobe(&[
        "eval-correlation",
        "--model",
        s(&d.join("linear_model.json")),
        "--kind",
        "linear",
        "--face-vectors",
        s(&d.join("p.csv")),
        "--embeddings",
        s(&d.join("flat.csv")),
        "--out",
        s(d),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
