use std::path::Path;

use faceprobe_core::encoding::ResponseMatrix;
use faceprobe_core::paramspace::{GrayImage, LandmarkSet, ParamSpace, ParamSpaceConfig};
use faceprobe_core::pipeline::config::{
    ClassifierConfig, CorrelationConfig, DataSource, ExperimentConfig, ModelKind, ReconstructConfig, SplitSpec,
    VerificationConfig,
};
use faceprobe_core::pipeline::dataset::export_synthetic;
use faceprobe_core::pipeline::experiment::{aggregate, run_experiment, strip_timestamp, ExperimentReport, REPORT_FILE};
use faceprobe_core::pipeline::io::{self, EmbeddingFormat};
use faceprobe_core::pipeline::manifest::DatasetManifest;
use faceprobe_core::pipeline::partition::{kfold, PartitionScheme};
use faceprobe_core::synth::{self, ClusterParams, SynthKind, SynthSpec};
use faceprobe_core::Error;
use nalgebra::{DMatrix, DVector};

fn linear_spec(seed: u64, sigma: f64) -> SynthSpec {
    SynthSpec {
        seed,
        n_stimuli: 160,
        n_neurons: 24,
        dim: 8,
        noise_sigma: sigma,
        variance_decay: None,
        kind: SynthKind::Linear,
    }
}

fn cluster_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        n_stimuli: 60,
        n_neurons: 20,
        dim: 6,
        noise_sigma: 0.0,
        variance_decay: None,
        kind: SynthKind::IdentityClusters(ClusterParams {
            identities: 6,
            per_identity: 10,
            spread: 0.05,
            center_scale: 1.0,
            separation: 6.0,
            n_pairs: 0,
        }),
    }
}

fn config(out: &Path, model: ModelKind, data: DataSource) -> ExperimentConfig {
    ExperimentConfig {
        name: "test".into(),
        seed: 11,
        output_dir: out.to_path_buf(),
        model,
        data,
        split: SplitSpec::Holdout { test_fraction: 0.25 },
        ridge_lambda: 0.0,
        standardize: false,
        correlation: CorrelationConfig { n_perm: 49, alpha: 0.05 },
        classifier: None,
        verification: None,
        reconstruct: None,
    }
}

#[test]
fn linear_data_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ModelKind::Linear, DataSource::Synthetic { spec: linear_spec(1, 0.0) });
    let report = run_experiment(&cfg).unwrap();
    assert!(report.mean_pearson >= 0.999, "{}", report.mean_pearson);
    assert_eq!(report.splits[0].n_test, 40);
    assert!(report.splits[0].decode.max_abs_error < 1e-8);
    assert!(dir.path().join("correlation_holdout.csv").is_file());

    let back = ExperimentReport::load(&dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(back, report);
}

#[test]
fn axis_model_trails_linear_model_on_linear_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = DataSource::Synthetic { spec: linear_spec(2, 0.0) };
    let lin = run_experiment(&config(&dir.path().join("lin"), ModelKind::Linear, data.clone())).unwrap();
    let axis = run_experiment(&config(&dir.path().join("axis"), ModelKind::Axis, data)).unwrap();
    assert!(axis.mean_pearson < lin.mean_pearson, "axis {} linear {}", axis.mean_pearson, lin.mean_pearson);
}

#[test]
fn identical_configs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), ModelKind::Axis, DataSource::Synthetic { spec: linear_spec(3, 0.1) });
    cfg.split = SplitSpec::Kfold { k: 4 };
    run_experiment(&cfg).unwrap();
    let first = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    let csv_first = std::fs::read(dir.path().join("correlation_fold02.csv")).unwrap();
    run_experiment(&cfg).unwrap();
    let second = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(strip_timestamp(&first).unwrap(), strip_timestamp(&second).unwrap());
    assert_eq!(csv_first, std::fs::read(dir.path().join("correlation_fold02.csv")).unwrap());
}

#[test]
fn pair_folds_at_benchmark_scale() {
    let folds = kfold(6000, 10, 5).unwrap();
    assert!(folds.iter().all(|f| f.test.len() == 600 && f.train.len() == 5400));
    let mut seen = vec![false; 6000];
    for f in &folds {
        for &i in &f.test {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|s| *s));
}

#[test]
fn probes_and_verification_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth::generate(&cluster_spec(4)).unwrap();
    let files = export_synthetic(&ds, &dir.path().join("data"), EmbeddingFormat::Csv).unwrap();
    let mut cfg = config(
        &dir.path().join("out"),
        ModelKind::Linear,
        DataSource::Files {
            face_vectors: files.face_vectors,
            embeddings: files.embeddings,
            embedding_format: None,
            manifest: Some(files.manifest),
        },
    );
    cfg.split = SplitSpec::Holdout { test_fraction: 0.5 };
    cfg.classifier = Some(ClassifierConfig::default());
    cfg.verification = Some(VerificationConfig {
        pairs: None,
        n_pairs: 100,
        folds: 5,
    });
    let report = run_experiment(&cfg).unwrap();
    let split = &report.splits[0];
    assert_eq!(split.classifier.len(), 4);
    for probe in &split.classifier {
        assert_eq!(probe.train_accuracy, 1.0, "{probe:?}");
        assert_eq!(probe.test_accuracy, 1.0, "{probe:?}");
    }
    let v = split.verification.as_ref().unwrap();
    assert_eq!((v.n_pairs, v.n_same), (100, 50));
    for r in &v.results {
        assert_eq!(r.eer, 0.0);
        assert_eq!(r.mean_accuracy, 1.0);
    }
    assert!(dir.path().join("out/roc_holdout_predicted.csv").is_file());
    assert!(dir.path().join("out/training_holdout_hinge_observed.csv").is_file());
}

#[test]
fn pose_preset_partition_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth::generate(&linear_spec(5, 0.0)).unwrap();
    let files = export_synthetic(&ds, dir.path(), EmbeddingFormat::Lpem).unwrap();
    let poses = ["-45", "-30", "-15", "0", "15", "30", "45", "-15"];
    let mut m = DatasetManifest::load(&files.manifest).unwrap();
    for (j, e) in m.entries.iter_mut().enumerate() {
        e.identity_label = format!("person{}", j / 8);
        e.attributes.insert("pose".into(), poses[j % 8].into());
    }
    m.save(&files.manifest).unwrap();

    let mut cfg = config(
        &dir.path().join("out"),
        ModelKind::Linear,
        DataSource::Files {
            face_vectors: files.face_vectors,
            embeddings: files.embeddings,
            embedding_format: None,
            manifest: Some(files.manifest.clone()),
        },
    );
    cfg.split = SplitSpec::Partition {
        preset: Some("poses-a".into()),
        partition: None,
    };
    let report = run_experiment(&cfg).unwrap();
    let split = &report.splits[0];
    assert_eq!(split.name, "poses-a");
    // poses -45, 15 and 30 are held out: 3 of every 8 stimuli
    assert_eq!(split.n_test, 60);
    let held: std::collections::HashSet<&str> = ["-45", "15", "30"].into();
    for id in &split.test_ids {
        assert!(held.contains(m.entry(id).unwrap().attributes["pose"].as_str()));
    }
    assert!(report.mean_pearson >= 0.999);

    cfg.split = SplitSpec::Partition {
        preset: None,
        partition: Some(PartitionScheme::preset("poses-random-3", 9).unwrap()),
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.splits[0].chosen_values[0].values.len(), 3);
}

#[test]
fn reconstruction_errors_follow_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = DataSource::Synthetic { spec: linear_spec(6, 0.0) };
    let mut lin = config(&dir.path().join("lin"), ModelKind::Linear, data.clone());
    lin.reconstruct = Some(ReconstructConfig::default());
    let mut axis = lin.clone();
    axis.model = ModelKind::Axis;
    axis.output_dir = dir.path().join("axis");
    let lin = run_experiment(&lin).unwrap();
    let axis = run_experiment(&axis).unwrap();
    let (l, a) = (
        lin.splits[0].reconstruction.as_ref().unwrap(),
        axis.splits[0].reconstruction.as_ref().unwrap(),
    );
    assert!(l.max_abs_error < 1e-4, "{}", l.max_abs_error);
    assert!(a.mean_abs_error > l.mean_abs_error);
    assert!(dir.path().join("lin/reconstruct/holdout/coefficients.csv").is_file());
}

#[test]
fn reconstruction_renders_with_a_parameter_space() {
    let dir = tempfile::tempdir().unwrap();
    let faces = synth::toy_faces(8, 30, 48);
    let samples: Vec<(LandmarkSet, GrayImage)> = faces.into_iter().map(|f| (f.landmarks, f.image)).collect();
    let ps_cfg = ParamSpaceConfig {
        shape_components: 4,
        appearance_components: 4,
        reference_size: 32,
        ..Default::default()
    };
    let fit = ParamSpace::fit(&samples, &ps_cfg).unwrap();
    let space_path = dir.path().join("space.json");
    fit.space.save(&space_path).unwrap();

    let p = fit.face_vectors.clone();
    let ids = synth::stimulus_ids(p.ncols());
    let t = DMatrix::from_fn(12, p.nrows(), |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
    let r = synth::linear_responses(&t, &DVector::from_element(12, 0.5), &p, 0.0, 0).unwrap();
    io::save_embeddings(&io::face_vectors_matrix(&p, ids).unwrap(), &dir.path().join("p.csv"), None).unwrap();
    io::save_embeddings(&r, &dir.path().join("r.csv"), None).unwrap();

    let mut cfg = config(
        &dir.path().join("out"),
        ModelKind::Linear,
        DataSource::Files {
            face_vectors: dir.path().join("p.csv"),
            embeddings: dir.path().join("r.csv"),
            embedding_format: None,
            manifest: None,
        },
    );
    cfg.reconstruct = Some(ReconstructConfig {
        paramspace: Some(space_path),
        max_stimuli: 3,
        canvas: Some((40, 40)),
    });
    let report = run_experiment(&cfg).unwrap();
    let rec = report.splits[0].reconstruction.as_ref().unwrap();
    assert_eq!(rec.images_written, 6);
    let first = &rec.stimulus_ids[0];
    let img = GrayImage::load(&dir.path().join(format!("out/reconstruct/holdout/{first}_reconstructed.pgm"))).unwrap();
    assert_eq!((img.width(), img.height()), (40, 40));
}

#[test]
fn aggregate_averages_report_means() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    let mut means = Vec::new();
    for seed in 0..2 {
        let out = dir.path().join(format!("r{seed}"));
        let r = run_experiment(&config(&out, ModelKind::Linear, DataSource::Synthetic { spec: linear_spec(seed, 0.3) })).unwrap();
        means.push(r.mean_spearman);
        paths.push(out.join(REPORT_FILE));
    }
    let agg = aggregate(&paths).unwrap();
    assert_eq!(agg.rows.len(), 2);
    assert!((agg.mean_spearman - (means[0] + means[1]) / 2.0).abs() < 1e-15);
    assert_eq!(agg.to_csv().lines().count(), 3);
}

#[test]
fn bad_inputs_fail_before_work_starts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), ModelKind::Linear, DataSource::Synthetic { spec: linear_spec(1, 0.0) });
    cfg.verification = Some(VerificationConfig::default());
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    assert!(!dir.path().join(REPORT_FILE).exists());

    std::fs::write(dir.path().join("bad.csv"), "stimulus_id,u0\ns1,1\ns2,oops\n").unwrap();
    let err = io::load_embeddings(&dir.path().join("bad.csv"), None).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");

    // the hand-written embedding fixture: 3 stimuli, 2 units
    std::fs::write(dir.path().join("ok.csv"), "stimulus_id,u0,u1\na,1,2\nb,3,4\nc,5,-6.5\n").unwrap();
    let r: ResponseMatrix = io::load_embeddings(&dir.path().join("ok.csv"), None).unwrap();
    assert_eq!(r.values(), &DMatrix::from_row_slice(2, 3, &[1.0, 3.0, 5.0, 2.0, 4.0, -6.5]));
}
