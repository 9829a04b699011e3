use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use faceprobe_core::axismodel;
use faceprobe_core::classify::{self, LinearClassifier, LossKind, TrainOptions};
use faceprobe_core::encoding::{self, LinearEncodingModel, LinearFitOptions, ResponseMatrix};
use faceprobe_core::metrics::{self, SummaryOptions};
use faceprobe_core::paramspace::{GrayImage, LandmarkSet, ParamSpace, ParamSpaceConfig};
use faceprobe_core::pipeline::config::{DataSource, ExperimentConfig, ReconstructConfig, VerificationConfig};
use faceprobe_core::pipeline::dataset::export_synthetic;
use faceprobe_core::pipeline::experiment::{self, aggregate, run_experiment};
use faceprobe_core::pipeline::io::{self, write_file, EmbeddingFormat};
use faceprobe_core::pipeline::manifest::DatasetManifest;
use faceprobe_core::pipeline::reconstruct::write_reconstructions;
use faceprobe_core::synth::{self, SynthSpec};
use faceprobe_core::verify::PairSet;
use faceprobe_core::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "faceprobe", version, about = "Linear and axis encoding models for face representations")]
struct Cli {
    /// Experiment config (JSON). Required by run-experiment; gen-synthetic
    /// reads its synthetic data spec.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config or spec seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Linear,
    Axis,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Lpem,
}

impl From<Format> for EmbeddingFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => EmbeddingFormat::Csv,
            Format::Lpem => EmbeddingFormat::Lpem,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Softmax,
    Hinge,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the shape/appearance parameter space to landmarked images.
    FitParamspace {
        /// Manifest whose entries carry `image_ref` and `landmark_ref`.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 25)]
        shape_components: usize,
        #[arg(long, default_value_t = 25)]
        appearance_components: usize,
        #[arg(long, default_value_t = 64)]
        reference_size: usize,
        #[arg(long)]
        normalize_appearance: bool,
    },
    /// Render face images from face vectors.
    Synthesize {
        #[arg(long)]
        paramspace: PathBuf,
        #[arg(long)]
        face_vectors: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Generate a synthetic dataset in the ingestion formats.
    GenSynthetic {
        /// SynthSpec JSON; defaults to the config's synthetic data spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Fit the linear encoding model.
    FitLinear {
        #[arg(long)]
        face_vectors: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        ridge_lambda: f64,
        #[arg(long)]
        standardize: bool,
    },
    /// Fit one axis model per neuron.
    FitAxis {
        #[arg(long)]
        face_vectors: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Correlate a fitted model's predictions with observed responses.
    EvalCorrelation {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        face_vectors: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 999)]
        n_perm: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Train a linear classifier on representations with manifest labels.
    TrainClassifier {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Loss::Softmax)]
        loss: Loss,
        /// Held-out representations to report accuracy on.
        #[arg(long)]
        test_features: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
    },
    /// Pair verification with k-fold threshold learning.
    Verify {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
    },
    /// Decode face vectors from responses and write reconstructions.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        embeddings: PathBuf,
        /// Original face vectors, for the error tables.
        #[arg(long)]
        face_vectors: PathBuf,
        #[arg(long)]
        paramspace: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        max_stimuli: usize,
    },
    /// Run a full experiment from --config.
    RunExperiment,
    /// Average correlation means over experiment reports.
    Aggregate {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn need_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref()
        .ok_or_else(|| Error::Config("--out <dir> is required for this command".into()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        other => other,
    })
}

enum Model {
    Linear(LinearEncodingModel),
    Axis(Vec<axismodel::AxisNeuronModel>),
}

fn load_model(path: &Path, kind: Kind) -> Result<Model> {
    let text = read_text(path)?;
    Ok(match kind {
        Kind::Linear => Model::Linear(LinearEncodingModel::from_json(&text)?),
        Kind::Axis => Model::Axis(axismodel::models_from_json(&text)?),
    })
}

fn aligned(face_vectors: &Path, embeddings: &Path) -> Result<(ResponseMatrix, ResponseMatrix)> {
    let p = io::load_face_vectors(face_vectors)?;
    let r = io::load_embeddings(embeddings, None)?.select_stimuli(p.stimulus_ids())?;
    Ok((p, r))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::FitParamspace {
            manifest,
            shape_components,
            appearance_components,
            reference_size,
            normalize_appearance,
        } => {
            let out = need_out(&cli.out)?;
            let m = DatasetManifest::load(&manifest)?;
            let lm_file = m
                .landmarks_file
                .as_ref()
                .ok_or_else(|| Error::Config("manifest has no landmarks_file".into()))?;
            let landmarks: std::collections::HashMap<String, LandmarkSet> =
                io::load_landmarks(&m.resolve(lm_file))?.into_iter().collect();
            let mut ids = Vec::new();
            let mut samples: Vec<(LandmarkSet, GrayImage)> = Vec::new();
            for e in &m.entries {
                let (Some(lref), Some(img)) = (&e.landmark_ref, &e.image_ref) else {
                    continue;
                };
                ids.push(e.stimulus_id.clone());
                samples.push((landmarks[lref].clone(), GrayImage::load(&m.resolve(img))?));
            }
            let config = ParamSpaceConfig {
                shape_components,
                appearance_components,
                reference_size,
                normalize_appearance,
                ..Default::default()
            };
            let fit = ParamSpace::fit(&samples, &config)?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            fit.space.save(&out.join("paramspace.json"))?;
            io::save_embeddings(
                &io::face_vectors_matrix(&fit.face_vectors, ids)?,
                &out.join("face_vectors.csv"),
                None,
            )?;
            log::info!(
                "parameter space: {} shape + {} appearance components, procrustes converged: {}",
                fit.space.shape_dim(),
                fit.space.appearance_dim(),
                fit.procrustes_converged
            );
        }
        Command::Synthesize {
            paramspace,
            face_vectors,
            width,
            height,
        } => {
            let out = need_out(&cli.out)?;
            let space = ParamSpace::load(&paramspace)?;
            let p = io::load_face_vectors(&face_vectors)?;
            let canvas = match (width, height) {
                (Some(w), Some(h)) => Some((w, h)),
                (None, None) => None,
                _ => return Err(Error::Config("give both --width and --height".into())),
            };
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            for (j, id) in p.stimulus_ids().iter().enumerate() {
                let coeffs: Vec<f64> = p.values().column(j).iter().copied().collect();
                let face = space.decode_face(&space.face_vector(&coeffs)?, canvas)?;
                face.image.write_pgm(&out.join(format!("{id}.pgm")))?;
            }
        }
        Command::GenSynthetic { spec, format } => {
            let out = need_out(&cli.out)?;
            let mut spec: SynthSpec = match (spec, &cli.config) {
                (Some(path), _) => serde_json::from_str(&read_text(&path)?)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                (None, Some(cfg)) => match load_config(cfg)?.data {
                    DataSource::Synthetic { spec } => spec,
                    _ => return Err(Error::Config("config data is not synthetic".into())),
                },
                (None, None) => return Err(Error::Config("give --spec or --config".into())),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let ds = synth::generate(&spec)?;
            let files = export_synthetic(&ds, out, format.into())?;
            write_file(&out.join("spec.json"), serde_json::to_string_pretty(&spec)?.as_bytes())?;
            print_json(&files)?;
        }
        Command::FitLinear {
            face_vectors,
            embeddings,
            ridge_lambda,
            standardize,
        } => {
            let out = need_out(&cli.out)?;
            let (p, r) = aligned(&face_vectors, &embeddings)?;
            let opts = LinearFitOptions {
                ridge_lambda,
                standardize_inputs: standardize,
            };
            let model = encoding::fit_linear(p.values(), &r, &opts)?;
            write_file(&out.join("linear_model.json"), model.to_json()?.as_bytes())?;
        }
        Command::FitAxis {
            face_vectors,
            embeddings,
        } => {
            let out = need_out(&cli.out)?;
            let (p, r) = aligned(&face_vectors, &embeddings)?;
            let fit = axismodel::fit_axis_population(p.values(), &r)?;
            write_file(&out.join("axis_models.json"), axismodel::models_to_json(&fit.models)?.as_bytes())?;
            if !fit.excluded.is_empty() {
                write_file(&out.join("excluded_neurons.json"), serde_json::to_string_pretty(&fit.excluded)?.as_bytes())?;
            }
        }
        Command::EvalCorrelation {
            model,
            kind,
            face_vectors,
            embeddings,
            n_perm,
            alpha,
        } => {
            let out = need_out(&cli.out)?;
            let (p, r) = aligned(&face_vectors, &embeddings)?;
            let (observed, predicted) = match load_model(&model, kind)? {
                Model::Linear(m) => (r.clone(), encoding::predict_responses(&m, p.values(), Some(p.stimulus_ids()))?),
                Model::Axis(models) => {
                    let ids: Vec<String> = models.iter().map(|m| m.neuron_id.clone()).collect();
                    (
                        experiment::select_neurons(&r, &ids)?,
                        axismodel::predict_axis(&models, p.values(), Some(p.stimulus_ids()))?,
                    )
                }
            };
            let summary = metrics::summarize_layer(&observed, &predicted, &SummaryOptions { n_perm, seed, alpha })?;
            write_file(&out.join("correlation.csv"), summary.to_csv()?.as_bytes())?;
            write_file(&out.join("correlation.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
            println!(
                "mean pearson {:.6} spearman {:.6} ({} neurons)",
                summary.mean_pearson,
                summary.mean_spearman,
                summary.n_included()
            );
        }
        Command::TrainClassifier {
            features,
            manifest,
            loss,
            test_features,
            learning_rate,
            lambda,
            max_iters,
        } => {
            let out = need_out(&cli.out)?;
            let m = DatasetManifest::load(&manifest)?;
            let x = io::load_embeddings(&features, None)?;
            let (y, names) = m.class_labels(x.stimulus_ids())?;
            let kind = match loss {
                Loss::Softmax => LossKind::Softmax,
                Loss::Hinge => LossKind::Hinge,
            };
            let opts = TrainOptions {
                learning_rate,
                lambda,
                max_iters,
                seed,
                ..Default::default()
            };
            let clf: LinearClassifier = classify::train(x.values(), &y, names.len(), kind, &opts)?;
            write_file(&out.join("classifier.json"), clf.to_json()?.as_bytes())?;
            write_file(&out.join("training_curve.csv"), clf.training_curve_csv().as_bytes())?;
            println!("train accuracy {:.6}", clf.accuracy(x.values(), &y)?);
            if let Some(t) = test_features {
                let xt = io::load_embeddings(&t, None)?;
                let (yt, _) = m.class_labels(xt.stimulus_ids())?;
                println!("test accuracy {:.6}", clf.accuracy(xt.values(), &yt)?);
            }
        }
        Command::Verify {
            embeddings,
            pairs,
            folds,
        } => {
            let out = need_out(&cli.out)?;
            let r = io::load_embeddings(&embeddings, None)?;
            let pairs = PairSet::load_csv(&pairs)?;
            let cfg = VerificationConfig {
                pairs: None,
                n_pairs: pairs.len(),
                folds,
            };
            let section = experiment::run_verification(&cfg, &pairs, &[("embeddings", &r)], seed, out, "all")?;
            write_file(&out.join("verification.json"), serde_json::to_string_pretty(&section)?.as_bytes())?;
            let res = &section.results[0];
            println!("mean accuracy {:.6} eer {:.6}", res.mean_accuracy, res.eer);
        }
        Command::Reconstruct {
            model,
            kind,
            embeddings,
            face_vectors,
            paramspace,
            max_stimuli,
        } => {
            let out = need_out(&cli.out)?;
            let (p, r) = aligned(&face_vectors, &embeddings)?;
            let decoded = match load_model(&model, kind)? {
                Model::Linear(m) => encoding::decode_vectors(&m, &r)?,
                Model::Axis(models) => {
                    let ids: Vec<String> = models.iter().map(|m| m.neuron_id.clone()).collect();
                    axismodel::decode_axis(&models, &experiment::select_neurons(&r, &ids)?)?
                }
            };
            let cfg = ReconstructConfig {
                paramspace,
                max_stimuli,
                canvas: None,
            };
            let summary = write_reconstructions(&cfg, p.stimulus_ids(), p.values(), &decoded.vectors, out)?;
            print_json(&summary)?;
        }
        Command::RunExperiment => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Error::Config("run-experiment needs --config".into()))?;
            let mut cfg = load_config(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(o) = &cli.out {
                cfg.output_dir = o.clone();
            }
            let report = run_experiment(&cfg)?;
            println!(
                "{}: mean pearson {:.6} spearman {:.6} over {} split(s); report in {}",
                cfg.name,
                report.mean_pearson,
                report.mean_spearman,
                report.splits.len(),
                cfg.output_dir.join(experiment::REPORT_FILE).display()
            );
        }
        Command::Aggregate { reports } => {
            let agg = aggregate(&reports)?;
            if let Some(out) = &cli.out {
                write_file(&out.join("aggregate.json"), serde_json::to_string_pretty(&agg)?.as_bytes())?;
                write_file(&out.join("aggregate.csv"), agg.to_csv().as_bytes())?;
            }
            print!("{}", agg.to_csv());
            println!("mean,,,{},{}", agg.mean_pearson, agg.mean_spearman);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
