//! `hlds` — note segmentation and classification from the command line.
//!
//! The pipeline is split into composable subcommands so every intermediate
//! product (features, model, predictions) is an inspectable file:
//!
//! ```text
//! hlds synth    script -> WAV + labels CSV
//! hlds features WAV -> DCT-magnitude feature CSV
//! hlds train    WAV + labels -> model file
//! hlds classify model + WAV -> predictions CSV
//! hlds eval     predictions + truth + model -> confusion matrix
//! hlds zdump    model + WAV -> top-layer trajectory CSV
//! ```

mod config;
mod script;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};

use hlds_core::classify::{
    read_labels_csv, score_frames, train, write_labels_csv, TrainedModel,
};
use hlds_core::frames::{preprocess, read_wav, write_features_csv, FrameSeries};
use hlds_core::hlds::{build_joint_model, extract_z, run_filter, HldsConfig, ZTrajectory};
use hlds_core::segments::{
    crisp_decisions, match_and_score, read_predictions_csv, write_predictions_csv,
};
use hlds_core::synth::{render, write_wav};
use hlds_core::{Error, Result};

use config::RunConfig;

/// Segment and classify notes in audio with a hierarchical linear dynamical
/// system filter.
#[derive(Parser)]
#[command(name = "hlds", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Key-value config file; command-line flags override file values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Chattier diagnostics on stderr: -v for info, -vv for debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    /// Override the script's noise seed (synth only).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Layer dimensions, observation layer first, e.g. 96,24,12,2.
    #[arg(long, global = true, value_delimiter = ',', value_name = "D1,D2,..")]
    dims: Option<Vec<usize>>,

    /// Per-layer innovation variance scale c (default 1/d1).
    #[arg(long, global = true, value_name = "C")]
    innovation_scale: Option<f64>,

    /// Observation noise variance (default c*d1).
    #[arg(long, global = true, value_name = "R")]
    obs_noise: Option<f64>,

    /// Analysis window length in samples (default d1).
    #[arg(long, global = true, value_name = "W")]
    window_len: Option<usize>,

    /// Window overlap in samples (default half the window).
    #[arg(long, global = true, value_name = "Q")]
    overlap: Option<usize>,

    /// Initial state covariance scale.
    #[arg(long, global = true, value_name = "PI0")]
    initial_cov_scale: Option<f64>,

    /// Outlier distance threshold: frames farther than theta from every
    /// class become outliers.
    #[arg(long, global = true, value_name = "THETA")]
    theta: Option<f64>,

    /// Shortest surviving note segment, in frames.
    #[arg(long, global = true, value_name = "FRAMES")]
    min_duration: Option<usize>,

    /// Frames dropped at each training segment's start.
    #[arg(long, global = true, value_name = "FRAMES")]
    burn_in: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a clip script into a WAV file plus a labels CSV.
    Synth {
        /// Clip script file.
        #[arg(long, value_name = "PATH")]
        script: Option<PathBuf>,
        /// Rendered audio destination.
        #[arg(long, value_name = "PATH")]
        out_wav: Option<PathBuf>,
        /// Labels CSV destination.
        #[arg(long, value_name = "PATH")]
        out_labels: Option<PathBuf>,
    },
    /// Extract DCT-magnitude features from a WAV into a CSV.
    Features {
        /// Input audio.
        #[arg(long, value_name = "PATH")]
        wav: Option<PathBuf>,
        /// Feature CSV destination (stdout when omitted).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Train per-class models from a labeled WAV and write a model file.
    Train {
        /// Training audio.
        #[arg(long, value_name = "PATH")]
        wav: Option<PathBuf>,
        /// Truth labels CSV (start_sample,end_sample,label).
        #[arg(long, value_name = "PATH")]
        labels: Option<PathBuf>,
        /// Model file destination.
        #[arg(long, value_name = "PATH")]
        out_model: Option<PathBuf>,
    },
    /// Segment and classify a WAV with a trained model.
    Classify {
        /// Trained model file.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Audio to classify.
        #[arg(long, value_name = "PATH")]
        wav: Option<PathBuf>,
        /// Predictions CSV destination (stdout when omitted).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Score predictions against truth labels and print a confusion matrix.
    Eval {
        /// Predictions CSV from `classify`.
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
        /// Truth labels CSV.
        #[arg(long, value_name = "PATH")]
        truth: Option<PathBuf>,
        /// Trained model file (supplies class set and frame geometry).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Also write the matrix as CSV here.
        #[arg(long, value_name = "PATH")]
        out_matrix: Option<PathBuf>,
    },
    /// Dump the top-layer trajectory as CSV for plotting.
    Zdump {
        /// Trained model file.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Audio to filter.
        #[arg(long, value_name = "PATH")]
        wav: Option<PathBuf>,
        /// Trajectory CSV destination (stdout when omitted).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    if let Err(error) = run(cli) {
        eprintln!("error: {error}");
        let code = match error {
            Error::Config(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
}

fn run(cli: Cli) -> Result<()> {
    let file_config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let flag_config = RunConfig {
        layer_dims: cli.dims.clone(),
        innovation_scale: cli.innovation_scale,
        obs_noise: cli.obs_noise,
        window_len: cli.window_len,
        overlap: cli.overlap,
        initial_cov_scale: cli.initial_cov_scale,
        theta: cli.theta,
        min_duration: cli.min_duration,
        burn_in: cli.burn_in,
        ..Default::default()
    };
    let merged = file_config.overlaid_with(flag_config);

    match cli.command {
        Command::Synth { script, out_wav, out_labels } => {
            cmd_synth(&merged, cli.seed, script, out_wav, out_labels)
        }
        Command::Features { wav, out } => cmd_features(&merged, wav, out),
        Command::Train { wav, labels, out_model } => cmd_train(&merged, wav, labels, out_model),
        Command::Classify { model, wav, out } => cmd_classify(&merged, model, wav, out),
        Command::Eval { predictions, truth, model, out_matrix } => {
            cmd_eval(&merged, predictions, truth, model, out_matrix)
        }
        Command::Zdump { model, wav, out } => cmd_zdump(&merged, model, wav, out),
    }
}

/// A required path comes from its flag, falling back to the config file.
fn require_path(
    flag: Option<PathBuf>,
    from_config: &Option<PathBuf>,
    what: &str,
    key: &str,
) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone()).ok_or_else(|| {
        Error::Input(format!("missing {what}: pass --{key} or set '{key}:' in the config"))
    })
}

/// Stdout unless a destination path was given.
fn out_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            let file = File::create(p)
                .map_err(|e| Error::Input(format!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn cmd_synth(
    merged: &RunConfig,
    seed: Option<u64>,
    script: Option<PathBuf>,
    out_wav: Option<PathBuf>,
    out_labels: Option<PathBuf>,
) -> Result<()> {
    let script_path = require_path(script, &merged.script, "clip script", "script")?;
    let out_wav = require_path(out_wav, &merged.out_wav, "output WAV path", "out-wav")?;
    let out_labels =
        require_path(out_labels, &merged.out_labels, "output labels path", "out-labels")?;

    let mut clip_script = script::read_script(&script_path)?;
    if let Some(seed) = seed {
        clip_script = clip_script.with_seed(seed);
    }
    let (clip, labels) = render(&clip_script)?;
    write_wav(&clip, &out_wav)?;
    let file = File::create(&out_labels)
        .map_err(|e| Error::Input(format!("cannot create {}: {e}", out_labels.display())))?;
    write_labels_csv(&labels, BufWriter::new(file))?;
    log::info!(
        "rendered {} samples at {} Hz into {} ({} labels in {})",
        clip.len(),
        clip.sample_rate(),
        out_wav.display(),
        labels.len(),
        out_labels.display()
    );
    Ok(())
}

fn cmd_features(merged: &RunConfig, wav: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let settings = merged.resolve()?;
    let wav = require_path(wav, &merged.wav, "input WAV", "wav")?;
    let out = out.or_else(|| merged.out_features.clone());

    let clip = read_wav(&wav)?;
    let series = preprocess(&clip, settings.hlds.window_len(), settings.hlds.overlap())?;
    log::info!("{}: {} frames of dimension {}", wav.display(), series.len(), series.dim());
    write_features_csv(&series, out_writer(out.as_deref())?)
}

fn cmd_train(
    merged: &RunConfig,
    wav: Option<PathBuf>,
    labels: Option<PathBuf>,
    out_model: Option<PathBuf>,
) -> Result<()> {
    let settings = merged.resolve()?;
    let wav = require_path(wav, &merged.wav, "training WAV", "wav")?;
    let labels_path = require_path(labels, &merged.labels, "truth labels CSV", "labels")?;
    let out_model = require_path(out_model, &merged.out_model, "model destination", "out-model")?;

    let joint = build_joint_model(&settings.hlds)?;
    let clip = read_wav(&wav)?;
    let series = preprocess(&clip, settings.hlds.window_len(), settings.hlds.overlap())?;
    let file = File::open(&labels_path)
        .map_err(|e| Error::Input(format!("cannot read labels {}: {e}", labels_path.display())))?;
    let segments = read_labels_csv(BufReader::new(file))
        .map_err(|e| prefix_parse(e, &labels_path))?;

    let classes = train(&joint, &series, &segments, settings.tuning.burn_in)?;
    let model = TrainedModel::new(settings.hlds.clone(), settings.tuning.burn_in, classes)?;
    model.save(&out_model)?;
    for class in model.classes() {
        println!("{}: {} samples", class.label(), class.sample_count());
    }
    log::info!("wrote model with {} classes to {}", model.classes().len(), out_model.display());
    Ok(())
}

fn cmd_classify(
    merged: &RunConfig,
    model: Option<PathBuf>,
    wav: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let tuning = merged.resolve_tuning()?;
    let model_path = require_path(model, &merged.model, "trained model", "model")?;
    let wav = require_path(wav, &merged.wav, "input WAV", "wav")?;
    let out = out.or_else(|| merged.out_predictions.clone());

    let trained = TrainedModel::load(&model_path)?;
    check_model_conflicts(merged, trained.config())?;
    let (_, z) = filter_clip(&wav, trained.config())?;
    let scores = score_frames(&z, trained.classes())?;
    let predictions = crisp_decisions(&scores, tuning.theta, tuning.min_duration)?;
    log::info!("{} frames -> {} segments", z.len(), predictions.len());
    write_predictions_csv(&predictions, out_writer(out.as_deref())?)
}

fn cmd_eval(
    merged: &RunConfig,
    predictions: Option<PathBuf>,
    truth: Option<PathBuf>,
    model: Option<PathBuf>,
    out_matrix: Option<PathBuf>,
) -> Result<()> {
    let predictions_path =
        require_path(predictions, &merged.predictions, "predictions CSV", "predictions")?;
    let truth_path = require_path(truth, &merged.labels, "truth labels CSV", "truth")?;
    let model_path = require_path(model, &merged.model, "trained model", "model")?;
    let out_matrix = out_matrix.or_else(|| merged.out_matrix.clone());

    let trained = TrainedModel::load(&model_path)?;
    let file = File::open(&predictions_path).map_err(|e| {
        Error::Input(format!("cannot read predictions {}: {e}", predictions_path.display()))
    })?;
    let predictions =
        read_predictions_csv(BufReader::new(file)).map_err(|e| prefix_parse(e, &predictions_path))?;
    let file = File::open(&truth_path)
        .map_err(|e| Error::Input(format!("cannot read labels {}: {e}", truth_path.display())))?;
    let truth = read_labels_csv(BufReader::new(file)).map_err(|e| prefix_parse(e, &truth_path))?;

    let class_labels: Vec<String> =
        trained.classes().iter().map(|c| c.label().to_string()).collect();
    let matrix = match_and_score(
        &predictions,
        &truth,
        &class_labels,
        trained.config().hop(),
        trained.config().window_len(),
    )?;
    print!("{}", matrix.render());
    if let Some(path) = out_matrix {
        matrix.write_csv(out_writer(Some(&path))?)?;
    }
    Ok(())
}

fn cmd_zdump(
    merged: &RunConfig,
    model: Option<PathBuf>,
    wav: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let model_path = require_path(model, &merged.model, "trained model", "model")?;
    let wav = require_path(wav, &merged.wav, "input WAV", "wav")?;
    let out = out.or_else(|| merged.out_z.clone());

    let trained = TrainedModel::load(&model_path)?;
    check_model_conflicts(merged, trained.config())?;
    let (_, z) = filter_clip(&wav, trained.config())?;

    let mut writer = out_writer(out.as_deref())?;
    let header: Vec<String> = std::iter::once("frame".to_string())
        .chain((1..=z.dim()).map(|i| format!("z_{i}")))
        .collect();
    writeln!(writer, "{}", header.join(","))?;
    for (t, point) in z.iter().enumerate() {
        let mut row = t.to_string();
        for value in point.iter() {
            row.push(',');
            row.push_str(&value.to_string());
        }
        writeln!(writer, "{row}")?;
    }
    Ok(())
}

/// Shared classify/zdump front half: read, frame, transform, filter.
fn filter_clip(wav: &Path, config: &HldsConfig) -> Result<(FrameSeries, ZTrajectory)> {
    let joint = build_joint_model(config)?;
    let clip = read_wav(wav)?;
    let series = preprocess(&clip, config.window_len(), config.overlap())?;
    let states = run_filter(&joint, series.frames(), config.initial_cov_scale())?;
    let z = extract_z(&states, &joint);
    Ok((series, z))
}

/// Explicitly requested model-shape settings must agree with the model file;
/// silently filtering with mismatched geometry would invalidate the scores.
fn check_model_conflicts(requested: &RunConfig, model: &HldsConfig) -> Result<()> {
    let mut conflicts = Vec::new();
    if let Some(dims) = &requested.layer_dims {
        if dims != model.layer_dims() {
            conflicts.push(format!("layer_dims {:?} vs the model's {:?}", dims, model.layer_dims()));
        }
    }
    if let Some(w) = requested.window_len {
        if w != model.window_len() {
            conflicts.push(format!("window_len {w} vs the model's {}", model.window_len()));
        }
    }
    if let Some(q) = requested.overlap {
        if q != model.overlap() {
            conflicts.push(format!("overlap {q} vs the model's {}", model.overlap()));
        }
    }
    if let Some(c) = requested.innovation_scale {
        if c != model.innovation_scale() {
            conflicts.push(format!(
                "innovation_scale {c} vs the model's {}",
                model.innovation_scale()
            ));
        }
    }
    if let Some(r) = requested.obs_noise {
        if r != model.obs_noise() {
            conflicts.push(format!("obs_noise {r} vs the model's {}", model.obs_noise()));
        }
    }
    if let Some(scale) = requested.initial_cov_scale {
        if scale != model.initial_cov_scale() {
            conflicts.push(format!(
                "initial_cov_scale {scale} vs the model's {}",
                model.initial_cov_scale()
            ));
        }
    }
    if conflicts.is_empty() {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "requested settings conflict with the trained model: {}",
            conflicts.join("; ")
        )))
    }
}

fn prefix_parse(error: Error, path: &Path) -> Error {
    match error {
        Error::Parse(message) => Error::Parse(format!("{}: {message}", path.display())),
        other => other,
    }
}
