//! Declarative run configuration.
//!
//! A config file is a plain key-value listing (`key: value`, `#` comments)
//! covering the model shape, the classifier knobs, and optionally the file
//! paths a run reads and writes. Command-line flags overlay file values, so
//! a run can be pinned down entirely in a file and tweaked from the shell.
//!
//! ```text
//! # model
//! layer_dims: 96 24 12 2
//! window_len: 96
//! overlap: 48
//!
//! # classifier
//! theta: 3.0
//! min_duration: 20
//! burn_in: 5
//!
//! # paths
//! wav: clips/test.wav
//! model: runs/notes.model
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use hlds_core::hlds::HldsConfig;
use hlds_core::{Error, Result};

pub const DEFAULT_THETA: f64 = 3.0;
pub const DEFAULT_MIN_DURATION: usize = 20;
pub const DEFAULT_BURN_IN: usize = 5;

/// Partially-specified settings: `None` means "use the default". Overlaying
/// two configs keeps the later (flag-side) value wherever both are set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub layer_dims: Option<Vec<usize>>,
    pub innovation_scale: Option<f64>,
    pub obs_noise: Option<f64>,
    pub window_len: Option<usize>,
    pub overlap: Option<usize>,
    pub initial_cov_scale: Option<f64>,
    pub theta: Option<f64>,
    pub min_duration: Option<usize>,
    pub burn_in: Option<usize>,

    pub script: Option<PathBuf>,
    pub wav: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out_wav: Option<PathBuf>,
    pub out_labels: Option<PathBuf>,
    pub out_model: Option<PathBuf>,
    pub out_features: Option<PathBuf>,
    pub out_predictions: Option<PathBuf>,
    pub out_matrix: Option<PathBuf>,
    pub out_z: Option<PathBuf>,
}

/// Fully-resolved pipeline settings: model shape plus segmentation knobs.
#[derive(Debug, Clone)]
pub struct Settings {
    pub hlds: HldsConfig,
    pub tuning: Tuning,
}

/// Segmentation knobs alone, for commands whose model shape comes from a
/// trained model file instead of this config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    pub theta: f64,
    pub min_duration: usize,
    pub burn_in: usize,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
            .map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                Error::Parse(format!("line {}: expected 'key: value', got '{raw}'", number + 1))
            })?;
            config
                .apply(key.trim(), value.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", number + 1)))?;
        }
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Parse(format!("bad value '{value}' for '{key}'")))
        }
        match key {
            "layer_dims" => {
                let dims = value
                    .split_whitespace()
                    .map(|d| parse(key, d))
                    .collect::<Result<Vec<usize>>>()?;
                self.layer_dims = Some(dims);
            }
            "innovation_scale" => self.innovation_scale = Some(parse(key, value)?),
            "obs_noise" => self.obs_noise = Some(parse(key, value)?),
            "window_len" => self.window_len = Some(parse(key, value)?),
            "overlap" => self.overlap = Some(parse(key, value)?),
            "initial_cov_scale" => self.initial_cov_scale = Some(parse(key, value)?),
            "theta" => self.theta = Some(parse(key, value)?),
            "min_duration" => self.min_duration = Some(parse(key, value)?),
            "burn_in" => self.burn_in = Some(parse(key, value)?),
            "script" => self.script = Some(PathBuf::from(value)),
            "wav" => self.wav = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            "predictions" => self.predictions = Some(PathBuf::from(value)),
            "out_wav" => self.out_wav = Some(PathBuf::from(value)),
            "out_labels" => self.out_labels = Some(PathBuf::from(value)),
            "out_model" => self.out_model = Some(PathBuf::from(value)),
            "out_features" => self.out_features = Some(PathBuf::from(value)),
            "out_predictions" => self.out_predictions = Some(PathBuf::from(value)),
            "out_matrix" => self.out_matrix = Some(PathBuf::from(value)),
            "out_z" => self.out_z = Some(PathBuf::from(value)),
            other => return Err(Error::Parse(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Overlay `overrides` (typically flag values) on top of `self`.
    pub fn overlaid_with(mut self, overrides: RunConfig) -> RunConfig {
        macro_rules! take {
            ($field:ident) => {
                if overrides.$field.is_some() {
                    self.$field = overrides.$field;
                }
            };
        }
        take!(layer_dims);
        take!(innovation_scale);
        take!(obs_noise);
        take!(window_len);
        take!(overlap);
        take!(initial_cov_scale);
        take!(theta);
        take!(min_duration);
        take!(burn_in);
        take!(script);
        take!(wav);
        take!(labels);
        take!(model);
        take!(predictions);
        take!(out_wav);
        take!(out_labels);
        take!(out_model);
        take!(out_features);
        take!(out_predictions);
        take!(out_matrix);
        take!(out_z);
        self
    }

    /// Validate and fill defaults, producing runnable settings.
    pub fn resolve(&self) -> Result<Settings> {
        let mut hlds = match &self.layer_dims {
            Some(dims) => HldsConfig::new(dims.clone())?,
            None => HldsConfig::default(),
        };
        if let Some(c) = self.innovation_scale {
            hlds = hlds.with_innovation_scale(c)?;
        }
        if let Some(r) = self.obs_noise {
            hlds = hlds.with_obs_noise(r)?;
        }
        match (self.window_len, self.overlap) {
            (None, None) => {}
            (window, overlap) => {
                let window = window.unwrap_or(hlds.window_len());
                let overlap = overlap.unwrap_or(hlds.overlap());
                hlds = hlds.with_window(window, overlap)?;
            }
        }
        if let Some(scale) = self.initial_cov_scale {
            hlds = hlds.with_initial_cov_scale(scale)?;
        }

        Ok(Settings { hlds, tuning: self.resolve_tuning()? })
    }

    /// Validate just the segmentation knobs and fill their defaults, leaving
    /// the model-shape keys untouched (a trained model supplies those).
    pub fn resolve_tuning(&self) -> Result<Tuning> {
        let theta = self.theta.unwrap_or(DEFAULT_THETA);
        if !theta.is_finite() || theta <= 0.0 {
            return Err(Error::Config(format!(
                "distance threshold theta must be positive, got {theta}"
            )));
        }
        let min_duration = self.min_duration.unwrap_or(DEFAULT_MIN_DURATION);
        if min_duration == 0 {
            return Err(Error::Config("min_duration must be at least 1 frame".into()));
        }
        let burn_in = self.burn_in.unwrap_or(DEFAULT_BURN_IN);
        Ok(Tuning { theta, min_duration, burn_in })
    }
}
