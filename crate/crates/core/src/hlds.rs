//! Hierarchical linear dynamical system (HLDS) in joint canonical form.
//!
//! The model stacks `L` linear-Gaussian layers of strictly decreasing
//! dimension. The top layer `z` has identity dynamics and the smallest
//! innovation variance, so it drifts slowly; every lower layer flips sign each
//! step (`-I` dynamics) while being driven by the layer directly above through
//! a sparse averaging coupling; the bottom layer is observed directly. All
//! layers are stacked top-first into one joint state so the whole hierarchy
//! can be filtered by the ordinary Kalman recursion in [`crate::statespace`]:
//!
//! ```text
//!        | I            |            x~_t = (z_t, x_t^{L-1}, ..., x_t^1)
//! F~  =  | B_1  -I      |            H~  = ( 0  ...  0  I )
//!        |      B_2  -I |
//! ```
//!
//! Per-layer innovation variance is proportional to the layer dimension, so
//! higher (narrower) layers are stiffer. The filtered top-layer trajectory is
//! the low-dimensional feature space ("z-space") consumed by
//! [`crate::classify`].

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::statespace::{kalman_step, FilterState, LinearModel};

/// Shape and noise hyperparameters of the hierarchy; the single source of
/// model shape for the rest of the pipeline.
///
/// `layer_dims` is ordered bottom-first: `layer_dims[0]` is the observed
/// bottom layer (and therefore the observation dimension), the last entry is
/// the top layer. Adjacent dimensions must divide evenly so the averaging
/// coupling is well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct HldsConfig {
    layer_dims: Vec<usize>,
    innovation_scale: f64,
    obs_noise_override: Option<f64>,
    window_len: usize,
    overlap: usize,
    initial_cov_scale: f64,
}

impl HldsConfig {
    /// Build a configuration from bottom-first layer dimensions.
    ///
    /// Derived defaults: innovation scale `1 / d_1` (so the bottom-layer
    /// variance and the observation noise are 1), analysis window of `d_1`
    /// samples with half-window overlap, and unit initial covariance scale.
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "at least two layers are required, got {}",
                layer_dims.len()
            )));
        }
        if let Some(&bad) = layer_dims.iter().find(|&&d| d == 0) {
            return Err(Error::Config(format!("layer dimensions must be positive, got {bad}")));
        }
        for pair in layer_dims.windows(2) {
            let (lower, upper) = (pair[0], pair[1]);
            if upper >= lower {
                return Err(Error::Config(format!(
                    "layer dimensions must strictly decrease bottom to top, got {lower} then {upper}"
                )));
            }
            if lower % upper != 0 {
                return Err(Error::Config(format!(
                    "layer dimension {lower} is not divisible by the next layer's {upper}"
                )));
            }
        }
        let bottom = layer_dims[0];
        Ok(Self {
            innovation_scale: 1.0 / bottom as f64,
            obs_noise_override: None,
            window_len: bottom,
            overlap: bottom / 2,
            initial_cov_scale: 1.0,
            layer_dims,
        })
    }

    /// Replace the per-unit-dimension innovation variance `c`.
    pub fn with_innovation_scale(mut self, c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::Config(format!("innovation scale must be positive, got {c}")));
        }
        self.innovation_scale = c;
        Ok(self)
    }

    /// Fix the observation noise variance instead of tying it to the bottom
    /// layer's innovation variance.
    pub fn with_obs_noise(mut self, r: f64) -> Result<Self> {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::Config(format!(
                "observation noise variance must be positive, got {r}"
            )));
        }
        self.obs_noise_override = Some(r);
        Ok(self)
    }

    /// Set the analysis window length and overlap (both in samples).
    pub fn with_window(mut self, window_len: usize, overlap: usize) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if overlap >= window_len {
            return Err(Error::Config(format!(
                "overlap ({overlap}) must be smaller than the window length ({window_len})"
            )));
        }
        self.window_len = window_len;
        self.overlap = overlap;
        Ok(self)
    }

    /// Set the initial state covariance scale.
    pub fn with_initial_cov_scale(mut self, scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Config(format!(
                "initial covariance scale must be positive, got {scale}"
            )));
        }
        self.initial_cov_scale = scale;
        Ok(self)
    }

    /// Bottom-first layer dimensions.
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }

    /// Dimension of the observed bottom layer.
    pub fn bottom_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Dimension of the top layer (the classification feature space).
    pub fn top_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Total joint state dimension.
    pub fn joint_dim(&self) -> usize {
        self.layer_dims.iter().sum()
    }

    /// Innovation variance per unit of layer dimension.
    pub fn innovation_scale(&self) -> f64 {
        self.innovation_scale
    }

    /// Observation noise variance: the override if set, otherwise the bottom
    /// layer's innovation variance `c * d_1`.
    pub fn obs_noise(&self) -> f64 {
        self.obs_noise_override
            .unwrap_or(self.innovation_scale * self.bottom_dim() as f64)
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    /// Samples between consecutive frame starts.
    pub fn hop(&self) -> usize {
        self.window_len - self.overlap
    }

    pub fn initial_cov_scale(&self) -> f64 {
        self.initial_cov_scale
    }
}

impl Default for HldsConfig {
    /// The reference four-layer configuration: dimensions `[96, 24, 12, 2]`,
    /// 96-sample window with 48-sample overlap.
    fn default() -> Self {
        Self::new(vec![96, 24, 12, 2]).expect("reference configuration is valid")
    }
}

/// Averaging coupling from an `S`-dimensional layer down to an
/// `N`-dimensional one.
///
/// The matrix consists of `S` row-blocks of height `N / S`; block `s` carries
/// the value `2S / N` in column `s` and is zero elsewhere. Each source
/// component therefore fans out to an equal share of target components, and
/// every column sums to 2.
pub fn build_coupling(n: usize, s: usize) -> Result<DMatrix<f64>> {
    if n == 0 || s == 0 {
        return Err(Error::Config(format!(
            "coupling dimensions must be positive, got {n}x{s}"
        )));
    }
    if !n.is_multiple_of(s) {
        return Err(Error::Config(format!(
            "coupling requires the lower dimension ({n}) to be divisible by the upper ({s})"
        )));
    }
    let block = n / s;
    let value = 2.0 * s as f64 / n as f64;
    Ok(DMatrix::from_fn(n, s, |r, c| if r / block == c { value } else { 0.0 }))
}

/// The assembled joint model: block transition, bottom-layer observation
/// selector, and diagonal noise covariances, ready for Kalman filtering.
///
/// Layers are stacked top-first in the joint state vector. `layer_range`
/// indexes layers bottom-first to match [`HldsConfig::layer_dims`], so
/// `layer_range(0)` is the bottom (observed) layer and sits at the *end* of
/// the joint vector.
#[derive(Debug, Clone)]
pub struct JointModel {
    config: HldsConfig,
    linear: LinearModel,
    layer_ranges: Vec<Range<usize>>,
}

impl JointModel {
    pub fn config(&self) -> &HldsConfig {
        &self.config
    }

    /// The joint system in plain state-space form.
    pub fn linear(&self) -> &LinearModel {
        &self.linear
    }

    pub fn joint_dim(&self) -> usize {
        self.linear.state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.linear.obs_dim()
    }

    pub fn top_dim(&self) -> usize {
        self.config.top_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers()
    }

    pub fn joint_transition(&self) -> &DMatrix<f64> {
        self.linear.transition()
    }

    pub fn joint_observation(&self) -> &DMatrix<f64> {
        self.linear.observation()
    }

    pub fn joint_state_noise_cov(&self) -> &DMatrix<f64> {
        self.linear.state_noise_cov()
    }

    pub fn obs_noise_cov(&self) -> &DMatrix<f64> {
        self.linear.obs_noise_cov()
    }

    /// Joint-vector index range of layer `layer`, counted bottom-first.
    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        self.layer_ranges[layer].clone()
    }

    /// Index range of the top layer (the start of the joint vector).
    pub fn top_range(&self) -> Range<usize> {
        self.layer_ranges.last().unwrap().clone()
    }

    /// Index range of the observed bottom layer (the end of the joint vector).
    pub fn bottom_range(&self) -> Range<usize> {
        self.layer_ranges[0].clone()
    }
}

/// Assemble the joint transition, observation and noise matrices for a
/// validated configuration.
///
/// Layer `l`'s innovation variance is `c * d_l`; the observation noise is the
/// bottom layer's innovation variance unless the configuration overrides it.
pub fn build_joint_model(config: &HldsConfig) -> Result<JointModel> {
    let dims = config.layer_dims();
    let layers = dims.len();
    let joint_dim = config.joint_dim();
    let bottom = config.bottom_dim();

    // Block layout, top layer first.
    let block_dims: Vec<usize> = dims.iter().rev().copied().collect();
    let mut block_starts = Vec::with_capacity(layers);
    let mut offset = 0;
    for &bd in &block_dims {
        block_starts.push(offset);
        offset += bd;
    }

    let mut transition = DMatrix::zeros(joint_dim, joint_dim);
    for i in 0..block_dims[0] {
        transition[(i, i)] = 1.0;
    }
    for b in 1..layers {
        let (n, start) = (block_dims[b], block_starts[b]);
        for i in 0..n {
            transition[(start + i, start + i)] = -1.0;
        }
        let coupling = build_coupling(n, block_dims[b - 1])?;
        transition
            .view_mut((start, block_starts[b - 1]), (n, block_dims[b - 1]))
            .copy_from(&coupling);
    }

    let mut observation = DMatrix::zeros(bottom, joint_dim);
    observation
        .view_mut((0, joint_dim - bottom), (bottom, bottom))
        .copy_from(&DMatrix::identity(bottom, bottom));

    let c = config.innovation_scale();
    let mut state_noise = DMatrix::zeros(joint_dim, joint_dim);
    for (b, &bd) in block_dims.iter().enumerate() {
        let variance = c * bd as f64;
        for i in block_starts[b]..block_starts[b] + bd {
            state_noise[(i, i)] = variance;
        }
    }
    let obs_noise = DMatrix::identity(bottom, bottom) * config.obs_noise();

    let linear = LinearModel::new(transition, observation, state_noise, obs_noise)?;

    // Bottom-first layer index -> top-first block index.
    let layer_ranges = (0..layers)
        .map(|layer| {
            let b = layers - 1 - layer;
            block_starts[b]..block_starts[b] + block_dims[b]
        })
        .collect();

    Ok(JointModel { config: config.clone(), linear, layer_ranges })
}

/// Initial joint state for a clip: the first observation placed in the bottom
/// layer, zeros above it, and an isotropic covariance `initial_cov_scale * I`.
///
/// This is the minimum-norm state consistent with the first observation; the
/// observation selector has zero columns for the hidden layers, so no
/// least-squares initializer can determine them.
pub fn initial_state(
    model: &JointModel,
    first_observation: &DVector<f64>,
    initial_cov_scale: f64,
) -> Result<FilterState> {
    if first_observation.len() != model.obs_dim() {
        return Err(Error::Dimension(format!(
            "first observation has dimension {}, model expects {}",
            first_observation.len(),
            model.obs_dim()
        )));
    }
    if !initial_cov_scale.is_finite() || initial_cov_scale <= 0.0 {
        return Err(Error::Config(format!(
            "initial covariance scale must be positive, got {initial_cov_scale}"
        )));
    }
    let d = model.joint_dim();
    let mut estimate = DVector::zeros(d);
    estimate
        .rows_mut(model.bottom_range().start, model.obs_dim())
        .copy_from(first_observation);
    FilterState::new(estimate, DMatrix::identity(d, d) * initial_cov_scale)
}

fn at_frame(frame: usize, err: Error) -> Error {
    let tag = |m: String| format!("frame {frame}: {m}");
    match err {
        Error::Dimension(m) => Error::Dimension(tag(m)),
        Error::Degenerate(m) => Error::Degenerate(tag(m)),
        Error::Config(m) => Error::Config(tag(m)),
        Error::Input(m) => Error::Input(tag(m)),
        other => other,
    }
}

/// Filter a whole observation sequence, returning one state per frame.
///
/// Frame 0's state is the [`initial_state`] built from the first observation;
/// every later frame applies one [`kalman_step`]. Errors from the underlying
/// recursion carry the failing frame index.
pub fn run_filter(
    model: &JointModel,
    observations: &[DVector<f64>],
    initial_cov_scale: f64,
) -> Result<Vec<FilterState>> {
    if observations.is_empty() {
        return Err(Error::Input("cannot filter an empty observation sequence".into()));
    }
    let mut states = Vec::with_capacity(observations.len());
    states.push(
        initial_state(model, &observations[0], initial_cov_scale).map_err(|e| at_frame(0, e))?,
    );
    for (t, y) in observations.iter().enumerate().skip(1) {
        let next =
            kalman_step(states.last().unwrap(), y, model.linear()).map_err(|e| at_frame(t, e))?;
        states.push(next);
    }
    Ok(states)
}

/// Top-layer trajectory: one low-dimensional point per frame, the feature
/// space in which notes cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ZTrajectory {
    dim: usize,
    points: Vec<DVector<f64>>,
}

impl ZTrajectory {
    pub fn new(dim: usize, points: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::Dimension(format!(
                "trajectory point has dimension {}, expected {dim}",
                bad.len()
            )));
        }
        Ok(Self { dim, points })
    }

    /// Dimension of each point (the top-layer width).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DVector<f64>> {
        self.points.iter()
    }
}

/// Slice the top-layer block out of every filtered state, in order.
///
/// The states must come from [`run_filter`] with the same model; a dimension
/// mismatch is a caller bug and panics.
pub fn extract_z(states: &[FilterState], model: &JointModel) -> ZTrajectory {
    let range = model.top_range();
    let points = states
        .iter()
        .map(|state| {
            assert_eq!(
                state.dim(),
                model.joint_dim(),
                "state dimension does not match the model that produced it"
            );
            state.estimate().rows(range.start, range.len()).into_owned()
        })
        .collect();
    ZTrajectory { dim: model.top_dim(), points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_model() -> JointModel {
        build_joint_model(&HldsConfig::default()).unwrap()
    }

    /// Independent per-entry rule for the joint transition matrix, used to
    /// cross-check the block assembly.
    fn expected_transition_entry(dims: &[usize], row: usize, col: usize) -> f64 {
        let block_dims: Vec<usize> = dims.iter().rev().copied().collect();
        let locate = |idx: usize| {
            let mut start = 0;
            for (b, &bd) in block_dims.iter().enumerate() {
                if idx < start + bd {
                    return (b, idx - start);
                }
                start += bd;
            }
            unreachable!("index out of range");
        };
        let (rb, ri) = locate(row);
        let (cb, ci) = locate(col);
        if rb == cb {
            if ri != ci {
                0.0
            } else if rb == 0 {
                1.0
            } else {
                -1.0
            }
        } else if rb == cb + 1 {
            let (n, s) = (block_dims[rb], block_dims[cb]);
            if ri / (n / s) == ci {
                2.0 * s as f64 / n as f64
            } else {
                0.0
            }
        } else {
            0.0
        }
    }

    #[test]
    fn coupling_matches_hand_examples() {
        let b = build_coupling(4, 2).unwrap();
        assert_eq!(b, DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]));

        let b = build_coupling(2, 2).unwrap();
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));

        let b = build_coupling(96, 24).unwrap();
        let nonzero: Vec<f64> = b.iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero.len(), 96);
        assert!(nonzero.iter().all(|&v| v == 0.5));
        for c in 0..24 {
            assert_eq!(b.column(c).sum(), 2.0);
        }
    }

    #[test]
    fn coupling_rejects_indivisible_dims() {
        let err = build_coupling(5, 2).unwrap_err();
        match err {
            Error::Config(msg) => {
                assert!(msg.contains('5') && msg.contains('2'), "{msg}");
            }
            other => panic!("expected configuration error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        assert!(matches!(HldsConfig::new(vec![96]), Err(Error::Config(_))));
        assert!(matches!(HldsConfig::new(vec![4, 2, 2]), Err(Error::Config(_))));
        assert!(matches!(HldsConfig::new(vec![2, 4]), Err(Error::Config(_))));
        assert!(matches!(HldsConfig::new(vec![96, 36]), Err(Error::Config(_))));
        assert!(matches!(HldsConfig::new(vec![4, 0]), Err(Error::Config(_))));

        let base = || HldsConfig::new(vec![8, 4, 2]).unwrap();
        assert!(base().with_innovation_scale(0.0).is_err());
        assert!(base().with_innovation_scale(f64::NAN).is_err());
        assert!(base().with_obs_noise(-1.0).is_err());
        assert!(base().with_window(96, 96).is_err());
        assert!(base().with_window(0, 0).is_err());
        assert!(base().with_initial_cov_scale(0.0).is_err());
    }

    #[test]
    fn default_config_values() {
        let config = HldsConfig::default();
        assert_eq!(config.layer_dims(), &[96, 24, 12, 2]);
        assert_eq!(config.joint_dim(), 134);
        assert_eq!(config.window_len(), 96);
        assert_eq!(config.overlap(), 48);
        assert_eq!(config.hop(), 48);
        assert!((config.innovation_scale() - 1.0 / 96.0).abs() < 1e-15);
        assert_eq!(config.obs_noise(), 1.0);
        assert_eq!(config.initial_cov_scale(), 1.0);
    }

    #[test]
    fn joint_structure_matches_entry_rule_exhaustively() {
        let model = default_model();
        let dims = [96usize, 24, 12, 2];
        let f = model.joint_transition();
        assert_eq!(f.shape(), (134, 134));
        for row in 0..134 {
            for col in 0..134 {
                let expected = expected_transition_entry(&dims, row, col);
                assert_eq!(
                    f[(row, col)],
                    expected,
                    "transition entry ({row}, {col}) should be {expected}"
                );
            }
        }

        let h = model.joint_observation();
        assert_eq!(h.shape(), (96, 134));
        for row in 0..96 {
            for col in 0..134 {
                let expected = if col == 38 + row { 1.0 } else { 0.0 };
                assert_eq!(h[(row, col)], expected, "observation entry ({row}, {col})");
            }
        }

        // Coupling values present: 1/3 (12 from 2), 1.0 (24 from 12), 0.5 (96 from 24).
        let mut values: Vec<f64> = f
            .iter()
            .copied()
            .filter(|&v| v != 0.0 && v != 1.0 && v != -1.0)
            .collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        assert_eq!(values, vec![1.0 / 3.0, 0.5]);
        assert_eq!(f.view((2, 0), (12, 2)).iter().filter(|&&v| v == 1.0 / 3.0).count(), 12);
        assert_eq!(f.view((14, 2), (24, 12)).iter().filter(|&&v| v == 1.0).count(), 24);
        assert_eq!(f.view((38, 14), (96, 24)).iter().filter(|&&v| v == 0.5).count(), 96);
    }

    #[test]
    fn joint_noise_covariances_follow_layer_dims() {
        let model = default_model();
        let q = model.joint_state_noise_cov();
        let c = 1.0 / 96.0;
        for i in 0..134 {
            let expected = match i {
                0..=1 => 2.0 * c,
                2..=13 => 12.0 * c,
                14..=37 => 24.0 * c,
                _ => 96.0 * c,
            };
            assert!((q[(i, i)] - expected).abs() < 1e-15, "noise diagonal {i}");
            for j in 0..134 {
                if i != j {
                    assert_eq!(q[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(model.obs_noise_cov(), &DMatrix::identity(96, 96));

        let overridden = HldsConfig::default().with_obs_noise(0.25).unwrap();
        let model = build_joint_model(&overridden).unwrap();
        assert_eq!(model.obs_noise_cov(), &(DMatrix::identity(96, 96) * 0.25));
    }

    #[test]
    fn two_layer_hand_example() {
        let config = HldsConfig::new(vec![2, 1])
            .unwrap()
            .with_innovation_scale(1.0)
            .unwrap();
        let model = build_joint_model(&config).unwrap();
        assert_eq!(
            model.joint_transition(),
            &DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, -1.0])
        );
        assert_eq!(
            model.joint_state_noise_cov().diagonal(),
            DVector::from_row_slice(&[1.0, 2.0, 2.0])
        );
        assert_eq!(model.obs_noise_cov(), &(DMatrix::identity(2, 2) * 2.0));
        assert_eq!(model.top_range(), 0..1);
        assert_eq!(model.bottom_range(), 1..3);
    }

    #[test]
    fn innovation_variances_decrease_upward() {
        for dims in [vec![96, 24, 12, 2], vec![8, 4, 2], vec![10, 5, 1]] {
            let model = build_joint_model(&HldsConfig::new(dims).unwrap()).unwrap();
            let q = model.joint_state_noise_cov();
            let per_layer: Vec<f64> =
                (0..model.num_layers()).map(|l| q[(model.layer_range(l).start, model.layer_range(l).start)]).collect();
            for pair in per_layer.windows(2) {
                assert!(
                    pair[1] < pair[0],
                    "innovation variance must shrink upward, got {pair:?}"
                );
            }
        }
    }

    #[test]
    fn initial_state_places_observation_in_bottom_layer() {
        let config = HldsConfig::new(vec![2, 1]).unwrap();
        let model = build_joint_model(&config).unwrap();
        let state =
            initial_state(&model, &DVector::from_row_slice(&[3.0, 4.0]), 1.0).unwrap();
        assert_eq!(state.estimate(), &DVector::from_row_slice(&[0.0, 3.0, 4.0]));
        assert_eq!(state.covariance(), &DMatrix::identity(3, 3));

        let state = initial_state(&model, &DVector::zeros(2), 1.0).unwrap();
        assert!(state.estimate().iter().all(|&v| v == 0.0));

        let model = default_model();
        let state = initial_state(&model, &DVector::zeros(96), 2.0).unwrap();
        assert_eq!(state.covariance(), &(DMatrix::identity(134, 134) * 2.0));

        assert!(initial_state(&model, &DVector::zeros(5), 1.0).is_err());
        assert!(initial_state(&model, &DVector::zeros(96), 0.0).is_err());
    }

    #[test]
    fn single_observation_returns_exactly_the_initial_state() {
        let model = default_model();
        let y = DVector::from_fn(96, |i, _| (i as f64 * 0.37).sin().abs());
        let states = run_filter(&model, std::slice::from_ref(&y), 1.0).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0], initial_state(&model, &y, 1.0).unwrap());
    }

    #[test]
    fn constant_input_converges_in_the_top_layer() {
        let model = default_model();
        // The closed filter loop contracts at roughly 0.982 per step (time
        // constant ~54 frames) and the top-layer transient amplitude scales
        // linearly with the observation. Check the absolute settling bound at
        // a scale the 400-step budget accommodates, then geometric decay at
        // ordinary scale.
        let shape = DVector::from_fn(96, |i, _| (i as f64 * 0.21).sin().abs() + 0.1);

        let small = vec![&shape * 2.0e-4; 500];
        let states = run_filter(&model, &small, 1.0).unwrap();
        assert_eq!(states.len(), 500);
        assert!(states.iter().all(|s| s.dim() == 134));
        let z = extract_z(&states, &model);
        let settled = z.points().last().unwrap().norm();
        assert!(
            settled > 1e-3,
            "steady state should dwarf the settling bound, got {settled:.3e}"
        );
        for t in 401..500 {
            let step = (&z.points()[t] - &z.points()[t - 1]).norm();
            assert!(step < 1e-6, "top layer still moving at step {t}: {step:.3e}");
        }

        let unit = vec![&shape * 5.0; 700];
        let z = extract_z(&run_filter(&model, &unit, 1.0).unwrap(), &model);
        let step_at = |t: usize| (&z.points()[t] - &z.points()[t - 1]).norm();
        let (early, late) = (step_at(100), step_at(600));
        assert!(
            late < 1e-3 * early,
            "expected geometric settling, got {early:.3e} at step 100 vs {late:.3e} at step 600"
        );
    }

    #[test]
    fn one_state_per_frame_with_joint_dimension() {
        let config = HldsConfig::new(vec![8, 4, 2]).unwrap();
        let model = build_joint_model(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let observations: Vec<DVector<f64>> = (0..1000)
            .map(|_| DVector::from_fn(8, |_, _| rng.random_range(0.0..4.0)))
            .collect();
        let states = run_filter(&model, &observations, 1.0).unwrap();
        assert_eq!(states.len(), 1000);
        assert!(states.iter().all(|s| s.dim() == 14));
    }

    #[test]
    fn top_layer_moves_less_than_bottom_on_stationary_input() {
        let model = default_model();
        // A held note has a sparse magnitude spectrum whose per-frame level
        // jiggles with window phase and noise; the bottom layer tracks that
        // jiggle while the top layer averages it away.
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let peaks = [7usize, 14, 21, 28];
        let observations: Vec<DVector<f64>> = (0..300)
            .map(|_| {
                DVector::from_fn(96, |i, _| {
                    let base = if peaks.contains(&i) { 2.0 } else { 0.02 };
                    base * rng.random_range(0.4..1.6)
                })
            })
            .collect();
        let states = run_filter(&model, &observations, 1.0).unwrap();

        let displacement = |range: Range<usize>| {
            let mut total = 0.0;
            for t in 51..states.len() {
                let cur = states[t].estimate().rows(range.start, range.len());
                let prev = states[t - 1].estimate().rows(range.start, range.len());
                total += (cur - prev).norm() / range.len() as f64;
            }
            total / (states.len() - 51) as f64
        };
        let top = displacement(model.top_range());
        let bottom = displacement(model.bottom_range());
        assert!(
            top < bottom,
            "top layer should drift less than the bottom: top {top:.3e} vs bottom {bottom:.3e}"
        );
    }

    #[test]
    fn scaling_observations_scales_estimates() {
        let config = HldsConfig::new(vec![8, 4, 2]).unwrap();
        let model = build_joint_model(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let observations: Vec<DVector<f64>> = (0..50)
            .map(|_| DVector::from_fn(8, |_, _| rng.random_range(0.0..4.0)))
            .collect();
        let alpha = 2.5;
        let scaled: Vec<DVector<f64>> = observations.iter().map(|y| y * alpha).collect();

        let base_states = run_filter(&model, &observations, 1.0).unwrap();
        let scaled_states = run_filter(&model, &scaled, 1.0).unwrap();
        for (a, b) in base_states.iter().zip(&scaled_states) {
            let err = (a.estimate() * alpha - b.estimate()).amax();
            let scale = b.estimate().amax().max(1e-12);
            assert!(err / scale < 1e-9, "linearity violated: {err:.3e}");
        }
    }

    #[test]
    fn extract_z_slices_top_layer() {
        let config = HldsConfig::new(vec![8, 4, 2]).unwrap();
        let model = build_joint_model(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let observations: Vec<DVector<f64>> = (0..20)
            .map(|_| DVector::from_fn(8, |_, _| rng.random_range(0.0..4.0)))
            .collect();
        let states = run_filter(&model, &observations, 1.0).unwrap();
        let z = extract_z(&states, &model);

        assert_eq!(z.len(), states.len());
        assert_eq!(z.dim(), 2);
        assert!(z.points()[0].iter().all(|&v| v == 0.0), "z_0 must be zero");
        let range = model.top_range();
        for (state, point) in states.iter().zip(z.iter()) {
            assert_eq!(&state.estimate().rows(range.start, range.len()).into_owned(), point);
        }
    }

    #[test]
    fn trajectory_constructor_rejects_mixed_dims() {
        let err = ZTrajectory::new(
            2,
            vec![DVector::zeros(2), DVector::zeros(3)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "got {err:?}");
    }

    #[test]
    fn empty_observation_sequence_is_rejected() {
        let err = run_filter(&default_model(), &[], 1.0).unwrap_err();
        assert!(matches!(err, Error::Input(_)), "got {err:?}");
    }

    #[test]
    fn failure_carries_the_frame_index() {
        let model = default_model();
        let mut observations = vec![DVector::from_element(96, 1.0); 5];
        observations[3][0] = f64::NAN;
        let err = run_filter(&model, &observations, 1.0).unwrap_err();
        assert!(err.to_string().contains("frame 3"), "{err}");
    }
}
