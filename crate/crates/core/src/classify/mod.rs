//! Per-class Gaussian models over top-layer trajectories.
//!
//! Training filters a labeled clip once (no per-note state resets), pools the
//! top-layer states of each class's segments — skipping a per-segment burn-in
//! so transitionary states don't smear the clusters — and fits a mean and
//! regularized covariance per class. Scoring assigns every frame
//! `-sqrt((z - mu)^T Sigma^{-1} (z - mu))` per class, i.e. the negative
//! Mahalanobis distance, so larger is better and 0 is a perfect hit.
//! Thresholding and segment extraction live in [`crate::segments`].

pub mod model_file;

pub use model_file::TrainedModel;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::frames::FrameSeries;
use crate::hlds::{extract_z, run_filter, JointModel, ZTrajectory};

/// Diagonal regularization strength for fitted covariances.
pub const COVARIANCE_EPSILON: f64 = 1e-6;

/// Reserved label for frames and segments rejected by every class.
pub const OUTLIER_LABEL: &str = "__outlier__";

/// A ground-truth annotation: sample range (end exclusive) and class name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSegment {
    start_sample: usize,
    end_sample: usize,
    label: String,
}

impl LabeledSegment {
    pub fn new(start_sample: usize, end_sample: usize, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if start_sample >= end_sample {
            return Err(Error::Input(format!(
                "segment start {start_sample} must precede end {end_sample}"
            )));
        }
        if label.trim().is_empty() {
            return Err(Error::Input(format!(
                "segment {start_sample}..{end_sample} has an empty label"
            )));
        }
        Ok(Self { start_sample, end_sample, label })
    }

    pub fn start_sample(&self) -> usize {
        self.start_sample
    }

    /// Exclusive end sample.
    pub fn end_sample(&self) -> usize {
        self.end_sample
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Check that no two segments share samples (they may touch).
pub fn check_non_overlapping(segments: &[LabeledSegment]) -> Result<()> {
    let mut sorted: Vec<&LabeledSegment> = segments.iter().collect();
    sorted.sort_by_key(|s| s.start_sample);
    for pair in sorted.windows(2) {
        if pair[1].start_sample < pair[0].end_sample {
            return Err(Error::Input(format!(
                "segments overlap: {}..{} ({}) and {}..{} ({})",
                pair[0].start_sample,
                pair[0].end_sample,
                pair[0].label,
                pair[1].start_sample,
                pair[1].end_sample,
                pair[1].label
            )));
        }
    }
    Ok(())
}

const LABEL_CSV_HEADER: [&str; 3] = ["start_sample", "end_sample", "label"];

/// Read segment annotations from CSV with the required
/// `start_sample,end_sample,label` header.
pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<LabeledSegment>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::Parse(format!("cannot read label CSV header: {e}")))?;
    if headers.iter().collect::<Vec<_>>() != LABEL_CSV_HEADER {
        return Err(Error::Parse(format!(
            "label CSV must start with the header start_sample,end_sample,label, got {:?}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut segments = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("label CSV row {}: {e}", i + 1)))?;
        if record.len() != 3 {
            return Err(Error::Parse(format!(
                "label CSV row {}: expected 3 fields, got {}",
                i + 1,
                record.len()
            )));
        }
        let parse = |field: &str, name: &str| {
            field.trim().parse::<usize>().map_err(|_| {
                Error::Parse(format!("label CSV row {}: {name} '{field}' is not an integer", i + 1))
            })
        };
        let start = parse(&record[0], "start_sample")?;
        let end = parse(&record[1], "end_sample")?;
        segments.push(LabeledSegment::new(start, end, record[2].trim())?);
    }
    Ok(segments)
}

/// Write segment annotations in the label CSV format.
pub fn write_labels_csv<W: Write>(segments: &[LabeledSegment], mut out: W) -> Result<()> {
    writeln!(out, "{}", LABEL_CSV_HEADER.join(","))?;
    for s in segments {
        let label = if s.label.contains(',') || s.label.contains('"') {
            format!("\"{}\"", s.label.replace('"', "\"\""))
        } else {
            s.label.clone()
        };
        writeln!(out, "{},{},{label}", s.start_sample, s.end_sample)?;
    }
    Ok(())
}

/// One class's Gaussian cluster in z-space, with the Cholesky factor of its
/// covariance cached for scoring.
#[derive(Debug, Clone)]
pub struct ClassModel {
    label: String,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    sample_count: usize,
    chol: Cholesky<f64, Dyn>,
}

impl ClassModel {
    /// Build a model from an explicit mean and covariance. The covariance
    /// must be symmetric positive definite as given; no regularization is
    /// applied here.
    pub fn new(
        label: impl Into<String>,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        sample_count: usize,
    ) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::Input("class label must be non-empty".into()));
        }
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "class '{label}': covariance is {}x{}, expected {d}x{d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("class '{label}': non-finite model parameters")));
        }
        let scale = covariance.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let asym = (&covariance - covariance.transpose())
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if asym > 1e-10 * scale {
            return Err(Error::Input(format!("class '{label}': covariance is not symmetric")));
        }
        let chol = covariance.clone().cholesky().ok_or_else(|| {
            Error::Degenerate(format!("class '{label}': covariance is not positive definite"))
        })?;
        Ok(Self { label, mean, covariance, sample_count, chol })
    }

    /// Fit a class to pooled z samples: mean, maximum-likelihood covariance
    /// (`1/n` normalization), and a diagonal ridge of `epsilon * trace / d`
    /// (falling back to `epsilon` itself when the fitted covariance has zero
    /// trace, e.g. a single repeated sample).
    pub fn fit(label: impl Into<String>, samples: &[DVector<f64>], epsilon: f64) -> Result<Self> {
        let label = label.into();
        if samples.is_empty() {
            return Err(Error::Training(format!("class '{label}' has no samples to fit")));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Dimension(format!(
                "class '{label}': samples have inconsistent dimensions"
            )));
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += s;
        }
        mean /= n;

        let mut covariance = DMatrix::zeros(d, d);
        for s in samples {
            let centered = s - &mean;
            covariance += &centered * centered.transpose();
        }
        covariance /= n;

        let trace = covariance.trace();
        let ridge = if trace > 0.0 { epsilon * trace / d as f64 } else { epsilon };
        for i in 0..d {
            covariance[(i, i)] += ridge;
        }

        if samples.len() < d + 1 {
            log::warn!(
                "class '{label}' fitted from only {} samples (fewer than dim + 1 = {})",
                samples.len(),
                d + 1
            );
        }

        match Self::new(label, mean, covariance, samples.len()) {
            Ok(model) => Ok(model),
            Err(Error::Degenerate(msg)) => {
                Err(Error::Training(format!("covariance singular after regularization: {msg}")))
            }
            Err(other) => Err(other),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mahalanobis distance of a point from this cluster.
    pub fn mahalanobis(&self, z: &DVector<f64>) -> f64 {
        let centered = z - &self.mean;
        centered.dot(&self.chol.solve(&centered)).max(0.0).sqrt()
    }
}

/// Per-frame class scores: negative Mahalanobis distance per label, plus the
/// winning label (ties go to the lexicographically smallest).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores {
    scores: BTreeMap<String, f64>,
    best_label: String,
    best_score: f64,
}

impl FrameScores {
    /// Build from a label → score map; the winner is derived here.
    pub fn new(scores: BTreeMap<String, f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Input("frame scores need at least one class".into()));
        }
        if let Some((label, &score)) = scores.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::Degenerate(format!(
                "non-finite score {score} for class '{label}'"
            )));
        }
        let mut best: Option<(&str, f64)> = None;
        for (label, &score) in &scores {
            // Strict comparison keeps the first (smallest) label on ties.
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((label, score));
            }
        }
        let (best_label, best_score) = best.map(|(l, s)| (l.to_string(), s)).unwrap();
        Ok(Self { scores, best_label, best_score })
    }

    pub fn scores(&self) -> &BTreeMap<String, f64> {
        &self.scores
    }

    pub fn score_for(&self, label: &str) -> Option<f64> {
        self.scores.get(label).copied()
    }

    pub fn best_label(&self) -> &str {
        &self.best_label
    }

    pub fn best_score(&self) -> f64 {
        self.best_score
    }
}

/// Train per-class Gaussians from one labeled clip.
///
/// The whole clip is filtered once so note-to-note transitions evolve exactly
/// as they will at test time; each segment contributes its top-layer states
/// after `burn_in` frames to its class's pool.
pub fn train(
    model: &JointModel,
    clip_features: &FrameSeries,
    labels: &[LabeledSegment],
    burn_in: usize,
) -> Result<Vec<ClassModel>> {
    if labels.is_empty() {
        return Err(Error::Training("no labeled segments to train from".into()));
    }
    check_non_overlapping(labels)?;
    if clip_features.dim() != model.obs_dim() {
        return Err(Error::Dimension(format!(
            "features have dimension {}, model observes {}",
            clip_features.dim(),
            model.obs_dim()
        )));
    }
    if labels.iter().any(|s| s.label() == OUTLIER_LABEL) {
        return Err(Error::Training(format!(
            "'{OUTLIER_LABEL}' is reserved and cannot be a training class"
        )));
    }

    let states = run_filter(model, clip_features.frames(), model.config().initial_cov_scale())?;
    let z = extract_z(&states, model);

    let mut pools: BTreeMap<&str, Vec<DVector<f64>>> = BTreeMap::new();
    for segment in labels {
        let frames = clip_features.frames_within(segment.start_sample(), segment.end_sample());
        if frames.len() <= burn_in {
            return Err(Error::Training(format!(
                "segment {}..{} ('{}') covers {} frames, need more than the {burn_in}-frame burn-in",
                segment.start_sample(),
                segment.end_sample(),
                segment.label(),
                frames.len()
            )));
        }
        let pool = pools.entry(segment.label()).or_default();
        for t in frames.start + burn_in..frames.end {
            pool.push(z.points()[t].clone());
        }
    }

    pools
        .into_iter()
        .map(|(label, samples)| ClassModel::fit(label, &samples, COVARIANCE_EPSILON))
        .collect()
}

/// Score every trajectory point against every class model.
pub fn score_frames(z: &ZTrajectory, classes: &[ClassModel]) -> Result<Vec<FrameScores>> {
    if classes.is_empty() {
        return Err(Error::Input("scoring requires at least one class model".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for class in classes {
        if class.dim() != z.dim() {
            return Err(Error::Dimension(format!(
                "class '{}' has dimension {}, trajectory has {}",
                class.label(),
                class.dim(),
                z.dim()
            )));
        }
        if !seen.insert(class.label()) {
            return Err(Error::Input(format!("duplicate class label '{}'", class.label())));
        }
    }

    z.iter()
        .map(|point| {
            let scores = classes
                .iter()
                .map(|c| (c.label().to_string(), -c.mahalanobis(point)))
                .collect();
            FrameScores::new(scores)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hlds::{build_joint_model, HldsConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_row_slice(&[x, y])
    }

    fn normal_sample(rng: &mut ChaCha8Rng, mean: (f64, f64)) -> DVector<f64> {
        let dx: f64 = StandardNormal.sample(rng);
        let dy: f64 = StandardNormal.sample(rng);
        vec2(mean.0 + dx, mean.1 + dy)
    }

    #[test]
    fn segment_validation() {
        assert!(LabeledSegment::new(0, 100, "a").is_ok());
        assert!(matches!(LabeledSegment::new(100, 100, "a"), Err(Error::Input(_))));
        assert!(matches!(LabeledSegment::new(101, 100, "a"), Err(Error::Input(_))));
        assert!(matches!(LabeledSegment::new(0, 1, "  "), Err(Error::Input(_))));

        let overlapping = vec![
            LabeledSegment::new(0, 100, "a").unwrap(),
            LabeledSegment::new(99, 200, "b").unwrap(),
        ];
        assert!(check_non_overlapping(&overlapping).is_err());

        let touching = vec![
            LabeledSegment::new(0, 100, "a").unwrap(),
            LabeledSegment::new(100, 200, "b").unwrap(),
        ];
        assert!(check_non_overlapping(&touching).is_ok());
    }

    #[test]
    fn label_csv_round_trip() {
        let segments = vec![
            LabeledSegment::new(0, 8000, "e5").unwrap(),
            LabeledSegment::new(9000, 17_000, "f5").unwrap(),
        ];
        let mut buf = Vec::new();
        write_labels_csv(&segments, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("start_sample,end_sample,label\n"), "{text}");

        let parsed = read_labels_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed, segments);
    }

    #[test]
    fn label_csv_rejects_malformed_input() {
        let missing_header = "0,100,a\n";
        assert!(matches!(read_labels_csv(missing_header.as_bytes()), Err(Error::Parse(_))));

        let wrong_header = "start,end,label\n0,100,a\n";
        assert!(matches!(read_labels_csv(wrong_header.as_bytes()), Err(Error::Parse(_))));

        let bad_number = "start_sample,end_sample,label\nzero,100,a\n";
        assert!(matches!(read_labels_csv(bad_number.as_bytes()), Err(Error::Parse(_))));

        let inverted = "start_sample,end_sample,label\n100,50,a\n";
        assert!(matches!(read_labels_csv(inverted.as_bytes()), Err(Error::Input(_))));

        let header_only = "start_sample,end_sample,label\n";
        assert_eq!(read_labels_csv(header_only.as_bytes()).unwrap(), vec![]);
    }

    #[test]
    fn identical_samples_fit_to_ridge_covariance() {
        let v = vec2(1.5, -2.0);
        let model = ClassModel::fit("a", &vec![v.clone(); 10], 1e-6).unwrap();
        assert_eq!(model.mean(), &v);
        assert_eq!(model.sample_count(), 10);
        let expected = DMatrix::identity(2, 2) * 1e-6;
        assert_eq!(model.covariance(), &expected);
    }

    #[test]
    fn fit_recovers_separated_cluster_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let a_samples: Vec<DVector<f64>> =
            (0..200).map(|_| normal_sample(&mut rng, (0.0, 0.0))).collect();
        let b_samples: Vec<DVector<f64>> =
            (0..200).map(|_| normal_sample(&mut rng, (10.0, 10.0))).collect();

        let a = ClassModel::fit("a", &a_samples, COVARIANCE_EPSILON).unwrap();
        let b = ClassModel::fit("b", &b_samples, COVARIANCE_EPSILON).unwrap();
        assert!((a.mean() - vec2(0.0, 0.0)).norm() < 0.5);
        assert!((b.mean() - vec2(10.0, 10.0)).norm() < 0.5);
    }

    fn tiny_model() -> JointModel {
        build_joint_model(&HldsConfig::new(vec![4, 2]).unwrap().with_window(4, 0).unwrap())
            .unwrap()
    }

    /// Features with two constant-spectrum stretches (plus jitter) separated
    /// and surrounded by near-silence, in frame blocks of 60.
    fn two_class_features(rng: &mut ChaCha8Rng) -> (FrameSeries, Vec<LabeledSegment>) {
        let mut frames = Vec::new();
        let block = |frames: &mut Vec<DVector<f64>>, base: [f64; 4], rng: &mut ChaCha8Rng| {
            for _ in 0..60 {
                frames.push(DVector::from_fn(4, |i, _| {
                    (base[i] * rng.random_range(0.8..1.2)).max(0.0)
                }));
            }
        };
        block(&mut frames, [0.01, 0.01, 0.01, 0.01], rng);
        block(&mut frames, [3.0, 0.2, 0.05, 0.02], rng);
        block(&mut frames, [0.01, 0.01, 0.01, 0.01], rng);
        block(&mut frames, [0.1, 0.3, 2.5, 1.2], rng);
        block(&mut frames, [0.01, 0.01, 0.01, 0.01], rng);
        let series = FrameSeries::new(frames, 4, 0).unwrap();
        // hop = 4: segment samples are frame index * 4.
        let labels = vec![
            LabeledSegment::new(60 * 4, 120 * 4, "low").unwrap(),
            LabeledSegment::new(180 * 4, 240 * 4, "high").unwrap(),
        ];
        (series, labels)
    }

    #[test]
    fn train_fits_one_model_per_class_in_label_order() {
        let model = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(127);
        let (series, labels) = two_class_features(&mut rng);

        let classes = train(&model, &series, &labels, 5).unwrap();
        assert_eq!(classes.len(), 2);
        assert_eq!(classes[0].label(), "high");
        assert_eq!(classes[1].label(), "low");
        assert_eq!(classes[0].sample_count(), 55);
        assert_eq!(classes[1].sample_count(), 55);
        assert!(
            (classes[0].mean() - classes[1].mean()).norm() > 1.0,
            "distinct spectra should land in distinct z clusters: {:?} vs {:?}",
            classes[0].mean(),
            classes[1].mean()
        );
    }

    #[test]
    fn train_is_deterministic() {
        let model = tiny_model();
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(131);
            let (series, labels) = two_class_features(&mut rng);
            train(&model, &series, &labels, 5).unwrap()
        };
        let (a, b) = (make(), make());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label(), y.label());
            assert_eq!(x.mean(), y.mean());
            assert_eq!(x.covariance(), y.covariance());
        }
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let model = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(137);
        let (series, labels) = two_class_features(&mut rng);

        let err = train(&model, &series, &[], 5).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "got {err:?}");

        // Segment with only 4 frames against a 5-frame burn-in.
        let short = vec![LabeledSegment::new(0, 16, "low").unwrap()];
        let err = train(&model, &series, &short, 5).unwrap_err();
        match err {
            Error::Training(msg) => assert!(msg.contains("0..16"), "{msg}"),
            other => panic!("expected training error, got {other:?}"),
        }

        let overlapping = vec![
            LabeledSegment::new(0, 300, "low").unwrap(),
            LabeledSegment::new(200, 500, "high").unwrap(),
        ];
        assert!(train(&model, &series, &overlapping, 5).is_err());

        let reserved = vec![LabeledSegment::new(240, 480, OUTLIER_LABEL).unwrap()];
        let err = train(&model, &series, &reserved, 5).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "got {err:?}");

        let (wrong_dim, labels_w) = (
            FrameSeries::new(vec![DVector::zeros(6); 100], 6, 2).unwrap(),
            labels,
        );
        assert!(matches!(
            train(&model, &wrong_dim, &labels_w, 5),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn score_is_zero_at_the_mean_and_euclidean_under_identity() {
        let mu = vec2(1.0, -2.0);
        let class =
            ClassModel::new("a", mu.clone(), DMatrix::identity(2, 2), 50).unwrap();

        let z = ZTrajectory::new(2, vec![mu.clone(), &mu + vec2(0.0, 3.0)]).unwrap();
        let scores = score_frames(&z, std::slice::from_ref(&class)).unwrap();
        assert_eq!(scores[0].best_score(), 0.0);
        assert!((scores[1].best_score() - (-3.0)).abs() < 1e-12);
        assert_eq!(scores[0].best_label(), "a");
    }

    #[test]
    fn equidistant_tie_goes_to_lexicographically_smaller_label() {
        let cov = DMatrix::identity(2, 2);
        let b = ClassModel::new("b", vec2(1.0, 0.0), cov.clone(), 10).unwrap();
        let a = ClassModel::new("a", vec2(-1.0, 0.0), cov, 10).unwrap();

        let z = ZTrajectory::new(2, vec![vec2(0.0, 0.0)]).unwrap();
        // Pass classes in reverse order to prove order independence.
        let scores = score_frames(&z, &[b, a]).unwrap();
        assert_eq!(scores[0].best_label(), "a");
        assert_eq!(scores[0].score_for("a"), scores[0].score_for("b"));
    }

    #[test]
    fn argmax_score_is_argmin_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(139);
        let classes = vec![
            ClassModel::new("a", vec2(0.0, 0.0), DMatrix::identity(2, 2), 10).unwrap(),
            ClassModel::new("b", vec2(4.0, 1.0), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), 10)
                .unwrap(),
            ClassModel::new("c", vec2(-3.0, 5.0), DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 3.0]), 10)
                .unwrap(),
        ];
        for _ in 0..200 {
            let point = vec2(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
            let z = ZTrajectory::new(2, vec![point.clone()]).unwrap();
            let scores = &score_frames(&z, &classes).unwrap()[0];

            let min_dist = classes
                .iter()
                .map(|c| (c.label(), c.mahalanobis(&point)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(scores.best_label(), min_dist.0);
            assert_eq!(
                scores.best_score(),
                scores.scores().values().copied().fold(f64::NEG_INFINITY, f64::max)
            );
        }
    }

    #[test]
    fn scores_are_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(149);
        for _ in 0..20 {
            // Random well-conditioned invertible transform.
            let t = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))
                + DMatrix::identity(2, 2) * 2.0;
            let shift = vec2(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));

            let make_cov = |rng: &mut ChaCha8Rng| {
                let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
                &a * a.transpose() + DMatrix::identity(2, 2) * 0.5
            };
            let mu_a = vec2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let mu_b = vec2(rng.random_range(2.0..5.0), rng.random_range(-5.0..-2.0));
            let (cov_a, cov_b) = (make_cov(&mut rng), make_cov(&mut rng));

            let classes = vec![
                ClassModel::new("a", mu_a.clone(), cov_a.clone(), 10).unwrap(),
                ClassModel::new("b", mu_b.clone(), cov_b.clone(), 10).unwrap(),
            ];
            let sym = |m: DMatrix<f64>| 0.5 * (&m + m.transpose());
            let mapped = vec![
                ClassModel::new("a", &t * &mu_a + &shift, sym(&t * cov_a * t.transpose()), 10)
                    .unwrap(),
                ClassModel::new("b", &t * &mu_b + &shift, sym(&t * cov_b * t.transpose()), 10)
                    .unwrap(),
            ];

            let points: Vec<DVector<f64>> = (0..25)
                .map(|_| vec2(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)))
                .collect();
            let mapped_points: Vec<DVector<f64>> =
                points.iter().map(|p| &t * p + &shift).collect();

            let plain = score_frames(&ZTrajectory::new(2, points).unwrap(), &classes).unwrap();
            let transformed =
                score_frames(&ZTrajectory::new(2, mapped_points).unwrap(), &mapped).unwrap();
            for (x, y) in plain.iter().zip(&transformed) {
                for (label, score) in x.scores() {
                    let other = y.score_for(label).unwrap();
                    assert!(
                        (score - other).abs() < 1e-8,
                        "class '{label}': {score} vs {other} after affine map"
                    );
                }
                assert_eq!(x.best_label(), y.best_label());
            }
        }
    }

    #[test]
    fn score_frames_rejects_bad_class_sets() {
        let z = ZTrajectory::new(2, vec![vec2(0.0, 0.0)]).unwrap();
        assert!(matches!(score_frames(&z, &[]), Err(Error::Input(_))));

        let a = ClassModel::new("a", vec2(0.0, 0.0), DMatrix::identity(2, 2), 10).unwrap();
        let dup = vec![a.clone(), a.clone()];
        assert!(matches!(score_frames(&z, &dup), Err(Error::Input(_))));

        let wrong = ClassModel::new("w", DVector::zeros(3), DMatrix::identity(3, 3), 10).unwrap();
        assert!(matches!(score_frames(&z, &[wrong]), Err(Error::Dimension(_))));
    }

    #[test]
    fn class_model_rejects_degenerate_covariances() {
        let err =
            ClassModel::new("a", vec2(0.0, 0.0), DMatrix::zeros(2, 2), 10).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "got {err:?}");

        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(ClassModel::new("a", vec2(0.0, 0.0), asym, 10).is_err());

        let wrong_shape = DMatrix::identity(3, 3);
        assert!(matches!(
            ClassModel::new("a", vec2(0.0, 0.0), wrong_shape, 10),
            Err(Error::Dimension(_))
        ));
    }
}
