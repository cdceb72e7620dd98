//! Segment extraction from per-frame decisions and evaluation.
//!
//! Per-frame scores become crisp segments in three steps: threshold (frames
//! whose best score falls below the distance bound become outliers), run
//! merging, and minimum-duration filtering (class runs too short to be a
//! plausible note are discarded into the outlier class). Evaluation reduces
//! the prediction stream to one decision per annotated note instance — the
//! label covering the largest share of the note's frames — and tallies an
//! outlier-aware confusion matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use crate::classify::{check_non_overlapping, FrameScores, LabeledSegment, OUTLIER_LABEL};
use crate::error::{Error, Result};
use crate::frames::covered_frames;

/// A crisp segment label: a trained class or the outlier sentinel.
///
/// The derived order (classes lexicographically, then the outlier) doubles as
/// the tie-break preference wherever a single winner must be chosen.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SegmentLabel {
    Class(String),
    Outlier,
}

impl SegmentLabel {
    /// Parse from the textual form; the sentinel maps to `Outlier`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == OUTLIER_LABEL {
            Ok(Self::Outlier)
        } else if text.is_empty() {
            Err(Error::Parse("segment label must be non-empty".into()))
        } else {
            Ok(Self::Class(text.to_string()))
        }
    }

    pub fn is_outlier(&self) -> bool {
        matches!(self, Self::Outlier)
    }
}

impl fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Class(label) => f.write_str(label),
            Self::Outlier => f.write_str(OUTLIER_LABEL),
        }
    }
}

/// A predicted segment in frame units (end exclusive) with the mean winning
/// score over its frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPrediction {
    start_frame: usize,
    end_frame: usize,
    label: SegmentLabel,
    mean_score: f64,
}

impl SegmentPrediction {
    pub fn new(
        start_frame: usize,
        end_frame: usize,
        label: SegmentLabel,
        mean_score: f64,
    ) -> Result<Self> {
        if start_frame >= end_frame {
            return Err(Error::Input(format!(
                "segment start frame {start_frame} must precede end frame {end_frame}"
            )));
        }
        if !mean_score.is_finite() {
            return Err(Error::Input(format!(
                "segment {start_frame}..{end_frame} has non-finite mean score"
            )));
        }
        Ok(Self { start_frame, end_frame, label, mean_score })
    }

    pub fn start_frame(&self) -> usize {
        self.start_frame
    }

    /// Exclusive end frame.
    pub fn end_frame(&self) -> usize {
        self.end_frame
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        false // start < end by construction
    }

    pub fn label(&self) -> &SegmentLabel {
        &self.label
    }

    pub fn mean_score(&self) -> f64 {
        self.mean_score
    }
}

fn check_contiguous(segments: &[SegmentPrediction]) -> Result<()> {
    for pair in segments.windows(2) {
        if pair[1].start_frame != pair[0].end_frame {
            return Err(Error::Input(format!(
                "segments must tile the clip contiguously: {}..{} followed by {}..{}",
                pair[0].start_frame, pair[0].end_frame, pair[1].start_frame, pair[1].end_frame
            )));
        }
    }
    Ok(())
}

/// Relabel non-outlier runs shorter than `min_duration` as outliers and merge
/// adjacent outlier runs (mean scores combine frame-weighted). Input segments
/// must tile the clip contiguously; the result does too, and is a fixed point
/// of this function.
pub fn enforce_min_duration(
    segments: &[SegmentPrediction],
    min_duration: usize,
) -> Result<Vec<SegmentPrediction>> {
    if min_duration == 0 {
        return Err(Error::Config("minimum duration must be at least 1 frame".into()));
    }
    check_contiguous(segments)?;

    let mut merged: Vec<SegmentPrediction> = Vec::with_capacity(segments.len());
    for segment in segments {
        let mut current = segment.clone();
        if !current.label.is_outlier() && current.len() < min_duration {
            current.label = SegmentLabel::Outlier;
        }
        match merged.last_mut() {
            Some(top) if top.label.is_outlier() && current.label.is_outlier() => {
                let frames = (top.len() + current.len()) as f64;
                top.mean_score = (top.mean_score * top.len() as f64
                    + current.mean_score * current.len() as f64)
                    / frames;
                top.end_frame = current.end_frame;
            }
            _ => merged.push(current),
        }
    }
    Ok(merged)
}

/// Turn per-frame scores into crisp segments.
///
/// A frame keeps its best label when `best_score >= -distance_threshold`
/// (i.e. its Mahalanobis distance is within the bound) and becomes an outlier
/// otherwise; equal consecutive decisions merge into runs; runs then pass
/// through [`enforce_min_duration`]. The result tiles `0..scores.len()`.
pub fn crisp_decisions(
    scores: &[FrameScores],
    distance_threshold: f64,
    min_duration: usize,
) -> Result<Vec<SegmentPrediction>> {
    if !distance_threshold.is_finite() || distance_threshold <= 0.0 {
        return Err(Error::Config(format!(
            "distance threshold must be positive, got {distance_threshold}"
        )));
    }
    if min_duration == 0 {
        return Err(Error::Config("minimum duration must be at least 1 frame".into()));
    }

    struct Run {
        label: SegmentLabel,
        start: usize,
        end: usize,
        score_sum: f64,
    }
    let mut runs: Vec<Run> = Vec::new();
    for (t, frame) in scores.iter().enumerate() {
        let label = if frame.best_score() >= -distance_threshold {
            SegmentLabel::Class(frame.best_label().to_string())
        } else {
            SegmentLabel::Outlier
        };
        match runs.last_mut() {
            Some(run) if run.label == label => {
                run.end = t + 1;
                run.score_sum += frame.best_score();
            }
            _ => runs.push(Run { label, start: t, end: t + 1, score_sum: frame.best_score() }),
        }
    }

    let segments = runs
        .into_iter()
        .map(|run| {
            let mean = run.score_sum / (run.end - run.start) as f64;
            SegmentPrediction::new(run.start, run.end, run.label, mean)
        })
        .collect::<Result<Vec<_>>>()?;
    enforce_min_duration(&segments, min_duration)
}

/// Instance-level confusion matrix: one count per annotated note, rows are
/// true classes (trained classes first, then other annotated classes),
/// columns are the trained classes plus a final outlier column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    /// Trained class names plus the trailing outlier column.
    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    /// Count of true-class instances predicted as `predicted` (use the
    /// outlier sentinel for the outlier column).
    pub fn count(&self, true_label: &str, predicted: &str) -> Option<usize> {
        let r = self.row_labels.iter().position(|l| l == true_label)?;
        let c = self.col_labels.iter().position(|l| l == predicted)?;
        Some(self.counts[r][c])
    }

    /// Total instances of one true class (its row sum).
    pub fn row_total(&self, true_label: &str) -> Option<usize> {
        let r = self.row_labels.iter().position(|l| l == true_label)?;
        Some(self.counts[r].iter().sum())
    }

    /// Instances whose true label is a trained class and whose prediction
    /// matches it.
    pub fn correct_trained(&self) -> usize {
        self.row_labels
            .iter()
            .enumerate()
            .filter_map(|(r, label)| {
                let c = self.col_labels.iter().position(|cl| cl == label)?;
                Some(self.counts[r][c])
            })
            .sum()
    }

    /// Aligned text table; each cell shows `count/row_total`.
    pub fn render(&self) -> String {
        let header: Vec<String> = std::iter::once("true \\ predicted".to_string())
            .chain(self.col_labels.iter().cloned())
            .collect();
        let mut rows: Vec<Vec<String>> = vec![header];
        for (r, label) in self.row_labels.iter().enumerate() {
            let total: usize = self.counts[r].iter().sum();
            let mut row = vec![label.clone()];
            row.extend(self.counts[r].iter().map(|&c| format!("{c}/{total}")));
            rows.push(row);
        }

        let columns = rows[0].len();
        let widths: Vec<usize> = (0..columns)
            .map(|c| rows.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            for (c, cell) in row.iter().enumerate() {
                if c > 0 {
                    out.push_str("  ");
                }
                // Left-align the row label, right-align counts.
                if c == 0 {
                    out.push_str(&format!("{cell:<width$}", width = widths[c]));
                } else {
                    out.push_str(&format!("{cell:>width$}", width = widths[c]));
                }
            }
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        }
        out
    }

    /// Machine-readable CSV: `true_label` column then raw counts per
    /// predicted column (outlier column last).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("true_label".to_string())
            .chain(self.col_labels.iter().map(|l| csv_quote(l)))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (r, label) in self.row_labels.iter().enumerate() {
            let mut row = vec![csv_quote(label)];
            row.extend(self.counts[r].iter().map(|c| c.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Reduce predictions to one decision per annotated note and tally the
/// confusion matrix.
///
/// Each truth segment is converted to its covered frame range (same rule as
/// training), and the predicted label covering the largest share of those
/// frames wins; frames no prediction covers count toward the outlier.
/// Coverage ties prefer a class over the outlier, then the lexicographically
/// smaller class.
pub fn match_and_score(
    predictions: &[SegmentPrediction],
    truth: &[LabeledSegment],
    trained_labels: &[String],
    frame_hop: usize,
    window_len: usize,
) -> Result<ConfusionMatrix> {
    if truth.is_empty() {
        return Err(Error::Input("evaluation needs at least one truth segment".into()));
    }
    check_non_overlapping(truth)?;
    if trained_labels.is_empty() {
        return Err(Error::Input("evaluation needs at least one trained class".into()));
    }
    if frame_hop == 0 || window_len == 0 {
        return Err(Error::Config("frame hop and window length must be positive".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for label in trained_labels {
        if label == OUTLIER_LABEL {
            return Err(Error::Input(format!("'{OUTLIER_LABEL}' cannot be a trained class")));
        }
        if !seen.insert(label) {
            return Err(Error::Input(format!("duplicate trained class '{label}'")));
        }
    }
    let mut sorted = predictions.to_vec();
    sorted.sort_by_key(|p| p.start_frame);
    for pair in sorted.windows(2) {
        if pair[1].start_frame < pair[0].end_frame {
            return Err(Error::Input(format!(
                "predictions overlap: {}..{} and {}..{}",
                pair[0].start_frame, pair[0].end_frame, pair[1].start_frame, pair[1].end_frame
            )));
        }
    }
    for p in &sorted {
        if let SegmentLabel::Class(label) = p.label() {
            if !trained_labels.contains(label) {
                return Err(Error::Input(format!(
                    "prediction {}..{} uses unknown class '{label}'",
                    p.start_frame, p.end_frame
                )));
            }
        }
    }

    // Row order: trained classes first, then other annotated classes.
    let mut row_labels: Vec<String> = trained_labels.to_vec();
    let mut others: Vec<String> = truth
        .iter()
        .map(|s| s.label().to_string())
        .filter(|l| !trained_labels.contains(l))
        .collect();
    others.sort();
    others.dedup();
    row_labels.extend(others);

    let mut col_labels = trained_labels.to_vec();
    col_labels.push(OUTLIER_LABEL.to_string());

    let mut counts = vec![vec![0usize; col_labels.len()]; row_labels.len()];
    for note in truth {
        let frames = covered_frames(note.start_sample(), note.end_sample(), window_len, frame_hop);

        let mut coverage: BTreeMap<SegmentLabel, usize> = BTreeMap::new();
        let mut covered = 0usize;
        for p in &sorted {
            let lo = p.start_frame.max(frames.start);
            let hi = p.end_frame.min(frames.end);
            if lo < hi {
                *coverage.entry(p.label().clone()).or_insert(0) += hi - lo;
                covered += hi - lo;
            }
        }
        let uncovered = frames.len().saturating_sub(covered);
        if uncovered > 0 || frames.is_empty() {
            *coverage.entry(SegmentLabel::Outlier).or_insert(0) += uncovered;
        }

        // Largest coverage wins; the BTreeMap order (classes before outlier,
        // lexicographic within classes) settles ties.
        let winner = coverage
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(label, _)| label.clone())
            .unwrap_or(SegmentLabel::Outlier);

        let row = row_labels.iter().position(|l| l == note.label()).expect("row exists");
        let col = match &winner {
            SegmentLabel::Class(label) => {
                col_labels.iter().position(|l| l == label).expect("column exists")
            }
            SegmentLabel::Outlier => col_labels.len() - 1,
        };
        counts[row][col] += 1;
    }

    Ok(ConfusionMatrix { row_labels, col_labels, counts })
}

/// Write predictions as CSV: `start_frame,end_frame,label,mean_score` with a
/// header row; outlier segments carry the sentinel label.
pub fn write_predictions_csv<W: Write>(
    predictions: &[SegmentPrediction],
    mut out: W,
) -> Result<()> {
    writeln!(out, "start_frame,end_frame,label,mean_score")?;
    for p in predictions {
        writeln!(
            out,
            "{},{},{},{}",
            p.start_frame,
            p.end_frame,
            csv_quote(&p.label.to_string()),
            p.mean_score
        )?;
    }
    Ok(())
}

/// Read predictions back from the CSV written by [`write_predictions_csv`].
pub fn read_predictions_csv<R: Read>(reader: R) -> Result<Vec<SegmentPrediction>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::Parse(format!("cannot read predictions CSV header: {e}")))?;
    let expected = ["start_frame", "end_frame", "label", "mean_score"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse(format!(
            "predictions CSV must start with the header {}, got {:?}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut predictions = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record =
            record.map_err(|e| Error::Parse(format!("predictions CSV row {}: {e}", i + 1)))?;
        if record.len() != 4 {
            return Err(Error::Parse(format!(
                "predictions CSV row {}: expected 4 fields, got {}",
                i + 1,
                record.len()
            )));
        }
        let start = record[0].trim().parse::<usize>().map_err(|_| {
            Error::Parse(format!("predictions CSV row {}: bad start_frame '{}'", i + 1, &record[0]))
        })?;
        let end = record[1].trim().parse::<usize>().map_err(|_| {
            Error::Parse(format!("predictions CSV row {}: bad end_frame '{}'", i + 1, &record[1]))
        })?;
        let label = SegmentLabel::parse(&record[2])?;
        let score = record[3].trim().parse::<f64>().map_err(|_| {
            Error::Parse(format!("predictions CSV row {}: bad mean_score '{}'", i + 1, &record[3]))
        })?;
        predictions.push(SegmentPrediction::new(start, end, label, score)?);
    }
    Ok(predictions)
}
