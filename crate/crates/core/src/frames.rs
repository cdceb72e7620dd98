//! Audio framing and DCT magnitude features.
//!
//! A mono clip is cut into overlapping sliding windows; each window is mapped
//! to the elementwise absolute value of its orthonormal type-II DCT. The
//! resulting non-negative spectra are the observation sequence `{y_t}` that
//! the joint model in [`crate::hlds`] filters.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A mono audio clip: amplitude samples (nominally in `[-1, 1]`) at a fixed
/// sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("audio clip has no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("audio clip contains non-finite samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }
}

/// The observation sequence of one clip: per-frame DCT magnitude spectra plus
/// the framing geometry that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    frames: Vec<DVector<f64>>,
    window_len: usize,
    overlap: usize,
}

impl FrameSeries {
    /// Validate that every frame is a non-negative vector of the window
    /// length (the post-magnitude invariant).
    pub fn new(frames: Vec<DVector<f64>>, window_len: usize, overlap: usize) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if overlap >= window_len {
            return Err(Error::Config(format!(
                "overlap ({overlap}) must be smaller than the window length ({window_len})"
            )));
        }
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != window_len {
                return Err(Error::Dimension(format!(
                    "frame {t} has dimension {}, expected {window_len}",
                    frame.len()
                )));
            }
            if frame.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::Input(format!(
                    "frame {t} contains a negative or non-finite entry"
                )));
            }
        }
        Ok(Self { frames, window_len, overlap })
    }

    pub fn frames(&self) -> &[DVector<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Feature dimension (equals the window length).
    pub fn dim(&self) -> usize {
        self.window_len
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

    /// First sample index covered by frame `t`.
    pub fn frame_start(&self, t: usize) -> usize {
        t * self.hop()
    }

    /// Indices of the frames whose windows lie entirely inside the sample
    /// range `[start_sample, end_sample)`, clamped to the frames that exist.
    /// May be empty for short ranges.
    pub fn frames_within(&self, start_sample: usize, end_sample: usize) -> Range<usize> {
        let unclamped = covered_frames(start_sample, end_sample, self.window_len, self.hop());
        let first = unclamped.start.min(self.frames.len());
        let end = unclamped.end.min(self.frames.len());
        if first >= end {
            0..0
        } else {
            first..end
        }
    }
}

/// Frame indices whose windows lie entirely inside `[start_sample,
/// end_sample)`, for windows of `window_len` samples placed every `hop`
/// samples. This is the single sample-to-frame conversion rule shared by
/// training and evaluation.
pub fn covered_frames(
    start_sample: usize,
    end_sample: usize,
    window_len: usize,
    hop: usize,
) -> Range<usize> {
    if hop == 0 || window_len == 0 || end_sample < start_sample + window_len {
        return 0..0;
    }
    let first = start_sample.div_ceil(hop);
    let last = (end_sample - window_len) / hop; // inclusive
    if first > last {
        0..0
    } else {
        first..last + 1
    }
}

/// Cut a clip into time-domain windows of `window_len` samples, consecutive
/// windows sharing `overlap` samples. Trailing samples that do not fill a
/// whole window are dropped.
pub fn frame_clip(
    clip: &AudioClip,
    window_len: usize,
    overlap: usize,
) -> Result<Vec<DVector<f64>>> {
    if window_len == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    if overlap >= window_len {
        return Err(Error::Config(format!(
            "overlap ({overlap}) must be smaller than the window length ({window_len})"
        )));
    }
    if clip.len() < window_len {
        return Err(Error::Input(format!(
            "clip has {} samples, shorter than one {window_len}-sample window",
            clip.len()
        )));
    }
    let hop = window_len - overlap;
    let count = (clip.len() - window_len) / hop + 1;
    let samples = clip.samples();
    Ok((0..count)
        .map(|t| DVector::from_row_slice(&samples[t * hop..t * hop + window_len]))
        .collect())
}

/// Orthonormal type-II DCT followed by an elementwise absolute value, with
/// the FFT plan built once and reused across frames.
///
/// The DCT is computed by the even-odd permutation trick: the frame is
/// reordered to `(x_0, x_2, ..., x_5, x_3, x_1)`, one complex FFT is taken,
/// and bin `k` is recovered as `Re(e^{-i pi k / 2N} V_k)` before orthonormal
/// scaling (`sqrt(1/N)` for bin 0, `sqrt(2/N)` elsewhere).
pub struct DctMagnitude {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl DctMagnitude {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("DCT length must be positive".into()));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(Self { len, fft })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // positive length by construction
    }

    pub fn transform(&self, frame: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.len;
        if frame.len() != n {
            return Err(Error::Dimension(format!(
                "frame has dimension {}, transform expects {n}",
                frame.len()
            )));
        }
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("frame contains non-finite samples".into()));
        }

        let mut buf: Vec<Complex<f64>> = Vec::with_capacity(n);
        for i in (0..n).step_by(2) {
            buf.push(Complex::new(frame[i], 0.0));
        }
        for i in (1..n).step_by(2).rev() {
            buf.push(Complex::new(frame[i], 0.0));
        }
        self.fft.process(&mut buf);

        let scale0 = (1.0 / n as f64).sqrt();
        let scale = (2.0 / n as f64).sqrt();
        Ok(DVector::from_fn(n, |k, _| {
            let rot = Complex::from_polar(1.0, -PI * k as f64 / (2.0 * n as f64));
            let value = (rot * buf[k]).re;
            (if k == 0 { scale0 } else { scale } * value).abs()
        }))
    }
}

/// One-shot DCT magnitude of a single frame. Plans a fresh FFT per call;
/// prefer [`DctMagnitude`] when transforming many frames of one length.
pub fn dct_magnitude(frame: &DVector<f64>) -> Result<DVector<f64>> {
    DctMagnitude::new(frame.len())?.transform(frame)
}

/// Full preprocessing of a clip: framing followed by the per-frame DCT
/// magnitude, yielding the observation sequence for the filter.
pub fn preprocess(clip: &AudioClip, window_len: usize, overlap: usize) -> Result<FrameSeries> {
    let time_frames = frame_clip(clip, window_len, overlap)?;
    let dct = DctMagnitude::new(window_len)?;
    let frames = time_frames
        .iter()
        .map(|f| dct.transform(f))
        .collect::<Result<Vec<_>>>()?;
    FrameSeries::new(frames, window_len, overlap)
}

/// Read a PCM 16-bit WAV file into a mono clip, samples scaled by `1/32768`.
/// Stereo files are averaged down to mono with a warning; other layouts and
/// encodings are rejected.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Input(format!("cannot read WAV {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Input(format!(
            "unsupported WAV encoding in {}: expected PCM 16-bit integer, got {} {}-bit",
            path.display(),
            match spec.sample_format {
                hound::SampleFormat::Int => "integer",
                hound::SampleFormat::Float => "float",
            },
            spec.bits_per_sample
        )));
    }
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::Input(format!(
            "unsupported channel count in {}: {}",
            path.display(),
            spec.channels
        )));
    }

    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Input(format!("malformed WAV data in {}: {e}", path.display())))?;
    let samples: Vec<f64> = if spec.channels == 2 {
        log::warn!("{}: averaging stereo WAV down to mono", path.display());
        raw.chunks_exact(2)
            .map(|lr| (lr[0] as f64 + lr[1] as f64) / 2.0 / 32768.0)
            .collect()
    } else {
        raw.iter().map(|&s| s as f64 / 32768.0).collect()
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Export a frame series as CSV: a `frame,dct_1,...,dct_w` header, then one
/// row per frame with its index and one column per DCT bin.
pub fn write_features_csv<W: Write>(series: &FrameSeries, mut out: W) -> Result<()> {
    let header: Vec<String> = std::iter::once("frame".to_string())
        .chain((1..=series.dim()).map(|i| format!("dct_{i}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (t, frame) in series.frames().iter().enumerate() {
        let mut row = t.to_string();
        for v in frame.iter() {
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}
