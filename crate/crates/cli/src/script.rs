//! Clip script files: the declarative input of `hlds synth`.
//!
//! A script is line-oriented. Header lines set clip-wide values; event lines
//! append notes and silences in order. `#` starts a comment.
//!
//! ```text
//! sample_rate: 8000
//! noise_sigma: 0.05
//! seed: 17
//!
//! silence 0.4
//! note A4 0.9                 # named pitch, duration in seconds
//! note 630 0.9 harmonics=3 decay=0.5 amp=0.5 label=mid
//! silence 0.4
//! ```
//!
//! A note's pitch is either a name (`E5`, `F#4`, `Bb3`) or a frequency in
//! Hz. Unless overridden with `label=`, the pitch token itself becomes the
//! segment label.

use std::fs;
use std::path::Path;

use hlds_core::synth::{note_frequency, ClipEvent, ClipScript, NoteSpec, DEFAULT_SAMPLE_RATE};
use hlds_core::{Error, Result};

const DEFAULT_HARMONICS: usize = 3;
const DEFAULT_DECAY: f64 = 0.5;
const DEFAULT_AMPLITUDE: f64 = 0.5;

pub fn read_script(path: impl AsRef<Path>) -> Result<ClipScript> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read script {}: {e}", path.display())))?;
    parse_script(&text).map_err(|e| match e {
        Error::Parse(message) => Error::Parse(format!("script {}: {message}", path.display())),
        other => other,
    })
}

pub fn parse_script(text: &str) -> Result<ClipScript> {
    let mut sample_rate = DEFAULT_SAMPLE_RATE;
    let mut noise_sigma = 0.0;
    let mut seed = 0u64;
    let mut events = Vec::new();

    for (number, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let located = |message: String| Error::Parse(format!("line {}: {message}", number + 1));

        if let Some((key, value)) = line.split_once(':') {
            let (key, value) = (key.trim(), value.trim());
            match key {
                "sample_rate" => {
                    sample_rate = value
                        .parse()
                        .map_err(|_| located(format!("bad sample rate '{value}'")))?;
                }
                "noise_sigma" => {
                    noise_sigma = value
                        .parse()
                        .map_err(|_| located(format!("bad noise sigma '{value}'")))?;
                }
                "seed" => {
                    seed = value.parse().map_err(|_| located(format!("bad seed '{value}'")))?;
                }
                other => return Err(located(format!("unknown script key '{other}'"))),
            }
            continue;
        }

        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "silence" => {
                if tokens.len() != 2 {
                    return Err(located("silence takes one duration argument".into()));
                }
                let duration: f64 = tokens[1]
                    .parse()
                    .map_err(|_| located(format!("bad duration '{}'", tokens[1])))?;
                events.push(ClipEvent::silence(duration)?);
            }
            "note" => {
                if tokens.len() < 3 {
                    return Err(located(
                        "note takes a pitch and a duration, then optional key=value settings"
                            .into(),
                    ));
                }
                events.push(parse_note(&tokens[1..]).map_err(|e| match e {
                    Error::Parse(message) => located(message),
                    other => other,
                })?);
            }
            other => {
                return Err(located(format!(
                    "expected 'note', 'silence', or 'key: value', got '{other}'"
                )))
            }
        }
    }

    ClipScript::new(sample_rate, events, noise_sigma, seed)
}

fn parse_note(tokens: &[&str]) -> Result<ClipEvent> {
    let pitch_token = tokens[0];
    let fundamental = match pitch_token.parse::<f64>() {
        Ok(hz) => hz,
        Err(_) => note_frequency(pitch_token)
            .map_err(|_| Error::Parse(format!("bad pitch '{pitch_token}': not a note name or a frequency in Hz")))?,
    };
    let duration: f64 = tokens[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad duration '{}'", tokens[1])))?;

    let mut harmonics = DEFAULT_HARMONICS;
    let mut decay = DEFAULT_DECAY;
    let mut amplitude = DEFAULT_AMPLITUDE;
    let mut label = pitch_token.to_string();
    for option in &tokens[2..] {
        let (key, value) = option.split_once('=').ok_or_else(|| {
            Error::Parse(format!("bad note setting '{option}': expected key=value"))
        })?;
        let bad = |k: &str| Error::Parse(format!("bad value '{value}' for note setting '{k}'"));
        match key {
            "harmonics" => harmonics = value.parse().map_err(|_| bad(key))?,
            "decay" => decay = value.parse().map_err(|_| bad(key))?,
            "amp" => amplitude = value.parse().map_err(|_| bad(key))?,
            "label" => label = value.to_string(),
            other => return Err(Error::Parse(format!("unknown note setting '{other}'"))),
        }
    }

    let note = NoteSpec::new(fundamental, harmonics, decay, duration, amplitude)?;
    ClipEvent::note(label, note)
}
