//! Utterances, the input pipeline and corpus files.
//!
//! Network input per frame is the frame spliced with its `±k` neighbours
//! (edge frames replicated), followed by the utterance's speaker vector:
//! with 40-dim features, `k = 2` and a 100-dim speaker vector that is
//! `5·40 + 100 = 300` dimensions.

mod files;
mod synthetic;

pub use files::{
    load_corpus, read_feat, read_labels, read_manifest, write_corpus, write_feat, write_labels, write_manifest,
    ManifestEntry,
};
pub use synthetic::{gen_synthetic, label_histogram, SyntheticConfig, SyntheticCorpus};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T × d`, one row per frame.
    pub frames: Matrix,
    pub labels: Vec<usize>,
    pub speaker_vec: Option<Vector>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn validate(&self, n_out: usize) -> Result<()> {
        if self.frames.rows() == 0 {
            return Err(Error::Contract(format!("utterance {} has no frames", self.id)));
        }
        if self.labels.len() != self.frames.rows() {
            return Err(Error::Contract(format!(
                "utterance {}: {} labels for {} frames",
                self.id,
                self.labels.len(),
                self.frames.rows()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= n_out) {
            return Err(Error::Contract(format!(
                "utterance {}: label {bad} >= n_out {n_out}",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpliceConfig {
    /// Frames of context on each side.
    pub context: usize,
    /// Appended speaker-vector length, 0 for none.
    pub speaker_dim: usize,
}

impl SpliceConfig {
    pub fn output_dim(&self, raw_dim: usize) -> usize {
        (2 * self.context + 1) * raw_dim + self.speaker_dim
    }
}

/// Row `t` becomes `frame[t-k] ‖ … ‖ frame[t+k]`, indices clamped into range.
pub fn splice(frames: &Matrix, context: usize) -> Matrix {
    let (n_t, d) = frames.shape();
    let width = (2 * context + 1) * d;
    let mut out = Matrix::zeros(n_t, width);
    for t in 0..n_t {
        let row = out.row_mut(t);
        for (slot, offset) in (0..=2 * context).enumerate() {
            let src = (t + offset).saturating_sub(context).min(n_t.saturating_sub(1));
            row[slot * d..(slot + 1) * d].copy_from_slice(frames.row(src));
        }
    }
    out
}

/// Appends `svec` to every row.
pub fn append_speaker(frames: &Matrix, svec: &[f64]) -> Result<Matrix> {
    if svec.is_empty() {
        return Err(Error::dim("append_speaker", "speaker vector is empty"));
    }
    let (n_t, p) = frames.shape();
    let q = svec.len();
    let mut out = Matrix::zeros(n_t, p + q);
    for t in 0..n_t {
        let row = out.row_mut(t);
        row[..p].copy_from_slice(frames.row(t));
        row[p..].copy_from_slice(svec);
    }
    Ok(out)
}

/// Splices and appends the speaker vector, producing the network input.
/// The result carries no speaker vector of its own.
pub fn featurize(utt: &Utterance, cfg: &SpliceConfig) -> Result<Utterance> {
    let spliced = splice(&utt.frames, cfg.context);
    let frames = match (&utt.speaker_vec, cfg.speaker_dim) {
        (None, 0) => spliced,
        (Some(s), q) if s.len() == q => append_speaker(&spliced, s)?,
        (s, q) => {
            return Err(Error::dim(
                "featurize",
                format!(
                    "utterance {} has speaker vector of length {}, config expects {q}",
                    utt.id,
                    s.as_ref().map_or(0, |v| v.len())
                ),
            ))
        }
    };
    Ok(Utterance {
        id: utt.id.clone(),
        frames,
        labels: utt.labels.clone(),
        speaker_vec: None,
    })
}

pub fn featurize_all(utts: &[Utterance], cfg: &SpliceConfig) -> Result<Vec<Utterance>> {
    utts.iter().map(|u| featurize(u, cfg)).collect()
}
