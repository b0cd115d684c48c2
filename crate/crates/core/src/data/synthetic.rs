//! Teacher-labelled synthetic corpus.
//!
//! Frames are i.i.d. standard normal, each speaker owns one fixed random
//! vector, and labels are the argmax of a frozen depth-1 fast LSTM run over
//! the spliced input. Labels are therefore a learnable, temporally
//! dependent function of the inputs. Features and speaker vectors are
//! rounded to f32 so the teacher sees exactly what a feature file stores.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{featurize, write_corpus, SpliceConfig, Utterance};
use crate::cells::{CellDims, GateStyle, ResidualVariant};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix, Vector};
use crate::network::{forward, init_params, NetworkConfig, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_utts: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub raw_dim: usize,
    pub n_speakers: usize,
    pub speaker_dim: usize,
    pub n_out: usize,
    /// Splice context of the teacher's input.
    pub context: usize,
    pub teacher_cells: usize,
    pub teacher_recurrent: usize,
    /// Multiplier on the teacher's initial weights.
    pub teacher_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_utts: 1000,
            min_frames: 20,
            max_frames: 50,
            raw_dim: 4,
            n_speakers: 10,
            speaker_dim: 4,
            n_out: 8,
            context: 2,
            teacher_cells: 8,
            teacher_recurrent: 4,
            teacher_scale: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_utts == 0 {
            return bad("n_utts must be >= 1".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!(
                "frame range {}..={} is empty or starts at 0",
                self.min_frames, self.max_frames
            ));
        }
        if self.raw_dim == 0 || self.teacher_cells == 0 || self.teacher_recurrent == 0 {
            return bad("raw_dim, teacher_cells and teacher_recurrent must be >= 1".into());
        }
        if self.n_out < 2 {
            return bad(format!("n_out must be >= 2, got {}", self.n_out));
        }
        if self.speaker_dim > 0 && self.n_speakers == 0 {
            return bad("speaker_dim > 0 needs at least one speaker".into());
        }
        if !(self.teacher_scale.is_finite() && self.teacher_scale > 0.0) {
            return bad(format!("teacher_scale must be positive, got {}", self.teacher_scale));
        }
        Ok(())
    }

    pub fn splice(&self) -> SpliceConfig {
        SpliceConfig {
            context: self.context,
            speaker_dim: self.speaker_dim,
        }
    }

    pub fn teacher_config(&self) -> NetworkConfig {
        NetworkConfig {
            depth: 1,
            dims: CellDims {
                n_x: self.splice().output_dim(self.raw_dim),
                n_c: self.teacher_cells,
                n_r: self.teacher_recurrent,
                n_nr: 0,
            },
            style: GateStyle::Fast,
            variant: ResidualVariant::None,
            n_out: self.n_out,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SyntheticConfig,
    /// Raw (unspliced) utterances with their speaker vectors.
    pub utterances: Vec<Utterance>,
    /// Speaker name per utterance, `None` when speaker_dim is 0.
    pub speakers: Vec<Option<String>>,
    pub teacher_config: NetworkConfig,
    pub teacher: NetworkParams,
}

impl SyntheticCorpus {
    pub fn splice(&self) -> SpliceConfig {
        self.config.splice()
    }

    /// Network-ready utterances (spliced, speaker vector appended).
    pub fn featurized(&self) -> Result<Vec<Utterance>> {
        super::featurize_all(&self.utterances, &self.splice())
    }

    pub fn num_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::num_frames).sum()
    }

    /// Writes features, labels, speaker vectors and `manifest.txt` into
    /// `dir`. Returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        write_corpus(dir, &self.utterances, &self.speakers)
    }
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// Per-class frame counts.
pub fn label_histogram(utts: &[Utterance], n_out: usize) -> Vec<usize> {
    let mut h = vec![0; n_out];
    for u in utts {
        for &l in &u.labels {
            if l < n_out {
                h[l] += 1;
            }
        }
    }
    h
}

const MAX_TEACHER_ATTEMPTS: usize = 32;
const BALANCE_ROUNDS: usize = 20;
const MIN_CLASS_MASS: f64 = 0.02;
const MAX_CLASS_MASS: f64 = 0.98;

fn logits_for(teacher: &NetworkParams, config: &NetworkConfig, inputs: &[Utterance]) -> Result<Vec<Matrix>> {
    inputs.iter().map(|u| forward(teacher, config, &u.frames).map(|(l, _)| l)).collect()
}

fn labels_from(logits: &[Matrix], b_shift: &[f64]) -> Vec<Vec<usize>> {
    logits
        .iter()
        .map(|m| {
            (0..m.rows())
                .map(|t| {
                    let row: Vec<f64> = m.row(t).iter().zip(b_shift).map(|(a, b)| a + b).collect();
                    argmax(&row)
                })
                .collect()
        })
        .collect()
}

fn class_mass(labels: &[Vec<usize>], n_out: usize) -> Vec<f64> {
    let mut h = vec![0usize; n_out];
    let mut total = 0;
    for seq in labels {
        for &l in seq {
            h[l] += 1;
            total += 1;
        }
    }
    h.into_iter().map(|c| c as f64 / total as f64).collect()
}

/// Generates a corpus; deterministic per `config.seed`. Teachers whose
/// label distribution leaves any class outside `[2%, 98%]` of the frames
/// are rejected and redrawn.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = |rng: &mut ChaCha8Rng| f32_round(rng.sample::<f64, _>(StandardNormal));

    let speaker_vecs: Vec<Vector> = (0..config.n_speakers)
        .map(|_| Vector::from_vec((0..config.speaker_dim).map(|_| normal(&mut rng)).collect()))
        .collect();

    let mut utterances = Vec::with_capacity(config.n_utts);
    let mut speakers = Vec::with_capacity(config.n_utts);
    for i in 0..config.n_utts {
        let n_t = rng.random_range(config.min_frames..=config.max_frames);
        let frames = Matrix::from_fn(n_t, config.raw_dim, |_, _| normal(&mut rng));
        let (speaker_vec, name) = if config.speaker_dim > 0 {
            let s = rng.random_range(0..config.n_speakers);
            (Some(speaker_vecs[s].clone()), Some(format!("spk{s:03}")))
        } else {
            (None, None)
        };
        utterances.push(Utterance {
            id: format!("utt{i:05}"),
            frames,
            labels: vec![0; n_t],
            speaker_vec,
        });
        speakers.push(name);
    }

    let splice = config.splice();
    let inputs = utterances
        .iter()
        .map(|u| featurize(u, &splice))
        .collect::<Result<Vec<_>>>()?;
    let teacher_config = config.teacher_config();
    let n_out = config.n_out;

    for _ in 0..MAX_TEACHER_ATTEMPTS {
        let mut teacher = init_params(&teacher_config, rng.random());
        for t in teacher.tensors_mut() {
            for v in t.iter_mut() {
                *v *= config.teacher_scale;
            }
        }
        let logits = logits_for(&teacher, &teacher_config, &inputs)?;

        // centre each logit, then nudge the output bias toward uniform mass
        let n_frames: usize = logits.iter().map(Matrix::rows).sum();
        let mut shift = vec![0.0; n_out];
        for m in &logits {
            for t in 0..m.rows() {
                for (s, v) in shift.iter_mut().zip(m.row(t)) {
                    *s -= v / n_frames as f64;
                }
            }
        }
        for _ in 0..BALANCE_ROUNDS {
            let mass = class_mass(&labels_from(&logits, &shift), n_out);
            if mass.iter().all(|p| (1.5 * MIN_CLASS_MASS..=MAX_CLASS_MASS).contains(p)) {
                break;
            }
            for (s, p) in shift.iter_mut().zip(&mass) {
                *s -= 0.5 * (p.max(1e-3) * n_out as f64).ln();
            }
        }
        let labels = labels_from(&logits, &shift);
        let mass = class_mass(&labels, n_out);
        if mass.iter().any(|&p| !(MIN_CLASS_MASS..=MAX_CLASS_MASS).contains(&p)) {
            continue;
        }
        for (b, s) in teacher.b_out.iter_mut().zip(&shift) {
            *b += s;
        }
        // labels must be exactly what the stored teacher predicts
        let final_logits = logits_for(&teacher, &teacher_config, &inputs)?;
        let zero = vec![0.0; n_out];
        for (u, l) in utterances.iter_mut().zip(labels_from(&final_logits, &zero)) {
            u.labels = l;
        }
        return Ok(SyntheticCorpus {
            config: *config,
            utterances,
            speakers,
            teacher_config,
            teacher,
        });
    }
    Err(Error::Config(format!(
        "no teacher with every class in [{MIN_CLASS_MASS}, {MAX_CLASS_MASS}] after {MAX_TEACHER_ATTEMPTS} attempts"
    )))
}
