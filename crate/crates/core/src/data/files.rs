//! Feature (`RLF1`), label (`RLL1`) and manifest files.
//!
//! ```text
//! RLF1: "RLF1" u32 n_frames u32 dim  n_frames·dim × f32   (row-major)
//! RLL1: "RLL1" u32 n_frames          n_frames × u32
//! manifest: id \t feat_path \t label_path \t speaker_path|-
//! ```
//!
//! Integers and floats are little-endian. Features are stored as f32 and
//! widened on load. Relative manifest paths resolve against the manifest's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::Utterance;
use crate::binio::{put_f32s, put_u32, to_u32, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

fn feat_to_bytes(m: &Matrix) -> Result<Vec<u8>> {
    let narrowed: Vec<f32> = m.as_slice().iter().map(|&v| v as f32).collect();
    if let Some(i) = narrowed.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "feature element {i} ({}) is not representable as a finite f32",
            m.as_slice()[i]
        )));
    }
    let mut out = Vec::with_capacity(12 + 4 * narrowed.len());
    out.extend_from_slice(b"RLF1");
    put_u32(&mut out, to_u32(m.rows(), "n_frames")?);
    put_u32(&mut out, to_u32(m.cols(), "dim")?);
    put_f32s(&mut out, &narrowed);
    Ok(out)
}

fn feat_from_bytes(bytes: &[u8]) -> Result<Matrix> {
    let mut rd = Reader::new(bytes);
    rd.magic(b"RLF1")?;
    let n_frames = rd.u32("n_frames")? as usize;
    let dim = rd.u32("dim")? as usize;
    let n = n_frames
        .checked_mul(dim)
        .ok_or_else(|| Error::format(4, "header size overflows"))?;
    let data = rd.f32s(n, "feature data")?;
    rd.finish()?;
    Matrix::from_vec(n_frames, dim, data.into_iter().map(f64::from).collect())
}

/// Writes an `RLF1` file. Values are narrowed to f32.
pub fn write_feat(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_atomic(path.as_ref(), &feat_to_bytes(m)?)
}

pub fn read_feat(path: impl AsRef<Path>) -> Result<Matrix> {
    feat_from_bytes(&fs::read(path)?)
}

fn labels_to_bytes(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * labels.len());
    out.extend_from_slice(b"RLL1");
    put_u32(&mut out, to_u32(labels.len(), "n_frames")?);
    for &l in labels {
        put_u32(&mut out, to_u32(l, "label")?);
    }
    Ok(out)
}

fn labels_from_bytes(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut rd = Reader::new(bytes);
    rd.magic(b"RLL1")?;
    let n = rd.u32("n_frames")? as usize;
    let mut out = Vec::with_capacity(n.min(bytes.len() / 4));
    for _ in 0..n {
        out.push(rd.u32("label")? as usize);
    }
    rd.finish()?;
    Ok(out)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    write_atomic(path.as_ref(), &labels_to_bytes(labels)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    labels_from_bytes(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub feat: PathBuf,
    pub labels: PathBuf,
    pub speaker: Option<PathBuf>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    let mut offset = 0;
    for (lineno, line) in text.lines().enumerate() {
        let start = offset;
        offset += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(
                start,
                format!("manifest line {}: expected 4 tab-separated fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            feat: resolve(fields[1]),
            labels: resolve(fields[2]),
            speaker: (fields[3] != "-").then(|| resolve(fields[3])),
        });
    }
    Ok(entries)
}

/// Writes entries verbatim (paths as given, usually relative).
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        let speaker = e
            .speaker
            .as_ref()
            .map_or_else(|| "-".to_string(), |p| p.display().to_string());
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.id,
            e.feat.display(),
            e.labels.display(),
            speaker
        ));
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Reads every utterance named in a manifest.
pub fn load_corpus(manifest: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let frames = read_feat(&e.feat).map_err(|err| err.in_utterance(&e.id))?;
            let labels = read_labels(&e.labels).map_err(|err| err.in_utterance(&e.id))?;
            if labels.len() != frames.rows() {
                return Err(Error::Contract(format!(
                    "{} labels for {} frames",
                    labels.len(),
                    frames.rows()
                ))
                .in_utterance(&e.id));
            }
            let speaker_vec = match &e.speaker {
                None => None,
                Some(p) => {
                    let m = read_feat(p).map_err(|err| err.in_utterance(&e.id))?;
                    if m.rows() != 1 {
                        return Err(Error::format(4, format!("speaker file has {} frames, expected 1", m.rows()))
                            .in_utterance(&e.id));
                    }
                    Some(Vector::from(m.row(0)))
                }
            };
            Ok(Utterance {
                id: e.id,
                frames,
                labels,
                speaker_vec,
            })
        })
        .collect()
}

/// Writes a corpus under `dir` as `feats/<id>.rlf`, `labels/<id>.rll`,
/// `speakers/<speaker>.rlf` plus `manifest.txt`. `speaker_of[i]` names the
/// speaker file for utterance `i`; utterances without a speaker vector get
/// `-`. Returns the manifest path.
pub fn write_corpus(dir: impl AsRef<Path>, utts: &[Utterance], speaker_of: &[Option<String>]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["feats", "labels", "speakers"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut entries = Vec::with_capacity(utts.len());
    for (u, spk) in utts.iter().zip(speaker_of) {
        let feat = PathBuf::from("feats").join(format!("{}.rlf", u.id));
        let labels = PathBuf::from("labels").join(format!("{}.rll", u.id));
        write_feat(dir.join(&feat), &u.frames)?;
        write_labels(dir.join(&labels), &u.labels)?;
        let speaker = match (&u.speaker_vec, spk) {
            (Some(v), Some(name)) => {
                let p = PathBuf::from("speakers").join(format!("{name}.rlf"));
                let full = dir.join(&p);
                if !full.exists() {
                    write_feat(&full, &Matrix::from_vec(1, v.len(), v.to_vec())?)?;
                }
                Some(p)
            }
            _ => None,
        };
        entries.push(ManifestEntry {
            id: u.id.clone(),
            feat,
            labels,
            speaker,
        });
    }
    let manifest = dir.join("manifest.txt");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
