//! Preference dataset files, run manifests, the coherent/agnostic mixing
//! filter and trainer export.
//!
//! A dataset is UTF-8 JSON lines, one [`DatasetRecord`] per line, with
//! `schema_version` as the first key. Records carry no timestamps, so equal
//! pair lists always serialize to equal bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sentinel_core::pipeline::{PositiveKind, PreferencePair, Provenance};
use sentinel_core::validator::Verdict;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema_version {found:?}, expected {SCHEMA_VERSION}")]
    SchemaVersion { line: usize, found: Option<serde_json::Value> },
    #[error("line {line}: {reason}")]
    Invariant { line: usize, reason: String },
    #[error("cannot mix {fraction} coherent from {coherent} coherent and {agnostic} agnostic records")]
    InfeasibleMix { fraction: f64, coherent: usize, agnostic: usize },
    #[error("coherent fraction {0} is outside [0, 1]")]
    BadFraction(f64),
}

impl DatasetError {
    /// 1-based line of the offending record, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Parse { line, .. } | Self::SchemaVersion { line, .. } | Self::Invariant { line, .. } => Some(*line),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// One preference pair flattened for line storage. Field order is the
/// serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub image_ref: String,
    pub prompt: String,
    pub context: String,
    pub context_sentences: Vec<String>,
    pub y_w: String,
    pub y_l: String,
    pub positive_kind: PositiveKind,
    pub iteration_index: usize,
    pub y_w_verdicts: BTreeMap<String, Verdict>,
    pub y_l_verdicts: BTreeMap<String, Verdict>,
    pub sampler_model_id: String,
    pub detector_ids: Vec<String>,
    pub seed: u64,
}

impl From<&PreferencePair> for DatasetRecord {
    fn from(p: &PreferencePair) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            image_ref: p.image_ref.clone(),
            prompt: p.prompt.clone(),
            context: p.context.clone(),
            context_sentences: p.context_sentences.clone(),
            y_w: p.y_w.clone(),
            y_l: p.y_l.clone(),
            positive_kind: p.positive_kind,
            iteration_index: p.iteration_index,
            y_w_verdicts: p.y_w_verdicts.clone(),
            y_l_verdicts: p.y_l_verdicts.clone(),
            sampler_model_id: p.provenance.sampler_model_id.clone(),
            detector_ids: p.provenance.detector_ids.clone(),
            seed: p.provenance.seed,
        }
    }
}

impl From<DatasetRecord> for PreferencePair {
    fn from(r: DatasetRecord) -> Self {
        Self {
            image_ref: r.image_ref,
            prompt: r.prompt,
            context: r.context,
            context_sentences: r.context_sentences,
            y_w: r.y_w,
            y_l: r.y_l,
            positive_kind: r.positive_kind,
            iteration_index: r.iteration_index,
            y_w_verdicts: r.y_w_verdicts,
            y_l_verdicts: r.y_l_verdicts,
            provenance: Provenance { sampler_model_id: r.sampler_model_id, detector_ids: r.detector_ids, seed: r.seed },
        }
    }
}

/// Counts derivable from the records themselves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub pairs: usize,
    pub coherent: usize,
    pub agnostic: usize,
}

impl PairCounts {
    pub fn of(pairs: &[PreferencePair]) -> Self {
        let coherent = pairs.iter().filter(|p| p.positive_kind == PositiveKind::Coherent).count();
        Self { pairs: pairs.len(), coherent, agnostic: pairs.len() - coherent }
    }
}

pub fn serialize_record(p: &PreferencePair) -> String {
    serde_json::to_string(&DatasetRecord::from(p)).expect("records serialize")
}

pub fn write_pairs<W: Write>(pairs: &[PreferencePair], mut w: W) -> io::Result<PairCounts> {
    for p in pairs {
        w.write_all(serialize_record(p).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(PairCounts::of(pairs))
}

pub fn write_dataset(pairs: &[PreferencePair], path: &Path) -> Result<PairCounts, DatasetError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_pairs(pairs, BufWriter::new(f)).map_err(io_err(path))
}

/// Parses one line, checking the schema version before anything else and
/// the pair invariants after.
pub fn parse_record(line: &str, lineno: usize) -> Result<PreferencePair, DatasetError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| DatasetError::Parse { line: lineno, message: e.to_string() })?;
    let version = value.get("schema_version");
    if version.and_then(serde_json::Value::as_u64) != Some(u64::from(SCHEMA_VERSION)) {
        return Err(DatasetError::SchemaVersion { line: lineno, found: version.cloned() });
    }
    let rec: DatasetRecord =
        serde_json::from_value(value).map_err(|e| DatasetError::Parse { line: lineno, message: e.to_string() })?;
    let pair = PreferencePair::from(rec);
    pair.check().map_err(|reason| DatasetError::Invariant { line: lineno, reason })?;
    Ok(pair)
}

pub fn read_pairs<R: BufRead>(r: R, path: &Path) -> Result<Vec<PreferencePair>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<PreferencePair>, DatasetError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_pairs(BufReader::new(f), path)
}

/// Orders pairs by `(image_ref, iteration_index)`.
pub fn sort_pairs(pairs: &mut [PreferencePair]) {
    pairs.sort_by(|a, b| (&a.image_ref, a.iteration_index).cmp(&(&b.image_ref, b.iteration_index)));
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub images_processed: usize,
    pub images_skipped: usize,
    pub pairs: usize,
    pub coherent: usize,
    pub agnostic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    /// Pipeline settings as run.
    pub config: serde_json::Value,
    pub backends: serde_json::Value,
    pub seed: u64,
    pub counts: RunCounts,
    /// Image ref to the reason it was skipped.
    pub skipped: BTreeMap<String, String>,
    pub wall_clock_ms: u128,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let f = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, self).expect("manifest serializes");
        w.write_all(b"\n").and_then(|()| w.flush()).map_err(io_err(path))
    }

    /// Checks the manifest's pair counts against a dataset.
    pub fn consistent_with(&self, pairs: &[PreferencePair]) -> bool {
        let c = PairCounts::of(pairs);
        (self.counts.pairs, self.counts.coherent, self.counts.agnostic) == (c.pairs, c.coherent, c.agnostic)
    }
}

/// Manifest path written next to a dataset.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Largest `(coherent, agnostic)` split with `coherent = round(f * total)`
/// that the available records allow, aiming for `max(available)` records.
pub fn mix_sizes(fraction: f64, coherent: usize, agnostic: usize) -> Result<(usize, usize), DatasetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::BadFraction(fraction));
    }
    let infeasible = || DatasetError::InfeasibleMix { fraction, coherent, agnostic };
    let mixed = fraction > 0.0 && fraction < 1.0;
    if mixed && (coherent == 0 || agnostic == 0) {
        return Err(infeasible());
    }
    let want = coherent.max(agnostic);
    for total in (1..=want).rev() {
        let c = (fraction * total as f64).round() as usize;
        let a = total - c;
        if c <= coherent && a <= agnostic {
            return Ok((c, a));
        }
    }
    Err(infeasible())
}

/// Seeded subsample with the requested share of context-coherent
/// positives. Surviving records keep their original order.
pub fn mix_filter(pairs: &[PreferencePair], fraction: f64, seed: u64) -> Result<Vec<PreferencePair>, DatasetError> {
    let (mut coh, mut agn): (Vec<usize>, Vec<usize>) =
        (0..pairs.len()).partition(|&i| pairs[i].positive_kind == PositiveKind::Coherent);
    let (nc, na) = mix_sizes(fraction, coh.len(), agn.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coh.shuffle(&mut rng);
    agn.shuffle(&mut rng);
    let mut keep: Vec<usize> = coh[..nc].iter().chain(&agn[..na]).copied().collect();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| pairs[i].clone()).collect())
}

/// Conversational trainer layout: the prompt carries the question and the
/// accepted context, the responses are the two sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerRecord {
    pub image: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

impl From<&PreferencePair> for TrainerRecord {
    fn from(p: &PreferencePair) -> Self {
        let prompt = if p.context.is_empty() { p.prompt.clone() } else { format!("{}\n{}", p.prompt, p.context) };
        Self { image: p.image_ref.clone(), prompt, chosen: p.y_w.clone(), rejected: p.y_l.clone() }
    }
}

pub fn export_trainer<W: Write>(pairs: &[PreferencePair], mut w: W) -> io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, &TrainerRecord::from(p))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
