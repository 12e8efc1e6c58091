//! Deterministic in-process backends.
//!
//! - [`ScriptedSampler`]: replays per-image rounds of candidate sentences.
//! - [`TableDetector`]: answers presence from an `(image, label)` table,
//!   defaulting to absent.
//! - [`SyntheticCaptioner`]: seeded caption generator whose hallucination
//!   rate grows with sentence position and with hallucinated context, and
//!   which always offers at least one clean candidate per round.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::protocol::{
    BackendError, Candidate, DetectionQuery, DetectionResult, Detector, Sampler, SamplerRequest, SamplerResponse,
    EOS_MARKER,
};
use crate::rng::{fnv1a, SplitMix64};
use crate::segmenter::{self, is_terminal_punct};

/// What a scripted round does when asked for more candidates than it holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overflow {
    /// Repeat the round's entries in order.
    #[default]
    Cycle,
    /// Return the entries followed by an end-of-sequence marker.
    Truncate,
}

/// One scripted candidate. In script files an entry is either a plain string
/// or a `{"text","is_eos","logprob"}` object. The literal `"</s>"` is a bare
/// end-of-sequence; a trailing `"</s>"` marks the text as the caption's last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScriptEntry")]
pub struct ScriptedCandidate {
    pub text: String,
    pub is_eos: bool,
    pub logprob: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    Text(String),
    Full {
        text: String,
        #[serde(default)]
        is_eos: bool,
        #[serde(default)]
        logprob: Option<f64>,
    },
}

impl From<ScriptEntry> for ScriptedCandidate {
    fn from(e: ScriptEntry) -> Self {
        match e {
            ScriptEntry::Text(t) => ScriptedCandidate::from(t.as_str()),
            ScriptEntry::Full { text, is_eos, logprob } => {
                let mut c = ScriptedCandidate::from(text.as_str());
                c.is_eos |= is_eos;
                c.logprob = logprob;
                c
            }
        }
    }
}

impl From<&str> for ScriptedCandidate {
    fn from(s: &str) -> Self {
        let trimmed = s.trim_end();
        match trimmed.strip_suffix(EOS_MARKER) {
            Some(rest) => Self { text: rest.trim_end().to_string(), is_eos: true, logprob: None },
            None => Self { text: s.to_string(), is_eos: false, logprob: None },
        }
    }
}

/// Script file contents for [`ScriptedSampler`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerScript {
    #[serde(default = "default_sampler_id")]
    pub model_id: String,
    #[serde(default)]
    pub overflow: Overflow,
    /// Image ref to its rounds; round `k` answers the `k`-th call for that image.
    pub images: BTreeMap<String, Vec<Vec<ScriptedCandidate>>>,
}

fn default_sampler_id() -> String {
    "scripted-sampler".to_string()
}

#[derive(Debug, Clone)]
pub struct ScriptedSampler {
    script: SamplerScript,
    calls: BTreeMap<String, usize>,
}

impl ScriptedSampler {
    pub fn new(script: SamplerScript) -> Self {
        Self { script, calls: BTreeMap::new() }
    }

    /// Convenience constructor from plain strings.
    pub fn from_rounds<'a>(images: impl IntoIterator<Item = (&'a str, Vec<Vec<&'a str>>)>) -> Self {
        let images = images
            .into_iter()
            .map(|(img, rounds)| {
                let rounds = rounds.into_iter().map(|r| r.into_iter().map(ScriptedCandidate::from).collect()).collect();
                (img.to_string(), rounds)
            })
            .collect();
        Self::new(SamplerScript { model_id: default_sampler_id(), overflow: Overflow::Cycle, images })
    }

    pub fn with_overflow(mut self, overflow: Overflow) -> Self {
        self.script.overflow = overflow;
        self
    }

    /// Forgets all call counters.
    pub fn reset(&mut self) {
        self.calls.clear();
    }

    pub fn calls(&self, image_ref: &str) -> usize {
        self.calls.get(image_ref).copied().unwrap_or(0)
    }
}

impl Sampler for ScriptedSampler {
    fn sample(&mut self, req: &SamplerRequest) -> Result<SamplerResponse, BackendError> {
        req.validate()?;
        let rounds =
            self.script.images.get(&req.image_ref).ok_or_else(|| BackendError::UnknownImage(req.image_ref.clone()))?;
        let k = self.calls.entry(req.image_ref.clone()).or_insert(0);
        let round = rounds.get(*k);
        *k += 1;
        let model_id = self.script.model_id.clone();
        let round = match round {
            Some(r) if !r.is_empty() => r,
            _ => return Ok(SamplerResponse { candidates: alloc::vec![Candidate::eos()], model_id }),
        };
        let mut candidates = Vec::with_capacity(req.n);
        for i in 0..req.n {
            if i >= round.len() && self.script.overflow == Overflow::Truncate {
                candidates.push(Candidate::eos());
                break;
            }
            let s = &round[i % round.len()];
            candidates.push(render(s, req.stop_at_sentence_end));
        }
        Ok(SamplerResponse { candidates, model_id })
    }
}

fn render(s: &ScriptedCandidate, one_sentence: bool) -> Candidate {
    if s.text.trim().is_empty() {
        return Candidate { logprob: s.logprob, ..Candidate::eos() };
    }
    if !one_sentence {
        return Candidate { text: s.text.clone(), is_eos: s.is_eos, logprob: s.logprob };
    }
    let spans = segmenter::segment(&s.text);
    let first = spans.first().map_or(s.text.as_str(), |sp| sp.text.as_str());
    // An unterminated fragment can only be where the model stopped.
    let open = !first.trim_end().ends_with(|c: char| is_terminal_punct(c) || matches!(c, '"' | '\'' | ')'));
    Candidate { text: first.to_string(), is_eos: s.is_eos || open, logprob: s.logprob }
}

/// Detector table file contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorTable {
    pub detector_id: String,
    /// Image ref to label presence. Labels not listed are absent.
    pub images: BTreeMap<String, BTreeMap<String, bool>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub confidence: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone)]
pub struct TableDetector {
    table: DetectorTable,
}

impl TableDetector {
    pub fn new(table: DetectorTable) -> Self {
        Self { table }
    }

    /// Detector that reports exactly the listed objects as present.
    pub fn from_present<'a, I, L>(detector_id: &str, images: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, L)>,
        L: IntoIterator<Item = &'a str>,
    {
        let images = images
            .into_iter()
            .map(|(img, labels)| (img.to_string(), labels.into_iter().map(|l| (l.to_string(), true)).collect()))
            .collect();
        Self::new(DetectorTable { detector_id: detector_id.to_string(), images, confidence: BTreeMap::new() })
    }

    pub fn table(&self) -> &DetectorTable {
        &self.table
    }
}

impl Detector for TableDetector {
    fn detect(&self, q: &DetectionQuery) -> Result<DetectionResult, BackendError> {
        q.validate()?;
        let img = self.table.images.get(&q.image_ref).ok_or_else(|| BackendError::UnknownImage(q.image_ref.clone()))?;
        let conf = self.table.confidence.get(&q.image_ref);
        let mut present = BTreeMap::new();
        let mut confidence = BTreeMap::new();
        for l in &q.labels {
            present.insert(l.clone(), img.get(l).copied().unwrap_or(false));
            if let Some(c) = conf.and_then(|c| c.get(l)) {
                confidence.insert(l.clone(), *c);
            }
        }
        Ok(DetectionResult { present, detector_id: self.table.detector_id.clone(), confidence })
    }
}

/// Concrete nouns the synthetic captioner draws from. Each is its own lemma,
/// sits in a non-excluded lexicographer category and parses as a noun.
pub const SYNTHETIC_VOCAB: &[&str] = &[
    "cat", "dog", "chair", "table", "cup", "bottle", "car", "bus", "tree", "bench", "horse", "bird", "lamp", "plate",
    "bicycle", "umbrella", "clock", "sofa", "bag", "laptop", "boat", "truck", "pizza", "vase", "window", "door",
    "kite", "fence",
];

/// Ground truth of one synthetic image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticImage {
    pub present: Vec<String>,
    pub absent: Vec<String>,
    /// Caption length in sentences; the sampler signals EOS afterwards.
    pub sentences: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Probability that a candidate mentions an absent object at sentence 0.
    pub base_rate: f64,
    /// Added per sentence position.
    pub position_slope: f64,
    /// Extra probability per hallucinated object already in the context.
    pub propagation: f64,
    pub max_rate: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self { base_rate: 0.1, position_slope: 0.12, propagation: 0.15, max_rate: 0.9 }
    }
}

/// Seeded caption generator. Every response is a pure function of
/// `(image truth, context, seed)`.
#[derive(Debug, Clone)]
pub struct SyntheticCaptioner {
    pub model_id: String,
    pub params: SyntheticParams,
    images: BTreeMap<String, SyntheticImage>,
}

impl SyntheticCaptioner {
    pub fn new(images: BTreeMap<String, SyntheticImage>, params: SyntheticParams) -> Self {
        Self { model_id: "synthetic-captioner".to_string(), params, images }
    }

    /// `count` images named `img0000`...; each holds 3 to 6 present objects
    /// and a caption length of 5 to 8 sentences.
    pub fn corpus(count: usize, seed: u64, params: SyntheticParams) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut images = BTreeMap::new();
        for i in 0..count {
            let mut pool: Vec<&str> = SYNTHETIC_VOCAB.to_vec();
            // Fisher-Yates on the vocabulary, then split.
            for j in (1..pool.len()).rev() {
                pool.swap(j, rng.below(j + 1));
            }
            let k = 3 + rng.below(4);
            let mut present: Vec<String> = pool[..k].iter().map(|s| s.to_string()).collect();
            let mut absent: Vec<String> = pool[k..].iter().map(|s| s.to_string()).collect();
            present.sort();
            absent.sort();
            images.insert(format!("img{i:04}"), SyntheticImage { present, absent, sentences: 5 + rng.below(4) });
        }
        Self::new(images, params)
    }

    pub fn images(&self) -> &BTreeMap<String, SyntheticImage> {
        &self.images
    }

    /// Oracle detector for this corpus: reports exactly the true objects.
    pub fn oracle_detector(&self, detector_id: &str) -> TableDetector {
        TableDetector::from_present(
            detector_id,
            self.images.iter().map(|(k, v)| (k.as_str(), v.present.iter().map(String::as_str))),
        )
    }

    fn hallucination_rate(&self, img: &SyntheticImage, context: &str) -> f64 {
        let position = segmenter::segment(context).len() as f64;
        let absent: BTreeSet<&str> = img.absent.iter().map(String::as_str).collect();
        let carried = context.split(|c: char| !c.is_alphanumeric()).filter(|w| absent.contains(w)).count() as f64;
        let p = &self.params;
        (p.base_rate + p.position_slope * position + p.propagation * carried).min(p.max_rate)
    }
}

fn sentence_for(a: &str, b: Option<&str>) -> String {
    match b {
        Some(b) => format!("A {a} sits near a {b}."),
        None => format!("There is a {a}."),
    }
}

impl Sampler for SyntheticCaptioner {
    fn sample(&mut self, req: &SamplerRequest) -> Result<SamplerResponse, BackendError> {
        req.validate()?;
        let img = self.images.get(&req.image_ref).ok_or_else(|| BackendError::UnknownImage(req.image_ref.clone()))?;
        let model_id = self.model_id.clone();
        if segmenter::segment(&req.context).len() >= img.sentences {
            return Ok(SamplerResponse { candidates: alloc::vec![Candidate::eos()], model_id });
        }
        let rate = self.hallucination_rate(img, &req.context);
        let key = format!("{}\u{0}{}\u{0}{}", req.image_ref, req.prompt, req.context);
        let mut rng = SplitMix64::new(fnv1a(key.as_bytes()) ^ req.seed.unwrap_or(0));
        let mut candidates = Vec::with_capacity(req.n);
        let mut any_clean = false;
        for i in 0..req.n {
            let force_clean = i + 1 == req.n && !any_clean;
            let hallucinate = !force_clean && rng.next_f64() < rate;
            let a = &img.present[rng.below(img.present.len())];
            let second = rng.next_f64() < 0.6;
            let b = if hallucinate {
                Some(&img.absent[rng.below(img.absent.len())])
            } else if second {
                Some(&img.present[rng.below(img.present.len())]).filter(|b| *b != a)
            } else {
                None
            };
            any_clean |= !hallucinate;
            let logprob = -(1.0 + rng.next_f64() * 4.0);
            candidates.push(Candidate {
                text: sentence_for(a, b.map(String::as_str)),
                is_eos: false,
                logprob: Some(logprob),
            });
        }
        Ok(SamplerResponse { candidates, model_id })
    }
}
