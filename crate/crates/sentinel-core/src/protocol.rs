//! Contracts for the three external capabilities the pipeline depends on.
//!
//! Payload types serialize to the exact wire schema shared by every
//! transport. Field names and shapes are part of the protocol and must not be
//! renamed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Marker a sampler uses for the end-of-sequence token inside scripted text.
pub const EOS_MARKER: &str = "</s>";

/// Failure talking to a backend.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("unknown image reference: {0}")]
    UnknownImage(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend error: {0}")]
    Remote(String),
}

impl BackendError {
    /// Transient failures worth retrying with backoff.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Unreachable(_) | Self::Timeout(_))
    }

    /// Stable kind tag used in wire error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Unreachable(_) => "unreachable",
            Self::Timeout(_) => "timeout",
            Self::Malformed(_) => "malformed",
            Self::UnknownImage(_) => "unknown_image",
            Self::InvalidRequest(_) => "invalid_request",
            Self::Remote(_) => "remote",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Unreachable(m)
            | Self::Timeout(m)
            | Self::Malformed(m)
            | Self::UnknownImage(m)
            | Self::InvalidRequest(m)
            | Self::Remote(m) => m,
        }
    }

    /// Inverse of [`BackendError::kind`]; unknown kinds map to `Remote`.
    pub fn from_kind(kind: &str, message: String) -> Self {
        match kind {
            "unreachable" => Self::Unreachable(message),
            "timeout" => Self::Timeout(message),
            "malformed" => Self::Malformed(message),
            "unknown_image" => Self::UnknownImage(message),
            "invalid_request" => Self::InvalidRequest(message),
            _ => Self::Remote(message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerRequest {
    pub image_ref: String,
    pub prompt: String,
    pub context: String,
    pub n: usize,
    pub stop_at_sentence_end: bool,
    pub seed: Option<u64>,
}

impl SamplerRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n == 0 {
            return Err(BackendError::InvalidRequest("n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub is_eos: bool,
    pub logprob: Option<f64>,
}

impl Candidate {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), is_eos: false, logprob: None }
    }

    pub fn eos() -> Self {
        Self { text: String::new(), is_eos: true, logprob: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerResponse {
    pub candidates: Vec<Candidate>,
    pub model_id: String,
}

impl SamplerResponse {
    /// Checks a reply against the request it answers.
    pub fn validate(&self, req: &SamplerRequest) -> Result<(), BackendError> {
        if self.candidates.len() > req.n {
            return Err(BackendError::Malformed(alloc::format!(
                "{} candidates returned for n = {}",
                self.candidates.len(),
                req.n
            )));
        }
        let any_eos = self.candidates.iter().any(|c| c.is_eos);
        if self.candidates.len() < req.n && !any_eos {
            return Err(BackendError::Malformed(alloc::format!(
                "{} candidates returned for n = {} without end-of-sequence",
                self.candidates.len(),
                req.n
            )));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            let text = c.text.trim_end();
            if text.is_empty() && !c.is_eos {
                return Err(BackendError::Malformed(alloc::format!("candidate {i} is empty")));
            }
            if req.stop_at_sentence_end
                && !c.is_eos
                && !text.ends_with(|ch: char| crate::segmenter::is_terminal_punct(ch) || is_closing(ch))
            {
                return Err(BackendError::Malformed(alloc::format!(
                    "candidate {i} does not end a sentence: {:?}",
                    c.text
                )));
            }
            if let Some(lp) = c.logprob {
                if !lp.is_finite() {
                    return Err(BackendError::Malformed(alloc::format!("candidate {i} has non-finite logprob")));
                }
            }
        }
        Ok(())
    }

    /// True when the model produced nothing but end-of-sequence.
    pub fn is_finished(&self) -> bool {
        self.candidates.iter().all(|c| c.is_eos && c.text.trim().is_empty())
    }
}

fn is_closing(ch: char) -> bool {
    matches!(ch, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionQuery {
    pub image_ref: String,
    pub labels: Vec<String>,
}

impl DetectionQuery {
    pub fn new(image_ref: impl Into<String>, labels: Vec<String>) -> Result<Self, BackendError> {
        let q = Self { image_ref: image_ref.into(), labels };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.labels.is_empty() {
            return Err(BackendError::InvalidRequest("detection query has no labels".into()));
        }
        if let Some(bad) = self.labels.iter().find(|l| l.is_empty() || l.chars().any(char::is_uppercase)) {
            return Err(BackendError::InvalidRequest(alloc::format!("label {bad:?} is not a lowercase lemma")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub present: BTreeMap<String, bool>,
    pub detector_id: String,
    #[serde(default)]
    pub confidence: BTreeMap<String, f64>,
}

impl DetectionResult {
    /// Exactly one flag per queried label, nothing else.
    pub fn validate(&self, q: &DetectionQuery) -> Result<(), BackendError> {
        let queried: BTreeSet<&str> = q.labels.iter().map(String::as_str).collect();
        let answered: BTreeSet<&str> = self.present.keys().map(String::as_str).collect();
        if queried != answered {
            return Err(BackendError::Malformed(alloc::format!(
                "detector {} answered {:?} for query {:?}",
                self.detector_id,
                answered,
                queried
            )));
        }
        Ok(())
    }

    pub fn is_present(&self, label: &str) -> bool {
        self.present.get(label).copied().unwrap_or(false)
    }
}

/// Which of the two cross-checking detectors a query goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorSlot {
    A,
    B,
}

/// One `(subject, predicate, object)` relation. Serialized as a 3-element
/// array.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String, String)", into = "(String, String, String)")]
pub struct Triplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triplet {
    pub fn new(s: impl Into<String>, p: impl Into<String>, o: impl Into<String>) -> Self {
        Self { subject: s.into(), predicate: p.into(), object: o.into() }
    }

    /// Predicates `is` / `are` mark an attribute relation.
    pub fn is_attribute(&self) -> bool {
        matches!(self.predicate.as_str(), "is" | "are")
    }
}

impl From<(String, String, String)> for Triplet {
    fn from((subject, predicate, object): (String, String, String)) -> Self {
        Self { subject, predicate, object }
    }
}

impl From<Triplet> for (String, String, String) {
    fn from(t: Triplet) -> Self {
        (t.subject, t.predicate, t.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TripletParseResult {
    pub triplets: Vec<Triplet>,
    /// Set when the configured external parser failed and the built-in
    /// grammar answered instead. Not part of the wire reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl TripletParseResult {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.triplets.iter().position(|t| t.subject.trim().is_empty() || t.predicate.trim().is_empty()) {
            Some(i) => Err(BackendError::Malformed(alloc::format!("triplet {i} has an empty subject or predicate"))),
            None => Ok(()),
        }
    }
}

/// Produces candidate continuations of a caption.
///
/// Takes `&mut self` so scripted mocks can advance a per-image call counter;
/// the pipeline serializes calls per image.
pub trait Sampler {
    fn sample(&mut self, req: &SamplerRequest) -> Result<SamplerResponse, BackendError>;
}

/// Open-vocabulary object presence detector.
pub trait Detector {
    fn detect(&self, q: &DetectionQuery) -> Result<DetectionResult, BackendError>;
}

/// Turns a sentence into scene-graph triplets.
pub trait TripletParser {
    fn parse(&self, sentence: &str) -> Result<TripletParseResult, BackendError>;
}

impl<T: Sampler + ?Sized> Sampler for &mut T {
    fn sample(&mut self, req: &SamplerRequest) -> Result<SamplerResponse, BackendError> {
        (**self).sample(req)
    }
}

impl<T: Sampler + ?Sized> Sampler for alloc::boxed::Box<T> {
    fn sample(&mut self, req: &SamplerRequest) -> Result<SamplerResponse, BackendError> {
        (**self).sample(req)
    }
}

impl<T: Detector + ?Sized> Detector for &T {
    fn detect(&self, q: &DetectionQuery) -> Result<DetectionResult, BackendError> {
        (**self).detect(q)
    }
}

impl<T: Detector + ?Sized> Detector for alloc::boxed::Box<T> {
    fn detect(&self, q: &DetectionQuery) -> Result<DetectionResult, BackendError> {
        (**self).detect(q)
    }
}

impl<T: TripletParser + ?Sized> TripletParser for &T {
    fn parse(&self, sentence: &str) -> Result<TripletParseResult, BackendError> {
        (**self).parse(sentence)
    }
}

impl<T: TripletParser + ?Sized> TripletParser for alloc::boxed::Box<T> {
    fn parse(&self, sentence: &str) -> Result<TripletParseResult, BackendError> {
        (**self).parse(sentence)
    }
}

/// The two cross-checking detectors, addressed by slot.
#[derive(Clone, Copy)]
pub struct DetectorPair<'a> {
    pub a: &'a dyn Detector,
    pub b: &'a dyn Detector,
}

impl<'a> DetectorPair<'a> {
    pub fn new(a: &'a dyn Detector, b: &'a dyn Detector) -> Self {
        Self { a, b }
    }

    /// Queries one slot and checks the reply covers exactly the labels asked.
    pub fn detect(&self, q: &DetectionQuery, which: DetectorSlot) -> Result<DetectionResult, BackendError> {
        q.validate()?;
        let det = match which {
            DetectorSlot::A => self.a,
            DetectorSlot::B => self.b,
        };
        let res = det.detect(q)?;
        res.validate(q)?;
        Ok(res)
    }

    pub fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn req(n: usize) -> SamplerRequest {
        SamplerRequest {
            image_ref: "img1".into(),
            prompt: "Describe.".into(),
            context: String::new(),
            n,
            stop_at_sentence_end: true,
            seed: Some(3),
        }
    }

    #[test]
    fn request_with_zero_candidates_is_invalid() {
        assert!(matches!(req(0).validate(), Err(BackendError::InvalidRequest(_))));
        assert!(req(1).validate().is_ok());
    }

    #[test]
    fn response_validation() {
        let ok = SamplerResponse {
            candidates: vec![Candidate::text("A cat sits."), Candidate::text("A dog runs!")],
            model_id: "m".into(),
        };
        assert!(ok.validate(&req(2)).is_ok());
        let short = SamplerResponse { candidates: vec![Candidate::text("A cat.")], model_id: "m".into() };
        assert!(short.validate(&req(2)).is_err());
        let eos = SamplerResponse { candidates: vec![Candidate::eos()], model_id: "m".into() };
        assert!(eos.validate(&req(5)).is_ok());
        assert!(eos.is_finished());
        let unterminated = SamplerResponse { candidates: vec![Candidate::text("A cat sits")], model_id: "m".into() };
        assert!(unterminated.validate(&req(1)).is_err());
    }

    #[test]
    fn detection_result_must_cover_query_exactly() {
        let q = DetectionQuery::new("img1", vec!["cat".to_string(), "dog".to_string()]).unwrap();
        let mut present = BTreeMap::new();
        present.insert("cat".to_string(), true);
        let mut r = DetectionResult { present, detector_id: "d".into(), confidence: BTreeMap::new() };
        assert!(r.validate(&q).is_err());
        r.present.insert("dog".into(), false);
        assert!(r.validate(&q).is_ok());
        r.present.insert("bird".into(), false);
        assert!(r.validate(&q).is_err());
    }

    #[test]
    fn empty_or_uppercase_labels_rejected() {
        assert!(DetectionQuery::new("img1", vec![]).is_err());
        assert!(DetectionQuery::new("img1", vec!["Cat".to_string()]).is_err());
    }

    #[test]
    fn error_kinds_round_trip() {
        for e in [
            BackendError::Unreachable("x".into()),
            BackendError::Timeout("x".into()),
            BackendError::Malformed("x".into()),
            BackendError::UnknownImage("x".into()),
            BackendError::InvalidRequest("x".into()),
            BackendError::Remote("x".into()),
        ] {
            assert_eq!(BackendError::from_kind(e.kind(), e.message().into()), e);
        }
        assert!(BackendError::Timeout(String::new()).is_retryable());
        assert!(!BackendError::Malformed(String::new()).is_retryable());
    }
}
