//! Where objects sit in captions, and sentence-level early intervention.
//!
//! Positions are whitespace-token indices. [`position_histogram`] bins the
//! relative position `token_index / caption_token_count`; [`sentence_frequency`]
//! averages object counts per sentence ordinal. [`intervene_decode`] builds a
//! caption sentence by sentence, keeping the first candidate with no
//! hallucinated object.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::extractor::extract_entities;
use crate::lexnames::LexnameTable;
use crate::protocol::{BackendError, DetectorPair, Sampler, SamplerRequest, TripletParser};
use crate::segmenter;
use crate::validator::{check_sentence, classify_objects, UncertainPolicy, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Hallucinated,
    Factual,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("object {lemma:?} at token {token_index} of a {caption_token_count}-token caption")]
    OutOfRange { lemma: String, token_index: usize, caption_token_count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionedObject {
    pub lemma: String,
    pub kind: ObjectKind,
    pub token_index: usize,
    pub caption_token_count: usize,
    pub sentence_index: usize,
}

impl PositionedObject {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.token_index >= self.caption_token_count {
            return Err(AnalysisError::OutOfRange {
                lemma: self.lemma.clone(),
                token_index: self.token_index,
                caption_token_count: self.caption_token_count,
            });
        }
        Ok(())
    }
}

/// Object as stored in caption files; the token count comes from the caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionObject {
    pub lemma: String,
    pub kind: ObjectKind,
    pub token_index: usize,
    pub sentence_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedCaption {
    pub caption: String,
    pub objects: Vec<CaptionObject>,
}

impl AnnotatedCaption {
    pub fn token_count(&self) -> usize {
        segmenter::token_count(&self.caption)
    }

    /// Number of sentences, at least covering every object's sentence index.
    pub fn sentence_count(&self) -> usize {
        let spans = segmenter::segment(&self.caption).len();
        self.objects.iter().map(|o| o.sentence_index + 1).max().unwrap_or(0).max(spans)
    }

    pub fn positioned(&self) -> Vec<PositionedObject> {
        let count = self.token_count();
        self.objects
            .iter()
            .map(|o| PositionedObject {
                lemma: o.lemma.clone(),
                kind: o.kind,
                token_index: o.token_index,
                caption_token_count: count,
                sentence_index: o.sentence_index,
            })
            .collect()
    }
}

/// Probability density over `[0, 1)` in equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub values: Vec<f64>,
    pub count: usize,
    /// No objects of this kind; `values` is all zero.
    pub empty: bool,
}

impl Density {
    fn from_counts(counts: Vec<usize>) -> Self {
        let total: usize = counts.iter().sum();
        let bins = counts.len() as f64;
        let values = counts.iter().map(|c| if total == 0 { 0.0 } else { *c as f64 * bins / total as f64 }).collect();
        Self { values, count: total, empty: total == 0 }
    }

    /// `Σ value × width`; 1 unless empty.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub bins: usize,
    pub hallucinated: Density,
    pub factual: Density,
}

impl PositionHistogram {
    /// Left edges of the bins.
    pub fn edges(&self) -> Vec<f64> {
        (0..self.bins).map(|i| i as f64 / self.bins as f64).collect()
    }
}

pub fn position_histogram(objs: &[PositionedObject], bins: usize) -> Result<PositionHistogram, AnalysisError> {
    if bins < 2 {
        return Err(AnalysisError::TooFewBins(bins));
    }
    let mut h = vec![0usize; bins];
    let mut f = vec![0usize; bins];
    for o in objs {
        o.validate()?;
        // Integer arithmetic keeps exact bin edges: floor(bins · i / n).
        let b = o.token_index * bins / o.caption_token_count;
        match o.kind {
            ObjectKind::Hallucinated => h[b] += 1,
            ObjectKind::Factual => f[b] += 1,
        }
    }
    Ok(PositionHistogram { bins, hallucinated: Density::from_counts(h), factual: Density::from_counts(f) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceFrequencyRow {
    pub sentence_index: usize,
    /// Captions long enough to have this sentence.
    pub captions: usize,
    pub hallucinated_total: usize,
    pub factual_total: usize,
    pub hallucinated_mean: f64,
    pub factual_mean: f64,
}

/// Mean object counts by sentence index, averaged over the captions that
/// reach that index.
pub fn sentence_frequency(captions: &[AnnotatedCaption]) -> Vec<SentenceFrequencyRow> {
    let mut reach: Vec<usize> = Vec::new();
    let mut hal: Vec<usize> = Vec::new();
    let mut fac: Vec<usize> = Vec::new();
    for c in captions {
        let n = c.sentence_count();
        if reach.len() < n {
            reach.resize(n, 0);
            hal.resize(n, 0);
            fac.resize(n, 0);
        }
        reach.iter_mut().take(n).for_each(|r| *r += 1);
        for o in &c.objects {
            match o.kind {
                ObjectKind::Hallucinated => hal[o.sentence_index] += 1,
                ObjectKind::Factual => fac[o.sentence_index] += 1,
            }
        }
    }
    (0..reach.len())
        .map(|i| SentenceFrequencyRow {
            sentence_index: i,
            captions: reach[i],
            hallucinated_total: hal[i],
            factual_total: fac[i],
            hallucinated_mean: hal[i] as f64 / reach[i] as f64,
            factual_mean: fac[i] as f64 / reach[i] as f64,
        })
        .collect()
}

/// Text-side capabilities for locating objects.
#[derive(Clone, Copy)]
pub struct Annotator<'a> {
    pub parser: &'a dyn TripletParser,
    pub lexnames: &'a LexnameTable,
    pub detectors: DetectorPair<'a>,
}

/// Extracts each sentence's objects, classifies them, and records where
/// each first appears. Uncertain objects are left out.
pub fn annotate_caption(image_ref: &str, caption: &str, a: &Annotator<'_>) -> Result<AnnotatedCaption, BackendError> {
    let mut objects = Vec::new();
    for span in segmenter::segment(caption) {
        let entities = match extract_entities(&span.text, a.parser, a.lexnames) {
            Ok(e) if !e.is_empty() => e,
            _ => continue,
        };
        let verdicts = classify_objects(image_ref, &entities.lemma_list(), &a.detectors)?;
        let words: Vec<&str> = span.text.split_whitespace().collect();
        for e in entities.iter() {
            let kind = match verdicts.get(&e.lemma) {
                Some(Verdict::Hallucinated) => ObjectKind::Hallucinated,
                Some(Verdict::Factual) => ObjectKind::Factual,
                _ => continue,
            };
            let offset = words
                .iter()
                .position(|w| {
                    let w = w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-');
                    w == e.surface || a.lexnames.lemma_of(w) == e.lemma
                })
                .unwrap_or(0);
            objects.push(CaptionObject {
                lemma: e.lemma.clone(),
                kind,
                token_index: span.token_start + offset,
                sentence_index: span.index,
            });
        }
    }
    objects.sort_by_key(|o| (o.token_index, o.lemma.clone()));
    Ok(AnnotatedCaption { caption: caption.to_string(), objects })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub n: usize,
    /// Sentences before this index take the first sample unchecked.
    pub intervene_from: usize,
    pub max_sentences: usize,
    pub seed: u64,
    pub uncertain_policy: UncertainPolicy,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { n: 5, intervene_from: 0, max_sentences: 32, seed: 0, uncertain_policy: UncertainPolicy::Ignore }
    }
}

impl DecodeConfig {
    /// Never intervenes: every sentence is the first of its `n` samples.
    pub fn greedy(self) -> Self {
        Self { intervene_from: usize::MAX, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub caption: String,
    pub sentences: Vec<String>,
    /// Sentence indices where every candidate hallucinated and the one with
    /// the fewest hallucinated objects was taken.
    pub fallbacks: Vec<usize>,
    /// Set when a backend failure cut the caption short.
    pub error: Option<String>,
}

impl DecodeOutcome {
    pub fn is_partial(&self) -> bool {
        self.error.is_some()
    }
}

/// Everything sentence-level decoding needs.
pub struct DecodeBackends<'a> {
    pub sampler: &'a mut dyn Sampler,
    pub annotator: Annotator<'a>,
}

pub fn intervene_decode(
    image_ref: &str,
    prompt: &str,
    cfg: &DecodeConfig,
    b: &mut DecodeBackends<'_>,
) -> DecodeOutcome {
    let mut out = DecodeOutcome { caption: String::new(), sentences: Vec::new(), fallbacks: Vec::new(), error: None };
    for s in 0..cfg.max_sentences {
        match decode_step(image_ref, prompt, cfg, s, &out.caption, b) {
            Ok(None) => break,
            Ok(Some((text, eos, fallback))) => {
                if fallback {
                    out.fallbacks.push(s);
                }
                out.sentences.push(text);
                out.caption = out.sentences.join(" ");
                if eos {
                    break;
                }
            }
            Err(e) => {
                out.error = Some(alloc::format!("sentence {s}: {e}"));
                break;
            }
        }
    }
    out
}

/// Picks sentence `s`; `None` at end of sequence.
fn decode_step(
    image_ref: &str,
    prompt: &str,
    cfg: &DecodeConfig,
    s: usize,
    context: &str,
    b: &mut DecodeBackends<'_>,
) -> Result<Option<(String, bool, bool)>, BackendError> {
    let req = SamplerRequest {
        image_ref: image_ref.to_string(),
        prompt: prompt.to_string(),
        context: context.to_string(),
        n: cfg.n,
        stop_at_sentence_end: true,
        seed: Some(cfg.seed.wrapping_add(s as u64)),
    };
    let resp = b.sampler.sample(&req)?;
    resp.validate(&req)?;
    let cands: Vec<_> = resp.candidates.into_iter().filter(|c| !c.text.trim().is_empty()).collect();
    if cands.is_empty() {
        return Ok(None);
    }
    if s < cfg.intervene_from {
        let c = &cands[0];
        return Ok(Some((c.text.trim().to_string(), c.is_eos, false)));
    }
    let a = &b.annotator;
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in cands.iter().enumerate() {
        let lemmas = extract_entities(&c.text, a.parser, a.lexnames).map(|e| e.lemma_list()).unwrap_or_default();
        let tag = check_sentence(image_ref, &lemmas, &a.detectors, cfg.uncertain_policy)?;
        let h = tag.hallucinated_count();
        if h == 0 {
            return Ok(Some((c.text.trim().to_string(), c.is_eos, false)));
        }
        if best.is_none_or(|(bh, _)| h < bh) {
            best = Some((h, i));
        }
    }
    let (_, i) = best.expect("at least one candidate");
    Ok(Some((cands[i].text.trim().to_string(), cands[i].is_eos, true)))
}

/// Object counts by kind over a corpus.
pub fn kind_totals(captions: &[AnnotatedCaption]) -> BTreeMap<ObjectKind, usize> {
    let mut m = BTreeMap::new();
    for o in captions.iter().flat_map(|c| &c.objects) {
        *m.entry(o.kind).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::PatternParser;
    use crate::mock::{ScriptedSampler, SyntheticCaptioner, SyntheticParams, TableDetector};
    use proptest::prelude::*;

    fn obj(kind: ObjectKind, token_index: usize, count: usize, sentence_index: usize) -> PositionedObject {
        PositionedObject { lemma: "x".into(), kind, token_index, caption_token_count: count, sentence_index }
    }

    #[test]
    fn single_object_histogram() {
        let h = position_histogram(&[obj(ObjectKind::Factual, 5, 50, 0)], 10).unwrap();
        assert_eq!(h.factual.values[1], 10.0);
        assert_eq!(h.factual.values.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(h.factual.integral(), 1.0);
        assert!(h.hallucinated.empty);
        assert!(h.hallucinated.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn late_hallucinations_have_no_early_mass() {
        let objs: Vec<_> = (0..200).map(|i| obj(ObjectKind::Hallucinated, 50 + i % 50, 100, 0)).collect();
        let h = position_histogram(&objs, 20).unwrap();
        assert!(h.hallucinated.values[..10].iter().all(|v| *v == 0.0));
        assert!((h.hallucinated.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_errors() {
        assert_eq!(position_histogram(&[], 1), Err(AnalysisError::TooFewBins(1)));
        assert!(matches!(
            position_histogram(&[obj(ObjectKind::Factual, 5, 5, 0)], 4),
            Err(AnalysisError::OutOfRange { .. })
        ));
    }

    #[test]
    fn sentence_frequency_examples() {
        assert!(sentence_frequency(&[]).is_empty());
        let cap = |extra: &str| AnnotatedCaption {
            caption: alloc::format!("A cat sits. A dog runs. A kite flies.{extra}"),
            objects: vec![
                CaptionObject { lemma: "cat".into(), kind: ObjectKind::Factual, token_index: 1, sentence_index: 0 },
                CaptionObject {
                    lemma: "kite".into(),
                    kind: ObjectKind::Hallucinated,
                    token_index: 7,
                    sentence_index: 2,
                },
            ],
        };
        let rows = sentence_frequency(&[cap(""), cap(" A bus stops."), cap("")]);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].hallucinated_mean, 1.0);
        assert_eq!(rows[0].factual_mean, 1.0);
        assert_eq!((rows[3].captions, rows[3].hallucinated_mean), (1, 0.0));
    }

    #[test]
    fn annotation_positions() {
        let a = TableDetector::from_present("a", [("img1", ["cat", "chair"])]);
        let parser = PatternParser::new();
        let ann =
            Annotator { parser: &parser, lexnames: crate::lexnames::shared(), detectors: DetectorPair::new(&a, &a) };
        let got = annotate_caption("img1", "A cat sits on a chair. Two dogs run.", &ann).unwrap();
        let summary: Vec<_> =
            got.objects.iter().map(|o| (o.lemma.as_str(), o.kind, o.token_index, o.sentence_index)).collect();
        assert_eq!(
            summary,
            [
                ("cat", ObjectKind::Factual, 1, 0),
                ("chair", ObjectKind::Factual, 5, 0),
                ("dog", ObjectKind::Hallucinated, 7, 1)
            ]
        );
        for p in got.positioned() {
            p.validate().unwrap();
        }
    }

    #[test]
    fn intervention_picks_first_clean_and_falls_back() {
        let mut sampler = ScriptedSampler::from_rounds([(
            "img1",
            vec![
                vec!["A dog runs.", "A cat sits.", "A chair stands."],
                vec!["A dog runs near a kite.", "A bus stops.", "A kite flies near a dog."],
                vec!["</s>"],
            ],
        )]);
        let det = TableDetector::from_present("a", [("img1", ["cat", "chair"])]);
        let parser = PatternParser::new();
        let mut b = DecodeBackends {
            sampler: &mut sampler,
            annotator: Annotator {
                parser: &parser,
                lexnames: crate::lexnames::shared(),
                detectors: DetectorPair::new(&det, &det),
            },
        };
        let out = intervene_decode("img1", "q", &DecodeConfig { n: 3, ..Default::default() }, &mut b);
        assert_eq!(out.sentences, ["A cat sits.", "A bus stops."]);
        assert_eq!(out.fallbacks, [1]);
        assert!(!out.is_partial());
    }

    #[test]
    fn backend_failure_leaves_partial_caption() {
        let mut sampler = ScriptedSampler::from_rounds([("img1", vec![vec!["A cat sits."], vec!["A cat sits."]])]);
        let det = TableDetector::from_present("a", [("other", ["cat"])]);
        let parser = PatternParser::new();
        let mut b = DecodeBackends {
            sampler: &mut sampler,
            annotator: Annotator {
                parser: &parser,
                lexnames: crate::lexnames::shared(),
                detectors: DetectorPair::new(&det, &det),
            },
        };
        let out =
            intervene_decode("img1", "q", &DecodeConfig { n: 1, intervene_from: 1, ..Default::default() }, &mut b);
        assert_eq!(out.sentences, ["A cat sits."]);
        assert!(out.is_partial());
    }

    #[test]
    fn oracle_intervention_is_clean_on_a_small_corpus() {
        let corpus = SyntheticCaptioner::corpus(10, 99, SyntheticParams::default());
        let oracle = corpus.oracle_detector("oracle");
        let parser = PatternParser::new();
        let ann = Annotator {
            parser: &parser,
            lexnames: crate::lexnames::shared(),
            detectors: DetectorPair::new(&oracle, &oracle),
        };
        let names: Vec<String> = corpus.images().keys().cloned().collect();
        let mut sampler = corpus.clone();
        for img in &names {
            let mut b = DecodeBackends { sampler: &mut sampler, annotator: ann };
            let out = intervene_decode(img, "Describe.", &DecodeConfig::default(), &mut b);
            assert!(out.fallbacks.is_empty() && !out.is_partial());
            let a = annotate_caption(img, &out.caption, &ann).unwrap();
            assert_eq!(kind_totals(&[a]).get(&ObjectKind::Hallucinated), None);
        }
    }

    proptest! {
        #[test]
        fn densities_integrate_to_one(spec in prop::collection::vec((any::<bool>(), 1usize..80, 0usize..1000), 1..40), bins in 2usize..30) {
            let objs: Vec<_> = spec.iter().map(|(h, n, i)| {
                let kind = if *h { ObjectKind::Hallucinated } else { ObjectKind::Factual };
                obj(kind, i % n, *n, 0)
            }).collect();
            let hist = position_histogram(&objs, bins).unwrap();
            for d in [&hist.hallucinated, &hist.factual] {
                if !d.empty {
                    prop_assert!((d.integral() - 1.0).abs() < 1e-12);
                }
            }
            let same: Vec<_> = objs.iter().map(|o| PositionedObject { kind: ObjectKind::Factual, ..o.clone() }).collect();
            let mirrored: Vec<_> = objs.iter().map(|o| PositionedObject { kind: ObjectKind::Hallucinated, ..o.clone() }).collect();
            let both = position_histogram(&[same, mirrored].concat(), bins).unwrap();
            prop_assert_eq!(both.hallucinated, both.factual);
        }
    }
}
