//! Iterative contextual bootstrapping of sentence-level preference pairs.
//!
//! Each round samples `n` one-sentence continuations of the current context,
//! tags them by cross-checked object verdicts, pairs the best non-hallucinated
//! candidate with the most hallucinated one, and then grows the context so the
//! next round is sampled under a longer, still hallucination-free prefix.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::extractor::extract_entities;
use crate::lexnames::LexnameTable;
use crate::protocol::{BackendError, DetectorPair, Sampler, SamplerRequest, TripletParser};
use crate::validator::{check_sentence, SentenceLabel, SentenceTag, UncertainPolicy, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveKind {
    /// Shares at least one factual object with the context.
    Coherent,
    Agnostic,
}

impl PositiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PositiveKind::Coherent => "coherent",
            PositiveKind::Agnostic => "agnostic",
        }
    }
}

/// Which sentence of a round extends the context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextGrowthPolicy {
    /// The selected non-hallucinated sentence.
    #[default]
    NonHallucinated,
    /// The selected hallucinated sentence (ablation).
    Hallucinated,
    /// Whatever the model produced first, regardless of tags (ablation).
    Natural,
}

impl ContextGrowthPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextGrowthPolicy::NonHallucinated => "non_hallucinated",
            ContextGrowthPolicy::Hallucinated => "hallucinated",
            ContextGrowthPolicy::Natural => "natural",
        }
    }
}

impl fmt::Display for ContextGrowthPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextGrowthPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "non_hallucinated" => Ok(Self::NonHallucinated),
            "hallucinated" => Ok(Self::Hallucinated),
            "natural" => Ok(Self::Natural),
            other => Err(alloc::format!("unknown context growth policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("n must be at least 1")]
    ZeroCandidates,
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n: usize,
    pub max_iterations: usize,
    pub icb_enabled: bool,
    pub context_growth_policy: ContextGrowthPolicy,
    pub require_coherent_positive: bool,
    pub uncertain_policy: UncertainPolicy,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 5,
            max_iterations: 8,
            icb_enabled: true,
            context_growth_policy: ContextGrowthPolicy::NonHallucinated,
            require_coherent_positive: true,
            uncertain_policy: UncertainPolicy::Ignore,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::ZeroCandidates);
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::ZeroIterations);
        }
        Ok(())
    }

    /// Sampler seed for a round.
    pub fn round_seed(&self, iteration: usize) -> u64 {
        self.seed.wrapping_add(iteration as u64)
    }
}

/// Accepted prefix conditioning the next round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub sentences: Vec<String>,
    /// Union of the factual lemmas of `sentences`.
    pub object_lemmas: BTreeSet<String>,
    /// Rounds completed so far.
    pub iteration_index: usize,
}

impl Context {
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    pub fn push<'a>(&mut self, sentence: &str, factual: impl IntoIterator<Item = &'a str>) {
        self.sentences.push(sentence.to_string());
        self.object_lemmas.extend(factual.into_iter().map(String::from));
    }
}

/// One sampled sentence with its entities and verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSentence {
    /// Position in the sampler's reply.
    pub index: usize,
    pub text: String,
    pub logprob: Option<f64>,
    pub is_eos: bool,
    pub lemmas: Vec<String>,
    pub tag: SentenceTag,
}

impl CandidateSentence {
    pub fn label(&self) -> SentenceLabel {
        self.tag.label
    }
}

/// Coherent iff the candidate's factual lemmas meet the context's lemmas.
pub fn split_positive_kind(candidate: &CandidateSentence, ctx: &Context) -> PositiveKind {
    if candidate.tag.factual_lemmas().any(|l| ctx.object_lemmas.contains(l)) {
        PositiveKind::Coherent
    } else {
        PositiveKind::Agnostic
    }
}

/// A sentence competing for selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub kind: PositiveKind,
    pub logprob: Option<f64>,
}

/// Higher logprob first; a known logprob beats an unknown one.
fn by_logprob(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Coherent before agnostic, then highest logprob, then lowest index.
pub fn tie_break(candidates: &[Ranked]) -> Option<Ranked> {
    candidates
        .iter()
        .min_by(|a, b| a.kind.cmp(&b.kind).then(by_logprob(a.logprob, b.logprob)).then(a.index.cmp(&b.index)))
        .copied()
}

/// Hallucinated candidate with the most hallucinated objects, then highest
/// logprob, then lowest index.
pub fn select_negative(candidates: &[CandidateSentence]) -> Option<&CandidateSentence> {
    candidates.iter().filter(|c| c.label() == SentenceLabel::HallucinatedSentence).min_by(|a, b| {
        b.tag
            .hallucinated_count()
            .cmp(&a.tag.hallucinated_count())
            .then(by_logprob(a.logprob, b.logprob))
            .then(a.index.cmp(&b.index))
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sampler_model_id: String,
    pub detector_ids: Vec<String>,
    /// Sampler seed of the round that produced the pair.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
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
    pub provenance: Provenance,
}

impl PreferencePair {
    /// Record-level invariants that survive serialization.
    pub fn check(&self) -> Result<(), String> {
        if self.image_ref.is_empty() {
            return Err("image_ref is empty".into());
        }
        if self.y_w.trim().is_empty() {
            return Err("y_w is empty".into());
        }
        if self.y_l.trim().is_empty() {
            return Err("y_l is empty".into());
        }
        if self.context != self.context_sentences.join(" ") {
            return Err("context does not match context_sentences".into());
        }
        if self.y_w_verdicts.values().any(|v| *v == Verdict::Hallucinated) {
            return Err("y_w has a hallucinated object".into());
        }
        if !self.y_l_verdicts.values().any(|v| *v != Verdict::Factual) {
            return Err("y_l has only factual objects".into());
        }
        Ok(())
    }
}

/// External capabilities one image run needs.
pub struct Backends<'a> {
    pub sampler: &'a mut dyn Sampler,
    pub detectors: DetectorPair<'a>,
    pub parser: &'a dyn TripletParser,
    pub lexnames: &'a LexnameTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EndOfSequence,
    MaxIterations,
    /// Hallucinations but nothing acceptable to extend the context with.
    NoContextSentence,
    /// ICB disabled and the single pair has been produced.
    PairEmitted,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOutcome {
    pub image_ref: String,
    pub pairs: Vec<PreferencePair>,
    pub rounds: usize,
    pub stop: StopReason,
    /// Why the image was skipped; its pairs are discarded.
    pub skipped: Option<String>,
    pub final_context: Context,
}

/// Samples, extracts and tags one round of candidates.
pub fn sample_round(
    image_ref: &str,
    prompt: &str,
    ctx: &Context,
    cfg: &PipelineConfig,
    iteration: usize,
    b: &mut Backends<'_>,
) -> Result<(Vec<CandidateSentence>, String, bool), BackendError> {
    let req = SamplerRequest {
        image_ref: image_ref.to_string(),
        prompt: prompt.to_string(),
        context: ctx.text(),
        n: cfg.n,
        stop_at_sentence_end: true,
        seed: Some(cfg.round_seed(iteration)),
    };
    let resp = b.sampler.sample(&req)?;
    resp.validate(&req)?;
    let finished = resp.is_finished();
    let mut out = Vec::new();
    for (index, c) in resp.candidates.into_iter().enumerate() {
        let text = c.text.trim();
        if text.is_empty() {
            continue;
        }
        let lemmas = extract_entities(text, b.parser, b.lexnames).map(|e| e.lemma_list()).unwrap_or_default();
        let tag = check_sentence(image_ref, &lemmas, &b.detectors, cfg.uncertain_policy)?;
        out.push(CandidateSentence {
            index,
            text: text.to_string(),
            logprob: c.logprob,
            is_eos: c.is_eos,
            lemmas,
            tag,
        });
    }
    Ok((out, resp.model_id, finished))
}

/// Runs the bootstrapping loop for one image. Backend failures skip the image
/// rather than returning an error.
pub fn run_image(image_ref: &str, prompt: &str, cfg: &PipelineConfig, b: &mut Backends<'_>) -> ImageOutcome {
    let mut ctx = Context::default();
    let mut pairs = Vec::new();
    let mut rounds = 0;
    let mut stop = StopReason::MaxIterations;
    for iteration in 0..cfg.max_iterations {
        let (cands, model_id, finished) = match sample_round(image_ref, prompt, &ctx, cfg, iteration, b) {
            Ok(r) => r,
            Err(e) => {
                return ImageOutcome {
                    image_ref: image_ref.to_string(),
                    pairs: Vec::new(),
                    rounds,
                    stop: StopReason::Skipped,
                    skipped: Some(alloc::format!("round {iteration}: {e}")),
                    final_context: ctx,
                }
            }
        };
        rounds += 1;
        if finished || cands.is_empty() {
            stop = StopReason::EndOfSequence;
            break;
        }

        let ranked: Vec<Ranked> = cands
            .iter()
            .filter(|c| c.label() == SentenceLabel::NonHallucinatedSentence)
            .map(|c| Ranked { index: c.index, kind: split_positive_kind(c, &ctx), logprob: c.logprob })
            .collect();
        // With an empty context nothing can be coherent, so the requirement
        // only applies once the context holds something.
        let eligible: Vec<Ranked> = if cfg.require_coherent_positive && !ctx.is_empty() {
            ranked.iter().copied().filter(|r| r.kind == PositiveKind::Coherent).collect()
        } else {
            ranked.clone()
        };
        let find = |idx: usize| cands.iter().find(|c| c.index == idx).expect("ranked from cands");
        let y_w = tie_break(&eligible);
        let y_l = select_negative(&cands);

        if let (Some(w), Some(l)) = (y_w, y_l) {
            let wc = find(w.index);
            let mut detector_ids = wc.tag.detector_ids.clone();
            if detector_ids.is_empty() {
                detector_ids = l.tag.detector_ids.clone();
            }
            pairs.push(PreferencePair {
                image_ref: image_ref.to_string(),
                prompt: prompt.to_string(),
                context: ctx.text(),
                context_sentences: ctx.sentences.clone(),
                y_w: wc.text.clone(),
                y_l: l.text.clone(),
                positive_kind: w.kind,
                iteration_index: iteration,
                y_w_verdicts: wc.tag.object_verdicts.clone(),
                y_l_verdicts: l.tag.object_verdicts.clone(),
                provenance: Provenance { sampler_model_id: model_id, detector_ids, seed: cfg.round_seed(iteration) },
            });
            if !cfg.icb_enabled {
                stop = StopReason::PairEmitted;
                break;
            }
        }
        ctx.iteration_index = iteration + 1;
        if !cfg.icb_enabled {
            continue;
        }

        let grow: Option<&CandidateSentence> = match cfg.context_growth_policy {
            ContextGrowthPolicy::NonHallucinated => tie_break(&ranked).map(|r| find(r.index)),
            ContextGrowthPolicy::Hallucinated => y_l,
            ContextGrowthPolicy::Natural => cands.iter().find(|c| c.index == 0).or(cands.first()),
        };
        match grow {
            Some(c) => {
                ctx.push(&c.text, c.tag.factual_lemmas());
                if c.is_eos {
                    stop = StopReason::EndOfSequence;
                    break;
                }
            }
            None if cands.iter().all(|c| c.label() == SentenceLabel::Unusable) => {}
            None => {
                stop = StopReason::NoContextSentence;
                break;
            }
        }
    }
    ImageOutcome { image_ref: image_ref.to_string(), pairs, rounds, stop, skipped: None, final_context: ctx }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::PatternParser;
    use crate::mock::{ScriptedSampler, TableDetector};
    use alloc::vec;
    use proptest::prelude::*;

    fn cand(index: usize, verdicts: &[(&str, Verdict)], logprob: Option<f64>) -> CandidateSentence {
        let map: BTreeMap<String, Verdict> = verdicts.iter().map(|(l, v)| (l.to_string(), *v)).collect();
        CandidateSentence {
            index,
            text: alloc::format!("s{index}."),
            logprob,
            is_eos: false,
            lemmas: map.keys().cloned().collect(),
            tag: crate::validator::tag_sentence(&map, UncertainPolicy::Ignore),
        }
    }

    fn ctx_with(lemmas: &[&str]) -> Context {
        let mut c = Context::default();
        c.push("x.", lemmas.iter().copied());
        c
    }

    #[test]
    fn positive_kinds() {
        use Verdict::Factual;
        let c = cand(0, &[("cat", Factual), ("window", Factual)], None);
        assert_eq!(split_positive_kind(&c, &ctx_with(&["cat", "table"])), PositiveKind::Coherent);
        let c = cand(0, &[("tree", Factual)], None);
        assert_eq!(split_positive_kind(&c, &ctx_with(&["cat"])), PositiveKind::Agnostic);
        assert_eq!(split_positive_kind(&c, &Context::default()), PositiveKind::Agnostic);
    }

    #[test]
    fn uncertain_objects_do_not_make_a_positive_coherent() {
        let c = cand(0, &[("tree", Verdict::Factual), ("cat", Verdict::Uncertain)], None);
        assert_eq!(split_positive_kind(&c, &ctx_with(&["cat"])), PositiveKind::Agnostic);
    }

    #[test]
    fn tie_break_examples() {
        use PositiveKind::*;
        let r = |index, kind, logprob| Ranked { index, kind, logprob };
        assert_eq!(tie_break(&[r(0, Agnostic, None), r(1, Coherent, None)]).unwrap().index, 1);
        assert_eq!(tie_break(&[r(0, Coherent, Some(-1.2)), r(1, Coherent, Some(-0.8))]).unwrap().index, 1);
        assert_eq!(tie_break(&[r(3, Coherent, None), r(1, Coherent, None)]).unwrap().index, 1);
        assert_eq!(tie_break(&[r(0, Agnostic, Some(-0.1)), r(1, Coherent, Some(-9.0))]).unwrap().index, 1);
        assert!(tie_break(&[]).is_none());
    }

    #[test]
    fn negative_prefers_most_hallucinations() {
        use Verdict::*;
        let cs = vec![
            cand(0, &[("dog", Hallucinated)], Some(-0.1)),
            cand(1, &[("dog", Hallucinated), ("kite", Hallucinated)], Some(-3.0)),
            cand(2, &[("cat", Factual)], None),
        ];
        assert_eq!(select_negative(&cs).unwrap().index, 1);
        assert!(select_negative(&cs[2..]).is_none());
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = PipelineConfig::default();
        assert_eq!((c.n, c.max_iterations, c.icb_enabled, c.require_coherent_positive), (5, 8, true, true));
        assert_eq!(PipelineConfig { n: 0, ..c.clone() }.validate(), Err(ConfigError::ZeroCandidates));
        assert_eq!(PipelineConfig { max_iterations: 0, ..c }.validate(), Err(ConfigError::ZeroIterations));
        for p in [ContextGrowthPolicy::NonHallucinated, ContextGrowthPolicy::Hallucinated, ContextGrowthPolicy::Natural]
        {
            assert_eq!(p.as_str().parse::<ContextGrowthPolicy>().unwrap(), p);
        }
    }

    struct Fixture {
        sampler: ScriptedSampler,
        a: TableDetector,
        b: TableDetector,
        parser: PatternParser,
    }

    impl Fixture {
        fn new(rounds: Vec<Vec<&str>>, present: &[&str]) -> Self {
            Self {
                sampler: ScriptedSampler::from_rounds([("img1", rounds)]),
                a: TableDetector::from_present("det-a", [("img1", present.iter().copied())]),
                b: TableDetector::from_present("det-b", [("img1", present.iter().copied())]),
                parser: PatternParser::new(),
            }
        }

        fn run(&mut self, cfg: &PipelineConfig) -> ImageOutcome {
            let mut b = Backends {
                sampler: &mut self.sampler,
                detectors: DetectorPair::new(&self.a, &self.b),
                parser: &self.parser,
                lexnames: crate::lexnames::shared(),
            };
            run_image("img1", "Describe this image.", cfg, &mut b)
        }
    }

    fn cfg(n: usize) -> PipelineConfig {
        PipelineConfig { n, ..Default::default() }
    }

    #[test]
    fn single_round_then_eos() {
        let mut f = Fixture::new(vec![vec!["A cat sits.", "A dog runs."], vec!["</s>"]], &["cat"]);
        let out = f.run(&cfg(2));
        assert_eq!(out.pairs.len(), 1);
        let p = &out.pairs[0];
        assert_eq!(
            (p.y_w.as_str(), p.y_l.as_str(), p.context.as_str(), p.iteration_index),
            ("A cat sits.", "A dog runs.", "", 0)
        );
        assert_eq!(p.positive_kind, PositiveKind::Agnostic);
        assert_eq!(p.provenance.detector_ids, ["det-a", "det-b"]);
        assert_eq!(out.stop, StopReason::EndOfSequence);
        p.check().unwrap();
    }

    #[test]
    fn three_round_chain() {
        let mut f = Fixture::new(
            vec![
                vec!["A cat sits on a chair.", "A dog runs."],
                vec!["The cat is black.", "A horse stands near the cat."],
                vec!["The chair is next to a table.", "A kite flies over the table."],
                vec!["</s>"],
            ],
            &["cat", "chair", "table"],
        );
        let out = f.run(&cfg(2));
        let lens: Vec<usize> = out.pairs.iter().map(|p| p.context_sentences.len()).collect();
        assert_eq!(lens, [0, 1, 2]);
        for k in 1..out.pairs.len() {
            let mut expect = out.pairs[k - 1].context_sentences.clone();
            expect.push(out.pairs[k - 1].y_w.clone());
            assert_eq!(out.pairs[k].context_sentences, expect);
            assert_eq!(out.pairs[k].positive_kind, PositiveKind::Coherent);
        }
    }

    #[test]
    fn icb_off_yields_one_pair_with_empty_context() {
        let mut f = Fixture::new(
            vec![vec!["A cat sits."], vec!["A cat sits.", "A dog runs."], vec!["A cat sits.", "A dog runs."]],
            &["cat"],
        );
        let out = f.run(&PipelineConfig { icb_enabled: false, ..cfg(2) });
        assert_eq!(out.pairs.len(), 1);
        assert_eq!((out.pairs[0].context.as_str(), out.pairs[0].iteration_index), ("", 1));
        assert_eq!(out.stop, StopReason::PairEmitted);
    }

    #[test]
    fn unknown_image_is_skipped() {
        let mut f = Fixture::new(vec![vec!["A cat sits."]], &["cat"]);
        let mut b = Backends {
            sampler: &mut f.sampler,
            detectors: DetectorPair::new(&f.a, &f.b),
            parser: &f.parser,
            lexnames: crate::lexnames::shared(),
        };
        let out = run_image("img9", "q", &cfg(1), &mut b);
        assert_eq!(out.stop, StopReason::Skipped);
        assert!(out.skipped.unwrap().contains("img9"));
    }

    #[test]
    fn hallucinations_without_positive_terminate() {
        let mut f = Fixture::new(vec![vec!["A dog runs."], vec!["A cat sits."]], &["cat"]);
        let out = f.run(&cfg(1));
        assert_eq!((out.rounds, out.stop), (1, StopReason::NoContextSentence));
    }

    #[test]
    fn unusable_round_is_counted_and_skipped_over() {
        let mut f =
            Fixture::new(vec![vec!["Hello there."], vec!["A cat sits.", "A dog runs."], vec!["</s>"]], &["cat"]);
        let out = f.run(&cfg(2));
        assert_eq!(out.rounds, 3);
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].iteration_index, 1);
        assert!(out.pairs[0].context.is_empty());
    }

    #[test]
    fn growth_policies() {
        let rounds = || vec![vec!["A dog runs near a cat.", "A cat sits."], vec!["</s>"]];
        let mut f = Fixture::new(rounds(), &["cat"]);
        let out = f.run(&PipelineConfig { context_growth_policy: ContextGrowthPolicy::Hallucinated, ..cfg(2) });
        assert_eq!(out.final_context.sentences, ["A dog runs near a cat."]);
        let mut f = Fixture::new(vec![vec!["Hello there.", "A cat sits."], vec!["</s>"]], &["cat"]);
        let out = f.run(&PipelineConfig { context_growth_policy: ContextGrowthPolicy::Natural, ..cfg(2) });
        assert_eq!(out.final_context.sentences, ["Hello there."]);
        let mut f = Fixture::new(rounds(), &["cat"]);
        let out = f.run(&cfg(2));
        assert_eq!(out.final_context.sentences, ["A cat sits."]);
        assert_eq!(out.final_context.object_lemmas.iter().collect::<Vec<_>>(), ["cat"]);
    }

    #[test]
    fn coherence_requirement_blocks_agnostic_pairs_after_round_zero() {
        let rounds = || vec![vec!["A cat sits."], vec!["A tree grows.", "A dog runs."], vec!["</s>"]];
        let mut f = Fixture::new(rounds(), &["cat", "tree"]);
        assert!(f.run(&cfg(2)).pairs.is_empty());
        let mut f = Fixture::new(rounds(), &["cat", "tree"]);
        let out = f.run(&PipelineConfig { require_coherent_positive: false, ..cfg(2) });
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].positive_kind, PositiveKind::Agnostic);
        // Growth still takes the agnostic positive.
        let mut f = Fixture::new(rounds(), &["cat", "tree"]);
        assert_eq!(f.run(&cfg(2)).final_context.sentences, ["A cat sits.", "A tree grows."]);
    }

    const POOL: &[&str] = &[
        "A cat sits.",
        "A dog runs.",
        "The cat is black.",
        "A chair stands near a table.",
        "A kite flies.",
        "Hello there.",
        "The table is red.",
        "A horse stands near the cat.",
    ];

    proptest! {
        #[test]
        fn context_purity_bound_and_determinism(
            rounds in prop::collection::vec(prop::collection::vec(prop::sample::select(POOL.to_vec()), 1..4), 0..10),
            n in 1usize..4,
            max_iterations in 1usize..10,
        ) {
            let present = ["cat", "chair", "table"];
            let c = PipelineConfig { n, max_iterations, ..Default::default() };
            let out = Fixture::new(rounds.clone(), &present).run(&c);
            let again = Fixture::new(rounds, &present).run(&c);
            prop_assert_eq!(&out, &again);
            prop_assert!(out.pairs.len() <= max_iterations);
            let t = crate::lexnames::shared();
            let parser = PatternParser::new();
            for s in &out.final_context.sentences {
                let lemmas = extract_entities(s, &parser, t).unwrap().lemma_list();
                prop_assert!(!lemmas.is_empty());
                prop_assert!(lemmas.iter().all(|l| present.contains(&l.as_str())));
            }
            for p in &out.pairs {
                prop_assert!(p.check().is_ok());
            }
        }
    }
}
