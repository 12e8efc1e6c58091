//! Two-detector cross-checking of object lemmas and the sentence tag derived
//! from the per-object verdicts.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::protocol::{BackendError, DetectionQuery, DetectorPair, DetectorSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Hallucinated,
    Factual,
    Uncertain,
}

impl Verdict {
    /// Combines the two detectors' presence flags.
    pub fn from_flags(a: bool, b: bool) -> Self {
        match (a, b) {
            (true, true) => Verdict::Factual,
            (false, false) => Verdict::Hallucinated,
            _ => Verdict::Uncertain,
        }
    }
}

/// How `Uncertain` objects count when tagging a sentence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertainPolicy {
    #[default]
    Ignore,
    Factual,
    Hallucinated,
}

impl UncertainPolicy {
    /// The verdict an object effectively carries under this policy.
    pub fn apply(self, v: Verdict) -> Option<Verdict> {
        match (v, self) {
            (Verdict::Uncertain, UncertainPolicy::Ignore) => None,
            (Verdict::Uncertain, UncertainPolicy::Factual) => Some(Verdict::Factual),
            (Verdict::Uncertain, UncertainPolicy::Hallucinated) => Some(Verdict::Hallucinated),
            (v, _) => Some(v),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UncertainPolicy::Ignore => "ignore",
            UncertainPolicy::Factual => "factual",
            UncertainPolicy::Hallucinated => "hallucinated",
        }
    }
}

impl fmt::Display for UncertainPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UncertainPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ignore" => Ok(UncertainPolicy::Ignore),
            "factual" => Ok(UncertainPolicy::Factual),
            "hallucinated" => Ok(UncertainPolicy::Hallucinated),
            other => Err(alloc::format!("unknown uncertain_policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceLabel {
    HallucinatedSentence,
    NonHallucinatedSentence,
    Unusable,
}

/// Sentence label plus the raw per-object verdicts it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTag {
    pub label: SentenceLabel,
    pub object_verdicts: BTreeMap<String, Verdict>,
    pub policy: UncertainPolicy,
    /// Ids reported by detectors A and B, when they were consulted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detector_ids: Vec<String>,
}

impl SentenceTag {
    pub fn unusable() -> Self {
        Self {
            label: SentenceLabel::Unusable,
            object_verdicts: BTreeMap::new(),
            policy: UncertainPolicy::Ignore,
            detector_ids: Vec::new(),
        }
    }

    /// Lemmas counting as factual under the tag's policy.
    pub fn factual_lemmas(&self) -> impl Iterator<Item = &str> {
        self.effective(Verdict::Factual)
    }

    /// Number of objects counting as hallucinated under the tag's policy.
    pub fn hallucinated_count(&self) -> usize {
        self.effective(Verdict::Hallucinated).count()
    }

    fn effective(&self, want: Verdict) -> impl Iterator<Item = &str> {
        let policy = self.policy;
        self.object_verdicts.iter().filter(move |(_, v)| policy.apply(**v) == Some(want)).map(|(l, _)| l.as_str())
    }
}

/// Queries both detectors once with the full lemma list and combines their
/// answers per object.
pub fn classify_objects(
    image_ref: &str,
    lemmas: &[String],
    detectors: &DetectorPair<'_>,
) -> Result<BTreeMap<String, Verdict>, BackendError> {
    classify_with_ids(image_ref, lemmas, detectors).map(|(v, _)| v)
}

/// [`classify_objects`] plus the ids the two detectors reported.
pub fn classify_with_ids(
    image_ref: &str,
    lemmas: &[String],
    detectors: &DetectorPair<'_>,
) -> Result<(BTreeMap<String, Verdict>, [String; 2]), BackendError> {
    let q = DetectionQuery::new(image_ref, lemmas.to_vec())?;
    let a = detectors.detect(&q, DetectorSlot::A)?;
    let b = detectors.detect(&q, DetectorSlot::B)?;
    let verdicts =
        q.labels.iter().map(|l| (l.clone(), Verdict::from_flags(a.is_present(l), b.is_present(l)))).collect();
    Ok((verdicts, [a.detector_id, b.detector_id]))
}

pub fn tag_sentence(verdicts: &BTreeMap<String, Verdict>, policy: UncertainPolicy) -> SentenceTag {
    SentenceTag {
        label: label_of(verdicts.values().copied(), policy),
        object_verdicts: verdicts.clone(),
        policy,
        detector_ids: Vec::new(),
    }
}

/// Sentence label for a bag of verdicts.
pub fn label_of(verdicts: impl IntoIterator<Item = Verdict>, policy: UncertainPolicy) -> SentenceLabel {
    let mut any_factual = false;
    for v in verdicts {
        match policy.apply(v) {
            Some(Verdict::Hallucinated) => return SentenceLabel::HallucinatedSentence,
            Some(Verdict::Factual) => any_factual = true,
            _ => {}
        }
    }
    if any_factual {
        SentenceLabel::NonHallucinatedSentence
    } else {
        SentenceLabel::Unusable
    }
}

/// Classifies and tags one sentence's lemmas. Object-free sentences and
/// detector failures yield `Unusable`; an unknown image is propagated because
/// it points at broken input rather than a flaky backend.
pub fn check_sentence(
    image_ref: &str,
    lemmas: &[String],
    detectors: &DetectorPair<'_>,
    policy: UncertainPolicy,
) -> Result<SentenceTag, BackendError> {
    if lemmas.is_empty() {
        return Ok(SentenceTag { policy, ..SentenceTag::unusable() });
    }
    match classify_with_ids(image_ref, lemmas, detectors) {
        Ok((v, ids)) => Ok(SentenceTag { detector_ids: ids.to_vec(), ..tag_sentence(&v, policy) }),
        Err(e @ BackendError::UnknownImage(_)) => Err(e),
        Err(_) => Ok(SentenceTag { policy, ..SentenceTag::unusable() }),
    }
}

/// Every multiset of up to `max` verdicts, as sorted vectors.
pub fn verdict_multisets(max: usize) -> Vec<Vec<Verdict>> {
    const ALL: [Verdict; 3] = [Verdict::Hallucinated, Verdict::Factual, Verdict::Uncertain];
    let mut out = Vec::new();
    fn rec(start: usize, left: usize, cur: &mut Vec<Verdict>, out: &mut Vec<Vec<Verdict>>) {
        out.push(cur.clone());
        if left == 0 {
            return;
        }
        for (i, v) in ALL.iter().enumerate().skip(start) {
            cur.push(*v);
            rec(i, left - 1, cur, out);
            cur.pop();
        }
    }
    rec(0, max, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{DetectionResult, Detector};
    use alloc::string::ToString;
    use proptest::prelude::*;

    struct Table(&'static str, Vec<String>);

    fn table(id: &'static str, present: &[&str]) -> Table {
        Table(id, lemmas(present))
    }

    impl Detector for Table {
        fn detect(&self, q: &DetectionQuery) -> Result<DetectionResult, BackendError> {
            if q.image_ref != "img1" {
                return Err(BackendError::UnknownImage(q.image_ref.clone()));
            }
            Ok(DetectionResult {
                present: q.labels.iter().map(|l| (l.clone(), self.1.contains(l))).collect(),
                detector_id: self.0.to_string(),
                confidence: BTreeMap::new(),
            })
        }
    }

    struct Down;
    impl Detector for Down {
        fn detect(&self, _: &DetectionQuery) -> Result<DetectionResult, BackendError> {
            Err(BackendError::Unreachable("down".into()))
        }
    }

    fn lemmas(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn vmap(xs: &[(&str, Verdict)]) -> BTreeMap<String, Verdict> {
        xs.iter().map(|(l, v)| (l.to_string(), *v)).collect()
    }

    #[test]
    fn cross_check_cases() {
        let a = table("a", &["cat", "vase"]);
        let b = table("b", &["cat"]);
        let got = classify_objects("img1", &lemmas(&["cat", "dog", "vase"]), &DetectorPair::new(&a, &b)).unwrap();
        assert_eq!(
            got,
            vmap(&[("cat", Verdict::Factual), ("dog", Verdict::Hallucinated), ("vase", Verdict::Uncertain)])
        );
    }

    #[test]
    fn empty_labels_are_a_precondition_error() {
        let a = table("a", &[]);
        assert!(classify_objects("img1", &[], &DetectorPair::new(&a, &a)).is_err());
    }

    #[test]
    fn tag_examples() {
        use Verdict::*;
        let t = tag_sentence(&vmap(&[("cat", Factual), ("dog", Hallucinated)]), UncertainPolicy::Ignore);
        assert_eq!(t.label, SentenceLabel::HallucinatedSentence);
        let t = tag_sentence(&vmap(&[("cat", Factual), ("vase", Uncertain)]), UncertainPolicy::Ignore);
        assert_eq!(t.label, SentenceLabel::NonHallucinatedSentence);
        let only_u = vmap(&[("vase", Uncertain)]);
        assert_eq!(tag_sentence(&only_u, UncertainPolicy::Ignore).label, SentenceLabel::Unusable);
        assert_eq!(tag_sentence(&only_u, UncertainPolicy::Factual).label, SentenceLabel::NonHallucinatedSentence);
        assert_eq!(tag_sentence(&only_u, UncertainPolicy::Hallucinated).label, SentenceLabel::HallucinatedSentence);
        assert_eq!(tag_sentence(&BTreeMap::new(), UncertainPolicy::Factual).label, SentenceLabel::Unusable);
    }

    #[test]
    fn effective_sets_follow_policy() {
        use Verdict::*;
        let v = vmap(&[("cat", Factual), ("vase", Uncertain), ("dog", Hallucinated)]);
        let t = tag_sentence(&v, UncertainPolicy::Factual);
        assert_eq!(t.factual_lemmas().collect::<Vec<_>>(), ["cat", "vase"]);
        assert_eq!(t.hallucinated_count(), 1);
        let t = tag_sentence(&v, UncertainPolicy::Ignore);
        assert_eq!(t.factual_lemmas().collect::<Vec<_>>(), ["cat"]);
    }

    // Brute-force reference: the tag table written out by counts.
    fn reference(vs: &[Verdict], policy: UncertainPolicy) -> SentenceLabel {
        let h = vs.iter().filter(|v| **v == Verdict::Hallucinated).count();
        let f = vs.iter().filter(|v| **v == Verdict::Factual).count();
        let u = vs.len() - h - f;
        let (h, f) = match policy {
            UncertainPolicy::Ignore => (h, f),
            UncertainPolicy::Factual => (h, f + u),
            UncertainPolicy::Hallucinated => (h + u, f),
        };
        match (h > 0, f > 0) {
            (true, _) => SentenceLabel::HallucinatedSentence,
            (false, true) => SentenceLabel::NonHallucinatedSentence,
            (false, false) => SentenceLabel::Unusable,
        }
    }

    #[test]
    fn exhaustive_truth_table() {
        let sets = verdict_multisets(4);
        // C(3+k-1, k) summed over k = 0..=4.
        assert_eq!(sets.len(), 1 + 3 + 6 + 10 + 15);
        for policy in [UncertainPolicy::Ignore, UncertainPolicy::Factual, UncertainPolicy::Hallucinated] {
            for s in &sets {
                assert_eq!(label_of(s.iter().copied(), policy), reference(s, policy), "{s:?} {policy}");
            }
        }
    }

    #[test]
    fn detector_failure_is_unusable_unknown_image_propagates() {
        let a = table("a", &["cat"]);
        let t =
            check_sentence("img1", &lemmas(&["cat"]), &DetectorPair::new(&a, &Down), UncertainPolicy::Ignore).unwrap();
        assert_eq!(t.label, SentenceLabel::Unusable);
        assert!(check_sentence("nope", &lemmas(&["cat"]), &DetectorPair::new(&a, &a), UncertainPolicy::Ignore).is_err());
        let t = check_sentence("img1", &[], &DetectorPair::new(&a, &a), UncertainPolicy::Factual).unwrap();
        assert_eq!(t.label, SentenceLabel::Unusable);
    }

    #[test]
    fn policy_round_trips_as_config_string() {
        for p in [UncertainPolicy::Ignore, UncertainPolicy::Factual, UncertainPolicy::Hallucinated] {
            assert_eq!(p.as_str().parse::<UncertainPolicy>().unwrap(), p);
        }
        assert!("maybe".parse::<UncertainPolicy>().is_err());
    }

    fn verdict() -> impl Strategy<Value = Verdict> {
        prop::sample::select(alloc::vec![Verdict::Hallucinated, Verdict::Factual, Verdict::Uncertain])
    }

    proptest! {
        #[test]
        fn swapping_detectors_keeps_verdicts(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 1..8)) {
            prop_assert_eq!(
                Verdict::from_flags(flags[0].0, flags[0].1),
                Verdict::from_flags(flags[0].1, flags[0].0)
            );
            let names: Vec<String> = (0..flags.len()).map(|i| alloc::format!("obj{i}")).collect();
            let pick = |side: fn(&(bool, bool)) -> bool| -> Vec<String> {
                names.iter().zip(&flags).filter(|(_, f)| side(f)).map(|(n, _)| n.clone()).collect()
            };
            let a = Table("a", pick(|f| f.0));
            let b = Table("b", pick(|f| f.1));
            let pair = DetectorPair::new(&a, &b);
            prop_assert_eq!(
                classify_objects("img1", &names, &pair).unwrap(),
                classify_objects("img1", &names, &pair.swapped()).unwrap()
            );
        }

        #[test]
        fn adding_a_hallucination_never_clears_the_tag(vs in prop::collection::vec(verdict(), 0..6)) {
            for policy in [UncertainPolicy::Ignore, UncertainPolicy::Factual, UncertainPolicy::Hallucinated] {
                let before = label_of(vs.iter().copied(), policy);
                let after = label_of(vs.iter().copied().chain([Verdict::Hallucinated]), policy);
                prop_assert_eq!(after, SentenceLabel::HallucinatedSentence);
                if before == SentenceLabel::HallucinatedSentence {
                    prop_assert_eq!(after, before);
                }
            }
        }
    }
}
