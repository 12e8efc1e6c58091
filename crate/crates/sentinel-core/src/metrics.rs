//! AMBER generative metrics over object sets.
//!
//! With `R'` the response objects, `A` the annotated objects and `H` the
//! hallucination targets: CHAIR = 1 − |R'∩A|/|R'|, Hal = 1 iff CHAIR ≠ 0,
//! Cog = |R'∩H|/|R'|. An empty `R'` scores 0 everywhere and is flagged.

use alloc::collections::BTreeSet;
use alloc::string::String;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricInputs {
    pub response_objects: BTreeSet<String>,
    pub annotated_objects: BTreeSet<String>,
    #[serde(default)]
    pub hallucinatory_targets: BTreeSet<String>,
}

impl MetricInputs {
    pub fn new<'a>(
        response: impl IntoIterator<Item = &'a str>,
        annotated: impl IntoIterator<Item = &'a str>,
        targets: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        Self {
            response_objects: response.into_iter().map(String::from).collect(),
            annotated_objects: annotated.into_iter().map(String::from).collect(),
            hallucinatory_targets: targets.into_iter().map(String::from).collect(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.response_objects.is_empty()
    }
}

pub fn chair(m: &MetricInputs) -> f64 {
    let n = m.response_objects.len();
    if n == 0 {
        return 0.0;
    }
    let grounded = m.response_objects.intersection(&m.annotated_objects).count();
    (n - grounded) as f64 / n as f64
}

pub fn hal(m: &MetricInputs) -> u8 {
    u8::from(chair(m) != 0.0)
}

pub fn cog(m: &MetricInputs) -> f64 {
    let n = m.response_objects.len();
    if n == 0 {
        return 0.0;
    }
    m.response_objects.intersection(&m.hallucinatory_targets).count() as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chair: f64,
    pub hal: u8,
    pub cog: f64,
    /// Empty response object set; all scores are 0 by convention.
    pub degenerate: bool,
}

pub fn evaluate(m: &MetricInputs) -> MetricReport {
    MetricReport { chair: chair(m), hal: hal(m), cog: cog(m), degenerate: m.is_degenerate() }
}

/// Corpus means of CHAIR, Hal and Cog, plus the number of degenerate records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub records: usize,
    pub chair: f64,
    pub hal: f64,
    pub cog: f64,
    pub degenerate: usize,
}

pub fn summarize<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> MetricSummary {
    let mut s = MetricSummary::default();
    for r in reports {
        s.records += 1;
        s.chair += r.chair;
        s.hal += f64::from(r.hal);
        s.cog += r.cog;
        s.degenerate += usize::from(r.degenerate);
    }
    if s.records > 0 {
        let n = s.records as f64;
        s.chair /= n;
        s.hal /= n;
        s.cog /= n;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(r: &[&str], a: &[&str], h: &[&str]) -> MetricInputs {
        MetricInputs::new(r.iter().copied(), a.iter().copied(), h.iter().copied())
    }

    #[test]
    fn worked_cases() {
        let x = m(&["cat", "dog"], &["cat"], &[]);
        assert_eq!((chair(&x), hal(&x)), (0.5, 1));
        let x = m(&["cat", "dog"], &["cat", "dog"], &[]);
        assert_eq!((chair(&x), hal(&x)), (0.0, 0));
        let x = m(&["cat", "dog"], &["cat"], &["dog"]);
        assert_eq!(cog(&x), 0.5);
    }

    #[test]
    fn degenerate_response() {
        let r = evaluate(&m(&[], &["cat"], &["dog"]));
        assert_eq!(r, MetricReport { chair: 0.0, hal: 0, cog: 0.0, degenerate: true });
    }

    #[test]
    fn summary_means() {
        let rs = [evaluate(&m(&["cat", "dog"], &["cat"], &["dog"])), evaluate(&m(&["cat"], &["cat"], &[]))];
        let s = summarize(&rs);
        assert_eq!((s.records, s.chair, s.hal, s.cog, s.degenerate), (2, 0.25, 0.5, 0.25, 0));
    }

    fn objs() -> impl Strategy<Value = BTreeSet<String>> {
        prop::collection::btree_set(
            prop::sample::select(alloc::vec!["a", "b", "c", "d", "e", "f"]).prop_map(String::from),
            0..6,
        )
    }

    proptest! {
        #[test]
        fn ranges_and_hal_iff_chair(r in objs(), a in objs(), h in objs()) {
            let x = MetricInputs { response_objects: r, annotated_objects: a, hallucinatory_targets: h };
            let rep = evaluate(&x);
            prop_assert!((0.0..=1.0).contains(&rep.chair));
            prop_assert!((0.0..=1.0).contains(&rep.cog));
            prop_assert_eq!(rep.hal == 0, rep.chair == 0.0);
        }
    }
}
