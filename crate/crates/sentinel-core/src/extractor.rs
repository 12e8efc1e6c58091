//! From a sentence to the set of concrete object lemmas worth verifying.
//!
//! Triplets come from the configured parser. Attribute relations (`is` /
//! `are`) contribute only their subject; every other relation contributes
//! subject and object. Slots are nominal by construction, so part-of-speech
//! filtering reduces to a pronoun / determiner stoplist. Remaining words are
//! lemmatized and dropped when their lexicographer category is abstract.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lexnames::LexnameTable;
use crate::protocol::{BackendError, Triplet, TripletParser};

const STOPWORDS: &[&str] = &[
    "i",
    "you",
    "he",
    "she",
    "it",
    "we",
    "they",
    "him",
    "her",
    "them",
    "me",
    "us",
    "itself",
    "themselves",
    "himself",
    "herself",
    "someone",
    "something",
    "everyone",
    "everything",
    "anyone",
    "anything",
    "nobody",
    "nothing",
    "this",
    "that",
    "these",
    "those",
    "there",
    "here",
    "one",
    "ones",
    "who",
    "which",
    "what",
    "a",
    "an",
    "the",
    "some",
    "all",
    "both",
    "each",
    "other",
    "another",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Subject,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCandidate {
    pub surface: String,
    pub lemma: String,
    pub source_triplet_index: usize,
    pub slot: Slot,
}

/// Entities deduplicated by lemma, ordered by lemma. The first occurrence of
/// each lemma is kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntitySet(Vec<EntityCandidate>);

impl EntitySet {
    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|e| e.lemma.as_str())
    }

    pub fn lemma_list(&self) -> Vec<String> {
        self.lemmas().map(String::from).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntityCandidate> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.0.binary_search_by(|e| e.lemma.as_str().cmp(lemma)).is_ok()
    }

    fn insert(&mut self, e: EntityCandidate) {
        if let Err(pos) = self.0.binary_search_by(|x| x.lemma.cmp(&e.lemma)) {
            self.0.insert(pos, e);
        }
    }
}

/// Parses `sentence` and filters the triplet slots down to object lemmas.
pub fn extract_entities(
    sentence: &str,
    parser: &dyn TripletParser,
    lexnames: &LexnameTable,
) -> Result<EntitySet, BackendError> {
    if sentence.trim().is_empty() {
        return Err(BackendError::InvalidRequest("sentence is empty".into()));
    }
    let parsed = parser.parse(sentence)?;
    Ok(entities_from_triplets(sentence, &parsed.triplets, lexnames))
}

/// The filtering half of [`extract_entities`], for already-parsed triplets.
pub fn entities_from_triplets(sentence: &str, triplets: &[Triplet], lexnames: &LexnameTable) -> EntitySet {
    let proper = proper_nouns(sentence);
    let mut set = EntitySet::default();
    for (idx, t) in triplets.iter().enumerate() {
        let mut slots = Vec::from([(Slot::Subject, t.subject.as_str())]);
        if !t.is_attribute() {
            slots.push((Slot::Object, t.object.as_str()));
        }
        for (slot, text) in slots {
            let Some(surface) = head_word(text) else { continue };
            if let Some(e) = candidate(surface, slot, idx, &proper, lexnames) {
                set.insert(e);
            }
        }
    }
    set
}

/// Lemma a triplet slot maps to before category filtering, if any. Used to
/// state the subset property of extraction.
pub fn slot_lemma(text: &str, lexnames: &LexnameTable) -> Option<String> {
    let w = head_word(text)?;
    Some(lexnames.lemma_of(w))
}

fn candidate(
    surface: &str,
    slot: Slot,
    idx: usize,
    proper: &[String],
    lexnames: &LexnameTable,
) -> Option<EntityCandidate> {
    let lower = surface.to_lowercase();
    if STOPWORDS.contains(&lower.as_str()) || !lower.chars().any(char::is_alphabetic) {
        return None;
    }
    let lemma = if proper.contains(&lower) {
        lower
    } else {
        let lemma = lexnames.lemma_of(&lower);
        if lemma.is_empty() || lexnames.get(&lemma).is_excluded() {
            return None;
        }
        lemma
    };
    Some(EntityCandidate { surface: surface.to_string(), lemma, source_triplet_index: idx, slot })
}

/// Last word of a slot, which for nominal slots is the head noun.
fn head_word(text: &str) -> Option<&str> {
    text.split_whitespace()
        .last()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-'))
        .filter(|w| !w.is_empty())
}

/// Lowercased words capitalized somewhere other than sentence-initially.
fn proper_nouns(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .skip(1)
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-'))
        .filter(|w| w.chars().next().is_some_and(char::is_uppercase))
        .map(|w| w.trim_end_matches("'s").to_lowercase())
        .collect()
}
