//! Built-in scene-graph triplet grammar.
//!
//! A deterministic pattern grammar over closed word classes and a shipped
//! verb lexicon. It recognises noun phrases (`det? modifier* head`),
//! verb relations (`NP verb prep? NP`, intransitive `NP verb`), copula
//! attributes (`NP is adj+`), prepositional attachments (`NP prep NP`),
//! existentials (`there is NP`), relative clauses, participles and
//! coordination. Prenominal modifiers become attribute triplets
//! `(head, is, modifier)`.
//!
//! Nouns keep their lowercase surface form; verbs are lemmatized so
//! predicates read like `sit on`.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::protocol::{BackendError, Triplet, TripletParseResult, TripletParser};

const VERB_LEXICON: &str = include_str!("../data/verbs.txt");

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "some", "any", "each", "every", "another", "its", "his", "their", "our", "my", "your", "no",
    "several", "many", "few", "both", "all", "much", "more", "most", "two", "three", "four", "five", "six", "seven",
    "eight", "nine", "ten", "eleven", "twelve", "dozen", "multiple", "various", "numerous", "couple",
];

const PRONOUNS: &[&str] = &[
    "i",
    "you",
    "he",
    "she",
    "it",
    "we",
    "they",
    "him",
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
    "nobody",
    "nothing",
];

const COPULAS: &[&str] = &["is", "are", "was", "were", "be", "been", "being", "am"];

const RELATIVES: &[&str] = &["who", "which", "whom", "whose"];

const CONJUNCTIONS: &[&str] = &["and", "or", "but", "while", "as", "where", "when", "whereas", "plus", "nor", "&"];

/// Longest first so multiword prepositions win.
const PREPOSITIONS: &[&str] = &[
    "in front of",
    "on top of",
    "in between",
    "next to",
    "close to",
    "out of",
    "on",
    "in",
    "at",
    "under",
    "underneath",
    "beneath",
    "near",
    "beside",
    "besides",
    "behind",
    "above",
    "below",
    "over",
    "with",
    "without",
    "of",
    "by",
    "across",
    "along",
    "against",
    "inside",
    "outside",
    "around",
    "between",
    "among",
    "through",
    "into",
    "onto",
    "from",
    "toward",
    "towards",
    "atop",
    "upon",
    "for",
    "to",
    "up",
    "down",
    "off",
    "past",
    "beyond",
    "within",
    "throughout",
    "alongside",
    "via",
    "like",
    "during",
    "near",
];

const ADVERBS: &[&str] = &[
    "very",
    "also",
    "too",
    "quite",
    "really",
    "just",
    "only",
    "still",
    "even",
    "almost",
    "nearly",
    "slightly",
    "rather",
    "somewhat",
    "here",
    "together",
    "nearby",
    "away",
    "outdoors",
    "indoors",
    "not",
    "never",
    "always",
    "often",
    "perhaps",
    "maybe",
    "possibly",
    "probably",
    "apparently",
    "then",
    "now",
    "currently",
    "seemingly",
];

/// Words ending in `-ly` that are not adverbs.
const LY_NOUNS: &[&str] = &[
    "family",
    "belly",
    "jelly",
    "lily",
    "rally",
    "bully",
    "fly",
    "butterfly",
    "ally",
    "holly",
    "assembly",
    "supply",
    "reply",
    "monopoly",
    "anomaly",
    "dragonfly",
    "firefly",
    "italy",
    "sly",
    "ugly",
    "curly",
    "friendly",
    "lovely",
    "lonely",
    "elderly",
    "early",
    "daily",
    "silly",
    "chilly",
    "hilly",
    "woolly",
    "holy",
    "only",
    "july",
    "molly",
    "gully",
    "trolly",
];

/// Words ending in `-ing` that are nouns.
const ING_NOUNS: &[&str] = &[
    "building",
    "ceiling",
    "clothing",
    "railing",
    "wedding",
    "evening",
    "morning",
    "ring",
    "king",
    "thing",
    "string",
    "wing",
    "spring",
    "icing",
    "frosting",
    "stuffing",
    "pudding",
    "dumpling",
    "siding",
    "awning",
    "bedding",
    "topping",
    "lightning",
    "lighting",
    "housing",
    "filling",
    "landing",
    "crossing",
    "opening",
    "ending",
    "carving",
    "molding",
    "seating",
    "sibling",
    "offspring",
    "bearing",
    "painting",
    "drawing",
    "sling",
    "swing",
    "earring",
    "something",
    "nothing",
    "anything",
    "everything",
    "ping",
    "sing",
    "ceiling",
    "flooring",
    "parking",
    "clearing",
    "sapling",
    "shilling",
    "herring",
    "pudding",
    "stocking",
    "wring",
];

const IRREGULAR_VERBS: &[(&str, &str)] = &[
    ("sat", "sit"),
    ("stood", "stand"),
    ("ran", "run"),
    ("held", "hold"),
    ("wore", "wear"),
    ("worn", "wear"),
    ("ate", "eat"),
    ("eaten", "eat"),
    ("gave", "give"),
    ("given", "give"),
    ("took", "take"),
    ("taken", "take"),
    ("rode", "ride"),
    ("ridden", "ride"),
    ("flew", "fly"),
    ("flown", "fly"),
    ("drove", "drive"),
    ("driven", "drive"),
    ("threw", "throw"),
    ("thrown", "throw"),
    ("caught", "catch"),
    ("began", "begin"),
    ("begun", "begin"),
    ("seen", "see"),
    ("made", "make"),
    ("got", "get"),
    ("went", "go"),
    ("gone", "go"),
    ("had", "have"),
    ("has", "have"),
    ("fell", "fall"),
    ("fallen", "fall"),
    ("hung", "hang"),
    ("built", "build"),
    ("sold", "sell"),
    ("bought", "buy"),
    ("brought", "bring"),
    ("led", "lead"),
    ("wrote", "write"),
    ("written", "write"),
    ("swam", "swim"),
    ("grew", "grow"),
    ("grown", "grow"),
    ("drew", "draw"),
    ("drawn", "draw"),
    ("hid", "hide"),
    ("hidden", "hide"),
    ("met", "meet"),
    ("shook", "shake"),
    ("slept", "sleep"),
    ("swung", "swing"),
    ("broke", "break"),
    ("broken", "break"),
    ("kept", "keep"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("sang", "sing"),
    ("sung", "sing"),
    ("knelt", "kneel"),
    ("leapt", "leap"),
    ("rose", "rise"),
    ("risen", "rise"),
    ("lying", "lie"),
    ("came", "come"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Form {
    Base,
    Third,
    Ing,
    Past,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Det,
    Pron(String),
    Cop,
    Prep(String),
    Conj,
    Comma,
    Rel,
    Exist,
    Word(String),
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Np {
    head: String,
    mods: Vec<String>,
    has_det: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Chunk {
    Np(Np),
    Verb { lemma: String, participle: bool },
    Prep(String),
    Cop,
    Conj,
    Comma,
    Rel,
    Exist,
    End,
}

impl Chunk {
    fn is_verbal(&self) -> bool {
        matches!(self, Chunk::Verb { .. } | Chunk::Cop)
    }
}

/// The fallback parser used when no external triplet backend is configured.
#[derive(Debug, Clone)]
pub struct PatternParser {
    verbs: BTreeSet<&'static str>,
}

impl Default for PatternParser {
    fn default() -> Self {
        Self::new()
    }
}

impl PatternParser {
    pub fn new() -> Self {
        let verbs = VERB_LEXICON.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
        Self { verbs }
    }

    /// Parses one sentence. Total: never fails, possibly returns nothing.
    pub fn triplets(&self, sentence: &str) -> Vec<Triplet> {
        let toks = self.tokenize(sentence);
        let chunks = self.chunk(&toks);
        let mut out = Vec::new();
        for t in Interpreter::default().run(&chunks) {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    fn tokenize(&self, sentence: &str) -> Vec<Tok> {
        // Lowercased words with punctuation markers interleaved.
        let mut raw: Vec<Option<String>> = Vec::new();
        for chunk in sentence.split_whitespace() {
            let chunk = chunk.trim_start_matches(|c: char| "\"'([{\u{201c}\u{2018}".contains(c));
            let core_end = chunk
                .char_indices()
                .rev()
                .find(|(_, c)| !",;:.!?\"')]}\u{201d}\u{2019}".contains(*c))
                .map_or(0, |(i, c)| i + c.len_utf8());
            let (word, tail) = chunk.split_at(core_end);
            let mut word = word.to_lowercase();
            for suffix in ["'s", "\u{2019}s"] {
                if let Some(w) = word.strip_suffix(suffix) {
                    word = w.to_string();
                }
            }
            if !word.is_empty() {
                raw.push(Some(word));
            }
            if tail.contains([',', ';', ':']) {
                raw.push(Some(",".into()));
            }
            if tail.contains(['.', '!', '?']) {
                raw.push(None);
            }
        }

        let mut toks = Vec::new();
        let mut i = 0;
        while i < raw.len() {
            let Some(word) = raw[i].as_deref() else {
                toks.push(Tok::End);
                i += 1;
                continue;
            };
            if word == "," {
                toks.push(Tok::Comma);
                i += 1;
                continue;
            }
            if let Some((prep, len)) = match_preposition(&raw[i..]) {
                toks.push(Tok::Prep(prep.to_string()));
                i += len;
                continue;
            }
            let next = raw.get(i + 1).and_then(|w| w.as_deref());
            let next_is_content = next.is_some_and(|n| self.is_content_word(n));
            let prev_is_word = matches!(toks.last(), Some(Tok::Word(_)));
            let tok = match word {
                "there" if next.is_some_and(|n| COPULAS.contains(&n)) => Some(Tok::Exist),
                "there" => None,
                "that" if prev_is_word => Some(Tok::Rel),
                "this" | "that" | "these" | "those" | "her" | "one" => {
                    Some(if next_is_content { Tok::Det } else { Tok::Pron(word.to_string()) })
                }
                w if DETERMINERS.contains(&w) => Some(Tok::Det),
                w if w.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.') => Some(Tok::Det),
                w if PRONOUNS.contains(&w) => Some(Tok::Pron(w.to_string())),
                w if COPULAS.contains(&w) => Some(Tok::Cop),
                w if RELATIVES.contains(&w) => Some(Tok::Rel),
                w if CONJUNCTIONS.contains(&w) => Some(Tok::Conj),
                w if is_adverb(w) => None,
                w => Some(Tok::Word(w.to_string())),
            };
            toks.extend(tok);
            i += 1;
        }
        toks
    }

    fn is_content_word(&self, w: &str) -> bool {
        !(DETERMINERS.contains(&w)
            || PRONOUNS.contains(&w)
            || COPULAS.contains(&w)
            || CONJUNCTIONS.contains(&w)
            || RELATIVES.contains(&w)
            || PREPOSITIONS.contains(&w)
            || w == ","
            || is_adverb(w))
    }

    fn chunk(&self, toks: &[Tok]) -> Vec<Chunk> {
        let mut chunks: Vec<Chunk> = Vec::new();
        let mut i = 0;
        let mut has_det = false;
        while i < toks.len() {
            match &toks[i] {
                Tok::Word(_) => {
                    let start = i;
                    while i < toks.len() && matches!(toks[i], Tok::Word(_)) {
                        i += 1;
                    }
                    let words: Vec<&str> = toks[start..i]
                        .iter()
                        .map(|t| match t {
                            Tok::Word(w) => w.as_str(),
                            _ => unreachable!(),
                        })
                        .collect();
                    let prev = chunks.last().cloned();
                    self.split_run(&words, prev.as_ref(), has_det, &mut chunks);
                    has_det = false;
                    continue;
                }
                Tok::Det => has_det = true,
                Tok::Pron(p) => {
                    chunks.push(Chunk::Np(Np { head: p.clone(), mods: Vec::new(), has_det: false }));
                    has_det = false;
                }
                Tok::Cop => chunks.push(Chunk::Cop),
                Tok::Prep(p) => chunks.push(Chunk::Prep(p.clone())),
                Tok::Conj => chunks.push(Chunk::Conj),
                Tok::Comma => chunks.push(Chunk::Comma),
                Tok::Rel => chunks.push(Chunk::Rel),
                Tok::Exist => chunks.push(Chunk::Exist),
                Tok::End => chunks.push(Chunk::End),
            }
            if !matches!(toks[i], Tok::Det) {
                has_det = false;
            }
            i += 1;
        }
        chunks
    }

    /// Splits a run of content words into noun phrases and verbs.
    fn split_run(&self, words: &[&str], prev: Option<&Chunk>, has_det: bool, out: &mut Vec<Chunk>) {
        let after_subject = matches!(prev, Some(Chunk::Np(_) | Chunk::Rel));
        let after_cop = matches!(prev, Some(Chunk::Cop));
        let after_link = matches!(prev, Some(Chunk::Conj | Chunk::Comma));
        let mut seg_start = 0;
        let mut seg_det = has_det;
        let mut after_verb = false;
        for j in 0..words.len() {
            let Some((lemma, form)) = self.verb_form(words[j]) else { continue };
            let last = j + 1 == words.len();
            let accept = if j == seg_start {
                if j == 0 && !has_det {
                    (after_subject && (form != Form::Past || last))
                        || (after_cop && matches!(form, Form::Ing | Form::Past))
                        || (after_link && matches!(form, Form::Third | Form::Ing))
                } else {
                    after_verb && form == Form::Ing
                }
            } else {
                match form {
                    Form::Base => looks_plural(words[j - 1]) || after_link,
                    Form::Third | Form::Ing => true,
                    Form::Past => last,
                }
            };
            if !accept {
                continue;
            }
            if j > seg_start {
                out.push(Chunk::Np(make_np(&words[seg_start..j], seg_det)));
            }
            out.push(Chunk::Verb { lemma, participle: form == Form::Ing });
            seg_start = j + 1;
            seg_det = false;
            after_verb = true;
        }
        if seg_start < words.len() {
            out.push(Chunk::Np(make_np(&words[seg_start..], seg_det)));
        }
    }

    fn verb_form(&self, w: &str) -> Option<(String, Form)> {
        if let Some((_, base)) = IRREGULAR_VERBS.iter().find(|(f, _)| *f == w) {
            let form = if w.ends_with("ing") {
                Form::Ing
            } else if *base == "have" && w == "has" || w == "does" {
                Form::Third
            } else {
                Form::Past
            };
            return Some((base.to_string(), form));
        }
        if self.verbs.contains(w) {
            return Some((w.to_string(), Form::Base));
        }
        let known = |c: &str| self.verbs.contains(c).then(|| c.to_string());
        if let Some(stem) = w.strip_suffix("ing") {
            if ING_NOUNS.contains(&w) || stem.len() < 2 {
                return None;
            }
            let mut cands = Vec::from([stem.to_string(), alloc::format!("{stem}e")]);
            if let Some(s) = undouble(stem) {
                cands.push(s);
            }
            if let Some(s) = stem.strip_suffix('y') {
                cands.push(alloc::format!("{s}ie"));
            }
            return cands.iter().find_map(|c| known(c)).map(|l| (l, Form::Ing));
        }
        if let Some(stem) = w.strip_suffix("ies") {
            if let Some(l) = known(&alloc::format!("{stem}y")) {
                return Some((l, Form::Third));
            }
        }
        if let Some(stem) = w.strip_suffix("ied") {
            if let Some(l) = known(&alloc::format!("{stem}y")) {
                return Some((l, Form::Past));
            }
        }
        if let Some(stem) = w.strip_suffix("ed") {
            let mut cands = Vec::from([stem.to_string(), alloc::format!("{stem}e")]);
            if let Some(s) = undouble(stem) {
                cands.push(s);
            }
            return cands.iter().find_map(|c| known(c)).map(|l| (l, Form::Past));
        }
        if let Some(stem) = w.strip_suffix("es") {
            if let Some(l) = known(stem) {
                return Some((l, Form::Third));
            }
        }
        if let Some(stem) = w.strip_suffix('s') {
            if !stem.ends_with('s') {
                return known(stem).map(|l| (l, Form::Third));
            }
        }
        None
    }
}

impl TripletParser for PatternParser {
    fn parse(&self, sentence: &str) -> Result<TripletParseResult, BackendError> {
        if sentence.trim().is_empty() {
            return Err(BackendError::InvalidRequest("sentence is empty".into()));
        }
        Ok(TripletParseResult { triplets: self.triplets(sentence), warning: None })
    }
}

/// An optional external parser backed by the built-in grammar. External
/// failures fall back to the grammar and set the result's warning.
pub struct WithFallback<P> {
    external: Option<P>,
    builtin: PatternParser,
}

impl<P: TripletParser> WithFallback<P> {
    pub fn new(external: Option<P>) -> Self {
        Self { external, builtin: PatternParser::new() }
    }
}

impl<P: TripletParser> TripletParser for WithFallback<P> {
    fn parse(&self, sentence: &str) -> Result<TripletParseResult, BackendError> {
        if sentence.trim().is_empty() {
            return Err(BackendError::InvalidRequest("sentence is empty".into()));
        }
        let Some(ext) = &self.external else {
            return self.builtin.parse(sentence);
        };
        match ext.parse(sentence).and_then(|r| r.validate().map(|()| r)) {
            Ok(r) => Ok(r),
            Err(e) => {
                let mut r = self.builtin.parse(sentence)?;
                r.warning = Some(alloc::format!("external parser failed, used built-in grammar: {e}"));
                Ok(r)
            }
        }
    }
}

fn match_preposition(raw: &[Option<String>]) -> Option<(&'static str, usize)> {
    PREPOSITIONS.iter().find_map(|p| {
        let parts: Vec<&str> = p.split(' ').collect();
        let hit = parts.len() <= raw.len() && parts.iter().zip(raw).all(|(part, w)| w.as_deref() == Some(*part));
        hit.then_some((*p, parts.len()))
    })
}

fn is_adverb(w: &str) -> bool {
    ADVERBS.contains(&w) || (w.len() >= 5 && w.ends_with("ly") && !LY_NOUNS.contains(&w))
}

fn looks_plural(w: &str) -> bool {
    w.ends_with('s') && !(w.ends_with("ss") || w.ends_with("us") || w.ends_with("is"))
}

fn undouble(stem: &str) -> Option<String> {
    let b = stem.as_bytes();
    (b.len() >= 3 && b[b.len() - 1] == b[b.len() - 2]).then(|| stem[..stem.len() - 1].to_string())
}

fn make_np(words: &[&str], has_det: bool) -> Np {
    let (head, mods) = words.split_last().expect("noun phrase has at least one word");
    Np { head: head.to_string(), mods: mods.iter().map(|m| m.to_string()).collect(), has_det }
}

/// Walks chunks left to right and emits triplets.
#[derive(Default)]
struct Interpreter {
    out: Vec<Triplet>,
    clause_subjects: Vec<String>,
    clause_has_predicate: bool,
    last_np: Option<String>,
    pending: Option<(String, Vec<String>)>,
    last_rel: Option<(String, Vec<String>)>,
    cop_subjects: Option<Vec<String>>,
    cop_open: Option<Vec<String>>,
    existential: bool,
    exist_nps: Vec<String>,
    deferred_prep: Option<String>,
    deferred: Vec<(String, String)>,
}

impl Interpreter {
    fn emit(&mut self, s: &str, p: &str, o: &str) {
        self.out.push(Triplet::new(s, p, o));
    }

    fn set_subjects(&mut self, subjects: Vec<String>) {
        self.clause_subjects = subjects;
        self.clause_has_predicate = false;
        let deferred = core::mem::take(&mut self.deferred);
        for (p, o) in deferred {
            for s in self.clause_subjects.clone() {
                self.emit(&s, &p, &o);
            }
        }
    }

    fn run(mut self, chunks: &[Chunk]) -> Vec<Triplet> {
        let mut i = 0;
        while i < chunks.len() {
            let prev = i.checked_sub(1).map(|p| &chunks[p]);
            let next = chunks.get(i + 1);
            match &chunks[i] {
                Chunk::Np(np) => self.noun_phrase(np, prev, next),
                Chunk::Verb { lemma, participle } => {
                    self.cop_open = None;
                    let subjects = if matches!(prev, Some(Chunk::Rel)) {
                        self.last_np.iter().cloned().collect()
                    } else if let Some(s) = self.cop_subjects.take() {
                        s
                    } else if *participle && matches!(prev, Some(Chunk::Np(_))) {
                        self.last_np.iter().cloned().collect()
                    } else if !self.clause_subjects.is_empty() {
                        self.clause_subjects.clone()
                    } else {
                        self.last_np.iter().cloned().collect()
                    };
                    let mut pred = lemma.clone();
                    if let Some(Chunk::Prep(p)) = next {
                        pred.push(' ');
                        pred.push_str(p);
                        i += 1;
                    }
                    if matches!(chunks.get(i + 1), Some(Chunk::Np(_))) {
                        self.pending = Some((pred, subjects));
                    } else {
                        for s in &subjects {
                            self.emit(s, &pred, "");
                        }
                        self.last_rel = Some((pred, subjects));
                    }
                    self.clause_has_predicate = true;
                }
                Chunk::Prep(p) => {
                    self.cop_open = None;
                    if let Some(s) = self.cop_subjects.take() {
                        self.pending = Some((p.clone(), s));
                    } else if let Some(l) = self.last_np.clone() {
                        self.pending = Some((p.clone(), Vec::from([l])));
                    } else {
                        self.deferred_prep = Some(p.clone());
                    }
                }
                Chunk::Cop => {
                    if matches!(prev, Some(Chunk::Exist)) {
                        self.existential = true;
                    } else {
                        let subjects = if matches!(prev, Some(Chunk::Rel)) || self.clause_subjects.is_empty() {
                            self.last_np.iter().cloned().collect()
                        } else {
                            self.clause_subjects.clone()
                        };
                        self.cop_subjects = Some(subjects);
                        self.clause_has_predicate = true;
                    }
                }
                Chunk::Conj | Chunk::Comma | Chunk::Rel | Chunk::Exist => {}
                Chunk::End => self.finish_sentence(),
            }
            i += 1;
        }
        self.finish_sentence();
        self.out
    }

    fn noun_phrase(&mut self, np: &Np, prev: Option<&Chunk>, next: Option<&Chunk>) {
        let head = np.head.clone();
        if let Some(subjects) = self.cop_subjects.take() {
            if np.has_det {
                for s in &subjects {
                    self.emit(s, "is", &head);
                }
                self.attributes(np);
            } else {
                for w in np.mods.iter().chain(core::iter::once(&np.head)) {
                    for s in &subjects {
                        self.emit(s, "is", w);
                    }
                }
                self.cop_open = Some(subjects.clone());
            }
            self.last_np = subjects.last().cloned();
            return;
        }
        let linked = matches!(prev, Some(Chunk::Conj | Chunk::Comma));
        if linked && !np.has_det && !next.is_some_and(Chunk::is_verbal) {
            if let Some(subjects) = self.cop_open.clone() {
                for w in np.mods.iter().chain(core::iter::once(&np.head)) {
                    for s in &subjects {
                        self.emit(s, "is", w);
                    }
                }
                return;
            }
        }
        self.cop_open = None;
        if let Some((pred, subjects)) = self.pending.take() {
            for s in &subjects {
                self.emit(s, &pred, &head);
            }
            self.attributes(np);
            self.last_rel = Some((pred, subjects));
            self.last_np = Some(head);
            return;
        }
        self.attributes(np);
        if let Some(p) = self.deferred_prep.take() {
            self.deferred.push((p, head));
            return;
        }
        if self.existential {
            self.exist_nps.push(head.clone());
            if linked || self.clause_subjects.is_empty() {
                let mut s = self.clause_subjects.clone();
                s.push(head.clone());
                self.set_subjects(s);
            } else {
                self.set_subjects(Vec::from([head.clone()]));
            }
        } else if linked {
            if next.is_some_and(Chunk::is_verbal) && self.clause_has_predicate {
                self.set_subjects(Vec::from([head.clone()]));
            } else if !self.clause_has_predicate && !self.clause_subjects.is_empty() {
                self.clause_subjects.push(head.clone());
            } else if let Some((pred, subjects)) = self.last_rel.clone() {
                for s in &subjects {
                    self.emit(s, &pred, &head);
                }
            } else {
                self.set_subjects(Vec::from([head.clone()]));
            }
        } else {
            self.set_subjects(Vec::from([head.clone()]));
        }
        self.last_np = Some(head);
    }

    fn attributes(&mut self, np: &Np) {
        for m in &np.mods {
            self.emit(&np.head, "is", m);
        }
    }

    fn finish_sentence(&mut self) {
        for np in core::mem::take(&mut self.exist_nps) {
            if !self.out.iter().any(|t| t.subject == np || t.object == np) {
                self.emit(&np, "exist", "");
            }
        }
        *self = Interpreter { out: core::mem::take(&mut self.out), ..Interpreter::default() };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Vec<(String, String, String)> {
        PatternParser::new().triplets(s).into_iter().map(Into::into).collect()
    }

    fn t(s: &str, p: &str, o: &str) -> (String, String, String) {
        (s.into(), p.into(), o.into())
    }

    #[test]
    fn worked_example_sentence() {
        let got = parse("A little black cat sits on a chair next to a table.");
        for want in [
            t("cat", "is", "little"),
            t("cat", "is", "black"),
            t("cat", "sit on", "chair"),
            t("chair", "next to", "table"),
        ] {
            assert!(got.contains(&want), "missing {want:?} in {got:?}");
        }
        assert_eq!(got.len(), 4);
    }

    #[test]
    fn transitive_with_attribute() {
        assert_eq!(parse("A man holds a red umbrella."), [t("man", "hold", "umbrella"), t("umbrella", "is", "red")]);
    }

    #[test]
    fn third_person_verb_after_head_noun() {
        // Regression: "faces" used to be read as a plural head with "chair"
        // as its modifier.
        assert_eq!(parse("The chair faces a window."), [t("chair", "face", "window")]);
        assert_eq!(parse("A dog naps near the door."), [t("dog", "nap near", "door")]);
    }

    #[test]
    fn no_structure_yields_nothing() {
        assert!(parse("Hello.").is_empty());
        assert!(parse("A cat.").is_empty());
    }

    #[test]
    fn copula_attributes() {
        assert_eq!(parse("The cat is black."), [t("cat", "is", "black")]);
        assert_eq!(parse("The sky is blue and cloudy."), [t("sky", "is", "blue"), t("sky", "is", "cloudy")]);
        assert_eq!(parse("The cat is on the table."), [t("cat", "on", "table")]);
    }

    #[test]
    fn intransitive_verbs_keep_their_subject() {
        assert_eq!(parse("A cat sits."), [t("cat", "sit", "")]);
        assert_eq!(parse("A dog runs."), [t("dog", "run", "")]);
        assert_eq!(parse("Two dogs run in the park."), [t("dogs", "run in", "park")]);
    }

    #[test]
    fn progressive_and_participles() {
        assert_eq!(parse("A woman is holding an umbrella."), [t("woman", "hold", "umbrella")]);
        assert_eq!(parse("A dog lying on the grass."), [t("dog", "lie on", "grass")]);
        assert_eq!(parse("A man wearing a hat rides a horse."), [t("man", "wear", "hat"), t("man", "ride", "horse")]);
    }

    #[test]
    fn existential_and_coordination() {
        assert_eq!(parse("There is a cat on the mat."), [t("cat", "on", "mat")]);
        assert_eq!(parse("There are two dogs and a cat."), [t("dogs", "exist", ""), t("cat", "exist", "")]);
        assert_eq!(parse("A cat and a dog sit on a bed."), [t("cat", "sit on", "bed"), t("dog", "sit on", "bed")]);
        assert_eq!(parse("A man holds a cup and a plate."), [t("man", "hold", "cup"), t("man", "hold", "plate")]);
        assert_eq!(
            parse("A cat sleeps on a sofa and a dog lies on the floor."),
            [t("cat", "sleep on", "sofa"), t("dog", "lie on", "floor")]
        );
    }

    #[test]
    fn main_verb_takes_clause_subject() {
        assert_eq!(
            parse("The celebration of happiness began at noon."),
            [t("celebration", "of", "happiness"), t("celebration", "begin at", "noon")]
        );
        assert_eq!(
            parse("A woman in a red dress walks down the street."),
            [t("woman", "in", "dress"), t("dress", "is", "red"), t("woman", "walk down", "street")]
        );
    }

    #[test]
    fn leading_prepositional_phrase_attaches_to_subject() {
        assert_eq!(parse("On the table, a vase stands."), [t("vase", "on", "table"), t("vase", "stand", "")]);
    }

    #[test]
    fn relative_clause_and_adverbs() {
        assert_eq!(parse("A man who is holding a kite smiles."), [t("man", "hold", "kite"), t("man", "smile", "")]);
        assert_eq!(
            parse("A dog quickly runs across the very green field."),
            [t("dog", "run across", "field"), t("field", "is", "green")]
        );
    }

    #[test]
    fn nouns_ending_in_ing_are_not_verbs() {
        assert_eq!(
            parse("A tall building stands near a bridge."),
            [t("building", "is", "tall"), t("building", "stand near", "bridge")]
        );
    }

    #[test]
    fn pronoun_subjects() {
        assert_eq!(parse("It is sitting on a bench."), [t("it", "sit on", "bench")]);
    }

    #[test]
    fn fallback_reports_warning() {
        struct Broken;
        impl TripletParser for Broken {
            fn parse(&self, _: &str) -> Result<TripletParseResult, BackendError> {
                Err(BackendError::Unreachable("down".into()))
            }
        }
        let p = WithFallback::new(Some(Broken));
        let r = p.parse("A cat sits.").unwrap();
        assert!(r.warning.is_some());
        assert_eq!(r.triplets, [Triplet::new("cat", "sit", "")]);
        let none: WithFallback<Broken> = WithFallback::new(None);
        assert!(none.parse("A cat sits.").unwrap().warning.is_none());
        assert!(none.parse("  ").is_err());
    }
}
