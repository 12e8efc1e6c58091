//! Lemma to lexicographer-category table.
//!
//! File format: one `lemma<TAB>lexname` record per line, UTF-8, sorted by
//! lemma. The shipped table is derived from the WordNet 3.0 noun database,
//! taking the category of each lemma's first (most frequent) sense.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

const BUILTIN_TABLE: &str = include_str!("../data/lexnames.tsv");

macro_rules! lexnames {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// WordNet noun lexicographer file.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Lexname {
            $($variant,)*
            /// Lemma missing from the table.
            Unknown,
        }

        impl Lexname {
            pub const ALL: &'static [Lexname] = &[$(Lexname::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Lexname::$variant => $name,)*
                    Lexname::Unknown => "unknown",
                }
            }
        }

        impl FromStr for Lexname {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($name => Ok(Lexname::$variant),)*
                    _ => Err(()),
                }
            }
        }
    };
}

lexnames! {
    Tops => "noun.Tops",
    Act => "noun.act",
    Animal => "noun.animal",
    Artifact => "noun.artifact",
    Attribute => "noun.attribute",
    Body => "noun.body",
    Cognition => "noun.cognition",
    Communication => "noun.communication",
    Event => "noun.event",
    Feeling => "noun.feeling",
    Food => "noun.food",
    Group => "noun.group",
    Location => "noun.location",
    Motive => "noun.motive",
    Object => "noun.object",
    Person => "noun.person",
    Phenomenon => "noun.phenomenon",
    Plant => "noun.plant",
    Possession => "noun.possession",
    Process => "noun.process",
    Quantity => "noun.quantity",
    Relation => "noun.relation",
    Shape => "noun.shape",
    State => "noun.state",
    Substance => "noun.substance",
    Time => "noun.time",
}

/// Abstract categories whose lemmas are never treated as checkable objects.
pub const EXCLUDED: [Lexname; 12] = [
    Lexname::Feeling,
    Lexname::Attribute,
    Lexname::State,
    Lexname::Shape,
    Lexname::Time,
    Lexname::Quantity,
    Lexname::Cognition,
    Lexname::Event,
    Lexname::Communication,
    Lexname::Relation,
    Lexname::Act,
    Lexname::Location,
];

impl Lexname {
    pub fn is_excluded(self) -> bool {
        EXCLUDED.contains(&self)
    }
}

impl fmt::Display for Lexname {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("lexname table line {line}: {reason}")]
pub struct LexnameParseError {
    pub line: usize,
    pub reason: String,
}

/// Immutable lemma to category lookup. Misses return [`Lexname::Unknown`].
#[derive(Debug, Clone, Default)]
pub struct LexnameTable {
    entries: Vec<(Box<str>, Lexname)>,
}

impl LexnameTable {
    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_TABLE).expect("shipped lexname table is well-formed")
    }

    pub fn from_tsv(text: &str) -> Result<Self, LexnameParseError> {
        let mut entries: Vec<(Box<str>, Lexname)> = Vec::new();
        let mut sorted = true;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| LexnameParseError { line: i + 1, reason: reason.to_string() };
            let (lemma, name) = line.split_once('\t').ok_or_else(|| err("expected lemma<TAB>lexname"))?;
            if lemma.is_empty() {
                return Err(err("empty lemma"));
            }
            let cat =
                name.trim_end().parse::<Lexname>().map_err(|_| err(&alloc::format!("unknown lexname {name:?}")))?;
            if let Some((prev, _)) = entries.last() {
                if **prev >= *lemma {
                    sorted = false;
                }
            }
            entries.push((lemma.into(), cat));
        }
        if !sorted {
            // Stable sort keeps the first record for a duplicated lemma first.
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            entries.dedup_by(|later, earlier| later.0 == earlier.0);
        }
        Ok(Self { entries })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Lexname)>) -> Self {
        let mut entries: Vec<(Box<str>, Lexname)> = pairs.into_iter().map(|(l, c)| (l.into(), c)).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries.dedup_by(|later, earlier| later.0 == earlier.0);
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, lemma: &str) -> Lexname {
        self.entries.binary_search_by(|(l, _)| (**l).cmp(lemma)).map_or(Lexname::Unknown, |i| self.entries[i].1)
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.get(lemma) != Lexname::Unknown
    }

    /// Lemma of `word`, validated against this table's lemma set.
    pub fn lemma_of(&self, word: &str) -> String {
        crate::lemma::lemma_with(word, |w| self.contains(w))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Lexname)> {
        self.entries.iter().map(|(l, c)| (&**l, *c))
    }
}

/// Builtin table parsed once per test binary.
#[cfg(test)]
pub(crate) fn shared() -> &'static LexnameTable {
    static TABLE: std::sync::OnceLock<LexnameTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(LexnameTable::builtin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_table_categories() {
        let t = LexnameTable::builtin();
        assert!(t.len() > 50_000);
        assert_eq!(t.get("cat"), Lexname::Animal);
        assert_eq!(t.get("chair"), Lexname::Artifact);
        assert_eq!(t.get("happiness"), Lexname::State);
        assert_eq!(t.get("noon"), Lexname::Time);
        assert_eq!(t.get("celebration"), Lexname::Event);
        assert_eq!(t.get("qwxzv"), Lexname::Unknown);
    }

    #[test]
    fn builtin_is_sorted_and_unique() {
        let t = LexnameTable::builtin();
        let lemmas: Vec<&str> = t.iter().map(|(l, _)| l).collect();
        assert!(lemmas.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn exclusion_list_has_twelve_categories() {
        assert_eq!(EXCLUDED.len(), 12);
        assert!(Lexname::Location.is_excluded());
        assert!(!Lexname::Artifact.is_excluded());
        assert!(!Lexname::Unknown.is_excluded());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = LexnameTable::from_tsv("cat\tnoun.animal\ndog noun.animal\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = LexnameTable::from_tsv("cat\tnoun.feline\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn unsorted_input_is_sorted_first_record_wins() {
        let t = LexnameTable::from_tsv("dog\tnoun.animal\ncat\tnoun.animal\ndog\tnoun.artifact\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("dog"), Lexname::Animal);
    }

    #[test]
    fn table_backed_lemmas() {
        let t = LexnameTable::builtin();
        assert_eq!(t.lemma_of("glasses"), "glass");
        assert_eq!(t.lemma_of("Chairs"), "chair");
        assert_eq!(t.lemma_of("buses"), "bus");
        assert_eq!(t.lemma_of("people"), "person");
    }
}
