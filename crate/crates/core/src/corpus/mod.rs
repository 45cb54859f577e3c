//! Monostylistic sentence corpora: loading, normalization, filtering and
//! the synthetic template corpus used for desk-scale runs.

mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{synth_generate, synth_generate_split, SynthCorpora, ADJECTIVE_PAIRS};

/// One style of a task. `surface` is the literal tag token prefixed to
/// sequences that should be produced in this style.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleTag {
    pub id: String,
    pub surface: String,
}

impl StyleTag {
    /// Builds a tag whose surface is `<id>`.
    pub fn new(id: &str) -> Self {
        StyleTag {
            id: id.to_string(),
            surface: format!("<{id}>"),
        }
    }
}

impl fmt::Display for StyleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

impl FromStr for StyleTag {
    type Err = Error;

    /// Accepts either `pos` or `<pos>`.
    fn from_str(s: &str) -> Result<Self> {
        let id = s.trim().trim_start_matches('<').trim_end_matches('>');
        if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '<' || c == '>') {
            return Err(Error::InvalidArgument(format!("bad style tag {s:?}")));
        }
        Ok(StyleTag::new(id))
    }
}

/// The two styles of a task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePair {
    pub a: StyleTag,
    pub b: StyleTag,
}

impl StylePair {
    pub fn new(a: StyleTag, b: StyleTag) -> Result<Self> {
        if a.id == b.id || a.surface == b.surface {
            return Err(Error::InvalidArgument(format!(
                "style tags must be distinct, got {a} twice"
            )));
        }
        Ok(StylePair { a, b })
    }

    pub fn opposite(&self, tag: &StyleTag) -> &StyleTag {
        if *tag == self.a {
            &self.b
        } else {
            &self.a
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: u32,
    pub text: String,
    pub word_count: usize,
    pub style: StyleTag,
}

impl Sentence {
    pub fn new(id: u32, text: &str, style: StyleTag) -> Self {
        Sentence {
            id,
            text: text.to_string(),
            word_count: word_count(text),
            style,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleCorpus {
    pub style: StyleTag,
    pub split: Split,
    pub sentences: Vec<Sentence>,
    /// Steps applied to the text, in order.
    pub preprocessing: Vec<String>,
}

impl StyleCorpus {
    /// Builds a corpus from raw lines; ids follow line order.
    pub fn from_lines<S: AsRef<str>>(style: StyleTag, split: Split, lines: &[S]) -> Self {
        let sentences = lines
            .iter()
            .map(|l| l.as_ref())
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| Sentence::new(i as u32, l, style.clone()))
            .collect();
        StyleCorpus {
            style,
            split,
            sentences,
            preprocessing: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.text.as_str())
    }

    fn with_sentences(&self, sentences: Vec<Sentence>, step: Option<String>) -> StyleCorpus {
        let mut preprocessing = self.preprocessing.clone();
        preprocessing.extend(step);
        StyleCorpus {
            style: self.style.clone(),
            split: self.split,
            sentences,
            preprocessing,
        }
    }

    /// Writes one sentence per line with `\n` terminators.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_lines(path, self.texts())
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercases, puts spaces around ASCII punctuation and collapses runs of
/// whitespace. Stands in for truecasing and Moses-style tokenization.
pub fn normalize_text(text: &str) -> String {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_punctuation() {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else if c.is_whitespace() {
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub const NORMALIZE_STEP: &str = "normalize: lowercase, punctuation spacing, whitespace collapse";

pub fn normalize(corpus: &StyleCorpus) -> StyleCorpus {
    let sentences = corpus
        .sentences
        .iter()
        .filter_map(|s| {
            let text = normalize_text(&s.text);
            (!text.is_empty()).then(|| Sentence::new(s.id, &text, s.style.clone()))
        })
        .collect();
    corpus.with_sentences(sentences, Some(NORMALIZE_STEP.to_string()))
}

pub fn load_corpus(path: &Path, style: StyleTag, split: Split) -> Result<StyleCorpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    for (lineno, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::InvalidUtf8 {
            path: path.to_path_buf(),
            line: lineno + 1,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let id = sentences.len() as u32;
        sentences.push(Sentence::new(id, line.trim(), style.clone()));
    }
    Ok(StyleCorpus {
        style,
        split,
        sentences,
        preprocessing: Vec::new(),
    })
}

/// Reads a plain line file (no style), dropping empty lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let corpus = load_corpus(path, StyleTag::new("raw"), Split::Test)?;
    Ok(corpus.sentences.into_iter().map(|s| s.text).collect())
}

pub fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut out = Vec::new();
    for l in lines {
        out.extend_from_slice(l.as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn filter_by_length(corpus: &StyleCorpus, min_words: usize, max_words: usize) -> Result<StyleCorpus> {
    if min_words < 1 || min_words > max_words {
        return Err(Error::InvalidArgument(format!(
            "length bounds must satisfy 1 <= min <= max, got ({min_words}, {max_words})"
        )));
    }
    let kept = corpus
        .sentences
        .iter()
        .filter(|s| (min_words..=max_words).contains(&s.word_count))
        .cloned()
        .collect();
    Ok(corpus.with_sentences(kept, Some(format!("length filter [{min_words}, {max_words}]"))))
}

/// Keeps the first occurrence of each exact text.
pub fn dedup(corpus: &StyleCorpus) -> StyleCorpus {
    let mut seen = HashSet::new();
    let kept = corpus
        .sentences
        .iter()
        .filter(|s| seen.insert(s.text.as_str()))
        .cloned()
        .collect();
    corpus.with_sentences(kept, Some("dedup (exact match)".to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    entries: HashSet<String>,
}

impl Lexicon {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Lexicon {
            entries: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Lexicon::new(read_lines(path)?))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn matches(&self, text: &str) -> bool {
        text.split_whitespace()
            .any(|w| self.entries.contains(&w.to_lowercase()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LexiconMode {
    /// Keep sentences containing at least one lexicon word.
    Require,
    /// Keep sentences containing none.
    Exclude,
}

pub fn lexicon_filter(corpus: &StyleCorpus, lexicon: &Lexicon, mode: LexiconMode) -> Result<StyleCorpus> {
    if lexicon.is_empty() {
        return Err(Error::Empty("lexicon".into()));
    }
    let want = mode == LexiconMode::Require;
    let kept = corpus
        .sentences
        .iter()
        .filter(|s| lexicon.matches(&s.text) == want)
        .cloned()
        .collect();
    Ok(corpus.with_sentences(kept, Some(format!("lexicon filter ({mode:?})"))))
}

/// Drops training sentences whose text appears in any held-out corpus.
pub fn remove_overlap(train: &StyleCorpus, held_out: &[&StyleCorpus]) -> StyleCorpus {
    let banned: HashSet<&str> = held_out.iter().flat_map(|c| c.texts()).collect();
    let kept: Vec<Sentence> = train
        .sentences
        .iter()
        .filter(|s| !banned.contains(s.text.as_str()))
        .cloned()
        .collect();
    if kept.is_empty() && !train.is_empty() {
        log::warn!(
            "overlap removal emptied the {} training corpus ({} sentences)",
            train.style,
            train.len()
        );
    }
    train.with_sentences(kept, Some("held-out overlap removal".to_string()))
}
