//! Byte-pair encoding over whitespace-split words with special tokens for
//! style tags, sequence boundaries, padding, unknowns and masking.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{StyleCorpus, StyleTag};
use crate::error::{Error, Result};

/// Appended to the last symbol of every word. Sorts after ASCII, so on
/// frequency ties merges inside a word win over merges with the marker.
pub const END_OF_WORD: &str = "\u{2581}";

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const MASK: u32 = 4;
const FIXED_SPECIALS: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>"];
const FORMAT_HEADER: &str = "#stylex-bpe v1";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub has_style_prefix: bool,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, has_style_prefix: bool) -> Self {
        TokenSequence {
            ids,
            has_style_prefix,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn prefix(&self) -> Option<u32> {
        if self.has_style_prefix {
            self.ids.first().copied()
        } else {
            None
        }
    }

    /// Ids after the style prefix.
    pub fn body(&self) -> &[u32] {
        if self.has_style_prefix {
            &self.ids[1..]
        } else {
            &self.ids
        }
    }

    /// Replaces (or adds) the style prefix.
    pub fn with_prefix(&self, tag_id: u32) -> TokenSequence {
        let mut ids = Vec::with_capacity(self.body().len() + 1);
        ids.push(tag_id);
        ids.extend_from_slice(self.body());
        TokenSequence::new(ids, true)
    }

    pub fn without_prefix(&self) -> TokenSequence {
        TokenSequence::new(self.body().to_vec(), false)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    tokens: Vec<String>,
    vocab: HashMap<String, u32>,
    tags: Vec<StyleTag>,
}

fn word_symbols(word: &str, known: impl Fn(&str) -> bool) -> Vec<String> {
    let mut syms: Vec<String> = word
        .chars()
        .map(|c| {
            let s = c.to_string();
            if s != END_OF_WORD && known(&s) {
                s
            } else {
                FIXED_SPECIALS[UNK as usize].to_string()
            }
        })
        .collect();
    syms.push(END_OF_WORD.to_string());
    syms
}

fn merge_in_place(syms: &mut Vec<String>, pair: &(String, String)) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == pair.0 && syms[i + 1] == pair.1 {
            let right = syms.remove(i + 1);
            syms[i].push_str(&right);
        }
        i += 1;
    }
}

/// Learns a joint BPE over all corpora. The style tags of the corpora
/// become special tokens, in first-seen order.
pub fn train_bpe(corpora: &[&StyleCorpus], merge_budget: usize) -> Result<BpeModel> {
    let mut tags: Vec<StyleTag> = Vec::new();
    for c in corpora {
        if !tags.contains(&c.style) {
            tags.push(c.style.clone());
        }
    }
    let mut word_freq: HashMap<String, u64> = HashMap::new();
    for c in corpora {
        for text in c.texts() {
            for w in text.split_whitespace() {
                *word_freq.entry(w.replace(END_OF_WORD, "")).or_default() += 1;
            }
        }
    }
    word_freq.retain(|w, _| !w.is_empty());
    if word_freq.is_empty() {
        return Err(Error::Empty("BPE training text".into()));
    }
    let mut words: Vec<(Vec<String>, u64)> = word_freq
        .into_iter()
        .map(|(w, f)| (word_symbols(&w, |_| true), f))
        .collect();
    words.sort();

    let mut alphabet: Vec<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    alphabet.sort();
    alphabet.dedup();

    let mut merges = Vec::new();
    while merges.len() < merge_budget {
        let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, f) in &words {
            for p in syms.windows(2) {
                *counts.entry((p[0].as_str(), p[1].as_str())).or_default() += f;
            }
        }
        // highest count, then lexicographically smallest pair
        let best = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), _)) = best else { break };
        let pair = (l.to_string(), r.to_string());
        for (syms, _) in &mut words {
            merge_in_place(syms, &pair);
        }
        merges.push(pair);
    }

    let mut tokens: Vec<String> = FIXED_SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(tags.iter().map(|t| t.surface.clone()));
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    for t in alphabet.into_iter().chain(merges.iter().map(|(l, r)| format!("{l}{r}"))) {
        if seen.insert(t.clone()) {
            tokens.push(t);
        }
    }
    BpeModel::from_parts(merges, tokens, tags)
}

impl BpeModel {
    fn from_parts(merges: Vec<(String, String)>, tokens: Vec<String>, tags: Vec<StyleTag>) -> Result<Self> {
        let mut vocab = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if vocab.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Ok(BpeModel {
            merges,
            ranks,
            tokens,
            vocab,
            tags,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn tags(&self) -> &[StyleTag] {
        &self.tags
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn tag_id(&self, tag: &StyleTag) -> Option<u32> {
        self.tags
            .iter()
            .position(|t| t == tag)
            .map(|i| (FIXED_SPECIALS.len() + i) as u32)
    }

    pub fn tag_of(&self, id: u32) -> Option<&StyleTag> {
        let first = FIXED_SPECIALS.len() as u32;
        (id >= first)
            .then(|| self.tags.get((id - first) as usize))
            .flatten()
    }

    pub fn is_style_tag(&self, id: u32) -> bool {
        self.tag_of(id).is_some()
    }

    /// Ids below this are special tokens.
    pub fn num_specials(&self) -> usize {
        FIXED_SPECIALS.len() + self.tags.len()
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.num_specials()
    }

    /// Tokens that are a whole punctuation word, e.g. `,` or `.`.
    pub fn punctuation_ids(&self) -> Vec<u32> {
        (self.num_specials()..self.vocab_size())
            .filter(|&i| {
                let t = &self.tokens[i];
                t.strip_suffix(END_OF_WORD)
                    .is_some_and(|w| !w.is_empty() && w.chars().all(|c| c.is_ascii_punctuation()))
            })
            .map(|i| i as u32)
            .collect()
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms = word_symbols(word, |s| self.vocab.contains_key(s));
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            merge_in_place(&mut syms, &self.merges[rank]);
        }
        out.extend(syms.iter().map(|s| self.vocab.get(s).copied().unwrap_or(UNK)));
    }

    /// Encodes whitespace-tokenized text, optionally prefixed by a style tag.
    pub fn encode(&self, text: &str, style: Option<&StyleTag>) -> Result<TokenSequence> {
        let mut ids = Vec::new();
        if let Some(tag) = style {
            let id = self
                .tag_id(tag)
                .ok_or_else(|| Error::InvalidArgument(format!("style {tag} unknown to the tokenizer")))?;
            ids.push(id);
        }
        for w in text.split_whitespace() {
            self.encode_word(w, &mut ids);
        }
        Ok(TokenSequence::new(ids, style.is_some()))
    }

    /// Maps ids back to text. Special tokens other than `<unk>` are dropped.
    pub fn decode_ids(&self, ids: &[u32]) -> Result<String> {
        let mut text = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::IdOutOfRange {
                id,
                vocab_size: self.vocab_size(),
            })?;
            if self.is_special(id) {
                if id == UNK {
                    text.push_str(tok);
                }
                continue;
            }
            match tok.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    text.push_str(stem);
                    text.push(' ');
                }
                None => text.push_str(tok),
            }
        }
        Ok(text.split_whitespace().collect::<Vec<_>>().join(" "))
    }

    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        self.decode_ids(&seq.ids)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let tags: Vec<&str> = self.tags.iter().map(|t| t.id.as_str()).collect();
        let _ = writeln!(
            out,
            "{FORMAT_HEADER} merges={} vocab={} tags={}",
            self.merges.len(),
            self.tokens.len(),
            tags.join(",")
        );
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty BPE model file".into()))?;
        let rest = header
            .strip_prefix(FORMAT_HEADER)
            .ok_or_else(|| Error::Format(format!("unsupported BPE model header {header:?}")))?;
        let mut n_merges = None;
        let mut n_vocab = None;
        let mut tags = Vec::new();
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("merges", v)) => n_merges = v.parse::<usize>().ok(),
                Some(("vocab", v)) => n_vocab = v.parse::<usize>().ok(),
                Some(("tags", v)) => {
                    tags = v
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(StyleTag::new)
                        .collect()
                }
                _ => return Err(Error::Format(format!("bad header field {field:?}"))),
            }
        }
        let (n_merges, n_vocab) = n_merges
            .zip(n_vocab)
            .ok_or_else(|| Error::Format("header lacks merges/vocab counts".into()))?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let line = lines.next().ok_or_else(|| Error::Format("truncated merge list".into()))?;
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("bad merge line {line:?}")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        let mut tokens = Vec::with_capacity(n_vocab);
        for i in 0..n_vocab {
            let line = lines.next().ok_or_else(|| Error::Format("truncated vocabulary".into()))?;
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Format(format!("bad vocab line {line:?}")))?;
            if id.parse::<usize>().ok() != Some(i) {
                return Err(Error::Format(format!("vocab ids must be dense, line {line:?}")));
            }
            tokens.push(tok.to_string());
        }
        let expected: Vec<String> = FIXED_SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(tags.iter().map(|t| t.surface.clone()))
            .collect();
        if tokens.len() < expected.len() || tokens[..expected.len()] != expected[..] {
            return Err(Error::Format("special tokens missing or out of place".into()));
        }
        BpeModel::from_parts(merges, tokens, tags)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BpeModel::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;

    fn corpus(tag: &str, lines: &[&str]) -> StyleCorpus {
        StyleCorpus::from_lines(StyleTag::new(tag), Split::Train, lines)
    }

    #[test]
    fn first_merge_hand_trace() {
        let c = corpus("pos", &["aa aa ab"]);
        let m = train_bpe(&[&c], 1).unwrap();
        assert_eq!(m.merges(), [("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn zero_budget_is_character_level() {
        let c = corpus("pos", &["hello world"]);
        let m = train_bpe(&[&c], 0).unwrap();
        assert!(m.merges().is_empty());
        let learned: Vec<&str> = (m.num_specials()..m.vocab_size()).map(|i| m.token(i as u32).unwrap()).collect();
        for t in &learned {
            assert_eq!(t.chars().count(), 1);
        }
        assert_eq!(learned.len(), "helowrd".len() + 1);
    }

    #[test]
    fn empty_text_is_error() {
        let c = corpus("pos", &[]);
        assert!(matches!(train_bpe(&[&c], 10), Err(Error::Empty(_))));
    }

    #[test]
    fn merge_budget_is_upper_bound() {
        let c = corpus("pos", &["the cat sat on the mat", "a dog ate the hat"]);
        let m = train_bpe(&[&c], 8000).unwrap();
        assert!(m.merges().len() <= 8000);
        assert_eq!(m.encode("the", None).unwrap().len(), 1);
    }

    #[test]
    fn style_prefix_and_unk() {
        let pos = corpus("pos", &["good food ."]);
        let neg = corpus("neg", &["bad food ."]);
        let m = train_bpe(&[&pos, &neg], 50).unwrap();
        let s = m.encode("good food .", Some(&StyleTag::new("pos"))).unwrap();
        assert_eq!(s.ids[0], m.tag_id(&StyleTag::new("pos")).unwrap());
        assert_eq!(s.ids.iter().filter(|&&i| m.is_style_tag(i)).count(), 1);
        assert_eq!(m.decode(&s).unwrap(), "good food .");

        let u = m.encode("gqqd", None).unwrap();
        assert_eq!(u.ids.iter().filter(|&&i| i == UNK).count(), 2);

        assert_eq!(m.decode_ids(&[BOS, EOS, PAD, MASK, 5, 6]).unwrap(), "");
        let n = m.vocab_size() as u32;
        assert!(matches!(m.decode_ids(&[n]), Err(Error::IdOutOfRange { .. })));
        assert!(m.encode("x", Some(&StyleTag::new("formal"))).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let c = corpus("pos", &["the cat sat on the mat", "hello , world !"]);
        let m = train_bpe(&[&c], 20).unwrap();
        let back = BpeModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(BpeModel::from_text("garbage").is_err());
        let truncated: String = m.to_text().lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(BpeModel::from_text(&truncated).is_err());
    }

    #[test]
    fn punctuation_tokens() {
        let c = corpus("pos", &["yes , no . maybe !"]);
        let m = train_bpe(&[&c], 100).unwrap();
        let p: Vec<&str> = m.punctuation_ids().iter().map(|&i| m.token(i).unwrap()).collect();
        assert_eq!(p.len(), 3);
        assert!(p.contains(&format!(",{END_OF_WORD}").as_str()));
    }

    proptest! {
        #[test]
        fn roundtrip_on_training_text(words in prop::collection::vec("[a-e]{1,6}", 1..12), budget in 0usize..40) {
            let text = words.join(" ");
            let c = corpus("pos", &[text.as_str()]);
            let m = train_bpe(&[&c], budget).unwrap();
            prop_assert_eq!(m.decode(&m.encode(&text, None).unwrap()).unwrap(), text);
        }

        #[test]
        fn smaller_budget_vocab_is_subset(words in prop::collection::vec("[a-d]{1,5}", 1..10), b in 0usize..20, extra in 0usize..20) {
            let text = words.join(" ");
            let c = corpus("pos", &[text.as_str()]);
            let small = train_bpe(&[&c], b).unwrap();
            let big = train_bpe(&[&c], b + extra).unwrap();
            for i in 0..small.vocab_size() {
                prop_assert!(big.id(small.token(i as u32).unwrap()).is_some());
            }
            prop_assert_eq!(&big.merges()[..small.merges().len()], small.merges());
        }
    }
}
