//! Denoising pre-training and the joint pair-mining / back-translation
//! training loop.

mod dae;
mod joint;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, StyleCorpus, StyleTag};
use crate::error::{Error, Result};
use crate::seqmodel::Model;
use crate::tokenizer::{BpeModel, TokenSequence, MASK};

pub use dae::{clean_reconstruction_accuracy, pretrain_dae, reconstruction_accuracy, DaeConfig, DaeRecord};
pub use joint::{bt_generate, train_3st, TrainConfig, TrainContext, TrainLog, TrainRecord};

/// Names the style of the target side: `AToB` pairs have `tgt` in style B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    AToB,
    BToA,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Extracted,
    BackTranslated,
    Denoising,
}

/// One supervision unit. `src` carries the tag of the style `tgt` is in, and
/// `tgt` carries the same tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub src: TokenSequence,
    pub tgt: TokenSequence,
    pub direction: Direction,
    pub origin: Origin,
}

impl TrainingPair {
    /// Identity pair (source = target) under `tag`; useful for copy tasks.
    pub fn copy(content: &[u32], tag: u32) -> Self {
        let mut ids = vec![tag];
        ids.extend_from_slice(content);
        let seq = TokenSequence::new(ids, true);
        TrainingPair {
            src: seq.clone(),
            tgt: seq,
            direction: Direction::AToB,
            origin: Origin::Denoising,
        }
    }
}

/// A style corpus encoded once with the shared tokenizer. Sequences hold
/// content ids only; sentences that cannot fit the model are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCorpus {
    pub tag: StyleTag,
    pub tag_id: u32,
    pub ids: Vec<u32>,
    pub seqs: Vec<TokenSequence>,
    pub texts: Vec<String>,
    position: HashMap<u32, usize>,
}

impl EncodedCorpus {
    pub fn new(corpus: &StyleCorpus, bpe: &BpeModel, max_len: usize) -> Result<Self> {
        let tag_id = bpe
            .tag_id(&corpus.style)
            .ok_or_else(|| Error::InvalidArgument(format!("tokenizer has no tag {}", corpus.style)))?;
        let mut out = EncodedCorpus {
            tag: corpus.style.clone(),
            tag_id,
            ids: Vec::new(),
            seqs: Vec::new(),
            texts: Vec::new(),
            position: HashMap::new(),
        };
        let mut dropped = 0;
        for s in &corpus.sentences {
            let seq = bpe.encode(&s.text, None)?;
            // room for the style tag and EOS
            if seq.is_empty() || seq.len() + 2 > max_len {
                dropped += 1;
                continue;
            }
            out.position.insert(s.id, out.ids.len());
            out.ids.push(s.id);
            out.seqs.push(seq);
            out.texts.push(s.text.clone());
        }
        if dropped > 0 {
            log::warn!("{}: dropped {dropped} sentences that do not fit max_len {max_len}", corpus.style);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.position.get(&id).copied()
    }
}

/// Checks the provenance rules of a pair before it reaches the optimizer.
/// `genuine` holds the content of every corpus sentence in the target style.
pub fn audit_pair(pair: &TrainingPair, genuine: &std::collections::HashSet<&[u32]>) -> Result<()> {
    let fail = |m: &str| Err(Error::InvalidArgument(format!("{:?} pair: {m}", pair.origin)));
    let (Some(sp), Some(tp)) = (pair.src.prefix(), pair.tgt.prefix()) else {
        return fail("both sides need a style prefix");
    };
    if sp != tp {
        return fail("source tag differs from the target style");
    }
    match pair.origin {
        Origin::Extracted | Origin::BackTranslated => {
            if !genuine.contains(pair.tgt.body()) {
                return fail("target is not a corpus sentence");
            }
        }
        Origin::Denoising => {
            let mut left: HashMap<u32, usize> = HashMap::new();
            for &t in pair.tgt.body() {
                *left.entry(t).or_default() += 1;
            }
            for &t in pair.src.body().iter().filter(|&&t| t != MASK) {
                match left.get_mut(&t) {
                    Some(c) if *c > 0 => *c -= 1,
                    _ => return fail("source is not a corruption of the target"),
                }
            }
        }
    }
    Ok(())
}

/// Detokenized transfers of `sentences` into `target`, one per input. Inputs
/// are normalized and truncated to fit the model.
pub fn transfer<S: AsRef<str>>(model: &Model, bpe: &BpeModel, sentences: &[S], target: &StyleTag) -> Result<Vec<String>> {
    let tag = bpe
        .tag_id(target)
        .ok_or_else(|| Error::InvalidArgument(format!("tokenizer has no tag {target}")))?;
    let room = model.config().max_len - 2;
    let seqs: Vec<TokenSequence> = sentences
        .iter()
        .map(|s| {
            let mut seq = bpe.encode(&normalize_text(s.as_ref()), None)?;
            seq.ids.truncate(room);
            Ok(seq)
        })
        .collect::<Result<_>>()?;
    model
        .decode_all(&seqs, tag, room)?
        .iter()
        .map(|o| bpe.decode(o))
        .collect()
}

#[cfg(test)]
mod tests;
